"""Scene geometry, system constants and angle computations.

All lengths are in meters, powers in watts and angles in radians.  The IRS
elements move in the local x-y plane of the IRS, which is aligned with the
global frame.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class GeometryError(ValueError):
    """Raised when two endpoints of a link coincide."""


class ConfigError(ValueError):
    """Raised for inconsistent scene configurations."""


@dataclass(frozen=True)
class Position3D:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.x, self.y, self.z])):
            raise ConfigError(f"non-finite position {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def of(cls, value) -> "Position3D":
        if isinstance(value, Position3D):
            return value
        if isinstance(value, dict):
            return cls(**{k: float(v) for k, v in value.items()})
        vals = [float(v) for v in value]
        return cls(*vals)


@dataclass(frozen=True)
class VirtualAngles:
    """Direction cosines ``theta = cos(e)cos(a)`` and ``omega = cos(e)sin(a)``."""

    theta: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.omega], dtype=float)


def virtual_angles(elevation, azimuth) -> VirtualAngles:
    """Virtual angles for an elevation/azimuth pair."""
    ce = np.cos(elevation)
    return VirtualAngles(float(ce * np.cos(azimuth)), float(ce * np.sin(azimuth)))


def pathloss_power(distance, c0: float = 1e-3, alpha: float = 2.2):
    """Average channel power gain ``c0 * d**(-alpha)``."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = c0 * d ** (-alpha)
    return float(out) if out.ndim == 0 else out


def link_direction(src: Position3D, dst: Position3D) -> tuple[float, float, float]:
    """Elevation, azimuth and length of the displacement ``dst - src``.

    Azimuth is measured in the x-y plane from +x and mapped to [0, 2pi);
    elevation is the angle above the x-y plane.
    """
    d = dst.as_array() - src.as_array()
    dist = float(np.linalg.norm(d))
    if dist <= 1e-12:
        raise GeometryError(f"coincident endpoints {src} and {dst}")
    el = float(np.arctan2(d[2], np.hypot(d[0], d[1])))
    az = float(np.mod(np.arctan2(d[1], d[0]), 2 * np.pi))
    return el, az, dist


@dataclass(frozen=True)
class SceneConfig:
    """System geometry and constants.

    Attributes
    ----------
    transmitter_pos, receiver_pos, irs_pos, target_pos : Position3D
        ISAC transmitter, sensing receiver, IRS centre and target.
    user_pos, clutter_pos : tuple of Position3D
        One entry per user (K) and per scattering clutter (C).  The direct
        IRS-to-receiver link is the extra clutter with index 0 and has no
        entry here.
    N_B, N_S, N_I : int
        Transmit antennas, receive antennas and movable IRS elements.
    L_BI, L_IU : int
        Paths on the transmitter-IRS and IRS-user links.
    wavelength : float
        Carrier wavelength.
    region_half_width : float
        Elements live in the square [-A, A]^2.
    min_spacing : float
        Minimum distance D between two elements.
    transmit_power, noise_power : float
        P and sigma^2.
    pathloss_ref, pathloss_exp : float
        c0 and alpha of the distance law.
    target_power, clutter_power, direct_path_power : float or None
        Overrides for the sensing gain variances.  ``None`` derives them
        from the geometry; the clutter total is split equally over the
        C + 1 returns unless ``direct_path_power`` pins the c = 0 share.
    """

    transmitter_pos: Position3D = Position3D(0.0, 0.0, 0.0)
    receiver_pos: Position3D = Position3D(40.0, 0.0, 0.0)
    irs_pos: Position3D = Position3D(30.0, 30.0, 0.0)
    user_pos: tuple = field(default_factory=lambda: default_user_positions(3))
    target_pos: Position3D = Position3D(45.0, 30.0, 0.0)
    clutter_pos: tuple = (
        Position3D(36.0, 18.0, 0.0),
        Position3D(20.0, 20.0, 0.0),
        Position3D(42.0, 40.0, 0.0),
        Position3D(22.0, 42.0, 0.0),
    )
    N_B: int = 16
    N_S: int = 16
    N_I: int = 16
    L_BI: int = 4
    L_IU: int = 4
    wavelength: float = SPEED_OF_LIGHT / 28e9
    region_half_width: float | None = None
    min_spacing: float | None = None
    transmit_power: float = 10 ** (15 / 10) * 1e-3
    noise_power: float = 10 ** (-90 / 10) * 1e-3
    pathloss_ref: float = 1e-3
    pathloss_exp: float = 2.2
    target_power: float | None = None
    clutter_power: float | None = None
    direct_path_power: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "user_pos", tuple(Position3D.of(p) for p in self.user_pos))
        object.__setattr__(self, "clutter_pos", tuple(Position3D.of(p) for p in self.clutter_pos))
        for name in ("transmitter_pos", "receiver_pos", "irs_pos", "target_pos"):
            object.__setattr__(self, name, Position3D.of(getattr(self, name)))
        if self.region_half_width is None:
            object.__setattr__(self, "region_half_width", 8.0 * self.wavelength)
        if self.min_spacing is None:
            object.__setattr__(self, "min_spacing", 0.5 * self.wavelength)
        for name in ("N_B", "N_S", "N_I", "L_BI", "L_IU"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        if self.K < 1:
            raise ConfigError("at least one user is required")
        if not self.wavelength > 0:
            raise ConfigError("wavelength must be positive")
        if not self.min_spacing > 0:
            raise ConfigError("min_spacing must be positive")
        if not 2 * self.region_half_width > self.min_spacing:
            raise ConfigError("region too small for the minimum spacing")
        if not self.transmit_power > 0 or not self.noise_power > 0:
            raise ConfigError("transmit and noise power must be positive")
        for name in ("target_power", "clutter_power", "direct_path_power"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be nonnegative")

    @property
    def K(self) -> int:
        return len(self.user_pos)

    @property
    def C(self) -> int:
        return len(self.clutter_pos)

    @property
    def region(self) -> tuple[float, float]:
        return -self.region_half_width, self.region_half_width

    def replace(self, **changes) -> "SceneConfig":
        return replace(self, **changes)

    # powers --------------------------------------------------------------
    def _pl(self, a: Position3D, b: Position3D) -> float:
        return pathloss_power(link_direction(a, b)[2], self.pathloss_ref, self.pathloss_exp)

    def bi_power(self) -> float:
        return self._pl(self.transmitter_pos, self.irs_pos)

    def iu_powers(self) -> np.ndarray:
        return np.array([self._pl(self.irs_pos, u) for u in self.user_pos])

    def target_gain_power(self) -> float:
        if self.target_power is not None:
            return float(self.target_power)
        return self._pl(self.irs_pos, self.target_pos) * self._pl(self.target_pos, self.receiver_pos)

    def clutter_gain_powers(self) -> np.ndarray:
        """Variances of the C + 1 clutter gains, index 0 being the direct link."""
        total = self.clutter_power
        if total is None:
            total = self._pl(self.irs_pos, self.receiver_pos)
        p = np.full(self.C + 1, total / (self.C + 1))
        if self.direct_path_power is not None:
            p[0] = self.direct_path_power
        return p

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["user_pos"] = [asdict(p) for p in self.user_pos]
        d["clutter_pos"] = [asdict(p) for p in self.clutter_pos]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        if "carrier_frequency" in d:
            d["wavelength"] = SPEED_OF_LIGHT / float(d.pop("carrier_frequency"))
        for key in ("transmit_power_dbm", "noise_power_dbm"):
            if key in d:
                d[key.replace("_dbm", "")] = dbm_to_watt(d.pop(key))
        for key in ("region_half_width_wl", "min_spacing_wl"):
            if key in d:
                wl = d.get("wavelength", cls.wavelength)
                d[key[:-3]] = float(d.pop(key)) * wl
        if "num_users" in d:
            n = int(d.pop("num_users"))
            d["user_pos"] = default_user_positions(n)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "SceneConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def dbm_to_watt(dbm) -> float:
    return 10 ** (float(dbm) / 10) * 1e-3


def default_user_positions(K: int, center=(30.0, 20.0, 0.0), radius: float = 2.0) -> tuple:
    """K users evenly spread on a circle around the cluster centre."""
    cx, cy, cz = center
    ang = 2 * np.pi * np.arange(K) / max(K, 1)
    if K == 1:
        return (Position3D(cx, cy, cz),)
    return tuple(Position3D(cx + radius * np.cos(a), cy + radius * np.sin(a), cz) for a in ang)


@dataclass(frozen=True)
class AngleTable:
    """Line-of-sight elevation/azimuth pairs for every link of a scene.

    Arrays hold ``(elevation, azimuth)`` per row.  IRS-side links point from
    the IRS to the far end; receiver-side links point from the receiver to
    the scatterer.
    """

    bi_tx: np.ndarray  # transmitter -> IRS
    bi_irs: np.ndarray  # IRS -> transmitter
    iu: np.ndarray  # IRS -> user k, shape (K, 2)
    target_irs: np.ndarray  # IRS -> target
    target_rx: np.ndarray  # receiver -> target
    clutter_irs: np.ndarray  # IRS -> clutter c, c = 0 is the receiver, (C + 1, 2)
    clutter_rx: np.ndarray  # receiver -> clutter c, c = 0 is the IRS, (C + 1, 2)


def geometry_to_angles(config: SceneConfig) -> AngleTable:
    """Elevation/azimuth of every link from the Cartesian positions."""
    I, S = config.irs_pos, config.receiver_pos

    def ea(a, b):
        return np.array(link_direction(a, b)[:2])

    return AngleTable(
        bi_tx=ea(config.transmitter_pos, I),
        bi_irs=ea(I, config.transmitter_pos),
        iu=np.array([ea(I, u) for u in config.user_pos]).reshape(-1, 2),
        target_irs=ea(I, config.target_pos),
        target_rx=ea(S, config.target_pos),
        clutter_irs=np.array([ea(I, S)] + [ea(I, c) for c in config.clutter_pos]),
        clutter_rx=np.array([ea(S, I)] + [ea(S, c) for c in config.clutter_pos]),
    )


def to_virtual(ea: Iterable) -> np.ndarray:
    """Vectorized virtual angles: (..., 2) elevation/azimuth -> (..., 2) theta/omega."""
    ea = np.asarray(ea, dtype=float)
    ce = np.cos(ea[..., 0])
    return np.stack([ce * np.cos(ea[..., 1]), ce * np.sin(ea[..., 1])], axis=-1)


def half_wavelength_ula(n: int, wavelength: float) -> np.ndarray:
    """Antenna coordinates of a centred half-wavelength ULA along y."""
    return (np.arange(n) - (n - 1) / 2) * wavelength / 2


def load_default_scene() -> SceneConfig:
    path = Path(__file__).parent / "data" / "scene_default.json"
    return SceneConfig.load(path)


def as_positions(points: Sequence) -> list:
    return [Position3D.of(p) for p in points]
