"""Field-response channels, steering vectors and random path draws.

Conventions
-----------
* IRS element m sits at ``r_m = (x_m, y_m)``; the phase of path l is
  ``k * (x_m * theta_l + y_m * omega_l)`` with ``k = 2 pi / lambda``.
* ``H_BI[m, n] = sum_p alpha_p * exp(-j k rho_p(r_m)) * exp(j k y_n phi_p)``,
  i.e. ``H_BI = F^H diag(alpha) G``.
* ``h_IU[k]`` stores the column vector h_k, so the row ``h_k^H`` has entries
  ``sum_l beta_l exp(j k rho_l(r_m))``.
* ``H_target = alpha_T a_S^*(target) a_I^T(target)`` and ``H_clutter`` is the
  coherent sum of the C + 1 clutter returns, both N_S x N_I.
* Transmitter steering uses the theta cosine of the transmitter-to-IRS
  direction and receiver steering uses the omega cosine of the
  receiver-to-scatterer direction (both arrays lie along y).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .scene import (
    ConfigError,
    SceneConfig,
    VirtualAngles,
    geometry_to_angles,
    half_wavelength_ula,
    to_virtual,
)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# --------------------------------------------------------------------------
# layouts and phase shifts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ElementLayout:
    """Positions of the movable IRS elements.

    Attributes
    ----------
    positions : ndarray, shape (N_I, 2)
    half_width : float
        Region is ``[-half_width, half_width]^2``.
    min_spacing : float
    """

    positions: np.ndarray
    half_width: float
    min_spacing: float

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def N_I(self) -> int:
        return self.positions.shape[0]

    def min_distance(self) -> float:
        return min_pairwise_distance(self.positions)

    def in_region(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.positions) <= self.half_width * (1 + tol)))

    def is_feasible(self, tol: float = 1e-9) -> bool:
        return self.in_region() and self.min_distance() >= self.min_spacing - tol

    def with_positions(self, positions) -> "ElementLayout":
        return ElementLayout(positions, self.half_width, self.min_spacing)

    @classmethod
    def for_config(cls, config: SceneConfig, positions) -> "ElementLayout":
        return cls(positions, config.region_half_width, config.min_spacing)


def min_pairwise_distance(positions) -> float:
    p = np.asarray(positions, dtype=float)
    if p.shape[0] < 2:
        return np.inf
    d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    return float(d[np.triu_indices(p.shape[0], 1)].min())


def random_layout(config: SceneConfig, seed=None, max_tries: int = 10_000) -> ElementLayout:
    """Uniform spacing-feasible layout by sequential rejection sampling."""
    rng = _rng(seed)
    A, D = config.region_half_width, config.min_spacing
    pts: list = []
    tries = 0
    while len(pts) < config.N_I:
        tries += 1
        if tries > max_tries:
            raise ConfigError("could not place elements with the requested spacing")
        cand = rng.uniform(-A, A, size=2)
        if all(np.hypot(*(cand - p)) >= D for p in pts):
            pts.append(cand)
    return ElementLayout.for_config(config, np.array(pts))


@dataclass(frozen=True)
class PhaseShifts:
    """Unit-modulus IRS reflection vector ``xi = exp(j theta)``."""

    xi: np.ndarray

    def __post_init__(self):
        xi = np.array(self.xi, dtype=complex).ravel()
        if not np.allclose(np.abs(xi), 1.0, atol=1e-12, rtol=0):
            raise ValueError("phase shifts must have unit modulus")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def from_angles(cls, theta) -> "PhaseShifts":
        return cls(np.exp(1j * np.asarray(theta, dtype=float)))

    @classmethod
    def project(cls, v) -> "PhaseShifts":
        v = np.asarray(v, dtype=complex)
        ang = np.angle(np.where(np.abs(v) > 0, v, 1.0))
        return cls(np.exp(1j * ang))

    @property
    def theta(self) -> np.ndarray:
        return np.mod(np.angle(self.xi), 2 * np.pi)


# --------------------------------------------------------------------------
# steering and field-response vectors
# --------------------------------------------------------------------------


def _va(angles) -> np.ndarray:
    if isinstance(angles, VirtualAngles):
        return angles.as_array()[None, :]
    if isinstance(angles, (list, tuple)) and angles and isinstance(angles[0], VirtualAngles):
        return np.array([a.as_array() for a in angles])
    return np.asarray(angles, dtype=float).reshape(-1, 2)


def field_response_vector(position, angles, wavelength: float) -> np.ndarray:
    """Per-path phases ``exp(j k (x theta_l + y omega_l))`` at one position."""
    va = _va(angles)
    if va.shape[0] == 0:
        raise ValueError("at least one path angle is required")
    x, y = np.asarray(position, dtype=float)
    return np.exp(1j * 2 * np.pi / wavelength * (x * va[:, 0] + y * va[:, 1]))


def steering_ula(antenna_y, virtual_angle: float, wavelength: float) -> np.ndarray:
    y = np.asarray(antenna_y, dtype=float)
    return np.exp(1j * 2 * np.pi / wavelength * y * virtual_angle)


def steering_irs(layout, angles, wavelength: float) -> np.ndarray:
    """IRS steering ``a_I`` for one angle pair (or a matrix for several)."""
    pos = layout.positions if isinstance(layout, ElementLayout) else np.asarray(layout, float)
    va = _va(angles)
    out = np.exp(1j * 2 * np.pi / wavelength * (pos @ va.T))
    return out[:, 0] if va.shape[0] == 1 else out


def dirichlet_kernel(delta, spacing: float, n: int, wavelength: float, tol: float = 1e-10):
    """``sin(pi d n delta / lambda) / sin(pi d delta / lambda)`` with the limit n at poles."""
    delta = np.asarray(delta, dtype=float)
    den_arg = np.pi * spacing * delta / wavelength
    den = np.sin(den_arg)
    num = np.sin(n * den_arg)
    sing = np.abs(den) < tol
    safe = np.where(sing, 1.0, den)
    # limit of sin(n x)/sin(x) at x = j pi is n * (-1)^(j (n - 1))
    j = np.round(den_arg / np.pi)
    lim = n * np.where(np.mod(j * (n - 1), 2) == 0, 1.0, -1.0)
    out = np.where(sing, lim, num / safe)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# random paths
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PathResponse:
    """Gains of the L paths of one link, each CN(0, power / L)."""

    gains: np.ndarray
    power: float

    @property
    def num_paths(self) -> int:
        return len(self.gains)

    @property
    def per_path_power(self) -> float:
        return self.power / self.num_paths


def cn(rng: np.random.Generator, var, size=None) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with variance ``var``."""
    s = np.sqrt(np.asarray(var, dtype=float) / 2)
    return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_paths(seed, L: int, link_power: float) -> PathResponse:
    if L < 1:
        raise ValueError("L must be at least 1")
    if link_power < 0:
        raise ValueError("link power must be nonnegative")
    rng = _rng(seed)
    return PathResponse(cn(rng, link_power / L, L), float(link_power))


@dataclass(frozen=True)
class PathAngles:
    """Virtual angles of every path.

    Attributes
    ----------
    bi_irs : (L_BI, 2)   IRS-side (theta, omega) of the transmitter link
    bi_tx : (L_BI,)      transmitter ULA cosine of each path
    iu : (K, L_IU, 2)    IRS-side angles of each user's paths
    target_irs : (2,)    IRS-to-target
    target_rx : float    receiver cosine towards the target
    clutter_irs : (C + 1, 2)
    clutter_rx : (C + 1,)
    """

    bi_irs: np.ndarray
    bi_tx: np.ndarray
    iu: np.ndarray
    target_irs: np.ndarray
    target_rx: float
    clutter_irs: np.ndarray
    clutter_rx: np.ndarray


@dataclass(frozen=True)
class PathGains:
    """Complex path gains of one Monte Carlo draw."""

    bi: np.ndarray  # (L_BI,)
    iu: np.ndarray  # (K, L_IU)
    target: complex
    clutter: np.ndarray  # (C + 1,)


@dataclass(frozen=True)
class PathDraws:
    angles: PathAngles
    gains: PathGains
    powers: dict = field(default_factory=dict)


def draw_angles(config: SceneConfig, seed=None) -> PathAngles:
    """Path 0 of every link is the geometric line of sight, the rest random."""
    rng = _rng(seed)
    tab = geometry_to_angles(config)

    def extra(n):
        el = rng.uniform(0.0, np.pi / 2, n)
        az = rng.uniform(0.0, 2 * np.pi, n)
        return np.stack([el, az], axis=-1)

    bi_ea = np.vstack([tab.bi_irs[None], extra(config.L_BI - 1)])
    tx_ea = np.vstack([tab.bi_tx[None], extra(config.L_BI - 1)])
    iu = np.stack([to_virtual(np.vstack([tab.iu[k][None], extra(config.L_IU - 1)])) for k in range(config.K)])
    return PathAngles(
        bi_irs=to_virtual(bi_ea),
        bi_tx=to_virtual(tx_ea)[:, 0],
        iu=iu,
        target_irs=to_virtual(tab.target_irs),
        target_rx=float(to_virtual(tab.target_rx)[1]),
        clutter_irs=to_virtual(tab.clutter_irs),
        clutter_rx=to_virtual(tab.clutter_rx)[:, 1],
    )


def link_powers(config: SceneConfig) -> dict:
    return {
        "bi": config.bi_power(),
        "iu": config.iu_powers(),
        "target": config.target_gain_power(),
        "clutter": config.clutter_gain_powers(),
    }


def draw_gains(config: SceneConfig, seed=None, powers: dict | None = None) -> PathGains:
    """Independent gains with one child stream per link."""
    p = link_powers(config) if powers is None else powers
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_bi, s_iu, s_t, s_c = ss.spawn(4)
    bi = sample_paths(np.random.default_rng(s_bi), config.L_BI, p["bi"]).gains
    iu_streams = s_iu.spawn(config.K)
    iu = np.stack(
        [sample_paths(np.random.default_rng(s), config.L_IU, p["iu"][k]).gains for k, s in enumerate(iu_streams)]
    )
    target = complex(cn(np.random.default_rng(s_t), p["target"]))
    clutter = cn(np.random.default_rng(s_c), np.asarray(p["clutter"]), config.C + 1)
    return PathGains(bi=bi, iu=iu, target=target, clutter=clutter)


def draw_paths(config: SceneConfig, seed=None) -> PathDraws:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_ang, s_gain = ss.spawn(2)
    return PathDraws(draw_angles(config, np.random.default_rng(s_ang)), draw_gains(config, s_gain), link_powers(config))


# --------------------------------------------------------------------------
# channel assembly
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CsiError:
    """Additive estimation errors, independent of the element layout."""

    H_BI: np.ndarray
    h_IU: np.ndarray
    H_target: np.ndarray
    H_clutter: np.ndarray


@dataclass(frozen=True)
class ChannelRealization:
    """Channels of one draw at one layout.

    The object keeps the path draws so it can be re-assembled for another
    layout with :meth:`with_layout`.
    """

    layout: ElementLayout
    draws: PathDraws
    wavelength: float
    noise_power: float
    bs_y: np.ndarray
    rx_y: np.ndarray
    H_BI: np.ndarray
    h_IU: np.ndarray
    H_target: np.ndarray
    H_clutter: np.ndarray
    error: CsiError | None = None

    @property
    def N_I(self) -> int:
        return self.H_BI.shape[0]

    @property
    def N_B(self) -> int:
        return self.H_BI.shape[1]

    @property
    def N_S(self) -> int:
        return self.H_target.shape[0]

    @property
    def K(self) -> int:
        return self.h_IU.shape[0]

    @property
    def C(self) -> int:
        return len(self.draws.gains.clutter) - 1

    @property
    def angles(self) -> PathAngles:
        return self.draws.angles

    @property
    def gains(self) -> PathGains:
        return self.draws.gains

    @property
    def target_gain(self) -> complex:
        return self.draws.gains.target

    @property
    def clutter_gains(self) -> np.ndarray:
        return self.draws.gains.clutter

    def hH(self) -> np.ndarray:
        """Rows h_k^H, shape (K, N_I)."""
        return self.h_IU.conj()

    def with_layout(self, layout) -> "ChannelRealization":
        if not isinstance(layout, ElementLayout):
            layout = self.layout.with_positions(layout)
        return _assemble(layout, self.draws, self.wavelength, self.noise_power, self.bs_y, self.rx_y, self.error)

    def with_gains(self, gains: PathGains) -> "ChannelRealization":
        draws = replace(self.draws, gains=gains)
        return _assemble(self.layout, draws, self.wavelength, self.noise_power, self.bs_y, self.rx_y, self.error)

    def scaled(self, noise_power: float = 1.0) -> "ChannelRealization":
        """Same SINR/SCNR with the noise power rescaled (transmitter link scaled)."""
        s = np.sqrt(noise_power / self.noise_power)
        g = self.draws.gains
        draws = replace(self.draws, gains=replace(g, bi=g.bi * s))
        err = self.error
        if err is not None:
            err = replace(err, H_BI=err.H_BI * s)
        return _assemble(self.layout, draws, self.wavelength, noise_power, self.bs_y, self.rx_y, err)

    # io ------------------------------------------------------------------
    def to_dict(self) -> dict:
        a, g = self.angles, self.gains
        return {
            "wavelength": self.wavelength,
            "noise_power": self.noise_power,
            "layout": {
                "positions": self.layout.positions.tolist(),
                "half_width": self.layout.half_width,
                "min_spacing": self.layout.min_spacing,
            },
            "bs_y": self.bs_y.tolist(),
            "rx_y": self.rx_y.tolist(),
            "angles": {
                "bi_irs": a.bi_irs.tolist(),
                "bi_tx": a.bi_tx.tolist(),
                "iu": a.iu.tolist(),
                "target_irs": a.target_irs.tolist(),
                "target_rx": a.target_rx,
                "clutter_irs": a.clutter_irs.tolist(),
                "clutter_rx": a.clutter_rx.tolist(),
            },
            "gains": {
                "bi": _c2l(g.bi),
                "iu": _c2l(g.iu),
                "target": _c2l(np.array(g.target)),
                "clutter": _c2l(g.clutter),
            },
            "H_BI": _c2l(self.H_BI),
            "h_IU": _c2l(self.h_IU),
            "H_target": _c2l(self.H_target),
            "H_clutter": _c2l(self.H_clutter),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelRealization":
        lay = ElementLayout(**d["layout"])
        a = d["angles"]
        angles = PathAngles(
            bi_irs=np.array(a["bi_irs"]),
            bi_tx=np.array(a["bi_tx"]),
            iu=np.array(a["iu"]),
            target_irs=np.array(a["target_irs"]),
            target_rx=float(a["target_rx"]),
            clutter_irs=np.array(a["clutter_irs"]),
            clutter_rx=np.array(a["clutter_rx"]),
        )
        g = d["gains"]
        gains = PathGains(_l2c(g["bi"]), _l2c(g["iu"]), complex(_l2c(g["target"])), _l2c(g["clutter"]))
        return _assemble(lay, PathDraws(angles, gains), d["wavelength"], d["noise_power"],
                         np.array(d["bs_y"]), np.array(d["rx_y"]), None)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ChannelRealization":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _c2l(z) -> list:
    z = np.asarray(z, dtype=complex)
    return np.stack([z.real, z.imag], axis=-1).tolist()


def _l2c(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def _assemble(layout, draws, wavelength, noise_power, bs_y, rx_y, error) -> ChannelRealization:
    k0 = 2 * np.pi / wavelength
    pos = layout.positions
    a, g = draws.angles, draws.gains
    # F^H diag(alpha) G
    F = np.exp(1j * k0 * pos @ a.bi_irs.T)  # (N_I, L_BI) entries f_p(r_m)
    G = np.exp(1j * k0 * np.outer(a.bi_tx, bs_y))  # (L_BI, N_B)
    H_BI = (F.conj() * g.bi) @ G
    FI = np.exp(1j * k0 * np.einsum("md,kld->kml", pos, a.iu))  # (K, N_I, L_IU)
    hH = np.einsum("kml,kl->km", FI, g.iu)
    h_IU = hH.conj()
    aT = np.exp(1j * k0 * pos @ a.target_irs)
    sT = np.exp(1j * k0 * rx_y * a.target_rx)
    H_target = g.target * np.outer(sT.conj(), aT)
    aC = np.exp(1j * k0 * pos @ a.clutter_irs.T)  # (N_I, C + 1)
    sC = np.exp(1j * k0 * np.outer(rx_y, a.clutter_rx))  # (N_S, C + 1)
    H_clutter = (sC.conj() * g.clutter) @ aC.T
    if error is not None:
        H_BI = H_BI + error.H_BI
        h_IU = h_IU + error.h_IU
        H_target = H_target + error.H_target
        H_clutter = H_clutter + error.H_clutter
    return ChannelRealization(
        layout=layout,
        draws=draws,
        wavelength=float(wavelength),
        noise_power=float(noise_power),
        bs_y=np.asarray(bs_y, float),
        rx_y=np.asarray(rx_y, float),
        H_BI=H_BI,
        h_IU=h_IU,
        H_target=H_target,
        H_clutter=H_clutter,
        error=error,
    )


def assemble_channels(config: SceneConfig, layout, path_draws: PathDraws) -> ChannelRealization:
    """Build all channels of ``config`` at ``layout`` from ``path_draws``."""
    if not isinstance(layout, ElementLayout):
        layout = ElementLayout.for_config(config, layout)
    a, g = path_draws.angles, path_draws.gains
    checks = [
        (layout.N_I, config.N_I, "N_I"),
        (len(g.bi), config.L_BI, "L_BI"),
        (a.bi_irs.shape[0], config.L_BI, "L_BI angles"),
        (g.iu.shape, (config.K, config.L_IU), "user gains"),
        (a.iu.shape[:2], (config.K, config.L_IU), "user angles"),
        (len(g.clutter), config.C + 1, "clutter gains"),
        (a.clutter_irs.shape[0], config.C + 1, "clutter angles"),
    ]
    for got, want, name in checks:
        if got != want:
            raise ConfigError(f"dimension mismatch for {name}: {got} != {want}")
    return _assemble(
        layout,
        path_draws,
        config.wavelength,
        config.noise_power,
        half_wavelength_ula(config.N_B, config.wavelength),
        half_wavelength_ula(config.N_S, config.wavelength),
        None,
    )


def realize(config: SceneConfig, layout, seed=None) -> ChannelRealization:
    """Convenience: draw angles and gains from ``seed`` and assemble."""
    return assemble_channels(config, layout, draw_paths(config, seed))


# --------------------------------------------------------------------------
# imperfections
# --------------------------------------------------------------------------


def perturb_csi(realization: ChannelRealization, delta2: float, seed=None) -> ChannelRealization:
    """Add CN(0, delta2) estimation errors to every channel matrix.

    The target and clutter response matrices receive independent errors.
    The errors do not depend on the layout, so re-assembling the result at
    another layout keeps them.
    """
    if delta2 < 0:
        raise ValueError("delta2 must be nonnegative")
    if delta2 == 0:
        return realization
    rng = _rng(seed)
    r = realization
    err = CsiError(
        H_BI=cn(rng, delta2, r.H_BI.shape),
        h_IU=cn(rng, delta2, r.h_IU.shape),
        H_target=cn(rng, delta2, r.H_target.shape),
        H_clutter=cn(rng, delta2, r.H_clutter.shape),
    )
    if r.error is not None:
        err = CsiError(*(getattr(err, f) + getattr(r.error, f) for f in ("H_BI", "h_IU", "H_target", "H_clutter")))
    return _assemble(r.layout, r.draws, r.wavelength, r.noise_power, r.bs_y, r.rx_y, err)


def perturb_layout(layout: ElementLayout, error_scale: float, seed=None) -> ElementLayout:
    """Offset every coordinate by N(0, error_scale^2) and clamp to the region."""
    if error_scale < 0:
        raise ValueError("error_scale must be nonnegative")
    if error_scale == 0:
        return layout
    rng = _rng(seed)
    off = error_scale * rng.standard_normal(layout.positions.shape)
    A = layout.half_width
    return layout.with_positions(np.clip(layout.positions + off, -A, A))
