"""Instantaneous and statistical performance measures."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, PhaseShifts, steering_irs


@dataclass(frozen=True)
class BeamformingSet:
    """Transmit matrix, IRS reflection and sensing combiner.

    Attributes
    ----------
    W : ndarray, shape (N_B, K + 1)
        Columns ``w_c,1 .. w_c,K`` followed by the sensing beam ``w_s``.
    xi : PhaseShifts
    r_co : ndarray, shape (N_S,)
        Unit-norm receive combiner.
    """

    W: np.ndarray
    xi: PhaseShifts
    r_co: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=complex)
        if W.ndim == 1:
            W = W[:, None]
        r = np.array(self.r_co, dtype=complex).ravel()
        if abs(np.linalg.norm(r) - 1) > 1e-9:
            raise ValueError("r_co must have unit norm")
        xi = self.xi if isinstance(self.xi, PhaseShifts) else PhaseShifts(self.xi)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "r_co", r)
        object.__setattr__(self, "xi", xi)

    @property
    def power(self) -> float:
        return float(np.real(np.vdot(self.W, self.W)))

    def within_power(self, P: float, rtol: float = 1e-9) -> bool:
        return self.power <= P * (1 + rtol)


@dataclass(frozen=True)
class MetricReport:
    sinr: np.ndarray
    rate: np.ndarray
    scnr: float
    sensing_metric: float

    def as_row(self) -> dict:
        row = {"scnr": self.scnr, "log10_scnr": self.sensing_metric}
        for k, (s, r) in enumerate(zip(self.sinr, self.rate)):
            row[f"sinr_{k}"] = float(s)
            row[f"rate_{k}"] = float(r)
        return row


# effective rows ---------------------------------------------------------


def user_rows(real: ChannelRealization, xi) -> np.ndarray:
    """Rows ``h_k^H Theta H_BI``, shape (K, N_B)."""
    xi = _xi(xi)
    return (real.hH() * xi) @ real.H_BI


def target_row(real: ChannelRealization, xi, r_co) -> np.ndarray:
    """``r^H H_target Theta H_BI`` (includes alpha_T)."""
    xi = _xi(xi)
    return (np.conj(r_co) @ real.H_target * xi) @ real.H_BI


def clutter_row(real: ChannelRealization, xi, r_co) -> np.ndarray:
    """Coherent clutter row ``r^H sum_c alpha_c a_S^* a_I^T Theta H_BI``."""
    xi = _xi(xi)
    return (np.conj(r_co) @ real.H_clutter * xi) @ real.H_BI


def _xi(xi) -> np.ndarray:
    return xi.xi if isinstance(xi, PhaseShifts) else np.asarray(xi, dtype=complex)


# ratios -----------------------------------------------------------------


def sinr_multi(real: ChannelRealization, beams: BeamformingSet, k: int) -> float:
    if not 0 <= k < real.K:
        raise IndexError(f"user index {k} out of range")
    g = user_rows(real, beams.xi)[k] @ beams.W
    p = np.abs(g) ** 2
    return float(p[k] / (p.sum() - p[k] + real.noise_power))


def sinr_all(real: ChannelRealization, beams: BeamformingSet) -> np.ndarray:
    G = user_rows(real, beams.xi) @ beams.W  # (K, K + 1)
    P = np.abs(G) ** 2
    d = np.diag(P[:, : real.K])
    return d / (P.sum(axis=1) - d + real.noise_power)


def scnr_multi(real: ChannelRealization, beams: BeamformingSet) -> float:
    t = target_row(real, beams.xi, beams.r_co) @ beams.W
    q = clutter_row(real, beams.xi, beams.r_co) @ beams.W
    return float(np.vdot(t, t).real / (np.vdot(q, q).real + real.noise_power))


def rate(sinr):
    return np.log2(1 + np.asarray(sinr))


def sensing_metric(scnr):
    with np.errstate(divide="ignore"):
        return np.log10(scnr)


def evaluate(real: ChannelRealization, beams: BeamformingSet) -> MetricReport:
    s = sinr_all(real, beams)
    g = scnr_multi(real, beams)
    return MetricReport(s, rate(s), g, float(sensing_metric(g)))


# single-user bounds -----------------------------------------------------


def upper_bounds_single(config, gains) -> tuple[float, float]:
    """SCNR and SINR upper bounds of the single-user single-path case.

    ``gains`` is a ChannelRealization or a mapping with ``target``, ``bi``
    and ``iu`` complex gains.
    """
    if isinstance(gains, ChannelRealization):
        aT, aBI, aIU = gains.target_gain, gains.gains.bi[0], gains.gains.iu[0, 0]
    else:
        aT, aBI, aIU = gains["target"], gains["bi"], gains["iu"]
    P, s2 = config.transmit_power, config.noise_power
    NB, NS, NI = config.N_B, config.N_S, config.N_I
    g_s = P * NB * NS * abs(aT * aBI) ** 2 * NI**2 / s2
    g_c = P * NB * abs(aBI * aIU) ** 2 * NI**2 / s2
    return float(g_s), float(g_c)


# statistics -------------------------------------------------------------


def coverage_probability(scnr_samples, threshold: float) -> float:
    s = np.asarray(scnr_samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("no samples")
    return float(np.mean(s >= threshold))


def beampattern_map(real: ChannelRealization, beams: BeamformingSet, thetas, omegas) -> np.ndarray:
    """Gain ``||a_I^T(theta, omega) Theta H_BI W||^2`` on a (theta, omega) grid.

    Grid points outside the unit disc are returned as NaN.
    """
    th, om = np.meshgrid(np.asarray(thetas, float), np.asarray(omegas, float), indexing="ij")
    va = np.stack([th.ravel(), om.ravel()], axis=-1)
    inside = np.sum(va**2, axis=1) <= 1 + 1e-12
    A = steering_irs(real.layout, va, real.wavelength)  # (N_I, G)
    if A.ndim == 1:
        A = A[:, None]
    M = (beams.xi.xi[:, None] * real.H_BI) @ beams.W  # Theta H W
    g = np.sum(np.abs(A.T @ M) ** 2, axis=1)
    g = np.where(inside, g, np.nan)
    return g.reshape(th.shape)


def write_beampattern_csv(path, thetas, omegas, gain) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "omega", "gain"])
        for i, t in enumerate(thetas):
            for j, o in enumerate(omegas):
                w.writerow([repr(float(t)), repr(float(o)), repr(float(gain[i, j]))])


def write_reports_csv(path, reports) -> None:
    rows = [r.as_row() for r in reports]
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) for k, v in r.items()})
