"""Single-user design: closed-form beams, phase alignment and the
phase-position (PPR) system for the element positions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .channel import (
    ChannelRealization,
    ElementLayout,
    PhaseShifts,
    min_pairwise_distance,
    steering_ula,
)
from .metrics import BeamformingSet, scnr_multi, sinr_all
from ._validation import check_rng, check_single_path


class DegenerateAnglesError(ValueError):
    """Target, user and direct-path angles are collinear in angle space."""


class PprInfeasibleError(RuntimeError):
    """No layout found within the loop budget; carries the best attempt."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


def wrap(phase):
    """Map phases to (-pi, pi]."""
    return np.angle(np.exp(1j * np.asarray(phase)))


def mrt_beam_single(bs_y, tx_angle: float, wavelength: float, P: float) -> np.ndarray:
    """``[w_c, w_s]`` with ``w_c = sqrt(P) a_B^* / ||a_B||`` and ``w_s = 0``."""
    a = steering_ula(bs_y, tx_angle, wavelength)
    w = np.sqrt(P) * a.conj() / np.linalg.norm(a)
    return np.stack([w, np.zeros_like(w)], axis=1)


def phase_align(layout, iu_angles, bi_angles, wavelength: float) -> PhaseShifts:
    """``theta_m = k (rho_BI(r_m) - rho_IU(r_m))`` so the user link adds coherently."""
    pos = layout.positions if isinstance(layout, ElementLayout) else np.asarray(layout, float)
    k0 = 2 * np.pi / wavelength
    d = np.asarray(bi_angles, float).ravel()[:2] - np.asarray(iu_angles, float).ravel()[:2]
    return PhaseShifts.from_angles(np.mod(k0 * pos @ d, 2 * np.pi))


def mrc_combiner(a_target) -> np.ndarray:
    a = np.asarray(a_target, complex)
    return a.conj() / np.linalg.norm(a)


def zf_combiner(a_target, a_direct, tol: float = 1e-12) -> np.ndarray:
    """Project ``a_S^*(target)`` orthogonally to ``a_S^*(direct)`` and normalize."""
    t = np.asarray(a_target, complex).conj()
    c = np.asarray(a_direct, complex).conj()
    p = t - c * (np.vdot(c, t) / np.vdot(c, c))
    n = np.linalg.norm(p)
    if n <= tol * np.linalg.norm(t):
        raise ValueError("target and direct-path receive angles coincide")
    return p / n


@dataclass
class PprSystem:
    """``B X = theta0 1 + 2 pi (K - A)`` for the element coordinates X."""

    B: np.ndarray
    K_int: np.ndarray
    A_circ: np.ndarray
    theta0: float

    def positions(self) -> np.ndarray:
        rhs = self.theta0 + 2 * np.pi * (self.K_int - self.A_circ)
        return (np.linalg.pinv(self.B) @ rhs).T


def ppr_matrix(target, user, direct, wavelength: float) -> np.ndarray:
    t, u, d = (np.asarray(v, float).ravel()[:2] for v in (target, user, direct))
    return 2 * np.pi / wavelength * np.array([t - d, u - d])


def circulant_shift(N: int, shift: int) -> np.ndarray:
    c = np.arange(N) / N
    row = np.roll(c, -shift)
    return np.vstack([row, row])


def ppr_residuals(positions, system: PprSystem, target, user, direct, bi, wavelength) -> np.ndarray:
    """Wrapped errors of the three phase conditions, shape (3, N_I).

    Row 3 uses the aligned phase shifts, which satisfy the third
    condition up to the common offset theta0.
    """
    k0 = 2 * np.pi / wavelength
    pos = np.asarray(positions, float)
    t, u, d, b = (np.asarray(v, float).ravel()[:2] for v in (target, user, direct, bi))
    c = system.A_circ[0]
    th = k0 * pos @ (b - u)
    r1 = wrap(k0 * pos @ (t - d) + 2 * np.pi * c - system.theta0)
    r2 = wrap(k0 * pos @ (u - d) + 2 * np.pi * c - system.theta0)
    r3 = wrap(k0 * pos @ (d - b) + th + system.theta0 - 2 * np.pi * c)
    return np.vstack([r1, r2, r3])


@dataclass
class PprResult:
    layout: ElementLayout
    system: PprSystem
    residual: float
    n_outer: int
    n_inner: int


def solve_ppr_positions(
    target,
    user,
    direct,
    bi,
    wavelength: float,
    N_I: int,
    half_width: float,
    min_spacing: float,
    max_outer: int = 100,
    max_inner: int = 10,
    seed=None,
    per_coordinate: bool = False,
    det_tol: float = 1e-12,
) -> PprResult:
    """Element positions meeting the PPR conditions inside the region.

    Each outer iteration draws theta0 and a circulant shift, then picks a
    random integer start from the in-region points of every element's
    coset and runs the +-1 integer corrections.  The first
    spacing-feasible layout is returned.
    """
    rng = check_rng(seed)
    B = ppr_matrix(target, user, direct, wavelength)
    # dimensionless determinant of the angle-difference matrix
    if abs(np.linalg.det(B * wavelength / (2 * np.pi))) < det_tol:
        raise DegenerateAnglesError("target, user and direct-path angles are collinear")
    Binv = np.linalg.pinv(B)
    M = 2 * np.pi * Binv  # lattice generator in meters
    Minv = B / (2 * np.pi)
    A = half_width
    best = None
    n_inner_total = 0
    for outer in range(1, max_outer + 1):
        theta0 = rng.uniform(0, 2 * np.pi)
        Ac = circulant_shift(N_I, int(rng.integers(N_I)))
        base = (Binv @ (theta0 - 2 * np.pi * Ac)).T  # (N_I, 2)
        Kint = _initial_integers(base, M, Minv, A, min_spacing, rng)
        if Kint is None:
            continue
        sys_ = PprSystem(B, Kint, Ac, theta0)
        for _ in range(max_inner):
            n_inner_total += 1
            X = sys_.positions()
            hi = X.max(axis=1) > A
            lo = X.min(axis=1) < -A
            if not (hi.any() or lo.any()):
                break
            if per_coordinate:
                over = (X > A).T.astype(float)
                under = (X < -A).T.astype(float)
                sys_.K_int = sys_.K_int - over + under
            else:
                sys_.K_int = sys_.K_int - hi[None, :] + (lo & ~hi)[None, :]
        X = sys_.positions()
        inside = bool(np.all(np.abs(X) <= A * (1 + 1e-12)))
        dmin = min_pairwise_distance(X)
        if best is None or (inside and dmin > best[1]):
            best = (sys_, dmin if inside else -np.inf)
        if inside and dmin >= min_spacing:
            res = ppr_residuals(X, sys_, target, user, direct, bi, wavelength)
            lay = ElementLayout(np.clip(X, -A, A), half_width, min_spacing)
            return PprResult(lay, sys_, float(np.max(np.abs(res))), outer, n_inner_total)
    raise PprInfeasibleError("no spacing-feasible PPR layout within the loop budget", best)


def _coset_points(base, M, Minv, A):
    """Integer vectors k with ``base + M k`` inside the square [-A, A]^2."""
    corners = np.array([[A, A], [A, -A], [-A, A], [-A, -A]]) - base
    kc = corners @ Minv.T
    lo = np.floor(kc.min(axis=0)).astype(int)
    hi = np.ceil(kc.max(axis=0)).astype(int)
    g0, g1 = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    ks = np.stack([g0.ravel(), g1.ravel()], axis=-1)
    pts = base + ks @ M.T
    keep = np.all(np.abs(pts) <= A, axis=1)
    return ks[keep], pts[keep]


def _initial_integers(base, M, Minv, A, D, rng):
    """Random integer start: elements in random order pick a random
    in-region point of their own coset that keeps the spacing."""
    N = base.shape[0]
    K = np.zeros((2, N))
    placed = []
    for m in rng.permutation(N):
        ks, pts = _coset_points(base[m], M, Minv, A)
        if placed:
            P = np.array(placed)
            ok = np.all(np.linalg.norm(pts[:, None, :] - P[None], axis=-1) >= D, axis=1)
            ks, pts = ks[ok], pts[ok]
        if len(ks) == 0:
            return None
        j = int(rng.integers(len(ks)))
        K[:, m] = ks[j]
        placed.append(pts[j])
    return K


# --------------------------------------------------------------------------


def single_user_angles(real: ChannelRealization):
    a = real.angles
    return a.target_irs, a.iu[0, 0], a.clutter_irs[0], a.bi_irs[0]


def design_single_user(real: ChannelRealization, P: float, layout=None, combiner: str = "mrc",
                       seed=None, max_outer: int = 100, max_inner: int = 10, per_coordinate: bool = False):
    """Full single-user design.

    With ``layout=None`` the PPR positions are solved; otherwise the given
    layout is kept and only the beams and phases are designed.
    Returns ``(beams, realization_at_layout, result_or_None)``.
    """
    check_single_path(real)
    t, u, d, b = single_user_angles(real)
    res = None
    if layout is None:
        lay0 = real.layout
        res = solve_ppr_positions(t, u, d, b, real.wavelength, real.N_I, lay0.half_width, lay0.min_spacing,
                                  max_outer, max_inner, seed, per_coordinate)
        layout = res.layout
    real = real.with_layout(layout)
    xi = phase_align(layout, u, b, real.wavelength)
    W = mrt_beam_single(real.bs_y, real.angles.bi_tx[0], real.wavelength, P)
    aT = steering_ula(real.rx_y, real.angles.target_rx, real.wavelength)
    if combiner == "mrc":
        r = mrc_combiner(aT)
    elif combiner == "zf":
        r = zf_combiner(aT, steering_ula(real.rx_y, real.angles.clutter_rx[0], real.wavelength))
    else:
        raise ValueError(f"unknown combiner {combiner!r}")
    return BeamformingSet(W, xi, r), real, res


class SingleUserDesigner(BaseEstimator):
    """Estimator wrapper around the single-user design.

    Parameters
    ----------
    max_outer, max_inner : int
        Loop budgets T1 and T2.
    combiner : {"mrc", "zf"}
    movable : bool
        ``False`` keeps the layout of the realization (fixed-element IRS).
    per_coordinate : bool
        Integer correction variant touching only the violating axis.
    random_state : int, Generator or None
    """

    def __init__(self, max_outer=100, max_inner=10, combiner="mrc", movable=True,
                 per_coordinate=False, random_state=None):
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.combiner = combiner
        self.movable = movable
        self.per_coordinate = per_coordinate
        self.random_state = random_state

    def fit(self, realization: ChannelRealization, P: float):
        beams, real, res = design_single_user(
            realization, P, None if self.movable else realization.layout, self.combiner,
            self.random_state, self.max_outer, self.max_inner, self.per_coordinate)
        self.beams_ = beams
        self.layout_ = real.layout
        self.realization_ = real
        self.residual_ = res.residual if res is not None else np.nan
        self.n_outer_ = res.n_outer if res is not None else 0
        self.system_ = res.system if res is not None else None
        return self

    def predict(self, realization: ChannelRealization | None = None) -> np.ndarray:
        """``[SINR, SCNR]`` of the fitted design."""
        if not hasattr(self, "beams_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit first")
        real = self.realization_ if realization is None else realization.with_layout(self.layout_)
        return np.array([sinr_all(real, self.beams_)[0], scnr_multi(real, self.beams_)])

    def score(self, realization: ChannelRealization | None = None) -> float:
        return float(self.predict(realization)[1])
