"""Multi-user design: alternating optimization over the receive combiner,
element positions, transmit beams and IRS phases.

Each block maximizes a quadratic-transform surrogate of the SCNR that is
tight at the current point, so a block that improves the surrogate also
improves the true SCNR.  All work happens on a copy of the channels with
unit noise power (the transmitter link is rescaled), which leaves every
SINR and SCNR unchanged but keeps the numbers well scaled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .channel import ChannelRealization, ElementLayout, PhaseShifts, min_pairwise_distance, steering_ula
from .metrics import BeamformingSet, clutter_row, scnr_multi, sinr_all, target_row, user_rows
from .subproblems import (
    AdmmState,
    SubproblemInfeasibleError,
    admm_phase_shifts,
    barrier_refine,
    phase_constraints,
    phase_objective,
    solve_qcqp,
    solve_receive_beamformer,
)
from ._validation import check_rng, check_thresholds


class InitializationError(RuntimeError):
    """No beamformer meeting the SINR targets was found for the start point."""


def sinr_targets(rate_thresholds) -> np.ndarray:
    """Rate thresholds in bit/s/Hz to linear SINR targets ``2^R - 1``."""
    return 2.0 ** np.asarray(rate_thresholds, float) - 1


# --------------------------------------------------------------------------
# fractional-programming auxiliaries
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FpAuxiliaries:
    x_fp: np.ndarray  # (K + 1,)
    y: np.ndarray  # (K,)


def update_auxiliaries(real: ChannelRealization, beams: BeamformingSet) -> FpAuxiliaries:
    """Closed-form maximizers of the sensing and user surrogates."""
    t = target_row(real, beams.xi, beams.r_co) @ beams.W
    q = clutter_row(real, beams.xi, beams.r_co) @ beams.W
    x = t.conj() / (np.vdot(q, q).real + real.noise_power)
    G = user_rows(real, beams.xi) @ beams.W
    P = np.abs(G) ** 2
    K = real.K
    d = G[np.arange(K), np.arange(K)]
    y = d / (P.sum(axis=1) - np.abs(d) ** 2 + real.noise_power)
    return FpAuxiliaries(x, y)


def fp_sensing(real, beams, aux) -> float:
    """Quadratic-transform surrogate of the SCNR."""
    t = target_row(real, beams.xi, beams.r_co) @ beams.W
    q = clutter_row(real, beams.xi, beams.r_co) @ beams.W
    x = aux.x_fp
    return float(2 * np.real(t @ x) - np.vdot(x, x).real * (np.vdot(q, q).real + real.noise_power))


def fp_users(real, beams, aux) -> np.ndarray:
    """Quadratic-transform surrogates of every user SINR."""
    G = user_rows(real, beams.xi) @ beams.W
    K = real.K
    P = np.abs(G) ** 2
    d = G[np.arange(K), np.arange(K)]
    y = aux.y
    return 2 * np.real(d * y.conj()) - np.abs(y) ** 2 * (P.sum(axis=1) - np.abs(d) ** 2 + real.noise_power)


# --------------------------------------------------------------------------
# block matrices
# --------------------------------------------------------------------------


def receive_matrices(real, beams, aux):
    """``(A^r, b^r)`` of the combiner subproblem."""
    HW = (beams.xi.xi[:, None] * real.H_BI) @ beams.W
    b = real.H_target @ HW @ aux.x_fp
    M = real.H_clutter @ HW
    A = np.vdot(aux.x_fp, aux.x_fp).real * (M @ M.conj().T)
    return (A + A.conj().T) / 2, b


def transmit_matrices(real, xi, r_co, aux, targets):
    """``(A, C, b, B, const)`` of the transmit QCQP with the FP weights."""
    t = target_row(real, xi, r_co)
    q = clutter_row(real, xi, r_co)
    U = user_rows(real, xi)
    x, y = aux.x_fp, aux.y
    A = np.vdot(x, x).real * np.outer(q.conj(), q)
    C = np.outer(t.conj(), x.conj())
    bs = (U.conj() * y[:, None]).T  # (N_B, K)
    Bs = (np.abs(y) ** 2)[:, None, None] * np.einsum("ki,kj->kij", U.conj(), U)
    consts = np.abs(y) ** 2 * real.noise_power + targets
    return A, C, bs, Bs, consts


def phase_matrices(real, W, r_co, aux, targets):
    """``(Abar, cbar, bbar, Bbar, const)`` of the phase subproblem in xi."""
    HW = real.H_BI @ W  # (N_I, K + 1)
    sT = np.conj(r_co) @ real.H_target
    sC = np.conj(r_co) @ real.H_clutter
    x, y = aux.x_fp, aux.y
    c = sT * (HW @ x)
    E = sC[:, None] * HW
    Abar = np.vdot(x, x).real * (E.conj() @ E.T)
    cbar = c.conj()
    K = real.K
    hH = real.hH()
    bbars, Bbars = [], []
    for k in range(K):
        Uk = hH[k][:, None] * HW
        bbars.append(y[k] * Uk[:, k].conj())
        others = np.delete(Uk, k, axis=1)
        Bbars.append(np.abs(y[k]) ** 2 * (others.conj() @ others.T))
    consts = np.abs(y) ** 2 * real.noise_power + targets
    return (Abar + Abar.conj().T) / 2, cbar, bbars, Bbars, consts


# --------------------------------------------------------------------------
# P2, P4, P5 wrappers
# --------------------------------------------------------------------------


def update_receive_beamformer(real, beams, aux) -> np.ndarray:
    A, b = receive_matrices(real, beams, aux)
    r, _ = solve_receive_beamformer(A, b)
    return r


def solve_transmit_beamformer(real, xi, r_co, aux, targets, P: float):
    """Returns ``(W, QcqpResult)``; raises SubproblemInfeasibleError."""
    A, C, bs, Bs, consts = transmit_matrices(real, xi, r_co, aux, targets)
    res = solve_qcqp(A, C, bs, Bs, consts, P)
    return res.W, res


@dataclass
class PhaseResult:
    xi: PhaseShifts
    objective: float
    residual: float
    iterations: int
    state: AdmmState


def solve_phase_shifts(real, W, r_co, aux, targets, xi0, rho: float = 1.5, tol: float = 1e-6,
                       max_iter: int = 500, refine: bool = True, rho_retries: int = 3, n_starts: int = 0,
                       seed=0) -> PhaseResult:
    """Consensus ADMM on the phase subproblem followed by a local refinement.

    The objective is scaled to order N_I on the torus before the ADMM runs,
    and ``rho`` is interpreted in those units.  When the consensus residual
    misses ``tol`` the ADMM restarts from its last iterate with ``rho``
    doubled, at most ``rho_retries`` times.  The best feasible point among
    the projected ADMM iterate, its unit-modulus copy and ``xi0`` is then
    refined by :func:`barrier_refine`.  ``n_starts`` extra runs from seeded
    random phases guard against poor local optima.
    """
    Abar, cbar, bbars, Bbars, consts = phase_matrices(real, W, r_co, aux, targets)
    n = len(cbar)
    s = max(np.linalg.norm(Abar, 2), 2 * np.linalg.norm(cbar) / np.sqrt(n), 1e-300)
    An, cn = Abar / s, cbar / s
    rng = check_rng(seed)
    inits = [np.asarray(xi0, complex)] + [np.exp(2j * np.pi * rng.random(n)) for _ in range(n_starts)]
    best, fbest, first = None, -np.inf, None
    total = 0
    for x0 in inits:
        start, r = x0, rho
        for _ in range(rho_retries + 1):
            st = admm_phase_shifts(An, cn, bbars, Bbars, consts, start, r, tol, max_iter)
            total += len(st.objective)
            res = max(np.max(np.abs(z - st.xi)) for z in st.z)
            if res < tol:
                break
            start, r = st.xi, 2 * r
        if first is None:
            first = (st, res)
        for c in (np.exp(1j * np.angle(st.xi)), st.z[-1], np.exp(1j * np.angle(x0))):
            if len(consts) and phase_constraints(bbars, Bbars, consts, c).min() < 0:
                continue
            if refine:
                c = barrier_refine(An, cn, bbars, Bbars, consts, c)
            f = phase_objective(An, cn, c)
            if f > fbest:
                best, fbest = c, f
    if best is None:
        raise SubproblemInfeasibleError("no feasible unit-modulus point found")
    st, res = first
    return PhaseResult(PhaseShifts(best), phase_objective(Abar, cbar, best), float(res), total, st)


# --------------------------------------------------------------------------
# positions: surrogate, penalty, analytic gradient
# --------------------------------------------------------------------------


def project_positions(positions, half_width: float) -> np.ndarray:
    """Clamp every coordinate to ``[-half_width, half_width]``."""
    return np.clip(np.asarray(positions, float), -half_width, half_width)


def spacing_penalty(positions, D: float):
    """Sum over violating pairs of ``D - ||r_m - r_n||`` and its gradient."""
    p = np.asarray(positions, float)
    diff = p[:, None, :] - p[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    viol = dist < D
    val = float(np.sum(np.where(viol, D - dist, 0.0)) / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(viol[..., None], diff / dist[..., None], 0.0)
    grad = -unit.sum(axis=1)
    return val, grad


@dataclass
class MppgdParams:
    step: float = 0.05  # initial step, in wavelengths of maximum displacement
    rho_p: float = 100.0
    rho_c: float = 10.0
    eta1: float = 0.9
    eta2: float = 0.1
    memory: int = 10
    max_iter: int = 100
    tol: float = 1e-6


@dataclass
class MppgdState:
    layout: ElementLayout
    best: ElementLayout | None
    step: float
    step_fes: float
    rho_p: float
    rho_c: float
    eta1: float
    eta2: float
    memory: int
    iterations: int = 0
    evaluations: int = 0
    reverts: int = 0


class PositionObjective:
    """Penalized surrogate Q of the position block and its analytic gradient.

    ``Q = gs1 / ref - rho_p B(r) / lambda + sum_k rho_c min(0, (gc1_k - G_k) / G_k)``
    where gs1 and gc1 are the FP surrogates at fixed auxiliaries.
    """

    def __init__(self, real: ChannelRealization, beams: BeamformingSet, aux: FpAuxiliaries,
                 targets, params: MppgdParams, ref: float | None = None):
        self.real, self.beams, self.aux = real, beams, aux
        self.targets = np.asarray(targets, float)
        self.params = params
        self.D = real.layout.min_spacing
        if ref is None:
            ref = abs(fp_sensing(real, beams, aux))
        self.ref = ref if ref > 0 else 1.0

    def realization(self, positions) -> ChannelRealization:
        return self.real.with_layout(self.real.layout.with_positions(positions))

    def value(self, positions, real=None) -> float:
        real = self.realization(positions) if real is None else real
        gs = fp_sensing(real, self.beams, self.aux)
        gc = fp_users(real, self.beams, self.aux)
        B, _ = spacing_penalty(positions, self.D)
        p = self.params
        q = gs / self.ref - p.rho_p * B / real.wavelength
        on = self.targets > 0
        if np.any(on):
            q += p.rho_c * np.sum(np.minimum(0.0, (gc[on] - self.targets[on]) / self.targets[on]))
        return float(q)

    def gradient(self, positions) -> np.ndarray:
        real = self.realization(positions)
        dgs, dgc = surrogate_gradients(real, self.beams, self.aux)
        gc = fp_users(real, self.beams, self.aux)
        _, dB = spacing_penalty(positions, self.D)
        p = self.params
        g = dgs / self.ref - p.rho_p * dB / real.wavelength
        for k in range(real.K):
            if self.targets[k] > 0 and gc[k] < self.targets[k]:
                g = g + p.rho_c * dgc[k] / self.targets[k]
        return g


def surrogate_gradients(real: ChannelRealization, beams: BeamformingSet, aux: FpAuxiliaries):
    """Position gradients of the FP surrogates.

    Returns ``(d gs1 / d r, d gc1_k / d r)`` with shapes (N_I, 2) and
    (K, N_I, 2).  Only the geometric parts of the channels depend on the
    positions; additive CSI errors are constants.
    """
    k0 = 2 * np.pi / real.wavelength
    pos = real.layout.positions
    a, g = real.angles, real.gains
    xi, W, r = beams.xi.xi, beams.W, beams.r_co
    x, y = aux.x_fp, aux.y
    K = real.K

    # transmitter-IRS rows and their derivatives, (2, N_I, N_B)
    F = np.exp(1j * k0 * pos @ a.bi_irs.T)
    G = np.exp(1j * k0 * np.outer(a.bi_tx, real.bs_y))
    H = real.H_BI
    dH = np.stack([(F.conj() * (-1j * k0 * a.bi_irs[:, d]) * g.bi) @ G for d in range(2)])
    HW, dHW = H @ W, dH @ W

    # user rows h_k^H, (2, K, N_I)
    FI = np.exp(1j * k0 * np.einsum("md,kld->kml", pos, a.iu))
    hH = real.hH()
    dhH = np.stack([np.einsum("kml,kl->km", FI * (1j * k0 * a.iu[:, None, :, d]), g.iu) for d in range(2)])

    # combined target / clutter responses seen through r
    aT = np.exp(1j * k0 * pos @ a.target_irs)
    sTrx = np.exp(1j * k0 * real.rx_y * a.target_rx)
    sT = np.conj(r) @ real.H_target
    sT0 = g.target * (np.conj(r) @ sTrx.conj()) * aT
    dsT = np.stack([1j * k0 * a.target_irs[d] * sT0 for d in range(2)])
    aC = np.exp(1j * k0 * pos @ a.clutter_irs.T)
    sCrx = np.exp(1j * k0 * np.outer(real.rx_y, a.clutter_rx))
    sC = np.conj(r) @ real.H_clutter
    wc = (np.conj(r) @ sCrx.conj()) * g.clutter  # (C + 1,)
    dsC = np.stack([(aC * (1j * k0 * a.clutter_irs[:, d])) @ wc for d in range(2)])

    # sensing surrogate
    tW = (xi * sT) @ HW
    qW = (xi * sC) @ HW
    dtW = xi[None, :, None] * (dsT[..., None] * HW[None] + sT[None, :, None] * dHW)  # (2, N_I, K+1)
    dqW = xi[None, :, None] * (dsC[..., None] * HW[None] + sC[None, :, None] * dHW)
    xx = np.vdot(x, x).real
    dgs = 2 * np.real(dtW @ x) - xx * 2 * np.real(dqW @ qW.conj())
    dgs = dgs.T  # (N_I, 2)

    # user surrogates
    uW = (hH * xi) @ HW  # (K, K + 1)
    duW = xi[None, None, :, None] * (dhH[..., None] * HW[None, None] + hH[None, :, :, None] * dHW[:, None])
    dgc = np.zeros((K, pos.shape[0], 2))
    for k in range(K):
        d_own = 2 * np.real(duW[:, k, :, k] * np.conj(y[k]))
        cross = 2 * np.real(duW[:, k] * uW[k].conj()[None, None, :])  # (2, N_I, K+1)
        d_int = cross.sum(axis=-1) - cross[..., k]
        dgc[k] = (d_own - np.abs(y[k]) ** 2 * d_int).T
    return dgs, dgc


def _layout_feasible(real, beams, targets, tol=1e-9) -> bool:
    lay = real.layout
    if not lay.in_region() or min_pairwise_distance(lay.positions) < lay.min_spacing - tol:
        return False
    return bool(np.all(sinr_all(real, beams) >= targets * (1 - 1e-9)))


def mppgd_positions(real: ChannelRealization, beams: BeamformingSet, aux: FpAuxiliaries, targets,
                    params: MppgdParams | None = None):
    """Memory penalized projected gradient ascent on the element positions.

    Every step moves the elements along the gradient of Q, scaled so the
    largest displacement equals the current step, then clamps each
    coordinate to the region.  The step shrinks by ``eta1`` per iteration.
    Feasible improvements of Q are stored; after ``memory`` iterations
    without one the iterate reverts to the stored layout, the step is
    reset to ``eta2`` times the stored step and the counter rewinds.

    Returns ``(layout, state)``; ``state.best`` is None when no feasible
    layout was found.
    """
    p = params or MppgdParams()
    lam0 = p.step * real.wavelength
    obj = PositionObjective(real, beams, aux, targets, p)
    A = real.layout.half_width
    pos = real.layout.positions.copy()
    feas0 = _layout_feasible(real, beams, targets)
    Q_fes = obj.value(pos, real) if feas0 else -np.inf
    st = MppgdState(real.layout, real.layout if feas0 else None, lam0, lam0, p.rho_p, p.rho_c, p.eta1, p.eta2,
                    p.memory)
    pos_fes = pos.copy()
    lam = lam0
    since = 0
    i = 0
    max_evals = 4 * p.max_iter
    while i < p.max_iter and st.evaluations < max_evals:
        i += 1
        st.evaluations += 1
        g = obj.gradient(pos)
        gmax = np.max(np.linalg.norm(g, axis=1))
        if not np.isfinite(gmax) or gmax == 0:
            break
        new = project_positions(pos + lam * g / gmax, A)
        lam *= p.eta1
        rn = obj.realization(new)
        Qn = obj.value(new, rn)
        if _layout_feasible(rn, beams, targets) and Qn > Q_fes:
            delta = Qn - Q_fes
            pos_fes, Q_fes, st.step_fes = new, Qn, lam
            st.best = rn.layout
            pos = new
            since = 0
            if delta < p.tol:
                break
        else:
            pos = new
            since += 1
            if since >= p.memory:
                pos = pos_fes.copy()
                lam = p.eta2 * st.step_fes
                since = 0
                st.reverts += 1
                i = max(0, i - p.memory)
                if lam < 1e-9 * lam0:
                    break
    st.iterations = i
    st.step = lam
    st.layout = st.best if st.best is not None else real.layout
    return st.layout, st


def sca_positions(real: ChannelRealization, beams: BeamformingSet, aux: FpAuxiliaries, targets,
                  params: MppgdParams | None = None, sweeps: int = 10):
    """Element-by-element baseline: one element moves at a time, no memory.

    A reimplementation of the sequential per-element approach used for
    comparison, not the original code.  Each move takes a projected
    gradient step on that element and is kept only if Q improves and the
    layout stays feasible.
    """
    p = params or MppgdParams()
    obj = PositionObjective(real, beams, aux, targets, p)
    A = real.layout.half_width
    pos = real.layout.positions.copy()
    cur = real
    Q = obj.value(pos, cur)
    lam = p.step * real.wavelength
    moves = 0
    for _ in range(sweeps):
        improved = False
        for m in range(pos.shape[0]):
            g = obj.gradient(pos)[m]
            n = np.linalg.norm(g)
            if n == 0:
                continue
            new = pos.copy()
            new[m] = project_positions(pos[m] + lam * g / n, A)
            rn = obj.realization(new)
            Qn = obj.value(new, rn)
            if Qn > Q and _layout_feasible(rn, beams, targets):
                pos, Q, cur, improved = new, Qn, rn, True
                moves += 1
        lam *= p.eta1
        if not improved:
            break
    return cur.layout, moves


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------


def mrc_receive(real: ChannelRealization) -> np.ndarray:
    a = steering_ula(real.rx_y, real.angles.target_rx, real.wavelength)
    return a.conj() / np.linalg.norm(a)


def initial_beams(real: ChannelRealization, P: float, targets, xi=None, tries: int = 20,
                  seed=0) -> BeamformingSet:
    """Feasible starting point for Algorithm 2.

    Tries the phases ``xi`` (all ones by default) and then up to ``tries``
    seeded random phase vectors.  For each, MRT with an equal power split
    is tried first and power-controlled RZF second; the combiner is matched
    to the target direction.
    """
    rng = check_rng(seed)
    n = real.N_I
    starts = [np.ones(n) if xi is None else xi]
    starts += [np.exp(2j * np.pi * rng.random(n)) for _ in range(tries)]
    for x in starts:
        beams = _initial_for_phases(real, P, targets, x)
        if beams is not None:
            return beams
    raise InitializationError(
        f"no start meets SINR targets {np.round(targets, 6).tolist()} after {len(starts)} phase draws")


def _initial_for_phases(real, P, targets, xi):
    xi = PhaseShifts(xi)
    r = mrc_receive(real)
    U = user_rows(real, xi)
    K = real.K
    t = target_row(real, xi, r)
    cols = [u.conj() / max(np.linalg.norm(u), 1e-300) for u in U]
    cols.append(t.conj() / max(np.linalg.norm(t), 1e-300))
    W = np.sqrt(P / (K + 1)) * np.stack(cols, axis=1)
    beams = BeamformingSet(W, xi, r)
    if np.all(sinr_all(real, beams) >= targets):
        return beams
    # minimum-power control over regularized ZF directions, rest to sensing
    reg = K * real.noise_power / P
    D = U.conj().T @ np.linalg.inv(U @ U.conj().T + reg * np.eye(K))
    D /= np.linalg.norm(D, axis=0)
    g = np.abs(U @ D) ** 2
    own = np.diag(g)
    M = np.eye(K) - (targets / own)[:, None] * (g - np.diag(own))
    try:
        p = np.linalg.solve(M, targets * real.noise_power / own)
    except np.linalg.LinAlgError:
        p = np.full(K, np.inf)
    if np.all(p >= 0) and p.sum() <= P:
        p = p * min(1 + 1e-6, P / max(p.sum(), 1e-300))
        Q, _ = np.linalg.qr(U.conj().T)
        ts = t.conj() - Q @ (Q.conj().T @ t.conj())
        ns = np.linalg.norm(ts)
        ws = ts / ns * np.sqrt(max(P - p.sum(), 0.0)) if ns > 1e-12 * np.linalg.norm(t) else np.zeros(real.N_B)
        W = np.concatenate([D * np.sqrt(p), ws[:, None]], axis=1)
        beams = BeamformingSet(W, xi, r)
        s = sinr_all(real, beams)
        if np.all(s >= targets * (1 - 1e-9)):
            return beams
    return None


# --------------------------------------------------------------------------
# Algorithm 2
# --------------------------------------------------------------------------


@dataclass
class SolverTrace:
    """Per-outer-iteration history."""

    objective: list = field(default_factory=list)
    sinr: list = field(default_factory=list)
    violation: list = field(default_factory=list)
    admm_residual: list = field(default_factory=list)
    mppgd_iterations: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    converged: bool = False

    def append(self, obj, sinr, viol, res, its, acc):
        self.objective.append(float(obj))
        self.sinr.append(np.asarray(sinr, float).copy())
        self.violation.append(float(viol))
        self.admm_residual.append(float(res))
        self.mppgd_iterations.append(int(its))
        self.accepted.append(dict(acc))

    @property
    def n_iter(self) -> int:
        return len(self.objective) - 1

    def is_monotone(self, tol: float = 1e-8) -> bool:
        o = np.asarray(self.objective)
        return bool(np.all(np.diff(o) >= -tol * np.maximum(1.0, np.abs(o[:-1]))))

    def to_csv(self, path) -> None:
        K = len(self.sinr[0]) if self.sinr else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "scnr"] + [f"sinr_{k}" for k in range(K)]
                       + ["violation", "admm_residual", "mppgd_iterations"])
            for i, (o, s, v, r, m) in enumerate(zip(self.objective, self.sinr, self.violation,
                                                    self.admm_residual, self.mppgd_iterations)):
                w.writerow([i, repr(o)] + [repr(float(x)) for x in s] + [repr(v), repr(r), m])


@dataclass
class Algorithm2Params:
    tol: float = 1e-6
    max_outer: int = 100
    rho: float = 1.5
    admm_tol: float = 1e-6
    admm_max_iter: int = 500
    mppgd: MppgdParams = field(default_factory=MppgdParams)
    positions: str = "mppgd"  # "mppgd", "sca" or "fixed"
    refine: bool = True
    phase_starts: int = 4


def _violation(real, beams, targets, P) -> float:
    s = sinr_all(real, beams)
    v = np.max(np.maximum(0, targets - s) / np.maximum(targets, 1e-300), initial=0.0)
    v = max(v, (beams.power - P) / P)
    lay = real.layout
    v = max(v, (lay.min_spacing - min_pairwise_distance(lay.positions)) / lay.min_spacing)
    return float(max(v, 0.0))


def run_algorithm2(real: ChannelRealization, P: float, rate_thresholds, beams: BeamformingSet | None = None,
                   params: Algorithm2Params | None = None):
    """Alternate auxiliaries, combiner, positions, beams and phases.

    Blocks are accepted only when they keep the SINR targets and do not
    lower the SCNR.  Stops when the relative SCNR gain of an outer
    iteration drops below ``tol``.

    Returns ``(beams, realization_at_final_layout, trace)``; the
    realization keeps the caller's noise power.
    """
    p = params or Algorithm2Params()
    targets = sinr_targets(check_thresholds(rate_thresholds, real.K))
    work = real.scaled(1.0)
    if beams is None:
        beams = initial_beams(work, P, targets)
    s0 = sinr_all(work, beams)
    if np.any(s0 < targets * (1 - 1e-9)):
        raise InitializationError("initial beams violate the SINR targets")
    trace = SolverTrace()
    obj = scnr_multi(work, beams)
    trace.append(obj, s0, _violation(work, beams, targets, P), 0.0, 0, {})

    def better(cand_real, cand_beams, cur):
        if np.any(sinr_all(cand_real, cand_beams) < targets * (1 - 1e-9)):
            return None
        v = scnr_multi(cand_real, cand_beams)
        return v if v >= cur else None

    for it in range(p.max_outer):
        start = obj
        acc = {}
        # combiner
        aux = update_auxiliaries(work, beams)
        r = update_receive_beamformer(work, beams, aux)
        cand = BeamformingSet(beams.W, beams.xi, r)
        v = better(work, cand, obj)
        acc["r_co"] = v is not None
        if v is not None:
            beams, obj = cand, v
        # positions
        its = 0
        if p.positions != "fixed":
            aux = update_auxiliaries(work, beams)
            if p.positions == "sca":
                lay, its = sca_positions(work, beams, aux, targets, p.mppgd)
            else:
                lay, st = mppgd_positions(work, beams, aux, targets, p.mppgd)
                its = st.iterations
            cand_real = work.with_layout(lay)
            v = better(cand_real, beams, obj) if cand_real.layout.is_feasible() else None
            acc["positions"] = v is not None
            if v is not None:
                work, obj = cand_real, v
        # transmit beams
        aux = update_auxiliaries(work, beams)
        try:
            W, _ = solve_transmit_beamformer(work, beams.xi, beams.r_co, aux, targets, P)
            cand = BeamformingSet(W, beams.xi, beams.r_co)
            v = better(work, cand, obj)
        except SubproblemInfeasibleError:
            v = None
        acc["W"] = v is not None
        if v is not None:
            beams, obj = cand, v
        # phases
        aux = update_auxiliaries(work, beams)
        res = np.nan
        try:
            ph = solve_phase_shifts(work, beams.W, beams.r_co, aux, targets, beams.xi.xi, p.rho, p.admm_tol,
                                    p.admm_max_iter, p.refine, n_starts=p.phase_starts, seed=it)
            res = ph.residual
            cand = BeamformingSet(beams.W, ph.xi, beams.r_co)
            v = better(work, cand, obj)
        except SubproblemInfeasibleError:
            v = None
        acc["xi"] = v is not None
        if v is not None:
            beams, obj = cand, v
        trace.append(obj, sinr_all(work, beams), _violation(work, beams, targets, P), res, its, acc)
        if obj - start < p.tol * max(abs(start), 1e-300):
            trace.converged = True
            break
    return beams, real.with_layout(work.layout), trace


# --------------------------------------------------------------------------
# estimator
# --------------------------------------------------------------------------


def fixed_grid_layout(N_I: int, wavelength: float, half_width: float, min_spacing: float,
                      pitch: float | None = None) -> ElementLayout:
    """Centred square (or near-square) grid at ``pitch`` (default lambda/2)."""
    pitch = wavelength / 2 if pitch is None else pitch
    nx = int(np.ceil(np.sqrt(N_I)))
    ny = int(np.ceil(N_I / nx))
    if nx * ny != N_I:
        raise ValueError(f"N_I = {N_I} does not fill a {nx} x {ny} grid")
    xs = (np.arange(nx) - (nx - 1) / 2) * pitch
    ys = (np.arange(ny) - (ny - 1) / 2) * pitch
    if max(np.max(np.abs(xs)), np.max(np.abs(ys))) > half_width:
        raise ValueError("grid does not fit in the region")
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return ElementLayout(np.stack([X.ravel(), Y.ravel()], axis=1), half_width, min_spacing)


class MultiUserDesigner(BaseEstimator):
    """Estimator wrapper around Algorithm 2.

    Parameters
    ----------
    rate_thresholds : float or sequence
        Per-user rate targets in bit/s/Hz.
    positions : {"mppgd", "sca", "fixed"}
    tol, max_outer, rho : Algorithm 2 settings
    step, rho_p, rho_c, eta1, eta2, memory, max_inner : MPPGD settings
        ``step`` is in wavelengths and ``max_inner`` is I_max.
    """

    def __init__(self, rate_thresholds=0.5, positions="mppgd", tol=1e-6, max_outer=100, rho=1.5,
                 step=0.05, rho_p=100.0, rho_c=10.0, eta1=0.9, eta2=0.1, memory=10, max_inner=100):
        self.rate_thresholds = rate_thresholds
        self.positions = positions
        self.tol = tol
        self.max_outer = max_outer
        self.rho = rho
        self.step = step
        self.rho_p = rho_p
        self.rho_c = rho_c
        self.eta1 = eta1
        self.eta2 = eta2
        self.memory = memory
        self.max_inner = max_inner

    def _params(self) -> Algorithm2Params:
        mp = MppgdParams(self.step, self.rho_p, self.rho_c, self.eta1, self.eta2, self.memory, self.max_inner,
                         self.tol)
        return Algorithm2Params(self.tol, self.max_outer, self.rho, self.tol, 500, mp, self.positions)

    def fit(self, realization: ChannelRealization, P: float, beams: BeamformingSet | None = None):
        if self.positions not in ("mppgd", "sca", "fixed"):
            raise ValueError(f"unknown position method {self.positions!r}")
        b, real, trace = run_algorithm2(realization, P, self.rate_thresholds, beams, self._params())
        self.beams_ = b
        self.layout_ = real.layout
        self.realization_ = real
        self.trace_ = trace
        self.n_iter_ = trace.n_iter
        return self

    def predict(self, realization: ChannelRealization | None = None) -> np.ndarray:
        """``[SCNR, SINR_1, ..., SINR_K]`` of the fitted design."""
        if not hasattr(self, "beams_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit first")
        real = self.realization_ if realization is None else realization.with_layout(self.layout_)
        return np.concatenate([[scnr_multi(real, self.beams_)], sinr_all(real, self.beams_)])

    def score(self, realization: ChannelRealization | None = None) -> float:
        return float(self.predict(realization)[0])
