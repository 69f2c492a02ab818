"""Block solvers used by the multi-user alternating optimization.

All three work on plain matrices so they can be checked against
independent oracles:

* :func:`solve_receive_beamformer` - unit-norm quadratic minimization by
  bisection on the Lagrange multiplier.
* :func:`solve_qcqp` - concave quadratic maximization over several convex
  quadratic constraints and a power ball, solved through its dual with a
  projected Newton method.
* :func:`admm_phase_shifts` - consensus ADMM for the unit-modulus problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._validation import check_hermitian_psd


class SubproblemInfeasibleError(RuntimeError):
    """The constraint set of a block subproblem is empty at the current point."""


# --------------------------------------------------------------------------
# receive combiner
# --------------------------------------------------------------------------


def solve_receive_beamformer(A, b, rtol: float = 1e-15, max_iter: int = 400):
    """Minimize ``r^H A r - 2 Re(r^H b)`` subject to ``||r|| = 1``.

    Returns ``(r, lam)`` with ``r = (A + lam I)^{-1} b``.  The multiplier is
    found by bisection over ``lam > -lambda_min(A)`` where the norm of
    ``(A + lam I)^{-1} b`` decreases monotonically.  For ``b = 0`` the
    eigenvector of the smallest eigenvalue is returned.
    """
    A = check_hermitian_psd(A, "A^r")
    b = np.asarray(b, dtype=complex).ravel()
    n = A.shape[0]
    I = np.eye(n)
    nb = np.linalg.norm(b)
    if nb == 0:
        w, V = np.linalg.eigh(A)
        return V[:, 0].astype(complex), float(-w[0])
    lmin = float(np.linalg.eigvalsh(A)[0])

    def norm_at(t):
        return np.linalg.norm(np.linalg.solve(A + (t - lmin) * I, b))

    # t = lam + lambda_min lies in (0, ||b||]
    hi = nb
    # eigvalsh resolves lambda_min only to about eps * ||A||
    lo = max(nb * 1e-14, 1e-12 * np.linalg.norm(A, 2))
    try:
        hard = lo >= hi or norm_at(lo) < 1
    except np.linalg.LinAlgError:
        hard = True
    if hard:
        return _hard_case(A, b, lmin)
    for _ in range(max_iter):
        mid = np.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if norm_at(mid) > 1:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    t = 0.5 * (lo + hi)
    lam = t - lmin
    r = np.linalg.solve(A + lam * I, b)
    return r / np.linalg.norm(r), float(lam)


def _hard_case(A, b, lmin):
    # b has (almost) no weight on the bottom eigenspace: pad with it
    w, V = np.linalg.eigh(A)
    keep = w - lmin > 1e-12 * max(1.0, abs(w[-1]))
    beta = V.conj().T @ b
    r = V[:, keep] @ (beta[keep] / (w[keep] - lmin))
    tau = np.sqrt(max(0.0, 1 - np.linalg.norm(r) ** 2))
    r = r + tau * V[:, ~keep][:, 0]
    return r / np.linalg.norm(r), float(-lmin)


def receive_objective(A, b, r) -> float:
    r = np.asarray(r, complex)
    return float(np.real(np.vdot(r, A @ r)) - 2 * np.real(np.vdot(r, b)))


# --------------------------------------------------------------------------
# transmit QCQP
# --------------------------------------------------------------------------


@dataclass
class QcqpResult:
    W: np.ndarray
    objective: float
    mu: np.ndarray
    nu: float
    kkt_residual: float
    iterations: int


def qcqp_objective(A, C, W) -> float:
    """``sum_j -w_j^H A w_j + 2 Re(c_j^H w_j)``."""
    W = np.asarray(W, complex)
    return float(-np.real(np.einsum("ij,ik,kj->", W.conj(), A, W)) + 2 * np.real(np.sum(C.conj() * W)))


def qcqp_constraints(bs, Bs, consts, W) -> np.ndarray:
    """``2 Re(b_k^H w_k) - sum_{j != k} w_j^H B_k w_j - const_k`` per k."""
    W = np.asarray(W, complex)
    K = bs.shape[1]
    out = np.empty(K)
    for k in range(K):
        q = np.real(np.einsum("ij,ik,kj->j", W.conj(), Bs[k], W))
        out[k] = 2 * np.real(np.vdot(bs[:, k], W[:, k])) - (q.sum() - q[k]) - consts[k]
    return out


class _Dual:
    """Dual function of the normalized QCQP (power budget 1)."""

    def __init__(self, A, C, bs, Bs, consts):
        self.A, self.C, self.bs, self.Bs, self.consts = A, C, bs, Bs, consts
        self.n, self.J = C.shape
        self.K = bs.shape[1]

    def solve_w(self, d):
        mu, nu = d[:-1], d[-1]
        n, J, K = self.n, self.J, self.K
        W = np.zeros((n, J), complex)
        facs = []
        for j in range(J):
            M = self.A + nu * np.eye(n)
            for k in range(K):
                if k != j:
                    M = M + mu[k] * self.Bs[k]
            rhs = self.C[:, j] + (mu[j] * self.bs[:, j] if j < K else 0)
            try:
                f = cho_factor(M)
            except np.linalg.LinAlgError:
                return None, None
            dg = np.abs(np.diag(f[0]))
            if dg.min() ** 2 < 1e-13 * dg.max() ** 2:
                # numerically singular: outside the useful dual domain
                return None, None
            W[:, j] = cho_solve(f, rhs)
            facs.append(f)
        return W, facs

    def evaluate(self, d, hessian=True):
        W, facs = self.solve_w(d)
        if W is None:
            return np.inf, None, None, None
        h = qcqp_constraints(self.bs, self.Bs, self.consts, W)
        hp = 1.0 - float(np.real(np.vdot(W, W)))
        val = qcqp_objective(self.A, self.C, W) + float(d[:-1] @ h) + d[-1] * hp
        grad = np.append(h, hp)
        if not hessian:
            return val, grad, None, W
        m = self.K + 1
        H = np.zeros((m, m))
        for j in range(self.J):
            G = np.zeros((self.n, m), complex)
            for k in range(self.K):
                G[:, k] = self.bs[:, j] if k == j else -self.Bs[k] @ W[:, j]
            G[:, -1] = -W[:, j]
            S = cho_solve(facs[j], G)
            H += 2 * np.real(G.conj().T @ S)
        return val, grad, H, W


def solve_qcqp(A, C, bs, Bs, consts, P: float, tol: float = 1e-10, max_iter: int = 200) -> QcqpResult:
    """Maximize ``sum_j -w_j^H A w_j + 2 Re(c_j^H w_j)`` over the columns of W.

    Subject to ``2 Re(b_k^H w_k) - sum_{j != k} w_j^H B_k w_j >= const_k``
    for the first K columns and ``||W||_F^2 <= P``.  The dual in the
    multipliers ``(mu_1..mu_K, nu)`` is minimized by projected Newton with
    an Armijo search; the primal columns follow from
    ``(A + sum_{k != j} mu_k B_k + nu I) w_j = c_j + mu_j b_j``.

    Raises SubproblemInfeasibleError when the dual is unbounded below.
    """
    A = check_hermitian_psd(A, "A^w")
    C = np.asarray(C, complex)
    n, J = C.shape
    bs = np.asarray(bs, complex).reshape(n, -1)
    K = bs.shape[1]
    Bs = np.asarray(Bs, complex).reshape(K, n, n)
    consts = np.asarray(consts, float).reshape(K)
    if J < K:
        raise ValueError("fewer columns than constraints")
    # w = sqrt(P) v, scale objective and each constraint to order one
    sP = np.sqrt(P)
    so = max(P * np.linalg.norm(A, 2), sP * np.linalg.norm(C), 1e-300)
    A1, C1 = P * A / so, sP * C / so
    sk = np.array([max(abs(consts[k]), sP * np.linalg.norm(bs[:, k]), P * np.linalg.norm(Bs[k], 2), 1e-300)
                   for k in range(K)])
    bs1 = sP * bs / sk
    Bs1 = P * Bs / sk[:, None, None]
    c1 = consts / sk
    dual = _Dual(A1, C1, bs1, Bs1, c1)

    d = np.zeros(K + 1)
    d[-1] = 1.0
    val, grad, H, V = dual.evaluate(d)
    it = stalled = 0
    for it in range(1, max_iter + 1):
        pg = d - np.maximum(d - grad, 0)
        if np.max(np.abs(pg)) < tol:
            break
        eps = min(1e-9, np.max(np.abs(pg)))
        active = (d <= eps) & (grad > 0)
        free = ~active
        step = np.zeros_like(d)
        Hf = H[np.ix_(free, free)]
        Hf = Hf + 1e-14 * max(1.0, np.trace(Hf)) * np.eye(Hf.shape[0])
        step[free] = np.linalg.solve(Hf, grad[free])
        step[active] = grad[active] / np.maximum(np.diag(H)[active], 1e-12)
        if grad @ step < 1e-15 * max(1.0, abs(val)):
            break  # Newton decrement at rounding level
        alpha = 1.0
        while True:
            dn = np.maximum(d - alpha * step, 0.0)
            vn, gn, Hn, Vn = dual.evaluate(dn)
            decrease = grad[free] @ (d - dn)[free] + grad[active] @ (d - dn)[active]
            if vn <= val - 1e-4 * decrease or alpha < 1e-12:
                break
            alpha *= 0.5
        if not np.isfinite(vn):
            raise SubproblemInfeasibleError("dual evaluation failed")
        if vn < -1e12 or np.max(dn) > 1e12:
            raise SubproblemInfeasibleError("SINR constraints cannot be met within the power budget")
        stalled = stalled + 1 if vn > val - 1e-15 * max(1, abs(val)) else 0
        d, val, grad, H, V = dn, vn, gn, Hn, Vn
        if stalled >= 3:
            break
    kkt = _qcqp_kkt(dual, d, V)
    if kkt > 1e-3:
        raise SubproblemInfeasibleError(f"QCQP did not reach a KKT point (residual {kkt:.2e})")
    pw = float(np.real(np.vdot(V, V)))
    if pw > 1:
        V = V / np.sqrt(pw)
    W = sP * V
    return QcqpResult(W, qcqp_objective(A, C, W), d[:-1] / sk * so, d[-1] * so / P, kkt, it)


def _qcqp_kkt(dual: _Dual, d, V) -> float:
    """Largest of the normalized stationarity, feasibility and slackness errors."""
    mu, nu = d[:-1], d[-1]
    stat = 0.0
    for j in range(dual.J):
        g = dual.C[:, j] - dual.A @ V[:, j] - nu * V[:, j]
        if j < dual.K:
            g = g + mu[j] * dual.bs[:, j]
        for k in range(dual.K):
            if k != j:
                g = g - mu[k] * dual.Bs[k] @ V[:, j]
        stat = max(stat, np.linalg.norm(g))
    h = qcqp_constraints(dual.bs, dual.Bs, dual.consts, V)
    hp = 1 - float(np.real(np.vdot(V, V)))
    prim = max(0.0, -h.min(initial=0.0), -hp)
    comp = max(np.max(np.abs(mu * h), initial=0.0), abs(nu * hp))
    return float(max(stat, prim, comp, max(0.0, -d.min())))


def qcqp_kkt_residual(A, C, bs, Bs, consts, P, W, mu, nu) -> float:
    """KKT residual of a returned solution in the normalized units of :func:`solve_qcqp`."""
    A = np.asarray(A, complex)
    C = np.asarray(C, complex)
    n = C.shape[0]
    bs = np.asarray(bs, complex).reshape(n, -1)
    K = bs.shape[1]
    Bs = np.asarray(Bs, complex).reshape(K, n, n)
    consts = np.asarray(consts, float).reshape(K)
    sP = np.sqrt(P)
    so = max(P * np.linalg.norm(A, 2), sP * np.linalg.norm(C), 1e-300)
    sk = np.array([max(abs(consts[k]), sP * np.linalg.norm(bs[:, k]), P * np.linalg.norm(Bs[k], 2), 1e-300)
                   for k in range(K)])
    dual = _Dual(P * A / so, sP * C / so, sP * bs / sk, P * Bs / sk[:, None, None], consts / sk)
    d = np.append(np.asarray(mu) * sk / so, nu * P / so)
    return _qcqp_kkt(dual, d, np.asarray(W) / sP)


# --------------------------------------------------------------------------
# phase shifts
# --------------------------------------------------------------------------


def phase_objective(Abar, cbar, xi) -> float:
    """``-xi^H Abar xi + 2 Re(xi^H cbar)``."""
    xi = np.asarray(xi, complex)
    return float(-np.real(np.vdot(xi, Abar @ xi)) + 2 * np.real(np.vdot(xi, cbar)))


def phase_constraints(bbars, Bbars, consts, xi) -> np.ndarray:
    """``2 Re(xi^H b_k) - xi^H B_k xi - const_k`` for every k."""
    xi = np.asarray(xi, complex)
    return np.array([2 * np.real(np.vdot(xi, bbars[k])) - np.real(np.vdot(xi, Bbars[k] @ xi)) - consts[k]
                     for k in range(len(consts))])


def project_quadratic(v, b, B, const, tol: float = 1e-13, max_iter: int = 100, eig=None):
    """Euclidean projection of v onto ``{z: 2 Re(z^H b) - z^H B z >= const}``.

    The projection is ``z = (I + lam B)^{-1} (v + lam b)``.  In the
    eigenbasis of B the constraint value along this path is increasing and
    concave in lam, so Newton's method from lam = 0 climbs monotonically to
    the root.  Pass ``eig = eigh(B)`` to reuse a factorization.
    Returns ``(z, lam)``.
    """
    v = np.asarray(v, complex)
    d, V = np.linalg.eigh(B) if eig is None else eig
    d = np.maximum(d, 0.0)
    vt, bt = V.conj().T @ v, V.conj().T @ np.asarray(b, complex)
    e2 = np.abs(bt - d * vt) ** 2

    def h(lam):
        zt = (vt + lam * bt) / (1 + lam * d)
        return 2 * np.real(np.vdot(zt, bt)) - float(d @ np.abs(zt) ** 2) - const, zt

    lam = 0.0
    val, zt = h(lam)
    if val >= 0:
        return v, 0.0
    for _ in range(max_iter):
        slope = 2 * float(np.sum(e2 / (1 + lam * d) ** 3))
        if slope <= 0:
            break
        step = -val / slope
        lam += step
        val, zt = h(lam)
        if lam > 1e14:
            break
        if step <= tol * lam:
            break
    # land on the feasible side
    for _ in range(60):
        if val >= 0 or lam > 1e14:
            break
        lam = lam * (1 + 1e-12) + 1e-300
        val, zt = h(lam)
    if val < -1e-9 * max(1.0, abs(const)):
        raise SubproblemInfeasibleError("quadratic constraint set is empty")
    return V @ zt, lam


@dataclass
class AdmmState:
    """Iterates of the consensus ADMM."""

    xi: np.ndarray
    z: list
    mu: list
    rho: float
    lam: np.ndarray
    objective: list = field(default_factory=list)
    residual: list = field(default_factory=list)


def admm_phase_shifts(Abar, cbar, bbars, Bbars, consts, xi0, rho: float = 1.5, tol: float = 1e-6,
                      max_iter: int = 500) -> AdmmState:
    """Consensus ADMM for the unit-modulus quadratic program.

    ``Abar``/``cbar`` should already be scaled so the objective is of order
    ``N_I`` on the torus; the caller handles this.  One copy per quadratic
    constraint plus one unit-modulus copy.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    K = len(consts)
    n = len(xi0)
    xi = np.asarray(xi0, complex).copy()
    z = [xi.copy() for _ in range(K + 1)]
    mu = [np.zeros(n, complex) for _ in range(K + 1)]
    st = AdmmState(xi, z, mu, rho, np.zeros(K))
    Minv = np.linalg.inv((K + 1) * rho * np.eye(n) + Abar)
    eigs = [np.linalg.eigh(Bbars[k]) for k in range(K)]
    prev = np.inf
    for _ in range(max_iter):
        xi = Minv @ (cbar + rho * sum(zi + mi for zi, mi in zip(z, mu)))
        z[K] = np.exp(1j * np.angle(xi - mu[K]))
        for k in range(K):
            z[k], st.lam[k] = project_quadratic(xi - mu[k], bbars[k], Bbars[k], consts[k], eig=eigs[k])
        for i in range(K + 1):
            mu[i] = mu[i] + z[i] - xi
        obj = -phase_objective(Abar, cbar, xi) + rho * sum(np.linalg.norm(zi - xi + mi) ** 2 for zi, mi in zip(z, mu))
        res = max(np.max(np.abs(zi - xi)) for zi in z)
        st.objective.append(float(obj))
        st.residual.append(float(res))
        if abs(obj - prev) < tol * max(1.0, abs(obj)) and res < tol:
            break
        prev = obj
    st.xi, st.z, st.mu = xi, z, mu
    return st


def _angle_derivatives(M, v, xi):
    """Gradient and Hessian in theta of ``xi^H M xi + 2 Re(xi^H v)``, xi = exp(j theta)."""
    s = M @ xi + v
    g = 2 * np.imag(xi.conj() * s)
    H = 2 * np.real(np.outer(xi.conj(), xi) * M)
    np.fill_diagonal(H, -2 * np.real(xi.conj() * (s - np.diag(M) * xi)))
    return g, H


def barrier_refine(Abar, cbar, bbars, Bbars, consts, xi, tau0: float = 1e-2, gap: float = 1e-12,
                   max_newton: int = 100):
    """Local refinement of the phase problem by a log-barrier Newton method in the angles.

    Maximizes ``f(theta) + tau sum_k log h_k(theta)`` for a decreasing
    sequence of ``tau``; every iterate stays strictly feasible.  Returns
    the refined unit-modulus vector, or the input when it is not strictly
    feasible.
    """
    xi = np.exp(1j * np.angle(xi))
    K = len(consts)
    if K and phase_constraints(bbars, Bbars, consts, xi).min() <= 0:
        return xi
    f0 = phase_objective(Abar, cbar, xi)
    sf = max(abs(f0), np.linalg.norm(Abar, 2) * len(xi), 1e-300)
    hs = [max(abs(consts[k]), np.linalg.norm(bbars[k]) * np.sqrt(len(xi)), 1e-300) for k in range(K)]

    def phi(x, tau):
        h = phase_constraints(bbars, Bbars, consts, x) if K else np.zeros(0)
        if K and h.min() <= 0:
            return -np.inf
        return phase_objective(Abar, cbar, x) / sf + tau * float(np.sum(np.log(h / np.array(hs)))) if K \
            else phase_objective(Abar, cbar, x) / sf

    theta = np.angle(xi)
    tau = tau0 if K else 0.0
    while True:
        for _ in range(max_newton):
            x = np.exp(1j * theta)
            g, H = _angle_derivatives(-Abar / sf, cbar / sf, x)
            if K:
                h = phase_constraints(bbars, Bbars, consts, x)
                for k in range(K):
                    gk, Hk = _angle_derivatives(-Bbars[k], bbars[k], x)
                    g = g + tau * gk / h[k]
                    H = H + tau * (Hk / h[k] - np.outer(gk, gk) / h[k] ** 2)
            # modified Newton: make the model strictly concave
            w = np.linalg.eigvalsh(H)
            shift = max(0.0, w[-1]) + 1e-12 * max(1.0, abs(w[0]))
            step = np.linalg.solve(shift * np.eye(len(g)) - H, g)
            dec = float(g @ step)
            if dec < 1e-16:
                break
            cur = phi(x, tau)
            t = 1.0
            while t > 1e-12:
                if phi(np.exp(1j * (theta + t * step)), tau) >= cur + 0.25 * t * dec:
                    break
                t *= 0.5
            else:
                break
            theta = theta + t * step
        if not K or K * tau < gap:
            break
        tau *= 0.1
    return np.exp(1j * theta)
