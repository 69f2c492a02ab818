"""Deterministic ergodic lower bounds under MRT/MRC.

Notation (all kernels indexed by IRS elements m, m1, m2, m3):

* ``g*_{m,k} = sum_l beta_{k,l} exp(j k rho_l(r_m))`` is entry m of h_k^H.
* ``h_{m,n} = sum_p alpha_p exp(-j k rho_p(r_m)) exp(j k phi_p y_n)`` is H_BI.
* ``G_k[m, m1] = E{g*_m g_m1}`` and ``F[m, m1] = E{h_{m,n} h*_{m1,n}}``.
* ``Gbar_{k,i}[m, m1, m2, m3] = E{g*_{m,k} g_{m1,i} g_{m2,k} g*_{m3,i}}``.
* ``Fbar_{n,n1}[m, m1, m2, m3] = E{h_{m,n} h*_{m1,n} h*_{m2,n1} h_{m3,n1}}``.

Every quadruple sum carries the phase ``xi_m xi*_m1 xi*_m2 xi_m3``.
Transmit beams are MRT on the instantaneous effective channels and the
receiver uses the matched combiner towards the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ElementLayout, PathAngles, dirichlet_kernel, draw_angles, link_powers, steering_ula
from .scene import SceneConfig, half_wavelength_ula


class BoundInconsistencyError(ArithmeticError):
    """A bound denominator is not positive, which signals a tensor bug."""


def _pos(layout) -> np.ndarray:
    return layout.positions if isinstance(layout, ElementLayout) else np.asarray(layout, float).reshape(-1, 2)


def _phases(pos, angles, wavelength, sign=1.0) -> np.ndarray:
    va = np.asarray(angles, float).reshape(-1, 2)
    return np.exp(sign * 1j * 2 * np.pi / wavelength * pos @ va.T)


# two-index kernels -----------------------------------------------------


def tensor_G(layout, angles, power: float, wavelength: float) -> np.ndarray:
    """``sum_l (power/L) exp(j k (rho_l(r_m) - rho_l(r_m1)))``."""
    S = _phases(_pos(layout), angles, wavelength)
    L = S.shape[1]
    return (power / L) * S @ S.conj().T


def tensor_F(layout, angles, power: float, wavelength: float) -> np.ndarray:
    """``sum_p (power/L) exp(-j k (rho_p(r_m) - rho_p(r_m1)))``."""
    U = _phases(_pos(layout), angles, wavelength, -1.0)
    L = U.shape[1]
    return (power / L) * U @ U.conj().T


def tensor_J(layout, angle, wavelength: float) -> np.ndarray:
    """``J[m, m1] = a(m) a*(m1)`` for one IRS direction."""
    a = _phases(_pos(layout), angle, wavelength)[:, 0]
    return np.outer(a, a.conj())


def tensor_Jbar(layout, angle_T, angle_c, wavelength: float) -> np.ndarray:
    """``a_c(m) a_T*(m1) a_c*(m2) a_T(m3)``."""
    aT = _phases(_pos(layout), angle_T, wavelength)[:, 0]
    ac = _phases(_pos(layout), angle_c, wavelength)[:, 0]
    return np.einsum("a,b,c,d->abcd", ac, aT.conj(), ac.conj(), aT)


def tensor_Gbar(G_k: np.ndarray, G_i: np.ndarray, same_user: bool) -> np.ndarray:
    """Fourth moment of the user factors.

    ``G_k[m, m2] G_i[m3, m1]`` plus, for i = k, ``G_k[m, m1] G_k[m3, m2]``.
    """
    out = np.einsum("ac,db->abcd", G_k, G_i)
    if same_user:
        out = out + np.einsum("ab,dc->abcd", G_k, G_k)
    return out


def tensor_Fbar(layout, bs_y, bi_angles, bi_tx, power: float, wavelength: float, n: int, n1: int) -> np.ndarray:
    """Fourth moment of the transmitter-IRS channel for antennas (n, n1)."""
    pos = _pos(layout)
    U = _phases(pos, bi_angles, wavelength, -1.0)  # (N_I, L)
    L = U.shape[1]
    a = np.full(L, power / L)
    v = np.exp(1j * 2 * np.pi / wavelength * np.outer(np.asarray(bs_y, float), bi_tx))  # (N_B, L)
    F = (U * a) @ U.conj().T
    first = np.einsum("ab,dc->abcd", F, F)
    # sum_{p,p1} a_p a_p1 u_p(m) u_p*(m2) u_p1(m3) u_p1*(m1) v_p(n) v_p*(n1) v_p1(n1) v_p1*(n)
    w = np.outer(a * v[n] * v[n1].conj(), a * v[n1] * v[n].conj())
    second = np.einsum("pq,ap,cp,dq,bq->abcd", w, U, U.conj(), U, U.conj())
    return first + second


def fbar_total(layout, bs_y, bi_angles, bi_tx, power: float, wavelength: float) -> np.ndarray:
    """``sum_{n, n1} Fbar_{n,n1}`` computed through path-domain factors."""
    pos = _pos(layout)
    U = _phases(pos, bi_angles, wavelength, -1.0)
    L = U.shape[1]
    a = np.full(L, power / L)
    v = np.exp(1j * 2 * np.pi / wavelength * np.outer(np.asarray(bs_y, float), bi_tx))
    NB = v.shape[0]
    F = (U * a) @ U.conj().T
    c = v.T @ v.conj()  # c[p, q] = sum_n v_p(n) v_q*(n)
    w = np.outer(a, a) * np.abs(c) ** 2
    second = np.einsum("pq,ap,cp,dq,bq->abcd", w, U, U.conj(), U, U.conj())
    return NB**2 * np.einsum("ab,dc->abcd", F, F) + second


# assembly -------------------------------------------------------------


@dataclass(frozen=True)
class ExpectationTensors:
    """Kernels of one scenario at one layout."""

    G: np.ndarray  # (K, N_I, N_I)
    F: np.ndarray  # (N_I, N_I)
    Fbar_sum: np.ndarray  # (N_I,)*4
    aT: np.ndarray  # IRS steering towards the target
    aC: np.ndarray  # (C + 1, N_I) steering towards each clutter
    kappa: np.ndarray  # (C + 1,) receiver products a_S^T(target) a_S^*(c)
    N_B: int
    N_S: int

    @classmethod
    def build(cls, layout, angles: PathAngles, powers: dict, bs_y, rx_y, wavelength: float) -> "ExpectationTensors":
        pos = _pos(layout)
        G = np.stack([tensor_G(pos, angles.iu[k], powers["iu"][k], wavelength) for k in range(angles.iu.shape[0])])
        F = tensor_F(pos, angles.bi_irs, powers["bi"], wavelength)
        Fs = fbar_total(pos, bs_y, angles.bi_irs, angles.bi_tx, powers["bi"], wavelength)
        aT = _phases(pos, angles.target_irs, wavelength)[:, 0]
        aC = _phases(pos, angles.clutter_irs, wavelength).T
        sT = steering_ula(rx_y, angles.target_rx, wavelength)
        sC = np.exp(1j * 2 * np.pi / wavelength * np.outer(angles.clutter_rx, rx_y))
        kappa = sC.conj() @ sT
        return cls(G, F, Fs, aT, aC, kappa, len(bs_y), len(rx_y))


@dataclass(frozen=True)
class BoundReport:
    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    gamma_c: np.ndarray
    rate_c: np.ndarray
    A_s: float
    B_s: float
    gamma_s: float
    metric_s: float
    eta_c: np.ndarray
    eta_s: float
    max_imag: float = 0.0

    def as_row(self) -> dict:
        row = {"A_s": self.A_s, "B_s": self.B_s, "gamma_s_lb": self.gamma_s, "M_s_lb": self.metric_s}
        for k in range(len(self.A_c)):
            row.update({f"A_c_{k}": self.A_c[k], f"B_c_{k}": self.B_c[k], f"C_c_{k}": self.C_c[k],
                        f"gamma_c_lb_{k}": self.gamma_c[k], f"R_c_lb_{k}": self.rate_c[k]})
        return row


def _contract(X: np.ndarray, T: ExpectationTensors, phase: np.ndarray) -> complex:
    return np.sum(X * T.Fbar_sum * phase)


def _moments(T: ExpectationTensors, xi, p_c, p_s, sigma_T2, sigma_c2):
    """All expectations needed by both bounds; returns a dict of reals."""
    xi = np.asarray(xi, dtype=complex)
    K = T.G.shape[0]
    phase = np.einsum("a,b,c,d->abcd", xi, xi.conj(), xi.conj(), xi)
    x2 = np.outer(xi, xi.conj())
    NB, NS = T.N_B, T.N_S
    Ee = np.array([NB * np.sum(T.G[k] * T.F * x2) for k in range(K)])
    Jt = np.outer(T.aT, T.aT.conj())
    Ed = NB * np.sum(Jt * T.F * x2)
    imag = [Ee, Ed]
    Ee, Ed = Ee.real, float(Ed.real)
    p_c = np.asarray(p_c, float)
    eta_c2 = np.where(Ee > 0, p_c / np.where(Ee > 0, Ee, 1), 0.0)
    den_s = sigma_T2 * Ed
    eta_s2 = p_s / den_s if den_s > 0 else 0.0

    # communication
    A_c = np.zeros(K, complex)
    C_c = np.zeros(K, complex)
    for k in range(K):
        for i in range(K):
            A_c[k] += eta_c2[i] * _contract(tensor_Gbar(T.G[k], T.G[i], i == k), T, phase)
        X = np.einsum("ac,b,d->abcd", T.G[k], T.aT.conj(), T.aT)
        C_c[k] = eta_s2 * sigma_T2 * _contract(X, T, phase)
    B_c = eta_c2 * Ee**2

    # sensing: target and clutters leaking through the user beams
    w_c = np.abs(T.kappa) ** 2 / NS * np.asarray(sigma_c2, float)
    A_s = 0.0 + 0j
    for k in range(K):
        Xt = np.einsum("a,c,db->abcd", T.aT, T.aT.conj(), T.G[k])
        A_s += eta_c2[k] * NS * sigma_T2 * _contract(Xt, T, phase)
        for c in range(len(w_c)):
            Xc = np.einsum("a,c,db->abcd", T.aC[c], T.aC[c].conj(), T.G[k])
            A_s += eta_c2[k] * w_c[c] * _contract(Xc, T, phase)
    # clutters through the sensing beam
    for c in range(len(w_c)):
        Jb = np.einsum("a,b,c,d->abcd", T.aC[c], T.aT.conj(), T.aC[c].conj(), T.aT)
        A_s += eta_s2 * sigma_T2 * w_c[c] * _contract(Jb, T, phase)
    # target through the sensing beam, E|alpha_T|^4 = 2 sigma_T^4
    JbT = np.einsum("a,b,c,d->abcd", T.aT, T.aT.conj(), T.aT.conj(), T.aT)
    A_s += eta_s2 * NS * 2 * sigma_T2**2 * _contract(JbT, T, phase)
    B_s = eta_s2 * NS * sigma_T2**2 * Ed**2

    imag += [A_c, C_c, A_s]
    scale = max(1e-300, float(np.max(np.abs(np.concatenate([np.ravel(v) for v in imag])))))
    max_imag = float(max(np.max(np.abs(np.imag(np.ravel(v)))) for v in imag) / scale)
    return dict(
        A_c=A_c.real, B_c=B_c, C_c=C_c.real, A_s=float(A_s.real), B_s=float(B_s),
        eta_c=np.sqrt(eta_c2), eta_s=float(np.sqrt(eta_s2)), Ee=Ee, Ed=Ed, max_imag=max_imag,
    )


def _report(m: dict, noise: float) -> BoundReport:
    den_c = m["A_c"] - m["B_c"] + m["C_c"] + noise
    den_s = m["A_s"] - m["B_s"] + noise
    if np.any(den_c <= 0) or den_s <= 0:
        raise BoundInconsistencyError("nonpositive bound denominator")
    g_c = m["B_c"] / den_c
    g_s = m["B_s"] / den_s
    with np.errstate(divide="ignore"):
        M_s = float(np.log10(g_s))
    return BoundReport(
        A_c=m["A_c"], B_c=m["B_c"], C_c=m["C_c"], gamma_c=g_c, rate_c=np.log2(1 + g_c),
        A_s=m["A_s"], B_s=m["B_s"], gamma_s=float(g_s), metric_s=M_s,
        eta_c=m["eta_c"], eta_s=m["eta_s"], max_imag=m["max_imag"],
    )


def _inputs(config: SceneConfig, layout, angles, powers):
    if angles is None:
        angles = draw_angles(config, 0)
    if powers is None:
        powers = link_powers(config)
    bs_y = half_wavelength_ula(config.N_B, config.wavelength)
    rx_y = half_wavelength_ula(config.N_S, config.wavelength)
    T = ExpectationTensors.build(layout, angles, powers, bs_y, rx_y, config.wavelength)
    return T, powers


def default_power_split(config: SceneConfig, P: float | None = None):
    P = config.transmit_power if P is None else P
    share = P / (config.K + 1)
    return np.full(config.K, share), share


def lower_bounds(config: SceneConfig, layout, xi, p_c=None, p_s=None, angles=None, powers=None) -> BoundReport:
    """Communication and sensing lower bounds for one layout and reflection."""
    if p_c is None or p_s is None:
        p_c0, p_s0 = default_power_split(config)
        p_c = p_c0 if p_c is None else p_c
        p_s = p_s0 if p_s is None else p_s
    if len(_pos(layout)) > 16:
        raise ValueError("closed-form bounds are capped at N_I <= 16")
    T, powers = _inputs(config, layout, angles, powers)
    m = _moments(T, xi, p_c, p_s, powers["target"], powers["clutter"])
    return _report(m, config.noise_power)


def bound_communication(config, layout, xi, p_c=None, p_s=None, angles=None, powers=None):
    """``(A_c, B_c, C_c, gamma_c_lb, R_c_lb)`` per user."""
    r = lower_bounds(config, layout, xi, p_c, p_s, angles, powers)
    return r.A_c, r.B_c, r.C_c, r.gamma_c, r.rate_c


def bound_sensing(config, layout, xi, p_c=None, p_s=None, angles=None, powers=None):
    """``(A_s, B_s, gamma_s_lb, M_s_lb)``."""
    r = lower_bounds(config, layout, xi, p_c, p_s, angles, powers)
    return r.A_s, r.B_s, r.gamma_s, r.metric_s


# fixed spacing ---------------------------------------------------------


def fixed_spacing_forms(
    N_B: int,
    N_S: int,
    N_I: int,
    spacing: float,
    wavelength: float,
    delta_users,
    delta_target: float,
    delta_clutter,
    kappa,
    sigma_bi2: float,
    sigma_iu2,
    sigma_T2: float,
    sigma_c2,
    p_c,
    p_s: float,
    noise_power: float,
) -> BoundReport:
    """Dirichlet-kernel bounds for a uniform line of elements with xi = 1.

    Single-path links; ``delta_*`` are differences of the theta cosines
    with respect to the transmitter-IRS direction and ``kappa`` holds the
    receiver products ``a_S^T(target) a_S^*(c)``.
    """
    D = lambda d: dirichlet_kernel(d, spacing, N_I, wavelength)
    Dk2 = np.asarray(D(np.asarray(delta_users, float)), float) ** 2
    DT2 = float(D(delta_target)) ** 2
    Dc2 = np.asarray(D(np.asarray(delta_clutter, float)), float) ** 2
    s_iu = np.asarray(sigma_iu2, float)
    p_c = np.asarray(p_c, float)
    K = len(p_c)
    base = N_B * sigma_bi2 * s_iu * Dk2
    # a vanishing kernel means that user's MRT beam carries no power
    pa = np.where(Dk2 > 0, p_c, 0.0)
    A_c = 4 * pa * base + 2 * base * (pa.sum() - pa)
    B_c = pa * base
    C_c = 2 * p_s * base * (DT2 > 0)
    wc = np.abs(np.asarray(kappa)) ** 2 / N_S * np.asarray(sigma_c2, float)
    leak = N_S * sigma_T2 * DT2 + np.sum(wc * Dc2)
    A_s = 2 * sigma_bi2 * N_B * pa.sum() * leak
    A_s += 2 * p_s * sigma_bi2 * N_B * np.sum(wc * Dc2) * (DT2 > 0)
    A_s += 4 * p_s * N_S * sigma_T2 * sigma_bi2 * N_B * DT2
    B_s = N_S * p_s * sigma_T2 * sigma_bi2 * N_B * DT2
    Ee = N_B * sigma_bi2 * s_iu * Dk2
    eta_c = np.sqrt(np.where(Ee > 0, p_c / np.where(Ee > 0, Ee, 1), 0.0))
    Ed = sigma_T2 * N_B * sigma_bi2 * DT2
    eta_s = float(np.sqrt(p_s / Ed)) if Ed > 0 else 0.0
    m = dict(A_c=A_c, B_c=B_c, C_c=C_c, A_s=float(A_s), B_s=float(B_s), eta_c=eta_c, eta_s=eta_s, max_imag=0.0)
    return _report(m, noise_power)


def uniform_line(N_I: int, spacing: float) -> np.ndarray:
    return np.stack([np.arange(N_I) * spacing, np.zeros(N_I)], axis=-1)
