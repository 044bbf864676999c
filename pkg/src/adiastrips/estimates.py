"""Exponential decay of the boundary-normalised fibre component on solved strips.

``P~ = P - eps t b(Q) - eps (1 - t) a(Q)`` vanishes on both edges.  Its
fibrewise L2 size ``gamma(s) = 1/2 int |P~|^2 dt`` satisfies a second order
differential inequality with a defect ``K eps^2``; this module measures that
defect, evaluates the resulting exponential envelope and a pointwise C^1
envelope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import MetricChart, christoffel, christoffel_derivative, covariant_derivative
from .strip_solver import AdiabaticData, StripField

C_PC = 0.25
DELTA_DEFAULT = float(np.sqrt(1.0 / (3.0 * C_PC)))
WINDOW_PAD = 0.75
GAMMA_FLOOR = 1e-20


class WindowError(ValueError):
    """Strip too short for the inequality window."""


@dataclass
class GammaProfile:
    s_grid: np.ndarray
    gamma: np.ndarray
    dgamma: np.ndarray
    ddgamma: np.ndarray
    dirichlet: np.ndarray
    delta: float
    eps: float
    R: float
    K: float
    slack: float
    stride: int
    alpha_weight: float = 1.0 / 3.0
    consts: tuple = field(default=(0.0, 0.0, 0.0))

    def window(self, pad: float = WINDOW_PAD) -> np.ndarray:
        """Boolean mask of grid nodes with ``|s| <= R + pad`` (nearest nodes)."""
        return _window_mask(self.s_grid, self.R + pad)


@dataclass
class EstimateReport:
    inequality_holds: bool
    K: float
    consts: tuple
    envelope: np.ndarray
    lhs: np.ndarray
    violations: int
    c1_kappa: float = float("nan")
    theta: float = 0.0

    def as_dict(self) -> dict:
        return {
            "inequality_holds": bool(self.inequality_holds),
            "K": float(self.K),
            "C1": float(self.consts[0]),
            "C2": float(self.consts[1]),
            "C3": float(self.consts[2]),
            "theta": float(self.theta),
            "violations": int(self.violations),
            "c1_kappa": float(self.c1_kappa),
        }


def _window_mask(s: np.ndarray, half: float) -> np.ndarray:
    h = s[1] - s[0]
    return np.abs(s) <= half + 0.5 * h * (1 + 1e-9)


def perturbed_section(chart: MetricChart, u: StripField, bc: AdiabaticData) -> np.ndarray:
    t = u.t[None, :, None]
    eps = bc.eps
    return u.P - eps * t * bc.b(u.Q) - eps * (1.0 - t) * bc.a(u.Q)


def covariant_gradients(chart: MetricChart, u: StripField, P: np.ndarray):
    """``(nabla_s P, nabla_t P)`` along the map ``Q`` of ``u``."""
    dsQ = np.gradient(u.Q, u.hs, axis=0, edge_order=2)
    dtQ = np.gradient(u.Q, u.ht, axis=1, edge_order=2)
    dsP = np.gradient(P, u.hs, axis=0, edge_order=2)
    dtP = np.gradient(P, u.ht, axis=1, edge_order=2)
    return (
        covariant_derivative(chart, u.Q, P, dsQ, dsP),
        covariant_derivative(chart, u.Q, P, dtQ, dtP),
    )


def _second_difference(y: np.ndarray, h: float, stride: int) -> np.ndarray:
    """Central second difference with spacing ``stride * h``, shrunk near the ends."""
    n = y.size
    out = np.empty(n)
    idx = np.arange(n)
    m = np.minimum(stride, np.minimum(idx, n - 1 - idx))
    inner = m > 0
    i = idx[inner]
    mi = m[inner]
    out[inner] = (y[i + mi] - 2.0 * y[i] + y[i - mi]) / (mi * h) ** 2
    # one sided second order stencils at the two end nodes
    out[0] = (2 * y[0] - 5 * y[1] + 4 * y[2] - y[3]) / h**2
    out[-1] = (2 * y[-1] - 5 * y[-2] + 4 * y[-3] - y[-4]) / h**2
    return out


def gamma_profile(
    chart: MetricChart,
    u: StripField,
    bc: AdiabaticData,
    delta: float = DELTA_DEFAULT,
    alpha_weight: float = 1.0 / 3.0,
) -> GammaProfile:
    """Sample ``gamma``, its derivatives and the Dirichlet integrand, and measure K.

    ``K = max(0, max_s [delta^2 gamma + alpha_weight * dirichlet - gamma''] / eps^2)``
    over ``|s| <= R + 0.75`` with ``R = r - 1``.
    """
    r = u.r
    if 2.0 * r < 2.5:
        raise WindowError(f"strip of length {2 * r:g} is shorter than 2.5")
    s = u.s - 0.5 * (u.s[0] + u.s[-1])
    R = r - 1.0
    Pt = perturbed_section(chart, u, bc)
    nabs, nabt = covariant_gradients(chart, u, Pt)
    norm2 = chart.covector_norm2(u.Q, Pt)
    gamma = 0.5 * np.trapezoid(norm2, dx=u.ht, axis=1)
    dens = chart.covector_norm2(u.Q, nabs) + chart.covector_norm2(u.Q, nabt)
    dirichlet = np.trapezoid(dens, dx=u.ht, axis=1)
    hs = u.hs
    stride = max(1, int(round(max(hs, r / 200.0) / hs)))
    dgamma = np.gradient(gamma, hs, edge_order=2)
    ddgamma = _second_difference(gamma, hs, stride)

    win = _window_mask(s, R + WINDOW_PAD)
    bracket = delta**2 * gamma + alpha_weight * dirichlet - ddgamma
    worst = float(np.max(bracket[win]))
    eps = bc.eps
    if eps > 0:
        K = max(0.0, worst / eps**2)
    else:
        K = 0.0 if worst <= 1e-14 else float("inf")
    slack = float(np.min((-bracket + K * eps**2)[win])) if np.isfinite(K) else float("-inf")
    return GammaProfile(s, gamma, dgamma, ddgamma, dirichlet, float(delta), float(eps), R, float(K), slack, stride, alpha_weight)


def decay_constants(profile: GammaProfile) -> tuple:
    """``(C1, C2, C3)`` read off at ``s = -R - 0.75`` and ``s = R + 0.75``."""
    d = profile.delta
    Rp = profile.R + WINDOW_PAD
    s = profile.s_grid
    il = int(np.argmin(np.abs(s + Rp)))
    ir = int(np.argmin(np.abs(s - Rp)))
    C1 = 9.0 * profile.gamma[il]
    C2 = 9.0 * abs(profile.dgamma[ir] + d * profile.gamma[ir]) / (2.0 * d)
    C3 = 9.0 / d**2 + 5.0 / 4.0
    return float(C1), float(C2), float(C3)


def _half_unit_integrals(s: np.ndarray, y: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Trapezoid integrals of ``y`` over ``[c - 0.5, c + 0.5]`` via a cumulative sum."""
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(s))])
    lo = np.interp(centers - 0.5, s, cum)
    hi = np.interp(centers + 0.5, s, cum)
    return hi - lo


def check_decay_bound(profile: GammaProfile, R: float | None = None, alpha_weight: float = 1.0) -> EstimateReport:
    """Compare ``gamma(s) + int_{s-1/2}^{s+1/2} alpha`` against the envelope on ``[-R, R]``.

    ``alpha = alpha_weight * dirichlet``.  The default weight 1 is stricter
    than the one under which the envelope follows from the measured
    inequality (``profile.alpha_weight``, i.e. 1/3).
    """
    if R is not None and abs(R - profile.R) > 1e-12:
        profile = GammaProfile(**{**profile.__dict__, "R": float(R)})
    w = alpha_weight
    C1, C2, C3 = decay_constants(profile)
    s = profile.s_grid
    Rr = profile.R
    eps = profile.eps
    d = profile.delta
    inner = _window_mask(s, Rr)
    sc = s[inner]
    envelope = C1 * np.exp(-d * (Rr + sc)) + C2 * np.exp(-d * (Rr - sc)) + C3 * profile.K * eps**2
    lhs = profile.gamma[inner] + _half_unit_integrals(s, w * profile.dirichlet, sc)
    # relative slack plus an absolute floor for round-off in |P~|^2
    tol = max(1e-9 * float(np.max(np.abs(envelope))) if envelope.size else 0.0, GAMMA_FLOOR)
    violations = int(np.sum(lhs > envelope + tol))
    return EstimateReport(
        inequality_holds=bool(profile.slack >= -1e-14),
        K=profile.K,
        consts=(C1, C2, C3),
        envelope=envelope,
        lhs=lhs,
        violations=violations,
        theta=max(C1, C2, C3 * profile.K),
    )


def lc_laplacian(chart: MetricChart, Q: np.ndarray, P: np.ndarray, steps: tuple) -> np.ndarray:
    """``nabla_s nabla_s P + nabla_t nabla_t P`` on interior nodes, second order.

    Each term is expanded as
    ``d2P - (dGamma . dQ) dQ P - Gamma d2Q P - 2 Gamma dQ dP + Gamma dQ Gamma dQ P``
    with three-point differences, so no one-sided stencil enters.  The result
    has shape ``(Ns - 1, Nt - 1, d)``.
    """
    hs, ht = steps
    Qi = Q[1:-1, 1:-1]
    Pi = P[1:-1, 1:-1]
    gam = christoffel(chart, Qi)
    dgam = christoffel_derivative(chart, Qi)
    out = np.zeros_like(Pi)
    for axis, h in ((0, hs), (1, ht)):
        fwd = [slice(1, -1), slice(1, -1)]
        bwd = [slice(1, -1), slice(1, -1)]
        fwd[axis] = slice(2, None)
        bwd[axis] = slice(None, -2)
        fwd, bwd = tuple(fwd), tuple(bwd)
        dQ = (Q[fwd] - Q[bwd]) / (2 * h)
        dP = (P[fwd] - P[bwd]) / (2 * h)
        d2Q = (Q[fwd] - 2 * Qi + Q[bwd]) / h**2
        d2P = (P[fwd] - 2 * Pi + P[bwd]) / h**2
        G = np.einsum("...ajk,...j->...ak", gam, dQ)  # (Gamma dQ)^a_k
        dG = np.einsum("...majk,...m,...j->...ak", dgam, dQ, dQ)
        out += (
            d2P
            - np.einsum("...ak,...a->...k", dG, Pi)
            - np.einsum("...ajk,...j,...a->...k", gam, d2Q, Pi)
            - 2 * np.einsum("...ak,...a->...k", G, dP)
            + np.einsum("...ak,...ba,...b->...k", G, G, Pi)
        )
    return out


def laplacian_ratio(chart: MetricChart, u: StripField, bc: AdiabaticData) -> float:
    """Smallest K' with ``||lap P~||_L2 <= K' (eps + ||P~||_W12)`` on the interior."""
    Pt = perturbed_section(chart, u, bc)
    lap = lc_laplacian(chart, u.Q, Pt, (u.hs, u.ht))
    Qi = u.Q[1:-1, 1:-1]
    area = u.hs * u.ht
    lap_l2 = np.sqrt(area * np.sum(chart.covector_norm2(Qi, lap)))
    nabs, nabt = covariant_gradients(chart, u, Pt)
    w12 = np.sqrt(
        area
        * np.sum(
            chart.covector_norm2(u.Q, Pt) + chart.covector_norm2(u.Q, nabs) + chart.covector_norm2(u.Q, nabt)
        )
    )
    denom = bc.eps + w12
    return float(lap_l2 / denom) if denom > 0 else 0.0


def c1_envelope(chart: MetricChart, u: StripField, bc: AdiabaticData, R: float | None = None, d_rate: float | None = None):
    """Smallest kappa with ``m(s) <= kappa (e^{-d(R+s)} + e^{-d(R-s)} + eps)`` on ``[-R, R]``.

    ``m(s) = max_t (|P~| + |nabla_s P~| + |nabla_t P~|)``.  Returns
    ``(kappa, s, m)`` on the window.
    """
    if R is None:
        R = u.r - 1.0
    if d_rate is None:
        d_rate = 0.5 * DELTA_DEFAULT
    s = u.s - 0.5 * (u.s[0] + u.s[-1])
    Pt = perturbed_section(chart, u, bc)
    nabs, nabt = covariant_gradients(chart, u, Pt)
    pointwise = (
        np.sqrt(chart.covector_norm2(u.Q, Pt))
        + np.sqrt(chart.covector_norm2(u.Q, nabs))
        + np.sqrt(chart.covector_norm2(u.Q, nabt))
    )
    m = np.max(pointwise, axis=1)
    win = _window_mask(s, R)
    sw = s[win]
    weight = np.exp(-d_rate * (R + sw)) + np.exp(-d_rate * (R - sw)) + bc.eps
    kappa = float(np.max(m[win] / weight)) if sw.size else 0.0
    return kappa, sw, m[win]


def poincare_ratio(chart: MetricChart, Q: np.ndarray, P: np.ndarray, ht: float) -> tuple:
    """``(int |P|^2 dt, int |nabla_t P|^2 dt)`` for a section along a path."""
    dQ = np.gradient(Q, ht, axis=0, edge_order=2)
    dP = np.gradient(P, ht, axis=0, edge_order=2)
    nab = covariant_derivative(chart, Q, P, dQ, dP)
    lhs = np.trapezoid(chart.covector_norm2(Q, P), dx=ht, axis=0)
    rhs = np.trapezoid(chart.covector_norm2(Q, nab), dx=ht, axis=0)
    return float(lhs), float(rhs)
