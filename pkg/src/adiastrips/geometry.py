"""Levi-Civita geometry of T*L over a flat-torus chart.

L is the torus R^d / Z^d (d = 1 or 2) carrying a periodic Riemannian metric g.
Tangent vectors of T*L are written in the connection splitting
``T(T*L) = pr*TL (+) pr*T*L`` as pairs ``(h, v)``: ``h`` a tangent d-vector,
``v`` a covector.  Covectors are always stored by their components; the musical
isomorphism ``g_*`` and its inverse are applied explicitly.

Array conventions used throughout the package:

* points ``q`` have shape ``(..., d)``;
* ``g(q)`` has shape ``(..., d, d)``;
* ``dg(q)[..., m, i, j]`` is the partial derivative of ``g_ij`` in direction m;
* ``christoffel(chart, q)[..., a, b, c]`` is the symbol with upper index a.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi

ArrayFn = Callable[[np.ndarray], np.ndarray]


class DegenerateMetricError(ValueError):
    """Raised when the metric fails to be positive definite."""


@dataclass(frozen=True)
class MetricChart:
    """A periodic metric on R^d / Z^d together with its derivatives.

    ``dg`` and ``d2g`` may be omitted, in which case they are produced by
    spectral differentiation of ``g`` sampled on a periodic grid.
    """

    dim: int
    g: ArrayFn
    dg: Optional[ArrayFn] = None
    d2g: Optional[ArrayFn] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    period: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"chart dimension must be 1 or 2, got {self.dim}")
        if self.dg is None or self.d2g is None:
            dg, d2g = spectral_metric_derivatives(self.g, self.dim)
            if self.dg is None:
                object.__setattr__(self, "dg", dg)
            if self.d2g is None:
                object.__setattr__(self, "d2g", d2g)

    def metric(self, q) -> np.ndarray:
        return self.g(_as_points(q, self.dim))

    def inverse_metric(self, q) -> np.ndarray:
        gq = self.metric(q)
        _check_positive(gq)
        return np.linalg.inv(gq)

    def flat(self, q, X) -> np.ndarray:
        """``g_*``: tangent vector -> covector."""
        return np.einsum("...ij,...j->...i", self.metric(q), X)

    def sharp(self, q, mu) -> np.ndarray:
        """``g_*^{-1}``: covector -> tangent vector."""
        gq = self.metric(q)
        mu = np.broadcast_to(mu, gq.shape[:-1])
        return np.linalg.solve(gq, mu[..., None])[..., 0]

    def covector_norm2(self, q, mu) -> np.ndarray:
        return np.einsum("...i,...ij,...j->...", mu, self.inverse_metric(q), mu)

    def vector_norm2(self, q, X) -> np.ndarray:
        return np.einsum("...i,...ij,...j->...", X, self.metric(q), X)


@dataclass(frozen=True)
class CotangentVec:
    """A tangent vector of T*L in splitting components."""

    h: np.ndarray
    v: np.ndarray

    def __add__(self, other: "CotangentVec") -> "CotangentVec":
        return CotangentVec(self.h + other.h, self.v + other.v)

    def __neg__(self) -> "CotangentVec":
        return CotangentVec(-self.h, -self.v)

    def __mul__(self, c) -> "CotangentVec":
        return CotangentVec(self.h * c, self.v * c)

    __rmul__ = __mul__

    def stacked(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.h), np.asarray(self.v)], axis=-1)


@dataclass
class CriticalPoint:
    location: np.ndarray
    index: int
    value: float
    tolerance: float


@dataclass
class MorseData:
    """A periodic function on the torus with its differential and Hessian.

    ``hess`` is the coordinate Hessian ``d(df)``; at critical points it agrees
    with the covariant one.
    """

    dim: int
    f: ArrayFn
    df: ArrayFn
    hess: ArrayFn
    name: str = "custom"
    params: dict = field(default_factory=dict)
    critical_points: list = field(default_factory=list)

    def scaled(self, c: float) -> "MorseData":
        return MorseData(
            self.dim,
            lambda q: c * self.f(q),
            lambda q: c * self.df(q),
            lambda q: c * self.hess(q),
            name=f"{c}*{self.name}",
            params=dict(self.params),
        )


# ---------------------------------------------------------------------------
# connection


def _as_points(q, dim: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if dim == 1 and (q.ndim == 0 or q.shape[-1] != 1):
        q = q[..., None]
    return q


def _check_positive(gq: np.ndarray) -> None:
    lam = np.linalg.eigvalsh(gq)
    if not np.all(np.isfinite(lam)) or np.any(lam[..., 0] <= 0.0):
        raise DegenerateMetricError("metric is not positive definite at a sampled point")


def christoffel(chart: MetricChart, q) -> np.ndarray:
    """Christoffel symbols ``Gamma^a_{bc}`` of the Levi-Civita connection."""
    q = _as_points(q, chart.dim)
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite point")
    ginv = chart.inverse_metric(q)
    dg = chart.dg(q)
    # lower[..., l, b, c] = d_b g_cl + d_c g_bl - d_l g_bc
    lower = (
        np.einsum("...bcl->...lbc", dg)
        + np.einsum("...cbl->...lbc", dg)
        - dg
    )
    return 0.5 * np.einsum("...al,...lbc->...abc", ginv, lower)


def christoffel_derivative(chart: MetricChart, q) -> np.ndarray:
    """Partial derivatives ``d_m Gamma^a_{bc}``, indexed ``[..., m, a, b, c]``."""
    q = _as_points(q, chart.dim)
    ginv = chart.inverse_metric(q)
    dg = chart.dg(q)
    d2g = chart.d2g(q)  # [..., m, n, i, j] = d_m d_n g_ij
    lower = (
        np.einsum("...bcl->...lbc", dg)
        + np.einsum("...cbl->...lbc", dg)
        - dg
    )
    dlower = (
        np.einsum("...mbcl->...mlbc", d2g)
        + np.einsum("...mcbl->...mlbc", d2g)
        - d2g
    )
    dginv = -np.einsum("...ax,...mxy,...yl->...mal", ginv, dg, ginv)
    return 0.5 * (
        np.einsum("...mal,...lbc->...mabc", dginv, lower)
        + np.einsum("...al,...mlbc->...mabc", ginv, dlower)
    )


def covariant_derivative(chart: MetricChart, Q, P, dQ, dP) -> np.ndarray:
    """Pullback covariant derivative of a covector field along a map.

    ``dQ`` and ``dP`` are plain partial derivatives of Q and of the covector
    components P in the same direction.
    """
    gam = christoffel(chart, Q)
    return dP - np.einsum("...ajk,...j,...a->...k", gam, dQ, P)


def covariant_t(chart: MetricChart, Q, P, step: float) -> np.ndarray:
    """Discrete ``nabla_t P`` along a sampled path ``Q`` (shape ``(n, d)``)."""
    Q = _as_points(Q, chart.dim)
    P = _as_points(P, chart.dim)
    if Q.shape[0] < 3:
        raise ValueError("covariant_t needs at least 3 samples")
    dQ = np.gradient(Q, step, axis=0, edge_order=2)
    dP = np.gradient(P, step, axis=0, edge_order=2)
    return covariant_derivative(chart, Q, P, dQ, dP)


# ---------------------------------------------------------------------------
# almost Kahler structure on T*L


def interchange_defect(chart: MetricChart, Q: np.ndarray, hs: float, ht: float) -> float:
    """Discrete L2 norm of ``nabla_s(g d_tQ) - nabla_t(g d_sQ)`` for ``Q`` of shape ``(Ns+1, Nt+1, d)``.

    The continuum quantity vanishes identically; the discrete one is O(h^2).
    """
    dsQ = np.gradient(Q, hs, axis=0, edge_order=2)
    dtQ = np.gradient(Q, ht, axis=1, edge_order=2)
    X = chart.flat(Q, dtQ)
    Y = chart.flat(Q, dsQ)
    a = covariant_derivative(chart, Q, X, dsQ, np.gradient(X, hs, axis=0, edge_order=2))
    b = covariant_derivative(chart, Q, Y, dtQ, np.gradient(Y, ht, axis=1, edge_order=2))
    d = a - b
    return float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))


def j0_apply(chart: MetricChart, q, X: CotangentVec) -> CotangentVec:
    """The Levi-Civita complex structure: ``J0 (h, v) = (-g^{-1} v, g h)``."""
    return CotangentVec(-chart.sharp(q, X.v), chart.flat(q, X.h))


def omega(X: CotangentVec, Y: CotangentVec) -> np.ndarray:
    """Canonical symplectic form in splitting components."""
    return np.einsum("...i,...i->...", X.h, Y.v) - np.einsum("...i,...i->...", Y.h, X.v)


def metric_pair(chart: MetricChart, q, X: CotangentVec, Y: CotangentVec) -> np.ndarray:
    """Sasaki-type metric: ``g`` on horizontals, ``g^{-1}`` on verticals."""
    gq = chart.metric(q)
    ginv = np.linalg.inv(gq)
    return np.einsum("...i,...ij,...j->...", X.h, gq, Y.h) + np.einsum(
        "...i,...ij,...j->...", X.v, ginv, Y.v
    )


def hamiltonian_field(chart: MetricChart, f: MorseData, q) -> CotangentVec:
    """Hamiltonian vector field of ``f o pr``, normalised by ``X_f _| omega = -pr* df``.

    Its flow is the fibrewise translation ``(q, p) -> (q, p + t df(q))``.
    """
    q = _as_points(q, chart.dim)
    return CotangentVec(np.zeros_like(q), f.df(q))


def gradient(chart: MetricChart, f: MorseData, q) -> np.ndarray:
    return chart.sharp(q, f.df(_as_points(q, chart.dim)))


def flow_hamiltonian(f: MorseData, q, p, t):
    q = np.asarray(q, dtype=float)
    return q, p + np.asarray(t)[..., None] * f.df(q)


# ---------------------------------------------------------------------------
# spectral fallback for metric derivatives


def spectral_metric_derivatives(g: ArrayFn, dim: int, n: int = 64):
    """First and second derivatives of a periodic metric via its Fourier series.

    ``g`` is sampled on an ``n**dim`` grid; the returned callables evaluate the
    derivatives of the trigonometric interpolant at arbitrary points.
    """
    grid1 = np.arange(n) / n
    if dim == 1:
        pts = grid1[:, None]
    else:
        a, b = np.meshgrid(grid1, grid1, indexing="ij")
        pts = np.stack([a, b], axis=-1)
    samples = np.asarray(g(pts), dtype=float)  # (n[, n], d, d)
    axes = tuple(range(dim))
    coeffs = np.fft.fftn(samples, axes=axes) / n**dim
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        # the Nyquist mode has no well defined derivative for real data
        k[n // 2] = 0.0
    ik = 1j * TWO_PI * k

    def _eval(q, orders):
        q = _as_points(q, dim)
        shape = q.shape[:-1]
        qf = q.reshape(-1, dim)
        E = [np.exp(1j * TWO_PI * np.outer(qf[:, ax], k)) * ik[None, :] ** orders[ax] for ax in range(dim)]
        if dim == 1:
            val = np.einsum("nk,kij->nij", E[0], coeffs)
        else:
            val = np.einsum("nk,klij,nl->nij", E[0], coeffs, E[1], optimize=True)
        return val.real.reshape(shape + (1, 1) if dim == 1 else shape + (2, 2))

    def dg(q):
        parts = []
        for m in range(dim):
            orders = [0] * dim
            orders[m] = 1
            parts.append(_eval(q, orders))
        return np.stack(parts, axis=-3)

    def d2g(q):
        rows = []
        for m in range(dim):
            cols = []
            for m2 in range(dim):
                orders = [0] * dim
                orders[m] += 1
                orders[m2] += 1
                cols.append(_eval(q, orders))
            rows.append(np.stack(cols, axis=-3))
        return np.stack(rows, axis=-4)

    return dg, d2g


# ---------------------------------------------------------------------------
# built-in catalog


def flat_chart(dim: int = 1) -> MetricChart:
    def g(q):
        q = _as_points(q, dim)
        return np.broadcast_to(np.eye(dim), q.shape[:-1] + (dim, dim)).copy()

    def dg(q):
        q = _as_points(q, dim)
        return np.zeros(q.shape[:-1] + (dim,) * 3)

    def d2g(q):
        q = _as_points(q, dim)
        return np.zeros(q.shape[:-1] + (dim,) * 4)

    return MetricChart(dim, g, dg, d2g, name="flat", params={"dim": dim})


def conformal_chart(amplitude: float = 0.2) -> MetricChart:
    """``g = exp(2 phi)`` on the circle with ``phi = amplitude * sin(2 pi q)``."""
    a = float(amplitude)

    def parts(q):
        x = _as_points(q, 1)[..., 0]
        phi = a * np.sin(TWO_PI * x)
        d1 = a * TWO_PI * np.cos(TWO_PI * x)
        d2 = -a * TWO_PI**2 * np.sin(TWO_PI * x)
        return np.exp(2.0 * phi), d1, d2

    def g(q):
        e, _, _ = parts(q)
        return e[..., None, None]

    def dg(q):
        e, d1, _ = parts(q)
        return (2.0 * d1 * e)[..., None, None, None]

    def d2g(q):
        e, d1, d2 = parts(q)
        return ((2.0 * d2 + 4.0 * d1**2) * e)[..., None, None, None, None]

    return MetricChart(1, g, dg, d2g, name="conformal-1d", params={"amplitude": a})


def diag_perturbed_chart(amplitude: float = 0.1) -> MetricChart:
    """``g = I + amplitude * diag(sin 2 pi q1, cos 2 pi q2)`` on the 2-torus."""
    a = float(amplitude)
    if abs(a) >= 1.0:
        raise DegenerateMetricError("diag-perturbed-2d needs |amplitude| < 1")

    def g(q):
        q = _as_points(q, 2)
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0 + a * np.sin(TWO_PI * q[..., 0])
        out[..., 1, 1] = 1.0 + a * np.cos(TWO_PI * q[..., 1])
        return out

    def dg(q):
        q = _as_points(q, 2)
        out = np.zeros(q.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = a * TWO_PI * np.cos(TWO_PI * q[..., 0])
        out[..., 1, 1, 1] = -a * TWO_PI * np.sin(TWO_PI * q[..., 1])
        return out

    def d2g(q):
        q = _as_points(q, 2)
        out = np.zeros(q.shape[:-1] + (2, 2, 2, 2))
        out[..., 0, 0, 0, 0] = -a * TWO_PI**2 * np.sin(TWO_PI * q[..., 0])
        out[..., 1, 1, 1, 1] = -a * TWO_PI**2 * np.cos(TWO_PI * q[..., 1])
        return out

    return MetricChart(2, g, dg, d2g, name="diag-perturbed-2d", params={"amplitude": a})


def cosine_wells(
    dim: int = 1,
    amplitude: float | Sequence[float] = 0.1,
    wavenumber: int = 1,
    phase: float = 0.0,
    norm: int = 1,
) -> MorseData:
    """``f(q) = -sum_i A_i cos(2 pi k q_i + phase) / (2 pi k)^norm``.

    With the default ``norm=1`` the amplitude bounds ``|df|``.
    """
    amps = np.broadcast_to(np.asarray(amplitude, dtype=float), (dim,)).copy()
    w = TWO_PI * int(wavenumber)
    scale = amps / w**norm

    def f(q):
        q = _as_points(q, dim)
        return -np.sum(scale * np.cos(w * q + phase), axis=-1)

    def df(q):
        q = _as_points(q, dim)
        return scale * w * np.sin(w * q + phase)

    def hess(q):
        q = _as_points(q, dim)
        diag = scale * w**2 * np.cos(w * q + phase)
        out = np.zeros(q.shape + (dim,))
        for i in range(dim):
            out[..., i, i] = diag[..., i]
        return out

    params = {
        "dim": dim,
        "amplitude": amps.tolist(),
        "wavenumber": int(wavenumber),
        "phase": float(phase),
        "norm": int(norm),
    }
    return MorseData(dim, f, df, hess, name="cosine", params=params)


CHARTS = {
    "flat": flat_chart,
    "conformal-1d": conformal_chart,
    "diag-perturbed-2d": diag_perturbed_chart,
}

MORSE_FUNCTIONS = {
    "cosine": cosine_wells,
}
