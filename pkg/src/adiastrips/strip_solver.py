"""Finite-difference Cauchy-Riemann boundary value problems on strips in T*L.

A strip ``u = (Q, P)`` lives on ``[s0, s1] x [0, 1]``.  In horizontal/vertical
components the J0-holomorphic equation reads

    E1 = g dQ/ds - nabla_t P = 0,
    E2 = g dQ/dt + nabla_s P = 0,

with the graph conditions ``P = eps a(Q)`` on ``t = 0`` and
``P = eps (a + df)(Q)`` on ``t = 1``.

Two formulations are supported:

``holomorphic``
    the system above for ``u`` itself;
``floer``
    the same system for the translated map ``P~ = P - eps t df(Q)``, which picks
    up the zeroth order term ``-eps df`` in E1 and has the graph of ``eps a`` on
    both edges.  Fields are always stored in original coordinates and
    translated on the way in and out.

Ends of the strip are closed with mixed data: Q is prescribed on ``s = s0`` and
the graph defect ``P - eps(a + c t df)(Q)`` on ``s = s1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .geometry import MetricChart, MorseData, _as_points, christoffel, christoffel_derivative

FORMULATIONS = ("holomorphic", "floer")
END_CONDITIONS = ("dirichlet", "floer-seeded")


class DivergedError(RuntimeError):
    """Newton iteration failed to reach the residual tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class ConstantForm:
    """A one-form with constant coefficients on the torus (closed)."""

    coeffs: tuple

    @property
    def dim(self) -> int:
        return len(self.coeffs)

    def __call__(self, q) -> np.ndarray:
        q = _as_points(q, self.dim)
        return np.broadcast_to(np.asarray(self.coeffs, dtype=float), q.shape).copy()

    def jacobian(self, q) -> np.ndarray:
        """``[..., m, k] = d_m a_k``."""
        q = _as_points(q, self.dim)
        return np.zeros(q.shape + (self.dim,))

    def is_zero(self) -> bool:
        return not any(self.coeffs)


def check_closed(form, dim: int, samples: int = 64, seed: int = 0, tol: float = 1e-10) -> bool:
    """Sampled check of ``d a = 0`` (automatic when ``dim == 1``)."""
    if dim == 1:
        return True
    q = np.random.default_rng(seed).random((samples, 2))
    J = form.jacobian(q)
    return bool(np.max(np.abs(J[:, 0, 1] - J[:, 1, 0])) <= tol)


@dataclass
class AdiabaticData:
    f: MorseData
    eps: float
    a_form: Optional[ConstantForm] = None

    def __post_init__(self):
        if self.eps < 0 or not np.isfinite(self.eps):
            raise ValueError("eps must be finite and nonnegative")
        if self.a_form is None:
            self.a_form = ConstantForm((0.0,) * self.f.dim)
        if self.a_form.dim != self.f.dim:
            raise ValueError("one-form and Morse function live on different tori")

    @property
    def dim(self) -> int:
        return self.f.dim

    def a(self, q) -> np.ndarray:
        return self.a_form(q)

    def b(self, q) -> np.ndarray:
        return self.a_form(q) + self.f.df(q)


@dataclass
class StripField:
    """Samples of ``(Q, P)`` on a tensor grid; arrays have shape ``(Ns+1, Nt+1, d)``."""

    s: np.ndarray
    t: np.ndarray
    Q: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        shape = (self.s.size, self.t.size)
        if self.Q.shape[:2] != shape or self.P.shape != self.Q.shape:
            raise ValueError(f"grid/field shape mismatch: {shape} vs {self.Q.shape}, {self.P.shape}")

    @classmethod
    def on_grid(cls, s0, s1, Ns, Nt, d, t1=1.0):
        s = np.linspace(s0, s1, Ns + 1)
        t = np.linspace(0.0, t1, Nt + 1)
        z = np.zeros((Ns + 1, Nt + 1, d))
        return cls(s, t, z, z.copy())

    @property
    def dim(self) -> int:
        return self.Q.shape[-1]

    @property
    def Ns(self) -> int:
        return self.s.size - 1

    @property
    def Nt(self) -> int:
        return self.t.size - 1

    @property
    def hs(self) -> float:
        return (self.s[-1] - self.s[0]) / self.Ns

    @property
    def ht(self) -> float:
        return (self.t[-1] - self.t[0]) / self.Nt

    @property
    def r(self) -> float:
        return 0.5 * (self.s[-1] - self.s[0])

    def copy(self) -> "StripField":
        return StripField(self.s.copy(), self.t.copy(), self.Q.copy(), self.P.copy())

    def derivatives(self):
        """``(dsQ, dtQ, dsP, dtP)`` by second order differences."""
        g = np.gradient
        return (
            g(self.Q, self.hs, axis=0, edge_order=2),
            g(self.Q, self.ht, axis=1, edge_order=2),
            g(self.P, self.hs, axis=0, edge_order=2),
            g(self.P, self.ht, axis=1, edge_order=2),
        )


@dataclass
class SolveReport:
    residual_norm: float
    newton_iters: int
    energy: float
    sup_dQ: float
    sup_dP: float
    converged: bool = True
    singular: bool = False
    formulation: str = "holomorphic"
    end_condition: str = "floer-seeded"
    history: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "residual_norm": float(self.residual_norm),
            "newton_iters": int(self.newton_iters),
            "energy": float(self.energy),
            "sup_dQ": float(self.sup_dQ),
            "sup_dP": float(self.sup_dP),
            "converged": bool(self.converged),
            "singular": bool(self.singular),
            "formulation": self.formulation,
            "end_condition": self.end_condition,
            "history": [float(h) for h in self.history],
        }


# ---------------------------------------------------------------------------
# difference operators


def gradient_matrix(n: int, h: float) -> sp.csr_matrix:
    """Sparse matrix of ``np.gradient(., h, edge_order=2)`` on ``n`` nodes."""
    if n < 3:
        raise ValueError("need at least 3 nodes per direction")
    c = 1.0 / (2.0 * h)
    rows = [0, 0, 0]
    cols = [0, 1, 2]
    vals = [-3 * c, 4 * c, -c]
    i = np.arange(1, n - 1)
    rows += list(i) + list(i)
    cols += list(i - 1) + list(i + 1)
    vals += [-c] * (n - 2) + [c] * (n - 2)
    rows += [n - 1] * 3
    cols += [n - 3, n - 2, n - 1]
    vals += [c, -4 * c, 3 * c]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _operators(u: StripField):
    Ds = sp.kron(gradient_matrix(u.Ns + 1, u.hs), sp.identity(u.Nt + 1), format="csr")
    Dt = sp.kron(sp.identity(u.Ns + 1), gradient_matrix(u.Nt + 1, u.ht), format="csr")
    return Ds, Dt


# ---------------------------------------------------------------------------
# residual


def _translate(u: StripField, bc: AdiabaticData, sign: float) -> StripField:
    tt = u.t[None, :, None]
    return StripField(u.s, u.t, u.Q, u.P + sign * bc.eps * tt * bc.f.df(u.Q))


def to_floer_frame(u: StripField, bc: AdiabaticData) -> StripField:
    return _translate(u, bc, -1.0)


def from_floer_frame(v: StripField, bc: AdiabaticData) -> StripField:
    return _translate(v, bc, 1.0)


def _pieces(chart: MetricChart, v: StripField, bc: AdiabaticData, c_t: float):
    """Bulk equations and graph defect in native variables of a formulation."""
    dsQ, dtQ, dsP, dtP = v.derivatives()
    Q, P = v.Q, v.P
    G = chart.metric(Q)
    gam = christoffel(chart, Q)
    eps = bc.eps
    df = bc.f.df(Q)
    gP_t = np.einsum("...ajk,...j,...a->...k", gam, dtQ, P)
    gP_s = np.einsum("...ajk,...j,...a->...k", gam, dsQ, P)
    E1 = np.einsum("...kj,...j->...k", G, dsQ) - (dtP - gP_t) - (1.0 - c_t) * eps * df
    E2 = np.einsum("...kj,...j->...k", G, dtQ) + (dsP - gP_s)
    PT = P - eps * (bc.a(Q) + c_t * v.t[None, :, None] * df)
    return E1, E2, PT


def _c_t(formulation: str) -> float:
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}")
    return 1.0 if formulation == "holomorphic" else 0.0


def cr_residual(chart: MetricChart, u: StripField, bc: AdiabaticData, formulation: str = "holomorphic"):
    """Pointwise residual, shape ``(Ns+1, Nt+1, 2d)``.

    Interior nodes carry ``(E1, E2)``.  On the edges ``t = 0, 1`` the first
    block is replaced by the graph defect.  ``u`` is given in original
    coordinates for either formulation.
    """
    c_t = _c_t(formulation)
    v = u if c_t == 1.0 else to_floer_frame(u, bc)
    E1, E2, PT = _pieces(chart, v, bc, c_t)
    first = E1.copy()
    first[:, 0] = PT[:, 0]
    first[:, -1] = PT[:, -1]
    return np.concatenate([first, E2], axis=-1)


def residual_norm(F: np.ndarray, hs: float, ht: float) -> float:
    return float(np.sqrt(hs * ht * np.sum(F * F)))


class _System:
    """Stacked residual and analytic Jacobian with mixed end conditions."""

    def __init__(self, chart, bc, template: StripField, c_t, Q_arc, PT_arc):
        self.chart = chart
        self.bc = bc
        self.tpl = template
        self.c_t = c_t
        self.d = template.dim
        self.shape = template.Q.shape
        self.N = (template.Ns + 1) * (template.Nt + 1)
        self.Q_arc = Q_arc
        self.PT_arc = PT_arc
        self.Ds, self.Dt = _operators(template)
        Ns, Nt = template.Ns, template.Nt
        kind1 = np.zeros((Ns + 1, Nt + 1), dtype=int)  # 0:E1 1:PT 2:QF
        kind2 = np.zeros((Ns + 1, Nt + 1), dtype=int)  # 0:E2 1:QF 2:PF 3:E1
        kind1[:, [0, Nt]] = 1
        kind1[0, 1:Nt] = 2
        kind2[0, [0, Nt]] = 1
        kind2[Ns, 1:Nt] = 2
        kind2[Ns, [0, Nt]] = 3
        self.kind1 = kind1.ravel()
        self.kind2 = kind2.ravel()
        self.tt = np.broadcast_to(template.t[None, :], (Ns + 1, Nt + 1)).ravel()

    def pack(self, v: StripField) -> np.ndarray:
        d, N = self.d, self.N
        return np.concatenate([v.Q.reshape(N, d).T.ravel(), v.P.reshape(N, d).T.ravel()])

    def unpack(self, x: np.ndarray) -> StripField:
        d, N = self.d, self.N
        Q = x[: d * N].reshape(d, N).T.reshape(self.shape)
        P = x[d * N:].reshape(d, N).T.reshape(self.shape)
        return StripField(self.tpl.s, self.tpl.t, Q, P)

    def residual(self, x: np.ndarray) -> np.ndarray:
        v = self.unpack(x)
        E1, E2, PT = (a.reshape(self.N, self.d) for a in _pieces(self.chart, v, self.bc, self.c_t))
        QF = (v.Q - self.Q_arc[None, :, :]).reshape(self.N, self.d)
        PF = (PT.reshape(self.shape) - self.PT_arc[None, :, :]).reshape(self.N, self.d)
        k1 = self.kind1[:, None]
        k2 = self.kind2[:, None]
        F1 = np.where(k1 == 0, E1, np.where(k1 == 1, PT, QF))
        F2 = np.where(k2 == 0, E2, np.where(k2 == 1, QF, np.where(k2 == 2, PF, E1)))
        return np.concatenate([F1.T.ravel(), F2.T.ravel()])

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        v = self.unpack(x)
        d, N = self.d, self.N
        Q = v.Q.reshape(N, d)
        P = v.P.reshape(N, d)
        dsQ, dtQ, _, _ = (a.reshape(N, d) for a in v.derivatives())
        chart, bc, eps, cf = self.chart, self.bc, self.bc.eps, 1.0 - self.c_t
        G = chart.metric(Q)
        dG = chart.dg(Q)
        gam = christoffel(chart, Q)
        dgam = christoffel_derivative(chart, Q)
        H = bc.f.hess(Q)
        dA = bc.a_form.jacobian(Q)
        Ds, Dt = self.Ds, self.Dt
        D = sp.diags
        I = sp.identity(N, format="csr")

        GP = np.einsum("nakm,na->nmk", gam, P)  # sum_a Gamma^a_{mk} P_a
        e1q = (
            np.einsum("nmkj,nj->nkm", dG, dsQ)
            + np.einsum("nmajk,nj,na->nkm", dgam, dtQ, P)
            - cf * eps * H
        )
        e2q = np.einsum("nmkj,nj->nkm", dG, dtQ) - np.einsum("nmajk,nj,na->nkm", dgam, dsQ, P)
        e1p = np.einsum("nljk,nj->nkl", gam, dtQ)
        e2p = -np.einsum("nljk,nj->nkl", gam, dsQ)
        ptq = -eps * (np.swapaxes(dA, 1, 2) + self.c_t * self.tt[:, None, None] * H)

        JE1 = [[None] * (2 * d) for _ in range(d)]
        JE2 = [[None] * (2 * d) for _ in range(d)]
        JPT = [[None] * (2 * d) for _ in range(d)]
        JQF = [[None] * (2 * d) for _ in range(d)]
        for k in range(d):
            for m in range(d):
                JE1[k][m] = D(e1q[:, k, m]) + D(G[:, k, m]) @ Ds + D(GP[:, m, k]) @ Dt
                JE2[k][m] = D(e2q[:, k, m]) + D(G[:, k, m]) @ Dt - D(GP[:, m, k]) @ Ds
                JPT[k][m] = D(ptq[:, k, m])
                JQF[k][m] = I if k == m else None
            for l in range(d):
                JE1[k][d + l] = D(e1p[:, k, l]) - (Dt if k == l else 0 * I)
                JE2[k][d + l] = D(e2p[:, k, l]) + (Ds if k == l else 0 * I)
                JPT[k][d + l] = I if k == l else None
                JQF[k][d + l] = None
        # keep every block row populated so bmat can infer shapes
        for blocks in (JPT, JQF):
            for k in range(d):
                for c in range(2 * d):
                    if blocks[k][c] is None:
                        blocks[k][c] = sp.csr_matrix((N, N))
        JE1, JE2, JPT, JQF = (sp.bmat(b, format="csr") for b in (JE1, JE2, JPT, JQF))

        def sel(mask):
            return D(np.tile(mask.astype(float), d))

        k1, k2 = self.kind1, self.kind2
        J1 = sel(k1 == 0) @ JE1 + sel(k1 == 1) @ JPT + sel(k1 == 2) @ JQF
        J2 = sel(k2 == 0) @ JE2 + sel(k2 == 1) @ JQF + sel(k2 == 2) @ JPT + sel(k2 == 3) @ JE1
        return sp.vstack([J1, J2], format="csc")


# ---------------------------------------------------------------------------
# Floer's exact solution


def _rk4_path(chart: MetricChart, f: MorseData, q0, s_grid, speed: float, substeps: int = 4):
    q = np.array(_as_points(q0, chart.dim), dtype=float).reshape(chart.dim)
    out = np.empty((s_grid.size, chart.dim))
    out[0] = q

    def rhs(x):
        return speed * chart.sharp(x, f.df(x))

    for i in range(1, s_grid.size):
        h = (s_grid[i] - s_grid[i - 1]) / substeps
        for _ in range(substeps):
            k1 = rhs(q)
            k2 = rhs(q + 0.5 * h * k1)
            k3 = rhs(q + 0.5 * h * k2)
            k4 = rhs(q + h * k3)
            q = q + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = q
    return out


def floer_oracle(chart: MetricChart, f: MorseData, q0, s_range, grid, eps: float = 1.0, a_form=None) -> StripField:
    """Floer's t-independent solution ``(Q(s), eps (a + t df)(Q(s)))``.

    ``Q`` integrates ``Q' = eps g^{-1} df(Q)`` from ``Q(s_range[0]) = q0`` by RK4
    on the s-grid.  ``grid`` is ``(Ns, Nt)``.  The field is exact for the
    floer formulation whenever ``a`` is parallel (e.g. zero).
    """
    Ns, Nt = grid
    u = StripField.on_grid(s_range[0], s_range[1], Ns, Nt, chart.dim)
    path = _rk4_path(chart, f, q0, u.s, eps)
    Q = np.broadcast_to(path[:, None, :], u.Q.shape).copy()
    a = np.zeros_like(Q) if a_form is None else a_form(Q)
    P = eps * (a + u.t[None, :, None] * f.df(Q))
    return StripField(u.s, u.t, Q, P)


# ---------------------------------------------------------------------------
# energies


def _trapezoid_2d(F, hs, ht):
    return float(np.trapezoid(np.trapezoid(F, dx=ht, axis=1), dx=hs))


def omega_energy(chart: MetricChart, u: StripField) -> float:
    """``integral of u^* omega`` with ``omega = dq ^ dp``."""
    dsQ, dtQ, dsP, dtP = u.derivatives()
    dens = np.sum(dsQ * dtP - dtQ * dsP, axis=-1)
    return _trapezoid_2d(dens, u.hs, u.ht)


def energy_density(chart: MetricChart, u: StripField) -> np.ndarray:
    """``|d_s u|^2`` in the metric on T*L."""
    dsQ, _, dsP, _ = u.derivatives()
    nab = dsP - np.einsum("...ajk,...j,...a->...k", christoffel(chart, u.Q), dsQ, u.P)
    return chart.vector_norm2(u.Q, dsQ) + chart.covector_norm2(u.Q, nab)


@dataclass
class StokesEnergy:
    total: float
    top: float
    sides: float
    bottom: float


def stokes_energy(chart: MetricChart, u: StripField, bc: AdiabaticData) -> StokesEnergy:
    """Boundary integral of the primitive ``-p dq + eps a(q) dq``.

    On the top edge the graph condition turns the primitive into ``-eps df``;
    that term is evaluated exactly as an f-difference, with the quadrature of
    the residual graph defect added.  The bottom edge carries only the defect.
    """
    eps = bc.eps
    dsQ, dtQ, _, _ = u.derivatives()
    lam = -u.P + eps * bc.a(u.Q)

    def edge(vals, dq, h):
        return float(np.trapezoid(np.sum(vals * dq, axis=-1), dx=h))

    # counterclockwise: bottom left->right, right side up, top right->left, left side down
    bottom = edge(lam[:, 0], dsQ[:, 0], u.hs)
    defect_top = -u.P[:, -1] + eps * bc.b(u.Q[:, -1])
    top = eps * float(bc.f.f(u.Q[-1, -1])[()] - bc.f.f(u.Q[0, -1])[()]) - edge(defect_top, dsQ[:, -1], u.hs)
    right = edge(lam[-1], dtQ[-1], u.ht)
    left = -edge(lam[0], dtQ[0], u.ht)
    sides = right + left
    return StokesEnergy(total=bottom + top + sides, top=top, sides=sides, bottom=bottom)


# ---------------------------------------------------------------------------
# Newton


def _diagnostics(chart, u: StripField):
    dsQ, dtQ, dsP, dtP = u.derivatives()
    sup_dQ = float(max(np.max(np.abs(dsQ)), np.max(np.abs(dtQ))))
    sup_dP = float(max(np.max(np.abs(dsP)), np.max(np.abs(dtP))))
    return omega_energy(chart, u), sup_dQ, sup_dP


def newton_solve(system: _System, x0: np.ndarray, res_tol=1e-9, max_iter=50, min_step=2.0**-10):
    """Damped Newton with Armijo backtracking.  Returns ``(x, norm, iters, singular, history)``."""
    hs, ht = system.tpl.hs, system.tpl.ht
    x = x0.copy()
    F = system.residual(x)
    norm = residual_norm(F, hs, ht)
    history = [norm]
    it = 0
    while norm >= res_tol and it < max_iter:
        J = system.jacobian(x)
        with warnings.catch_warnings():
            warnings.simplefilter("error", spl.MatrixRankWarning)
            try:
                dx = spl.spsolve(J, -F)
            except (spl.MatrixRankWarning, RuntimeError):
                return x, norm, it, True, history
        if not np.all(np.isfinite(dx)):
            return x, norm, it, True, history
        alpha = 1.0
        while True:
            x_new = x + alpha * dx
            F_new = system.residual(x_new)
            new = residual_norm(F_new, hs, ht)
            if np.isfinite(new) and new <= (1.0 - 1e-4 * alpha) * norm:
                break
            alpha *= 0.5
            if alpha < min_step:
                raise DivergedError(f"line search stalled at residual {norm:.3e}", (x, norm, it, history))
        x, F, norm = x_new, F_new, new
        it += 1
        history.append(norm)
    return x, norm, it, False, history


def solve_strip(
    chart: MetricChart,
    bc: AdiabaticData,
    r: float,
    Ns: int,
    Nt: int,
    end_condition: str = "floer-seeded",
    init: Optional[StripField] = None,
    *,
    formulation: str = "holomorphic",
    x_minus=None,
    res_tol: float = 1e-9,
    max_iter: int = 50,
    continuation: bool = False,
):
    """Solve the strip problem on ``[-r, r] x [0, 1]``.

    ``floer-seeded`` takes end data from :func:`floer_oracle` started at
    ``x_minus`` (default: ``init.Q[0, 0]``) and uses the oracle as initial
    guess unless ``init`` is given.  ``dirichlet`` takes end data from the end
    columns of ``init``.  With ``continuation`` the solve is ramped through 8
    geometric values of eps ending at ``bc.eps``.

    Returns ``(field, report)``; the field is in original coordinates.
    """
    if end_condition not in END_CONDITIONS:
        raise ValueError(f"unknown end condition {end_condition!r}")
    c_t = _c_t(formulation)
    d = chart.dim
    if bc.dim != d:
        raise ValueError("chart and boundary data dimensions differ")
    if init is not None and (init.Ns != Ns or init.Nt != Nt):
        raise ValueError("init grid does not match (Ns, Nt)")

    if end_condition == "floer-seeded":
        if x_minus is None:
            if init is None:
                raise ValueError("floer-seeded ends need x_minus or init")
            x_minus = init.Q[0, 0]
        arcs = floer_oracle(chart, bc.f, x_minus, (-r, r), (Ns, Nt), eps=bc.eps, a_form=bc.a_form)
        if init is None:
            init = arcs
    else:
        if init is None:
            raise ValueError("dirichlet ends need an initial field")
        arcs = init

    def arc_data(b: AdiabaticData):
        w = arcs if c_t == 1.0 else to_floer_frame(arcs, b)
        _, _, PT = _pieces(chart, w, b, c_t)
        return arcs.Q[0].copy(), PT[-1].copy()

    eps_list = [bc.eps]
    if continuation and bc.eps > 0:
        eps_list = [bc.eps * 2.0 ** (k - 7) for k in range(8)]

    v = init if c_t == 1.0 else to_floer_frame(init, AdiabaticData(bc.f, eps_list[0], bc.a_form))
    total_iters = 0
    history = []
    for e in eps_list:
        b = AdiabaticData(bc.f, e, bc.a_form)
        Q_arc, PT_arc = arc_data(b)
        system = _System(chart, b, v, c_t, Q_arc, PT_arc)
        try:
            x, norm, it, singular, hist = newton_solve(system, system.pack(v), res_tol, max_iter)
        except DivergedError as exc:
            x, norm, it, hist = exc.report
            u = system.unpack(x)
            u = u if c_t == 1.0 else from_floer_frame(u, b)
            energy, sdq, sdp = _diagnostics(chart, u)
            rep = SolveReport(norm, total_iters + it, energy, sdq, sdp, False, False, formulation, end_condition, history + hist)
            raise DivergedError(str(exc), rep) from None
        total_iters += it
        history += hist
        v = system.unpack(x)
        if singular or norm >= res_tol:
            break

    u = v if c_t == 1.0 else from_floer_frame(v, bc)
    energy, sdq, sdp = _diagnostics(chart, u)
    report = SolveReport(norm, total_iters, energy, sdq, sdp, bool(norm < res_tol), singular, formulation, end_condition, history)
    if not singular and norm >= res_tol:
        raise DivergedError(f"no convergence after {max_iter} iterations (residual {norm:.3e})", report)
    return u, report


def perturb_field(u: StripField, amount: float, seed: int = 0) -> StripField:
    """Add a smooth bump of relative size ``amount`` to ``u`` (random signs per component).

    The bump ``sin(pi t) cos(pi s / 2r)`` vanishes on the edges and ends, so
    boundary data of the perturbed field are unchanged.
    """
    rng = np.random.default_rng(seed)
    out = u.copy()
    if amount == 0:
        return out
    S, T = np.meshgrid(u.s - 0.5 * (u.s[0] + u.s[-1]), u.t, indexing="ij")
    bump = np.sin(np.pi * (T - u.t[0]) / (u.t[-1] - u.t[0])) * np.cos(np.pi * S / (2.0 * u.r))
    signs = rng.choice([-1.0, 1.0], size=(2, u.dim))
    q_scale = max(float(np.ptp(u.Q)), 1e-3)
    p_scale = max(float(np.abs(u.P).max()), 1e-3)
    out.Q = u.Q + amount * q_scale * bump[..., None] * signs[0]
    out.P = u.P + amount * p_scale * bump[..., None] * signs[1]
    return out
