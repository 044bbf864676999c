"""Families of strips as eps -> 0 and their comparison with gradient flow lines.

A strip on ``[-r, r] x [0, 1]`` is rescaled by ``sigma = eps s``; with
``r = ell / eps`` the rescaled domain ``[-ell, ell] x [0, eps]`` is fixed, and
the horizontal part should approach a (possibly broken) flow line of
``grad f`` parametrised by sigma.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import estimates
from .geometry import MetricChart, MorseData
from .morse_flow import (
    CP_TOL,
    FlowPath,
    Segment,
    _reversed,
    find_criticals,
    integrate_flow,
    torus_distance,
)
from .strip_solver import (
    AdiabaticData,
    ConstantForm,
    DivergedError,
    StripField,
    omega_energy,
    solve_strip,
    stokes_energy,
)

MODES = ("finite_flow", "broken_flow")

TABLE_COLUMNS = (
    "eps",
    "r",
    "Ns",
    "Nt",
    "converged",
    "residual",
    "newton_iters",
    "sup_dist",
    "energy",
    "stokes_energy",
    "morse_energy",
    "f_difference",
    "measured_K",
    "measured_kappa",
    "violations",
)


class ConfigError(ValueError):
    """Invalid sweep configuration."""


class InconsistentLimitError(ValueError):
    """A plateau of the rescaled strip sits away from every critical point."""


# ---------------------------------------------------------------------------
# rescaling and distances


def rescale(u: StripField, eps: float) -> StripField:
    """Reindex ``u`` onto ``sigma = eps s``, ``tau = eps t``; samples are untouched."""
    return StripField(u.s * eps, u.t * eps, u.Q, u.P)


def unrescale(v: StripField, eps: float) -> StripField:
    return StripField(v.s / eps, v.t / eps, v.Q, v.P)


def reference_flow(chart: MetricChart, f: MorseData, x_minus, ell: float, step: Optional[float] = None) -> FlowPath:
    """The flow line through ``x_minus`` at ``sigma = -ell``, on ``[-ell, ell]``."""
    seg = integrate_flow(chart, f, x_minus, 2.0 * ell, step=step, cp_tol=0.0, sigma0=-ell)
    return FlowPath([seg], [], np.asarray(seg.start), np.asarray(seg.end), "finite")


def _align(curve: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Shift a lifted curve by an integer vector so its start is nearest ``anchor``."""
    return curve + np.round(anchor - curve[0])


def discrete_frechet(A: np.ndarray, B: np.ndarray) -> float:
    """Discrete Frechet distance between two polylines (rows are vertices)."""
    n, m = len(A), len(B)
    D = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(-1))
    prev = np.maximum.accumulate(D[0])
    for i in range(1, n):
        row = np.empty(m)
        row[0] = max(prev[0], D[i, 0])
        best = np.minimum(prev[1:], prev[:-1])
        for j in range(1, m):
            row[j] = max(D[i, j], min(best[j - 1], row[j - 1]))
        prev = row
    return float(prev[-1])


def _subsample(curve: np.ndarray, n: int) -> np.ndarray:
    if len(curve) <= n:
        return curve
    idx = np.unique(np.linspace(0, len(curve) - 1, n).round().astype(int))
    return curve[idx]


def sup_dist_to_flow(chart: MetricChart, v: StripField, path: FlowPath, mode: str = "finite_flow", samples: int = 400) -> float:
    """Largest distance between the horizontal part of ``v`` and ``path``.

    ``finite_flow`` compares ``Q(sigma, t)`` with ``path(sigma)`` node by node
    (no shift).  ``broken_flow`` uses the discrete Frechet distance of every
    t-slice to the concatenated path, i.e. the best monotone matching.
    """
    if mode not in MODES:
        raise ValueError(f"unknown comparison mode {mode!r}")
    if mode == "finite_flow":
        if len(path.segments) != 1:
            raise ValueError("finite_flow comparison needs a single segment")
        seg = path.segments[0]
        lo, hi = min(seg.sigma[0], seg.sigma[-1]), max(seg.sigma[0], seg.sigma[-1])
        h = abs(v.s[1] - v.s[0])
        if v.s[0] < lo - 1e-9 * max(1.0, h) or v.s[-1] > hi + 1e-9 * max(1.0, h):
            raise ValueError("reference path does not cover the strip")
        ref = seg.at(v.s)  # (Ns+1, d)
        return float(np.max(torus_distance(v.Q, ref[:, None, :])))
    ref = path.points()
    ref = _subsample(ref, samples)
    worst = 0.0
    for j in range(v.t.size):
        curve = _subsample(v.Q[:, j], samples)
        worst = max(worst, discrete_frechet(_align(curve, ref[0]), ref))
    return worst


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepConfig:
    chart: MetricChart
    f: MorseData
    eps_ladder: tuple
    ell: float = 2.0
    x_minus: tuple = (0.1,)
    cells_per_unit: float = 20.0
    Nt: int = 20
    mode: str = "finite_flow"
    a_form: Optional[ConstantForm] = None
    formulation: str = "holomorphic"
    res_tol: float = 1e-9
    max_iter: int = 50
    jobs: int = 1

    def __post_init__(self):
        ladder = [float(e) for e in self.eps_ladder]
        if not ladder:
            raise ConfigError("empty eps ladder")
        if any(e <= 0 for e in ladder):
            raise ConfigError("eps values must be positive")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError("eps ladder must be strictly decreasing")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.ell <= 0:
            raise ConfigError("ell must be positive")
        self.eps_ladder = tuple(ladder)
        self.x_minus = tuple(np.atleast_1d(np.asarray(self.x_minus, dtype=float)).tolist())
        if len(self.x_minus) != self.chart.dim:
            raise ConfigError("x_minus has the wrong dimension")

    def grid(self, eps: float) -> tuple:
        r = self.ell / eps
        Ns = max(4, int(round(self.cells_per_unit * 2.0 * r)))
        return r, Ns + (Ns % 2), int(self.Nt)


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    reference: Optional[FlowPath] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def all_converged(self) -> bool:
        return all(row["converged"] for row in self.rows)


def trend_ok(values, slack: float = 0.10, strict: bool = True) -> bool:
    """Each value at most ``(1 + slack)`` times its predecessor (and below it if ``strict``).

    ``strict`` is read with the slack: a step passes when
    ``v[k+1] < v[k] * (1 + slack)``.
    """
    vals = [float(v) for v in values]
    for a, b in zip(vals, vals[1:]):
        if not (np.isfinite(a) and np.isfinite(b)):
            return False
        bound = a * (1.0 + slack) if a > 0 else slack * abs(a)
        if b > bound or (strict and b == bound and a != 0):
            return False
    return True


def _seed_from(prev: StripField, prev_eps: float, eps: float, r: float, Ns: int, Nt: int) -> StripField:
    """Interpolate a solved strip at ``prev_eps`` onto the grid for ``eps`` in sigma."""
    new = StripField.on_grid(-r, r, Ns, Nt, prev.dim)
    sig_old = prev.s * prev_eps
    sig_new = new.s * eps
    t_old, t_new = prev.t, new.t
    for arr_old, arr_new, scale in ((prev.Q, new.Q, 1.0), (prev.P, new.P, eps / prev_eps)):
        for k in range(prev.dim):
            tmp = np.stack([np.interp(sig_new, sig_old, arr_old[:, j, k]) for j in range(t_old.size)], axis=1)
            arr_new[..., k] = scale * np.stack([np.interp(t_new, t_old, row) for row in tmp], axis=0)
    return new


def _solve_row(cfg: SweepConfig, eps: float, seed: Optional[StripField]):
    r, Ns, Nt = cfg.grid(eps)
    bc = AdiabaticData(cfg.f, eps, cfg.a_form)
    return solve_strip(
        cfg.chart,
        bc,
        r,
        Ns,
        Nt,
        "floer-seeded",
        seed,
        formulation=cfg.formulation,
        x_minus=np.asarray(cfg.x_minus),
        res_tol=cfg.res_tol,
        max_iter=cfg.max_iter,
    )


def _row_metrics(cfg: SweepConfig, eps: float, u: StripField, report, reference: FlowPath) -> dict:
    chart, f = cfg.chart, cfg.f
    bc = AdiabaticData(f, eps, cfg.a_form)
    v = rescale(u, eps)
    sup = sup_dist_to_flow(chart, v, reference, cfg.mode)
    energy = omega_energy(chart, u)
    stokes = stokes_energy(chart, u, bc)
    prof = estimates.gamma_profile(chart, u, bc)
    rep = estimates.check_decay_bound(prof)
    kappa, _, _ = estimates.c1_envelope(chart, u, bc)
    f_diff = float(f.f(u.Q[-1, -1])[()] - f.f(u.Q[0, -1])[()])
    return {
        "sup_dist": sup,
        "energy": energy,
        "stokes_energy": stokes.total,
        "morse_energy": energy / eps,
        "f_difference": f_diff,
        "measured_K": prof.K,
        "measured_kappa": kappa,
        "violations": rep.violations,
    }


def run_sweep(cfg: SweepConfig, keep_fields: bool = False) -> ConvergenceTable:
    """Solve down the ladder (each rung seeded from the previous one) and tabulate.

    Rows whose solve diverges are kept with ``converged = False`` and NaN
    metrics; the next rung then starts from Floer's solution instead.
    Post-processing runs on ``cfg.jobs`` threads and does not affect results.
    """
    solved = []
    prev, prev_eps = None, None
    for eps in cfg.eps_ladder:
        r, Ns, Nt = cfg.grid(eps)
        seed = None if prev is None else _seed_from(prev, prev_eps, eps, r, Ns, Nt)
        t0 = time.perf_counter()
        try:
            u, report = _solve_row(cfg, eps, seed)
        except DivergedError as exc:
            solved.append((eps, None, exc.report, time.perf_counter() - t0))
            prev, prev_eps = None, None
            continue
        solved.append((eps, u, report, time.perf_counter() - t0))
        prev, prev_eps = u, eps

    if cfg.mode == "finite_flow":
        reference = reference_flow(cfg.chart, cfg.f, cfg.x_minus, cfg.ell)
    else:
        finest = next((item for item in reversed(solved) if item[1] is not None), None)
        if finest is None:
            reference = None
        else:
            reference = extract_broken(cfg.chart, rescale(finest[1], finest[0]), cfg.f)

    def post(item):
        eps, u, report, runtime = item
        r, Ns, Nt = cfg.grid(eps)
        row = {"eps": eps, "r": r, "Ns": Ns, "Nt": Nt}
        if u is None or reference is None:
            row.update({"converged": False, "residual": float("nan") if report is None else report.residual_norm,
                        "newton_iters": 0 if report is None else report.newton_iters})
            for name in TABLE_COLUMNS[7:]:
                row[name] = float("nan")
        else:
            row.update({"converged": True, "residual": report.residual_norm, "newton_iters": report.newton_iters})
            row.update(_row_metrics(cfg, eps, u, report, reference))
        row["runtime"] = runtime
        if keep_fields:
            row["field"] = u
        return row

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(post, solved))
    else:
        rows = [post(item) for item in solved]
    return ConvergenceTable(rows, reference)


# ---------------------------------------------------------------------------
# energy decomposition


def default_hbar(chart: MetricChart, f: MorseData) -> float:
    """Half the smallest positive gap between critical values of ``f``."""
    vals = sorted(c.value for c in find_criticals(chart, f))
    gaps = [b - a for a, b in zip(vals, vals[1:]) if b - a > 1e-12]
    return 0.5 * min(gaps) if gaps else float("inf")


def energy_decompose(u: StripField, window: float, hbar: float, chart: Optional[MetricChart] = None) -> list:
    """Split ``[s0, s1]`` into maximal low/high energy intervals.

    The energy of ``[s - window, s + window] x [0, 1]`` is compared with
    ``hbar``; class changes are placed halfway between grid nodes.
    Returns ``[((a, b), "low" | "high"), ...]`` alternating and covering the
    domain.
    """
    if window < 1.0:
        raise ValueError("window must be at least 1")
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    dsQ, dtQ, dsP, dtP = u.derivatives()
    dens = np.trapezoid(np.sum(dsQ * dtP - dtQ * dsP, axis=-1), dx=u.ht, axis=1)
    s = u.s
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))])
    lo = np.interp(np.clip(s - window, s[0], s[-1]), s, cum)
    hi = np.interp(np.clip(s + window, s[0], s[-1]), s, cum)
    high = (hi - lo) >= hbar
    out = []
    start = s[0]
    for i in range(1, s.size):
        if high[i] != high[i - 1]:
            cut = 0.5 * (s[i] + s[i - 1])
            out.append(((float(start), float(cut)), "high" if high[i - 1] else "low"))
            start = cut
    out.append(((float(start), float(s[-1])), "high" if high[-1] else "low"))
    return out


# ---------------------------------------------------------------------------
# broken flow lines


def _runs(mask: np.ndarray) -> list:
    """Maximal index runs ``(a, b)`` (inclusive) where ``mask`` holds."""
    edges = np.diff(np.concatenate([[0], mask.astype(int), [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1) - 1))


def _stationary_runs(sig: np.ndarray, curve: np.ndarray, tol: float, min_len: float) -> list:
    """Runs of length ``>= min_len`` staying within ``tol`` of their first point."""
    runs = []
    i, n = 0, len(sig)
    while i < n:
        j = i
        while j + 1 < n and torus_distance(curve[j + 1], curve[i]) <= tol:
            j += 1
        if sig[j] - sig[i] >= min_len - 1e-12:
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    return runs


def extract_broken(
    chart: MetricChart,
    v: StripField,
    f: MorseData,
    plateau_min: float = 2.0,
    plateau_tol: float = CP_TOL,
    step: Optional[float] = None,
) -> FlowPath:
    """Recover the broken flow line traced by a rescaled strip.

    Plateaus are runs of rescaled length at least ``plateau_min`` on which
    every t-slice stays within ``plateau_tol`` of one point; each must sit on
    a critical point.  Transition regions are replaced by flow lines through
    their midpoints.
    """
    crits = find_criticals(chart, f)
    sig = v.s
    curve = v.Q[:, 0]
    x_minus, x_plus = curve[0], curve[-1]
    locs = np.array([c.location for c in crits]).reshape(len(crits), chart.dim)
    # distance of every node (worst over t) to every critical point
    dist = np.max(torus_distance(v.Q[:, :, None, :], locs[None, None, :, :]), axis=1)
    near = np.argmin(dist, axis=1)
    close = dist[np.arange(sig.size), near] <= plateau_tol
    runs, chain = [], []
    for a, b in _runs(close):
        ids = np.unique(near[a : b + 1])
        if ids.size == 1 and sig[b] - sig[a] >= plateau_min - 1e-12:
            runs.append((a, b))
            chain.append(crits[int(ids[0])])
    for a, b in _stationary_runs(sig, curve, plateau_tol, plateau_min):
        if not np.any(close[a : b + 1]):
            raise InconsistentLimitError(f"plateau at {np.asarray(curve[a]).tolist()} is not a critical point")
    if not runs:
        seg = integrate_flow(chart, f, x_minus, float(sig[-1] - sig[0]), step=step, cp_tol=0.0, sigma0=float(sig[0]))
        return FlowPath([seg], [], x_minus, x_plus, "finite")
    for c0, c1 in zip(chain, chain[1:]):
        if c1.value <= c0.value:
            raise InconsistentLimitError("critical values along the strip do not increase")

    budget = 400.0
    segments = []
    if runs[0][0] > 0:
        segments.append(integrate_flow(chart, f, x_minus, budget, step=step))
    for (a0, b0), (a1, b1) in zip(runs, runs[1:]):
        mid = curve[(b0 + a1) // 2]
        fwd = integrate_flow(chart, f, mid, budget, step=step)
        bwd = integrate_flow(chart, f, mid, -budget, step=step)
        back = _reversed(bwd)
        shift = fwd.sigma[0] - back.sigma[-1]
        Q = np.vstack([back.Q, fwd.Q[1:]])
        sg = np.concatenate([back.sigma + shift, fwd.sigma[1:]])
        dQ = np.vstack([back.dQ, fwd.dQ[1:]])
        segments.append(Segment(sg - sg[0], Q, True, dQ))
    if runs[-1][1] < len(sig) - 1:
        segments.append(_reversed(integrate_flow(chart, f, x_plus, -budget, step=step)))

    for seg, (c_prev, c_next) in zip(segments, _expected_ends(segments, runs, chain, len(sig))):
        for end, crit in ((seg.start, c_prev), (seg.end, c_next)):
            if crit is not None and torus_distance(end, crit.location) > 1e-3:
                raise InconsistentLimitError("transition region does not connect its neighbouring plateaus")
    return FlowPath(segments, chain, x_minus, x_plus, "broken")


def _expected_ends(segments, runs, chain, n):
    ends = []
    if runs[0][0] > 0:
        ends.append((None, chain[0]))
    for k in range(len(runs) - 1):
        ends.append((chain[k], chain[k + 1]))
    if runs[-1][1] < n - 1:
        ends.append((chain[-1], None))
    return ends


def glued_oracle(
    chart: MetricChart,
    f: MorseData,
    path: FlowPath,
    eps: float,
    plateau_len: float = 3.0,
    h_sigma: float = 0.01,
    Nt: int = 10,
    lead: float = 0.0,
) -> StripField:
    """A strip built from Floer solutions along a broken flow line.

    Each segment of ``path`` that ends on a critical point of ``f`` is
    followed by a constant plateau of rescaled length ``plateau_len`` there.  The horizontal part sampled
    at ``sigma = eps s`` becomes ``Q(s, t)`` and ``P = eps t df(Q)``.  The
    result lives on ``[-S, S] x [0, 1]``.
    """
    pieces = []  # (length, callable on local sigma)
    crit_locs = [np.asarray(c.location, dtype=float) for c in find_criticals(chart, f)]
    anchor = None
    for seg in path.segments:
        shift = np.zeros(chart.dim) if anchor is None else np.round(anchor - seg.Q[0])
        pieces.append((seg.length, lambda x, seg=seg, shift=shift: seg.at(x + seg.sigma[0]) + shift))
        anchor = seg.Q[-1] + shift
        hit = next((c for c in crit_locs if torus_distance(anchor, c) < 1e-4), None)
        if hit is not None:
            loc = _align(hit[None, :], anchor)[0]
            pieces.append((plateau_len, lambda x, loc=loc: np.broadcast_to(loc, np.shape(x) + loc.shape)))
            anchor = loc
    total = sum(p[0] for p in pieces) + lead
    n = int(np.ceil(total / h_sigma))
    n += n % 2
    sig_grid = np.linspace(0.0, n * h_sigma, n + 1)
    pts = np.empty((sig_grid.size, chart.dim))
    pts[:] = pieces[-1][1](np.array(pieces[-1][0]))
    pts[sig_grid <= lead] = pieces[0][1](np.array(0.0))
    offset = lead
    for length, fn in pieces:
        mask = (sig_grid >= offset) & (sig_grid <= offset + length)
        pts[mask] = fn(sig_grid[mask] - offset)
        offset += length
    half = 0.5 * sig_grid[-1]
    s = (sig_grid - half) / eps
    t = np.linspace(0.0, 1.0, Nt + 1)
    Qf = np.broadcast_to(pts[:, None, :], (s.size, t.size, chart.dim)).copy()
    P = eps * t[None, :, None] * f.df(Qf)
    return StripField(s, t, Qf, P)
