"""Gradient flow lines of a Morse function on the torus.

Flow convention: ``Q' = +grad f = g^{-1} df``.  Maxima are sinks and minima
sources; ``f`` increases along every nonconstant flow line.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import minimize_scalar

from .geometry import CriticalPoint, MetricChart, MorseData, _as_points

CP_TOL = 1e-7
MIN_SEP = 1e-3


class NonMorseError(ValueError):
    """A critical point with degenerate Hessian."""


@dataclass
class Segment:
    sigma: np.ndarray
    Q: np.ndarray  # (n, d), lifted
    captured: bool = False
    dQ: Optional[np.ndarray] = None  # dQ/dsigma at the samples

    @property
    def start(self) -> np.ndarray:
        return self.Q[0]

    @property
    def end(self) -> np.ndarray:
        return self.Q[-1]

    @property
    def length(self) -> float:
        return float(self.sigma[-1] - self.sigma[0])

    def at(self, sigma) -> np.ndarray:
        """Interpolated samples (cubic Hermite when derivatives are known).

        Arguments outside the sampled range are clamped to the end points.
        """
        sigma = np.asarray(sigma, dtype=float)
        order = np.argsort(self.sigma)
        x = self.sigma[order]
        lo, hi = x[0], x[-1]
        sc = np.clip(sigma, lo, hi)
        if self.dQ is not None and x.size > 1 and np.all(np.diff(x) > 0):
            spline = CubicHermiteSpline(x, self.Q[order], self.dQ[order], axis=0)
            return spline(sc)
        cols = [np.interp(sc, x, self.Q[order, k]) for k in range(self.Q.shape[1])]
        return np.stack(cols, axis=-1)


@dataclass
class FlowPath:
    segments: list
    crossed_criticals: list = field(default_factory=list)
    x_minus: Optional[np.ndarray] = None
    x_plus: Optional[np.ndarray] = None
    kind: str = "finite"

    def points(self) -> np.ndarray:
        """All samples of the concatenated path, lifted continuously."""
        parts = []
        offset = None
        for seg in self.segments:
            Q = seg.Q
            if offset is not None:
                shift = np.round(offset - Q[0])
                Q = Q + shift
            parts.append(Q)
            offset = Q[-1]
        return np.concatenate(parts, axis=0)

    def critical_values(self) -> list:
        return [c.value for c in self.crossed_criticals]

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "x_minus": None if self.x_minus is None else np.asarray(self.x_minus).tolist(),
            "x_plus": None if self.x_plus is None else np.asarray(self.x_plus).tolist(),
            "criticals": [
                {"location": np.asarray(c.location).tolist(), "index": int(c.index), "value": float(c.value) + 0.0}
                for c in self.crossed_criticals
            ],
            "breaks": max(len(self.crossed_criticals), 0),
            "segments": len(self.segments),
        }


def torus_distance(a, b) -> np.ndarray:
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    diff = diff - np.round(diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def default_step(f: MorseData, dim: int) -> float:
    """``1e-2 / max|df|`` on a sample grid, capped at 0.1."""
    g1 = np.arange(64) / 64
    pts = g1[:, None] if dim == 1 else np.stack(np.meshgrid(g1, g1, indexing="ij"), -1).reshape(-1, 2)
    peak = float(np.max(np.linalg.norm(f.df(pts), axis=-1)))
    return 0.1 if peak == 0 else min(0.1, 1e-2 / peak)


def _rhs(chart: MetricChart, f: MorseData, direction: float):
    def rhs(q):
        return direction * chart.sharp(q, f.df(q))

    return rhs


def _rk4_step(rhs, q, h):
    k1 = rhs(q)
    k2 = rhs(q + 0.5 * h * k1)
    k3 = rhs(q + 0.5 * h * k2)
    k4 = rhs(q + h * k3)
    return q + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_flow(
    chart: MetricChart,
    f: MorseData,
    q0,
    length: float,
    step: Optional[float] = None,
    cp_tol: float = CP_TOL,
    sigma0: float = 0.0,
    stop_at=None,
    stop_tol: float = 1e-7,
) -> Segment:
    """RK4 for ``Q' = g^{-1} df(Q)``; a negative ``length`` integrates backwards.

    Integration stops early, with ``captured`` set, once ``|df| < cp_tol / 10``.
    If ``stop_at`` is given the segment also ends where it passes through that
    point (torus distance below ``stop_tol``).
    """
    dim = chart.dim
    q = _as_points(q0, dim).reshape(dim).astype(float)
    if step is None:
        step = default_step(f, dim)
    direction = 1.0 if length >= 0 else -1.0
    rhs = _rhs(chart, f, direction)
    n_steps = int(np.ceil(abs(length) / step)) if length else 0
    h = abs(length) / n_steps if n_steps else step
    out = [q.copy()]
    sig = [sigma0]
    captured = False
    target = None if stop_at is None else _as_points(stop_at, dim).reshape(dim)
    for i in range(n_steps):
        if np.linalg.norm(f.df(q)) < 0.1 * cp_tol:
            captured = True
            break
        q_next = _rk4_step(rhs, q, h)
        if target is not None:
            speed = np.linalg.norm(rhs(q))
            if torus_distance(q, target) <= 2.0 * h * speed + stop_tol:
                res = minimize_scalar(
                    lambda a: float(torus_distance(_rk4_step(rhs, q, a), target)),
                    bounds=(0.0, h),
                    method="bounded",
                    options={"xatol": 1e-13},
                )
                q_hit = _rk4_step(rhs, q, res.x)
                if torus_distance(q_hit, target) <= stop_tol and res.x < h:
                    out.append(q_hit)
                    sig.append(sig[-1] + direction * res.x)
                    break
        q = q_next
        out.append(q.copy())
        sig.append(sigma0 + direction * (i + 1) * h)
    else:
        captured = bool(np.linalg.norm(f.df(q)) < 0.1 * cp_tol)
    Q = np.asarray(out)
    return Segment(np.asarray(sig), Q, captured, chart.sharp(Q, f.df(Q)))


def flow_residual(chart: MetricChart, f: MorseData, seg: Segment) -> float:
    """Pointwise ``max |Q' - g^{-1} df(Q)|`` with fourth order differences."""
    if seg.sigma.size < 5:
        return 0.0
    sig, Q = seg.sigma, seg.Q
    h = float(sig[1] - sig[0])
    if abs((sig[-1] - sig[-2]) - h) > 1e-9 * abs(h):
        sig, Q = sig[:-1], Q[:-1]
    if sig.size < 5:
        return 0.0
    dQ = (Q[:-4] - 8 * Q[1:-3] + 8 * Q[3:-1] - Q[4:]) / (12.0 * h)
    grad = chart.sharp(Q[2:-2], f.df(Q[2:-2]))
    return float(np.max(np.abs(dQ - grad)))


def energy_identity(chart: MetricChart, f: MorseData, seg: Segment) -> tuple:
    """``(f(end) - f(start), integral |grad f|^2 dsigma)``."""
    dfv = f.df(seg.Q)
    dens = np.einsum("ni,ni->n", dfv, chart.sharp(seg.Q, dfv))
    integral = simpson(dens, x=seg.sigma)
    if seg.sigma[-1] < seg.sigma[0]:
        integral = -integral
    return float(f.f(seg.Q[-1])[()] - f.f(seg.Q[0])[()]), float(integral)


# ---------------------------------------------------------------------------
# critical points


def _hess_index(H: np.ndarray) -> int:
    return int(np.sum(np.linalg.eigvalsh(0.5 * (H + H.T)) < 0))


def find_criticals(
    chart: MetricChart,
    f: MorseData,
    seeds: int = 32,
    cp_tol: float = CP_TOL,
    min_sep: float = MIN_SEP,
    max_iter: int = 60,
) -> list:
    """Newton on ``df = 0`` from a ``seeds**d`` grid, deduplicated on the torus."""
    dim = chart.dim
    g1 = (np.arange(seeds) + 0.5) / seeds
    if dim == 1:
        starts = g1[:, None]
    else:
        a, b = np.meshgrid(g1, g1, indexing="ij")
        starts = np.stack([a.ravel(), b.ravel()], axis=-1)
    found = []
    for q in starts:
        q = q.copy()
        polish = 2
        for _ in range(max_iter):
            r = f.df(q)
            if np.linalg.norm(r) < 1e-3 * cp_tol:
                polish -= 1
                if polish < 0:
                    break
            H = f.hess(q)
            try:
                dq = np.linalg.solve(H, -r)
            except np.linalg.LinAlgError:
                break
            nrm = np.linalg.norm(dq)
            if nrm > 0.05:
                dq *= 0.05 / nrm
            q = q + dq
        if np.linalg.norm(f.df(q)) >= cp_tol:
            continue
        q = q - np.floor(q)
        q[q > 1.0 - 1e-9] -= 1.0
        if any(torus_distance(q, c.location) < min_sep for c in found):
            continue
        H = f.hess(q)
        if abs(np.linalg.det(H)) < 1e-8:
            raise NonMorseError(f"degenerate critical point at {q.tolist()}")
        found.append(CriticalPoint(q, _hess_index(H), float(f.f(q)[()]), cp_tol))
    found.sort(key=lambda c: (c.value, tuple(np.round(c.location, 9))))
    return found


def _match_critical(q, crits, tol) -> Optional[CriticalPoint]:
    best = None
    for c in crits:
        dist = torus_distance(q, c.location)
        if dist < tol and (best is None or dist < torus_distance(q, best.location)):
            best = c
    return best


def _same(a: CriticalPoint, b: CriticalPoint) -> bool:
    return bool(torus_distance(a.location, b.location) < MIN_SEP)


def _linearisation(chart, f, y):
    """Eigenpairs of ``g^{-1} Hess f`` at a critical point."""
    A = np.linalg.solve(chart.metric(y).reshape(chart.dim, chart.dim), f.hess(y).reshape(chart.dim, chart.dim))
    w, V = np.linalg.eig(A)
    return w.real, V.real


def _run_to_rest(chart, f, q0, direction, step, budget, cp_tol):
    seg = integrate_flow(chart, f, q0, direction * budget, step, cp_tol)
    return seg


def connecting_orbits(
    chart: MetricChart,
    f: MorseData,
    crits: list,
    offset: float = 1e-6,
    step: Optional[float] = None,
    budget: float = 400.0,
    cp_tol: float = CP_TOL,
) -> list:
    """Flow lines between critical points found by shooting along 1-d branches.

    Every 1-dimensional unstable branch is flowed forwards and every
    1-dimensional stable branch backwards.  Returns ``(source, target, Segment)``
    triples with the segment oriented along the flow.
    """
    edges = []
    capture_tol = 1e-4
    for y in crits:
        w, V = _linearisation(chart, f, y.location)
        up = [V[:, i] for i in range(len(w)) if w[i] > 0]
        down = [V[:, i] for i in range(len(w)) if w[i] < 0]
        if len(up) == 1:
            for sgn in (1.0, -1.0):
                v = sgn * up[0] / np.linalg.norm(up[0])
                seg = _run_to_rest(chart, f, y.location + offset * v, 1.0, step, budget, cp_tol)
                tgt = _match_critical(seg.end, crits, capture_tol)
                if tgt is not None and not _same(tgt, y):
                    edges.append((y, tgt, seg))
        if len(down) == 1 and chart.dim > 1:
            for sgn in (1.0, -1.0):
                v = sgn * down[0] / np.linalg.norm(down[0])
                seg = _run_to_rest(chart, f, y.location + offset * v, -1.0, step, budget, cp_tol)
                src = _match_critical(seg.end, crits, capture_tol)
                if src is not None and not _same(src, y):
                    edges.append((src, y, _reversed(seg)))
    uniq = []
    for e in edges:
        dup = any(
            _same(e[0], o[0]) and _same(e[1], o[1]) and torus_distance(e[2].Q[len(e[2].Q) // 2], o[2].Q[len(o[2].Q) // 2]) < 1e-3
            for o in uniq
        )
        if not dup:
            uniq.append(e)
    return uniq


def assemble_broken(
    chart: MetricChart,
    f: MorseData,
    x_minus,
    x_plus,
    max_breaks: int = 4,
    step: Optional[float] = None,
    budget: float = 400.0,
    cp_tol: float = CP_TOL,
) -> Optional[FlowPath]:
    """A (possibly broken) flow line from ``x_minus`` to ``x_plus``, or None.

    The first chain found by breadth-first search over connecting orbits is
    returned.
    """
    dim = chart.dim
    xm = _as_points(x_minus, dim).reshape(dim).astype(float)
    xp = _as_points(x_plus, dim).reshape(dim).astype(float)
    crits = find_criticals(chart, f, cp_tol=cp_tol)
    capture_tol = 1e-4

    start_crit = _match_critical(xm, crits, cp_tol)
    end_crit = _match_critical(xp, crits, cp_tol)

    if start_crit is None:
        head = integrate_flow(chart, f, xm, budget, step, cp_tol, stop_at=None if end_crit else xp)
        if end_crit is None and torus_distance(head.end, xp) < 1e-6:
            return FlowPath([head], [], xm, xp, "finite")
        y0 = _match_critical(head.end, crits, capture_tol)
        if y0 is None:
            return None
    else:
        head, y0 = None, start_crit

    if end_crit is None:
        back = integrate_flow(chart, f, xp, -budget, step, cp_tol)
        yk = _match_critical(back.end, crits, capture_tol)
        if yk is None:
            return None
        tail = _reversed(back)
    else:
        tail, yk = None, end_crit

    if _same(y0, yk):
        chain, links = [y0], []
    else:
        edges = connecting_orbits(chart, f, crits, step=step, budget=budget, cp_tol=cp_tol)
        found = _bfs(y0, yk, edges, max_breaks)
        if found is None:
            return None
        chain, links = found
    if len(chain) > max_breaks:
        return None

    segments = [s for s in [head] + links + [tail] if s is not None]
    if not segments:
        segments = [Segment(np.zeros(1), xm[None, :], True)]
    crossed = [
        c
        for c in chain
        if not ((start_crit is not None and _same(c, start_crit)) or (end_crit is not None and _same(c, end_crit)))
    ]
    if crossed:
        kind = "broken"
    elif start_crit is not None and end_crit is not None:
        kind = "bi_infinite"
    elif start_crit is not None:
        kind = "half_infinite_neg"
    elif end_crit is not None:
        kind = "half_infinite_pos"
    else:
        kind = "finite"
    return FlowPath(segments, crossed, xm, xp, kind)


def _reversed(seg: Segment) -> Segment:
    """A backward-integrated segment re-indexed forwards, starting at sigma = 0."""
    dQ = None if seg.dQ is None else seg.dQ[::-1]
    return Segment(seg.sigma[::-1] - seg.sigma[-1], seg.Q[::-1], seg.captured, dQ)


def _bfs(y0, yk, edges, max_breaks):
    queue = deque([([y0], [])])
    while queue:
        chain, links = queue.popleft()
        last = chain[-1]
        if len(chain) > max_breaks:
            continue
        for src, tgt, seg in edges:
            if not _same(src, last) or tgt.value <= last.value:
                continue
            if any(_same(tgt, c) for c in chain):
                continue
            if _same(tgt, yk):
                return chain + [tgt], links + [seg]
            queue.append((chain + [tgt], links + [seg]))
    return None


def check_path(chart: MetricChart, f: MorseData, path: FlowPath, ode_tol: float = 1e-6, cp_tol: float = 1e-4) -> list:
    """List of invariant violations (empty when the path is consistent)."""
    problems = []
    for i, seg in enumerate(path.segments):
        res = flow_residual(chart, f, seg)
        if res > ode_tol:
            problems.append(f"segment {i}: flow residual {res:.2e}")
        fv = f.f(seg.Q)
        if seg.Q.shape[0] > 1 and np.any(np.diff(fv) < -1e-12):
            problems.append(f"segment {i}: f decreases")
    vals = path.critical_values()
    if any(b <= a for a, b in zip(vals, vals[1:])):
        problems.append("critical values not strictly increasing")
    for i in range(len(path.segments) - 1):
        gap = torus_distance(path.segments[i].end, path.segments[i + 1].start)
        if gap > cp_tol:
            problems.append(f"segments {i},{i + 1} do not meet ({gap:.2e})")
    return problems
