import numpy as np
import pytest
from scipy.integrate import solve_ivp

from adiastrips.geometry import (
    CotangentVec,
    DegenerateMetricError,
    MetricChart,
    christoffel,
    christoffel_derivative,
    conformal_chart,
    cosine_wells,
    covariant_t,
    diag_perturbed_chart,
    flat_chart,
    hamiltonian_field,
    interchange_defect,
    j0_apply,
    metric_pair,
    omega,
)

CATALOG = [flat_chart(1), flat_chart(2), conformal_chart(0.2), diag_perturbed_chart(0.1)]


def fd_christoffel(chart, q, h=1e-5):
    """Christoffel symbols from central differences of g (independent of dg)."""
    d = chart.dim
    dg = np.zeros((d, d, d))
    for m in range(d):
        e = np.zeros(d)
        e[m] = h
        dg[m] = (chart.metric(q + e) - chart.metric(q - e)) / (2 * h)
    ginv = np.linalg.inv(chart.metric(q))
    lower = 0.5 * (np.einsum("bcl->lbc", dg) + np.einsum("cbl->lbc", dg) - dg)
    # lower[l, b, c] = 1/2 (d_b g_cl + d_c g_bl - d_l g_bc)
    return np.einsum("al,lbc->abc", ginv, lower)


def test_flat_christoffel_vanishes(rng):
    for d in (1, 2):
        q = rng.random((20, d))
        assert np.all(christoffel(flat_chart(d), q) == 0.0)


def test_conformal_christoffel_closed_form(rng):
    a = 0.2
    chart = conformal_chart(a)
    q = rng.random(50)
    gam = christoffel(chart, q)[..., 0, 0, 0]
    assert np.allclose(gam, 2 * np.pi * a * np.cos(2 * np.pi * q), atol=1e-13)
    for x in q[:5]:
        assert np.allclose(fd_christoffel(chart, np.array([x])), christoffel(chart, x), atol=1e-8)


def test_diag_christoffel_matches_finite_differences(rng):
    chart = diag_perturbed_chart(0.1)
    for q in rng.random((10, 2)):
        assert np.allclose(christoffel(chart, q), fd_christoffel(chart, q), atol=1e-8)


def test_christoffel_symmetric(rng):
    for chart in CATALOG:
        gam = christoffel(chart, rng.random((100, chart.dim)))
        assert np.array_equal(gam, np.swapaxes(gam, -1, -2))


def test_christoffel_derivative_finite_differences(rng):
    chart = diag_perturbed_chart(0.1)
    q = rng.random(2)
    h = 1e-5
    dgam = christoffel_derivative(chart, q)
    for m in range(2):
        e = np.zeros(2)
        e[m] = h
        fd = (christoffel(chart, q + e) - christoffel(chart, q - e)) / (2 * h)
        assert np.allclose(dgam[m], fd, atol=1e-7)


def test_spectral_fallback_matches_analytic(rng):
    ref = diag_perturbed_chart(0.1)
    spec = MetricChart(2, ref.g)
    q = rng.random((8, 2))
    assert np.allclose(spec.dg(q), ref.dg(q), atol=1e-10)
    assert np.allclose(spec.d2g(q), ref.d2g(q), atol=1e-9)


def test_metric_periodic_and_positive(rng):
    for chart in CATALOG:
        q = rng.random((200, chart.dim))
        for i in range(chart.dim):
            e = np.zeros(chart.dim)
            e[i] = 1.0
            assert np.allclose(chart.metric(q + e), chart.metric(q), atol=1e-14)
        assert np.all(np.linalg.eigvalsh(chart.metric(q)) > 0)


def test_degenerate_metric_raises():
    chart = MetricChart(1, lambda q: np.zeros(np.shape(q)[:-1] + (1, 1)) if np.ndim(q) else np.zeros((1, 1)),
                        dg=lambda q: np.zeros(np.shape(q)[:-1] + (1, 1, 1)),
                        d2g=lambda q: np.zeros(np.shape(q)[:-1] + (1, 1, 1, 1)))
    with pytest.raises(DegenerateMetricError):
        christoffel(chart, np.array([0.3]))
    with pytest.raises(DegenerateMetricError):
        diag_perturbed_chart(1.5)


def test_j0_flat_examples():
    chart = flat_chart(1)
    out = j0_apply(chart, 0.3, CotangentVec(np.array([1.0]), np.array([0.0])))
    assert np.allclose(out.h, 0.0) and np.allclose(out.v, 1.0)
    out = j0_apply(chart, 0.3, CotangentVec(np.array([0.0]), np.array([1.0])))
    assert np.allclose(out.h, -1.0) and np.allclose(out.v, 0.0)


def test_j0_squares_to_minus_one_and_compatible(rng):
    for chart in CATALOG:
        d = chart.dim
        q = rng.random((100, d))
        X = CotangentVec(rng.normal(size=(100, d)), rng.normal(size=(100, d)))
        Y = CotangentVec(rng.normal(size=(100, d)), rng.normal(size=(100, d)))
        JJ = j0_apply(chart, q, j0_apply(chart, q, X))
        assert np.allclose(JJ.stacked(), -X.stacked(), atol=1e-12, rtol=0)
        lhs = omega(X, j0_apply(chart, q, Y))
        assert np.allclose(lhs, metric_pair(chart, q, X, Y), atol=1e-12, rtol=0)


def test_hamiltonian_field_examples(rng):
    chart = flat_chart(1)
    f = cosine_wells(1, 1.0, phase=np.pi / 2)  # sin(2 pi q) / (2 pi)
    X = hamiltonian_field(chart, f, 0.0)
    assert np.allclose(X.h, 0.0) and np.allclose(X.v, 1.0, atol=1e-15)
    chart = conformal_chart(0.2)
    f = cosine_wells(1, 0.3)
    q = rng.random((30, 1))
    JX = j0_apply(chart, q, hamiltonian_field(chart, f, q))
    assert np.allclose(JX.h, -f.df(q) / chart.metric(q)[..., 0], atol=1e-12)
    assert np.allclose(JX.v, 0.0)
    X = hamiltonian_field(chart, cosine_wells(1, 0.0), q)
    assert np.all(X.v == 0.0) and np.all(X.h == 0.0)


def test_covariant_t_flat_is_central_difference(rng):
    Q = rng.random((12, 2))
    P = rng.random((12, 2))
    out = covariant_t(flat_chart(2), Q, P, 0.1)
    assert np.allclose(out, np.gradient(P, 0.1, axis=0, edge_order=2))
    with pytest.raises(ValueError):
        covariant_t(flat_chart(2), Q[:2], P[:2], 0.1)


def _transport(chart, qfun, dqfun, p0, t):
    # nabla_t P = 0  <=>  dP_k/dt = Gamma^a_{jk} Q'^j P_a
    def rhs(tt, p):
        gam = christoffel(chart, qfun(tt))
        return np.einsum("ajk,j,a->k", gam, dqfun(tt), p)

    sol = solve_ivp(rhs, (t[0], t[-1]), p0, t_eval=t, rtol=1e-12, atol=1e-14, method="DOP853")
    return sol.y.T


def test_parallel_transport_is_second_order():
    chart = diag_perturbed_chart(0.1)
    qfun = lambda t: np.array([0.3 + 0.4 * np.sin(t), 0.1 + 0.7 * t])
    dqfun = lambda t: np.array([0.4 * np.cos(t), 0.7])
    errs = []
    for n in (20, 40, 80):
        t = np.linspace(0, 1, n + 1)
        Q = np.array([qfun(x) for x in t])
        P = _transport(chart, qfun, dqfun, np.array([1.0, -0.5]), t)
        errs.append(np.abs(covariant_t(chart, Q, P, 1.0 / n)).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), orders


def test_product_rule(rng):
    chart = conformal_chart(0.2)
    n = 200
    t = np.linspace(0, 1, n + 1)
    Q = (0.2 + 0.5 * t + 0.1 * np.sin(3 * t))[:, None]
    P = (np.cos(2 * t) + 0.3)[:, None]
    nab = covariant_t(chart, Q, P, 1.0 / n)
    norm2 = chart.covector_norm2(Q, P)
    lhs = np.gradient(norm2, 1.0 / n, edge_order=2)
    rhs = 2 * np.einsum("ti,tij,tj->t", nab, chart.inverse_metric(Q), P)
    assert np.abs(lhs - rhs).max() < 1e-3


def test_interchange_defect_second_order():
    chart = diag_perturbed_chart(0.1)
    errs = []
    for n in (16, 32, 64):
        s = np.linspace(0, 1, n + 1)
        S, T = np.meshgrid(s, s, indexing="ij")
        Q = np.stack([0.4 * np.sin(S + T**2), 0.3 * np.cos(2 * S - T) + S * T], -1)
        errs.append(interchange_defect(chart, Q, 1.0 / n, 1.0 / n))
    assert np.all(np.log2(np.array(errs[:-1]) / np.array(errs[1:])) >= 1.8)
