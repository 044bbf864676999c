import numpy as np
import pytest

from conftest import reference_strip
from adiastrips.geometry import cosine_wells, diag_perturbed_chart, flat_chart
from adiastrips.estimates import (
    C_PC,
    DELTA_DEFAULT,
    WindowError,
    c1_envelope,
    check_decay_bound,
    decay_constants,
    gamma_profile,
    laplacian_ratio,
    lc_laplacian,
    perturbed_section,
    poincare_ratio,
)
from adiastrips.strip_solver import AdiabaticData, StripField, floer_oracle


def zero_strip(r=4.0, d=1):
    # constant map to the critical point 0 on the zero section
    u = StripField.on_grid(-r, r, int(20 * r), 10, d)
    return u


def test_decay_constants():
    assert C_PC == 0.25
    assert DELTA_DEFAULT**2 == pytest.approx(4.0 / 3.0, abs=1e-15)
    prof = gamma_profile(flat_chart(1), zero_strip(), AdiabaticData(cosine_wells(1, 0.1), 0.1))
    assert decay_constants(prof)[2] == pytest.approx(8.0, abs=1e-14)


def test_perturbed_section_examples(rng):
    chart = flat_chart(1)
    u = zero_strip()
    u.P = rng.normal(size=u.P.shape)
    assert np.array_equal(perturbed_section(chart, u, AdiabaticData(cosine_wells(1, 0.1), 0.0)), u.P)
    f = cosine_wells(1, 0.3)
    orc = floer_oracle(chart, f, 0.1, (-2, 2), (40, 8), eps=1.0)
    assert np.abs(perturbed_section(chart, orc, AdiabaticData(f, 1.0))).max() < 1e-15


def test_boundary_rows_vanish_on_solved_strip():
    chart, bc, u, _ = reference_strip(0.1)
    Pt = perturbed_section(chart, u, bc)
    assert np.abs(Pt[:, [0, -1]]).max() < 1e-12


def test_zero_strip_profile():
    chart = flat_chart(1)
    bc = AdiabaticData(cosine_wells(1, 0.1), 0.1)
    u = zero_strip()
    prof = gamma_profile(chart, u, bc)
    assert np.all(prof.gamma == 0) and prof.K == 0
    rep = check_decay_bound(prof)
    assert rep.violations == 0 and np.all(rep.envelope >= 0)
    kappa, _, _ = c1_envelope(chart, u, bc)
    assert kappa == 0.0


def test_short_strip_rejected():
    with pytest.raises(WindowError):
        gamma_profile(flat_chart(1), zero_strip(r=1.0), AdiabaticData(cosine_wells(1, 0.1), 0.1))


def test_measured_constants_shrink_with_eps():
    K, kappa, lap = [], [], []
    for eps in (0.1, 0.05):
        chart, bc, u, _ = reference_strip(eps)
        prof = gamma_profile(chart, u, bc)
        rep = check_decay_bound(prof)
        assert rep.violations == 0
        assert rep.inequality_holds
        K.append(prof.K)
        kappa.append(c1_envelope(chart, u, bc)[0])
        lap.append(laplacian_ratio(chart, u, bc))
    assert K[1] < K[0]
    assert kappa[1] <= 1.1 * kappa[0]
    assert lap[1] < lap[0]


def test_flat_laplacian_closed_form():
    errs = []
    for n in (20, 40, 80):
        u = StripField.on_grid(-1, 1, n, n, 1)
        u.Q[:] = 0.2
        u.P[..., 0] = np.sin(np.pi * u.t)[None, :]
        lap = lc_laplacian(flat_chart(1), u.Q, u.P, (u.hs, u.ht))
        exact = -np.pi**2 * np.sin(np.pi * u.t[1:-1])[None, :]
        errs.append(np.abs(lap[..., 0] - exact).max())
    assert np.all(np.log2(np.array(errs[:-1]) / np.array(errs[1:])) > 1.8)
    u.P[:] = 0.7
    assert np.abs(lc_laplacian(diag_perturbed_chart(0.1), np.full(u.Q.shape[:2] + (2,), 0.3),
                               np.full(u.Q.shape[:2] + (2,), 0.7), (u.hs, u.ht))).max() < 1e-9


def test_c1_envelope_symmetric(rng):
    chart = flat_chart(1)
    bc = AdiabaticData(cosine_wells(1, 0.0), 0.1)
    u = zero_strip()
    S, T = np.meshgrid(u.s, u.t, indexing="ij")
    u.P[..., 0] = np.exp(-S**2) * np.sin(np.pi * T) * (1 + 0.3 * S)
    k1, s1, m1 = c1_envelope(chart, u, bc)
    v = StripField(u.s, u.t, u.Q[::-1].copy(), u.P[::-1].copy())
    k2, s2, m2 = c1_envelope(chart, v, bc)
    assert np.allclose(m1, m2[::-1])
    assert k1 == pytest.approx(k2, rel=1e-12)


def test_poincare_sharp_constant():
    n = 400
    t = np.linspace(0, 1, n + 1)
    Q = np.full((n + 1, 1), 0.3)
    P = np.sin(np.pi * t)[:, None]
    a, b = poincare_ratio(flat_chart(1), Q, P, 1.0 / n)
    assert a / b == pytest.approx(1 / np.pi**2, rel=1e-4)
    assert a <= C_PC * b
