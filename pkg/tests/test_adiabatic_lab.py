import numpy as np
import pytest

from adiastrips.adiabatic_lab import (
    ConfigError,
    InconsistentLimitError,
    SweepConfig,
    default_hbar,
    discrete_frechet,
    energy_decompose,
    extract_broken,
    glued_oracle,
    reference_flow,
    rescale,
    run_sweep,
    sup_dist_to_flow,
    trend_ok,
    unrescale,
)
from adiastrips.geometry import cosine_wells, flat_chart
from adiastrips.morse_flow import FlowPath, Segment, assemble_broken, torus_distance
from adiastrips.strip_solver import StripField, floer_oracle, omega_energy


def test_rescale_round_trip():
    u = floer_oracle(flat_chart(1), cosine_wells(1, 0.1), 0.1, (-5, 5), (50, 4), eps=0.2)
    v = rescale(u, 1.0)
    assert np.array_equal(v.s, u.s) and np.array_equal(v.Q, u.Q)
    w = unrescale(rescale(u, 0.2), 0.2)
    assert np.allclose(w.s, u.s, rtol=0, atol=1e-14) and np.array_equal(w.Q, u.Q)


def test_rescaled_oracle_is_flow_line():
    chart, f = flat_chart(1), cosine_wells(1, 0.3)
    eps = 0.25
    u = floer_oracle(chart, f, 0.1, (0, 8), (160, 4), eps=eps)
    unit = floer_oracle(chart, f, 0.1, (0, 2), (160, 4), eps=1.0)
    v = rescale(u, eps)
    assert np.allclose(v.s, unit.s, atol=1e-14)
    assert np.abs(v.Q - unit.Q).max() < 1e-12


def test_sup_dist_zero_cases():
    chart, f = flat_chart(1), cosine_wells(1, 0.1)
    eps, ell = 0.1, 2.0
    u = floer_oracle(chart, f, 0.1, (-ell / eps, ell / eps), (800, 4), eps=eps)
    path = reference_flow(chart, f, (0.1,), ell)
    # only RK4 and Hermite interpolation error of the reference remain
    assert sup_dist_to_flow(chart, rescale(u, eps), path) < 1e-7
    c = StripField.on_grid(-2, 2, 40, 4, 1)
    const = FlowPath([Segment(np.linspace(-2, 2, 5), np.zeros((5, 1)), True)], [], np.zeros(1), np.zeros(1))
    assert sup_dist_to_flow(chart, c, const) == 0.0


def test_discrete_frechet():
    a = np.linspace(0, 1, 11)[:, None]
    assert discrete_frechet(a, a) == 0.0
    assert discrete_frechet(a, a + 0.1) == pytest.approx(0.1)


def test_trend_ok():
    assert trend_ok([4.0, 2.0, 1.0])
    assert trend_ok([1.0])
    assert trend_ok([1.0, 1.05])  # within 10 percent
    assert not trend_ok([1.0, 1.2])
    assert not trend_ok([1.0, float("nan")])


def test_sweep_config_validation():
    chart, f = flat_chart(1), cosine_wells(1, 0.1)
    with pytest.raises(ConfigError):
        SweepConfig(chart, f, (0.1, 0.2))
    with pytest.raises(ConfigError):
        SweepConfig(chart, f, ())
    with pytest.raises(ConfigError):
        SweepConfig(chart, f, (0.1,), mode="circular")
    with pytest.raises(ConfigError):
        SweepConfig(chart, f, (0.1,), x_minus=(0.1, 0.2))
    cfg = SweepConfig(chart, f, (0.2,))
    assert cfg.grid(0.2) == (10.0, 400, 20)


def test_one_rung_sweep():
    cfg = SweepConfig(flat_chart(1), cosine_wells(1, 0.1), (0.2,))
    table = run_sweep(cfg)
    assert table.all_converged() and trend_ok(table.column("sup_dist"))
    row = table.rows[0]
    assert row["violations"] == 0
    assert abs(row["energy"] - row["stokes_energy"]) < 5 * (0.05**2 + 1e-9)
    # frozen from an earlier run of the same configuration
    assert row["sup_dist"] == pytest.approx(5.4533e-4, rel=1e-3)


def test_energy_decompose():
    chart = flat_chart(1)
    z = StripField.on_grid(-5, 5, 100, 4, 1)
    assert energy_decompose(z, 1.0, 0.1) == [((-5.0, 5.0), "low")]
    f = cosine_wells(1, 1.0)
    u = floer_oracle(chart, f, 0.01, (-4, 4), (800, 4), eps=1.0)
    E = omega_energy(chart, u)
    parts = energy_decompose(u, 1.0, 0.5 * E)
    kinds = [k for _, k in parts]
    assert kinds.count("high") == 1
    assert all(a != b for a, b in zip(kinds, kinds[1:]))
    (lo, hi), _ = next(p for p in parts if p[1] == "high")
    peak = u.s[np.argmax(np.abs(f.df(u.Q[:, 0]))[:, 0])]
    assert lo < peak < hi
    with pytest.raises(ValueError):
        energy_decompose(u, 0.5, 1.0)


def test_default_hbar():
    # critical values -A/(2 pi) and A/(2 pi)
    assert default_hbar(flat_chart(1), cosine_wells(1, 0.2)) == pytest.approx(0.2 / (2 * np.pi))


def test_extract_without_plateau_is_finite():
    chart, f = flat_chart(1), cosine_wells(1, 0.1)
    u = floer_oracle(chart, f, 0.1, (-20, 20), (800, 4), eps=0.1)
    path = extract_broken(chart, rescale(u, 0.1), f)
    assert path.kind == "finite" and len(path.segments) == 1


def test_extract_rejects_non_critical_plateau():
    chart, f = flat_chart(1), cosine_wells(1, 0.1)
    u = StripField.on_grid(-40, 40, 400, 4, 1)
    u.Q[:] = 0.3
    with pytest.raises(InconsistentLimitError):
        extract_broken(chart, rescale(u, 0.1), f)


def test_glued_oracle_round_trip_d1():
    chart, f = flat_chart(1), cosine_wells(1, 0.1)
    path = assemble_broken(chart, f, 0.1, 0.5)
    assert path.kind == "half_infinite_pos"
    u = glued_oracle(chart, f, path, 0.1, plateau_len=3.0, h_sigma=0.02, Nt=4)
    got = extract_broken(chart, rescale(u, 0.1), f)
    assert got.kind == "broken" and len(got.crossed_criticals) == 1
    assert torus_distance(got.crossed_criticals[0].location, 0.5) < 1e-9
    assert got.crossed_criticals[0].index == 1
