import json

import numpy as np
import pytest

from adiastrips import artifacts, cli, config
from adiastrips.strip_solver import StripField

FLAT = """[chart]
name = flat
dim = 1

[morse]
name = cosine
amplitude = 0.1

[boundary]
eps = {eps}

[strip]
r = {r}
ns = {ns}
nt = 20
x_minus = 0.1
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def manifest_ok(out):
    man = json.loads((out / "manifest.json").read_text())
    files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    assert sorted(man["files"]) == files
    for name, digest in man["files"].items():
        assert artifacts.sha256(out / name) == digest
    return man


def test_solve_eps_zero(tmp_path):
    cfg = write(tmp_path, "p.ini", FLAT.format(eps=0.0, r=5, ns=100))
    out = tmp_path / "run"
    assert cli.main(["solve", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert abs(rep["energy"]) <= 1e-12
    man = manifest_ok(out)
    assert man["command"] == "solve" and man["seed"] == 0


def test_solve_and_verify_reference(tmp_path):
    cfg = write(tmp_path, "p.ini", FLAT.format(eps=0.1, r=20, ns=800))
    out = tmp_path / "run"
    assert cli.main(["solve", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["residual_norm"] < 1e-9 and rep["converged"]
    vout = tmp_path / "ver"
    assert cli.main(["verify", str(out), "--out", str(vout)]) == 0
    est = json.loads((vout / "estimate_report.json").read_text())
    assert est["violations"] == 0 and est["C3"] == pytest.approx(8.0)
    header, data = artifacts.read_csv(vout / "gamma_profile.csv")
    assert header == ["s", "gamma", "dgamma", "ddgamma", "dirichlet", "envelope"]
    assert (vout / "gamma_envelope.svg").read_text().startswith("<svg")
    manifest_ok(vout)


def test_malformed_key_reports_position(tmp_path, capsys):
    cfg = write(tmp_path, "p.ini", "[chart]\nname = flat\n\n[strip]\nr = 5\nbogus = 1\n")
    assert cli.main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "p.ini:6:1: unknown key 'bogus'" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert cli.main(["solve", "--out", str(tmp_path / "o")]) == 3
    assert cli.main(["solve", "--config", str(tmp_path / "nope.ini")]) == 3


def test_solve_divergence_exit_code(tmp_path):
    text = FLAT.format(eps=0.1, r=5, ns=100) + "perturb = 0.3\n\n[solver]\nmax_iter = 1\n"
    cfg = write(tmp_path, "p.ini", text)
    out = tmp_path / "run"
    assert cli.main(["solve", "--config", cfg, "--out", str(out)]) == 2
    assert not json.loads((out / "report.json").read_text())["converged"]


def _zero_run(tmp_path):
    run = tmp_path / "zero"
    run.mkdir()
    (run / "problem.ini").write_text(FLAT.format(eps=0.1, r=4, ns=80))
    u = StripField.on_grid(-4, 4, 80, 10, 1)
    artifacts.write_strip(run / "strip.csv", u)
    return run


def test_verify_zero_section(tmp_path):
    run = _zero_run(tmp_path)
    assert cli.main(["verify", str(run)]) == 0
    est = json.loads((tmp_path / "zero_verify" / "estimate_report.json").read_text())
    assert est["c1_kappa"] == 0.0 and est["violations"] == 0


def test_verify_truncated_or_missing(tmp_path):
    run = _zero_run(tmp_path)
    text = (run / "strip.csv").read_text()
    (run / "strip.csv").write_text(text[: len(text) // 2])
    assert cli.main(["verify", str(run)]) == 3
    (run / "strip.csv").unlink()
    assert cli.main(["verify", str(run)]) == 3


SWEEP = """[chart]
name = flat
dim = 1

[morse]
amplitude = 0.1

[sweep]
eps_ladder = {ladder}
ell = 2
"""


def test_sweep_exit_codes(tmp_path, monkeypatch):
    cfg = write(tmp_path, "s.ini", SWEEP.format(ladder="0.2, 0.4"))
    assert cli.main(["sweep", "--config", cfg]) == 3
    cfg = write(tmp_path, "s.ini", SWEEP.format(ladder="0.2"))
    env_out = tmp_path / "from_env"
    monkeypatch.setenv(cli.ENV_OUT, str(env_out))
    assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "ignored")]) == 0
    assert (env_out / "table.csv").is_file() and not (tmp_path / "ignored").exists()
    assert (env_out / "row0" / "overlay.svg").is_file()
    man = manifest_ok(env_out)
    assert len(man["row_runtimes"]) == 1
    monkeypatch.delenv(cli.ENV_OUT)
    cfg = write(tmp_path, "s.ini", SWEEP.format(ladder="0.2") + "\n[solver]\nmax_iter = 1\n")
    assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "div")]) == 4


def test_flow_command(tmp_path):
    cfg = write(tmp_path, "f.ini", "[chart]\nname = flat\ndim = 2\n[morse]\namplitude = 0.1\n"
                "[flow]\nx_minus = 0.2 0\nx_plus = 0.5 0.5\n")
    out = tmp_path / "flow"
    assert cli.main(["flow", "--config", cfg, "--out", str(out)]) == 0
    header, data = artifacts.read_csv(out / "flow.csv")
    assert header == ["sigma", "q0", "q1", "segment_id"]
    assert set(data[:, -1]) == {0.0, 1.0}
    summary = json.loads((out / "flow.json").read_text())
    assert summary["path"]["kind"] == "broken" and summary["problems"] == []
    cfg = write(tmp_path, "g.ini", "[chart]\nname = flat\n[morse]\namplitude = 0.3\nwavenumber = 2\n"
                "[flow]\nx_minus = 0.1\nx_plus = 0.6\n")
    assert cli.main(["flow", "--config", cfg, "--out", str(tmp_path / "none")]) == 2


def test_catalog(capsys):
    assert cli.main(["catalog"]) == 0
    text = capsys.readouterr().out
    for name in ("flat", "conformal-1d", "diag-perturbed-2d", "cosine"):
        assert name in text


# --- config and artifacts -------------------------------------------------


def test_config_diagnostics():
    with pytest.raises(config.ConfigError, match=r"<config>:2:5: bad value for 'r'"):
        config.loads("[strip]\nr = abc\n")
    with pytest.raises(config.ConfigError, match=r"<config>:1:1: entry outside"):
        config.loads("r = 1\n")
    with pytest.raises(config.ConfigError, match=r"<config>:1:1: unknown section"):
        config.loads("[plot]\n")
    with pytest.raises(config.ConfigError, match="a_form needs dim"):
        config.loads("[chart]\nname = flat\ndim = 2\n[boundary]\na_form = 0.1\n")
    prob = config.loads("[chart]\nname = diag-perturbed-2d\namplitude = 0.2\n[boundary]\neps = 0.3\na_form = 0.1 0.2\n")
    assert prob.chart.dim == 2 and prob.bc.eps == 0.3
    assert np.allclose(prob.bc.a([0.4, 0.1]), [0.1, 0.2])


def test_strip_csv_round_trip_unwraps(tmp_path):
    u = StripField.on_grid(-2, 2, 40, 6, 2)
    S, T = np.meshgrid(u.s, u.t, indexing="ij")
    u.Q[..., 0] = 0.9 + 0.3 * S + 0.05 * T  # crosses several integers
    u.Q[..., 1] = -0.2 + 0.1 * np.sin(S)
    u.P[..., 0] = np.cos(S) * T
    path = artifacts.write_strip(tmp_path / "s.csv", u)
    raw = path.read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    header, data = artifacts.read_csv(path)
    assert np.all((data[:, 2:4] >= 0) & (data[:, 2:4] < 1))
    v = artifacts.read_strip(path)
    shift = np.round(u.Q[0, 0] - v.Q[0, 0])
    assert np.allclose(v.Q + shift, u.Q, atol=1e-14)
    assert np.array_equal(v.P, u.P)


def test_json_is_stable(tmp_path):
    a = artifacts.write_json(tmp_path / "a.json", {"x": np.float64(0.1), "n": np.int64(3), "v": np.arange(2)})
    b = artifacts.write_json(tmp_path / "b.json", {"x": 0.1, "n": 3, "v": [0, 1]})
    assert a.read_bytes() == b.read_bytes()
