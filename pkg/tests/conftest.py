import pytest

# filled by test_acceptance; printed at the end of the session
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)


_STRIPS = {}


def reference_strip(eps, ell=2.0, amplitude=0.1, Nt=20, x_minus=0.1):
    """Holomorphic strip on the flat circle with r = ell / eps (cached per session)."""
    key = (eps, ell, amplitude, Nt, x_minus)
    if key not in _STRIPS:
        from adiastrips.geometry import cosine_wells, flat_chart
        from adiastrips.strip_solver import AdiabaticData, solve_strip

        chart = flat_chart(1)
        bc = AdiabaticData(cosine_wells(1, amplitude), eps)
        r = ell / eps
        Ns = int(round(40 * r))
        u, rep = solve_strip(chart, bc, r, Ns + Ns % 2, Nt, x_minus=x_minus)
        _STRIPS[key] = (chart, bc, u, rep)
    return _STRIPS[key]
