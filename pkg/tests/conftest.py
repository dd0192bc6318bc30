import numpy as np
import pytest

from pmuwadc.case_model import (
    PowerCase,
    build_ground_truth,
    load_case,
    shipped_case_path,
    solve_equilibrium,
)
from pmuwadc.modal import decompose

OMEGA_S = 2 * np.pi * 60


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    n = mark.args[0]
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    entry = item.config._criteria.setdefault(n, {"ok": True, "details": []})
    entry["ok"] &= rep.passed
    if detail:
        entry["details"].append(detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        e = crit[n]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {' | '.join(e['details'])}")


@pytest.fixture
def detail(record_property):
    """Attach a human-readable measurement to the acceptance summary line."""
    def add(text):
        record_property("detail", text)
    return add


class Bench:
    def __init__(self):
        self.case = load_case(shipped_case_path("ten_machine"))
        self.op = solve_equilibrium(self.case)
        self.gt = build_ground_truth(self.case, self.op)
        self.dec = decompose(self.gt.A)
        self.x_star = np.concatenate([self.op.delta_star, np.zeros(self.case.n)])


@pytest.fixture(scope="session")
def bench():
    return Bench()


def lossless_pair(Pm=(0.0, 0.0), sigma=(1.0, 1.0), M=(0.1, 0.1), D=(0.02, 0.02)):
    ang = np.array([[0.0, np.pi / 2], [np.pi / 2, 0.0]])
    mag = np.array([[0.0, 1.0], [1.0, 0.0]])
    return PowerCase(M=M, D=D, E=[1.0, 1.0], Pm=Pm, Y_mag=mag, Y_ang=ang,
                     sigma=sigma, omega_s=OMEGA_S)


@pytest.fixture
def two_lossless():
    return lossless_pair(Pm=(0.5, -0.5))


def benchmark_config_path():
    from importlib import resources
    return resources.files("pmuwadc") / "data" / "benchmark_config.json"


@pytest.fixture(scope="session")
def benchmark_run():
    """Shipped benchmark experiment (10 seeds, 450 s, nonlinear), run once per session."""
    import time

    from pmuwadc.pipeline import ExperimentConfig, run_pipeline

    cfg = ExperimentConfig.load(benchmark_config_path())
    t0 = time.perf_counter()
    report = run_pipeline(cfg, write=False)
    return report, time.perf_counter() - t0
