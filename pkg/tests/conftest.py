import time

import pytest
from hypothesis import settings

import ntk_audit

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

CRITERIA = {
    1: "toy effective rank",
    2: "Jacobian vs finite differences",
    3: "CK-NTK oracle equivalence",
    4: "spectral invariants of every NTK",
    5: "adaptation-rate recovery",
    6: "power-law fitter",
    7: "width-sweep trend (beta, Gamma)",
    8: "model vs data scaling opposition",
    9: "noise-replacement trend",
    10: "determinism and persistence",
}
_results: dict[int, tuple[str, float, str]] = {}


def pytest_configure(config):
    ntk_audit.install()


def _order(item) -> int:
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return 0
    return 2 if marker.args[0] == 4 else 1


def pytest_collection_modifyitems(session, config, items):
    # acceptance runs last, criterion 4 at the very end, so it sees every NTK built by the other tests
    items.sort(key=_order)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    status, seconds, detail = _results.get(n, ("PASS", 0.0, ""))
    seconds += report.duration if report.when in ("setup", "call") else 0.0
    if report.when == "call" or report.outcome != "passed":
        # a criterion with several tests passes only if all of them pass
        if status == "PASS" and not report.passed:
            status = "SKIP" if report.skipped else "FAIL"
            detail = str(report.longrepr).strip().splitlines()[-1][:160]
    _results[n] = (status, seconds, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n in _results:
            status, seconds, detail = _results[n]
            line = f"criterion {n:>2} {status}  {CRITERIA[n]} ({seconds:.1f}s)"
            if detail:
                line += f"  -- {detail}"
        else:
            line = f"criterion {n:>2} NOT RUN  {CRITERIA[n]}"
        tr.write_line(line)


@pytest.fixture(scope="session")
def tiny_sweep(tmp_path_factory):
    """A finished 2-value x 2-member sweep: (config, result, output dir)."""
    from ntk_lens.experiments.runner import run_sweep

    from factories import tiny

    cfg = tiny()
    out = tmp_path_factory.mktemp("tiny_sweep")
    return cfg, run_sweep(cfg, out, jobs=1), out
