import pytest

from aiq.fixtures import fixture_dataset, load_fixture

# criterion number -> "CRITERION n: PASS|FAIL ..." line, printed after the run
_ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture
def criterion():
    """criterion(n, ok, detail) records and prints one PASS/FAIL line."""

    def report(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return report


@pytest.fixture(scope="session")
def mini():
    return load_fixture("mini_resnet")


@pytest.fixture(scope="session")
def mini_eval():
    return fixture_dataset("mini_resnet", "eval")


@pytest.fixture(scope="session")
def heavy():
    return load_fixture("heavy_early_mini")


@pytest.fixture(scope="session")
def heavy_eval():
    return fixture_dataset("heavy_early_mini", "eval")


@pytest.fixture(scope="session")
def mini_search(mini, mini_eval):
    """Greedy and coordinate-descent runs on the trained mini-resnet at
    lambda 0.9 (search subset of 1000, seed 0), each final scheme
    re-scored on the full eval set.  Also returns wall-clock seconds."""
    import time

    from aiq.search import Evaluator, coordinate_descent, greedy_search, reevaluate

    full = Evaluator(mini, mini_eval, subset_size=None, incremental=False)
    out = {"full": full}
    for name, algo in (("greedy", greedy_search), ("coord", coordinate_descent)):
        t0 = time.perf_counter()
        ev = Evaluator(mini, mini_eval, subset_size=1000, seed=0)
        trace = algo(ev, ev.objective(0.9))
        out[name] = {"evaluator": ev, "trace": trace, "final": reevaluate(trace.final, full),
                     "seconds": time.perf_counter() - t0}
    return out
