import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--skipslow", action="store_true", default=False,
                     help="skip the long acceptance studies")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skipslow"):
        return
    skip = pytest.mark.skip(reason="slow; run without --skipslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def gun():
    from gunshape import geometry as geo
    model, dv = geo.build_gun_model()
    return model


@pytest.fixture(scope="session")
def optimized_gun(gun):
    """Local-stage optimum of the benchmark electrode (n_sub=8 objective)."""
    from gunshape.optim import GunProblem, LocalConfig, local_minimize
    problem = GunProblem(gun)
    res = local_minimize(problem, LocalConfig(ftol_rel=1e-4))
    return problem, res


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a numbered acceptance check, then assert it."""
    def check(number, title, ok, detail=""):
        _CRITERIA[number] = (title, bool(ok), detail)
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
        print(line + (f" ({detail})" if detail else ""))
        assert ok, f"{title}: {detail}"
    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 10):
        if number not in _CRITERIA:
            terminalreporter.write_line(f"criterion {number} NOT RUN")
            continue
        title, ok, detail = _CRITERIA[number]
        tail = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}: "
                                    f"{title}{tail}")
