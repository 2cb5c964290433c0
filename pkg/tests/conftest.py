import numpy as np
import pytest

from rrda.config import RunConfig
from rrda.sweep import train_scenario_source


def toy_config(seed=0):
    cfg = RunConfig()
    cfg.run.seed = seed
    return cfg


@pytest.fixture(scope="session")
def toy():
    """Seed-0 toy scenario (K = K' = 3, 2-D inputs, 30 degree rotation) with its source model."""
    cfg = toy_config(0)
    model, source, target = train_scenario_source(cfg)
    return {"cfg": cfg, "model": model, "source": source, "target": target,
            "features": model.transform(target.x)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[mark.args[0]] = (mark.args[1], "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} [{status}] {title}" + (f": {detail}" if detail else ""))
