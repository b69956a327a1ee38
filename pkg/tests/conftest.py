import datetime as dt
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meltbench.manifest import Manifest  # noqa: E402
from meltbench.synth import SynthConfig, generate_synthetic  # noqa: E402

SMALL = dict(width=96, height=64, obs_per_month=4, obs_per_month_first_year=2, patterns_per_level=1,
             dense_range=("2019-06-08", "2019-06-15"), events=("2019-06-12",))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cfg():
    return SynthConfig(**SMALL)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, small_cfg):
    root = tmp_path_factory.mktemp("synth_small")
    ds = generate_synthetic(small_cfg, root)
    return ds


@pytest.fixture(scope="session")
def small_manifest(small_dataset):
    return Manifest.load(small_dataset.root)


def days(*iso):
    return [dt.date.fromisoformat(s) for s in iso]


_criteria: dict[int, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria.setdefault(n, []).append("SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        status = "FAIL" if "FAIL" in results else ("SKIP" if all(r == "SKIP" for r in results) else "PASS")
        terminalreporter.write_line(f"criterion {n:2d}: {status}")
