import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pcrnn.data import normalize_times, simulate_dataset
from pcrnn.data.dataset import TrainingExample
from pcrnn.model import ModelConfig

settings.register_profile("pcrnn", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pcrnn")

FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"


def small_config(**kw):
    """Narrow 64-bit model used where paper-size layers would only slow tests down."""
    base = dict(d_patent=6, d_assignee=3, d_inventor=3, embed_dim=3, vocab=7, attn_dim=4, pfn_dim=8,
                dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def random_example(rng, n=4, l=3, n_assignee=3, n_inventor=2, vocab=7, pid="x"):
    times = np.sort(rng.uniform(0.0, 1.0, n + l))
    cutoff = times[n - 1]
    return TrainingExample(pid, times[:n], rng.integers(0, vocab, n),
                           np.sort(rng.uniform(0.0, cutoff, n_assignee)),
                           np.sort(rng.uniform(0.0, cutoff, n_inventor)),
                           times[n:], rng.integers(0, vocab, l), n + l)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_records():
    return simulate_dataset(12, seed=5)


@pytest.fixture(scope="session")
def normalized_records(synthetic_records):
    train, _, norm = normalize_times(synthetic_records)
    return train, norm


# ---------------------------------------------------------------- acceptance verdicts

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")
    config.stash[_VERDICTS] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    verdict = "PASS" if report.passed else "FAIL"
    item.config.stash[_VERDICTS][number] = (title, verdict, detail)


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, {})
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        title, verdict, detail = verdicts[number]
        line = f"criterion {number}: {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
