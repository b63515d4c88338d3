import numpy as np
import pytest

from dialogsent.corpus import GeneratorConfig, generate_synthetic_corpus


@pytest.fixture(scope="session")
def small_corpus():
    cfg = GeneratorConfig(seed=3, num_dialogs=24, utterances_per_dialog=(3, 6), duration_range=(0.05, 0.1))
    return generate_synthetic_corpus(cfg, name="small")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ---------------------------------------------------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): one acceptance criterion; summarised at the end")
    config._acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        item.config._acceptance.append((marker.args[0], rep.outcome, detail))


def pytest_terminal_summary(terminalreporter, config):
    rows = getattr(config, "_acceptance", [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in rows:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status} {name}" + (f" [{detail}]" if detail else ""))
