import numpy as np
import pytest

from qosched.domain import ScenarioConfig, validate_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_config(**overrides) -> ScenarioConfig:
    """A quick scenario: few UEs, tiny networks, short horizon."""
    base = dict(n_ue=12, sim_ttis=200, explore_ttis=100, hidden_layers=(16, 16),
                candidates=12, scheduler="PF", seed=1)
    base.update(overrides)
    return validate_config(base)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
