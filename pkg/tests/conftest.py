import numpy as np
import pytest

from energycomp import ConstantSampler, PowerMonitor, TrainConfig, build_mlp, \
    make_synthetic_dataset, model_inputs, train

# ---------------------------------------------------------------------------
# shared training artifacts (session scope: several suites reuse them)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def small_dataset():
    """10-class image set, 14x14, with enough class overlap that training
    settles near 90% instead of memorizing; train/val/test splits."""
    return make_synthetic_dataset(train=1600, test=400, side=14, noise=0.6, seed=7)


@pytest.fixture(scope="session")
def trained_mlp(small_dataset):
    """A small MLP trained to competence on small_dataset."""
    model = build_mlp(input_dim=14 * 14, hidden=(64, 32), classes=10, seed=7)
    cfg = TrainConfig(max_epochs=6, batch_size=64, seed=7)
    outcome = train(model, small_dataset, cfg)
    assert outcome.test_accuracy > 0.8, "fixture model failed to train"
    return model


@pytest.fixture(scope="session")
def gate_split(trained_mlp, small_dataset):
    return (model_inputs(trained_mlp, small_dataset.test_x), small_dataset.test_y)


@pytest.fixture
def fast_monitor():
    return PowerMonitor(ConstantSampler(100.0, 30.0, 10.0), cadence_s=0.02)


# ---------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion at the end of the run
# ---------------------------------------------------------------------------

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _acceptance[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_acceptance):
        status = "PASS" if _acceptance[nodeid] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {nodeid.split('::')[-1]}")
