import re

import numpy as np
import pytest

from robtune import data, nets, training

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    m = re.search(r"test_acceptance\.py::test_(c\d+)_(\w+)", report.nodeid)
    if m:
        _ACCEPTANCE_RESULTS[(m.group(1), m.group(2))] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for (cid, name), outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"[{cid}] {name}: {status}")


@pytest.fixture(scope="session")
def tiny_dataset():
    return data.generate(classes=3, dims=8, per_class=60, spread=0.3, seed=5, mean_dim=4)


@pytest.fixture(scope="session")
def tiny_net(tiny_dataset):
    spec = nets.ModelSpec("mlp", tiny_dataset.dim, tiny_dataset.num_classes, hidden=(16, 16))
    hp = training.HyperParams(eta=0.1, epochs=15, patience=15, batch=32)
    net, _ = training.train(spec, tiny_dataset, hp, seed=1)
    return net


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
