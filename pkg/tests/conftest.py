import numpy as np
import pytest

from mnb import nn
from mnb.nn import BatchNorm, Dense, Model, ReLU


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_model(rng, in_dim=8, hidden=(6, 5), classes=(0, 1, 2), batchnorm=True):
    return Model.init(nn.mlp(in_dim, hidden, batchnorm), rng, classes)


def randomize_bn(model, rng):
    """Non-trivial BN affine params and running stats so tests exercise them."""
    for name in list(model.params):
        if name.endswith("gamma"):
            model.params[name] = rng.uniform(0.5, 1.5, model.params[name].shape)
        elif name.endswith("beta"):
            model.params[name] = rng.normal(0, 0.3, model.params[name].shape)
    for name in list(model.bn_stats):
        v = model.bn_stats[name]
        model.bn_stats[name] = rng.normal(0, 0.5, v.shape) if name.endswith("mean") else rng.uniform(0.5, 2.0, v.shape)
    return model


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
