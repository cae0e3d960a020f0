import numpy as np
import pytest

from gru_snf.model import init_model


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def randomize_flow_outputs(model, seed=0, scale=0.1):
    """Non-zero conditioner output layers so the flow is no longer the identity."""
    rng = np.random.default_rng(seed)
    parameters = {
        name: (
            rng.normal(0.0, scale, size=np.shape(value))
            if name.endswith((".w2", ".b2"))
            else value
        )
        for name, value in model.parameters().items()
    }
    return model.with_parameters(parameters)


@pytest.fixture
def identity_model():
    return init_model(4, hidden_size=3, flow_layers=2, conditioner_width=3, seed=7)


@pytest.fixture
def tiny_model(identity_model):
    return randomize_flow_outputs(identity_model, seed=11)
