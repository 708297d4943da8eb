import time

import numpy as np
import pytest

from specklecrypt import harness


@pytest.fixture(scope="session")
def desk_config():
    """The default desk-scale experiment configuration."""
    return harness.ExperimentConfig()


@pytest.fixture(scope="session")
def desk_data(desk_config):
    """Corpus, key, and encrypted splits for the desk config."""
    return harness.prepare_experiment(desk_config)


@pytest.fixture(scope="session")
def desk_trained(desk_data):
    """Decoder trained once per session on the desk config, with wall time.

    Shared by the acceptance criteria that state "given a trained model".
    """
    start = time.perf_counter()
    model, history = harness.train_decoder(desk_data)
    elapsed = time.perf_counter() - start
    return model, history, elapsed


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(12345))
