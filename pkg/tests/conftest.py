from pathlib import Path

import numpy as np
import pytest

from src.bounds.dualopt import PgdConfig
from src.network.domains import Box
from src.pmnr.loop import PmnrConfig
from src.verify.instances import random_query, running_example_network, running_example_query


FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def running_net():
    return running_example_network()


@pytest.fixture
def running_query():
    return running_example_query()


@pytest.fixture
def unit_box():
    return Box(lower=[-1.0, -1.0], upper=[1.0, 1.0])


@pytest.fixture
def fast_pgd():
    return PgdConfig(iters=60)


@pytest.fixture
def fast_pmnr(fast_pgd):
    """Span scoring reproduces the running example's group choice and keeps runs short."""
    return PmnrConfig(scorer="span", iterations=2, pgd=fast_pgd, alpha_final_steps=10)


@pytest.fixture
def make_random_query():
    def _make(seed: int, **kwargs):
        return random_query(seed, **kwargs)

    return _make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
