import json
from pathlib import Path

import numpy as np
import pytest

from caelmips.oracle import DiscreteInstance

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def reference():
    return json.loads((FIXTURES / "reference_values.json").read_text())


def small_instance() -> DiscreteInstance:
    """2 contexts, 3 actions, 2 embeddings; rewards depend on the action given e."""
    p_x = np.array([0.6, 0.4])
    p_e = np.array(
        [
            [[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]],
            [[1.0, 0.0], [0.4, 0.6], [0.1, 0.9]],
        ]
    )
    support = np.array([0.0, 1.0, 4.0])
    pmf = np.zeros((2, 3, 2, 3))
    pmf[..., 0] = 0.5
    pmf[..., 1] = 0.3
    pmf[..., 2] = 0.2
    pmf[0, 1, 0] = [0.1, 0.3, 0.6]
    pmf[1, 2, 1] = [0.8, 0.1, 0.1]
    pmf[0, 0, 1] = [0.2, 0.2, 0.6]
    mu = np.array([[0.5, 0.3, 0.2], [1 / 3, 1 / 3, 1 / 3]])
    pi = np.array([[0.1, 0.6, 0.3], [0.7, 0.2, 0.1]])
    return DiscreteInstance(p_x=p_x, p_e=p_e, reward_support=support, reward_pmf=pmf, pi=pi, mu=mu)


@pytest.fixture
def instance():
    return small_instance()
