import pytest

from gmmpc.data import Dataset
from gmmpc.evaluation import sample
from gmmpc.synthetic import collider_model


@pytest.fixture(scope="session")
def collider_data() -> Dataset:
    """2000 instances from the known collider model."""
    return sample(collider_model(), 2000, seed=42)
