import numpy as np
import pytest

from upass.dynamics import DynamicsLog


def random_log(
    rng: np.random.Generator,
    n_samples: int = 5,
    n_epochs: int = 4,
    n_classes: int = 3,
    labeled: bool = True,
    recording_ids: tuple[str, ...] | None = None,
) -> DynamicsLog:
    """Random valid dynamics log: Dirichlet probability rows, uniform labels."""
    probs = rng.dirichlet(np.ones(n_classes), size=(n_samples, n_epochs))
    labels = (
        rng.integers(0, n_classes, size=n_samples)
        if labeled
        else np.full(n_samples, -1, dtype=np.int64)
    )
    sids = tuple(f"s{i:04d}" for i in range(n_samples))
    rids = recording_ids or tuple("rec0" for _ in range(n_samples))
    return DynamicsLog(sample_ids=sids, recording_ids=rids, probs=probs, labels=labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
