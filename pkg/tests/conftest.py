import numpy as np
import pytest

from lipcert import ArchitectureSpec, make_activation


def random_architecture(
    rng: np.random.Generator,
    max_width: int = 8,
    max_hidden: int = 4,
    kinds: tuple[str, ...] = ("tanh", "sigmoid"),
    min_hidden: int = 0,
) -> ArchitectureSpec:
    """Random dense architecture within the sweep ranges."""
    m = int(rng.integers(min_hidden, max_hidden + 1))
    widths = tuple(int(w) for w in rng.integers(1, max_width + 1, size=m + 2))
    acts = tuple(make_activation(str(rng.choice(kinds))) for _ in range(m))
    return ArchitectureSpec(widths=widths, activations=acts)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
