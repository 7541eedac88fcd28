import numpy as np
import pytest

from brepfields import corpus


@pytest.fixture(scope="session")
def cube():
    brep, labels = corpus.make_box(1.0, 1.0, 1.0, name="unit_cube")
    return brep, labels


@pytest.fixture(scope="session")
def cylinder():
    brep, labels = corpus.make_cylinder(0.5, 1.2)
    return brep, labels


@pytest.fixture(scope="session")
def through_hole():
    brep, labels = corpus.make_box_through_hole(1.5, 1.2, 1.0, 0.3)
    return brep, labels


@pytest.fixture(scope="session")
def tiny_corpus():
    counts = {f: 2 for f in corpus.FAMILIES}
    return corpus.generate_corpus(counts, seed=1234)


def rng_for(tag: str, trial: int = 0) -> np.random.Generator:
    return np.random.default_rng(abs(hash((tag, trial))) % (2**32))
