import numpy as np
import pytest

from transkge.kg import GeneratorSpec, TripleStore, Vocabulary, generate_synthetic_kg
from transkge.training import init_params


def random_store(rng, n_entities, n_relations, n_train, n_valid=0, n_test=0):
    def rows(n):
        return np.stack([rng.integers(0, n_entities, n), rng.integers(0, n_relations, n),
                         rng.integers(0, n_entities, n)], axis=1)

    return TripleStore(Vocabulary(n_entities, n_relations), rows(n_train), rows(n_valid), rows(n_test))


def random_params(rng, scorer, n_entities, n_relations, dim, scale=0.5, anchors=None):
    """Parameters with every table (auxiliaries included) filled with random values."""
    params = init_params(n_entities, n_relations, dim, scorer, seed=0, anchors=anchors)
    for v in params.tables.values():
        v[...] = rng.uniform(-scale, scale, v.shape)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_kg():
    return generate_synthetic_kg(GeneratorSpec(60, 5, multi_relation_fraction=0.5), seed=3)


@pytest.fixture
def path_store():
    # undirected path 0 - 1 - 2 plus isolated entity 3
    return TripleStore(Vocabulary(4, 1), train=[(0, 0, 1), (1, 0, 2)])


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
