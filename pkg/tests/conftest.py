import itertools

import numpy as np
import pytest

from mixquant.processes import FiniteMarkov, list_presets, load_model


def markov_presets():
    return {name: load_model(name) for name in list_presets() if isinstance(load_model(name), FiniteMarkov)}


@pytest.fixture(scope="session")
def chains():
    return markov_presets()


@pytest.fixture
def sym2():
    return FiniteMarkov([[0.9, 0.1], [0.1, 0.9]], [0.0, 1.0])


@pytest.fixture
def forcing3():
    return load_model("markov_forcing3")


def enumerate_paths(chain, n):
    """Yield (state path, probability) for every length-n path of a stationary chain."""
    nu = chain.stationary
    P = chain.transition
    S = chain.n_states
    for path in itertools.product(range(S), repeat=n):
        prob = nu[path[0]]
        for a, b in zip(path, path[1:]):
            prob *= P[a, b]
        if prob > 0:
            yield path, prob


@pytest.fixture(scope="session")
def path_enumerator():
    return enumerate_paths


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
