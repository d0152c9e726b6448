import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from copyshield.numerics import Layer, Model

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_model(widths, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    layers = []
    for k, (nin, nout) in enumerate(zip(widths[:-1], widths[1:])):
        act = "identity" if k == len(widths) - 2 else "relu"
        layers.append(Layer(scale * rng.normal(size=(nout, nin)) / np.sqrt(nin),
                            0.1 * rng.normal(size=nout), act))
    return Model(tuple(layers))


def linear_model(W, b):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return Model((Layer(W, np.asarray(b, dtype=float), "identity"),))


@pytest.fixture
def small_model():
    return random_model((6, 5, 3), seed=3)


# One PASS/FAIL line per acceptance criterion, repeated in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
