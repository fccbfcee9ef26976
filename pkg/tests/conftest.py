import numpy as np
import pytest

from splinetomo.contribnet import ContribNet, default_net
from splinetomo.geometry import Ray, project_onto_plane


def random_rays(rng, n, half_extent, center=(0.0, 0.0, 0.0)):
    """Isotropic directions through uniform points of a cube."""
    om = rng.normal(size=(n, 3))
    om /= np.linalg.norm(om, axis=1, keepdims=True)
    p = np.asarray(center) + rng.uniform(-half_extent, half_extent, (n, 3))
    return [Ray(o, project_onto_plane(x, o)) for o, x in zip(om, p)]


@pytest.fixture(scope="session")
def random_net():
    """Untrained net with a random output layer: arbitrary but nonzero
    contributions, enough for structural checks."""
    net = ContribNet.initialize(seed=3)
    rng = np.random.default_rng(4)
    net.weights[-1] = rng.normal(size=net.weights[-1].shape) * 0.3
    net.biases[-1] = np.array([0.2])
    return net


@pytest.fixture(scope="session")
def trained_net():
    return default_net()


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Records one PASS/FAIL line per acceptance check and fails the test on FAIL."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
