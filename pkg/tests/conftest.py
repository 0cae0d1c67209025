import json
from importlib import resources

import numpy as np
import pytest

import mfgnet as mn


def bundled_text(name: str) -> str:
    return (resources.files("mfgnet") / "data" / name).read_text()


@pytest.fixture(scope="session")
def single_edge():
    """Unit edge from the exit at the origin to a reflecting far end."""
    return mn.build_network([(0, (0.0, 0.0)), (1, (1.0, 0.0))], [(0, 0, 1, 1.0)], 0)


@pytest.fixture(scope="session")
def three_star():
    """Three unit edges meeting at a center, exit at one leaf."""
    return mn.build_network(
        [(0, (1.0, 0.0)), (1, (0.0, 0.0)), (2, (-0.5, 0.9)), (3, (-0.5, -0.9))],
        [(0, 1, 0, 1.0), (1, 1, 2, 1.0), (2, 1, 3, 1.0)],
        0)


@pytest.fixture(scope="session")
def example1_config():
    return mn.parse_config(bundled_text("example1.json"))


@pytest.fixture(scope="session")
def example2_config():
    return mn.parse_config(bundled_text("example2.json"))


@pytest.fixture(scope="session")
def desk_config():
    return mn.parse_config(bundled_text("desk.json"))


def random_tree_network(rng: np.random.Generator, n_extra_edges: int = 0):
    """Random connected topology: a spanning tree plus optional chords,
    with the exit attached as a fresh leaf so its degree is always 1."""
    n = int(rng.integers(2, 7))
    pts = rng.uniform(-2, 2, size=(n, 2))
    vertices = [(i, tuple(pts[i])) for i in range(n)]
    edges = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append((len(edges), j, i, float(rng.uniform(0.5, 2.0))))
    for _ in range(n_extra_edges):
        i, j = rng.choice(n, size=2, replace=False)
        edges.append((len(edges), int(i), int(j), float(rng.uniform(0.5, 2.0))))
    # fresh leaf -> exit
    exit_id = n
    vertices.append((exit_id, tuple(rng.uniform(-2, 2, size=2))))
    hub = int(rng.integers(0, n))
    edges.append((len(edges), exit_id, hub, float(rng.uniform(0.5, 2.0))))
    return mn.build_network(vertices, edges, exit_id)


def assert_json_equal(a, b):
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
