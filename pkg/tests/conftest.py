import pytest

from src.envs.graph import GraphEnv, RoadGraph
from src.envs.grid import GridEnv, default_taxi_config


@pytest.fixture
def taxi_env():
    return GridEnv(default_taxi_config(), env_id='taxi5')


@pytest.fixture
def diamond_graph():
    """Two routes from 0 to 3: via 1 costs 1 + 1, via 2 costs 2 + 1"""
    nodes = ((0, 0.0, 0.0), (1, 1.0, 0.0), (2, 0.0, 1.0), (3, 1.0, 1.0))
    edges = ((0, 1, 1.0, False), (1, 3, 1.0, False), (0, 2, 2.0, False), (2, 3, 1.0, False))
    return RoadGraph(nodes=nodes, edges=edges)


@pytest.fixture
def path_graph():
    """0 - 1 - 2 - 3 with lengths 1.5, 2.0, 0.5"""
    nodes = tuple((i, float(i), 0.0) for i in range(4))
    edges = ((0, 1, 1.5, False), (1, 2, 2.0, False), (2, 3, 0.5, False))
    return RoadGraph(nodes=nodes, edges=edges)


@pytest.fixture
def path_env(path_graph):
    return GraphEnv(path_graph)

