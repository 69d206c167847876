"""Shared builders and brute-force oracles for the test suite."""
import itertools

import numpy as np

from src.causal.bayesnet import CPD, DiscreteBayesNet, fit_cpds
from src.causal.features import Column, FeatureSchema
from src.causal.sampler import random_walk
from src.causal.structure import dag_from_matrix, default_tabu


def make_bn(names, roles, edges, tables, domains=None):
    """Hand-built network; tables maps node -> array shaped (*sorted parents, node)"""
    index = {name: k for k, name in enumerate(names)}
    W = np.zeros((len(names), len(names)))
    for u, v in edges:
        W[index[u], index[v]] = 1.0
    dag = dag_from_matrix(W, names, roles)
    domains = domains or {name: 2 for name in names}
    cpds = {name: CPD(name, tuple(dag.parents(name)), np.asarray(tables[name], dtype=float)) for name in names}
    return DiscreteBayesNet(dag=dag, domains=domains, cpds=cpds).validate()


def enumerate_posterior(bn, target, value, evidence):
    """Brute-force P(target=value | evidence) over the full joint"""
    names = bn.dag.names
    numerator = denominator = 0.0
    for assignment in itertools.product(*(range(bn.domains[n]) for n in names)):
        point = dict(zip(names, assignment))
        if any(point[k] != v for k, v in evidence.items()):
            continue
        joint = 1.0
        for name in names:
            cpd = bn.cpds[name]
            joint *= cpd.table[tuple(point[p] for p in cpd.parents) + (point[name],)]
        denominator += joint
        if point[target] == value:
            numerator += joint
    return numerator / denominator if denominator > 0 else 0.0


def random_network(rng, n_nodes):
    """Random binary network on a random topological order, at most three parents per node"""
    names = [f"v{k:02d}" for k in range(n_nodes)]
    edges = []
    for j in range(1, n_nodes):
        candidates = list(range(j))
        count = int(rng.integers(0, min(3, j) + 1))
        for i in rng.choice(candidates, size=count, replace=False):
            edges.append((names[int(i)], names[j]))
    tables = {}
    for name in names:
        n_parents = sum(1 for _, v in edges if v == name)
        p = rng.uniform(0.05, 0.95, size=(2,) * n_parents)
        tables[name] = np.stack([1 - p, p], axis=-1)
    return make_bn(names, ['state'] * n_nodes, edges, tables)


class MatrixSchema:
    def __init__(self, names, roles, cardinalities):
        self._columns = [Column(name, role, k) for name, role, k in zip(names, roles, cardinalities)]

    def columns(self):
        return list(self._columns)

    @property
    def names(self):
        return [c.name for c in self._columns]

    @property
    def cardinalities(self):
        return {c.name: c.cardinality for c in self._columns}


class MatrixData:
    """Stand-in for a Dataset over arbitrary columns: real-valued SEM samples or small discrete tables"""

    def __init__(self, X, names=None, roles=None, cardinalities=None):
        self.X = np.asarray(X)
        names = names or [f"x{k + 1}" for k in range(self.X.shape[1])]
        if cardinalities is None:
            integral = np.issubdtype(self.X.dtype, np.integer)
            cardinalities = [int(self.X[:, k].max()) + 1 if integral else 0 for k in range(len(names))]
        self.schema = MatrixSchema(names, roles or ["state"] * len(names), cardinalities)

    @property
    def columns(self):
        return self.schema.names

    def __len__(self):
        return len(self.X)

    def column(self, name):
        return self.X[:, self.schema.names.index(name)]


TAXI_EDGES = (
    ('taxi_on_pax_loc', 'pax_in_taxi_next'), ('action_pickup', 'pax_in_taxi_next'),
    ('pax_in_taxi', 'pax_in_taxi_next'), ('taxi_on_dest', 'dropoff_next'),
    ('pax_in_taxi', 'dropoff_next'), ('action_dropoff', 'dropoff_next'),
)


def taxi_dag():
    """Core-tier DAG with the causes of both sub-goals"""
    schema = FeatureSchema()
    names = schema.names
    W = np.zeros((len(names), len(names)))
    for u, v in TAXI_EDGES:
        W[names.index(u), names.index(v)] = 0.5
    dag = dag_from_matrix(W, names, [schema.roles[n] for n in names])
    dag.tabu = default_tabu(schema)
    return dag


def taxi_network(env, steps=20000, seed=0, smoothing=1.0):
    return fit_cpds(taxi_dag(), random_walk(env, steps, seed), smoothing)
