"""
Discrete Bayesian network over a discovered DAG: maximum-likelihood CPDs with
additive smoothing and exact posterior queries by variable elimination.

CPD tables are numpy arrays shaped (*parent cardinalities, node cardinality)
with parents sorted by name; node values are domain indices 0..k-1.
"""
import json
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from src.causal.structure import CausalDag, export_dag, import_dag
from src.utils.config import CPD_SMOOTHING, CPD_SUM_TOLERANCE, MAX_CARDINALITY
from src.utils.errors import ConfigurationError, ContractError, DataError
from src.utils.logger import setup_logger

logger = setup_logger('bayesnet')

Evidence = Dict[str, int]


@dataclass(frozen=True)
class Factor:
    variables: Tuple[str, ...]
    values: np.ndarray

    def _expand(self, variables: Sequence[str]) -> np.ndarray:
        """Own values laid out along `variables`, with unit axes for the rest"""
        order = sorted(range(len(self.variables)), key=lambda k: variables.index(self.variables[k]))
        values = self.values.transpose(order)
        shape = [self.values.shape[self.variables.index(v)] if v in self.variables else 1 for v in variables]
        return values.reshape(shape)

    def product(self, other: 'Factor') -> 'Factor':
        variables = self.variables + tuple(v for v in other.variables if v not in self.variables)
        return Factor(variables, self._expand(variables) * other._expand(variables))

    def marginalize(self, variable: str) -> 'Factor':
        axis = self.variables.index(variable)
        return Factor(self.variables[:axis] + self.variables[axis + 1:], self.values.sum(axis=axis))

    def reduce(self, evidence: Evidence) -> 'Factor':
        variables, values = list(self.variables), self.values
        for name, value in evidence.items():
            if name in variables:
                axis = variables.index(name)
                values = np.take(values, value, axis=axis)
                variables.pop(axis)
        return Factor(tuple(variables), values)


UNIT = Factor((), np.array(1.0))


@dataclass
class CPD:
    node: str
    parents: Tuple[str, ...]
    table: np.ndarray

    def factor(self) -> Factor:
        return Factor(self.parents + (self.node,), self.table)


@dataclass
class DiscreteBayesNet:
    dag: CausalDag
    domains: Dict[str, int]          # node -> cardinality
    cpds: Dict[str, CPD] = field(default_factory=dict)

    @property
    def roles(self) -> Dict[str, str]:
        return self.dag.roles

    def nodes_with_role(self, role: str) -> List[str]:
        return [name for name, r in self.dag.nodes if r == role]

    def validate(self):
        for name in self.dag.names:
            cpd = self.cpds.get(name)
            if cpd is None:
                raise DataError(f"node {name!r} has no CPD")
            if list(cpd.parents) != self.dag.parents(name):
                raise DataError(f"CPD parents of {name!r} differ from the DAG")
            expected = tuple(self.domains[p] for p in cpd.parents) + (self.domains[name],)
            if cpd.table.shape != expected:
                raise DataError(f"CPD of {name!r} has shape {cpd.table.shape}, expected {expected}")
            if (cpd.table < 0).any() or (cpd.table > 1).any():
                raise DataError(f"CPD of {name!r} has entries outside [0, 1]")
            if np.abs(cpd.table.sum(axis=-1) - 1.0).max() > CPD_SUM_TOLERANCE:
                raise DataError(f"CPD of {name!r} is not normalised")
        return self


def fit_cpds(dag: CausalDag, data, smoothing: float = CPD_SMOOTHING,
             max_cardinality: int = MAX_CARDINALITY) -> DiscreteBayesNet:
    """(count + s) / (parent count + s*k); parent configurations never seen get a uniform row"""
    if smoothing < 0:
        raise ConfigurationError(f"smoothing must be non-negative, got {smoothing}")
    if len(data) == 0:
        raise DataError("cannot fit CPDs on an empty dataset")
    missing = [name for name in dag.names if name not in data.columns]
    if missing:
        raise DataError(f"DAG nodes missing from the dataset columns: {missing}")

    cardinalities = data.schema.cardinalities
    domains = {}
    for name in dag.names:
        k = cardinalities[name]
        if k > max_cardinality:
            raise DataError(f"column {name!r} has {k} values, above the cap of {max_cardinality}")
        domains[name] = k

    cpds = {}
    for name in dag.names:
        parents = tuple(dag.parents(name))
        shape = tuple(domains[p] for p in parents) + (domains[name],)
        counts = np.zeros(shape)
        index = tuple(data.column(p) for p in parents) + (data.column(name),)
        np.add.at(counts, index, 1.0)
        totals = counts.sum(axis=-1, keepdims=True)
        k = domains[name]
        with np.errstate(invalid='ignore', divide='ignore'):
            table = (counts + smoothing) / (totals + smoothing * k)
        table = np.where(totals + smoothing * k > 0, table, 1.0 / k)
        cpds[name] = CPD(node=name, parents=parents, table=table)
    logger.info(f"Fitted {len(cpds)} CPDs on {len(data)} rows (smoothing={smoothing})")
    return DiscreteBayesNet(dag=dag, domains=domains, cpds=cpds).validate()


class QueryResult(NamedTuple):
    probability: float
    zero_evidence: bool


def _check_evidence(bn: DiscreteBayesNet, target: str, evidence: Evidence):
    if target not in bn.domains:
        raise ConfigurationError(f"query target {target!r} is not in the network")
    if target in evidence:
        raise ContractError(f"query target {target!r} is also clamped as evidence")
    for name, value in evidence.items():
        if name not in bn.domains:
            raise ConfigurationError(f"evidence node {name!r} is not in the network")
        if not 0 <= value < bn.domains[name]:
            raise ConfigurationError(f"evidence {name}={value} outside its domain 0..{bn.domains[name] - 1}")


def _elimination_order_pick(factors: List[Factor], hidden: set) -> str:
    """Min-degree in the current interaction graph, ties by name"""
    def degree(var):
        neighbours = set()
        for f in factors:
            if var in f.variables:
                neighbours.update(f.variables)
        return len(neighbours - {var})
    return min(hidden, key=lambda v: (degree(v), v))


def query_distribution(bn: DiscreteBayesNet, target: str,
                       evidence: Optional[Evidence] = None) -> Tuple[np.ndarray, bool]:
    """Posterior over the target's domain; all zeros with the flag set when the evidence is impossible"""
    evidence = {k: int(v) for k, v in (evidence or {}).items()}
    _check_evidence(bn, target, evidence)

    # nodes outside the ancestral set of query and evidence sum out to one
    graph = bn.dag.to_networkx()
    relevant = {target, *evidence}
    for name in list(relevant):
        relevant |= nx.ancestors(graph, name)

    factors = [bn.cpds[name].factor().reduce(evidence) for name in sorted(relevant)]
    hidden = relevant - {target} - set(evidence)
    while hidden:
        var = _elimination_order_pick(factors, hidden)
        involved = [f for f in factors if var in f.variables]
        factors = [f for f in factors if var not in f.variables]
        product = UNIT
        for f in involved:
            product = product.product(f)
        factors.append(product.marginalize(var))
        hidden.discard(var)

    joint = UNIT
    for f in factors:
        joint = joint.product(f)
    dist = joint._expand((target,)).reshape(-1)
    total = float(dist.sum())
    if total <= 0.0:
        return np.zeros(bn.domains[target]), True
    return dist / total, False


def query_probability(bn: DiscreteBayesNet, target: str, value: int,
                      evidence: Optional[Evidence] = None) -> QueryResult:
    dist, zero = query_distribution(bn, target, evidence)
    if not 0 <= value < bn.domains[target]:
        raise ConfigurationError(f"{target}={value} outside its domain")
    return QueryResult(probability=float(dist[value]), zero_evidence=zero)


def bn_to_json(bn: DiscreteBayesNet) -> str:
    document = json.loads(export_dag(bn.dag, 'json'))
    document['domains'] = {name: bn.domains[name] for name in bn.dag.names}
    document['cpds'] = {
        name: {'parents': list(cpd.parents), 'table': cpd.table.tolist()}
        for name, cpd in bn.cpds.items()
    }
    return json.dumps(document, indent=2) + "\n"


def bn_from_json(text: str) -> DiscreteBayesNet:
    dag = import_dag(text, 'json')
    try:
        document = json.loads(text)
        domains = {name: int(k) for name, k in document['domains'].items()}
        cpds = {
            name: CPD(node=name, parents=tuple(entry['parents']), table=np.array(entry['table'], dtype=float))
            for name, entry in document['cpds'].items()
        }
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed Bayesian network JSON: {e}") from e
    return DiscreteBayesNet(dag=dag, domains=domains, cpds=cpds).validate()
