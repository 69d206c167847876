"""
Causal structure discovery over the sampled dataset.

Continuous optimisation of a weighted adjacency W (x ~ x W) with the smooth
acyclicity function h(W) = tr(exp(W o W)) - d, solved by augmented-Lagrangian
outer iterations around L-BFGS-B on the doubled variables (W+, W-). Tabu
entries get (0, 0) bounds so they stay exactly zero throughout.

Optionally the columns are z-scored first and the thresholded graph is
refitted as a plain lasso on its own topological order, which keeps weak
but real effects of rare indicator columns from being thresholded away.
"""
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import scipy.linalg as slin
import scipy.optimize as sopt

from src.causal.features import ACTION, GOAL, GOAL_NODES, POSITIONAL_NODES, ROLES, STATE, FeatureSchema
from src.utils.config import (
    EDGE_THRESHOLD, H_SHRINK_FACTOR, H_TOLERANCE, L1_PENALTY, MAX_OUTER_ITERATIONS,
    RHO_GROWTH, RHO_INIT, RHO_MAX, TAXI_DISCOVERY_L1, TAXI_DISCOVERY_THRESHOLD,
)
from src.utils.errors import ConfigurationError, ConvergenceError, DataError
from src.utils.logger import setup_logger

logger = setup_logger('structure')

NodeSpec = Tuple[str, str]  # (name, role)


@dataclass(frozen=True)
class TabuSpec:
    forbidden_parent_roles: Tuple[Tuple[str, str], ...] = ()
    forbidden_edges: Tuple[Tuple[str, str], ...] = ()
    forbidden_nodes: Tuple[str, ...] = ()
    root_nodes: Tuple[str, ...] = ()   # may not have parents

    def validate(self, nodes: Sequence[NodeSpec]):
        names = {name for name, _ in nodes}
        for parent_role, child_role in self.forbidden_parent_roles:
            if parent_role not in ROLES or child_role not in ROLES:
                raise ConfigurationError(f"unknown role pair {parent_role}->{child_role} in tabu")
        referenced = [n for edge in self.forbidden_edges for n in edge]
        referenced += list(self.forbidden_nodes) + list(self.root_nodes)
        unknown = sorted(set(referenced) - names)
        if unknown:
            raise ConfigurationError(f"tabu references unknown nodes: {unknown}")
        return self

    def to_dict(self) -> dict:
        return {
            'forbidden_parent_roles': [list(p) for p in self.forbidden_parent_roles],
            'forbidden_edges': [list(e) for e in self.forbidden_edges],
            'forbidden_nodes': list(self.forbidden_nodes),
            'root_nodes': list(self.root_nodes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'TabuSpec':
        return cls(
            forbidden_parent_roles=tuple(tuple(p) for p in data.get('forbidden_parent_roles', ())),
            forbidden_edges=tuple(tuple(e) for e in data.get('forbidden_edges', ())),
            forbidden_nodes=tuple(data.get('forbidden_nodes', ())),
            root_nodes=tuple(data.get('root_nodes', ())),
        )


def default_tabu(schema: FeatureSchema) -> TabuSpec:
    """Role-based tabu: states and actions cause goals, never the other way round.

    Drop-off never causes passenger-in-taxi and positional nodes are roots.
    """
    names = schema.names
    return TabuSpec(
        forbidden_parent_roles=(
            (GOAL, STATE), (GOAL, ACTION), (ACTION, STATE), (STATE, ACTION), (ACTION, ACTION),
        ),
        forbidden_edges=(('dropoff_next', 'pax_in_taxi_next'),),
        root_nodes=tuple(n for n in POSITIONAL_NODES if n in names),
    )


@dataclass(frozen=True)
class DiscoveryParams:
    l1_penalty: float = L1_PENALTY
    threshold: float = EDGE_THRESHOLD
    max_outer_iterations: int = MAX_OUTER_ITERATIONS
    h_tolerance: float = H_TOLERANCE
    rho_max: float = RHO_MAX
    standardize: bool = False             # z-score every column before solving
    polish: bool = False                  # order-restricted lasso refit after thresholding
    require_action_parents: bool = False  # DataError when a sub-goal node ends without an action parent

    def validate(self):
        if self.l1_penalty < 0 or self.threshold < 0:
            raise ConfigurationError("l1_penalty and threshold must be non-negative")
        if self.max_outer_iterations < 1:
            raise ConfigurationError("max_outer_iterations must be positive")
        if self.h_tolerance <= 0:
            raise ConfigurationError("h_tolerance must be positive")
        return self

    def to_dict(self) -> dict:
        return {'l1_penalty': self.l1_penalty, 'threshold': self.threshold,
                'max_outer_iterations': self.max_outer_iterations, 'h_tolerance': self.h_tolerance,
                'standardize': self.standardize, 'polish': self.polish,
                'require_action_parents': self.require_action_parents}


# Indicator columns have very different variances (a goal event fires on well under 1% of rows), so the
# taxi preset works on z-scored columns and refits the thresholded structure on its own topological order
TAXI_DISCOVERY = DiscoveryParams(l1_penalty=TAXI_DISCOVERY_L1, threshold=TAXI_DISCOVERY_THRESHOLD,
                                 standardize=True, polish=True, require_action_parents=True)


@dataclass
class CausalDag:
    nodes: List[NodeSpec]
    weights: np.ndarray                 # W[i, j] != 0  <=>  edge i -> j
    tabu: TabuSpec = field(default_factory=TabuSpec)
    params: Dict = field(default_factory=dict)
    h_value: float = 0.0
    history: List[Dict] = field(default_factory=list, repr=False)   # one record per outer iteration

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.nodes]

    @property
    def roles(self) -> Dict[str, str]:
        return dict(self.nodes)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigurationError(f"node {name!r} is not in the DAG")

    def edges(self) -> List[Tuple[str, str, float]]:
        names = self.names
        rows, cols = np.nonzero(self.weights)
        return [(names[i], names[j], float(self.weights[i, j])) for i, j in zip(rows, cols)]

    def parents(self, name: str) -> List[str]:
        j = self.index(name)
        return sorted(self.names[i] for i in np.nonzero(self.weights[:, j])[0])

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        for name, role in self.nodes:
            graph.add_node(name, role=role)
        for u, v, w in self.edges():
            graph.add_edge(u, v, weight=w)
        return graph

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.to_networkx())

    def violations(self) -> List[Tuple[str, str]]:
        mask = tabu_mask(self.nodes, self.tabu)
        return [(u, v) for u, v, _ in self.edges() if mask[self.index(u), self.index(v)]]


def tabu_mask(nodes: Sequence[NodeSpec], tabu: TabuSpec) -> np.ndarray:
    """Boolean d x d mask, True where an entry of W must stay zero (diagonal included)"""
    tabu.validate(nodes)
    names = [name for name, _ in nodes]
    roles = [role for _, role in nodes]
    d = len(nodes)
    mask = np.eye(d, dtype=bool)
    for parent_role, child_role in tabu.forbidden_parent_roles:
        rows = np.array([r == parent_role for r in roles])
        cols = np.array([r == child_role for r in roles])
        mask |= np.outer(rows, cols)
    for u, v in tabu.forbidden_edges:
        mask[names.index(u), names.index(v)] = True
    for name in tabu.forbidden_nodes:
        i = names.index(name)
        mask[i, :] = mask[:, i] = True
    for name in tabu.root_nodes:
        mask[:, names.index(name)] = True
    return mask


def apply_tabu(W: np.ndarray, tabu: TabuSpec, nodes: Sequence[NodeSpec]) -> np.ndarray:
    if W.shape != (len(nodes), len(nodes)):
        raise ConfigurationError(f"weight matrix {W.shape} does not match {len(nodes)} nodes")
    masked = W.copy()
    if tabu == TabuSpec():
        return masked
    masked[tabu_mask(nodes, tabu) & ~np.eye(len(nodes), dtype=bool)] = 0.0
    return masked


def h_acyclicity(W: np.ndarray) -> Tuple[float, np.ndarray]:
    """Value and gradient of tr(exp(W o W)) - d"""
    E = slin.expm(W * W)
    return float(np.trace(E) - W.shape[0]), E.T * W * 2


def _covariance(X: np.ndarray) -> np.ndarray:
    X = X - X.mean(axis=0, keepdims=True)
    return X.T @ X / X.shape[0]  # the squared loss depends on X only through its covariance


def _squared_loss(W: np.ndarray, cov: np.ndarray) -> Tuple[float, np.ndarray]:
    R = np.eye(W.shape[0]) - W
    return 0.5 * float(np.trace(R.T @ cov @ R)), -cov @ R


def _split(w: np.ndarray, d: int) -> np.ndarray:
    return (w[:d * d] - w[d * d:]).reshape([d, d])


def _bounds(frozen: np.ndarray) -> List[Tuple[float, Optional[float]]]:
    flat = frozen.ravel()
    return [(0, 0) if flat[k] else (0, None) for _ in range(2) for k in range(flat.size)]


def notears(X: np.ndarray, mask: np.ndarray, params: DiscoveryParams) -> Tuple[np.ndarray, float, List[Dict]]:
    """Augmented-Lagrangian solve on centred data; returns (W, h, per-iteration history).

    Each history record holds the multipliers the accepted inner solve ran
    under, the objective at its starting point and at its solution, and h.
    """
    d = X.shape[1]
    cov = _covariance(X)
    lambda1 = params.l1_penalty

    def _adj(w):
        return _split(w, d)

    def _func(w):
        W = _adj(w)
        loss, G_loss = _squared_loss(W, cov)
        h, G_h = h_acyclicity(W)
        obj = loss + 0.5 * rho * h * h + alpha * h + lambda1 * w.sum()
        G_smooth = G_loss + (rho * h + alpha) * G_h
        return obj, np.concatenate((G_smooth + lambda1, -G_smooth + lambda1), axis=None)

    bounds = _bounds(mask)
    w_est, rho, alpha, h = np.zeros(2 * d * d), RHO_INIT, 0.0, np.inf
    history = []

    for iteration in range(params.max_outer_iterations):
        w_new, h_new, obj, start = w_est, h, float('nan'), float('nan')
        while rho < params.rho_max:
            sol = sopt.minimize(_func, w_est, method='L-BFGS-B', jac=True, bounds=bounds)
            w_new, obj = sol.x, float(sol.fun)
            start = _func(w_est)[0]
            h_new, _ = h_acyclicity(_adj(w_new))
            if h_new > H_SHRINK_FACTOR * h:
                rho *= RHO_GROWTH
            else:
                break
        w_est, h = w_new, h_new
        history.append({'iteration': iteration + 1, 'rho': rho, 'alpha': alpha,
                        'start_objective': start, 'objective': obj, 'h': h})
        logger.debug(f"Outer iteration {iteration + 1}: h={h:.3e} rho={rho:.1e}")
        alpha += rho * h
        if h <= params.h_tolerance or rho >= params.rho_max:
            break

    return _adj(w_est), h, history


def _repair_cycles(W: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """Delete the weakest edge of each surviving cycle until the graph is a DAG"""
    W = W.copy()
    graph = nx.DiGraph()
    graph.add_nodes_from(range(len(names)))
    graph.add_edges_from(zip(*np.nonzero(W)))
    while True:
        try:
            cycle = nx.find_cycle(graph)
        except nx.NetworkXNoCycle:
            return W
        u, v = min(cycle, key=lambda e: (abs(W[e[0], e[1]]), e))[:2]
        logger.warning(f"Residual cycle after thresholding; dropping {names[u]} -> {names[v]} "
                       f"(weight {W[u, v]:.4f})")
        W[u, v] = 0.0
        graph.remove_edge(u, v)


_ROLE_RANK = {ACTION: 0, STATE: 1, GOAL: 2}


def causal_order(W: np.ndarray, nodes: Sequence[NodeSpec]) -> List[int]:
    """Topological order of an acyclic W; ties go actions, then states, then goals, then column order"""
    graph = nx.DiGraph()
    graph.add_nodes_from(range(len(nodes)))
    graph.add_edges_from(zip(*np.nonzero(W)))
    return list(nx.lexicographical_topological_sort(graph, key=lambda k: (_ROLE_RANK[nodes[k][1]], k)))


def polish_on_order(X: np.ndarray, mask: np.ndarray, nodes: Sequence[NodeSpec], order: Sequence[int],
                    l1_penalty: float) -> np.ndarray:
    """Lasso refit of every node on the nodes before it in `order`.

    Tabu entries stay zero and no goal node is used as a regressor: goal
    indicators are outcomes of the same transition, and one would absorb
    the action effect on another. The result is acyclic by construction.
    """
    d = len(nodes)
    position = np.empty(d, dtype=int)
    position[list(order)] = np.arange(d)
    is_goal = np.array([role == GOAL for _, role in nodes])
    frozen = mask | (position[:, None] >= position[None, :]) | is_goal[:, None]
    cov = _covariance(X)

    def _func(w):
        loss, G_loss = _squared_loss(_split(w, d), cov)
        return loss + l1_penalty * w.sum(), np.concatenate((G_loss + l1_penalty, -G_loss + l1_penalty), axis=None)

    sol = sopt.minimize(_func, np.zeros(2 * d * d), method='L-BFGS-B', jac=True, bounds=_bounds(frozen))
    return _split(sol.x, d)


def missing_action_parents(W: np.ndarray, nodes: Sequence[NodeSpec]) -> List[str]:
    """Sub-goal nodes with no action among their parents"""
    actions = np.array([role == ACTION for _, role in nodes])
    return [name for j, (name, _) in enumerate(nodes)
            if name in GOAL_NODES and not np.any(W[actions, j])]


def discover_structure(data, tabu: Optional[TabuSpec] = None,
                       params: Optional[DiscoveryParams] = None) -> CausalDag:
    """Learn a DAG over the dataset's schema columns.

    Forbidden nodes are left out entirely. Constant columns cannot carry a
    signal and are isolated with a warning.
    """
    params = (params or DiscoveryParams()).validate()
    tabu = tabu or TabuSpec()
    schema_nodes = [(c.name, c.role) for c in data.schema.columns()]
    tabu.validate(schema_nodes)
    nodes = [(name, role) for name, role in schema_nodes if name not in tabu.forbidden_nodes]
    d = len(nodes)
    if len(data) < 10 * d:
        raise DataError(f"structure discovery needs at least {10 * d} rows for {d} nodes, got {len(data)}")

    X = np.column_stack([data.column(name) for name, _ in nodes]).astype(float)
    spread = X.std(axis=0)
    if params.standardize:
        X = (X - X.mean(axis=0)) / np.where(spread > 0, spread, 1.0)
    kept_tabu = TabuSpec(
        forbidden_parent_roles=tabu.forbidden_parent_roles,
        forbidden_edges=tuple(e for e in tabu.forbidden_edges if not set(e) & set(tabu.forbidden_nodes)),
        root_nodes=tuple(n for n in tabu.root_nodes if n not in tabu.forbidden_nodes),
    )
    mask = tabu_mask(nodes, kept_tabu)
    for j in np.nonzero(spread == 0)[0]:
        logger.warning(f"Column {nodes[j][0]!r} is constant; isolating it")
        mask[j, :] = mask[:, j] = True

    W, h, history = notears(X, mask, params)
    if h > params.h_tolerance:
        raise ConvergenceError(f"structure discovery did not reach h <= {params.h_tolerance:g} "
                               f"within {params.max_outer_iterations} outer iterations", h)

    W[np.abs(W) < params.threshold] = 0.0
    W[mask] = 0.0
    W = _repair_cycles(W, [name for name, _ in nodes])
    if params.polish:
        W = polish_on_order(X, mask, nodes, causal_order(W, nodes), params.l1_penalty)
        W[np.abs(W) < params.threshold] = 0.0
    if params.require_action_parents:
        missing = missing_action_parents(W, nodes)
        if missing:
            raise DataError(f"no action parent survived for sub-goal nodes {missing}; "
                            f"sample a longer walk or lower the threshold")
    logger.info(f"Discovered {int(np.count_nonzero(W))} edges over {d} nodes (h={h:.2e})")
    return CausalDag(nodes=nodes, weights=W, tabu=tabu, params=params.to_dict(), h_value=h, history=history)


def adjacency(dag: CausalDag) -> np.ndarray:
    return (dag.weights != 0).astype(int)


def structural_hamming_distance(truth: np.ndarray, estimate: np.ndarray) -> int:
    """Missing, extra and reversed edges; a reversal counts once"""
    a, b = truth != 0, estimate != 0
    d = a.shape[0]
    shd = 0
    for i in range(d):
        for j in range(i + 1, d):
            if (a[i, j], a[j, i]) != (b[i, j], b[j, i]):
                shd += 1
    return shd


def random_dag_weights(d: int, n_edges: int, rng, low: float = 0.5, high: float = 1.5) -> np.ndarray:
    """Random DAG on a random topological order, weights uniform in +/-[low, high]"""
    order = rng.permutation(d)
    pairs = [(order[i], order[j]) for i in range(d) for j in range(i + 1, d)]
    n_edges = min(n_edges, len(pairs))
    W = np.zeros((d, d))
    for k in rng.choice(len(pairs), size=n_edges, replace=False):
        u, v = pairs[k]
        W[u, v] = rng.uniform(low, high) * rng.choice([-1.0, 1.0])
    return W


def simulate_linear_sem(W: np.ndarray, n: int, rng, noise_scale: float = 1.0) -> np.ndarray:
    """Samples of x = x W + e with Gaussian noise"""
    d = W.shape[0]
    noise = rng.normal(scale=noise_scale, size=(n, d))
    return noise @ np.linalg.inv(np.eye(d) - W)


def dag_from_matrix(W: np.ndarray, names: Sequence[str], roles: Optional[Sequence[str]] = None) -> CausalDag:
    roles = roles or [STATE] * len(names)
    return CausalDag(nodes=list(zip(names, roles)), weights=np.asarray(W, dtype=float).copy())


def export_dag(dag: CausalDag, fmt: str = 'json') -> str:
    if fmt == 'json':
        document = {
            'nodes': [{'name': name, 'role': role} for name, role in dag.nodes],
            'edges': [{'from': u, 'to': v, 'weight': w} for u, v, w in dag.edges()],
            'tabu': dag.tabu.to_dict(),
            'params': dag.params,
        }
        return json.dumps(document, indent=2) + "\n"
    if fmt == 'dot':
        lines = ["digraph causal_dag {"]
        for name, role in dag.nodes:
            style = ', shape=doublecircle' if role == GOAL else ''
            lines.append(f'  "{name}" [role="{role}"{style}];')
        for u, v, w in dag.edges():
            lines.append(f'  "{u}" -> "{v}" [weight="{w!r}", label="{w:.3f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ConfigurationError(f"unknown DAG format {fmt!r}")


_DOT_NODE = re.compile(r'^\s*"([^"]+)"\s*\[role="(\w+)"')
_DOT_EDGE = re.compile(r'^\s*"([^"]+)"\s*->\s*"([^"]+)"\s*\[weight="([^"]+)"')


def import_dag(text: str, fmt: str = 'json') -> CausalDag:
    if fmt == 'json':
        try:
            document = json.loads(text)
            nodes = [(n['name'], n['role']) for n in document['nodes']]
            edges = [(e['from'], e['to'], float(e['weight'])) for e in document.get('edges', [])]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"malformed DAG JSON: {e}") from e
        tabu = TabuSpec.from_dict(document.get('tabu', {}))
        params = document.get('params', {})
    elif fmt == 'dot':
        nodes, edges = [], []
        for line in text.splitlines():
            edge = _DOT_EDGE.match(line)
            if edge:
                edges.append((edge.group(1), edge.group(2), float(edge.group(3))))
                continue
            node = _DOT_NODE.match(line)
            if node:
                nodes.append((node.group(1), node.group(2)))
        tabu, params = TabuSpec(), {}
    else:
        raise ConfigurationError(f"unknown DAG format {fmt!r}")

    names = [name for name, _ in nodes]
    W = np.zeros((len(nodes), len(nodes)))
    for u, v, w in edges:
        if u not in names or v not in names:
            raise DataError(f"edge {u} -> {v} references an undeclared node")
        W[names.index(u), names.index(v)] = w
    dag = CausalDag(nodes=nodes, weights=W, tabu=tabu, params=params)
    if not dag.is_acyclic():
        raise DataError("imported graph contains a cycle")
    return dag


def load_tabu(path) -> TabuSpec:
    try:
        return TabuSpec.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read tabu file {path}: {e}") from e
