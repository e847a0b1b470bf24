"""
Communication Graph
^^^^^^^^^^^^^^^^^^^

.. contents:: Table of Contents
    :backlinks: none
    :local:

Introduction
------------

Undirected communication graphs over agents labelled `0..N-1`, the choice
of the learning subgraph `𝒢_d` (a maximum-degree hub together with `d_max`
of its neighbors), the structured network and subgraph costs, and the
sparsity pattern a distributed gain must respect.

Connectivity is never assumed.
"""
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .error import ConfigurationError, DimensionError, NotPositiveDefiniteError
from .patterned import PatternedMatrix, make_patterned
from .utils.ensure import ensure
from .utils.numeric import (
    as_matrix,
    ensure_square,
    ensure_symmetric,
    is_positive_definite,
    is_positive_semidefinite,
)

Edge = Tuple[int, int]


@dataclass(frozen=True)
class CommGraph:
    """
    Undirected graph without self-loops. Edges are stored once, as sorted
    pairs.
    """

    node_count: int
    edges: FrozenSet[Edge]

    def __post_init__(self) -> None:
        ensure(
            self.node_count >= 1,
            DimensionError("a graph needs at least one node"),
        )
        normalized = set()
        for i, j in self.edges:
            ensure(i != j, DimensionError(f"self-loop at node {i}"))
            ensure(
                0 <= i < self.node_count and 0 <= j < self.node_count,
                DimensionError(f"edge ({i}, {j}) has an invalid label"),
            )
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalized))


@dataclass(frozen=True)
class SubgraphSelection:
    """
    The learning subgraph `𝒢_d`. `members` is frozen in selection order and
    every lifted quantity uses it. `learn_mode` marks the completed graph
    `𝒢_{d,learn}` with its temporary links switched on.
    """

    members: Tuple[int, ...]
    learn_mode: bool = False

    @property
    def d(self) -> int:
        """
        Number of agents in the subgraph.
        """
        return len(self.members)


def make_graph(node_count: int, edges: Iterable[Edge]) -> CommGraph:
    """
    Build a graph from any iterable of node pairs.
    """
    return CommGraph(node_count, frozenset((int(i), int(j)) for i, j in edges))


def path_graph(node_count: int) -> CommGraph:
    """
    Path `0 - 1 - ... - (N-1)`.
    """
    return make_graph(node_count, ((i, i + 1) for i in range(node_count - 1)))


def star_graph(node_count: int) -> CommGraph:
    """
    Star with hub `0` and leaves `1..N-1`.
    """
    return make_graph(node_count, ((0, i) for i in range(1, node_count)))


def complete_graph(node_count: int) -> CommGraph:
    """
    Complete graph `K_N`.
    """
    return make_graph(
        node_count,
        (
            (i, j)
            for i in range(node_count)
            for j in range(i + 1, node_count)
        ),
    )


def edgeless_graph(node_count: int) -> CommGraph:
    """
    `N` isolated nodes.
    """
    return make_graph(node_count, ())


def read_edge_list(text: str) -> CommGraph:
    """
    Parse the edge-list text format: a `nodes=N` header followed by one
    `i j` pair per line. Blank lines and `#` comments are ignored.

    Parameters
    ----------
    text :
        Contents of the edge-list file.

    Returns
    -------
    graph : `CommGraph`
        The parsed graph.
    """
    node_count = None
    edges: List[Edge] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("nodes"):
            key, _, value = line.partition("=")
            ensure(
                key.strip() == "nodes" and value.strip().isdigit(),
                ConfigurationError(f"line {number}: bad header {raw!r}"),
            )
            node_count = int(value)
            continue
        fields = line.split()
        ensure(
            len(fields) == 2 and all(f.isdigit() for f in fields),
            ConfigurationError(f"line {number}: expected 'i j', got {raw!r}"),
        )
        edges.append((int(fields[0]), int(fields[1])))
    ensure(
        node_count is not None,
        ConfigurationError("edge list is missing the nodes=N header"),
    )
    assert node_count is not None
    try:
        return make_graph(node_count, edges)
    except DimensionError as error:
        raise ConfigurationError(str(error)) from error


def format_edge_list(graph: CommGraph) -> str:
    """
    Render `graph` in the format `read_edge_list` accepts.
    """
    lines = [f"nodes={graph.node_count}"]
    lines.extend(f"{i} {j}" for i, j in sorted(graph.edges))
    return "\n".join(lines) + "\n"


def neighbors(graph: CommGraph, node: int) -> List[int]:
    """
    Sorted neighbor labels of `node`.
    """
    result = []
    for i, j in graph.edges:
        if i == node:
            result.append(j)
        elif j == node:
            result.append(i)
    return sorted(result)


def degrees(graph: CommGraph) -> List[int]:
    """
    Degree of every node, indexed by label.
    """
    counts = [0] * graph.node_count
    for i, j in graph.edges:
        counts[i] += 1
        counts[j] += 1
    return counts


def max_degree(graph: CommGraph) -> int:
    """
    Maximum vertex degree `d_max`.
    """
    return max(degrees(graph))


def adjacency(graph: CommGraph) -> np.ndarray:
    """
    Symmetric `0/1` adjacency matrix.
    """
    matrix = np.zeros((graph.node_count, graph.node_count))
    for i, j in graph.edges:
        matrix[i, j] = matrix[j, i] = 1.0
    return matrix


def laplacian(graph: CommGraph) -> np.ndarray:
    """
    Degree matrix minus adjacency.
    """
    matrix = adjacency(graph)
    return np.diag(matrix.sum(axis=1)) - matrix


def select_subgraph(graph: CommGraph) -> SubgraphSelection:
    """
    Choose `𝒢_d` with `d = d_max + 1`: the lowest-labelled node of maximum
    degree followed by all of its neighbors in label order.

    The result is not in learn mode; see `complete_subgraph`.
    """
    counts = degrees(graph)
    hub = counts.index(max(counts))
    members = (hub,) + tuple(neighbors(graph, hub))
    return SubgraphSelection(members)


def complete_subgraph(selection: SubgraphSelection) -> SubgraphSelection:
    """
    Switch the temporary links of `𝒢_d` on.
    """
    return SubgraphSelection(selection.members, learn_mode=True)


def restore_subgraph(selection: SubgraphSelection) -> SubgraphSelection:
    """
    Switch the temporary links of `𝒢_d` off again.
    """
    return SubgraphSelection(selection.members, learn_mode=False)


def _validate_costs(
    q1: np.ndarray, q2: np.ndarray, r: np.ndarray
) -> None:
    for name, matrix in (("Q1", q1), ("Q2", q2), ("R", r)):
        ensure_symmetric(matrix, name)
    ensure(
        q1.shape == q2.shape,
        DimensionError("Q1 and Q2 must have the same shape"),
    )
    ensure_square(r, "R")
    ensure(
        is_positive_definite(q1),
        NotPositiveDefiniteError("Q1 must be positive definite"),
    )
    ensure(
        is_positive_semidefinite(q2),
        NotPositiveDefiniteError("Q2 must be positive semidefinite"),
    )
    ensure(
        is_positive_definite(r),
        NotPositiveDefiniteError("R must be positive definite"),
    )


def compound_cost(
    graph: CommGraph, q1: ArrayLike, q2: ArrayLike, r: ArrayLike
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Network cost matrices `Q̂ = I_N ⊗ Q1 + ℒ ⊗ Q2` and `R̂ = I_N ⊗ R`.

    Parameters
    ----------
    graph :
        Communication graph supplying the Laplacian `ℒ`.
    q1 :
        Positive definite per-agent state weight.
    q2 :
        Positive semidefinite disagreement weight.
    r :
        Positive definite per-agent input weight.

    Returns
    -------
    q_hat : `numpy.ndarray`
        Positive definite `Nn x Nn` state weight.
    r_hat : `numpy.ndarray`
        Block diagonal `Nm x Nm` input weight.
    """
    q1, q2, r = as_matrix(q1), as_matrix(q2), as_matrix(r)
    _validate_costs(q1, q2, r)
    identity = np.eye(graph.node_count)
    q_hat = np.kron(identity, q1) + np.kron(laplacian(graph), q2)
    ensure(
        is_positive_definite(q_hat),
        NotPositiveDefiniteError("network state weight is not definite"),
    )
    return q_hat, np.kron(identity, r)


def subgraph_cost(
    d: int, q1: ArrayLike, q2: ArrayLike, r: ArrayLike
) -> Tuple[PatternedMatrix, PatternedMatrix]:
    """
    Costs of the completed learning subgraph: `Q̃_c` has diagonal block
    `Q̃ = Q1 + (d-1) Q2` and off-diagonal block `-Q2`, which is
    `I_d ⊗ (Q1 + d Q2) - 𝟙𝟙ᵀ ⊗ Q2`, the network cost of `K_d`.
    `R̃_c` is block diagonal in `R`.

    Use `.dense()` on either result for the `dn x dn` form.
    """
    ensure(d >= 2, DimensionError("the learning subgraph needs d >= 2"))
    q1, q2, r = as_matrix(q1), as_matrix(q2), as_matrix(r)
    _validate_costs(q1, q2, r)
    q_tilde_c = make_patterned(d, q1 + (d - 1) * q2, -q2)
    r_tilde_c = make_patterned(d, r, np.zeros_like(r))
    return q_tilde_c, r_tilde_c


def sparsity_member(
    gain: ArrayLike, graph: CommGraph, m: int, n: int, tolerance: float = 0.0
) -> bool:
    """
    Whether the `mN x nN` gain only couples neighbors: every block `(i, j)`
    with `j` neither `i` nor a neighbor of `i` has entries of magnitude at
    most `tolerance`.
    """
    gain = as_matrix(gain)
    size = graph.node_count
    ensure(
        gain.shape == (m * size, n * size),
        DimensionError(
            f"gain of shape {gain.shape} does not match "
            f"{(m * size, n * size)}"
        ),
    )
    allowed = adjacency(graph) + np.eye(size)
    blocks = np.abs(gain).reshape(size, m, size, n).max(axis=(1, 3))
    return bool(np.all(blocks[allowed == 0] <= tolerance))
