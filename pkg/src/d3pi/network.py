"""
Networked Linear Plant
^^^^^^^^^^^^^^^^^^^^^^

.. contents:: Table of Contents
    :backlinks: none
    :local:

Introduction
------------

A homogeneous network of `N` identical agents `x_i⁺ = A x_i + B u_i`,
the compound feedback gains the learning and final phases apply to it, and
the `Simulator` handle through which the learner sees the network: it may
read the states of the learning subgraph and inject inputs, nothing else.

The dense lifts `Â = I_N ⊗ A`, `B̂ = I_N ⊗ B` are only ever built for
diagnostics; stepping is done agent-wise.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse
from numpy.typing import ArrayLike

from .error import (
    DimensionError,
    DivergenceError,
    StructureError,
    UncontrollableError,
)
from .graph import (
    CommGraph,
    SubgraphSelection,
    adjacency,
    max_degree,
    neighbors,
)
from .utils.ensure import ensure
from .utils.numeric import as_matrix, ensure_square, spectral_radius

DIVERGENCE_THRESHOLD = 1e12
GRAMIAN_HORIZON = 50

log = logging.getLogger(__name__)

Observer = Callable[[int, np.ndarray, np.ndarray], None]


def controllability_matrix(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """
    `[B, AB, ..., A^(n-1) B]`.
    """
    a, b = as_matrix(a), as_matrix(b)
    columns = [b]
    for _ in range(a.shape[0] - 1):
        columns.append(a @ columns[-1])
    return np.hstack(columns)


def is_controllable(a: ArrayLike, b: ArrayLike) -> bool:
    """
    Whether the controllability matrix of `(A, B)` has full row rank.
    """
    a = as_matrix(a)
    return bool(
        np.linalg.matrix_rank(controllability_matrix(a, b)) == a.shape[0]
    )


@dataclass(frozen=True, eq=False)
class AgentModel:
    """
    Dynamics `(A, B)` shared by every agent; controllability is checked on
    construction.
    """

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        a, b = as_matrix(self.a), as_matrix(self.b)
        ensure_square(a, "A")
        ensure(
            b.shape[0] == a.shape[0],
            DimensionError(f"B has {b.shape[0]} rows, A has {a.shape[0]}"),
        )
        ensure(
            is_controllable(a, b),
            UncontrollableError("agent model (A, B) is not controllable"),
        )
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        """
        State dimension.
        """
        return self.a.shape[0]

    @property
    def m(self) -> int:
        """
        Input dimension.
        """
        return self.b.shape[1]


@dataclass(frozen=True)
class CompoundSystem:
    """
    `N` copies of an agent. The Kronecker lifts are produced on request.
    """

    agent: AgentModel
    node_count: int

    def lifted(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Dense `(Â, B̂)` of the whole network.
        """
        identity = np.eye(self.node_count)
        return np.kron(identity, self.agent.a), np.kron(identity, self.agent.b)

    def subgraph_lift(self, d: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Dense `(Ã, B̃)` of a `d` agent subgraph.
        """
        identity = np.eye(d)
        return np.kron(identity, self.agent.a), np.kron(identity, self.agent.b)


@dataclass(frozen=True, eq=False)
class NetworkState:
    """
    Network state at time `t`; row `i` of `x` is the state of agent `i`.
    """

    t: int
    x: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        """
        The stacked state `x̂` of length `N n`.
        """
        return self.x.reshape(-1)


def step(
    system: CompoundSystem, state: NetworkState, u: ArrayLike
) -> NetworkState:
    """
    Advance the network by one sample, applying `x_i⁺ = A x_i + B u_i` to
    every agent.

    Parameters
    ----------
    system :
        The network.
    state :
        Current state.
    u :
        Stacked input of length `N m` (or an `N x m` array).

    Returns
    -------
    state : `NetworkState`
        The state at `t + 1`.
    """
    agent = system.agent
    inputs = np.asarray(u, dtype=float)
    ensure(
        inputs.size == system.node_count * agent.m,
        DimensionError(
            f"input of size {inputs.size} does not match "
            f"N * m = {system.node_count * agent.m}"
        ),
    )
    inputs = inputs.reshape(system.node_count, agent.m)
    x = state.x @ agent.a.T + inputs @ agent.b.T
    peak = float(np.max(np.abs(x), initial=0.0))
    ensure(
        np.isfinite(peak) and peak <= DIVERGENCE_THRESHOLD,
        DivergenceError(f"network state diverged at t={state.t + 1}"),
    )
    return NetworkState(state.t + 1, x)


def observe(state: NetworkState, selection: SubgraphSelection) -> np.ndarray:
    """
    Stacked states of the subgraph members, in selection order.
    """
    return state.x[list(selection.members)].reshape(-1)


def _policy_dimensions(k: np.ndarray, l: np.ndarray) -> None:
    ensure(
        k.shape == l.shape,
        DimensionError(f"K {k.shape} and L {l.shape} differ in shape"),
    )


def build_policy_learning(
    k: ArrayLike,
    l: ArrayLike,
    tau: float,
    graph: CommGraph,
    selection: SubgraphSelection,
    outside_gain: Optional[ArrayLike] = None,
) -> np.ndarray:
    """
    Compound gain applied while `𝒢_{d,learn}` learns.

    Members apply the patterned gain `K̃ = I_d ⊗ (K - L) + 𝟙𝟙ᵀ ⊗ L`, so
    `u_i = K x_i + L Σ_{j member, j ≠ i} x_j`; every other agent uses
    `u_i = (K - L) x_i + (τ / (d - 1)) L Σ_{j ∈ 𝒩_i} x_j`. Member rows only
    reference members.

    Parameters
    ----------
    k, l :
        `m x n` self and cooperative gains.
    tau :
        Current stability margin.
    graph :
        The original communication graph.
    selection :
        Learning subgraph in learn mode.
    outside_gain :
        When given, agents outside the subgraph apply `u_i = outside_gain
        x_i` instead, with no neighbor coupling.

    Returns
    -------
    gain : `numpy.ndarray`
        Dense `mN x nN` gain.
    """
    k, l = as_matrix(k), as_matrix(l)
    _policy_dimensions(k, l)
    ensure(
        selection.learn_mode,
        StructureError("the learning policy needs the subgraph in learn mode"),
    )
    d = selection.d
    m, n = k.shape
    blocks = np.zeros((graph.node_count, graph.node_count, m, n))
    members = set(selection.members)
    for i in selection.members:
        for j in selection.members:
            blocks[i, j] = k if i == j else l
    outside = None if outside_gain is None else as_matrix(outside_gain)
    if outside is not None:
        ensure(
            outside.shape == k.shape,
            DimensionError(f"outside gain has shape {outside.shape}"),
        )
    coupling = tau / (d - 1) * l if d > 1 else np.zeros_like(l)
    for i in range(graph.node_count):
        if i in members:
            continue
        if outside is not None:
            blocks[i, i] = outside
            continue
        blocks[i, i] = k - l
        for j in neighbors(graph, i):
            blocks[i, j] = coupling
    return blocks.transpose(0, 2, 1, 3).reshape(
        graph.node_count * m, graph.node_count * n
    )


def build_policy_final(
    k: ArrayLike, l: ArrayLike, tau: float, graph: CommGraph
) -> np.ndarray:
    """
    Distributed gain over the original graph, temporary links removed:
    `u_i = (K - L) x_i + (τ / (d - 1)) L Σ_{j ∈ 𝒩_i} x_j`.

    Here `d = d_max + 1`. The result only couples neighbors.
    """
    k, l = as_matrix(k), as_matrix(l)
    _policy_dimensions(k, l)
    d = max_degree(graph) + 1
    coupling = tau / (d - 1) * l if d > 1 else np.zeros_like(l)
    return np.kron(np.eye(graph.node_count), k - l) + np.kron(
        adjacency(graph), coupling
    )


def discretize(ac: ArrayLike, bc: ArrayLike, dt: float) -> AgentModel:
    """
    Zero-order-hold discretization through the exponential of the
    augmented matrix `[[Ac, Bc], [0, 0]] dt`.

    Parameters
    ----------
    ac :
        Continuous-time state matrix.
    bc :
        Continuous-time input matrix.
    dt :
        Sampling period, positive.

    Returns
    -------
    agent : `AgentModel`
        `A_d = exp(Ac dt)`, `B_d = ∫₀^dt exp(Ac s) ds Bc`.
    """
    ac, bc = as_matrix(ac), as_matrix(bc)
    ensure_square(ac, "Ac")
    ensure(dt > 0, DimensionError("sampling period must be positive"))
    ensure(
        bc.shape[0] == ac.shape[0],
        DimensionError("Ac and Bc have different row counts"),
    )
    n, m = bc.shape
    augmented = np.zeros((n + m, n + m))
    augmented[:n, :n] = ac
    augmented[:n, n:] = bc
    exponential = scipy.linalg.expm(augmented * dt)
    agent = AgentModel(exponential[:n, :n], exponential[:n, n:])
    log.debug("discretized spectral radius %s", spectral_radius(agent.a))
    return agent


def normalize(
    agent: AgentModel, horizon: int = GRAMIAN_HORIZON
) -> Tuple[AgentModel, np.ndarray]:
    """
    Rescale states by the square root of the diagonal of the
    finite-horizon controllability Gramian
    `W = Σ_{k<horizon} A^k B Bᵀ (Aᵀ)^k`.

    Returns
    -------
    agent : `AgentModel`
        The model in scaled coordinates `z = T⁻¹ x`.
    scaling : `numpy.ndarray`
        The diagonal of `T`.
    """
    gramian = np.zeros((agent.n, agent.n))
    term = agent.b
    for _ in range(horizon):
        gramian += term @ term.T
        term = agent.a @ term
    scaling = np.sqrt(np.diag(gramian))
    ensure(
        bool(np.all(scaling > 0)),
        UncontrollableError("Gramian has a zero diagonal entry"),
    )
    return (
        AgentModel(
            agent.a * scaling[np.newaxis, :] / scaling[:, np.newaxis],
            agent.b / scaling[:, np.newaxis],
        ),
        scaling,
    )


def closed_loop_radius(
    agent: AgentModel, gain: ArrayLike, node_count: int
) -> float:
    """
    Dense `ρ(Â + B̂ K̂)`; meant for diagnostics on small networks.
    """
    a_hat, b_hat = CompoundSystem(agent, node_count).lifted()
    return spectral_radius(a_hat + b_hat @ as_matrix(gain))


def agent_costs(
    graph: CommGraph,
    x: np.ndarray,
    u: np.ndarray,
    q1: np.ndarray,
    q2: np.ndarray,
    r: np.ndarray,
) -> np.ndarray:
    """
    Stage cost of every agent,
    `x_iᵀ Q1 x_i + u_iᵀ R u_i + ½ Σ_{j ∈ 𝒩_i} (x_i - x_j)ᵀ Q2 (x_i - x_j)`.

    The costs sum to `x̂ᵀ Q̂ x̂ + ûᵀ R̂ û`.
    """
    costs = np.einsum("ij,jk,ik->i", x, q1, x) + np.einsum(
        "ij,jk,ik->i", u, r, u
    )
    if graph.edges:
        pairs = np.array(sorted(graph.edges))
        difference = x[pairs[:, 0]] - x[pairs[:, 1]]
        edge_cost = 0.5 * np.einsum("ij,jk,ik->i", difference, q2, difference)
        np.add.at(costs, pairs[:, 0], edge_cost)
        np.add.at(costs, pairs[:, 1], edge_cost)
    return costs


@dataclass
class Simulator:
    """
    Black-box handle on a running network.

    The simulator owns its state and random generator. A compound gain is
    installed with `set_policy`; each call to `apply` steps the whole
    network with a full input and notifies the observers with
    `(t, x, u)`.
    """

    system: CompoundSystem
    rng: np.random.Generator
    initial: Optional[np.ndarray] = None
    observers: List[Observer] = field(default_factory=list)

    _state: NetworkState = field(init=False)
    _policy: scipy.sparse.csr_matrix = field(init=False)

    def __post_init__(self) -> None:
        shape = (self.system.node_count, self.system.agent.n)
        if self.initial is None:
            x0 = self.rng.uniform(-1.0, 1.0, size=shape)
        else:
            x0 = np.array(self.initial, dtype=float).reshape(shape)
        self._state = NetworkState(0, x0)
        self._policy = scipy.sparse.csr_matrix(
            (self.system.node_count * self.system.agent.m, x0.size)
        )

    @property
    def state(self) -> NetworkState:
        """
        Current network state.
        """
        return self._state

    def observe(self, selection: SubgraphSelection) -> np.ndarray:
        """
        Stacked states of the subgraph members.
        """
        return observe(self._state, selection)

    def set_policy(self, gain: ArrayLike) -> None:
        """
        Install the compound gain `K̂` used by `policy_input`.
        """
        gain = as_matrix(gain)
        ensure(
            gain.shape == self._policy.shape,
            DimensionError(
                f"gain of shape {gain.shape} does not match "
                f"{self._policy.shape}"
            ),
        )
        self._policy = scipy.sparse.csr_matrix(gain)

    def policy_input(self) -> np.ndarray:
        """
        `K̂ x̂` as an `N x m` array.
        """
        u = self._policy @ self._state.vector
        return u.reshape(self.system.node_count, self.system.agent.m)

    def apply(self, u: ArrayLike) -> NetworkState:
        """
        Step the network with input `u` and notify the observers.
        """
        previous = self._state
        inputs = np.asarray(u, dtype=float).reshape(
            self.system.node_count, self.system.agent.m
        )
        self._state = step(self.system, previous, inputs)
        for observer in self.observers:
            observer(previous.t, previous.x, inputs)
        return self._state

    def run(self, steps: int) -> NetworkState:
        """
        Step the network `steps` times under the installed policy alone.
        """
        for _ in range(steps):
            self.apply(self.policy_input())
        return self._state
