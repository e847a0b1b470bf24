"""
Model-Based LQR Oracle
^^^^^^^^^^^^^^^^^^^^^^

.. contents:: Table of Contents
    :backlinks: none
    :local:

Introduction
------------

Ground truth computed from the model: Riccati and Lyapunov solutions, the
subgraph-optimal patterned gain, the exact Q-function matrix of a given
policy and the unstructured network LQR baseline. The learner never calls
into this module; tests and the benchmark harness do.
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike

from .error import ConvergenceError, DimensionError, UnstableError
from .graph import CommGraph, compound_cost, laplacian, subgraph_cost
from .network import AgentModel, CompoundSystem
from .patterned import (
    PatternedMatrix,
    from_dense,
    pat_add,
    pat_lyapunov_solve,
    pat_mul,
)
from .policy_iteration import (
    compute_fg,
    patterned_gain,
    recover_blocks,
    update_gains,
)
from .spe import HEstimate, cost_to_go_from_h
from .utils.ensure import ensure
from .utils.numeric import as_matrix, spectral_radius, symmetrize

log = logging.getLogger(__name__)

FIXED_POINT_TOLERANCE = 1e-12
RICCATI_ITERATIONS = 10**5
LYAPUNOV_ITERATIONS = 10**6
STRUCTURE_RESIDUAL = 1e-6


@dataclass(frozen=True, eq=False)
class CostToGo:
    """
    Patterned cost-to-go `P̃ = I_d ⊗ (P₁ - P₂) + 𝟙𝟙ᵀ ⊗ P₂` of a subgraph
    policy.
    """

    p1: np.ndarray
    p2: np.ndarray
    d: int

    @property
    def delta(self) -> np.ndarray:
        """
        `ΔP = P₁ - P₂`.
        """
        return self.p1 - self.p2

    @property
    def patterned(self) -> PatternedMatrix:
        """
        `P̃` as a patterned matrix.
        """
        return PatternedMatrix(self.d, self.p1, self.p2)

    def dense(self) -> np.ndarray:
        """
        Dense `dn x dn` form of `P̃`.
        """
        return self.patterned.dense()


def _change(current: np.ndarray, previous: np.ndarray) -> float:
    scale = max(1.0, float(np.linalg.norm(current)))
    return float(np.linalg.norm(current - previous)) / scale


def dlyap(
    a: ArrayLike,
    q: ArrayLike,
    tolerance: float = FIXED_POINT_TOLERANCE,
    max_iterations: int = LYAPUNOV_ITERATIONS,
) -> np.ndarray:
    """
    Solve `P = Aᵀ P A + Q` by fixed-point iteration.

    Stops when the Frobenius change between iterates falls below
    `tolerance` (relative to `‖P‖` once that exceeds one).

    Raises
    ------
    UnstableError
        If `A` is not Schur stable.
    ConvergenceError
        If `max_iterations` is exhausted.
    """
    a, q = as_matrix(a), as_matrix(q)
    ensure(
        spectral_radius(a) < 1.0,
        UnstableError("Lyapunov system matrix is not Schur stable"),
    )
    p = q.copy()
    for _ in range(max_iterations):
        following = a.T @ p @ a + q
        if _change(following, p) < tolerance:
            return symmetrize(following)
        p = following
    raise ConvergenceError("Lyapunov iteration did not converge")


def dare_solve(
    a: ArrayLike,
    b: ArrayLike,
    q: ArrayLike,
    r: ArrayLike,
    tolerance: float = FIXED_POINT_TOLERANCE,
    max_iterations: int = RICCATI_ITERATIONS,
) -> np.ndarray:
    """
    Solve the discrete algebraic Riccati equation

        P = Q + AᵀPA - AᵀPB (R + BᵀPB)⁻¹ BᵀPA

    by fixed-point iteration from `P = Q`.

    Parameters
    ----------
    a, b :
        Stabilizable pair.
    q :
        Positive semidefinite state weight.
    r :
        Positive definite input weight.
    tolerance :
        Frobenius change between iterates at which to stop.
    max_iterations :
        Iteration budget.

    Returns
    -------
    p : `numpy.ndarray`
        The symmetric stabilizing solution.
    """
    a, b, q, r = (as_matrix(value) for value in (a, b, q, r))
    ensure(
        b.shape[0] == a.shape[0] and q.shape == a.shape,
        DimensionError("Riccati data do not conform"),
    )
    p = q.copy()
    for _ in range(max_iterations):
        pb = p @ b
        following = symmetrize(
            q
            + a.T @ p @ a
            - a.T @ pb @ np.linalg.solve(r + b.T @ pb, pb.T @ a)
        )
        if _change(following, p) < tolerance:
            return following
        p = following
    raise ConvergenceError("Riccati iteration did not converge")


def lqr_gain(
    a: ArrayLike, b: ArrayLike, r: ArrayLike, p: ArrayLike
) -> np.ndarray:
    """
    `-(R + BᵀPB)⁻¹ BᵀPA`.
    """
    a, b, r, p = (as_matrix(value) for value in (a, b, r, p))
    return -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)


def subgraph_system(
    agent: AgentModel, d: int
) -> Tuple[PatternedMatrix, PatternedMatrix]:
    """
    `(Ã, B̃)` as block diagonal patterned matrices.
    """
    return (
        PatternedMatrix(d, agent.a, np.zeros_like(agent.a)),
        PatternedMatrix(d, agent.b, np.zeros_like(agent.b)),
    )


def structured_optimal(
    agent: AgentModel,
    q1: ArrayLike,
    q2: ArrayLike,
    r: ArrayLike,
    d: int,
) -> Tuple[np.ndarray, np.ndarray, CostToGo]:
    """
    Optimal subgraph policy for `(Ã, B̃, Q̃_c, R̃_c)`, from the dense
    `dn`-dimensional Riccati equation.

    Returns
    -------
    gain, cooperative : `numpy.ndarray`
        `K*` and `L*`, the diagonal and off-diagonal blocks of `K̃*`.
    cost : `CostToGo`
        Blocks of the Riccati solution.

    Raises
    ------
    StructureError
        If `K̃*` or `P̃` deviate from the patterned structure by more than
        `1e-6`.
    """
    q_tilde_c, r_tilde_c = subgraph_cost(d, q1, q2, r)
    a_tilde, b_tilde = CompoundSystem(agent, d).subgraph_lift(d)
    q_dense, r_dense = q_tilde_c.dense(), r_tilde_c.dense()
    p_tilde = dare_solve(a_tilde, b_tilde, q_dense, r_dense)
    k_tilde = lqr_gain(a_tilde, b_tilde, r_dense, p_tilde)
    gain = from_dense(k_tilde, d, STRUCTURE_RESIDUAL)
    cost = from_dense(p_tilde, d, STRUCTURE_RESIDUAL)
    return (
        gain.diag_part.copy(),
        gain.off_part.copy(),
        CostToGo(symmetrize(cost.diag_part), symmetrize(cost.off_part), d),
    )


def evaluate_policy_cost(
    gain: ArrayLike,
    graph: CommGraph,
    agent: AgentModel,
    q1: ArrayLike,
    q2: ArrayLike,
    r: ArrayLike,
) -> float:
    """
    Infinite-horizon cost of a compound gain for identity initial-state
    covariance: `trace P̂` with
    `P̂ = (Â + B̂K̂)ᵀ P̂ (Â + B̂K̂) + Q̂ + K̂ᵀR̂K̂`.

    Raises
    ------
    UnstableError
        If `Â + B̂K̂` is not Schur stable.
    """
    gain = as_matrix(gain)
    q_hat, r_hat = compound_cost(graph, q1, q2, r)
    a_hat, b_hat = CompoundSystem(agent, graph.node_count).lifted()
    ensure(
        gain.shape == b_hat.T.shape,
        DimensionError(f"gain has shape {gain.shape}"),
    )
    closed_loop = a_hat + b_hat @ gain
    ensure(
        spectral_radius(closed_loop) < 1.0,
        UnstableError("compound gain does not stabilize the network"),
    )
    p_hat = scipy.linalg.solve_discrete_lyapunov(
        closed_loop.T, q_hat + gain.T @ r_hat @ gain
    )
    return float(np.trace(p_hat))


def unstructured_lqr(
    agent: AgentModel,
    graph: CommGraph,
    q1: ArrayLike,
    q2: ArrayLike,
    r: ArrayLike,
) -> np.ndarray:
    """
    Optimal network gain without sparsity constraint.

    The Laplacian eigenbasis `ℒ = V Λ Vᵀ` decouples the network problem
    into `N` agent-sized Riccati equations with state weight
    `Q₁ + λᵢ Q₂`; the gain is reassembled as
    `K̂ = (V ⊗ I_m) diag(Kᵢ) (Vᵀ ⊗ I_n)`.
    """
    q1, q2, r = as_matrix(q1), as_matrix(q2), as_matrix(r)
    compound_cost(graph, q1, q2, r)
    eigenvalues, basis = np.linalg.eigh(laplacian(graph))
    blocks = []
    for eigenvalue in eigenvalues:
        p = dare_solve(agent.a, agent.b, q1 + eigenvalue * q2, r)
        blocks.append(lqr_gain(agent.a, agent.b, r, p))
    modal = scipy.linalg.block_diag(*blocks)
    return np.kron(basis, np.eye(agent.m)) @ modal @ np.kron(
        basis.T, np.eye(agent.n)
    )


def _closed_loop(agent: AgentModel, gain: PatternedMatrix) -> PatternedMatrix:
    a_tilde, b_tilde = subgraph_system(agent, gain.r)
    return pat_add(a_tilde, pat_mul(b_tilde, gain))


def policy_cost_to_go(
    agent: AgentModel,
    q_tilde_c: PatternedMatrix,
    r_tilde_c: PatternedMatrix,
    gain: PatternedMatrix,
) -> PatternedMatrix:
    """
    Patterned solution of
    `P̃ = (Ã + B̃K̃)ᵀ P̃ (Ã + B̃K̃) + Q̃_c + K̃ᵀR̃_cK̃`.
    """
    closed_loop = _closed_loop(agent, gain)
    weight = pat_add(q_tilde_c, pat_mul(pat_mul(gain.T, r_tilde_c), gain))
    return pat_lyapunov_solve(closed_loop, weight)


def assemble_h(
    agent: AgentModel,
    q_tilde_c: PatternedMatrix,
    r_tilde_c: PatternedMatrix,
    gain: Union[PatternedMatrix, ArrayLike],
    d: int,
) -> HEstimate:
    """
    Exact Q-function matrix of the subgraph policy `K̃`,

        H̃ = [[Q̃_c + ÃᵀP̃Ã, ÃᵀP̃B̃],
             [B̃ᵀP̃Ã, R̃_c + B̃ᵀP̃B̃]].

    Raises
    ------
    UnstableError
        If `K̃` does not stabilize `(Ã, B̃)`.
    """
    if not isinstance(gain, PatternedMatrix):
        gain = from_dense(gain, d, STRUCTURE_RESIDUAL)
    ensure(
        gain.r == d and gain.block_shape == (agent.m, agent.n),
        DimensionError("gain does not match the agent and subgraph"),
    )
    p_tilde = policy_cost_to_go(agent, q_tilde_c, r_tilde_c, gain).dense()
    a_tilde, b_tilde = CompoundSystem(agent, d).subgraph_lift(d)
    pa = p_tilde @ a_tilde
    pb = p_tilde @ b_tilde
    h = np.block(
        [
            [q_tilde_c.dense() + a_tilde.T @ pa, a_tilde.T @ pb],
            [b_tilde.T @ pa, r_tilde_c.dense() + b_tilde.T @ pb],
        ]
    )
    return HEstimate(symmetrize(h), d, agent.n, agent.m)


def p_components(
    agent: AgentModel,
    q1: ArrayLike,
    q2: ArrayLike,
    r: ArrayLike,
    d: int,
    k: ArrayLike,
    l: ArrayLike,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Diagonal and off-diagonal blocks `(P₁, P₂)` of the cost-to-go of the
    patterned policy `(K, L)`.
    """
    q_tilde_c, r_tilde_c = subgraph_cost(d, q1, q2, r)
    cost = policy_cost_to_go(
        agent, q_tilde_c, r_tilde_c, patterned_gain(k, l, d)
    )
    return cost.diag_part.copy(), cost.off_part.copy()


def policy_iteration_shadow(
    agent: AgentModel,
    q1: ArrayLike,
    q2: ArrayLike,
    r: ArrayLike,
    d: int,
    k1: ArrayLike,
    sweeps: int = 60,
    tolerance: float = 1e-10,
) -> List[Tuple[np.ndarray, np.ndarray, float]]:
    """
    Noise-free model-based counterpart of the learning loop:
    `assemble_h`, `recover_blocks`, `compute_fg`, `update_gains`, repeated
    from `(K₁, 0)` until the gains move less than `tolerance`.

    Returns
    -------
    sweeps : `list`
        `(K, L, trace P̃)` for every evaluated policy, starting with
        `(K₁, 0)`.
    """
    q_tilde_c, r_tilde_c = subgraph_cost(d, q1, q2, r)
    k = as_matrix(k1)
    l = np.zeros_like(k)
    result = []
    for _ in range(sweeps):
        gain = patterned_gain(k, l, d)
        estimate = assemble_h(agent, q_tilde_c, r_tilde_c, gain, d)
        trace = float(np.trace(cost_to_go_from_h(estimate, gain)))
        result.append((k, l, trace))
        blocks = recover_blocks(estimate, d, agent.n, agent.m)
        f, g = compute_fg(blocks.y1, blocks.y2, d)
        k_next, l_next = update_gains(f, g, blocks.z1, blocks.z2, d)
        change = max(
            float(np.linalg.norm(k_next - k)),
            float(np.linalg.norm(l_next - l)),
        )
        k, l = k_next, l_next
        if change < tolerance:
            break
    else:
        raise ConvergenceError(f"no fixed point within {sweeps} sweeps")
    log.debug("model-based policy iteration took %s sweeps", len(result))
    return result
