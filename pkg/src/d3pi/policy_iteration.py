"""
Distributed Policy Iteration
^^^^^^^^^^^^^^^^^^^^^^^^^^^^

.. contents:: Table of Contents
    :backlinks: none
    :local:

Introduction
------------

The outer learning loop. Each iteration

1. installs the learning policy on the whole network, with the temporary
   links of `𝒢_{d,learn}` switched on,
2. evaluates it on the subgraph from data (`run_spe`),
3. reads the six blocks `X₁, X₂, Y₁, Y₂, Z₁, Z₂` of the estimate,
4. computes the improved gains `K, L` through the closed-form patterned
   inverse of `H̃₂₂`,
5. computes the data-driven margin `τ` that keeps agents outside the
   subgraph stable while they copy the cooperative gain.

Once the gains stop moving the temporary links are switched off and the
distributed policy
`u_i = (K - L) x_i + (τ / (d - 1)) L Σ_{j ∈ 𝒩_i} x_j` is emitted.

No model knowledge enters the loop; the spectral radii kept in the history
are diagnostics computed from the simulator for reporting only.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .error import ConvergenceError, DimensionError, NotPositiveDefiniteError
from .graph import CommGraph, complete_subgraph, select_subgraph, subgraph_cost
from .network import (
    AgentModel,
    Simulator,
    build_policy_final,
    build_policy_learning,
    closed_loop_radius,
)
from .patterned import PatternedMatrix, pat_inverse, pat_is_posdef
from .spe import (
    ExplorationSpec,
    HEstimate,
    RlsState,
    SpeConfig,
    SpeResult,
    run_spe,
    unknown_count,
)
from .utils.ensure import ensure
from .utils.numeric import as_matrix, spectral_radius, symmetrize

log = logging.getLogger(__name__)

XI_VARIANTS = ("algorithm", "proof")
DIAGNOSTIC_NODE_LIMIT = 30
MARGIN_SAMPLES = 20


@dataclass(frozen=True, eq=False)
class GainState:
    """
    Controller components at iteration `k`. `gamma` and `xi` are unset at
    initialization, where `tau` is zero.
    """

    k: int
    gain: np.ndarray
    cooperative: np.ndarray
    tau: float = 0.0
    gamma: Optional[float] = None
    xi: Optional[np.ndarray] = None

    @property
    def delta(self) -> np.ndarray:
        """
        `ΔK = K - L`, the decoupled single-agent feedback.
        """
        return self.gain - self.cooperative


@dataclass(frozen=True, eq=False)
class BlockSet:
    """
    Representative blocks of a patterned `H̃`.
    """

    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray

    @property
    def dx(self) -> np.ndarray:
        """
        `X₁ - X₂`.
        """
        return self.x1 - self.x2

    @property
    def dy(self) -> np.ndarray:
        """
        `Y₁ - Y₂`.
        """
        return self.y1 - self.y2

    @property
    def dz(self) -> np.ndarray:
        """
        `Z₁ - Z₂`.
        """
        return self.z1 - self.z2


@dataclass(frozen=True, eq=False)
class D3piConfig:
    """
    Settings of a learning run. `k1` must stabilize a single agent.

    With `freeze_outside` the agents outside the subgraph keep applying
    `k1` during learning instead of the coordinated policy.
    """

    q1: np.ndarray
    q2: np.ndarray
    r: np.ndarray
    k1: np.ndarray
    tolerance: float = 1e-4
    max_iterations: int = 50
    spe: SpeConfig = field(default_factory=SpeConfig)
    xi_variant: str = "algorithm"
    seed: int = 0
    freeze_outside: bool = False
    record_trace: bool = False

    def __post_init__(self) -> None:
        for name in ("q1", "q2", "r", "k1"):
            object.__setattr__(self, name, as_matrix(getattr(self, name)))
        ensure(
            self.xi_variant in XI_VARIANTS,
            DimensionError(f"unknown xi variant {self.xi_variant!r}"),
        )
        ensure(
            self.max_iterations >= 1,
            DimensionError("max_iterations must be >= 1"),
        )


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """
    One outer iteration: the gains that were evaluated, the SPE outcome
    and the closed-loop diagnostics of the learning policy.
    """

    state: GainState
    spe_steps: int
    spe_condition: float
    agent_radius: float
    network_radius: float


@dataclass
class D3piResult:
    """
    Outcome of `run_d3pi`.
    """

    gain: np.ndarray
    cooperative: np.ndarray
    gamma: Optional[float]
    tau: float
    policy: np.ndarray
    history: List[IterationRecord]
    final: GainState
    spe: List[SpeResult] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        """
        Number of outer iterations run.
        """
        return len(self.history)


def patterned_gain(k: ArrayLike, l: ArrayLike, d: int) -> PatternedMatrix:
    """
    `K̃ = I_d ⊗ (K - L) + 𝟙𝟙ᵀ ⊗ L`: diagonal block `K`, off-diagonal
    block `L`.
    """
    return PatternedMatrix(d, as_matrix(k), as_matrix(l))


def recover_blocks(estimate: HEstimate, d: int, n: int, m: int) -> BlockSet:
    """
    Read the blocks in the first block row of `H₁₁`, `H₂₂` and `H₂₁`.

    Parameters
    ----------
    estimate :
        Q-function matrix of size `d (n + m)`.
    d, n, m :
        Subgraph size and agent dimensions.

    Returns
    -------
    blocks : `BlockSet`
        `X₁ = H₁₁[0:n, 0:n]`, `X₂ = H₁₁[0:n, n:2n]` and likewise for the
        `Y` (from `H₂₂`) and `Z` (from `H₂₁`) blocks.
    """
    ensure(d >= 2, DimensionError("blocks need a subgraph with d >= 2"))
    ensure(
        (estimate.d, estimate.n, estimate.m) == (d, n, m),
        DimensionError(
            f"estimate is for {(estimate.d, estimate.n, estimate.m)}, "
            f"expected {(d, n, m)}"
        ),
    )
    h11, h21, h22 = estimate.h11, estimate.h21, estimate.h22
    return BlockSet(
        x1=h11[:n, :n].copy(),
        x2=h11[:n, n : 2 * n].copy(),
        y1=h22[:m, :m].copy(),
        y2=h22[:m, m : 2 * m].copy(),
        z1=h21[:m, :n].copy(),
        z2=h21[:m, n : 2 * n].copy(),
    )


def compute_fg(
    y1: ArrayLike, y2: ArrayLike, d: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Factors of `H̃₂₂⁻¹ = I_d ⊗ (F + G) - 𝟙𝟙ᵀ ⊗ G` for the patterned
    `H̃₂₂` with diagonal block `Y₁` and off-diagonal block `Y₂`.

    Raises
    ------
    NotPositiveDefiniteError
        If `H̃₂₂` is not positive definite, which means the estimate is
        unusable.
    """
    h22 = PatternedMatrix(d, as_matrix(y1), as_matrix(y2))
    ensure(
        pat_is_posdef(h22),
        NotPositiveDefiniteError("estimated H22 is not positive definite"),
    )
    inverse = pat_inverse(h22)
    return inverse.diag_part.copy(), -inverse.off_part


def update_gains(
    f: ArrayLike, g: ArrayLike, z1: ArrayLike, z2: ArrayLike, d: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Patterned factors of the improved policy `K̃ = -H̃₂₂⁻¹ H̃₂₁`:

        K = -F Z₁ + (d-1) G Z₂
        L = -F Z₂ + G Z₁ + (d-2) G Z₂
    """
    f, g, z1, z2 = (as_matrix(value) for value in (f, g, z1, z2))
    gain = -f @ z1 + (d - 1) * g @ z2
    cooperative = -f @ z2 + g @ z1 + (d - 2) * g @ z2
    return gain, cooperative


def compute_xi(
    blocks: BlockSet,
    delta_next: ArrayLike,
    q_tilde: ArrayLike,
    q2: ArrayLike,
    r: ArrayLike,
    variant: str = "algorithm",
) -> np.ndarray:
    """
    `Ξ = ΔX - Q̃ + Q₂ + ΔKᵀΔZ + ΔZᵀΔK + ΔKᵀ(ΔY - R)ΔK` with `ΔK` the
    improved decoupled gain and `Q̃ = Q₁ + d Q₂`. The `proof` variant
    leaves out `+ Q₂`.
    """
    ensure(
        variant in XI_VARIANTS,
        DimensionError(f"unknown xi variant {variant!r}"),
    )
    delta = as_matrix(delta_next)
    xi = (
        blocks.dx
        - as_matrix(q_tilde)
        + delta.T @ blocks.dz
        + blocks.dz.T @ delta
        + delta.T @ (blocks.dy - as_matrix(r)) @ delta
    )
    if variant == "algorithm":
        xi = xi + as_matrix(q2)
    return symmetrize(xi)


def compute_margin(
    xi: ArrayLike,
    delta_next: ArrayLike,
    cooperative_next: ArrayLike,
    dy: ArrayLike,
    r: ArrayLike,
    q_tilde: ArrayLike,
) -> Tuple[float, float]:
    """
    Data-driven stability margin.

    Parameters
    ----------
    xi :
        Output of `compute_xi`.
    delta_next, cooperative_next :
        The improved `ΔK` and `L`.
    dy :
        `Y₁ - Y₂`.
    r, q_tilde :
        Input weight and `Q̃ = Q₁ + d Q₂`.

    Returns
    -------
    gamma : `float`
        `σ_min(ΔKᵀRΔK + Q̃) / σ_max(Ξ + Lᵀ(ΔY - R)L)`.
    tau : `float`
        `sqrt(γ² / (1 + γ))`. Any `α` with `|α - 1| < τ` keeps
        `A + B(K - αL)` Schur stable. Both are zero when the denominator
        vanishes.
    """
    delta = as_matrix(delta_next)
    cooperative = as_matrix(cooperative_next)
    r = as_matrix(r)
    numerator = np.linalg.svd(
        delta.T @ r @ delta + as_matrix(q_tilde), compute_uv=False
    ).min()
    denominator = np.linalg.svd(
        as_matrix(xi) + cooperative.T @ (as_matrix(dy) - r) @ cooperative,
        compute_uv=False,
    ).max()
    if denominator <= 0.0:
        log.warning("degenerate margin denominator, using tau = 0")
        return 0.0, 0.0
    gamma = float(numerator / denominator)
    return gamma, float(np.sqrt(gamma**2 / (1.0 + gamma)))


def margin_sweep(
    agent: AgentModel,
    k: ArrayLike,
    l: ArrayLike,
    tau: float,
    samples: int = MARGIN_SAMPLES,
) -> float:
    """
    Largest `ρ(A + B(K - αL))` over `samples` values of `α` spread evenly
    inside the open interval `(1 - τ, 1 + τ)`.
    """
    k, l = as_matrix(k), as_matrix(l)
    alphas = np.linspace(1.0 - tau, 1.0 + tau, samples + 2)[1:-1]
    if tau <= 0.0:
        alphas = np.ones(1)
    return max(
        spectral_radius(agent.a + agent.b @ (k - alpha * l))
        for alpha in alphas
    )


def _evaluate(
    sim: Simulator,
    problem: Tuple,
    config: SpeConfig,
    exploration: ExplorationSpec,
    record_trace: bool,
) -> SpeResult:
    selection, _, previous, _, _ = problem
    unknowns = unknown_count(selection.d * (previous.n + previous.m))
    trace: List[Tuple[int, float, float]] = []
    elapsed = 0.0
    resume: Optional[RlsState] = None
    for attempt, limit in enumerate(config.schedule(unknowns)):
        if resume is not None:
            log.warning("extending SPE to %s steps", limit)
        result = run_spe(
            sim,
            *problem,
            replace(config, max_steps=limit),
            replace(exploration, seed=exploration.seed + attempt),
            record_trace=record_trace,
            resume=resume,
        )
        trace.extend(result.trace)
        elapsed += result.elapsed
        if result.converged:
            return replace(result, trace=trace, elapsed=elapsed)
        resume = result.rls
    raise ConvergenceError(
        f"policy evaluation did not converge in {result.steps} steps"
    )


def run_d3pi(
    sim: Simulator, graph: CommGraph, config: D3piConfig
) -> D3piResult:
    """
    Learn a distributed policy for the network behind `sim`.

    Parameters
    ----------
    sim :
        Handle on the running network; only subgraph states are read.
    graph :
        Communication graph of the network.
    config :
        Costs, the initial stabilizing gain and loop settings.

    Returns
    -------
    result : `D3piResult`
        Converged gains, margin, the final distributed compound gain and
        the per-iteration history.

    Raises
    ------
    ConvergenceError
        If an evaluation does not converge within the step limit of
        `SpeConfig` or the outer loop exhausts `max_iterations`.
    NotPositiveDefiniteError
        If an estimated `H̃₂₂` is not positive definite.
    """
    agent = sim.system.agent
    n, m = agent.n, agent.m
    selection = complete_subgraph(select_subgraph(graph))
    d = selection.d
    ensure(d >= 2, DimensionError("the graph has no edges to learn over"))
    ensure(
        config.k1.shape == (m, n),
        DimensionError(f"K1 has shape {config.k1.shape}, expected {(m, n)}"),
    )
    q_tilde_c, r_tilde_c = subgraph_cost(d, config.q1, config.q2, config.r)
    q_tilde = config.q1 + d * config.q2
    outside = config.k1 if config.freeze_outside else None
    rng = np.random.default_rng(config.seed)
    log.info(
        "learning on subgraph %s (d=%s) of %s agents",
        selection.members,
        d,
        graph.node_count,
    )

    state = GainState(1, config.k1, np.zeros_like(config.k1))
    estimate = HEstimate.zeros(d, n, m)
    history: List[IterationRecord] = []
    evaluations: List[SpeResult] = []
    converged = False

    for _ in range(config.max_iterations):
        policy = build_policy_learning(
            state.gain,
            state.cooperative,
            state.tau,
            graph,
            selection,
            outside_gain=outside,
        )
        exploration = ExplorationSpec(
            config.spe.noise_variance * np.eye(d * m),
            seed=int(rng.integers(2**32)),
            kind=config.spe.exploration,
        )
        result = _evaluate(
            sim,
            (selection, policy, estimate, q_tilde_c, r_tilde_c),
            config.spe,
            exploration,
            config.record_trace,
        )
        evaluations.append(result)
        estimate = result.estimate

        history.append(
            IterationRecord(
                state=state,
                spe_steps=result.steps,
                spe_condition=result.condition,
                agent_radius=spectral_radius(agent.a + agent.b @ state.delta),
                network_radius=(
                    closed_loop_radius(agent, policy, graph.node_count)
                    if graph.node_count <= DIAGNOSTIC_NODE_LIMIT
                    else float("nan")
                ),
            )
        )

        blocks = recover_blocks(estimate, d, n, m)
        f, g = compute_fg(blocks.y1, blocks.y2, d)
        gain, cooperative = update_gains(f, g, blocks.z1, blocks.z2, d)
        xi = compute_xi(
            blocks,
            gain - cooperative,
            q_tilde,
            config.q2,
            config.r,
            config.xi_variant,
        )
        gamma, tau = compute_margin(
            xi, gain - cooperative, cooperative, blocks.dy, config.r, q_tilde
        )
        change = max(
            float(np.linalg.norm(gain - state.gain)),
            float(np.linalg.norm(cooperative - state.cooperative)),
        )
        state = GainState(state.k + 1, gain, cooperative, tau, gamma, xi)
        log.info(
            "iteration %s: change %s, gamma %s, tau %s (%s SPE steps)",
            state.k - 1,
            change,
            gamma,
            tau,
            result.steps,
        )
        if change < config.tolerance:
            converged = True
            break

    ensure(
        converged,
        ConvergenceError(
            f"gains did not converge in {config.max_iterations} iterations"
        ),
    )
    policy = build_policy_final(
        state.gain, state.cooperative, state.tau, graph
    )
    return D3piResult(
        gain=state.gain,
        cooperative=state.cooperative,
        gamma=state.gamma,
        tau=state.tau,
        policy=policy,
        history=history,
        final=state,
        spe=evaluations,
        converged=converged,
    )
