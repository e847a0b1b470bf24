"""
Subgraph Policy Evaluation
^^^^^^^^^^^^^^^^^^^^^^^^^^

.. contents:: Table of Contents
    :backlinks: none
    :local:

Introduction
------------

Recursive least-squares estimation of the quadratic Q-function matrix `H̃`
of the learning subgraph, while the whole network runs closed loop under
the learning policy.

With `z = [x̃; ũ]` the matrix satisfies the Bellman identity

    zₜᵀ H̃ zₜ = ℛ(x̃ₜ, ũₜ) + zₜ₊₁ᵀ H̃ zₜ₊₁,

where `zₜ₊₁` carries the policy's own (noise free) input at `x̃ₜ₊₁`. The
unknowns are the upper triangle of `H̃`, stored row by row with doubled
off-diagonal entries so that `zᵀ H̃ z` is a plain inner product with the
quadratic features of `z`.
"""
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Iterator, List, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike

from .error import DimensionError, NotPositiveDefiniteError, RegressionError
from .graph import SubgraphSelection
from .network import Simulator
from .patterned import PatternedMatrix, pat_matvec, project
from .utils.ensure import ensure
from .utils.numeric import (
    as_matrix,
    as_vector,
    ensure_symmetric,
    is_positive_semidefinite,
    symmetrize,
)

log = logging.getLogger(__name__)

EXPLORATION_KINDS = ("gaussian", "sinusoidal", "decaying")
REGRESSOR_KINDS = ("quadratic", "literal")
DECAY_RATE = 0.999
SINUSOID_COUNT = 8
# Largest eigenvalue of 𝒫 allowed at convergence, as a fraction of β. The
# prior keeps at most this weight in the least excited direction.
EXCITATION_RATIO = 1e-3
INITIAL_STEP_FACTOR = 5
STEP_LIMIT_FACTOR = 80


@dataclass(frozen=True)
class SpeConfig:
    """
    Settings of one policy evaluation.

    With `u = p(p+1)/2` unknowns, `min_steps` defaults to `u`,
    `initial_steps` (the first attempt of `schedule`) to `5u` and
    `max_steps` (the overall step limit) to `80u`.
    """

    beta: float = 1e6
    noise_variance: float = 0.01
    tolerance: float = 1e-6
    window: int = 10
    min_steps: Optional[int] = None
    max_steps: Optional[int] = None
    initial_steps: Optional[int] = None
    projection: bool = True
    regressor: str = "quadratic"
    exploration: str = "gaussian"

    def __post_init__(self) -> None:
        ensure(self.beta > 0, DimensionError("beta must be positive"))
        ensure(
            self.noise_variance >= 0,
            DimensionError("noise variance must be nonnegative"),
        )
        ensure(self.window >= 1, DimensionError("window must be >= 1"))
        ensure(
            self.initial_steps is None or self.initial_steps >= 1,
            DimensionError("initial_steps must be >= 1"),
        )
        ensure(
            self.regressor in REGRESSOR_KINDS,
            DimensionError(f"unknown regressor {self.regressor!r}"),
        )
        ensure(
            self.exploration in EXPLORATION_KINDS,
            DimensionError(f"unknown exploration {self.exploration!r}"),
        )

    def budget(self, unknowns: int) -> Tuple[int, int]:
        """
        `(min_steps, max_steps)` for a regression with `unknowns`
        coefficients.
        """
        minimum = unknowns if self.min_steps is None else self.min_steps
        maximum = (
            STEP_LIMIT_FACTOR * unknowns
            if self.max_steps is None
            else self.max_steps
        )
        return minimum, max(minimum, maximum)

    def schedule(self, unknowns: int) -> List[int]:
        """
        Step limits of successive attempts: `initial_steps`, doubled until
        `max_steps` is reached.
        """
        minimum, maximum = self.budget(unknowns)
        first = (
            INITIAL_STEP_FACTOR * unknowns
            if self.initial_steps is None
            else self.initial_steps
        )
        steps = max(1, minimum, min(first, maximum))
        limits = [steps]
        while steps < maximum:
            steps = min(2 * steps, maximum)
            limits.append(steps)
        return limits


@dataclass(frozen=True, eq=False)
class ExplorationSpec:
    """
    Excitation added to the subgraph inputs. `covariance` is `dm x dm`.
    """

    covariance: np.ndarray
    seed: int
    kind: str = "gaussian"

    def __post_init__(self) -> None:
        covariance = as_matrix(self.covariance)
        ensure_symmetric(covariance, "exploration covariance")
        ensure(
            is_positive_semidefinite(covariance),
            NotPositiveDefiniteError("exploration covariance is not PSD"),
        )
        ensure(
            self.kind in EXPLORATION_KINDS,
            DimensionError(f"unknown exploration {self.kind!r}"),
        )
        object.__setattr__(self, "covariance", covariance)


def excitation(spec: ExplorationSpec) -> Iterator[np.ndarray]:
    """
    Endless stream of exploration inputs.

    `gaussian` draws `e ∼ N(0, Σ)`; `decaying` scales those draws by
    `0.999ᵗ`; `sinusoidal` sums sinusoids of random frequency and phase
    per channel, scaled to the standard deviations `√diag Σ`.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.covariance.shape[0]
    mean = np.zeros(size)
    if spec.kind == "sinusoidal":
        amplitude = np.sqrt(np.diag(spec.covariance) * 2.0 / SINUSOID_COUNT)
        frequency = rng.uniform(0.0, np.pi, size=(size, SINUSOID_COUNT))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(size, SINUSOID_COUNT))
        t = 0
        while True:
            yield amplitude * np.sin(frequency * t + phase).sum(axis=1)
            t += 1
    scale = 1.0
    while True:
        sample = rng.multivariate_normal(mean, spec.covariance, method="eigh")
        yield scale * sample
        if spec.kind == "decaying":
            scale *= DECAY_RATE


@dataclass(frozen=True, eq=False)
class HEstimate:
    """
    Symmetric `p x p` Q-function matrix over `z = [x̃; ũ]`,
    `p = d (n + m)`.
    """

    h: np.ndarray
    d: int
    n: int
    m: int

    def __post_init__(self) -> None:
        h = as_matrix(self.h)
        size = self.d * (self.n + self.m)
        ensure(
            h.shape == (size, size),
            DimensionError(f"H has shape {h.shape}, expected {size}"),
        )
        h.flags.writeable = False
        object.__setattr__(self, "h", h)

    @property
    def h11(self) -> np.ndarray:
        """
        State block, `dn x dn`.
        """
        split = self.d * self.n
        return self.h[:split, :split]

    @property
    def h21(self) -> np.ndarray:
        """
        Input-state block, `dm x dn`.
        """
        split = self.d * self.n
        return self.h[split:, :split]

    @property
    def h12(self) -> np.ndarray:
        """
        State-input block, `dn x dm`.
        """
        split = self.d * self.n
        return self.h[:split, split:]

    @property
    def h22(self) -> np.ndarray:
        """
        Input block, `dm x dm`.
        """
        split = self.d * self.n
        return self.h[split:, split:]

    @classmethod
    def zeros(cls, d: int, n: int, m: int) -> "HEstimate":
        """
        The all-zero estimate used before the first evaluation.
        """
        size = d * (n + m)
        return cls(np.zeros((size, size)), d, n, m)


@dataclass(frozen=True, eq=False)
class RlsState:
    """
    Regression coefficients `θ`, gain factor `𝒫` and steps taken.
    """

    theta: np.ndarray
    pmat: np.ndarray
    step_count: int = 0

    @classmethod
    def initial(cls, theta: ArrayLike, beta: float) -> "RlsState":
        """
        Start from `θ` with `𝒫 = β I`.
        """
        theta = as_vector(theta).copy()
        return cls(theta, beta * np.eye(theta.size))


@dataclass
class SpeResult:
    """
    Outcome of `run_spe`.
    """

    estimate: HEstimate
    steps: int
    converged: bool
    condition: float
    rls: RlsState
    elapsed: float = 0.0
    trace: List[Tuple[int, float, float]] = field(default_factory=list)

    @property
    def theta(self) -> np.ndarray:
        """
        Unprojected regression coefficients.
        """
        return self.rls.theta


def unknown_count(p: int) -> int:
    """
    Number of distinct entries of a symmetric `p x p` matrix.
    """
    return p * (p + 1) // 2


def quad_features(z: ArrayLike) -> np.ndarray:
    """
    Products `zᵢ zⱼ`, `i ≤ j`, in row-major upper-triangle order.
    """
    z = as_vector(z)
    rows, columns = np.triu_indices(z.size)
    return z[rows] * z[columns]


def vech(h: ArrayLike) -> np.ndarray:
    """
    Upper triangle of a symmetric matrix, row by row, with off-diagonal
    entries doubled so that `zᵀ H z = quad_features(z) · vech(H)`.
    """
    h = as_matrix(h)
    rows, columns = np.triu_indices(h.shape[0])
    return np.where(rows == columns, 1.0, 2.0) * h[rows, columns]


def unvech(theta: ArrayLike, p: int) -> np.ndarray:
    """
    Inverse of `vech`: halves the off-diagonal coefficients.
    """
    theta = as_vector(theta)
    ensure(
        theta.size == unknown_count(p),
        DimensionError(f"{theta.size} coefficients do not fill a {p}x{p}"),
    )
    rows, columns = np.triu_indices(p)
    h = np.zeros((p, p))
    h[rows, columns] = np.where(rows == columns, 1.0, 0.5) * theta
    return h + np.triu(h, 1).T


def regressor(z_t: ArrayLike, z_next: ArrayLike) -> np.ndarray:
    """
    `ζₜ = quad_features(zₜ) - quad_features(zₜ₊₁)`, for which
    `ℛₜ = ζₜ · θ` holds exactly at the true coefficients.
    """
    z_t, z_next = as_vector(z_t), as_vector(z_next)
    ensure(
        z_t.size == z_next.size,
        DimensionError("consecutive samples differ in length"),
    )
    return quad_features(z_t) - quad_features(z_next)


def literal_regressor(z_t: ArrayLike, z_next: ArrayLike) -> np.ndarray:
    """
    Products of the differences `φ = zₜ - zₜ₊₁`. Kept for comparison
    only; it does not satisfy the Bellman identity in general.
    """
    z_t, z_next = as_vector(z_t), as_vector(z_next)
    ensure(
        z_t.size == z_next.size,
        DimensionError("consecutive samples differ in length"),
    )
    return quad_features(z_t - z_next)


def _quadratic_form(
    weight: Union[PatternedMatrix, ArrayLike], vector: np.ndarray
) -> float:
    if isinstance(weight, PatternedMatrix):
        return float(vector @ pat_matvec(weight, vector))
    weight = as_matrix(weight)
    ensure(
        weight.shape == (vector.size, vector.size),
        DimensionError(
            f"weight {weight.shape} does not match vector {vector.size}"
        ),
    )
    return float(vector @ weight @ vector)


def local_cost(
    x: ArrayLike,
    u: ArrayLike,
    q_tilde_c: Union[PatternedMatrix, ArrayLike],
    r_tilde_c: Union[PatternedMatrix, ArrayLike],
) -> float:
    """
    Subgraph stage cost `x̃ᵀ Q̃_c x̃ + ũᵀ R̃_c ũ`. Weights may be patterned
    or dense.
    """
    return _quadratic_form(q_tilde_c, as_vector(x)) + _quadratic_form(
        r_tilde_c, as_vector(u)
    )


def rls_step(state: RlsState, zeta: ArrayLike, target: float) -> RlsState:
    """
    One recursive least-squares update

        θ ← θ + 𝒫ζ (target - ζᵀθ) / (1 + ζᵀ𝒫ζ)
        𝒫 ← 𝒫 - 𝒫ζζᵀ𝒫 / (1 + ζᵀ𝒫ζ)

    with `𝒫` symmetrized afterwards.

    Raises
    ------
    RegressionError
        If the update is not finite.
    """
    zeta = as_vector(zeta)
    ensure(
        zeta.size == state.theta.size,
        DimensionError("regressor and coefficients differ in length"),
    )
    gain = state.pmat @ zeta
    denominator = 1.0 + float(zeta @ gain)
    theta = state.theta + gain * (target - float(zeta @ state.theta)) / (
        denominator
    )
    pmat = symmetrize(state.pmat - np.outer(gain, gain) / denominator)
    ensure(
        bool(np.all(np.isfinite(theta)) and np.all(np.isfinite(pmat))),
        RegressionError(f"non-finite update at step {state.step_count + 1}"),
    )
    return RlsState(theta, pmat, state.step_count + 1)


def project_estimate(h: ArrayLike, d: int, n: int, m: int) -> np.ndarray:
    """
    Replace each of the `H₁₁`, `H₂₁`, `H₂₂` blocks by its patterned
    projection and reassemble the symmetric matrix.
    """
    h = as_matrix(h)
    split = d * n
    h11, _ = project(h[:split, :split], d)
    h21, _ = project(h[split:, :split], d)
    h22, _ = project(h[split:, split:], d)
    projected = np.block(
        [
            [h11.dense(), h21.dense().T],
            [h21.dense(), h22.dense()],
        ]
    )
    return symmetrize(projected)


def cost_to_go_from_h(
    estimate: HEstimate, gain: Union[PatternedMatrix, ArrayLike]
) -> np.ndarray:
    """
    Policy evaluation through `H̃` alone:
    `P̃ = H₁₁ + H₁₂ K̃ + K̃ᵀ H₂₁ + K̃ᵀ H₂₂ K̃`.
    """
    k = gain.dense() if isinstance(gain, PatternedMatrix) else as_matrix(gain)
    ensure(
        k.shape == estimate.h21.shape,
        DimensionError(f"gain {k.shape} does not match {estimate.h21.shape}"),
    )
    return symmetrize(
        estimate.h11
        + estimate.h12 @ k
        + k.T @ estimate.h21
        + k.T @ estimate.h22 @ k
    )


def run_spe(
    sim: Simulator,
    selection: SubgraphSelection,
    policy: ArrayLike,
    previous: HEstimate,
    q_tilde_c: Union[PatternedMatrix, ArrayLike],
    r_tilde_c: Union[PatternedMatrix, ArrayLike],
    config: SpeConfig,
    exploration: ExplorationSpec,
    record_trace: bool = False,
    resume: Optional[RlsState] = None,
) -> SpeResult:
    """
    Evaluate the installed learning policy from subgraph data.

    Each step reads the subgraph state and the policy's inputs, adds
    exploration to the subgraph inputs only, steps the whole network and
    feeds one regression row to `rls_step`. The run stops once, after
    `min_steps`, the coefficients moved less than `tolerance` (relative
    to their size when that exceeds one) over the last `window` steps and
    the largest eigenvalue of `𝒫` is below `EXCITATION_RATIO · β`, or
    when the state has taken `max_steps` steps.

    Parameters
    ----------
    sim :
        Handle on the running network.
    selection :
        Learning subgraph in learn mode.
    policy :
        Compound learning gain built by `build_policy_learning`.
    previous :
        Estimate of the previous iteration; its coefficients seed `θ`.
    q_tilde_c, r_tilde_c :
        Subgraph costs.
    config :
        Budget, tolerances and regression options.
    exploration :
        Excitation of the subgraph inputs.
    record_trace :
        Keep `(t, residual, ‖θ‖)` rows for diagnostics.
    resume :
        Regression state of an earlier run on the same policy to continue
        from instead of starting at `previous` with `𝒫 = β I`. Its step
        count counts against `max_steps`.

    Returns
    -------
    result : `SpeResult`
        The (optionally projected) estimate and its diagnostics. A run
        that did not converge still returns its last estimate, with
        `converged` false.
    """
    agent = sim.system.agent
    d, n, m = selection.d, agent.n, agent.m
    ensure(
        previous.d == d and previous.n == n and previous.m == m,
        DimensionError("previous estimate does not match the subgraph"),
    )
    ensure(
        exploration.covariance.shape == (d * m, d * m),
        DimensionError("exploration covariance must be dm x dm"),
    )
    p = d * (n + m)
    minimum, maximum = config.budget(unknown_count(p))
    ceiling = EXCITATION_RATIO * config.beta
    build_row = (
        literal_regressor if config.regressor == "literal" else regressor
    )

    members = list(selection.members)
    sim.set_policy(policy)
    if resume is None:
        state = RlsState.initial(vech(previous.h), config.beta)
    else:
        ensure(
            resume.theta.size == unknown_count(p),
            DimensionError("resumed state does not match the subgraph"),
        )
        state = resume
    window: Deque[np.ndarray] = deque(maxlen=config.window + 1)
    window.append(state.theta)
    noise = excitation(exploration)
    trace: List[Tuple[int, float, float]] = []
    converged = False
    started = time.perf_counter()

    for _ in range(max(0, maximum - state.step_count)):
        x_t = sim.observe(selection)
        inputs = sim.policy_input()
        inputs[members] += next(noise).reshape(d, m)
        u_t = inputs[members].reshape(-1)
        sim.apply(inputs)
        x_next = sim.observe(selection)
        u_next = sim.policy_input()[members].reshape(-1)

        zeta = build_row(
            np.concatenate([x_t, u_t]), np.concatenate([x_next, u_next])
        )
        target = local_cost(x_t, u_t, q_tilde_c, r_tilde_c)
        if record_trace:
            residual = target - float(zeta @ state.theta)
            trace.append(
                (sim.state.t - 1, residual, float(np.linalg.norm(state.theta)))
            )
        state = rls_step(state, zeta, target)
        window.append(state.theta)

        if state.step_count < minimum or len(window) <= config.window:
            continue
        scale = max(1.0, float(np.max(np.abs(state.theta))))
        moved = float(np.max(np.abs(state.theta - window[0])))
        if moved >= config.tolerance * scale:
            continue
        # An unexcited direction keeps its prior variance β.
        if np.linalg.eigvalsh(state.pmat)[-1] <= ceiling:
            converged = True
            break

    h = unvech(state.theta, p)
    if config.projection:
        h = project_estimate(h, d, n, m)
    condition = float(np.linalg.cond(state.pmat))
    if converged:
        log.debug("SPE converged after %s steps", state.step_count)
    else:
        log.info(
            "SPE did not converge within %s steps (cond(P)=%s)",
            state.step_count,
            condition,
        )
    return SpeResult(
        estimate=HEstimate(h, d, n, m),
        steps=state.step_count,
        converged=converged,
        condition=condition,
        rls=state,
        elapsed=time.perf_counter() - started,
        trace=trace,
    )
