"""
Benchmark Harness
^^^^^^^^^^^^^^^^^

Run the learning algorithm and its comparison variants on a configured
network, write trajectories, cumulative costs and gains as CSV, sweep the
network size, and check the structured algebra against dense oracles.
"""

import argparse
import json
import logging
import pkgutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, cast

import numpy as np

from d3pi.error import ConfigurationError, ConvergenceError, D3piError
from d3pi.graph import (
    CommGraph,
    complete_graph,
    edgeless_graph,
    path_graph,
    read_edge_list,
    select_subgraph,
    sparsity_member,
    star_graph,
)
from d3pi.network import (
    AgentModel,
    CompoundSystem,
    Simulator,
    agent_costs,
    closed_loop_radius,
    discretize,
    normalize,
)
from d3pi.oracle import (
    dare_solve,
    evaluate_policy_cost,
    lqr_gain,
    policy_iteration_shadow,
    structured_optimal,
    unstructured_lqr,
)
from d3pi.patterned import (
    PatternedMatrix,
    from_dense,
    pat_det,
    pat_inverse,
    pat_lyapunov_solve,
    pat_mul,
)
from d3pi.policy_iteration import (
    D3piConfig,
    D3piResult,
    GainState,
    run_d3pi,
)
from d3pi.utils.numeric import spectral_radius

from .config import RunConfig, load_config, parse_matrix
from .output import CsvTable

EXIT_OK = 0
EXIT_CONFIGURATION = 2
EXIT_NUMERICAL = 3
EXIT_CONVERGENCE = 4

DIAGNOSTIC_NODE_LIMIT = 30

log = logging.getLogger(__name__)


def engine_model() -> Tuple[np.ndarray, np.ndarray]:
    """
    Continuous-time matrices `(Ac, Bc)` of the turbocharged diesel engine
    benchmark: six states, two inputs.
    """
    data = json.loads(
        cast(bytes, pkgutil.get_data("d3pi", "assets/engine.json")).decode()
    )
    return np.array(data["a"], dtype=float), np.array(data["b"], dtype=float)


def build_agent(config: RunConfig) -> Tuple[AgentModel, Optional[np.ndarray]]:
    """
    The agent model a configuration describes, and the state scaling when
    `normalize` is set.
    """
    if config.source == "engine":
        a, b = engine_model()
        continuous = True
    else:
        a, b = parse_matrix(config.a), parse_matrix(config.b)
        continuous = config.continuous
    agent = discretize(a, b, config.dt) if continuous else AgentModel(a, b)
    if not config.normalize:
        return agent, None
    return normalize(agent)


def build_graph(config: RunConfig) -> CommGraph:
    """
    The communication graph a configuration describes.
    """
    if config.graph_kind == "edges":
        try:
            text = Path(config.graph_file).read_text()
        except OSError as error:
            raise ConfigurationError(
                f"cannot read {config.graph_file}: {error}"
            ) from error
        return read_edge_list(text)
    generators = {
        "path": path_graph,
        "star": star_graph,
        "complete": complete_graph,
        "edgeless": edgeless_graph,
    }
    return generators[config.graph_kind](config.nodes)


@dataclass
class Problem:
    """
    Everything a variant needs, resolved from a `RunConfig`.
    """

    config: RunConfig
    agent: AgentModel
    scaling: Optional[np.ndarray]
    graph: CommGraph
    q1: np.ndarray
    q2: np.ndarray
    r: np.ndarray
    k1: np.ndarray

    @classmethod
    def from_config(cls, config: RunConfig) -> "Problem":
        """
        Resolve agent, graph, weights and the initial gain.
        """
        agent, scaling = build_agent(config)
        graph = build_graph(config)
        q1 = parse_matrix(config.q1, agent.n)
        q2 = parse_matrix(config.q2, agent.n)
        r = parse_matrix(config.r, agent.m)
        if config.k1:
            k1 = parse_matrix(config.k1)
        else:
            # K1 is the only place model knowledge enters a learning run.
            inflated = config.k1_r_scale * r
            p = dare_solve(agent.a, agent.b, q1, inflated)
            k1 = lqr_gain(agent.a, agent.b, inflated, p)
        if k1.shape != (agent.m, agent.n):
            raise ConfigurationError(f"k1 has shape {k1.shape}")
        return cls(config, agent, scaling, graph, q1, q2, r, k1)


@dataclass
class Recorder:
    """
    Simulator observer accumulating states and realized costs.
    """

    problem: Problem
    variant: str
    outside: Sequence[int]
    states: List[List[object]] = field(default_factory=list)
    costs: List[List[object]] = field(default_factory=list)
    total: float = 0.0
    total_outside: float = 0.0

    def __call__(self, t: int, x: np.ndarray, u: np.ndarray) -> None:
        """
        Record the state at `t` and the stage cost of the applied input.
        """
        stage = agent_costs(
            self.problem.graph,
            x,
            u,
            self.problem.q1,
            self.problem.q2,
            self.problem.r,
        )
        self.total += float(stage.sum())
        self.total_outside += float(stage[list(self.outside)].sum())
        for agent_id, row in enumerate(x):
            self.states.append([t, self.variant, agent_id, *row.tolist()])
        self.costs.append([t, self.variant, self.total, self.total_outside])


@dataclass
class VariantOutcome:
    """
    Result of running one variant.
    """

    variant: str
    recorder: Recorder
    steps: int
    learning_steps: int = 0
    spe_seconds: float = 0.0
    learning: Optional[D3piResult] = None
    policy_cost: Optional[float] = None
    gains: List[List[object]] = field(default_factory=list)
    trace: List[List[object]] = field(default_factory=list)


def _gain_row(
    problem: Problem,
    variant: str,
    state: GainState,
    network_radius: float,
) -> List[object]:
    agent = problem.agent
    return [
        variant,
        state.k,
        *state.gain.reshape(-1).tolist(),
        *state.cooperative.reshape(-1).tolist(),
        "" if state.gamma is None else state.gamma,
        state.tau,
        spectral_radius(agent.a + agent.b @ state.delta),
        network_radius,
    ]


def gains_header(n: int, m: int) -> List[str]:
    """
    Column names of `gains.csv`.
    """
    entries = [f"{i}_{j}" for i in range(m) for j in range(n)]
    return (
        ["variant", "k"]
        + [f"K_{e}" for e in entries]
        + [f"L_{e}" for e in entries]
        + ["gamma", "tau", "rho_agent", "rho_network"]
    )


def run_variant(problem: Problem, variant: str) -> VariantOutcome:
    """
    Simulate one variant from the seeded initial state up to the horizon.

    `d3pi_on` and `d3pi_off` learn first (the latter with agents outside
    the subgraph frozen at `K₁`) and then apply the learned distributed
    policy; `lqr_baseline` applies the unstructured optimal gain.
    """
    config, graph, agent = problem.config, problem.graph, problem.agent
    members = set(select_subgraph(graph).members)
    outside = [i for i in range(graph.node_count) if i not in members]
    recorder = Recorder(problem, variant, outside)
    sim = Simulator(
        CompoundSystem(agent, graph.node_count),
        np.random.default_rng(config.seed),
        observers=[recorder],
    )
    outcome = VariantOutcome(variant, recorder, steps=0)

    if variant == "lqr_baseline":
        policy = unstructured_lqr(
            agent, graph, problem.q1, problem.q2, problem.r
        )
    else:
        result = run_d3pi(
            sim,
            graph,
            D3piConfig(
                q1=problem.q1,
                q2=problem.q2,
                r=problem.r,
                k1=problem.k1,
                tolerance=config.tolerance,
                max_iterations=config.max_iterations,
                spe=config.spe,
                xi_variant=config.xi_variant,
                seed=config.seed,
                freeze_outside=variant == "d3pi_off",
                record_trace=True,
            ),
        )
        policy = result.policy
        if not sparsity_member(policy, graph, agent.m, agent.n, 0.0):
            raise D3piError("learned policy violates the graph sparsity")
        outcome.learning = result
        outcome.learning_steps = sim.state.t
        outcome.spe_seconds = sum(spe.elapsed for spe in result.spe)
        for record in result.history:
            outcome.gains.append(
                _gain_row(
                    problem, variant, record.state, record.network_radius
                )
            )
        final_radius = (
            closed_loop_radius(agent, policy, graph.node_count)
            if graph.node_count <= DIAGNOSTIC_NODE_LIMIT
            else float("nan")
        )
        outcome.gains.append(
            _gain_row(problem, variant, result.final, final_radius)
        )
        for iteration, spe in enumerate(result.spe, start=1):
            outcome.trace.extend(
                [variant, iteration, t, residual, norm]
                for t, residual, norm in spe.trace
            )

    sim.set_policy(policy)
    sim.run(max(0, config.horizon - sim.state.t))
    outcome.steps = sim.state.t
    if graph.node_count <= DIAGNOSTIC_NODE_LIMIT:
        outcome.policy_cost = evaluate_policy_cost(
            policy, graph, agent, problem.q1, problem.q2, problem.r
        )
    log.info(
        "%s finished after %s steps, cumulative cost %s",
        variant,
        outcome.steps,
        recorder.total,
    )
    return outcome


def _meta(problem: Problem, outcomes: Dict[str, VariantOutcome]) -> str:
    lines = [problem.config.render(), "[result]"]
    lines.append(f"subgraph = {list(select_subgraph(problem.graph).members)}")
    if problem.scaling is not None:
        scaling = ", ".join("%.17g" % value for value in problem.scaling)
        lines.append(f"scaling = {scaling}")
    for name, outcome in outcomes.items():
        lines.append(f"{name}.steps = {outcome.steps}")
        lines.append(f"{name}.cumulative_cost = {outcome.recorder.total!r}")
        lines.append(
            f"{name}.cumulative_cost_outside = "
            f"{outcome.recorder.total_outside!r}"
        )
        if outcome.policy_cost is not None:
            lines.append(
                f"{name}.infinite_horizon_cost = {outcome.policy_cost!r}"
            )
        if outcome.learning is not None:
            learning = outcome.learning
            lines.append(f"{name}.converged = {learning.converged}")
            lines.append(f"{name}.iterations = {learning.iterations}")
            lines.append(f"{name}.learning_steps = {outcome.learning_steps}")
            lines.append(
                f"{name}.spe_converged = "
                f"{all(spe.converged for spe in learning.spe)}"
            )
    return "\n".join(lines) + "\n"


def run_benchmark(
    config: RunConfig, out: Path, spe_trace: bool = False
) -> Dict[str, VariantOutcome]:
    """
    Run every configured variant and write `states.csv`, `costs.csv`,
    `gains.csv`, `meta.txt` and optionally `spe_trace.csv` under `out`.
    """
    problem = Problem.from_config(config)
    outcomes = {
        variant: run_variant(problem, variant) for variant in config.variants
    }
    n = problem.agent.n
    states = CsvTable(["t", "variant", "agent"] + [f"x{i}" for i in range(n)])
    costs = CsvTable(["t", "variant", "cumulative", "cumulative_outside"])
    gains = CsvTable(gains_header(n, problem.agent.m))
    trace = CsvTable(["variant", "iteration", "t", "residual", "theta_norm"])
    for outcome in outcomes.values():
        states.extend(outcome.recorder.states)
        costs.extend(outcome.recorder.costs)
        gains.extend(outcome.gains)
        trace.extend(outcome.trace)
    states.write(out / "states.csv")
    costs.write(out / "costs.csv")
    gains.write(out / "gains.csv")
    if spe_trace:
        trace.write(out / "spe_trace.csv")
    (out / "meta.txt").write_text(_meta(problem, outcomes))
    return outcomes


def parse_agents(text: str) -> List[int]:
    """
    `5..30` (inclusive range) or `5,8,13`.
    """
    try:
        if ".." in text:
            first, last = text.split("..", 1)
            return list(range(int(first), int(last) + 1))
        return [int(value) for value in text.split(",") if value.strip()]
    except ValueError as error:
        raise ConfigurationError(f"bad agent list {text!r}") from error


def sweep_agents(
    config: RunConfig,
    nodes: Sequence[int],
    out: Path,
    jobs: int = 1,
) -> CsvTable:
    """
    Run the benchmark for every network size in `nodes`, each size as an
    independent job writing under `out/nodes-N`, then merge the final
    cumulative costs into `out/summary.csv`.
    """
    if not nodes:
        raise ConfigurationError("the agent list is empty")

    def job(size: int) -> Dict[str, VariantOutcome]:
        return run_benchmark(config.with_nodes(size), out / f"nodes-{size}")

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(job, nodes))

    summary = CsvTable(
        [
            "nodes",
            "variant",
            "cumulative",
            "cumulative_outside",
            "steps",
            "spe_seconds",
        ]
    )
    for size, outcomes in zip(nodes, results):
        for outcome in outcomes.values():
            summary.append(
                [
                    size,
                    outcome.variant,
                    outcome.recorder.total,
                    outcome.recorder.total_outside,
                    outcome.steps,
                    outcome.spe_seconds,
                ]
            )
    summary.write(out / "summary.csv")
    return summary


def selftest(seed: int = 0, trials: int = 20) -> int:
    """
    Compare the structured algebra and the model-based policy iteration
    against dense computations. Returns the number of failed checks.
    """
    rng = np.random.default_rng(seed)
    failures = 0

    def check(name: str, passed: bool) -> None:
        nonlocal failures
        if not passed:
            failures += 1
            log.error("selftest check failed: %s", name)

    for trial in range(trials):
        r = int(rng.integers(2, 7))
        n = int(rng.integers(1, 5))
        left = _random_patterned(rng, r, n)
        right = _random_patterned(rng, r, n)
        dense_left = left.dense()
        check(
            f"determinant {trial}",
            np.isclose(
                pat_det(left), np.linalg.det(dense_left), rtol=1e-9, atol=0.0
            ),
        )
        check(
            f"inverse {trial}",
            np.allclose(
                pat_inverse(left).dense(),
                np.linalg.inv(dense_left),
                rtol=1e-8,
                atol=1e-10,
            ),
        )
        check(
            f"product {trial}",
            np.allclose(
                pat_mul(left, right).dense(),
                dense_left @ right.dense(),
                rtol=1e-8,
                atol=1e-10,
            ),
        )
        stable = PatternedMatrix(r, 0.3 * np.eye(n), 0.5 / r * np.eye(n))
        solution = pat_lyapunov_solve(stable, left)
        residual = (
            solution.dense()
            - stable.dense().T @ solution.dense() @ stable.dense()
            - dense_left
        )
        check(f"lyapunov {trial}", bool(np.abs(residual).max() < 1e-8))
        check(
            f"lyapunov structure {trial}",
            _is_patterned(solution.dense(), r),
        )

    agent = AgentModel(np.array([[0.9]]), np.array([[1.0]]))
    gain, cooperative, _ = structured_optimal(agent, 1.0, 1.0, 1.0, 3)
    sweeps = policy_iteration_shadow(agent, 1.0, 1.0, 1.0, 3, [[-0.5]])
    k, l, _ = sweeps[-1]
    check(
        "policy iteration fixed point",
        bool(
            np.allclose(k, gain, atol=1e-8)
            and np.allclose(l, cooperative, atol=1e-8)
        ),
    )
    traces = [trace for _, _, trace in sweeps]
    check(
        "policy iteration monotone",
        all(b <= a + 1e-9 for a, b in zip(traces, traces[1:])),
    )
    log.info("selftest finished with %s failures", failures)
    return failures


def _random_patterned(
    rng: np.random.Generator, r: int, n: int
) -> PatternedMatrix:
    factor = rng.standard_normal((r * n, r * n))
    dense = factor @ factor.T + r * n * np.eye(r * n)
    symmetric = 0.5 * (dense + dense.T)
    blocks = symmetric.reshape(r, n, r, n).transpose(0, 2, 1, 3)
    diag_part = np.mean([blocks[i, i] for i in range(r)], axis=0)
    off_part = np.mean(
        [blocks[i, j] for i in range(r) for j in range(r) if i != j], axis=0
    )
    return PatternedMatrix(r, diag_part, 0.5 * (off_part + off_part.T))


def _is_patterned(matrix: np.ndarray, r: int) -> bool:
    try:
        from_dense(matrix, r, 1e-8)
    except D3piError:
        return False
    return True


class Bench:
    """
    Command line front end of the benchmark harness.
    """

    @staticmethod
    def parse_arguments(
        arguments: Optional[Sequence[str]] = None,
    ) -> argparse.Namespace:
        """
        Parse command line arguments.
        """
        parser = argparse.ArgumentParser(prog="d3pi")
        parser.add_argument(
            "--verbose",
            help="log per-iteration detail",
            action="store_true",
        )
        commands = parser.add_subparsers(dest="command", required=True)

        run = commands.add_parser("run", help="run the configured variants")
        run.add_argument("--config", help="configuration file")
        run.add_argument("--seed", help="override the seed", type=int)
        run.add_argument(
            "--out", help="output directory", default="d3pi-out"
        )
        run.add_argument(
            "--spe-trace",
            help="also write spe_trace.csv",
            action="store_true",
        )

        sweep = commands.add_parser("sweep", help="sweep the network size")
        sweep.add_argument("--config", help="configuration file")
        sweep.add_argument("--seed", help="override the seed", type=int)
        sweep.add_argument(
            "--agents", help="sizes, as 5..30 or 5,8,13", default="5..30"
        )
        sweep.add_argument(
            "--out", help="output directory", default="d3pi-sweep"
        )
        sweep.add_argument(
            "--jobs", help="concurrent jobs", type=int, default=1
        )

        check = commands.add_parser(
            "selftest", help="check the algebra against dense oracles"
        )
        check.add_argument("--seed", type=int, default=0)

        return parser.parse_args(arguments)

    options: argparse.Namespace
    log: logging.Logger

    def __init__(self, options: argparse.Namespace) -> None:
        self.options = options
        self.log = logging.getLogger(__name__)

    def config(self) -> RunConfig:
        """
        Load the configuration and apply command line overrides.
        """
        config = load_config(self.options.config)
        if self.options.seed is not None:
            if self.options.seed < 0:
                raise ConfigurationError("seed must be nonnegative")
            config = config.with_seed(self.options.seed)
        return config

    def execute(self) -> int:
        """
        Run the selected command and map failures to exit codes.
        """
        try:
            if self.options.command == "run":
                run_benchmark(
                    self.config(),
                    Path(self.options.out),
                    spe_trace=self.options.spe_trace,
                )
            elif self.options.command == "sweep":
                sweep_agents(
                    self.config(),
                    parse_agents(self.options.agents),
                    Path(self.options.out),
                    jobs=self.options.jobs,
                )
            elif selftest(self.options.seed):
                return EXIT_NUMERICAL
        except ConfigurationError as error:
            self.log.error("configuration error: %s", error)
            return EXIT_CONFIGURATION
        except ConvergenceError as error:
            self.log.error("did not converge: %s", error)
            return EXIT_CONVERGENCE
        except D3piError as error:
            self.log.error("numerical failure: %s", error)
            return EXIT_NUMERICAL
        return EXIT_OK


def main(arguments: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the `d3pi` command.
    """
    options = Bench.parse_arguments(arguments)
    logging.basicConfig(
        level=logging.DEBUG if options.verbose else logging.INFO
    )
    return Bench(options).execute()


if __name__ == "__main__":
    sys.exit(main())
