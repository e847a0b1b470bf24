import numpy as np
import pytest

from d3pi.error import DimensionError, NotPositiveDefiniteError
from d3pi.graph import (
    complete_graph,
    complete_subgraph,
    path_graph,
    select_subgraph,
    subgraph_cost,
)
from d3pi.network import (
    AgentModel,
    CompoundSystem,
    Simulator,
    build_policy_learning,
)
from d3pi.oracle import assemble_h
from d3pi.patterned import PatternedMatrix, from_dense, pat_is_posdef
from d3pi.spe import (
    ExplorationSpec,
    HEstimate,
    RlsState,
    SpeConfig,
    cost_to_go_from_h,
    excitation,
    literal_regressor,
    local_cost,
    project_estimate,
    quad_features,
    regressor,
    rls_step,
    run_spe,
    unknown_count,
    unvech,
    vech,
)


def random_symmetric(rng: np.random.Generator, n: int) -> np.ndarray:
    matrix = rng.standard_normal((n, n))
    return 0.5 * (matrix + matrix.T)


def test_quad_features() -> None:
    assert np.array_equal(quad_features([1.0, 2.0]), [1.0, 2.0, 4.0])
    assert np.array_equal(quad_features(np.zeros(3)), np.zeros(6))
    assert unknown_count(6) == 21


def test_quadratic_form_as_inner_product() -> None:
    rng = np.random.default_rng(0)
    h = random_symmetric(rng, 6)
    z = rng.standard_normal(6)
    assert quad_features(z) @ vech(h) == pytest.approx(z @ h @ z, abs=1e-12)
    assert np.allclose(unvech(vech(h), 6), h)


def test_unvech_rejects_wrong_length() -> None:
    with pytest.raises(DimensionError):
        unvech(np.zeros(5), 3)


def test_regressor() -> None:
    assert np.array_equal(regressor([1.0, 2.0], [0.0, 1.0]), [1.0, 2.0, 3.0])
    assert np.array_equal(regressor([1.0, 2.0], [1.0, 2.0]), np.zeros(3))


def test_regressor_bellman_identity() -> None:
    rng = np.random.default_rng(1)
    h = random_symmetric(rng, 4)
    z_t, z_next = rng.standard_normal(4), rng.standard_normal(4)
    expected = z_t @ h @ z_t - z_next @ h @ z_next
    assert regressor(z_t, z_next) @ vech(h) == pytest.approx(
        expected, abs=1e-12
    )


def test_literal_regressor() -> None:
    assert np.array_equal(
        literal_regressor([1.0, 2.0], [0.0, 1.0]), [1.0, 1.0, 1.0]
    )


def test_local_cost() -> None:
    q_tilde_c, r_tilde_c = subgraph_cost(2, 1.0, 1.0, 1.0)
    assert local_cost(np.zeros(2), np.zeros(2), q_tilde_c, r_tilde_c) == 0.0
    assert local_cost([1.0, 1.0], [0.0, 0.0], q_tilde_c, r_tilde_c) == 2.0


def test_local_cost_matches_dense() -> None:
    rng = np.random.default_rng(2)
    q_tilde_c, r_tilde_c = subgraph_cost(3, np.eye(2), np.eye(2), np.eye(1))
    x, u = rng.standard_normal(6), rng.standard_normal(3)
    expected = x @ q_tilde_c.dense() @ x + u @ u
    patterned = local_cost(x, u, q_tilde_c, r_tilde_c)
    dense = local_cost(x, u, q_tilde_c.dense(), r_tilde_c.dense())
    assert patterned == pytest.approx(expected)
    assert dense == pytest.approx(expected)


def test_rls_step() -> None:
    state = RlsState(np.zeros(2), np.eye(2))
    following = rls_step(state, [1.0, 0.0], 1.0)
    assert np.allclose(following.theta, [0.5, 0.0])
    assert np.allclose(following.pmat, [[0.5, 0.0], [0.0, 1.0]])
    assert following.step_count == 1


def test_rls_step_without_excitation() -> None:
    state = RlsState(np.array([1.0, 2.0]), np.eye(2))
    following = rls_step(state, np.zeros(2), 5.0)
    assert np.array_equal(following.theta, state.theta)
    assert np.array_equal(following.pmat, state.pmat)


def test_rls_converges_to_least_squares() -> None:
    rng = np.random.default_rng(3)
    truth = rng.standard_normal(4)
    state = RlsState.initial(np.zeros(4), 1e8)
    errors = []
    for _ in range(50):
        zeta = rng.standard_normal(4)
        trace_before = np.trace(state.pmat)
        state = rls_step(state, zeta, float(zeta @ truth))
        assert np.trace(state.pmat) <= trace_before
        errors.append(np.linalg.norm(state.theta - truth))
    assert errors[-1] < 1e-6
    assert errors[-1] <= errors[10]


def test_project_estimate_keeps_patterned_matrix() -> None:
    rng = np.random.default_rng(4)
    d, n, m = 3, 2, 1
    blocks = [
        PatternedMatrix(d, random_symmetric(rng, n), random_symmetric(rng, n)),
        PatternedMatrix(
            d, rng.standard_normal((m, n)), rng.standard_normal((m, n))
        ),
        PatternedMatrix(d, random_symmetric(rng, m), random_symmetric(rng, m)),
    ]
    h11, h21, h22 = (block.dense() for block in blocks)
    h = np.block([[h11, h21.T], [h21, h22]])
    assert np.allclose(project_estimate(h, d, n, m), h)

    noisy = h + 1e-3 * random_symmetric(rng, d * (n + m))
    projected = project_estimate(noisy, d, n, m)
    assert np.allclose(projected, projected.T)
    assert np.abs(projected - h).max() < 1e-2


def test_h_estimate_blocks() -> None:
    h = np.arange(36.0).reshape(6, 6)
    estimate = HEstimate(h + h.T, 2, 2, 1)
    assert estimate.h11.shape == (4, 4)
    assert estimate.h21.shape == (2, 4)
    assert estimate.h12.shape == (4, 2)
    assert estimate.h22.shape == (2, 2)
    with pytest.raises(DimensionError):
        HEstimate(np.eye(5), 2, 2, 1)


def test_cost_to_go_from_h() -> None:
    rng = np.random.default_rng(5)
    h = random_symmetric(rng, 6)
    estimate = HEstimate(h, 2, 2, 1)
    gain = rng.standard_normal((2, 4))
    expected = np.block([[np.eye(4)], [gain]]).T @ h @ np.block(
        [[np.eye(4)], [gain]]
    )
    assert np.allclose(cost_to_go_from_h(estimate, gain), expected)


def test_spe_config_budget() -> None:
    assert SpeConfig().budget(21) == (21, 1680)
    assert SpeConfig(min_steps=50, max_steps=10).budget(21) == (50, 50)
    assert SpeConfig().schedule(21) == [105, 210, 420, 840, 1680]
    assert SpeConfig(max_steps=300).schedule(21) == [105, 210, 300]
    assert SpeConfig(min_steps=50, max_steps=10).schedule(21) == [50]
    assert SpeConfig(initial_steps=400).schedule(21) == [400, 800, 1600, 1680]
    with pytest.raises(DimensionError):
        SpeConfig(initial_steps=0)
    with pytest.raises(DimensionError):
        SpeConfig(beta=0.0)
    with pytest.raises(DimensionError):
        SpeConfig(regressor="cubic")


def test_exploration_rejects_indefinite_covariance() -> None:
    with pytest.raises(NotPositiveDefiniteError):
        ExplorationSpec(np.diag([1.0, -1.0]), seed=0)


def test_excitation_is_reproducible() -> None:
    for kind in ("gaussian", "sinusoidal", "decaying"):
        spec = ExplorationSpec(0.01 * np.eye(3), seed=7, kind=kind)
        first, second = excitation(spec), excitation(spec)
        for _ in range(5):
            assert np.array_equal(next(first), next(second))


def test_zero_excitation() -> None:
    noise = excitation(ExplorationSpec(np.zeros((2, 2)), seed=0))
    assert np.array_equal(next(noise), np.zeros(2))


def spe_setup(noise_variance: float, initial: np.ndarray) -> tuple:
    agent = AgentModel(np.array([[0.8]]), np.array([[1.0]]))
    graph = complete_graph(2)
    selection = complete_subgraph(select_subgraph(graph))
    q_tilde_c, r_tilde_c = subgraph_cost(2, 1.0, 1.0, 1.0)
    k, l = np.array([[-0.4]]), np.array([[0.1]])
    policy = build_policy_learning(k, l, 0.0, graph, selection)
    sim = Simulator(
        CompoundSystem(agent, 2), np.random.default_rng(0), initial=initial
    )
    exploration = ExplorationSpec(noise_variance * np.eye(2), seed=11)
    expected = assemble_h(
        agent, q_tilde_c, r_tilde_c, PatternedMatrix(2, k, l), 2
    )
    return (
        sim,
        selection,
        policy,
        q_tilde_c,
        r_tilde_c,
        exploration,
        expected,
    )


def test_run_spe_recovers_model_based_h() -> None:
    (
        sim,
        selection,
        policy,
        q_tilde_c,
        r_tilde_c,
        exploration,
        expected,
    ) = spe_setup(1.0, np.array([1.0, -1.0]))
    result = run_spe(
        sim,
        selection,
        policy,
        HEstimate.zeros(2, 1, 1),
        q_tilde_c,
        r_tilde_c,
        SpeConfig(max_steps=500),
        exploration,
        record_trace=True,
    )
    assert result.converged
    assert result.steps >= unknown_count(4)
    assert len(result.trace) == result.steps
    assert np.linalg.norm(result.estimate.h - expected.h) < 1e-3
    assert np.allclose(result.estimate.h, result.estimate.h.T)


def test_run_spe_without_excitation() -> None:
    (
        sim,
        selection,
        policy,
        q_tilde_c,
        r_tilde_c,
        exploration,
        _,
    ) = spe_setup(0.0, np.zeros(2))
    result = run_spe(
        sim,
        selection,
        policy,
        HEstimate.zeros(2, 1, 1),
        q_tilde_c,
        r_tilde_c,
        SpeConfig(max_steps=50),
        exploration,
    )
    assert not result.converged
    assert result.steps == 50


def test_run_spe_is_deterministic() -> None:
    thetas = []
    for _ in range(2):
        (
            sim,
            selection,
            policy,
            q_tilde_c,
            r_tilde_c,
            exploration,
            _,
        ) = spe_setup(0.5, np.array([0.3, 0.7]))
        result = run_spe(
            sim,
            selection,
            policy,
            HEstimate.zeros(2, 1, 1),
            q_tilde_c,
            r_tilde_c,
            SpeConfig(max_steps=200),
            exploration,
        )
        thetas.append(result.theta)
    assert np.array_equal(thetas[0], thetas[1])


def test_run_spe_rejects_mismatched_previous() -> None:
    (
        sim,
        selection,
        policy,
        q_tilde_c,
        r_tilde_c,
        exploration,
        _,
    ) = spe_setup(1.0, np.ones(2))
    with pytest.raises(DimensionError):
        run_spe(
            sim,
            selection,
            policy,
            HEstimate.zeros(3, 1, 1),
            q_tilde_c,
            r_tilde_c,
            SpeConfig(),
            exploration,
        )


def test_bellman_rows_are_exact_on_recorded_data() -> None:
    (
        sim,
        selection,
        policy,
        q_tilde_c,
        r_tilde_c,
        exploration,
        expected,
    ) = spe_setup(1.0, np.array([1.0, -1.0]))
    members = list(selection.members)
    sim.set_policy(policy)
    noise = excitation(exploration)
    rows, targets = [], []
    for _ in range(40):
        x_t = sim.observe(selection)
        inputs = sim.policy_input()
        inputs[members] += next(noise).reshape(2, 1)
        u_t = inputs[members].reshape(-1)
        sim.apply(inputs)
        x_next = sim.observe(selection)
        u_next = sim.policy_input()[members].reshape(-1)
        rows.append(
            regressor(
                np.concatenate([x_t, u_t]), np.concatenate([x_next, u_next])
            )
        )
        targets.append(local_cost(x_t, u_t, q_tilde_c, r_tilde_c))
    design, observed = np.array(rows), np.array(targets)
    truth = vech(expected.h)
    assert np.abs(observed - design @ truth).max() <= 1e-10
    solution = np.linalg.lstsq(design, observed, rcond=None)[0]
    assert np.allclose(solution, truth, rtol=0.0, atol=1e-8)


def test_run_spe_estimate_is_patterned() -> None:
    (
        sim,
        selection,
        policy,
        q_tilde_c,
        r_tilde_c,
        exploration,
        _,
    ) = spe_setup(1.0, np.array([1.0, -1.0]))
    result = run_spe(
        sim,
        selection,
        policy,
        HEstimate.zeros(2, 1, 1),
        q_tilde_c,
        r_tilde_c,
        SpeConfig(max_steps=500, projection=False),
        exploration,
    )
    assert result.converged
    estimate = result.estimate
    from_dense(estimate.h11, 2, tolerance=1e-3)
    from_dense(estimate.h21, 2, tolerance=1e-3)
    h22 = from_dense(estimate.h22, 2, tolerance=1e-3)
    assert pat_is_posdef(h22)


def test_run_spe_resumes_regression_state() -> None:
    (
        sim,
        selection,
        policy,
        q_tilde_c,
        r_tilde_c,
        exploration,
        _,
    ) = spe_setup(1.0, np.array([1.0, -1.0]))
    # A zero tolerance never reports convergence.
    config = SpeConfig(tolerance=0.0, max_steps=60)
    problem = (selection, policy, HEstimate.zeros(2, 1, 1))
    first = run_spe(sim, *problem, q_tilde_c, r_tilde_c, config, exploration)
    second = run_spe(
        sim,
        *problem,
        q_tilde_c,
        r_tilde_c,
        SpeConfig(tolerance=0.0, max_steps=100),
        exploration,
        resume=first.rls,
    )
    assert not first.converged and not second.converged
    assert first.steps == 60
    assert second.steps == 100
    assert np.trace(second.rls.pmat) <= np.trace(first.rls.pmat)
    with pytest.raises(DimensionError):
        run_spe(
            sim,
            *problem,
            q_tilde_c,
            r_tilde_c,
            config,
            exploration,
            resume=RlsState.initial(np.zeros(3), 1.0),
        )


def seconds_per_step(nodes: int) -> float:
    agent = AgentModel(np.array([[0.9]]), np.array([[1.0]]))
    graph = path_graph(nodes)
    selection = complete_subgraph(select_subgraph(graph))
    d = selection.d
    q_tilde_c, r_tilde_c = subgraph_cost(d, 1.0, 1.0, 1.0)
    policy = build_policy_learning([[-0.5]], [[0.0]], 0.0, graph, selection)
    config = SpeConfig(noise_variance=1.0, min_steps=300, max_steps=300)
    best = float("inf")
    for repeat in range(5):
        sim = Simulator(
            CompoundSystem(agent, nodes), np.random.default_rng(repeat)
        )
        result = run_spe(
            sim,
            selection,
            policy,
            HEstimate.zeros(d, 1, 1),
            q_tilde_c,
            r_tilde_c,
            config,
            ExplorationSpec(np.eye(d), seed=repeat),
        )
        best = min(best, result.elapsed / result.steps)
    return best


@pytest.mark.slow
def test_run_spe_cost_does_not_grow_with_network() -> None:
    seconds_per_step(5)  # warm-up
    assert seconds_per_step(30) < 1.5 * seconds_per_step(5)
