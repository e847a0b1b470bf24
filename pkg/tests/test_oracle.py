import numpy as np
import pytest
import scipy.linalg

from d3pi.error import UnstableError
from d3pi.graph import (
    compound_cost,
    edgeless_graph,
    path_graph,
    star_graph,
    subgraph_cost,
)
from d3pi.network import AgentModel, CompoundSystem
from d3pi.oracle import (
    assemble_h,
    dare_solve,
    dlyap,
    evaluate_policy_cost,
    lqr_gain,
    p_components,
    policy_cost_to_go,
    policy_iteration_shadow,
    structured_optimal,
    unstructured_lqr,
)
from d3pi.policy_iteration import patterned_gain
from d3pi.spe import cost_to_go_from_h
from d3pi.utils.numeric import spectral_radius

from .agent_test_helpers import cautious_gain, random_agent

GOLDEN_RATIO = (1 + np.sqrt(5)) / 2


def scalar_agent(a: float = 0.9, b: float = 1.0) -> AgentModel:
    return AgentModel(np.array([[a]]), np.array([[b]]))


def two_state_agent() -> AgentModel:
    return AgentModel(
        np.array([[1.0, 0.1], [0.0, 1.0]]), np.array([[0.0], [0.1]])
    )


def test_dare_without_dynamics() -> None:
    p = dare_solve([[0.0]], [[1.0]], [[1.0]], [[1.0]])
    assert p[0, 0] == pytest.approx(1.0)


def test_dare_integrator() -> None:
    p = dare_solve([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert p[0, 0] == pytest.approx(GOLDEN_RATIO)
    gain = lqr_gain([[1.0]], [[1.0]], [[1.0]], p)
    assert gain[0, 0] == pytest.approx(1 - GOLDEN_RATIO)


def test_dare_matches_scipy() -> None:
    agent = two_state_agent()
    q, r = np.diag([1.0, 2.0]), np.array([[0.5]])
    expected = scipy.linalg.solve_discrete_are(agent.a, agent.b, q, r)
    p = dare_solve(agent.a, agent.b, q, r)
    assert np.allclose(p, expected, rtol=1e-8)


def test_dlyap_matches_scipy() -> None:
    rng = np.random.default_rng(0)
    a = rng.uniform(-0.3, 0.3, (3, 3))
    q = np.diag([1.0, 2.0, 3.0])
    expected = scipy.linalg.solve_discrete_lyapunov(a.T, q)
    assert np.allclose(dlyap(a, q), expected, rtol=1e-9)


def test_dlyap_rejects_unstable() -> None:
    with pytest.raises(UnstableError):
        dlyap([[1.0]], [[1.0]])


def test_structured_optimal_without_dynamics() -> None:
    gain, cooperative, cost = structured_optimal(
        scalar_agent(0.0), 1.0, 1.0, 1.0, 3
    )
    assert gain[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert cooperative[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert cost.p1[0, 0] == pytest.approx(3.0)
    assert cost.p2[0, 0] == pytest.approx(-1.0)
    assert cost.delta[0, 0] == pytest.approx(4.0)


def test_structured_optimal_decoupled() -> None:
    gain, cooperative, cost = structured_optimal(
        scalar_agent(1.0), 1.0, 0.0, 1.0, 2
    )
    assert gain[0, 0] == pytest.approx(1 - GOLDEN_RATIO)
    assert cooperative[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert cost.p1[0, 0] == pytest.approx(GOLDEN_RATIO)


def test_structured_optimal_stabilizes_subgraph() -> None:
    agent = two_state_agent()
    d = 4
    gain, cooperative, cost = structured_optimal(
        agent, np.eye(2), 0.5 * np.eye(2), np.eye(1), d
    )
    a_tilde, b_tilde = CompoundSystem(agent, d).subgraph_lift(d)
    k_tilde = patterned_gain(gain, cooperative, d).dense()
    assert spectral_radius(a_tilde + b_tilde @ k_tilde) < 1.0
    assert np.all(np.linalg.eigvalsh(cost.dense()) > 0)


def test_policy_cost_to_go_is_consistent_with_h() -> None:
    agent = two_state_agent()
    d = 3
    q_tilde_c, r_tilde_c = subgraph_cost(d, np.eye(2), np.eye(2), np.eye(1))
    gain = patterned_gain([[-1.0, -2.0]], [[0.1, 0.2]], d)
    estimate = assemble_h(agent, q_tilde_c, r_tilde_c, gain, d)
    cost = policy_cost_to_go(agent, q_tilde_c, r_tilde_c, gain)
    assert np.allclose(
        cost_to_go_from_h(estimate, gain), cost.dense(), atol=1e-9
    )


def test_assemble_h_blocks() -> None:
    agent = two_state_agent()
    d = 3
    q1, q2, r = np.eye(2), np.eye(2), np.array([[2.0]])
    k, l = np.array([[-1.0, -2.0]]), np.array([[0.1, 0.2]])
    q_tilde_c, r_tilde_c = subgraph_cost(d, q1, q2, r)
    estimate = assemble_h(
        agent, q_tilde_c, r_tilde_c, patterned_gain(k, l, d).dense(), d
    )
    p1, p2 = p_components(agent, q1, q2, r, d, k, l)

    assert np.allclose(estimate.h, estimate.h.T)
    assert np.all(np.linalg.eigvalsh(estimate.h22) > 0)
    assert np.allclose(estimate.h22[:1, :1], r + agent.b.T @ p1 @ agent.b)
    assert np.allclose(estimate.h22[:1, 1:2], agent.b.T @ p2 @ agent.b)
    assert np.allclose(estimate.h21[:1, :2], agent.b.T @ p1 @ agent.a)


def test_assemble_h_rejects_destabilizing_gain() -> None:
    q_tilde_c, r_tilde_c = subgraph_cost(2, 1.0, 1.0, 1.0)
    with pytest.raises(UnstableError):
        assemble_h(
            scalar_agent(),
            q_tilde_c,
            r_tilde_c,
            patterned_gain([[1.0]], [[0.0]], 2),
            2,
        )


def test_policy_iteration_shadow_reaches_optimum() -> None:
    agent = scalar_agent()
    gain, cooperative, _ = structured_optimal(agent, 1.0, 1.0, 1.0, 3)
    sweeps = policy_iteration_shadow(agent, 1.0, 1.0, 1.0, 3, [[-0.5]])
    k, l, _ = sweeps[-1]
    assert np.allclose(k, gain, atol=1e-6)
    assert np.allclose(l, cooperative, atol=1e-6)
    assert np.array_equal(sweeps[0][0], [[-0.5]])
    assert np.array_equal(sweeps[0][1], [[0.0]])
    traces = [trace for _, _, trace in sweeps]
    assert all(b <= a + 1e-9 for a, b in zip(traces, traces[1:]))


@pytest.mark.parametrize("seed", range(8))
def test_policy_iteration_shadow_on_random_agents(seed: int) -> None:
    agent = random_agent(seed)
    d = 2 + seed % 3
    q, r = np.eye(agent.n), np.eye(agent.m)
    gain, cooperative, _ = structured_optimal(agent, q, q, r, d)
    sweeps = policy_iteration_shadow(
        agent, q, q, r, d, cautious_gain(agent), sweeps=60
    )
    k, l, _ = sweeps[-1]
    assert np.allclose(k, gain, atol=1e-8)
    assert np.allclose(l, cooperative, atol=1e-8)
    traces = [trace for _, _, trace in sweeps]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(traces, traces[1:]))


def test_evaluate_policy_cost_single_agent() -> None:
    cost = evaluate_policy_cost(
        [[0.0]], edgeless_graph(1), scalar_agent(0.0), 1.0, 1.0, 1.0
    )
    assert cost == pytest.approx(1.0)


def test_evaluate_policy_cost_rejects_unstable_gain() -> None:
    with pytest.raises(UnstableError):
        evaluate_policy_cost(
            np.zeros((3, 3)), path_graph(3), scalar_agent(1.2), 1.0, 1.0, 1.0
        )


def test_unstructured_lqr_matches_dense_riccati() -> None:
    agent = scalar_agent()
    graph = path_graph(4)
    q_hat, r_hat = compound_cost(graph, 1.0, 1.0, 1.0)
    a_hat, b_hat = CompoundSystem(agent, 4).lifted()
    p_hat = dare_solve(a_hat, b_hat, q_hat, r_hat)
    expected = lqr_gain(a_hat, b_hat, r_hat, p_hat)
    assert np.allclose(
        unstructured_lqr(agent, graph, 1.0, 1.0, 1.0), expected, atol=1e-8
    )


def test_unstructured_lqr_edgeless_is_agent_lqr() -> None:
    agent = two_state_agent()
    q1, r = np.diag([1.0, 3.0]), np.eye(1)
    gain = unstructured_lqr(agent, edgeless_graph(3), q1, np.eye(2), r)
    single = lqr_gain(agent.a, agent.b, r, dare_solve(agent.a, agent.b, q1, r))
    assert np.allclose(gain, np.kron(np.eye(3), single), atol=1e-8)


def test_unstructured_lqr_is_a_lower_bound() -> None:
    agent = scalar_agent()
    graph = star_graph(5)
    optimum = evaluate_policy_cost(
        unstructured_lqr(agent, graph, 1.0, 1.0, 1.0),
        graph,
        agent,
        1.0,
        1.0,
        1.0,
    )
    decentralized = evaluate_policy_cost(
        np.kron(np.eye(5), [[-0.5]]), graph, agent, 1.0, 1.0, 1.0
    )
    assert optimum <= decentralized
