import numpy as np

from d3pi.network import AgentModel, controllability_matrix
from d3pi.oracle import dare_solve, lqr_gain
from d3pi.utils.numeric import spectral_radius

# Smallest singular value of the controllability matrix of a usable draw.
CONTROLLABILITY_FLOOR = 0.1


def random_agent(
    seed: int, max_states: int = 4, max_inputs: int = 2
) -> AgentModel:
    """
    Random controllable agent with `ρ(A) = 1`.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_states + 1))
    m = int(rng.integers(1, max_inputs + 1))
    while True:
        a = rng.standard_normal((n, n))
        a /= spectral_radius(a)
        b = rng.standard_normal((n, m))
        singular = np.linalg.svd(
            controllability_matrix(a, b), compute_uv=False
        )
        if singular.min() >= CONTROLLABILITY_FLOOR:
            return AgentModel(a, b)


def cautious_gain(agent: AgentModel, r_scale: float = 10.0) -> np.ndarray:
    """
    LQR gain of a single agent for `Q = I` and `R = r_scale I`.
    """
    q, r = np.eye(agent.n), r_scale * np.eye(agent.m)
    return lqr_gain(agent.a, agent.b, r, dare_solve(agent.a, agent.b, q, r))
