import numpy as np
import pytest

from prefmpc.dynamics import (
    Trajectory,
    default_state_box,
    make_oscillating_masses,
)


@pytest.fixture(scope="session")
def osc_sys():
    return make_oscillating_masses()


@pytest.fixture(scope="session")
def state_box():
    return default_state_box()


def random_trajectory(sys, x0, n_steps, rng, input_scale=0.5):
    """Dynamics-consistent rollout under clipped random inputs."""
    states = np.empty((n_steps + 1, sys.nx))
    inputs = np.empty((n_steps, sys.nu))
    states[0] = x0
    for i in range(n_steps):
        u = np.clip(rng.normal(scale=input_scale, size=sys.nu), -sys.u_max, sys.u_max)
        inputs[i] = u
        states[i + 1] = sys.A @ states[i] + sys.B @ u
    return Trajectory(states=states, inputs=inputs)


def random_pair(sys, box, n_steps, rng, input_scale=0.5):
    """Two random rollouts from one sampled initial state."""
    x0 = rng.uniform(box.lower, box.upper)
    first = random_trajectory(sys, x0, n_steps, rng, input_scale)
    second = random_trajectory(sys, x0, n_steps, rng, input_scale)
    return first, second
