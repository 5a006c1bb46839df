"""Linear plant models, trajectories, closed-loop simulation, and the
oscillating-masses benchmark used throughout the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from .errors import ConstraintViolationError

# Tolerance for the dynamics-consistency check on stored trajectories.
DYNAMICS_ATOL = 1e-10
# Two trajectories form a valid comparison pair only if their initial
# states agree to this tolerance.
SHARED_STATE_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Discrete-time LTI plant x+ = A x + B u, y = C x with an input box |u| <= u_max.

    Attributes
    ----------
    A : (nx, nx) ndarray
        State transition matrix.
    B : (nx, nu) ndarray
        Input map.
    C : (ny, nx) ndarray
        Output map.
    u_max : (nu,) ndarray
        Per-channel input bound, strictly positive.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        u_max = np.atleast_1d(np.asarray(self.u_max, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B rows {B.shape[0]} != nx {A.shape[0]}")
        if C.shape[1] != A.shape[0]:
            raise ValueError(f"C cols {C.shape[1]} != nx {A.shape[0]}")
        if u_max.shape != (B.shape[1],):
            raise ValueError(f"u_max shape {u_max.shape} != (nu,)=({B.shape[1]},)")
        if np.any(u_max <= 0):
            raise ValueError("u_max must be positive elementwise")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "u_max", u_max)

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def ny(self) -> int:
        return self.C.shape[0]

    def to_json_obj(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "u_max": self.u_max.tolist(),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "LinearSystem":
        return cls(
            A=np.asarray(obj["A"], dtype=float),
            B=np.asarray(obj["B"], dtype=float),
            C=np.asarray(obj["C"], dtype=float),
            u_max=np.asarray(obj["u_max"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One closed-loop rollout: states x_0..x_N and inputs u_0..u_{N-1}."""

    states: np.ndarray  # (N+1, nx)
    inputs: np.ndarray  # (N, nu)

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if states.shape[0] != inputs.shape[0] + 1:
            raise ValueError(
                f"states rows {states.shape[0]} must be inputs rows {inputs.shape[0]} + 1"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    @property
    def initial_state(self) -> np.ndarray:
        return self.states[0]

    @cached_property
    def flat(self) -> np.ndarray:
        """States and inputs concatenated into one vector (used by distances)."""
        return np.concatenate([self.states.ravel(), self.inputs.ravel()])

    def check_valid(self, sys: LinearSystem, atol: float = DYNAMICS_ATOL) -> None:
        """Raise if the trajectory violates the dynamics or the input box."""
        pred = self.states[:-1] @ sys.A.T + self.inputs @ sys.B.T
        err = np.max(np.abs(pred - self.states[1:])) if self.horizon else 0.0
        if err > atol:
            raise ValueError(f"dynamics inconsistency {err:.3e} exceeds {atol:.1e}")
        if np.any(np.abs(self.inputs) > sys.u_max):
            raise ConstraintViolationError("inputs exceed the admissible box")

    def to_json_obj(self) -> dict:
        return {"x": self.states.tolist(), "u": self.inputs.tolist()}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Trajectory":
        return cls(
            states=np.asarray(obj["x"], dtype=float),
            inputs=np.asarray(obj["u"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class TrajectoryPair:
    """Two trajectories sharing one initial state; the unit of a preference query."""

    first: Trajectory
    second: Trajectory

    def __post_init__(self):
        if self.first.horizon != self.second.horizon:
            raise ValueError("paired trajectories must share the horizon")
        gap = np.max(np.abs(self.first.initial_state - self.second.initial_state))
        if gap > SHARED_STATE_ATOL:
            raise ValueError(
                f"paired trajectories must share the initial state (gap {gap:.3e})"
            )

    @property
    def initial_state(self) -> np.ndarray:
        return self.first.initial_state

    def to_json_obj(self) -> dict:
        return {"first": self.first.to_json_obj(), "second": self.second.to_json_obj()}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrajectoryPair":
        return cls(
            first=Trajectory.from_json_obj(obj["first"]),
            second=Trajectory.from_json_obj(obj["second"]),
        )


@dataclass(frozen=True, eq=False)
class StateBox:
    """Axis-aligned box of initial states, containing the origin in its interior."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("lower/upper shape mismatch")
        if np.any(lower >= upper):
            raise ValueError("box requires lower < upper elementwise")
        if np.any(lower >= 0) or np.any(upper <= 0):
            raise ValueError("box must contain the origin in its interior")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def to_json_obj(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "StateBox":
        return cls(
            lower=np.asarray(obj["lower"], dtype=float),
            upper=np.asarray(obj["upper"], dtype=float),
        )


def simulate_step(sys: LinearSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One plant step A x + B u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (sys.nx,):
        raise ValueError(f"state shape {x.shape} != ({sys.nx},)")
    if u.shape != (sys.nu,):
        raise ValueError(f"input shape {u.shape} != ({sys.nu},)")
    return sys.A @ x + sys.B @ u


def simulate_closed_loop(sys: LinearSystem, controller, x0: np.ndarray, n_steps: int) -> Trajectory:
    """Roll the plant forward under a state-feedback law.

    ``controller`` is any callable mapping a state vector to an input vector.
    Controllers exposing ``reset()`` are reset first so the rollout does not
    depend on leftover warm-start state.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.nx,):
        raise ValueError(f"x0 shape {x0.shape} != ({sys.nx},)")
    if hasattr(controller, "reset"):
        controller.reset()
    states = np.empty((n_steps + 1, sys.nx))
    inputs = np.empty((n_steps, sys.nu))
    states[0] = x0
    for i in range(n_steps):
        u = np.asarray(controller(states[i]), dtype=float)
        if u.shape != (sys.nu,):
            raise ValueError(f"controller returned shape {u.shape} != ({sys.nu},)")
        if np.any(np.abs(u) > sys.u_max):
            raise ConstraintViolationError(
                f"controller output exceeds input box at step {i}", step=i
            )
        inputs[i] = u
        states[i + 1] = sys.A @ states[i] + sys.B @ u
    return Trajectory(states=states, inputs=inputs)


@dataclass(frozen=True)
class OscillatingMassesConfig:
    """Physical parameters of the three-mass benchmark.

    Three masses are connected in a chain between two walls by four
    identical springs; forces act on the two outermost masses.  The
    continuous dynamics are discretized by exact zero-order hold.
    """

    masses: tuple = (1.0, 1.0, 1.0)
    stiffness: float = 2.0
    sampling_period: float = 0.25
    u_max: float = 2.0

    def __post_init__(self):
        if len(self.masses) != 3 or any(m <= 0 for m in self.masses):
            raise ValueError("masses must be three positive values")
        if self.stiffness <= 0:
            raise ValueError("stiffness must be positive")
        if self.sampling_period <= 0:
            raise ValueError("sampling_period must be positive")
        if self.u_max <= 0:
            raise ValueError("u_max must be positive")

    def to_json_obj(self) -> dict:
        return {
            "masses": list(self.masses),
            "stiffness": self.stiffness,
            "sampling_period": self.sampling_period,
            "u_max": self.u_max,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "OscillatingMassesConfig":
        return cls(
            masses=tuple(obj.get("masses", (1.0, 1.0, 1.0))),
            stiffness=obj.get("stiffness", 2.0),
            sampling_period=obj.get("sampling_period", 0.25),
            u_max=obj.get("u_max", 2.0),
        )


def make_oscillating_masses(config: OscillatingMassesConfig | None = None) -> LinearSystem:
    """Build the discretized oscillating-masses plant.

    State is (p1, p2, p3, v1, v2, v3), inputs are the forces (F1, F2) on the
    outermost masses, output is the position vector (p1, p2, p3).
    """
    cfg = config or OscillatingMassesConfig()
    m = np.asarray(cfg.masses, dtype=float)
    k = cfg.stiffness
    # Spring coupling: wall - m1 - m2 - m3 - wall, all springs identical.
    coupling = k * np.array([[-2.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -2.0]])
    force_map = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    inv_m = np.diag(1.0 / m)
    a_cont = np.zeros((6, 6))
    a_cont[:3, 3:] = np.eye(3)
    a_cont[3:, :3] = inv_m @ coupling
    b_cont = np.zeros((6, 2))
    b_cont[3:, :] = inv_m @ force_map
    # Exact ZOH via the augmented-matrix exponential.
    aug = np.zeros((8, 8))
    aug[:6, :6] = a_cont
    aug[:6, 6:] = b_cont
    phi = expm(aug * cfg.sampling_period)
    a_disc = phi[:6, :6]
    b_disc = phi[:6, 6:]
    c = np.hstack([np.eye(3), np.zeros((3, 3))])
    return LinearSystem(A=a_disc, B=b_disc, C=c, u_max=np.full(2, cfg.u_max))


def default_state_box(position_bound: float = 0.2, velocity_bound: float = 0.05) -> StateBox:
    """Initial-state box for the benchmark: |p_i| <= 0.2, |v_i| <= 0.05."""
    hi = np.array([position_bound] * 3 + [velocity_bound] * 3)
    return StateBox(lower=-hi, upper=hi)


def sample_initial_states(box: StateBox, n: int, rng_seed) -> np.ndarray:
    """Draw n i.i.d. uniform samples from the box; deterministic per seed.

    ``rng_seed`` may be an integer seed or an existing ``numpy.random.Generator``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return rng.uniform(box.lower, box.upper, size=(n, box.dim))
