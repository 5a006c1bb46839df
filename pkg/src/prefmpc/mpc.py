"""Finite-horizon MPC with a learnable diagonal quadratic objective under
input-box constraints.

The horizon problem is condensed to a dense, strictly convex box-constrained
QP in the stacked input sequence and solved with an accelerated projected
gradient method (step 1/lambda_max, momentum from the known strong-convexity
constant, gradient-based restart).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import LinearSystem
from .errors import SolverConvergenceError

# numba only accelerates the solver kernels; everything works without it.
try:
    from numba import njit as _njit
except Exception:  # pragma: no cover - numba is optional
    def _njit(*args, **kwargs):
        def deco(fn):
            return fn
        return deco

THETA_MIN = 1e-6
THETA_MAX = 1e6

DEFAULT_QP_TOL = 1e-8
DEFAULT_QP_MAX_ITER = 20000


@dataclass(frozen=True, eq=False)
class ObjectiveParams:
    """Positive diagonal weights (stage state, stage input, terminal state)
    of the quadratic MPC objective."""

    q_diag: np.ndarray
    r_diag: np.ndarray
    p_diag: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q_diag, dtype=float))
        r = np.atleast_1d(np.asarray(self.r_diag, dtype=float))
        p = np.atleast_1d(np.asarray(self.p_diag, dtype=float))
        if q.shape != p.shape:
            raise ValueError("q_diag and p_diag must have the same length")
        for name, arr in (("q_diag", q), ("r_diag", r), ("p_diag", p)):
            if np.any(arr < THETA_MIN) or np.any(arr > THETA_MAX):
                raise ValueError(
                    f"{name} entries must lie in [{THETA_MIN:g}, {THETA_MAX:g}]"
                )
        object.__setattr__(self, "q_diag", q)
        object.__setattr__(self, "r_diag", r)
        object.__setattr__(self, "p_diag", p)

    @property
    def nx(self) -> int:
        return self.q_diag.shape[0]

    @property
    def nu(self) -> int:
        return self.r_diag.shape[0]

    @property
    def n_params(self) -> int:
        return 2 * self.nx + self.nu

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q_diag, self.r_diag, self.p_diag])

    @classmethod
    def from_vector(cls, vec: np.ndarray, nx: int, nu: int) -> "ObjectiveParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (2 * nx + nu,):
            raise ValueError(f"vector shape {vec.shape} != ({2 * nx + nu},)")
        return cls(q_diag=vec[:nx], r_diag=vec[nx:nx + nu], p_diag=vec[nx + nu:])

    def scaled(self, c: float) -> "ObjectiveParams":
        return ObjectiveParams(self.q_diag * c, self.r_diag * c, self.p_diag * c)

    def to_json_obj(self) -> dict:
        return {
            "q": self.q_diag.tolist(),
            "r": self.r_diag.tolist(),
            "p": self.p_diag.tolist(),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ObjectiveParams":
        return cls(
            q_diag=np.asarray(obj["q"], dtype=float),
            r_diag=np.asarray(obj["r"], dtype=float),
            p_diag=np.asarray(obj["p"], dtype=float),
        )


def sample_log_uniform_params(rng, nx: int, nu: int,
                              low: float = 1e-2, high: float = 1e2) -> ObjectiveParams:
    """Draw diagonal weights log-uniformly from [low, high] per coordinate."""
    rng = np.random.default_rng(rng)
    lo, hi = np.log10(low), np.log10(high)
    vec = 10.0 ** rng.uniform(lo, hi, size=2 * nx + nu)
    return ObjectiveParams.from_vector(vec, nx, nu)


@dataclass(frozen=True, eq=False)
class CondensedQP:
    """Dense input-only QP: minimize 0.5 U'HU + q'U + constant over the box."""

    H: np.ndarray
    q: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    constant: float


@_njit(cache=True)
def _power_iteration(H, rel_tol, max_iter):
    n = H.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(max_iter):
        w = np.dot(H, v)
        norm = np.sqrt(np.sum(w * w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam_new = np.dot(v, np.dot(H, v))
        scale = np.abs(lam_new)
        if scale < 1e-300:
            scale = 1e-300
        if np.abs(lam_new - lam) <= rel_tol * scale:
            return lam_new
        lam = lam_new
    return lam


def _power_lambda_max(H: np.ndarray, rel_tol: float = 1e-10, max_iter: int = 10000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    return float(_power_iteration(np.ascontiguousarray(H, dtype=float),
                                  rel_tol, max_iter))


def _curvature_bounds(H: np.ndarray) -> tuple[float, float]:
    """(lambda_max, lambda_min) estimates via two power iterations."""
    lam_max = _power_lambda_max(H)
    if lam_max == 0.0:
        return 0.0, 0.0
    # lambda_min(H) = lam_max - lambda_max(lam_max*I - H)
    shifted = lam_max * np.eye(H.shape[0]) - H
    lam_min = lam_max - _power_lambda_max(shifted)
    return lam_max, max(lam_min, 0.0)


class _CondensedForm:
    """State-independent pieces of the condensed QP for one (system, weights,
    horizon) triple; reused across receding-horizon steps."""

    def __init__(self, sys: LinearSystem, params: ObjectiveParams, horizon: int):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if params.nx != sys.nx or params.nu != sys.nu:
            raise ValueError("objective dimensions do not match the system")
        self.sys = sys
        self.params = params
        self.horizon = horizon
        nx, nu, N = sys.nx, sys.nu, horizon

        # Prediction matrices for the stacked states x_1..x_N.
        powers = [np.eye(nx)]
        for _ in range(N):
            powers.append(sys.A @ powers[-1])
        phi = np.vstack(powers[1:])
        gamma = np.zeros((N * nx, N * nu))
        for i in range(1, N + 1):
            for j in range(i):
                gamma[(i - 1) * nx:i * nx, j * nu:(j + 1) * nu] = powers[i - 1 - j] @ sys.B

        # Stage weights on x_1..x_{N-1}, terminal weight on x_N.
        w_states = np.concatenate([np.tile(params.q_diag, N - 1), params.p_diag])
        w_inputs = np.tile(params.r_diag, N)

        H = 2.0 * ((gamma.T * w_states) @ gamma + np.diag(w_inputs))
        self.H = 0.5 * (H + H.T)
        self.q_map = 2.0 * (gamma.T * w_states) @ phi
        cm = np.diag(params.q_diag) + (phi.T * w_states) @ phi
        self.const_map = 0.5 * (cm + cm.T)
        self.lower = -np.tile(sys.u_max, N)
        self.upper = np.tile(sys.u_max, N)
        self.lam_max, self.lam_min = _curvature_bounds(self.H)

    def at_state(self, x: np.ndarray) -> CondensedQP:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.sys.nx,):
            raise ValueError(f"state shape {x.shape} != ({self.sys.nx},)")
        return CondensedQP(
            H=self.H,
            q=self.q_map @ x,
            lower=self.lower,
            upper=self.upper,
            constant=float(x @ self.const_map @ x),
        )


def build_condensed_qp(sys: LinearSystem, params: ObjectiveParams,
                       x_t: np.ndarray, horizon: int) -> CondensedQP:
    """Condense the horizon problem at state x_t into a dense box QP.

    For any stacked input sequence U, 0.5 U'HU + q'U + constant equals the
    quadratic trajectory cost of rolling the plant from x_t under U.
    """
    return _CondensedForm(sys, params, horizon).at_state(x_t)


@_njit(cache=True)
def _apg_kernel(H, q, lo, hi, u_in, u_prev_in, t_in, step, beta, tol, n_iter):
    """Accelerated projected-gradient chunk.

    One matvec per iteration: the gradient at the extrapolated point is a
    linear combination of the gradients at the last two iterates.  ``beta``
    is the constant strong-convexity momentum; beta < 0 selects the 1/k^2
    schedule.  Momentum resets whenever it points uphill.  Carries the
    iterate pair and schedule state so the caller can resume.
    """
    u_prev = u_prev_in.copy()
    g_prev = np.dot(H, u_prev) + q
    u = u_in.copy()
    g_u = np.dot(H, u) + q
    t = t_in
    if beta >= 0.0:
        coef = beta
    else:
        coef = (t - 1.0) / (0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t)))
    residual = np.inf
    for it in range(n_iter):
        grad_v = (1.0 + coef) * g_u - coef * g_prev
        v = (1.0 + coef) * u - coef * u_prev
        u_new = np.minimum(np.maximum(v - step * grad_v, lo), hi)
        g_new = np.dot(H, u_new) + q
        pg = u_new - np.minimum(np.maximum(u_new - step * g_new, lo), hi)
        residual = np.max(np.abs(pg))
        if residual <= tol:
            return u_new, u, t, residual, it + 1, True
        ascent = np.dot(grad_v, u_new - u)
        if ascent > 0.0:
            coef = 0.0
            t = 1.0
        elif beta >= 0.0:
            coef = beta
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            coef = (t - 1.0) / t_new
            t = t_new
        u_prev = u
        g_prev = g_u
        u = u_new
        g_u = g_new
    return u, u_prev, t, residual, n_iter, False


def solve_box_qp(qp: CondensedQP, tol: float = DEFAULT_QP_TOL,
                 max_iter: int = DEFAULT_QP_MAX_ITER,
                 warm_start: np.ndarray | None = None,
                 curvature: tuple[float, float] | None = None) -> np.ndarray:
    """Solve the box QP by accelerated projected gradient.

    Convergence is declared when the projected-gradient fixed-point residual
    ||U - clip(U - grad/L)||_inf drops below ``tol``.  ``curvature`` may carry
    precomputed (lambda_max, lambda_min) to skip the power iterations.

    Raises
    ------
    SolverConvergenceError
        If the residual is still above ``tol`` after ``max_iter`` iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    H = np.ascontiguousarray(qp.H, dtype=float)
    q = np.ascontiguousarray(qp.q, dtype=float)
    lo = np.ascontiguousarray(qp.lower, dtype=float)
    hi = np.ascontiguousarray(qp.upper, dtype=float)
    lam_max, lam_min = curvature if curvature is not None else _curvature_bounds(H)
    if lam_max <= 0.0:
        raise ValueError("H must be positive definite")
    step = 1.0 / lam_max
    if lam_min > 0.0:
        ratio = np.sqrt(lam_min / lam_max)
        beta = (1.0 - ratio) / (1.0 + ratio)
    else:
        beta = -1.0  # 1/k^2 momentum schedule
    u0 = np.ascontiguousarray(
        np.clip(warm_start if warm_start is not None else np.zeros_like(q), lo, hi),
        dtype=float)
    u, u_prev, t = u0, u0, 1.0
    residual = np.inf
    done = 0
    chunk = 250  # between active-set polish attempts
    while done < max_iter:
        n_iter = min(chunk, max_iter - done)
        u, u_prev, t, residual, used, converged = _apg_kernel(
            H, q, lo, hi, u, u_prev, t, step, beta, tol, n_iter)
        done += used
        # Polish regardless of convergence: once the active set has been
        # identified, the exact free-block solve both finishes stalled runs
        # and makes the answer independent of the starting point.
        polished = _polish(H, q, lo, hi, u, step, tol)
        if polished is not None:
            return polished
        if converged:
            return u
    raise SolverConvergenceError(
        f"box QP did not converge in {done} iterations "
        f"(residual {residual:.3e})",
        residual=float(residual),
        iterations=int(done),
    )


@_njit(cache=True)
def _polish_kernel(H, q, lo, hi, u, step, tol, max_rounds):
    """Active-set finisher seeded by the current iterate: solve the free
    block exactly (one refinement step), clamp coordinates the solve pushes
    out of bounds, release clamped coordinates with wrong multiplier signs,
    repeat.  Singular free blocks cannot occur for positive definite H."""
    n = u.shape[0]
    state = np.zeros(n, dtype=np.int8)  # -1 at lower, 0 free, +1 at upper
    for i in range(n):
        band = 1e-9 * max(1.0, hi[i] - lo[i])
        if u[i] <= lo[i] + band:
            state[i] = -1
        elif u[i] >= hi[i] - band:
            state[i] = 1
    x = np.empty(n)
    for _ in range(max_rounds):
        nf = 0
        for i in range(n):
            if state[i] == -1:
                x[i] = lo[i]
            elif state[i] == 1:
                x[i] = hi[i]
            else:
                nf += 1
        if nf > 0:
            idx = np.empty(nf, dtype=np.int64)
            k = 0
            for i in range(n):
                if state[i] == 0:
                    idx[k] = i
                    k += 1
            Hff = np.empty((nf, nf))
            rhs = np.empty(nf)
            for a in range(nf):
                ia = idx[a]
                acc = q[ia]
                for j in range(n):
                    if state[j] != 0:
                        acc += H[ia, j] * x[j]
                rhs[a] = -acc
                for b in range(nf):
                    Hff[a, b] = H[ia, idx[b]]
            sol = np.linalg.solve(Hff, rhs)
            sol = sol + np.linalg.solve(Hff, rhs - np.dot(Hff, sol))
            violated = False
            for a in range(nf):
                if sol[a] < lo[idx[a]]:
                    state[idx[a]] = -1
                    violated = True
                elif sol[a] > hi[idx[a]]:
                    state[idx[a]] = 1
                    violated = True
            if violated:
                continue
            for a in range(nf):
                x[idx[a]] = sol[a]
        g = np.dot(H, x) + q
        released = False
        for i in range(n):
            if state[i] == -1 and g[i] < 0.0:
                state[i] = 0
                released = True
            elif state[i] == 1 and g[i] > 0.0:
                state[i] = 0
                released = True
        if released:
            continue
        pg = x - np.minimum(np.maximum(x - step * g, lo), hi)
        return x, np.max(np.abs(pg)) <= tol
    return x, False


def _polish(H, q, lo, hi, u, step, tol):
    x, ok = _polish_kernel(H, q, lo, hi, u, step, tol, 60)
    return x if ok else None


class MPCController:
    """Receding-horizon control law for a fixed (system, weights, horizon).

    The condensed QP pieces are built once; each call re-solves the QP at the
    current state, warm-started from the previous solution shifted by one
    step.  Instances carry warm-start state and must not be shared across
    concurrent rollouts; ``simulate_closed_loop`` resets them automatically.
    """

    def __init__(self, sys: LinearSystem, params: ObjectiveParams, horizon: int,
                 tol: float = DEFAULT_QP_TOL, max_iter: int = DEFAULT_QP_MAX_ITER,
                 tag: str = "mpc"):
        self.form = _CondensedForm(sys, params, horizon)
        self.params = params
        self.horizon = horizon
        self.tol = tol
        self.max_iter = max_iter
        self.tag = tag
        self._warm = None

    def reset(self) -> None:
        self._warm = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        qp = self.form.at_state(x)
        u_seq = solve_box_qp(
            qp, tol=self.tol, max_iter=self.max_iter, warm_start=self._warm,
            curvature=(self.form.lam_max, self.form.lam_min),
        )
        nu = self.form.sys.nu
        self._warm = np.concatenate([u_seq[nu:], u_seq[-nu:]])
        return u_seq[:nu].copy()


def mpc_step(sys: LinearSystem, params: ObjectiveParams, x_t: np.ndarray,
             horizon: int, tol: float = DEFAULT_QP_TOL,
             max_iter: int = DEFAULT_QP_MAX_ITER) -> np.ndarray:
    """First input of the optimal horizon sequence at state x_t."""
    form = _CondensedForm(sys, params, horizon)
    u_seq = solve_box_qp(form.at_state(x_t), tol=tol, max_iter=max_iter,
                         curvature=(form.lam_max, form.lam_min))
    return u_seq[:sys.nu].copy()


def make_random_quadratic_controller(rng_seed, sys: LinearSystem, horizon: int,
                                     tol: float = DEFAULT_QP_TOL,
                                     max_iter: int = DEFAULT_QP_MAX_ITER,
                                     tag: str | None = None) -> MPCController:
    """MPC controller with diagonal weights drawn log-uniformly from [1e-1, 1e1].

    The spread covers sluggish to aggressive closed-loop behavior while
    keeping most rollouts from the benchmark's initial-state box settling
    within the horizon; wider spreads leave the comparison data dominated by
    never-settling ties.
    """
    params = sample_log_uniform_params(rng_seed, sys.nx, sys.nu, low=1e-1, high=1e1)
    return MPCController(sys, params, horizon, tol=tol, max_iter=max_iter,
                         tag=tag or "random-mpc")
