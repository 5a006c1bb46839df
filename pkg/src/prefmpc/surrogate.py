"""Learnable quadratic trajectory cost, pairwise preference probability,
and the regularized cross-entropy training problem.

The cost is linear in its parameters: f(T) = theta' phi(T), where phi stacks
per-coordinate squared sums over the stage states, the inputs, and the
terminal state.  Fitting pairwise labels is therefore a convex
bound-constrained logistic regression on feature differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .dynamics import SHARED_STATE_ATOL, Trajectory
from .errors import ModelSelectionError, PrefMpcError, TrainingError
from .mpc import THETA_MAX, THETA_MIN, ObjectiveParams


def features(traj: Trajectory) -> np.ndarray:
    """Per-coordinate squared sums: stage states, inputs, terminal state.

    Layout matches ``ObjectiveParams.as_vector()`` so the trajectory cost is
    the plain inner product of the two.
    """
    xs, us = traj.states, traj.inputs
    stage = np.sum(xs[:-1] ** 2, axis=0)
    inputs = np.sum(us ** 2, axis=0)
    terminal = xs[-1] ** 2
    return np.concatenate([stage, inputs, terminal])


def trajectory_cost(params: ObjectiveParams, traj: Trajectory) -> float:
    return float(params.as_vector() @ features(traj))


def pref_probability(params: ObjectiveParams, first: Trajectory, second: Trajectory) -> float:
    """Probability that ``first`` is preferred: sigmoid of the cost gap."""
    gap = trajectory_cost(params, first) - trajectory_cost(params, second)
    return float(expit(-gap))


def classify(params: ObjectiveParams, first: Trajectory, second: Trajectory) -> int:
    """1 if ``first`` has the smaller (or equal) cost, else 0."""
    return int(trajectory_cost(params, first) <= trajectory_cost(params, second))


@dataclass
class PreferenceRecord:
    """One labeled comparison: two trajectories from a shared initial state."""

    first: Trajectory
    second: Trajectory
    label: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        gap = np.max(np.abs(self.first.initial_state - self.second.initial_state))
        if gap > SHARED_STATE_ATOL:
            raise ValueError(
                f"record trajectories must share the initial state (gap {gap:.3e})"
            )

    def to_json_obj(self) -> dict:
        return {
            "first": self.first.to_json_obj(),
            "second": self.second.to_json_obj(),
            "label": self.label,
            "meta": self.meta,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PreferenceRecord":
        return cls(
            first=Trajectory.from_json_obj(obj["first"]),
            second=Trajectory.from_json_obj(obj["second"]),
            label=int(obj["label"]),
            meta=obj.get("meta", {}),
        )


class PreferenceDataset:
    """Growing collection of labeled trajectory comparisons."""

    def __init__(self, records=None):
        self.records: list[PreferenceRecord] = []
        for rec in records or []:
            self.append(rec)

    def append(self, record: PreferenceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def copy(self) -> "PreferenceDataset":
        ds = PreferenceDataset()
        ds.records = list(self.records)
        return ds

    def initial_states(self) -> np.ndarray:
        return np.array([rec.first.initial_state for rec in self.records])

    def labels(self) -> np.ndarray:
        return np.array([rec.label for rec in self.records], dtype=float)

    def feature_deltas(self) -> np.ndarray:
        """Row l is phi(first_l) - phi(second_l)."""
        return np.array([features(rec.first) - features(rec.second) for rec in self.records])

    def save_jsonl(self, path) -> None:
        path = Path(path)
        with path.open("w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json_obj(), sort_keys=True))
                fh.write("\n")

    @classmethod
    def load_jsonl(cls, path) -> "PreferenceDataset":
        ds = cls()
        with Path(path).open() as fh:
            for line in fh:
                line = line.strip()
                if line:
                    ds.append(PreferenceRecord.from_json_obj(json.loads(line)))
        return ds


@dataclass(frozen=True)
class TrainConfig:
    """Two-stage training settings: projected Adam then bounded quasi-Newton."""

    adam_iters: int = 1000
    adam_lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    ridge: float = 1e-4
    qn_max_iter: int = 500
    qn_grad_tol: float = 1e-8
    theta_min: float = THETA_MIN
    theta_max: float = THETA_MAX

    def __post_init__(self):
        for name in ("adam_iters", "adam_lr", "adam_beta1", "adam_beta2",
                     "ridge", "qn_max_iter", "qn_grad_tol", "theta_min", "theta_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_json_obj(self) -> dict:
        return {
            "adam_iters": self.adam_iters,
            "adam_lr": self.adam_lr,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "ridge": self.ridge,
            "qn_max_iter": self.qn_max_iter,
            "qn_grad_tol": self.qn_grad_tol,
            "theta_min": self.theta_min,
            "theta_max": self.theta_max,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrainConfig":
        return cls(**{k: obj[k] for k in obj})


def _loss_and_grad(theta_vec: np.ndarray, deltas: np.ndarray, labels: np.ndarray,
                   ridge: float) -> tuple[float, np.ndarray]:
    """Ridge + mean cross-entropy of the pairwise logistic model, with its
    analytic gradient.  Overflow-safe via log-sum-exp."""
    gaps = deltas @ theta_vec
    # -log sigmoid(-gap) = logaddexp(0, gap)
    losses = labels * np.logaddexp(0.0, gaps) + (1.0 - labels) * np.logaddexp(0.0, -gaps)
    value = ridge * float(theta_vec @ theta_vec) + float(np.mean(losses))
    p_hat = expit(-gaps)
    grad = 2.0 * ridge * theta_vec + deltas.T @ (labels - p_hat) / labels.shape[0]
    return value, grad


def training_objective(params: ObjectiveParams, dataset: PreferenceDataset,
                       cfg: TrainConfig) -> tuple[float, np.ndarray]:
    """Objective value and analytic gradient at the given weights."""
    if len(dataset) == 0:
        raise ValueError("dataset must contain at least one record")
    return _loss_and_grad(params.as_vector(), dataset.feature_deltas(),
                          dataset.labels(), cfg.ridge)


def _run_adam(theta: np.ndarray, deltas: np.ndarray, labels: np.ndarray,
              cfg: TrainConfig) -> np.ndarray:
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    eps = 1e-8
    for k in range(1, cfg.adam_iters + 1):
        value, grad = _loss_and_grad(theta, deltas, labels, cfg.ridge)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise TrainingError(
                f"non-finite objective at Adam iteration {k}: value={value}, "
                f"theta range [{theta.min():.3e}, {theta.max():.3e}]"
            )
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad * grad
        m_hat = m / (1.0 - cfg.adam_beta1 ** k)
        v_hat = v / (1.0 - cfg.adam_beta2 ** k)
        theta = theta - cfg.adam_lr * m_hat / (np.sqrt(v_hat) + eps)
        theta = np.clip(theta, cfg.theta_min, cfg.theta_max)
    return theta


def train(dataset: PreferenceDataset, theta_init: ObjectiveParams | None,
          cfg: TrainConfig | None = None, rng_seed=None) -> ObjectiveParams:
    """Fit the pairwise logistic model: projected Adam, then L-BFGS-B within
    the weight bounds.

    ``theta_init=None`` draws a log-uniform initialization from ``rng_seed``.
    The returned weights are never worse (in objective) than the
    initialization.  Deterministic given (dataset, init, config, seed).
    """
    if len(dataset) == 0:
        raise ValueError("dataset must contain at least one record")
    cfg = cfg or TrainConfig()
    deltas = dataset.feature_deltas()
    labels = dataset.labels()
    nx = dataset.records[0].first.states.shape[1]
    nu = dataset.records[0].first.inputs.shape[1]

    if theta_init is None:
        from .mpc import sample_log_uniform_params
        theta_init = sample_log_uniform_params(rng_seed, nx, nu)
    init_vec = np.clip(theta_init.as_vector(), cfg.theta_min, cfg.theta_max)

    adam_vec = _run_adam(init_vec.copy(), deltas, labels, cfg)

    result = minimize(
        _loss_and_grad, adam_vec, args=(deltas, labels, cfg.ridge), jac=True,
        method="L-BFGS-B",
        bounds=[(cfg.theta_min, cfg.theta_max)] * init_vec.shape[0],
        options={"maxiter": cfg.qn_max_iter, "gtol": cfg.qn_grad_tol, "ftol": 1e-14},
    )
    qn_vec = np.clip(result.x, cfg.theta_min, cfg.theta_max)

    candidates = [qn_vec, adam_vec, init_vec]
    values = [_loss_and_grad(c, deltas, labels, cfg.ridge)[0] for c in candidates]
    if not all(np.isfinite(values)):
        raise TrainingError(f"non-finite objective after optimization: {values}")
    best = candidates[int(np.argmin(values))]
    return ObjectiveParams.from_vector(best, nx, nu)


def select_model(candidates, evaluator) -> ObjectiveParams:
    """Keep the candidate whose evaluated settling times have the smallest
    maximum; ties fall to the smaller average, then to candidate order.

    ``evaluator`` maps candidate weights to a sequence of per-state settling
    times.  A candidate whose evaluation fails is disqualified.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("need at least one candidate")
    best = None
    best_key = None
    failures = []
    for idx, cand in enumerate(candidates):
        try:
            settles = np.asarray(evaluator(cand), dtype=float)
        except PrefMpcError as exc:
            failures.append(f"candidate {idx}: {exc}")
            continue
        key = (float(settles.max()), float(settles.mean()), idx)
        if best_key is None or key < best_key:
            best, best_key = cand, key
    if best is None:
        raise ModelSelectionError(
            "all candidates disqualified: " + "; ".join(failures)
        )
    return best
