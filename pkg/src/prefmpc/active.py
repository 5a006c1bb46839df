"""Active-learning strategies over preference queries: pool-based selection
by uncertainty x diversity, query synthesis with a growing controller pool,
and the random-sampling baseline."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dynamics import (
    LinearSystem,
    StateBox,
    Trajectory,
    TrajectoryPair,
    simulate_closed_loop,
)
from .errors import IterationError, LoopAbortedError, PoolExhaustedError
from .mpc import MPCController, ObjectiveParams, sample_log_uniform_params
from .oracle import (
    PreferenceOracle,
    PreferenceQuery,
    SettlingConfig,
    build_query_display,
    max_input_norm,
    settling_time,
)
from .surrogate import (
    PreferenceDataset,
    PreferenceRecord,
    TrainConfig,
    features,
    pref_probability,
    select_model,
    train,
)


class DiversityVariant(str, Enum):
    """Diversity factor used inside the acquisition score."""

    UNCERTAINTY_ONLY = "uncertainty"   # D = 1
    INTRA_ONLY = "intra"               # D = within-pair distance
    INTER_ONLY = "inter"               # D = min distance to labeled pairs
    SUM = "sum"                        # D = inter + intra (default)
    PRODUCT = "product"                # D = inter * intra


def uncertainty(params: ObjectiveParams, pair: TrajectoryPair) -> float:
    """0.5 minus the distance of the predicted preference from a coin flip."""
    p_hat = pref_probability(params, pair.first, pair.second)
    return 0.5 - abs(p_hat - 0.5)


def traj_distance(first: Trajectory, second: Trajectory) -> float:
    """Summed squared state and input gaps between two equal-horizon rollouts."""
    if first.horizon != second.horizon:
        raise ValueError("trajectories must share the horizon")
    dx = first.states - second.states
    du = first.inputs - second.inputs
    return float(np.sum(dx * dx) + np.sum(du * du))


def pair_distance(pair_a: TrajectoryPair, pair_b: TrajectoryPair) -> float:
    """Minimum over both matchings of summed trajectory distances."""
    straight = traj_distance(pair_a.first, pair_b.first) + \
        traj_distance(pair_a.second, pair_b.second)
    crossed = traj_distance(pair_a.first, pair_b.second) + \
        traj_distance(pair_a.second, pair_b.first)
    return min(straight, crossed)


def inter_diversity(pair: TrajectoryPair, labeled: PreferenceDataset) -> float:
    """Minimum pair distance from a candidate to any labeled comparison."""
    if len(labeled) == 0:
        raise ValueError("labeled dataset must be non-empty")
    return min(
        pair_distance(pair, TrajectoryPair(rec.first, rec.second)) for rec in labeled
    )


def acquisition(params: ObjectiveParams, pair: TrajectoryPair,
                labeled: PreferenceDataset, variant: DiversityVariant) -> float:
    """Uncertainty times the configured diversity factor."""
    unc = uncertainty(params, pair)
    if variant is DiversityVariant.UNCERTAINTY_ONLY:
        return unc
    intra = traj_distance(pair.first, pair.second)
    if variant is DiversityVariant.INTRA_ONLY:
        return unc * intra
    inter = inter_diversity(pair, labeled)
    if variant is DiversityVariant.INTER_ONLY:
        return unc * inter
    if variant is DiversityVariant.SUM:
        return unc * (inter + intra)
    return unc * (inter * intra)


class UnlabeledPool:
    """Candidate trajectory pairs with stable ids; removal-only after build."""

    def __init__(self, pairs, metas=None):
        pairs = list(pairs)
        metas = list(metas) if metas is not None else [{} for _ in pairs]
        if len(metas) != len(pairs):
            raise ValueError("metas length must match pairs")
        self._entries: dict[int, tuple[TrajectoryPair, dict]] = {
            i: (pair, meta) for i, (pair, meta) in enumerate(zip(pairs, metas))
        }

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def ids(self) -> list[int]:
        return sorted(self._entries)

    def get(self, pair_id: int) -> TrajectoryPair:
        return self._entries[pair_id][0]

    def meta(self, pair_id: int) -> dict:
        return self._entries[pair_id][1]

    def remove(self, pair_ids) -> None:
        for pid in pair_ids:
            del self._entries[pid]

    def items(self):
        return [(pid, self._entries[pid][0]) for pid in self.ids]

    def save_jsonl(self, path) -> None:
        path = Path(path)
        with path.open("w") as fh:
            for pid in self.ids:
                pair, meta = self._entries[pid]
                obj = {"id": pid, "meta": meta}
                obj.update(pair.to_json_obj())
                fh.write(json.dumps(obj, sort_keys=True))
                fh.write("\n")


@dataclass
class PoolController:
    """Control law plus provenance tag inside the controller pool."""

    law: MPCController
    tag: str


class ControllerPool:
    """Ordered control laws: the initial random batch plus learned additions."""

    def __init__(self, controllers=None):
        self.entries: list[PoolController] = list(controllers or [])
        self.initial_size = len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, law: MPCController, tag: str) -> None:
        self.entries.append(PoolController(law=law, tag=tag))

    def __getitem__(self, idx: int) -> PoolController:
        return self.entries[idx]


def greedy_next_init(history_states: np.ndarray, box: StateBox,
                     n_candidates: int = 1024, rng_seed=None) -> np.ndarray:
    """Among uniform candidate states, pick the one farthest (in min squared
    distance) from every initial state already queried."""
    rng = np.random.default_rng(rng_seed)
    candidates = rng.uniform(box.lower, box.upper, size=(n_candidates, box.dim))
    history = np.atleast_2d(np.asarray(history_states, dtype=float))
    if history.size == 0:
        return candidates[0]
    gaps = candidates[:, None, :] - history[None, :, :]
    min_sq = np.min(np.sum(gaps * gaps, axis=2), axis=1)
    return candidates[int(np.argmax(min_sq))]


@dataclass
class IterationRecord:
    """Metrics of one AL iteration over the fixed evaluation states."""

    iteration: int
    theta: ObjectiveParams
    n_labeled: int
    settle_min: float
    settle_avg: float
    settle_max: float
    umax_avg: float
    wall_time: float = 0.0


@dataclass
class ALState:
    """Mutable state threaded through the AL loop."""

    sys: LinearSystem
    horizon: int
    dataset: PreferenceDataset
    eval_states: np.ndarray
    oracle: PreferenceOracle
    train_cfg: TrainConfig
    settling: SettlingConfig
    box: StateBox
    train_rng: np.random.Generator
    strategy_rng: np.random.Generator
    pool: UnlabeledPool | None = None
    controllers: ControllerPool | None = None
    variant: DiversityVariant = DiversityVariant.SUM
    theta: ObjectiveParams | None = None
    solver_tol: float = 1e-8
    solver_max_iter: int = 20000
    greedy_candidates: int = 1024
    iteration: int = 0
    query_counter: int = 0
    last_eval: tuple | None = None  # (settles, umaxes) for the current theta

    def next_query_id(self) -> str:
        self.query_counter += 1
        return f"q{self.query_counter:04d}"

    def make_controller(self, params: ObjectiveParams, tag: str = "mpc") -> MPCController:
        return MPCController(self.sys, params, self.horizon,
                             tol=self.solver_tol, max_iter=self.solver_max_iter, tag=tag)

    def make_query(self, pair: TrajectoryPair) -> PreferenceQuery:
        display = build_query_display(pair, self.sys.C, self.settling.epsilon)
        return PreferenceQuery(id=self.next_query_id(), pair=pair, display=display)


def evaluate_theta(state: ALState, params: ObjectiveParams) -> tuple[np.ndarray, np.ndarray]:
    """Roll out the MPC for ``params`` from every evaluation state; returns
    per-state settling times and peak input magnitudes."""
    controller = state.make_controller(params)
    settles = np.empty(len(state.eval_states))
    umaxes = np.empty(len(state.eval_states))
    for i, x0 in enumerate(state.eval_states):
        traj = simulate_closed_loop(state.sys, controller, x0, state.horizon)
        settles[i] = settling_time(traj, state.sys.C, state.settling)
        umaxes[i] = max_input_norm(traj)
    return settles, umaxes


def retrain(state: ALState) -> None:
    """Double-restart refit: train from a fresh random initialization and from
    the previous weights, then keep whichever evaluates better (smallest
    maximum settling time over the evaluation states)."""
    rand_init = sample_log_uniform_params(state.train_rng, state.sys.nx, state.sys.nu)
    candidates = [
        train(state.dataset, rand_init, state.train_cfg),
        train(state.dataset, state.theta, state.train_cfg),
    ]
    cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def evaluator(params):
        result = evaluate_theta(state, params)
        cache[id(params)] = result
        return result[0]

    winner = select_model(candidates, evaluator)
    state.theta = winner
    state.last_eval = cache[id(winner)]


def initialize_model(state: ALState) -> None:
    """Train the starting weights from the initial dataset if not present,
    and make sure evaluation metrics for the current weights exist."""
    if state.theta is None:
        init = sample_log_uniform_params(state.train_rng, state.sys.nx, state.sys.nu)
        state.theta = train(state.dataset, init, state.train_cfg)
    if state.last_eval is None:
        state.last_eval = evaluate_theta(state, state.theta)


def _score_pool(state: ALState) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized acquisition scores for every pool pair (ids, scores).

    Must rank identically to scoring each pair with ``acquisition``;
    the loop invariants suite cross-checks this.
    """
    ids = np.array(state.pool.ids)
    pairs = [state.pool.get(int(pid)) for pid in ids]
    theta_vec = state.theta.as_vector()

    feat_first = np.array([features(p.first) for p in pairs])
    feat_second = np.array([features(p.second) for p in pairs])
    gaps = (feat_first - feat_second) @ theta_vec
    p_hat = expit(-gaps)
    unc = 0.5 - np.abs(p_hat - 0.5)

    variant = state.variant
    if variant is DiversityVariant.UNCERTAINTY_ONLY:
        return ids, unc

    cand_a = np.array([p.first.flat for p in pairs])
    cand_b = np.array([p.second.flat for p in pairs])
    intra = np.sum((cand_a - cand_b) ** 2, axis=1)
    if variant is DiversityVariant.INTRA_ONLY:
        return ids, unc * intra

    lab_a = np.array([rec.first.flat for rec in state.dataset])
    lab_b = np.array([rec.second.flat for rec in state.dataset])

    def cross_sq(u, v):
        # ||u_i - v_j||^2 via the inner-product expansion; clamp fp noise.
        d = (np.sum(u * u, axis=1)[:, None] + np.sum(v * v, axis=1)[None, :]
             - 2.0 * (u @ v.T))
        return np.maximum(d, 0.0)

    straight = cross_sq(cand_a, lab_a) + cross_sq(cand_b, lab_b)
    crossed = cross_sq(cand_a, lab_b) + cross_sq(cand_b, lab_a)
    inter = np.min(np.minimum(straight, crossed), axis=1)

    if variant is DiversityVariant.INTER_ONLY:
        diversity = inter
    elif variant is DiversityVariant.SUM:
        diversity = inter + intra
    else:
        diversity = inter * intra
    return ids, unc * diversity


def _label_and_append(state: ALState, pair: TrajectoryPair, meta: dict) -> None:
    label = state.oracle.ask(state.make_query(pair))
    state.dataset.append(PreferenceRecord(first=pair.first, second=pair.second,
                                          label=label, meta=meta))


def pool_step(state: ALState, n_k: int) -> ALState:
    """One pool-based iteration: pick the top-n_k pairs by acquisition score
    (ties to the lowest pool id), query, and refit."""
    if state.pool is None or len(state.pool) < n_k:
        raise PoolExhaustedError(
            f"pool holds {0 if state.pool is None else len(state.pool)} pairs, "
            f"need {n_k}"
        )
    ids, scores = _score_pool(state)
    order = np.lexsort((ids, -scores))
    chosen = [int(ids[i]) for i in order[:n_k]]
    for pid in chosen:
        meta = dict(state.pool.meta(pid))
        meta.update({"source": "pool", "pool_id": pid, "iteration": state.iteration + 1})
        _label_and_append(state, state.pool.get(pid), meta)
    state.pool.remove(chosen)
    retrain(state)
    state.iteration += 1
    return state


def choose_random_ids(ids, n_k: int, rng) -> list[int]:
    """Uniform draw of n_k distinct pool ids."""
    ids = np.asarray(list(ids))
    picked = np.random.default_rng(rng).choice(ids, size=n_k, replace=False)
    return [int(v) for v in picked]


def random_step(state: ALState, n_k: int, rng_seed=None) -> ALState:
    """Baseline iteration: uniform pool selection, identical refit protocol."""
    if state.pool is None or len(state.pool) < n_k:
        raise PoolExhaustedError(
            f"pool holds {0 if state.pool is None else len(state.pool)} pairs, "
            f"need {n_k}"
        )
    rng = state.strategy_rng if rng_seed is None else np.random.default_rng(rng_seed)
    chosen = choose_random_ids(state.pool.ids, n_k, rng)
    for pid in chosen:
        meta = dict(state.pool.meta(pid))
        meta.update({"source": "random", "pool_id": pid, "iteration": state.iteration + 1})
        _label_and_append(state, state.pool.get(pid), meta)
    state.pool.remove(chosen)
    retrain(state)
    state.iteration += 1
    return state


def synthesis_step(state: ALState) -> ALState:
    """One query-synthesis iteration: explore a new initial state, compare a
    random pooled controller against the current learned MPC, refit, and add
    the new learned law to the pool."""
    if state.controllers is None or len(state.controllers) == 0:
        raise ValueError("query synthesis requires a non-empty controller pool")
    if state.theta is None:
        raise ValueError("query synthesis requires trained weights")
    k = state.iteration + 1
    x0 = greedy_next_init(state.dataset.initial_states(), state.box,
                          n_candidates=state.greedy_candidates,
                          rng_seed=state.strategy_rng)
    pick = int(state.strategy_rng.integers(len(state.controllers)))
    sampled = state.controllers[pick]
    try:
        traj_sampled = simulate_closed_loop(state.sys, sampled.law, x0, state.horizon)
    except Exception as exc:
        raise IterationError(
            f"rollout of pooled controller failed at iteration {k}: {exc}",
            provenance={"controller": sampled.tag, "iteration": k},
        ) from exc
    learned_law = state.make_controller(state.theta, tag=f"learned-{k - 1}")
    try:
        traj_learned = simulate_closed_loop(state.sys, learned_law, x0, state.horizon)
    except Exception as exc:
        raise IterationError(
            f"rollout of learned MPC failed at iteration {k}: {exc}",
            provenance={"controller": learned_law.tag, "iteration": k},
        ) from exc
    pair = TrajectoryPair(first=traj_sampled, second=traj_learned)
    meta = {
        "source": "synthesis",
        "iteration": k,
        "generators": [sampled.tag, learned_law.tag],
    }
    _label_and_append(state, pair, meta)
    retrain(state)
    state.controllers.append(state.make_controller(state.theta, tag=f"learned-{k}"),
                             tag=f"learned-{k}")
    state.iteration += 1
    return state


STRATEGIES = ("pool", "synthesis", "random")


def run_loop(state: ALState, strategy: str, n_iterations: int, n_k: int = 1,
             progress=None) -> list[IterationRecord]:
    """Run the chosen strategy for a fixed number of iterations, recording
    evaluation metrics after every refit.

    On an unrecoverable error the partial history is preserved on the raised
    ``LoopAbortedError``.
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if strategy == "synthesis" and n_k != 1:
        raise ValueError("query synthesis adds exactly one pair per iteration")
    initialize_model(state)
    history: list[IterationRecord] = []
    for _ in range(n_iterations):
        started = time.perf_counter()
        try:
            if strategy == "pool":
                pool_step(state, n_k)
            elif strategy == "random":
                random_step(state, n_k)
            else:
                synthesis_step(state)
        except Exception as exc:
            raise LoopAbortedError(
                f"AL loop aborted at iteration {state.iteration + 1}: {exc}",
                history=history,
            ) from exc
        settles, umaxes = state.last_eval
        record = IterationRecord(
            iteration=state.iteration,
            theta=state.theta,
            n_labeled=len(state.dataset),
            settle_min=float(settles.min()),
            settle_avg=float(settles.mean()),
            settle_max=float(settles.max()),
            umax_avg=float(umaxes.mean()),
            wall_time=time.perf_counter() - started,
        )
        history.append(record)
        if progress is not None:
            progress(record)
    return history
