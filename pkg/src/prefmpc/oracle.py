"""Preference providers: the synthetic settling-time criterion and the
blocking human-labeling interface backed by a thread-safe query session."""

from __future__ import annotations

import logging
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SHARED_STATE_ATOL, Trajectory, TrajectoryPair
from .errors import (
    DuplicateQueryError,
    InvalidQueryError,
    LabelConflictError,
    QueryTimeoutError,
    UnknownQueryError,
)

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.05
DEFAULT_HUMAN_TIMEOUT = 3600.0


@dataclass(frozen=True)
class SettlingConfig:
    """Output-norm threshold and horizon for the settling-time criterion."""

    epsilon: float = DEFAULT_EPSILON
    horizon: int = 30

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def output_norms(traj: Trajectory, output_map: np.ndarray) -> np.ndarray:
    """Euclidean norm of the output at every step."""
    return np.linalg.norm(traj.states @ np.asarray(output_map, dtype=float).T, axis=1)


def settling_time(traj: Trajectory, output_map: np.ndarray, cfg: SettlingConfig) -> int:
    """Smallest step index after which the output norm stays within epsilon.

    Returns the trajectory horizon when the output never settles.
    """
    norms = output_norms(traj, output_map)
    above = np.nonzero(norms > cfg.epsilon)[0]
    if above.size == 0:
        return 0
    return min(int(above[-1]) + 1, traj.horizon)


def max_input_norm(traj: Trajectory) -> float:
    """Largest absolute input entry over the whole rollout."""
    return float(np.max(np.abs(traj.inputs))) if traj.inputs.size else 0.0


def synthetic_preference(first: Trajectory, second: Trajectory,
                         output_map: np.ndarray, cfg: SettlingConfig) -> int:
    """1 if ``first`` settles strictly faster; 0 if strictly slower; on equal
    settling times, 1 iff its peak input is no larger."""
    gap = np.max(np.abs(first.initial_state - second.initial_state))
    if gap > SHARED_STATE_ATOL:
        raise InvalidQueryError(
            f"preference query requires a shared initial state (gap {gap:.3e})"
        )
    tau_first = settling_time(first, output_map, cfg)
    tau_second = settling_time(second, output_map, cfg)
    if tau_first < tau_second:
        return 1
    if tau_first > tau_second:
        return 0
    return int(max_input_norm(first) <= max_input_norm(second))


@dataclass(frozen=True, eq=False)
class QueryDisplay:
    """Precomputed plotting payload so the labeling UI needs no linear algebra."""

    outputs_first: np.ndarray   # (N+1, ny)
    outputs_second: np.ndarray
    norms_first: np.ndarray     # (N+1,)
    norms_second: np.ndarray
    epsilon: float

    def to_json_obj(self) -> dict:
        return {
            "y_first": self.outputs_first.tolist(),
            "y_second": self.outputs_second.tolist(),
            "y_norm_first": self.norms_first.tolist(),
            "y_norm_second": self.norms_second.tolist(),
            "epsilon": self.epsilon,
        }


def build_query_display(pair: TrajectoryPair, output_map: np.ndarray,
                        epsilon: float) -> QueryDisplay:
    c = np.asarray(output_map, dtype=float)
    y1 = pair.first.states @ c.T
    y2 = pair.second.states @ c.T
    return QueryDisplay(
        outputs_first=y1,
        outputs_second=y2,
        norms_first=np.linalg.norm(y1, axis=1),
        norms_second=np.linalg.norm(y2, axis=1),
        epsilon=epsilon,
    )


@dataclass(frozen=True, eq=False)
class PreferenceQuery:
    """One pending comparison presented to an oracle."""

    id: str
    pair: TrajectoryPair
    issued_at: float = field(default_factory=time.time)
    display: QueryDisplay | None = None

    def to_json_obj(self) -> dict:
        obj = {
            "id": self.id,
            "horizon": self.pair.first.horizon,
            "initial_state": self.pair.initial_state.tolist(),
            "first": {"u": self.pair.first.inputs.tolist()},
            "second": {"u": self.pair.second.inputs.tolist()},
        }
        if self.display is not None:
            d = self.display.to_json_obj()
            obj["first"]["y"] = d["y_first"]
            obj["first"]["y_norm"] = d["y_norm_first"]
            obj["second"]["y"] = d["y_second"]
            obj["second"]["y_norm"] = d["y_norm_second"]
            obj["epsilon"] = d["epsilon"]
        return obj


class PreferenceOracle:
    """Answers preference queries; subclasses may block."""

    def ask(self, query: PreferenceQuery) -> int:
        raise NotImplementedError


class SyntheticOracle(PreferenceOracle):
    """Immediate labels from the settling-time / peak-input criterion."""

    def __init__(self, output_map: np.ndarray, cfg: SettlingConfig):
        self.output_map = np.asarray(output_map, dtype=float)
        self.cfg = cfg

    def ask(self, query: PreferenceQuery) -> int:
        return synthetic_preference(query.pair.first, query.pair.second,
                                    self.output_map, self.cfg)


class ReplayOracle(PreferenceOracle):
    """Replays a recorded label sequence; used to reproduce human runs."""

    def __init__(self, labels):
        labels = [int(v) for v in labels]
        if any(v not in (0, 1) for v in labels):
            raise ValueError("replay labels must be 0 or 1")
        self._labels = labels
        self._next = 0

    def ask(self, query: PreferenceQuery) -> int:
        if self._next >= len(self._labels):
            raise ValueError(
                f"replay labels exhausted after {len(self._labels)} queries"
            )
        label = self._labels[self._next]
        self._next += 1
        return label


class LabelSession:
    """Thread-safe bridge between a blocking oracle and the HTTP service.

    Queries are served FIFO and each id resolves exactly once; duplicate
    answers are rejected and logged.
    """

    def __init__(self, session_id: str = "default"):
        self.session_id = session_id
        self._cond = threading.Condition()
        self._pending: "OrderedDict[str, PreferenceQuery]" = OrderedDict()
        self._answers: dict[str, int] = {}
        self.iteration = 0

    def enqueue(self, query: PreferenceQuery) -> None:
        with self._cond:
            if query.id in self._pending or query.id in self._answers:
                raise DuplicateQueryError(f"query id {query.id!r} already seen")
            self._pending[query.id] = query
            self._cond.notify_all()

    def next_pending(self) -> PreferenceQuery | None:
        with self._cond:
            for query in self._pending.values():
                return query
            return None

    def post_label(self, query_id: str, label: int) -> None:
        if label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label}")
        with self._cond:
            if query_id in self._answers:
                logger.warning("duplicate answer for query %s ignored", query_id)
                raise LabelConflictError(f"query {query_id!r} already answered")
            if query_id not in self._pending:
                raise UnknownQueryError(f"query {query_id!r} is not pending")
            del self._pending[query_id]
            self._answers[query_id] = int(label)
            self._cond.notify_all()

    def wait_for_label(self, query_id: str, timeout: float) -> int:
        with self._cond:
            ok = self._cond.wait_for(lambda: query_id in self._answers, timeout=timeout)
            if not ok:
                self._pending.pop(query_id, None)
                raise QueryTimeoutError(
                    f"no label for query {query_id!r} within {timeout:.0f}s"
                )
            return self._answers[query_id]

    def counts(self) -> dict:
        with self._cond:
            return {"pending": len(self._pending), "answered": len(self._answers)}

    def set_iteration(self, k: int) -> None:
        with self._cond:
            self.iteration = k


class HumanOracle(PreferenceOracle):
    """Blocks on the label session until a human answers or the timeout hits."""

    def __init__(self, session: LabelSession, timeout: float = DEFAULT_HUMAN_TIMEOUT):
        self.session = session
        self.timeout = timeout

    def ask(self, query: PreferenceQuery) -> int:
        self.session.enqueue(query)
        return self.session.wait_for_label(query.id, self.timeout)
