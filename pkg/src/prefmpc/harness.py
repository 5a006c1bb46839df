"""Experiment orchestration: configuration, initial asset generation,
strategy runs, evaluation reports, and on-disk artifacts."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .active import (
    ALState,
    ControllerPool,
    DiversityVariant,
    IterationRecord,
    PoolController,
    UnlabeledPool,
    evaluate_theta,
    initialize_model,
    run_loop,
)
from .dynamics import (
    LinearSystem,
    OscillatingMassesConfig,
    StateBox,
    TrajectoryPair,
    default_state_box,
    make_oscillating_masses,
    sample_initial_states,
    simulate_closed_loop,
)
from .errors import GenerationError, LoopAbortedError, PrefMpcError
from .mpc import MPCController, ObjectiveParams, make_random_quadratic_controller
from .oracle import (
    PreferenceOracle,
    PreferenceQuery,
    ReplayOracle,
    SettlingConfig,
    SyntheticOracle,
    max_input_norm,
    settling_time,
    synthetic_preference,
)
from .surrogate import PreferenceDataset, PreferenceRecord, TrainConfig, train
from .mpc import sample_log_uniform_params

METRICS_COLUMNS = ("iteration", "n_labeled", "settle_min", "settle_avg",
                   "settle_max", "umax_avg")


@dataclass(frozen=True)
class SeedConfig:
    """Named seed streams; runs sharing these share all generated assets."""

    system: int = 0
    pool: int = 1
    training: int = 2
    evaluation: int = 3
    strategy: int = 4

    def shifted(self, offset: int) -> "SeedConfig":
        base = 1000 * offset
        return SeedConfig(
            system=self.system + base,
            pool=self.pool + base,
            training=self.training + base,
            evaluation=self.evaluation + base,
            strategy=self.strategy + base,
        )

    def to_json_obj(self) -> dict:
        return {
            "system": self.system,
            "pool": self.pool,
            "training": self.training,
            "evaluation": self.evaluation,
            "strategy": self.strategy,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "SeedConfig":
        return cls(**{k: int(v) for k, v in obj.items()})


@dataclass
class ExperimentConfig:
    """Full description of one experiment; defaults match the benchmark
    protocol (horizon 30, 10 controllers, 20 initial pairs, 280-pair pool,
    batch 1, 20 iterations, 10 evaluation states)."""

    system: OscillatingMassesConfig = field(default_factory=OscillatingMassesConfig)
    position_bound: float = 0.2
    velocity_bound: float = 0.05
    horizon: int = 30
    n_controllers: int = 10
    n_initial_pairs: int = 20
    pool_size: int = 280
    batch_size: int = 1
    iterations: int = 20
    n_eval_states: int = 10
    epsilon: float = 0.05
    strategy: str = "pool"
    variant: DiversityVariant = DiversityVariant.SUM
    oracle: str = "synthetic"
    replay_labels: list | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    solver_tol: float = 1e-8
    solver_max_iter: int = 20000
    greedy_candidates: int = 1024
    full_pool_reference: bool = False
    human_timeout: float = 3600.0
    port: int = 8700

    def __post_init__(self):
        for name in ("horizon", "n_controllers", "n_initial_pairs", "pool_size",
                     "batch_size", "iterations", "n_eval_states", "greedy_candidates"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if isinstance(self.variant, str):
            self.variant = DiversityVariant(self.variant)
        if self.strategy not in ("pool", "synthesis", "random"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.oracle not in ("synthetic", "human", "replay"):
            raise ValueError(f"unknown oracle {self.oracle!r}")

    def state_box(self) -> StateBox:
        return default_state_box(self.position_bound, self.velocity_bound)

    def settling(self) -> SettlingConfig:
        return SettlingConfig(epsilon=self.epsilon, horizon=self.horizon)

    def to_json_obj(self) -> dict:
        return {
            "system": self.system.to_json_obj(),
            "position_bound": self.position_bound,
            "velocity_bound": self.velocity_bound,
            "horizon": self.horizon,
            "n_controllers": self.n_controllers,
            "n_initial_pairs": self.n_initial_pairs,
            "pool_size": self.pool_size,
            "batch_size": self.batch_size,
            "iterations": self.iterations,
            "n_eval_states": self.n_eval_states,
            "epsilon": self.epsilon,
            "strategy": self.strategy,
            "variant": self.variant.value,
            "oracle": self.oracle,
            "replay_labels": self.replay_labels,
            "train": self.train.to_json_obj(),
            "seeds": self.seeds.to_json_obj(),
            "solver_tol": self.solver_tol,
            "solver_max_iter": self.solver_max_iter,
            "greedy_candidates": self.greedy_candidates,
            "full_pool_reference": self.full_pool_reference,
            "human_timeout": self.human_timeout,
            "port": self.port,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ExperimentConfig":
        kwargs = dict(obj)
        if "system" in kwargs:
            kwargs["system"] = OscillatingMassesConfig.from_json_obj(kwargs["system"])
        if "train" in kwargs:
            kwargs["train"] = TrainConfig.from_json_obj(kwargs["train"])
        if "seeds" in kwargs:
            kwargs["seeds"] = SeedConfig.from_json_obj(kwargs["seeds"])
        if "variant" in kwargs:
            kwargs["variant"] = DiversityVariant(kwargs["variant"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with Path(path).open() as fh:
            return cls.from_json_obj(json.load(fh))


@dataclass
class Assets:
    """Everything generated before the AL loop starts."""

    sys: LinearSystem
    controllers: ControllerPool
    dataset: PreferenceDataset
    pool: UnlabeledPool
    eval_states: np.ndarray
    # Pristine copy of the pool pairs for the full-pool reference model.
    pool_pairs: list = field(default_factory=list)


def _rollout_pair(sys, controllers, idx_a, idx_b, x0, horizon) -> TrajectoryPair:
    try:
        first = simulate_closed_loop(sys, controllers[idx_a].law, x0, horizon)
        second = simulate_closed_loop(sys, controllers[idx_b].law, x0, horizon)
    except PrefMpcError as exc:
        raise GenerationError(
            f"rollout failed for controllers ({controllers[idx_a].tag}, "
            f"{controllers[idx_b].tag}): {exc}"
        ) from exc
    return TrajectoryPair(first=first, second=second)


def generate_initial_assets(cfg: ExperimentConfig,
                            labeler: PreferenceOracle | None = None):
    """Build the initial controller pool, the labeled starting dataset, and
    the unlabeled candidate pool; deterministic per the configured seeds.

    Returns (ControllerPool, PreferenceDataset, UnlabeledPool).
    """
    sys = make_oscillating_masses(cfg.system)
    box = cfg.state_box()
    labeler = labeler or SyntheticOracle(sys.C, cfg.settling())

    ctrl_rng = np.random.default_rng(cfg.seeds.system)
    controllers = ControllerPool()
    for i in range(cfg.n_controllers):
        seed = int(ctrl_rng.integers(2 ** 63))
        law = make_random_quadratic_controller(
            seed, sys, cfg.horizon, tol=cfg.solver_tol,
            max_iter=cfg.solver_max_iter, tag=f"initial-{i}")
        controllers.append(law, tag=f"initial-{i}")
    controllers.initial_size = len(controllers)

    pool_rng = np.random.default_rng(cfg.seeds.pool)
    dataset = PreferenceDataset()
    init_states = sample_initial_states(box, cfg.n_initial_pairs, pool_rng)
    for idx, x0 in enumerate(init_states):
        a, b = (int(v) for v in pool_rng.choice(cfg.n_controllers, 2, replace=False))
        pair = _rollout_pair(sys, controllers, a, b, x0, cfg.horizon)
        label = labeler.ask(PreferenceQuery(id=f"init{idx:04d}", pair=pair))
        dataset.append(PreferenceRecord(
            first=pair.first, second=pair.second, label=label,
            meta={"source": "initial", "state_index": idx,
                  "generators": [controllers[a].tag, controllers[b].tag]},
        ))

    pool_states = sample_initial_states(box, cfg.pool_size, pool_rng)
    pairs, metas = [], []
    for idx, x0 in enumerate(pool_states):
        a, b = (int(v) for v in pool_rng.choice(cfg.n_controllers, 2, replace=False))
        pairs.append(_rollout_pair(sys, controllers, a, b, x0, cfg.horizon))
        metas.append({"state_index": idx,
                      "generators": [controllers[a].tag, controllers[b].tag]})
    return controllers, dataset, UnlabeledPool(pairs, metas)


def build_assets(cfg: ExperimentConfig) -> Assets:
    controllers, dataset, pool = generate_initial_assets(cfg)
    sys = make_oscillating_masses(cfg.system)
    eval_states = sample_initial_states(cfg.state_box(), cfg.n_eval_states,
                                        cfg.seeds.evaluation)
    pool_pairs = [pool.get(pid) for pid in pool.ids]
    return Assets(sys=sys, controllers=controllers, dataset=dataset, pool=pool,
                  eval_states=eval_states, pool_pairs=pool_pairs)


def clone_for_run(assets: Assets) -> Assets:
    """Fresh dataset/pool/controller-pool views over the shared trajectories,
    so several strategies can run from identical starting assets."""
    pool = UnlabeledPool(
        [assets.pool.get(pid) for pid in assets.pool.ids],
        [dict(assets.pool.meta(pid)) for pid in assets.pool.ids],
    )
    controllers = ControllerPool(list(assets.controllers.entries))
    controllers.initial_size = assets.controllers.initial_size
    return Assets(sys=assets.sys, controllers=controllers,
                  dataset=assets.dataset.copy(), pool=pool,
                  eval_states=assets.eval_states, pool_pairs=assets.pool_pairs)


def build_al_state(cfg: ExperimentConfig, assets: Assets,
                   oracle: PreferenceOracle) -> ALState:
    return ALState(
        sys=assets.sys,
        horizon=cfg.horizon,
        dataset=assets.dataset,
        eval_states=assets.eval_states,
        oracle=oracle,
        train_cfg=cfg.train,
        settling=cfg.settling(),
        box=cfg.state_box(),
        train_rng=np.random.default_rng(cfg.seeds.training),
        strategy_rng=np.random.default_rng(cfg.seeds.strategy),
        pool=assets.pool,
        controllers=assets.controllers,
        variant=cfg.variant,
        solver_tol=cfg.solver_tol,
        solver_max_iter=cfg.solver_max_iter,
        greedy_candidates=cfg.greedy_candidates,
    )


def make_oracle(cfg: ExperimentConfig, sys: LinearSystem,
                session=None) -> PreferenceOracle:
    if cfg.oracle == "synthetic":
        return SyntheticOracle(sys.C, cfg.settling())
    if cfg.oracle == "replay":
        if not cfg.replay_labels:
            raise ValueError("replay oracle requires replay_labels")
        return ReplayOracle(cfg.replay_labels)
    from .oracle import HumanOracle
    if session is None:
        raise ValueError("human oracle requires a label session")
    return HumanOracle(session, timeout=cfg.human_timeout)


@dataclass
class EvalRow:
    """Per-initial-state outcome of one controller evaluation."""

    state_index: int
    settling_time: int | None
    max_input: float | None
    failed: bool = False
    error: str = ""


@dataclass
class EvaluationReport:
    """Closed-loop quality of a controller over fixed evaluation states."""

    rows: list
    settle_avg: float
    settle_max: float
    settle_min: float
    umax_avg: float
    preferred_vs_reference: int | None = None
    not_preferred_vs_reference: int | None = None
    same_settling_count: int | None = None
    normalized_umax: dict | None = None

    def to_json_obj(self) -> dict:
        return {
            "rows": [{"state_index": r.state_index, "settling_time": r.settling_time,
                      "max_input": r.max_input, "failed": r.failed, "error": r.error}
                     for r in self.rows],
            "settle_avg": self.settle_avg,
            "settle_max": self.settle_max,
            "settle_min": self.settle_min,
            "umax_avg": self.umax_avg,
            "preferred_vs_reference": self.preferred_vs_reference,
            "not_preferred_vs_reference": self.not_preferred_vs_reference,
            "same_settling_count": self.same_settling_count,
            "normalized_umax": self.normalized_umax,
        }


def evaluate_controller(controller, eval_states, sys: LinearSystem,
                        cfg: SettlingConfig, reference=None,
                        horizon: int | None = None) -> EvaluationReport:
    """Roll the controller out from every evaluation state and aggregate
    settling times and peak inputs.

    With a ``reference`` controller, also counts head-to-head preferences and
    reports peak-input statistics over the states where both settle equally
    fast, normalized by the reference's mean peak input over all states.
    """
    if len(eval_states) == 0:
        raise ValueError("eval_states must be non-empty")
    horizon = horizon or cfg.horizon
    rows = []
    trajs = {}
    for i, x0 in enumerate(eval_states):
        try:
            traj = simulate_closed_loop(sys, controller, x0, horizon)
        except PrefMpcError as exc:
            rows.append(EvalRow(state_index=i, settling_time=None, max_input=None,
                                failed=True, error=str(exc)))
            continue
        trajs[i] = traj
        rows.append(EvalRow(state_index=i,
                            settling_time=settling_time(traj, sys.C, cfg),
                            max_input=max_input_norm(traj)))
    ok = [r for r in rows if not r.failed]
    if not ok:
        raise PrefMpcError("controller failed on every evaluation state")
    settles = np.array([r.settling_time for r in ok], dtype=float)
    umaxes = np.array([r.max_input for r in ok], dtype=float)
    report = EvaluationReport(
        rows=rows,
        settle_avg=float(settles.mean()),
        settle_max=float(settles.max()),
        settle_min=float(settles.min()),
        umax_avg=float(umaxes.mean()),
    )
    if reference is not None:
        preferred = 0
        ties = []
        ref_umaxes = []
        for i, x0 in enumerate(eval_states):
            if i not in trajs:
                continue
            ref_traj = simulate_closed_loop(sys, reference, x0, horizon)
            ref_umaxes.append(max_input_norm(ref_traj))
            label = synthetic_preference(trajs[i], ref_traj, sys.C, cfg)
            preferred += label
            if settling_time(trajs[i], sys.C, cfg) == settling_time(ref_traj, sys.C, cfg):
                ties.append((max_input_norm(trajs[i]), ref_umaxes[-1]))
        report.preferred_vs_reference = preferred
        report.not_preferred_vs_reference = len(trajs) - preferred
        report.same_settling_count = len(ties)
        if ties:
            scale = float(np.mean(ref_umaxes))
            own = np.array([t[0] for t in ties]) / scale
            ref = np.array([t[1] for t in ties]) / scale
            report.normalized_umax = {
                "scale": scale,
                "avg": float(own.mean()), "max": float(own.max()),
                "min": float(own.min()),
                "reference_avg": float(ref.mean()), "reference_max": float(ref.max()),
                "reference_min": float(ref.min()),
            }
    return report


def _dump_json(obj, path) -> None:
    with Path(path).open("w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _metrics_row(record: IterationRecord) -> str:
    return ",".join([
        str(record.iteration),
        str(record.n_labeled),
        repr(record.settle_min),
        repr(record.settle_avg),
        repr(record.settle_max),
        repr(record.umax_avg),
    ])


def write_metrics_csv(path, records) -> None:
    with Path(path).open("w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for rec in records:
            fh.write(_metrics_row(rec) + "\n")


def train_full_pool_model(cfg: ExperimentConfig, assets: Assets) -> ObjectiveParams:
    """Reference model trained on the initial dataset plus every pool pair,
    all labeled synthetically."""
    sys = assets.sys
    labeler = SyntheticOracle(sys.C, cfg.settling())
    full = assets.dataset.copy()
    # Only the pristine pool contents count; AL-acquired copies would repeat.
    full.records = [rec for rec in full.records if rec.meta.get("source") == "initial"]
    for idx, pair in enumerate(assets.pool_pairs):
        label = labeler.ask(PreferenceQuery(id=f"full{idx:04d}", pair=pair))
        full.append(PreferenceRecord(first=pair.first, second=pair.second, label=label,
                                     meta={"source": "full-pool", "pool_index": idx}))
    rng = np.random.default_rng([cfg.seeds.training, 0xF0])
    init = sample_log_uniform_params(rng, sys.nx, sys.nu)
    return train(full, init, cfg.train)


@dataclass
class ExperimentResult:
    out_dir: Path
    theta: ObjectiveParams
    history: list
    initial_record: IterationRecord
    theta_full_pool: ObjectiveParams | None = None


def run_experiment(cfg: ExperimentConfig, out_dir,
                   oracle: PreferenceOracle | None = None,
                   assets: Assets | None = None,
                   progress=None) -> ExperimentResult:
    """Execute one experiment and write all artifacts under ``out_dir``.

    Artifacts: config.json, dataset.jsonl, pool.jsonl, metrics.csv,
    theta_final.json, eval_report.json, manifest.json.  With synthetic or
    replay oracles the run is byte-reproducible from config.json alone;
    wall-clock timings live only in manifest.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(cfg.to_json_obj(), out / "config.json")
    manifest = {"complete": False, "strategy": cfg.strategy, "error": None}
    started = time.perf_counter()
    try:
        if assets is None:
            assets = build_assets(cfg)
        else:
            assets = clone_for_run(assets)
        oracle = oracle or make_oracle(cfg, assets.sys)
        state = build_al_state(cfg, assets, oracle)
        initialize_model(state)
        settles, umaxes = state.last_eval
        initial_record = IterationRecord(
            iteration=0, theta=state.theta, n_labeled=len(state.dataset),
            settle_min=float(settles.min()), settle_avg=float(settles.mean()),
            settle_max=float(settles.max()), umax_avg=float(umaxes.mean()),
        )
        history = run_loop(state, cfg.strategy, cfg.iterations,
                           n_k=cfg.batch_size, progress=progress)
    except LoopAbortedError as exc:
        manifest["error"] = str(exc)
        write_metrics_csv(out / "metrics.csv", exc.history)
        _dump_json(manifest, out / "manifest.json")
        raise
    except Exception as exc:
        manifest["error"] = str(exc)
        _dump_json(manifest, out / "manifest.json")
        raise

    write_metrics_csv(out / "metrics.csv", [initial_record] + history)
    state.dataset.save_jsonl(out / "dataset.jsonl")
    if state.pool is not None:
        state.pool.save_jsonl(out / "pool.jsonl")
    _dump_json(state.theta.to_json_obj(), out / "theta_final.json")

    final_controller = state.make_controller(state.theta, tag="final")
    theta_full = None
    if cfg.full_pool_reference:
        theta_full = train_full_pool_model(cfg, assets)
        _dump_json(theta_full.to_json_obj(), out / "theta_full_pool.json")
        reference = state.make_controller(theta_full, tag="full-pool")
        report = evaluate_controller(final_controller, assets.eval_states,
                                     assets.sys, cfg.settling(), reference=reference,
                                     horizon=cfg.horizon)
    else:
        report = evaluate_controller(final_controller, assets.eval_states,
                                     assets.sys, cfg.settling(), horizon=cfg.horizon)
    _dump_json(report.to_json_obj(), out / "eval_report.json")

    manifest.update({
        "complete": True,
        "n_labeled": len(state.dataset),
        "iterations": cfg.iterations,
        "timings": {
            "total_s": time.perf_counter() - started,
            "per_iteration_s": [rec.wall_time for rec in history],
        },
    })
    _dump_json(manifest, out / "manifest.json")
    return ExperimentResult(out_dir=out, theta=state.theta, history=history,
                            initial_record=initial_record, theta_full_pool=theta_full)


def compare_variants(cfg: ExperimentConfig, variants, seeds, out_dir) -> dict:
    """Pool-strategy ablation over diversity variants x seed offsets.

    Writes ``ablation.csv`` with one row per (variant, seed, iteration),
    iteration 0 included, plus ``ablation_summary.json`` with per-variant
    means of the final maximum settling time and a divergence flag when the
    combined-diversity variant is not at least as good as uncertainty-only.
    """
    variants = [DiversityVariant(v) for v in variants]
    if len(variants) < 2:
        raise ValueError("need at least two variants to compare")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = []
    finals: dict[str, list[float]] = {v.value: [] for v in variants}
    for seed in seeds:
        seed_cfg = replace(cfg, seeds=cfg.seeds.shifted(seed), strategy="pool")
        assets = build_assets(seed_cfg)
        for variant in variants:
            run_assets = clone_for_run(assets)
            run_cfg = replace(seed_cfg, variant=variant)
            oracle = make_oracle(run_cfg, run_assets.sys)
            state = build_al_state(run_cfg, run_assets, oracle)
            try:
                initialize_model(state)
                settles, umaxes = state.last_eval
                rows.append((variant.value, seed, 0, len(state.dataset),
                             float(settles.mean()), float(settles.max())))
                history = run_loop(state, "pool", run_cfg.iterations,
                                   n_k=run_cfg.batch_size)
            except PrefMpcError as exc:
                failures.append({"variant": variant.value, "seed": seed,
                                 "error": str(exc)})
                continue
            for rec in history:
                rows.append((variant.value, seed, rec.iteration, rec.n_labeled,
                             rec.settle_avg, rec.settle_max))
            finals[variant.value].append(history[-1].settle_max)

    csv_path = out / "ablation.csv"
    with csv_path.open("w") as fh:
        fh.write("variant,seed,iteration,n_labeled,settle_avg,settle_max\n")
        for row in rows:
            fh.write(",".join([row[0], str(row[1]), str(row[2]), str(row[3]),
                               repr(row[4]), repr(row[5])]) + "\n")

    summary = {
        "variants": [v.value for v in variants],
        "seeds": list(seeds),
        "mean_final_settle_max": {
            name: (float(np.mean(vals)) if vals else None)
            for name, vals in finals.items()
        },
        "failures": failures,
    }
    sum_mean = summary["mean_final_settle_max"].get(DiversityVariant.SUM.value)
    unc_mean = summary["mean_final_settle_max"].get(
        DiversityVariant.UNCERTAINTY_ONLY.value)
    if sum_mean is not None and unc_mean is not None:
        summary["sum_not_best_divergence"] = bool(sum_mean > unc_mean)
    _dump_json(summary, out / "ablation_summary.json")
    return summary


def head_to_head(theta_a: ObjectiveParams, theta_b: ObjectiveParams,
                 cfg: ExperimentConfig, n_states: int, seed: int) -> dict:
    """Table-shaped comparison of two weight vectors over fresh initial states;
    the second argument acts as the reference for normalization."""
    sys = make_oscillating_masses(cfg.system)
    states = sample_initial_states(cfg.state_box(), n_states, seed)
    ctrl_a = MPCController(sys, theta_a, cfg.horizon, tol=cfg.solver_tol,
                           max_iter=cfg.solver_max_iter, tag="candidate")
    ctrl_b = MPCController(sys, theta_b, cfg.horizon, tol=cfg.solver_tol,
                           max_iter=cfg.solver_max_iter, tag="reference")
    report_a = evaluate_controller(ctrl_a, states, sys, cfg.settling(),
                                   reference=ctrl_b, horizon=cfg.horizon)
    report_b = evaluate_controller(ctrl_b, states, sys, cfg.settling(),
                                   horizon=cfg.horizon)
    return {
        "n_states": n_states,
        "seed": seed,
        "candidate": {
            "settle_avg": report_a.settle_avg,
            "settle_max": report_a.settle_max,
            "umax_avg": report_a.umax_avg,
        },
        "reference": {
            "settle_avg": report_b.settle_avg,
            "settle_max": report_b.settle_max,
            "umax_avg": report_b.umax_avg,
        },
        "preferred": report_a.preferred_vs_reference,
        "not_preferred": report_a.not_preferred_vs_reference,
        "same_settling_count": report_a.same_settling_count,
        "normalized_umax": report_a.normalized_umax,
    }
