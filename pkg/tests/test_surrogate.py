import numpy as np
import pytest

from prefmpc.dynamics import Trajectory
from prefmpc.errors import ModelSelectionError, PrefMpcError, TrainingError
from prefmpc.mpc import ObjectiveParams, sample_log_uniform_params
from prefmpc.surrogate import (
    PreferenceDataset,
    PreferenceRecord,
    TrainConfig,
    classify,
    features,
    pref_probability,
    select_model,
    train,
    trajectory_cost,
    training_objective,
)

from conftest import random_pair, random_trajectory


def direct_quadratic_cost(params, traj):
    """Direct evaluation with explicit diagonal weight matrices."""
    Q = np.diag(params.q_diag)
    R = np.diag(params.r_diag)
    P = np.diag(params.p_diag)
    total = traj.states[-1] @ P @ traj.states[-1]
    for i in range(traj.horizon):
        total += traj.states[i] @ Q @ traj.states[i]
        total += traj.inputs[i] @ R @ traj.inputs[i]
    return total


def make_dataset(sys, box, rng, n_records, labeler, n_steps=12):
    ds = PreferenceDataset()
    for _ in range(n_records):
        first, second = random_pair(sys, box, n_steps, rng)
        ds.append(PreferenceRecord(first=first, second=second,
                                   label=labeler(first, second)))
    return ds


def traj_with_cost(cost_value):
    """Scalar trajectory whose cost is exactly cost_value under unit weights."""
    return Trajectory(states=[[np.sqrt(cost_value)], [0.0]], inputs=[[0.0]])


UNIT = ObjectiveParams(q_diag=[1.0], r_diag=[1.0], p_diag=[1.0])


class TestFeatures:
    def test_zero_trajectory(self):
        traj = Trajectory(states=np.zeros((5, 2)), inputs=np.zeros((4, 1)))
        assert np.array_equal(features(traj), np.zeros(5))

    def test_hand_evaluated_single_step(self):
        traj = Trajectory(states=[[2.0], [3.0]], inputs=[[1.0]])
        assert np.array_equal(features(traj), [4.0, 1.0, 9.0])

    def test_matches_direct_quadratic_form(self, osc_sys, state_box):
        rng = np.random.default_rng(0)
        for seed in range(10):
            params = sample_log_uniform_params(seed, 6, 2)
            traj = random_trajectory(osc_sys, rng.uniform(-0.2, 0.2, 6), 15, rng)
            direct = direct_quadratic_cost(params, traj)
            assert abs(trajectory_cost(params, traj) - direct) <= 1e-12 * max(1.0, direct)

    def test_linearity_in_weights(self, osc_sys):
        rng = np.random.default_rng(1)
        traj = random_trajectory(osc_sys, 0.1 * np.ones(6), 10, rng)
        t1 = sample_log_uniform_params(1, 6, 2)
        t2 = sample_log_uniform_params(2, 6, 2)
        a, b = 0.3, 1.7
        combo = ObjectiveParams.from_vector(a * t1.as_vector() + b * t2.as_vector(), 6, 2)
        lhs = trajectory_cost(combo, traj)
        rhs = a * trajectory_cost(t1, traj) + b * trajectory_cost(t2, traj)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


class TestPrefProbability:
    def test_equal_costs_give_half(self):
        t = traj_with_cost(3.0)
        assert pref_probability(UNIT, t, t) == 0.5

    def test_log3_gap_gives_quarter(self):
        first = traj_with_cost(np.log(3.0))
        second = traj_with_cost(0.0)
        assert abs(pref_probability(UNIT, first, second) - 0.25) <= 1e-12

    def test_large_negative_gap_saturates_without_overflow(self):
        first = traj_with_cost(0.0)
        second = traj_with_cost(50.0)
        with np.errstate(over="raise"):
            p = pref_probability(UNIT, first, second)
        assert p >= 1.0 - 1e-20
        assert pref_probability(UNIT, second, first) <= 1e-20


class TestClassify:
    def test_tie_prefers_first(self):
        t = traj_with_cost(2.0)
        assert classify(UNIT, t, t) == 1

    def test_scale_invariance(self, osc_sys, state_box):
        rng = np.random.default_rng(2)
        first, second = random_pair(osc_sys, state_box, 10, rng)
        params = sample_log_uniform_params(3, 6, 2)
        label = classify(params, first, second)
        assert classify(params.scaled(41.0), first, second) == label

    def test_consistent_with_probability(self, osc_sys, state_box):
        rng = np.random.default_rng(3)
        params = sample_log_uniform_params(4, 6, 2)
        for _ in range(20):
            first, second = random_pair(osc_sys, state_box, 10, rng)
            label = classify(params, first, second)
            assert label == int(pref_probability(params, first, second) >= 0.5)


class TestTrainingObjective:
    def test_single_tied_record_costs_log_two(self):
        t = traj_with_cost(1.0)
        ds = PreferenceDataset([PreferenceRecord(first=t, second=t, label=1)])
        cfg = TrainConfig()
        value, _ = training_objective(UNIT, ds, cfg)
        ridge_part = cfg.ridge * UNIT.as_vector() @ UNIT.as_vector()
        assert abs(value - ridge_part - np.log(2.0)) <= 1e-12

    def test_perfect_labels_drive_cross_entropy_to_zero(self, osc_sys, state_box):
        rng = np.random.default_rng(4)
        hidden = sample_log_uniform_params(7, 6, 2)
        ds = make_dataset(osc_sys, state_box, rng, 30,
                          lambda a, b: classify(hidden, a, b))
        cfg = TrainConfig()
        sharp = hidden.scaled(1e3)
        value, _ = training_objective(sharp, ds, cfg)
        cross_entropy = value - cfg.ridge * sharp.as_vector() @ sharp.as_vector()
        assert cross_entropy <= 1e-6

    def test_gradient_matches_central_differences(self, osc_sys, state_box):
        rng = np.random.default_rng(5)
        cfg = TrainConfig()
        h = 1e-6
        worst = 0.0
        for trial in range(100):
            ds = make_dataset(osc_sys, state_box, rng, 5,
                              lambda a, b: int(rng.integers(2)), n_steps=8)
            params = sample_log_uniform_params(1000 + trial, 6, 2)
            vec = params.as_vector()
            _, grad = training_objective(params, ds, cfg)
            fd = np.empty_like(vec)
            for j in range(vec.shape[0]):
                bump = np.zeros_like(vec)
                bump[j] = h
                up = ObjectiveParams.from_vector(vec + bump, 6, 2)
                dn = ObjectiveParams.from_vector(vec - bump, 6, 2)
                fd[j] = (training_objective(up, ds, cfg)[0]
                         - training_objective(dn, ds, cfg)[0]) / (2 * h)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-10)
            worst = max(worst, rel)
        assert worst <= 1e-5

    def test_convex_along_segments(self, osc_sys, state_box):
        rng = np.random.default_rng(6)
        ds = make_dataset(osc_sys, state_box, rng, 10,
                          lambda a, b: int(rng.integers(2)))
        cfg = TrainConfig()
        for trial in range(20):
            t1 = sample_log_uniform_params(trial, 6, 2)
            t2 = sample_log_uniform_params(500 + trial, 6, 2)
            mid = ObjectiveParams.from_vector(
                0.5 * (t1.as_vector() + t2.as_vector()), 6, 2)
            v1, _ = training_objective(t1, ds, cfg)
            v2, _ = training_objective(t2, ds, cfg)
            vm, _ = training_objective(mid, ds, cfg)
            assert vm <= 0.5 * (v1 + v2) + 1e-10

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            training_objective(UNIT, PreferenceDataset(), TrainConfig())


class TestTrain:
    def test_recovers_hidden_weights(self, osc_sys, state_box):
        rng = np.random.default_rng(7)
        hidden = sample_log_uniform_params(99, 6, 2)
        labeler = lambda a, b: classify(hidden, a, b)
        train_ds = make_dataset(osc_sys, state_box, rng, 200, labeler)
        held_out = make_dataset(osc_sys, state_box, rng, 500, labeler)
        learned = train(train_ds, None, TrainConfig(), rng_seed=0)
        agree = np.mean([
            classify(learned, rec.first, rec.second) == rec.label
            for rec in held_out
        ])
        assert agree >= 0.95

    def test_huge_ridge_pins_weights_at_lower_bound(self, osc_sys, state_box):
        rng = np.random.default_rng(8)
        ds = make_dataset(osc_sys, state_box, rng, 10,
                          lambda a, b: int(rng.integers(2)))
        cfg = TrainConfig(ridge=1e6)
        learned = train(ds, None, cfg, rng_seed=1)
        assert np.allclose(learned.as_vector(), cfg.theta_min)

    def test_deterministic(self, osc_sys, state_box):
        rng = np.random.default_rng(9)
        ds = make_dataset(osc_sys, state_box, rng, 20,
                          lambda a, b: int(rng.integers(2)))
        a = train(ds, None, TrainConfig(), rng_seed=5)
        b = train(ds, None, TrainConfig(), rng_seed=5)
        assert np.array_equal(a.as_vector(), b.as_vector())

    def test_never_worse_than_init(self, osc_sys, state_box):
        rng = np.random.default_rng(10)
        hidden = sample_log_uniform_params(3, 6, 2)
        ds = make_dataset(osc_sys, state_box, rng, 40,
                          lambda a, b: classify(hidden, a, b))
        cfg = TrainConfig(adam_iters=5)  # nearly untrained on purpose
        init = sample_log_uniform_params(77, 6, 2)
        learned = train(ds, init, cfg)
        v_init, _ = training_objective(init, ds, cfg)
        v_learned, _ = training_objective(learned, ds, cfg)
        assert v_learned <= v_init + 1e-12

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_features_raise_training_error(self):
        bad = Trajectory(states=[[1e200], [1e200]], inputs=[[1e200]])
        good = Trajectory(states=[[1e200], [0.0]], inputs=[[0.0]])
        ds = PreferenceDataset([PreferenceRecord(first=bad, second=good, label=1)])
        with pytest.raises(TrainingError):
            train(ds, UNIT, TrainConfig())


class TestSelectModel:
    def _candidates(self):
        return [
            ObjectiveParams(q_diag=[1.0], r_diag=[1.0], p_diag=[1.0]),
            ObjectiveParams(q_diag=[2.0], r_diag=[2.0], p_diag=[2.0]),
        ]

    def test_single_candidate(self):
        cands = self._candidates()[:1]
        assert select_model(cands, lambda c: [5, 7]) is cands[0]

    def test_smaller_max_wins(self):
        cands = self._candidates()
        table = {id(cands[0]): [13, 2], id(cands[1]): [17, 1]}
        assert select_model(cands, lambda c: table[id(c)]) is cands[0]

    def test_tie_broken_by_average_then_order(self):
        cands = self._candidates()
        table = {id(cands[0]): [10, 4], id(cands[1]): [10, 6]}
        assert select_model(cands, lambda c: table[id(c)]) is cands[0]
        table = {id(cands[0]): [10, 4], id(cands[1]): [10, 4]}
        assert select_model(cands, lambda c: table[id(c)]) is cands[0]

    def test_failure_disqualifies(self):
        cands = self._candidates()

        def evaluator(c):
            if c is cands[0]:
                raise PrefMpcError("rollout failed")
            return [9, 9]

        assert select_model(cands, evaluator) is cands[1]
        with pytest.raises(ModelSelectionError):
            select_model(cands, lambda c: (_ for _ in ()).throw(PrefMpcError("x")))


class TestDatasetIO:
    def test_jsonl_roundtrip(self, osc_sys, state_box, tmp_path):
        rng = np.random.default_rng(11)
        ds = make_dataset(osc_sys, state_box, rng, 5,
                          lambda a, b: int(rng.integers(2)))
        ds.records[0].meta = {"source": "test", "state_index": 0}
        path = tmp_path / "ds.jsonl"
        ds.save_jsonl(path)
        back = PreferenceDataset.load_jsonl(path)
        assert len(back) == len(ds)
        for rec_a, rec_b in zip(ds, back):
            assert np.array_equal(rec_a.first.states, rec_b.first.states)
            assert np.array_equal(rec_a.second.inputs, rec_b.second.inputs)
            assert rec_a.label == rec_b.label
            assert rec_a.meta == rec_b.meta

    def test_label_validation(self):
        t = traj_with_cost(1.0)
        with pytest.raises(ValueError):
            PreferenceRecord(first=t, second=t, label=2)

    def test_shared_state_enforced(self):
        a = Trajectory(states=[[0.0], [1.0]], inputs=[[0.5]])
        b = Trajectory(states=[[1.0], [1.0]], inputs=[[0.5]])
        with pytest.raises(ValueError):
            PreferenceRecord(first=a, second=b, label=0)
