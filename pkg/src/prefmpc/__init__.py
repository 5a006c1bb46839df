"""Learning MPC objective functions from pairwise trajectory preferences,
with pool-based and query-synthesis active learning."""

from .active import (
    ALState,
    ControllerPool,
    DiversityVariant,
    UnlabeledPool,
    acquisition,
    greedy_next_init,
    inter_diversity,
    pair_distance,
    pool_step,
    random_step,
    run_loop,
    synthesis_step,
    traj_distance,
    uncertainty,
)
from .dynamics import (
    LinearSystem,
    OscillatingMassesConfig,
    StateBox,
    Trajectory,
    TrajectoryPair,
    default_state_box,
    make_oscillating_masses,
    sample_initial_states,
    simulate_closed_loop,
    simulate_step,
)
from .harness import (
    ExperimentConfig,
    SeedConfig,
    compare_variants,
    evaluate_controller,
    generate_initial_assets,
    head_to_head,
    run_experiment,
)
from .mpc import (
    CondensedQP,
    MPCController,
    ObjectiveParams,
    build_condensed_qp,
    make_random_quadratic_controller,
    mpc_step,
    solve_box_qp,
)
from .oracle import (
    HumanOracle,
    LabelSession,
    PreferenceQuery,
    ReplayOracle,
    SettlingConfig,
    SyntheticOracle,
    max_input_norm,
    settling_time,
    synthetic_preference,
)
from .surrogate import (
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

__version__ = "0.1.0"
