//! Simulation and exact inversion of discrete-time piecewise affine systems,
//! with stable (non-causal) inversion for non-minimum-phase dynamics and
//! inversion-based iterative learning control on top.
//!
//! The model class is
//!
//! ```text
//! x_{k+1} = A_{q,k} x_k + B_{q,k} u_k + F_{q,k}
//! y_k     = C_{q,k} x_k + D_{q,k} u_k + G_{q,k}
//! delta_k = H(P x_k - w),   H applied entrywise, H(0) = 1
//! ```
//!
//! where the active location `q` is the unique one whose signature set
//! contains `delta_k`. See [`model::PwaModel`] for simulation,
//! [`inversion`] for exact inverses, [`stable_inversion`] for the
//! bounded-solution construction under unstable inverse dynamics, [`ilc`]
//! for learning-based feedforward refinement, and [`printhead`] for a
//! complete switched motion-control benchmark built from these pieces.

pub mod error;
pub mod fixtures;
pub mod ilc;
pub mod inversion;
pub mod model;
pub mod model_io;
pub mod partition;
pub mod poly;
pub mod printhead;
pub mod schedule;
pub mod stable_inversion;
pub mod tol;
pub mod trajectory;

pub use error::{Error, Result};
pub use ilc::{
    unit_dc_lowpass_impulse,
    build_filters, gradient_learning_matrix, ililc_learning_matrix, ilc_iterate,
    lowpass_impulse_response, nrmse, peak_error, ptype_learning_matrix, run_trials, Alignment,
    FilterPair, IlcSession, LearningRule, LiftedSignal, PlantExecutor, TrialRecord,
};
pub use inversion::{
    check_assumptions, component_relative_degree, enumerate_implicit_solutions,
    global_relative_degree, invert_rd0, invert_rd1, invert_rd2, preview_coefficients,
    AssumptionCheck, AssumptionReport, InversePwaModel, PreviewCoefficients, RelativeDegreeReport,
};
pub use model::{PwaModel, SimResult};
pub use model_io::{
    load_bench_config, load_model, save_model, BenchFile, ModelFile, ModelRole,
};
pub use partition::{Partition, Signature};
pub use printhead::{
    add_noise, build_feedback_controller, build_monolithic, downsample2, make_reference,
    prepare_control_side, run_benchmark, run_single_scheme, tune_gain_line_search, upsample2_zoh,
    zpk_to_state_space, BenchConfig, BenchmarkResults, ControlExecutor, ControlSide,
    FeedbackParams, NoiseSpec, PlantSpec, ReferenceSpec, ScenarioResult, StateSpace,
    SwitchingController, TrialMetrics, TruthExecutor, ZpkModel,
};
pub use schedule::{LocationMatrices, Schedule};
pub use stable_inversion::{
    classify_switching, compute_decoupling, force_zero_value, pad_reference, pad_signal,
    settling_samples, stable_inverse_jacobian, stable_invert, stable_invert_unstable_switching,
    Decoupling, PaddedSignal, SelectionCost, StableInversionConfig, StableInversionResult,
    SwitchDependency,
};
pub use trajectory::{SignalRole, Trajectory};
