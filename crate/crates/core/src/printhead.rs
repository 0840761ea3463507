//! Switched motion-control benchmark: an industrial printhead positioning
//! stage under gain-scheduled PD feedback, with feedforward injected ahead of
//! the plant.
//!
//! Two plant parameterizations play different roles: the *truth* side stands
//! in for the physical axis (simulated at the fast rate, with process and
//! measurement noise), while the *control* side is the deliberately coarser
//! model available to the learning and inversion algorithms (half the sample
//! rate, reduced order). The feedback loop switches its proportional gain on
//! the magnitude of the previous tracking error; augmenting the controller
//! state with that stored error turns the closed loop into a piecewise affine
//! model whose exogenous reference enters through the forcing term.

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilc::{
    build_filters, nrmse, peak_error, run_trials, unit_dc_lowpass_impulse, FilterPair,
    IlcSession, LearningRule, PlantExecutor,
};
use crate::inversion::{global_relative_degree, invert_rd1, InversePwaModel};
use crate::model::PwaModel;
use crate::partition::Partition;
use crate::poly;
use crate::schedule::{LocationMatrices, Schedule};
use crate::stable_inversion::{
    compute_decoupling, stable_invert, Decoupling, StableInversionConfig, SwitchDependency,
};
use crate::tol;

/// Discrete-time transfer function as zeros, poles, gain, and sample period.
#[derive(Debug, Clone)]
pub struct ZpkModel {
    pub zeros: Vec<Complex<f64>>,
    pub poles: Vec<Complex<f64>>,
    pub gain: f64,
    pub ts: f64,
}

impl ZpkModel {
    pub fn new(zeros: Vec<Complex<f64>>, poles: Vec<Complex<f64>>, gain: f64, ts: f64) -> Self {
        Self {
            zeros,
            poles,
            gain,
            ts,
        }
    }

    pub fn order(&self) -> usize {
        self.poles.len()
    }

    /// Zeros strictly outside the unit circle. A positive count means exact
    /// causal inversion is unstable.
    pub fn nmp_zero_count(&self) -> usize {
        self.zeros.iter().filter(|z| z.norm() > 1.0).count()
    }

    /// Transfer function value at a point of the complex plane.
    pub fn evaluate(&self, z: Complex<f64>) -> Complex<f64> {
        let mut num = Complex::new(self.gain, 0.0);
        for zero in &self.zeros {
            num *= z - zero;
        }
        let mut den = Complex::new(1.0, 0.0);
        for pole in &self.poles {
            den *= z - pole;
        }
        num / den
    }

    /// Response on the unit circle at a physical frequency in hertz.
    pub fn response_at_hz(&self, hz: f64) -> Complex<f64> {
        let theta = 2.0 * std::f64::consts::PI * hz * self.ts;
        self.evaluate(Complex::new(theta.cos(), theta.sin()))
    }
}

/// Single-input single-output state-space quadruple.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Output row, stored as a column.
    pub c: DVector<f64>,
    pub d: f64,
}

impl StateSpace {
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    /// Transfer function value `C (zI - A)^{-1} B + D`.
    pub fn frequency_response(&self, z: Complex<f64>) -> Result<Complex<f64>> {
        let n = self.n_x();
        let mut m = DMatrix::from_fn(n, n, |i, j| Complex::new(-self.a[(i, j)], 0.0));
        for i in 0..n {
            m[(i, i)] += z;
        }
        let b = DVector::from_fn(n, |i, _| Complex::new(self.b[i], 0.0));
        let solved = m.lu().solve(&b).ok_or_else(|| Error::Numerical {
            context: "frequency response",
            detail: format!("zI - A is singular at z = {z}"),
        })?;
        let mut acc = Complex::new(self.d, 0.0);
        for i in 0..n {
            acc += Complex::new(self.c[i], 0.0) * solved[i];
        }
        Ok(acc)
    }
}

/// Controllable-canonical realization of a proper transfer function.
pub fn zpk_to_state_space(zpk: &ZpkModel) -> Result<StateSpace> {
    let n = zpk.poles.len();
    if zpk.zeros.len() > n {
        return Err(Error::Numerical {
            context: "state-space realization",
            detail: format!(
                "improper transfer function: {} zeros over {} poles",
                zpk.zeros.len(),
                n
            ),
        });
    }
    let den = poly::real_coefficients_from_roots(&zpk.poles)?;
    let mut num = poly::real_coefficients_from_roots(&zpk.zeros)?;
    for c in num.iter_mut() {
        *c *= zpk.gain;
    }
    num.resize(n + 1, 0.0);
    // Split off the direct feedthrough so the remaining numerator is strictly
    // proper: num = d * den + num'.
    let d = num[n];
    for i in 0..=n {
        num[i] -= d * den[i];
    }
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(0, j)] = -den[n - 1 - j];
        if j + 1 < n {
            a[(j + 1, j)] = 1.0;
        }
    }
    let mut b = DVector::zeros(n);
    if n > 0 {
        b[0] = 1.0;
    }
    let c = DVector::from_fn(n, |i, _| num[n - 1 - i]);
    Ok(StateSpace { a, b, c, d })
}

/// Lowpass and switching-PD parameters of one feedback loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackParams {
    /// Lowpass denominator `z^2 + a1 z + a2`, numerator `b z (z + 1)`.
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub kd: f64,
    pub kp1: f64,
    pub kp2: f64,
    /// Error magnitude (m) above which the large proportional gain engages.
    pub e_switch: f64,
    pub ts: f64,
}

impl FeedbackParams {
    /// Proportional gain scheduled on the previous error: the small gain
    /// applies while `|e| <= e_switch` (boundary included), the large one
    /// outside.
    pub fn kp_for(&self, e_prev: f64) -> f64 {
        if e_prev.abs() <= self.e_switch {
            self.kp1
        } else {
            self.kp2
        }
    }

    /// Attenuation of the lowpass at a physical frequency, in dB relative to
    /// its DC level (positive values mean the response has dropped).
    pub fn lowpass_rolloff_db(&self, hz: f64) -> f64 {
        let dc = 2.0 * self.b / (1.0 + self.a1 + self.a2);
        let theta = 2.0 * std::f64::consts::PI * hz * self.ts;
        let z = Complex::new(theta.cos(), theta.sin());
        let h = self.b * z * (z + 1.0) / (z * z + self.a1 * z + self.a2);
        20.0 * (dc.abs() / h.norm()).log10()
    }
}

/// State-space form of the lowpass + switching-PD cascade. The third state
/// stores the previous error so the gain schedule becomes state-based; the
/// output maps never read it.
#[derive(Debug, Clone)]
pub struct SwitchingController {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Output rows per location (small-gain first), stored as columns.
    pub c: [DVector<f64>; 2],
    pub d: [f64; 2],
    pub params: FeedbackParams,
}

impl SwitchingController {
    pub fn n_x(&self) -> usize {
        3
    }

    /// Location index for a stored previous error (0 = small gain).
    pub fn location_for(&self, e_prev: f64) -> usize {
        usize::from(e_prev.abs() > self.params.e_switch)
    }
}

/// Realizes the error-to-force controller with the stored-error state.
pub fn build_feedback_controller(p: &FeedbackParams) -> SwitchingController {
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[0.0, 1.0, 0.0, -p.a2, -p.a1, 0.0, 0.0, 0.0, 0.0],
    );
    let b = DVector::from_row_slice(&[0.0, 1.0, 1.0]);
    let row = |kp: f64| {
        DVector::from_row_slice(&[
            -p.b * (p.kd * (1.0 + p.a2) / p.ts + kp * p.a2),
            -p.b * (p.kd * p.a1 / p.ts + kp * (p.a1 - 1.0)),
            0.0,
        ])
    };
    let feedthrough = |kp: f64| p.b * (kp + p.kd / p.ts);
    SwitchingController {
        a,
        b,
        c: [row(p.kp1), row(p.kp2)],
        d: [feedthrough(p.kp1), feedthrough(p.kp2)],
        params: p.clone(),
    }
}

/// Closes the loop around a strictly proper plant and a switching controller,
/// binding the reference trajectory into the forcing term. The combined state
/// is `[plant; controller]`; the switching hyperplanes read the stored
/// previous error (last state) against the gain-schedule threshold.
pub fn build_monolithic(
    plant: &StateSpace,
    controller: &SwitchingController,
    reference: &[f64],
) -> Result<PwaModel> {
    if plant.d != 0.0 {
        return Err(Error::Numerical {
            context: "monolithic assembly",
            detail: "plant must be strictly proper: direct feedthrough would close an \
                     algebraic loop through the controller"
                .into(),
        });
    }
    if reference.is_empty() {
        return Err(Error::HorizonOverflow { k: 0, horizon: 0 });
    }
    let n_p = plant.n_x();
    let n_c = controller.n_x();
    let n = n_p + n_c;

    let mut locations = Vec::with_capacity(2);
    let mut input_gain = Vec::with_capacity(2);
    for q in 0..2 {
        let d_c = controller.d[q];
        let c_c = &controller.c[q];
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n_p, n_p))
            .copy_from(&(&plant.a - &plant.b * (plant.c.transpose() * d_c)));
        a.view_mut((0, n_p), (n_p, n_c))
            .copy_from(&(&plant.b * c_c.transpose()));
        a.view_mut((n_p, 0), (n_c, n_p))
            .copy_from(&(-(&controller.b) * plant.c.transpose()));
        a.view_mut((n_p, n_p), (n_c, n_c)).copy_from(&controller.a);

        let mut b = DVector::zeros(n);
        b.rows_mut(0, n_p).copy_from(&plant.b);
        let mut c = DVector::zeros(n);
        c.rows_mut(0, n_p).copy_from(&plant.c);

        locations.push(LocationMatrices::new(a, b, DVector::zeros(n), c, 0.0, 0.0)?);

        let mut gain = DVector::zeros(n);
        gain.rows_mut(0, n_p).copy_from(&(&plant.b * d_c));
        gain.rows_mut(n_p, n_c).copy_from(&controller.b);
        input_gain.push(gain);
    }

    // delta = H(P x - w) reads the stored error e against the threshold:
    // [1, 1] iff |e| <= e_switch (small gain), otherwise exactly one entry
    // drops to 0; [0, 0] would need e both above and below the band.
    let mut p = DMatrix::zeros(2, n);
    p[(0, n - 1)] = -1.0;
    p[(1, n - 1)] = 1.0;
    let e_switch = controller.params.e_switch;
    let w = DVector::from_row_slice(&[-e_switch, -e_switch]);
    let signatures = vec![vec![vec![1, 1]], vec![vec![1, 0], vec![0, 1]]];
    let partition = Partition::new(p, w, signatures)?;

    PwaModel::new(
        partition,
        Schedule::ExogenousForced {
            locations,
            input_gain,
            output_gain: vec![0.0, 0.0],
            signal: reference.to_vec(),
        },
    )
}

/// One side of the benchmark: a plant and its feedback loop.
#[derive(Debug, Clone)]
pub struct PlantSpec {
    pub zpk: ZpkModel,
    pub feedback: FeedbackParams,
}

/// Noise injected at the plant input (process, volts) and the position
/// measurement (meters), drawn deterministically from the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_process: f64,
    pub sigma_measure: f64,
    pub seed: u64,
}

/// Rest-to-rest motion profile: rise, plateau, and return spanning the
/// window between the two horizon fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSpec {
    /// Plateau height (m); must stay on the rail.
    pub amplitude: f64,
    /// Fraction of the horizon where motion starts.
    pub motion_start: f64,
    /// Fraction of the horizon where motion has returned to rest.
    pub motion_end: f64,
}

/// Everything the five comparison simulations need.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub truth: PlantSpec,
    pub control: PlantSpec,
    pub noise: NoiseSpec,
    pub reference: ReferenceSpec,
    /// Samples at the truth (fast) rate.
    pub n_truth: usize,
    /// Samples at the control (slow) rate.
    pub n_control: usize,
    /// Edge samples zeroed by the trial filter at each end.
    pub n_edge: usize,
    pub trials: usize,
    pub gamma_gradient: f64,
    pub gamma_ptype: f64,
}

fn table_defaults() -> BenchConfig {
    let c = |re: f64, im: f64| Complex::new(re, im);
    let truth_zpk = ZpkModel::new(
        vec![c(-5.10, 0.0), c(-0.44, 0.0), c(0.16, 0.0)],
        vec![
            c(0.88, 0.37),
            c(0.88, -0.37),
            c(1.00, 0.0),
            c(1.00, 0.0),
            c(0.0, 0.0),
        ],
        2.42e-7,
        0.001,
    );
    let control_zpk = ZpkModel::new(
        vec![c(33.10, 0.0), c(-2.21, 0.0), c(0.16, 0.0)],
        vec![c(0.67, 0.61), c(0.67, -0.61), c(0.99, 0.0), c(1.00, 0.0)],
        -2.38e-7,
        0.002,
    );
    let truth_feedback = FeedbackParams {
        a1: -1.65,
        a2: 0.70,
        b: 0.027,
        kd: 3.0,
        kp1: 40.0,
        kp2: 160.0,
        e_switch: 0.002,
        ts: 0.001,
    };
    let control_feedback = FeedbackParams {
        a1: -1.31,
        a2: 0.50,
        b: 0.093,
        kd: 3.0,
        kp1: 40.0,
        kp2: 160.0,
        e_switch: 0.002,
        ts: 0.002,
    };
    BenchConfig {
        truth: PlantSpec {
            zpk: truth_zpk,
            feedback: truth_feedback,
        },
        control: PlantSpec {
            zpk: control_zpk,
            feedback: control_feedback,
        },
        noise: NoiseSpec {
            sigma_process: 0.03,
            sigma_measure: 50e-6,
            seed: 281_474_976_710_597,
        },
        reference: ReferenceSpec {
            amplitude: 0.15,
            motion_start: 0.2,
            motion_end: 0.8,
        },
        n_truth: 1999,
        n_control: 1000,
        n_edge: 35,
        trials: 9,
        // Largest whole numbers for which the NRMSE decreases monotonically
        // over all trials at the default seed, found by an integer line
        // search (the `tune_default_gains_probe` test reproduces it).
        gamma_gradient: 3875.0,
        gamma_ptype: 32.0,
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        table_defaults()
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.truth.zpk.ts * 2.0 - self.control.zpk.ts).abs() > 1e-12 {
            return Err(Error::Numerical {
                context: "benchmark config",
                detail: "truth sample period must be half the control period".into(),
            });
        }
        if self.n_truth != 2 * self.n_control - 1 {
            return Err(Error::DimensionMismatch {
                context: "truth horizon",
                expected: 2 * self.n_control - 1,
                actual: self.n_truth,
            });
        }
        if self.n_control < 2 * self.n_edge + 2 {
            return Err(Error::DimensionMismatch {
                context: "control horizon",
                expected: 2 * self.n_edge + 2,
                actual: self.n_control,
            });
        }
        if self.trials == 0 {
            return Err(Error::DimensionMismatch {
                context: "trial count",
                expected: 1,
                actual: 0,
            });
        }
        Ok(())
    }

    /// Lifted dimension of the control-rate signals (global degree is 1).
    pub fn lifted_len(&self) -> usize {
        self.n_control - 1
    }
}

fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }
}

/// Rest-to-rest profile: smooth rise over the first third of the motion
/// window, plateau over the second, smooth return over the last. Exactly
/// zero outside the window, so the loop idles at both horizon ends.
pub fn make_reference(spec: &ReferenceSpec, len: usize) -> Vec<f64> {
    let mut r = Vec::with_capacity(len);
    if len == 0 {
        return r;
    }
    let start = spec.motion_start * (len - 1) as f64;
    let end = spec.motion_end * (len - 1) as f64;
    let span = end - start;
    for i in 0..len {
        let f = ((i as f64) - start) / span;
        let value = if !(0.0..=1.0).contains(&f) {
            0.0
        } else if f < 1.0 / 3.0 {
            smoothstep(3.0 * f)
        } else if f < 2.0 / 3.0 {
            1.0
        } else {
            smoothstep(3.0 * (1.0 - f))
        };
        r.push(spec.amplitude * value);
    }
    r
}

/// Keeps the even-indexed samples (fast rate to slow rate).
pub fn downsample2(samples: &[f64]) -> Vec<f64> {
    samples.iter().copied().step_by(2).collect()
}

/// Repeats each sample twice (slow rate to fast rate, zero-order hold).
pub fn upsample2_zoh(samples: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len() * 2);
    for &v in samples {
        out.push(v);
        out.push(v);
    }
    out
}

/// Adds i.i.d. zero-mean Gaussian noise, deterministic per seed.
pub fn add_noise(samples: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Numerical {
        context: "noise generator",
        detail: e.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(samples.iter().map(|v| v + normal.sample(&mut rng)).collect())
}

/// Independent sub-seed for one noise stream of one trial.
fn mix_seed(base: u64, trial: u64, stream: u64) -> u64 {
    let mut z = base
        ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Executes lifted control-rate inputs on the truth loop: upsample, inject
/// process noise at the plant input, simulate the fast-rate closed loop with
/// the sensor noise folded into the error channel, then decimate the noisy
/// measurement back to the control rate.
pub struct TruthExecutor {
    plant: StateSpace,
    controller: SwitchingController,
    reference: Vec<f64>,
    noise: NoiseSpec,
    n_truth: usize,
    lifted: usize,
}

impl TruthExecutor {
    pub fn new(cfg: &BenchConfig, reference_truth: &[f64]) -> Result<Self> {
        if reference_truth.len() != cfg.n_truth {
            return Err(Error::DimensionMismatch {
                context: "truth reference",
                expected: cfg.n_truth,
                actual: reference_truth.len(),
            });
        }
        Ok(Self {
            plant: zpk_to_state_space(&cfg.truth.zpk)?,
            controller: build_feedback_controller(&cfg.truth.feedback),
            reference: reference_truth.to_vec(),
            noise: cfg.noise.clone(),
            n_truth: cfg.n_truth,
            lifted: cfg.lifted_len(),
        })
    }
}

impl PlantExecutor for TruthExecutor {
    fn lifted_len(&self) -> usize {
        self.lifted
    }

    fn run(&mut self, u: &DVector<f64>, trial: usize) -> Result<DVector<f64>> {
        if u.len() != self.lifted {
            return Err(Error::DimensionMismatch {
                context: "lifted input",
                expected: self.lifted,
                actual: u.len(),
            });
        }
        // The final control-rate sample cannot influence any measured output
        // inside the horizon; it is held at zero, and the upsampled series is
        // truncated to the odd truth horizon (the dropped sample is the one
        // past the final measurement).
        let mut u_control: Vec<f64> = u.iter().copied().collect();
        u_control.push(0.0);
        let mut u_truth = upsample2_zoh(&u_control);
        u_truth.truncate(self.n_truth);

        let process = add_noise(
            &vec![0.0; self.n_truth],
            self.noise.sigma_process,
            mix_seed(self.noise.seed, trial as u64, 1),
        )?;
        let measure = add_noise(
            &vec![0.0; self.n_truth],
            self.noise.sigma_measure,
            mix_seed(self.noise.seed, trial as u64, 2),
        )?;

        // The controller acts on the measured error r - (y + noise), which
        // the monolithic form carries as the exogenous signal r - noise.
        let signal: Vec<f64> = self
            .reference
            .iter()
            .zip(&measure)
            .map(|(r, w)| r - w)
            .collect();
        let model = build_monolithic(&self.plant, &self.controller, &signal)?;
        let inputs: Vec<f64> = u_truth.iter().zip(&process).map(|(v, w)| v + w).collect();
        let sim = model.simulate(&DVector::zeros(self.plant.n_x() + 3), &inputs)?;

        let measured: Vec<f64> = sim.y.iter().zip(&measure).map(|(y, w)| y + w).collect();
        let slow = downsample2(&measured);
        Ok(DVector::from_iterator(
            self.lifted,
            slow[1..].iter().copied(),
        ))
    }
}

/// Noise-free executor on the control-side loop itself, for self-inversion
/// checks where model error is deliberately absent.
pub struct ControlExecutor {
    model: PwaModel,
    n_control: usize,
    lifted: usize,
}

impl ControlExecutor {
    pub fn new(cfg: &BenchConfig, reference_control: &[f64]) -> Result<Self> {
        if reference_control.len() != cfg.n_control {
            return Err(Error::DimensionMismatch {
                context: "control reference",
                expected: cfg.n_control,
                actual: reference_control.len(),
            });
        }
        let plant = zpk_to_state_space(&cfg.control.zpk)?;
        let controller = build_feedback_controller(&cfg.control.feedback);
        Ok(Self {
            model: build_monolithic(&plant, &controller, reference_control)?,
            n_control: cfg.n_control,
            lifted: cfg.lifted_len(),
        })
    }

    pub fn model(&self) -> &PwaModel {
        &self.model
    }
}

impl PlantExecutor for ControlExecutor {
    fn lifted_len(&self) -> usize {
        self.lifted
    }

    fn run(&mut self, u: &DVector<f64>, _trial: usize) -> Result<DVector<f64>> {
        let mut inputs: Vec<f64> = u.iter().copied().collect();
        inputs.resize(self.n_control, 0.0);
        let sim = self.model.simulate(&DVector::zeros(self.model.n_x()), &inputs)?;
        Ok(DVector::from_iterator(
            self.lifted,
            sim.y[1..].iter().copied(),
        ))
    }
}

/// Per-trial error metrics of a learning scenario.
#[derive(Debug, Clone)]
pub struct TrialMetrics {
    pub trial: usize,
    pub nrmse: f64,
    pub peak_error: f64,
}

/// Outcome of one of the five comparison simulations.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub name: &'static str,
    pub nrmse: f64,
    pub peak_error: f64,
    /// Per-trial curve; empty for the non-learning scenarios.
    pub trials: Vec<TrialMetrics>,
    pub final_input: DVector<f64>,
    pub final_output: DVector<f64>,
}

/// The five scenario results plus shared context.
#[derive(Debug, Clone)]
pub struct BenchmarkResults {
    pub scenarios: Vec<ScenarioResult>,
    pub reference_lifted: DVector<f64>,
    pub mu_tilde: usize,
    pub switch_dependency: SwitchDependency,
    pub decoupling_stable: usize,
    pub decoupling_unstable: usize,
}

impl BenchmarkResults {
    pub fn scenario(&self, name: &str) -> Option<&ScenarioResult> {
        self.scenarios.iter().find(|s| s.name == name)
    }
}

pub const SCENARIO_FEEDBACK_ONLY: &str = "feedback-only";
pub const SCENARIO_STABLE_INVERSION: &str = "stable-inversion";
pub const SCENARIO_ILILC: &str = "inversion-ilc";
pub const SCENARIO_GRADIENT: &str = "gradient-ilc";
pub const SCENARIO_PTYPE: &str = "ptype-ilc";

fn scenario_error(name: &'static str, e: Error) -> Error {
    Error::Numerical {
        context: "benchmark scenario",
        detail: format!("{name}: {e}"),
    }
}

/// Control-side artifacts shared by the scenarios: the monolithic model, its
/// inverse, the modal decoupling, and the lifted reference.
pub struct ControlSide {
    pub model: PwaModel,
    pub inverse: InversePwaModel,
    pub decoupling: Decoupling,
    pub mu_tilde: usize,
    pub reference_control: Vec<f64>,
    pub reference_lifted: DVector<f64>,
    pub filters: FilterPair,
}

/// Builds the control model from the config, checks its global degree, and
/// prepares the inverse, decoupling, and trial filters.
pub fn prepare_control_side(cfg: &BenchConfig) -> Result<ControlSide> {
    cfg.validate()?;
    let r_truth = make_reference(&cfg.reference, cfg.n_truth);
    let reference_control = downsample2(&r_truth);
    let plant = zpk_to_state_space(&cfg.control.zpk)?;
    let controller = build_feedback_controller(&cfg.control.feedback);
    let model = build_monolithic(&plant, &controller, &reference_control)?;

    let degree = global_relative_degree(&model, 0, tol::DEGREE_CAP)?;
    if degree.mu_tilde != 1 {
        return Err(Error::WrongDegree {
            required: 1,
            actual: degree.mu_tilde,
        });
    }
    let inverse = invert_rd1(&model)?;
    let decoupling = compute_decoupling(&inverse.model)?;

    let lifted = cfg.lifted_len();
    let reference_lifted = DVector::from_iterator(
        lifted,
        reference_control[1..].iter().copied(),
    );
    let fb = &cfg.control.feedback;
    let impulse = unit_dc_lowpass_impulse(fb.a1, fb.a2, fb.b, lifted);
    let filters = build_filters(&impulse, cfg.n_edge, lifted)?;

    Ok(ControlSide {
        model,
        inverse,
        decoupling,
        mu_tilde: degree.mu_tilde,
        reference_control,
        reference_lifted,
        filters,
    })
}

fn run_learning_scenario(
    name: &'static str,
    cfg: &BenchConfig,
    side: &ControlSide,
    rule: LearningRule,
) -> Result<ScenarioResult> {
    let r_truth = make_reference(&cfg.reference, cfg.n_truth);
    let executor = TruthExecutor::new(cfg, &r_truth).map_err(|e| scenario_error(name, e))?;
    let mut session = IlcSession {
        rule,
        filters: side.filters.clone(),
        executor,
    };
    let history = run_trials(&mut session, &side.reference_lifted, cfg.trials)
        .map_err(|e| scenario_error(name, e))?;
    let trials: Vec<TrialMetrics> = history
        .iter()
        .enumerate()
        .map(|(i, t)| TrialMetrics {
            trial: i,
            nrmse: t.nrmse,
            peak_error: t.peak_error,
        })
        .collect();
    let last = history.last().expect("at least one trial");
    Ok(ScenarioResult {
        name,
        nrmse: last.nrmse,
        peak_error: last.peak_error,
        trials,
        final_input: last.u.clone(),
        final_output: last.y.clone(),
    })
}

/// Runs the five comparison simulations: feedback only, learning-free stable
/// inversion, and the three learning schemes. All scenarios share the same
/// per-trial noise draws, so trial 0 of every learning scheme coincides with
/// the feedback-only run.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchmarkResults> {
    let side = prepare_control_side(cfg)?;
    let r_truth = make_reference(&cfg.reference, cfg.n_truth);
    let r = &side.reference_lifted;
    let lifted = cfg.lifted_len();
    let mut scenarios = Vec::with_capacity(5);

    // Feedback only: zero feedforward, trial-0 noise.
    {
        let name = SCENARIO_FEEDBACK_ONLY;
        let mut executor =
            TruthExecutor::new(cfg, &r_truth).map_err(|e| scenario_error(name, e))?;
        let u = DVector::zeros(lifted);
        let y = executor.run(&u, 0).map_err(|e| scenario_error(name, e))?;
        scenarios.push(ScenarioResult {
            name,
            nrmse: nrmse(r, &y)?,
            peak_error: peak_error(r, &y)?,
            trials: Vec::new(),
            final_input: u,
            final_output: y,
        });
    }

    // Learning-free stable inversion of the control model, applied to the
    // truth loop under the same trial-0 noise.
    {
        let name = SCENARIO_STABLE_INVERSION;
        let preview: Vec<f64> = r.iter().copied().collect();
        let solution = stable_invert(
            &side.inverse,
            &side.decoupling,
            &preview,
            &StableInversionConfig::default(),
        )
        .map_err(|e| scenario_error(name, e))?;
        let u = DVector::from_iterator(lifted, solution.u.iter().copied());
        let mut executor =
            TruthExecutor::new(cfg, &r_truth).map_err(|e| scenario_error(name, e))?;
        let y = executor.run(&u, 0).map_err(|e| scenario_error(name, e))?;
        scenarios.push(ScenarioResult {
            name,
            nrmse: nrmse(r, &y)?,
            peak_error: peak_error(r, &y)?,
            trials: Vec::new(),
            final_input: u,
            final_output: y,
        });
    }

    scenarios.push(run_learning_scenario(
        SCENARIO_ILILC,
        cfg,
        &side,
        LearningRule::IterativeInversion {
            inverse: side.inverse.clone(),
            decoupling: side.decoupling.clone(),
            config: StableInversionConfig::default(),
        },
    )?);
    scenarios.push(run_learning_scenario(
        SCENARIO_GRADIENT,
        cfg,
        &side,
        LearningRule::Gradient {
            model: side.model.clone(),
            x0: DVector::zeros(side.model.n_x()),
            mu_tilde: side.mu_tilde,
            gain: cfg.gamma_gradient,
        },
    )?);
    scenarios.push(run_learning_scenario(
        SCENARIO_PTYPE,
        cfg,
        &side,
        LearningRule::PType {
            gain: cfg.gamma_ptype,
        },
    )?);

    let dependency = crate::stable_inversion::classify_switching(
        side.inverse.model.partition(),
        &side.decoupling,
    );
    Ok(BenchmarkResults {
        scenarios,
        reference_lifted: side.reference_lifted.clone(),
        mu_tilde: side.mu_tilde,
        switch_dependency: dependency,
        decoupling_stable: side.decoupling.n_stable,
        decoupling_unstable: side.decoupling.n_unstable,
    })
}

/// NRMSE curve of one learning scheme at one gain on the benchmark, for gain
/// tuning.
/// Runs one learning scheme by name (`ililc`, `gradient`, or `ptype`) with
/// an optional gain override, returning the full scenario record including
/// per-trial metrics and the final trial's trajectories.
pub fn run_single_scheme(
    cfg: &BenchConfig,
    scheme: &str,
    gain: Option<f64>,
) -> Result<ScenarioResult> {
    let side = prepare_control_side(cfg)?;
    let (name, rule) = match scheme {
        "ililc" => (
            SCENARIO_ILILC,
            LearningRule::IterativeInversion {
                inverse: side.inverse.clone(),
                decoupling: side.decoupling.clone(),
                config: StableInversionConfig::default(),
            },
        ),
        "gradient" => (
            SCENARIO_GRADIENT,
            LearningRule::Gradient {
                model: side.model.clone(),
                x0: DVector::zeros(side.model.n_x()),
                mu_tilde: side.mu_tilde,
                gain: gain.unwrap_or(cfg.gamma_gradient),
            },
        ),
        "ptype" => (
            SCENARIO_PTYPE,
            LearningRule::PType {
                gain: gain.unwrap_or(cfg.gamma_ptype),
            },
        ),
        other => {
            return Err(Error::Numerical {
                context: "ilc scheme",
                detail: format!("unknown scheme {other} (expected ililc, gradient, or ptype)"),
            })
        }
    };
    run_learning_scenario(name, cfg, &side, rule)
}

pub fn benchmark_gain_curve(cfg: &BenchConfig, scheme: &str, gain: f64) -> Result<Vec<f64>> {
    let side = prepare_control_side(cfg)?;
    let rule = match scheme {
        "gradient" => LearningRule::Gradient {
            model: side.model.clone(),
            x0: DVector::zeros(side.model.n_x()),
            mu_tilde: side.mu_tilde,
            gain,
        },
        "ptype" => LearningRule::PType { gain },
        other => {
            return Err(Error::Numerical {
                context: "gain tuning",
                detail: format!("scheme {other} has no scalar gain to tune"),
            })
        }
    };
    let r_truth = make_reference(&cfg.reference, cfg.n_truth);
    let mut session = IlcSession {
        rule,
        filters: side.filters.clone(),
        executor: TruthExecutor::new(cfg, &r_truth)?,
    };
    let history = run_trials(&mut session, &side.reference_lifted, cfg.trials)?;
    Ok(history.iter().map(|t| t.nrmse).collect())
}

/// Largest candidate gain whose NRMSE curve is finite and non-increasing
/// across every trial. Candidates whose run fails (divergence, overflow) are
/// rejected rather than propagated.
pub fn tune_gain_line_search<F>(candidates: &[f64], mut evaluate: F) -> Option<f64>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let mut best: Option<f64> = None;
    for &gain in candidates {
        let Ok(curve) = evaluate(gain) else { continue };
        let monotone = !curve.is_empty()
            && curve.iter().all(|v| v.is_finite())
            && curve.windows(2).all(|w| w[1] <= w[0]);
        if monotone && best.is_none_or(|b| gain > b) {
            best = Some(gain);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ilc::ililc_learning_matrix;
    use approx::assert_abs_diff_eq;

    fn unit_delay() -> ZpkModel {
        ZpkModel::new(vec![], vec![Complex::new(0.0, 0.0)], 1.0, 0.001)
    }

    #[test]
    fn unit_delay_realization_steps_one_sample_late() {
        let ss = zpk_to_state_space(&unit_delay()).unwrap();
        assert_eq!(ss.n_x(), 1);
        assert_eq!(ss.d, 0.0);
        let mats = LocationMatrices::new(
            ss.a.clone(),
            ss.b.clone(),
            DVector::zeros(1),
            ss.c.clone(),
            ss.d,
            0.0,
        )
        .unwrap();
        let model = PwaModel::single_location(mats).unwrap();
        let sim = model.simulate(&DVector::zeros(1), &[1.0; 6]).unwrap();
        assert_eq!(sim.y, vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn realizations_reproduce_the_transfer_function() {
        let cfg = BenchConfig::default();
        for zpk in [&cfg.truth.zpk, &cfg.control.zpk] {
            let ss = zpk_to_state_space(zpk).unwrap();
            assert_eq!(ss.n_x(), zpk.order());
            assert_eq!(ss.d, 0.0, "both plants are strictly proper");
            for theta in [0.07, 0.3, 1.1, 2.4] {
                let z = Complex::new(f64::cos(theta), f64::sin(theta));
                let want = zpk.evaluate(z);
                let got = ss.frequency_response(z).unwrap();
                assert!(
                    (want - got).norm() <= 1e-9 * want.norm(),
                    "mismatch at theta {theta}: {want} vs {got}"
                );
            }
        }
    }

    #[test]
    fn biproper_transfer_functions_split_a_feedthrough() {
        let zpk = ZpkModel::new(
            vec![Complex::new(0.5, 0.0), Complex::new(-0.25, 0.0)],
            vec![Complex::new(0.3, 0.0), Complex::new(-0.6, 0.0)],
            2.0,
            0.001,
        );
        let ss = zpk_to_state_space(&zpk).unwrap();
        assert_eq!(ss.d, 2.0);
        let z = Complex::new(0.2, 0.9);
        let want = zpk.evaluate(z);
        let got = ss.frequency_response(z).unwrap();
        assert!((want - got).norm() <= 1e-12 * want.norm());
    }

    #[test]
    fn improper_transfer_functions_are_rejected() {
        let zpk = ZpkModel::new(
            vec![Complex::new(0.5, 0.0), Complex::new(-0.25, 0.0)],
            vec![Complex::new(0.3, 0.0)],
            1.0,
            0.001,
        );
        assert!(zpk_to_state_space(&zpk).is_err());
    }

    #[test]
    fn nmp_zero_counts_for_both_plants() {
        let cfg = BenchConfig::default();
        assert_eq!(cfg.truth.zpk.nmp_zero_count(), 1);
        assert_eq!(cfg.control.zpk.nmp_zero_count(), 2);
    }

    #[test]
    fn truth_plant_has_a_double_pole_at_one() {
        let cfg = BenchConfig::default();
        let den = poly::real_coefficients_from_roots(&cfg.truth.zpk.poles).unwrap();
        let at_one = poly::eval(&den, Complex::new(1.0, 0.0)).norm();
        // Derivative coefficients: d/dz sum c_i z^i = sum i c_i z^{i-1}.
        let deriv: Vec<f64> = den
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| i as f64 * c)
            .collect();
        let slope_at_one = poly::eval(&deriv, Complex::new(1.0, 0.0)).norm();
        assert!(at_one < 1e-12, "pole at 1: {at_one}");
        assert!(slope_at_one < 1e-9, "double pole at 1: {slope_at_one}");
        // Not a triple pole.
        let second: Vec<f64> = deriv
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| i as f64 * c)
            .collect();
        assert!(poly::eval(&second, Complex::new(1.0, 0.0)).norm() > 1e-3);
    }

    #[test]
    fn proportional_gain_switches_outside_the_error_band() {
        let cfg = BenchConfig::default();
        let fb = &cfg.control.feedback;
        assert_eq!(fb.kp_for(0.0), 40.0);
        assert_eq!(fb.kp_for(0.003), 160.0);
        assert_eq!(fb.kp_for(-0.003), 160.0);
        // The boundary belongs to the small-gain branch.
        assert_eq!(fb.kp_for(0.002), 40.0);
        assert_eq!(fb.kp_for(-0.002), 40.0);
        let ctrl = build_feedback_controller(fb);
        assert_eq!(ctrl.location_for(0.0), 0);
        assert_eq!(ctrl.location_for(0.002), 0);
        assert_eq!(ctrl.location_for(0.0021), 1);
    }

    #[test]
    fn controller_realization_matches_the_filter_cascade() {
        // Fix one location (huge threshold) and compare the state-space
        // controller against running the PD difference equation into the
        // lowpass difference equation directly.
        let p = FeedbackParams {
            a1: -1.31,
            a2: 0.50,
            b: 0.093,
            kd: 3.0,
            kp1: 40.0,
            kp2: 160.0,
            e_switch: 1e9,
            ts: 0.002,
        };
        let ctrl = build_feedback_controller(&p);
        let e: Vec<f64> = (0..60).map(|k| (k as f64 * 0.23).sin() * 0.4).collect();

        // State-space run, location 0.
        let mut x = DVector::zeros(3);
        let mut u_ss = Vec::new();
        for &ek in &e {
            u_ss.push(ctrl.c[0].dot(&x) + ctrl.d[0] * ek);
            x = &ctrl.a * &x + &ctrl.b * ek;
        }

        // PD then lowpass, as difference equations.
        let kp = p.kp1;
        let mut v = Vec::new();
        for (k, &ek) in e.iter().enumerate() {
            let prev = if k == 0 { 0.0 } else { e[k - 1] };
            v.push((kp + p.kd / p.ts) * ek - (p.kd / p.ts) * prev);
        }
        let mut u_direct: Vec<f64> = Vec::new();
        for k in 0..v.len() {
            let mut val = p.b * (v[k] + if k >= 1 { v[k - 1] } else { 0.0 });
            if k >= 1 {
                val -= p.a1 * u_direct[k - 1];
            }
            if k >= 2 {
                val -= p.a2 * u_direct[k - 2];
            }
            u_direct.push(val);
        }

        for k in 0..e.len() {
            assert_abs_diff_eq!(u_ss[k], u_direct[k], epsilon = 1e-9 * u_direct[k].abs().max(1.0));
        }
    }

    #[test]
    fn monolithic_structure_and_dimensions() {
        let cfg = BenchConfig::default();
        let r = vec![0.0; 50];
        for (spec, dim) in [(&cfg.truth, 8), (&cfg.control, 7)] {
            let plant = zpk_to_state_space(&spec.zpk).unwrap();
            let ctrl = build_feedback_controller(&spec.feedback);
            let model = build_monolithic(&plant, &ctrl, &r).unwrap();
            assert_eq!(model.n_x(), dim);
            assert_eq!(model.n_locations(), 2);
            for q in 0..2 {
                let mats = model.schedule().get(q, 0).unwrap();
                assert_eq!(mats.d, 0.0, "no direct feedthrough");
                assert_eq!(mats.g, 0.0);
            }
            assert_eq!(
                model.partition().signatures(),
                &[vec![vec![1, 1]], vec![vec![1, 0], vec![0, 1]]]
            );
        }
    }

    #[test]
    fn monolithic_switches_on_the_stored_error() {
        let cfg = BenchConfig::default();
        let plant = zpk_to_state_space(&cfg.control.zpk).unwrap();
        let ctrl = build_feedback_controller(&cfg.control.feedback);
        let model = build_monolithic(&plant, &ctrl, &[0.0; 4]).unwrap();
        let n = model.n_x();
        let with_error = |e: f64| {
            let mut x = DVector::zeros(n);
            x[n - 1] = e;
            model.partition().locate(&x, 0).unwrap().0
        };
        assert_eq!(with_error(0.0), 0);
        assert_eq!(with_error(0.002), 0, "boundary stays with the small gain");
        assert_eq!(with_error(0.0021), 1);
        assert_eq!(with_error(-0.005), 1);
    }

    #[test]
    fn closed_loop_tracks_a_constant_reference_at_dc() {
        // The plant pole at 1 gives the loop integral action, so a constant
        // reference is tracked exactly in steady state (unit DC gain).
        let cfg = BenchConfig::default();
        let plant = zpk_to_state_space(&cfg.control.zpk).unwrap();
        let ctrl = build_feedback_controller(&cfg.control.feedback);
        let level = 5e-4;
        let steps = 6000;
        let model = build_monolithic(&plant, &ctrl, &vec![level; steps]).unwrap();
        let sim = model.simulate(&DVector::zeros(7), &vec![0.0; steps]).unwrap();
        let tail = &sim.y[steps - 50..];
        for y in tail {
            assert!(
                (y - level).abs() < 0.02 * level,
                "steady output {y} vs reference {level}"
            );
        }
    }

    #[test]
    fn reference_profile_shape() {
        let spec = ReferenceSpec {
            amplitude: 0.15,
            motion_start: 0.2,
            motion_end: 0.8,
        };
        let r = make_reference(&spec, 1999);
        assert_eq!(r.len(), 1999);
        assert_eq!(downsample2(&r).len(), 1000);
        let max = r.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max <= 0.3, "stays on the rail");
        assert_abs_diff_eq!(max, 0.15, epsilon = 1e-12);
        // Rest segments are exactly zero.
        for (i, &v) in r.iter().enumerate() {
            let frac = i as f64 / 1998.0;
            if !(0.2..=0.8).contains(&frac) {
                assert_eq!(v, 0.0, "sample {i} should be at rest");
            }
        }
        // Plateau in the middle of the window.
        assert_abs_diff_eq!(r[999], 0.15, epsilon = 1e-12);

        let zero = make_reference(
            &ReferenceSpec {
                amplitude: 0.0,
                motion_start: 0.2,
                motion_end: 0.8,
            },
            100,
        );
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn resampling_rules() {
        assert_eq!(downsample2(&[1.0, 2.0, 3.0, 4.0]), vec![1.0, 3.0]);
        assert_eq!(upsample2_zoh(&[1.0, 2.0]), vec![1.0, 1.0, 2.0, 2.0]);
        // Up-then-down on a held-pair signal is the identity.
        let held = vec![3.0, 3.0, -1.0, -1.0, 0.5, 0.5];
        assert_eq!(upsample2_zoh(&downsample2(&held)), held);
    }

    #[test]
    fn noise_is_deterministic_and_sized_correctly() {
        let base = vec![1.0; 40];
        let clean = add_noise(&base, 0.0, 7).unwrap();
        assert_eq!(clean, base);
        let a = add_noise(&base, 0.5, 7).unwrap();
        let b = add_noise(&base, 0.5, 7).unwrap();
        let c = add_noise(&base, 0.5, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_variance_matches_the_requested_sigma() {
        let zeros = vec![0.0; 100_000];
        let samples = add_noise(&zeros, 1.0, 12345).unwrap();
        let mean: f64 = samples.iter().sum::<f64>() / samples.len() as f64;
        let var: f64 =
            samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / samples.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "sample variance {var}");
    }

    #[test]
    fn lowpass_attenuation_at_the_design_rolloff() {
        let cfg = BenchConfig::default();
        for fb in [&cfg.truth.feedback, &cfg.control.feedback] {
            let drop = fb.lowpass_rolloff_db(40.0);
            assert!(
                (2.0..=4.0).contains(&drop),
                "40 Hz attenuation {drop} dB should be about 3 dB"
            );
        }
    }

    /// Small benchmark config so tests stay fast: shorter horizon, fewer
    /// trials, same dynamics.
    fn small_config() -> BenchConfig {
        let mut cfg = BenchConfig::default();
        cfg.n_control = 250;
        cfg.n_truth = 499;
        cfg.n_edge = 10;
        cfg.trials = 4;
        cfg
    }

    #[test]
    fn control_model_degree_inverse_and_decoupling() {
        let cfg = small_config();
        let side = prepare_control_side(&cfg).unwrap();
        assert_eq!(side.mu_tilde, 1);
        // Inverse spectrum: plant zeros, lowpass poles, and two at the
        // origin; exactly the plant's anti-stable zeros are unstable.
        assert_eq!(side.decoupling.n_unstable, 2);
        assert_eq!(side.decoupling.n_stable, 5);
        // The stored-error hyperplanes read only stable modal coordinates,
        // so the forward-pass construction applies.
        let dep = crate::stable_inversion::classify_switching(
            side.inverse.model.partition(),
            &side.decoupling,
        );
        assert_eq!(dep, SwitchDependency::StableModes);
    }

    #[test]
    fn noise_free_self_inversion_tracks_to_numerical_precision() {
        // Invert the control model and run the result on the control model
        // itself: with no model error and no noise, tracking should be
        // limited only by the finite-horizon boundary conditions.
        let cfg = small_config();
        let side = prepare_control_side(&cfg).unwrap();
        let preview: Vec<f64> = side.reference_lifted.iter().copied().collect();
        let sol = stable_invert(
            &side.inverse,
            &side.decoupling,
            &preview,
            &StableInversionConfig::default(),
        )
        .unwrap();
        let u = DVector::from_iterator(preview.len(), sol.u.iter().copied());
        let mut exec = ControlExecutor::new(&cfg, &side.reference_control).unwrap();
        let y = exec.run(&u, 0).unwrap();
        let err = nrmse(&side.reference_lifted, &y).unwrap();
        let peak = peak_error(&side.reference_lifted, &y).unwrap();
        assert!(err < 1e-5, "self-inversion NRMSE {err}");
        assert!(peak < 1e-6, "self-inversion peak error {peak} m");
    }

    #[test]
    fn ililc_learning_matrix_assembles_at_benchmark_scale() {
        let cfg = small_config();
        let side = prepare_control_side(&cfg).unwrap();
        let l = ililc_learning_matrix(
            &side.inverse,
            &side.decoupling,
            &StableInversionConfig::default(),
            &side.reference_lifted.clone(),
        )
        .unwrap();
        assert_eq!(l.nrows(), cfg.lifted_len());
        assert!(l.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tuning_keeps_the_largest_monotone_candidate() {
        // Synthetic curves: gain 3 diverges, gain 2 is monotone, 1 is too.
        let gain = tune_gain_line_search(&[1.0, 2.0, 3.0], |g| {
            if g > 2.5 {
                Ok(vec![1.0, 0.9, 1.2])
            } else {
                Ok(vec![1.0, 0.9 / g, 0.8 / g])
            }
        });
        assert_eq!(gain, Some(2.0));
        // Failures are rejections, not errors.
        let gain = tune_gain_line_search(&[1.0, 2.0], |g| {
            if g > 1.5 {
                Err(Error::EmptySolutionSet { k: 0 })
            } else {
                Ok(vec![0.5, 0.4])
            }
        });
        assert_eq!(gain, Some(1.0));
        assert_eq!(tune_gain_line_search(&[], |_| Ok(vec![1.0])), None);
    }

    #[test]
    fn benchmark_runs_end_to_end_on_a_short_horizon() {
        let mut cfg = small_config();
        cfg.trials = 3;
        let results = run_benchmark(&cfg).unwrap();
        assert_eq!(results.scenarios.len(), 5);
        assert_eq!(results.mu_tilde, 1);
        assert_eq!(results.switch_dependency, SwitchDependency::StableModes);

        let fb = results.scenario(SCENARIO_FEEDBACK_ONLY).unwrap();
        let ililc = results.scenario(SCENARIO_ILILC).unwrap();
        // Shared per-trial noise: the learning schemes' trial 0 is the
        // feedback-only run.
        assert_eq!(ililc.trials[0].nrmse.to_bits(), fb.nrmse.to_bits());
        let grad = results.scenario(SCENARIO_GRADIENT).unwrap();
        assert_eq!(grad.trials[0].nrmse.to_bits(), fb.nrmse.to_bits());
        for s in &results.scenarios {
            assert!(s.nrmse.is_finite());
            assert!(s.peak_error.is_finite());
        }
    }

    /// No-mismatch, no-noise learning probe: ILILC driving the control loop
    /// itself must converge fast if the update wiring is right.
    #[test]
    #[ignore]
    fn ililc_probe_without_model_error() {
        let cfg = small_config();
        let side = prepare_control_side(&cfg).unwrap();
        let mut session = IlcSession {
            rule: LearningRule::IterativeInversion {
                inverse: side.inverse.clone(),
                decoupling: side.decoupling.clone(),
                config: StableInversionConfig::default(),
            },
            filters: side.filters.clone(),
            executor: ControlExecutor::new(&cfg, &side.reference_control).unwrap(),
        };
        let history = run_trials(&mut session, &side.reference_lifted, 6).unwrap();
        for (i, t) in history.iter().enumerate() {
            println!(
                "trial {i} nrmse {:.3e} peak {:.3e} |u|inf {:.3e}",
                t.nrmse,
                t.peak_error,
                t.u.amax()
            );
        }
    }

    /// Mismatched but noise-free learning probe: separates model-error
    /// robustness from noise effects.
    #[test]
    #[ignore]
    fn learning_probe_with_model_error_without_noise() {
        let mut cfg = BenchConfig::default();
        cfg.noise.sigma_process = 0.0;
        cfg.noise.sigma_measure = 0.0;
        cfg.trials = 6;
        let side = prepare_control_side(&cfg).unwrap();
        let r_truth = make_reference(&cfg.reference, cfg.n_truth);
        for (name, rule) in [
            (
                "ililc",
                LearningRule::IterativeInversion {
                    inverse: side.inverse.clone(),
                    decoupling: side.decoupling.clone(),
                    config: StableInversionConfig::default(),
                },
            ),
            (
                "gradient",
                LearningRule::Gradient {
                    model: side.model.clone(),
                    x0: DVector::zeros(side.model.n_x()),
                    mu_tilde: side.mu_tilde,
                    gain: cfg.gamma_gradient,
                },
            ),
            ("ptype", LearningRule::PType { gain: cfg.gamma_ptype }),
        ] {
            let mut session = IlcSession {
                rule,
                filters: side.filters.clone(),
                executor: TruthExecutor::new(&cfg, &r_truth).unwrap(),
            };
            let history = run_trials(&mut session, &side.reference_lifted, cfg.trials).unwrap();
            println!("{name}:");
            for (i, t) in history.iter().enumerate() {
                println!(
                    "  trial {i} nrmse {:.3e} peak {:.3e} |u|inf {:.3e}",
                    t.nrmse,
                    t.peak_error,
                    t.u.amax()
                );
            }
        }
    }

    /// Integer line search that picked the default learning gains, refined
    /// coarse-to-fine; run with `--ignored --nocapture` to reproduce.
    #[test]
    #[ignore]
    fn tune_default_gains_probe() {
        let cfg = BenchConfig::default();
        for (scheme, coarse) in [
            ("gradient", (1000..=5000).step_by(400).map(|g| g as f64).collect::<Vec<_>>()),
            ("ptype", (5..=100).step_by(8).map(|g| g as f64).collect::<Vec<_>>()),
        ] {
            let eval = |g: f64| benchmark_gain_curve(&cfg, scheme, g);
            let c1 = tune_gain_line_search(&coarse, eval).unwrap();
            println!("{scheme}: coarse winner {c1}");
            let step = if scheme == "gradient" { 400.0 } else { 8.0 };
            let mid: Vec<f64> = (0..=16)
                .map(|i| c1 - step + i as f64 * step / 8.0)
                .filter(|g| *g > 0.0)
                .collect();
            let c2 = tune_gain_line_search(&mid, |g| benchmark_gain_curve(&cfg, scheme, g))
                .unwrap();
            println!("{scheme}: mid winner {c2}");
            let fine: Vec<f64> = (0..=2 * (step as usize / 8).max(2))
                .map(|i| c2 - step / 8.0 + i as f64)
                .filter(|g| *g > 0.0)
                .collect();
            let c3 = tune_gain_line_search(&fine, |g| benchmark_gain_curve(&cfg, scheme, g))
                .unwrap();
            println!("{scheme}: tuned whole-number gain {c3}");
            for g in [c3, c3 + 1.0] {
                let curve = benchmark_gain_curve(&cfg, scheme, g).unwrap();
                let text: Vec<String> = curve.iter().map(|v| format!("{v:.3e}")).collect();
                println!("{scheme}: curve at {g}: {}", text.join(" "));
            }
        }
    }

    /// Full-size run used to pick and freeze the learning gains; run with
    /// `cargo test -p pwainv-core -- --ignored full_size_benchmark --nocapture`.
    #[test]
    #[ignore]
    fn full_size_benchmark_probe() {
        let cfg = BenchConfig::default();
        let start = std::time::Instant::now();
        let results = run_benchmark(&cfg).unwrap();
        println!("elapsed: {:?}", start.elapsed());
        println!(
            "mu_tilde {} stable {} unstable {} dependency {:?}",
            results.mu_tilde,
            results.decoupling_stable,
            results.decoupling_unstable,
            results.switch_dependency
        );
        for s in &results.scenarios {
            println!(
                "{:<18} nrmse {:.3e} peak {:.3e} m",
                s.name, s.nrmse, s.peak_error
            );
            for t in &s.trials {
                println!("    trial {} nrmse {:.3e} peak {:.3e}", t.trial, t.nrmse, t.peak_error);
            }
        }
    }

    #[test]
    fn benchmark_is_deterministic_for_a_fixed_seed() {
        let mut cfg = small_config();
        cfg.trials = 2;
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        for (sa, sb) in a.scenarios.iter().zip(&b.scenarios) {
            assert_eq!(sa.nrmse.to_bits(), sb.nrmse.to_bits());
            assert_eq!(sa.final_input, sb.final_input);
        }
    }
}
