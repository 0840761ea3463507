//! Lifted-domain iterative learning control.
//!
//! Signals live in lifted (stacked time-series) form: inputs as
//! `u_0 .. u_{N-mu}`, outputs and references as `y_mu .. y_N`, so the lifted
//! forward map is square. Each trial applies
//!
//! ```text
//! u_{l+1} = E Q (u_l + L_l (r - Q y_l))
//! ```
//!
//! where `Q` is a zero-phase lowpass (one causal Toeplitz pass forward, the
//! same pass reversed), `E` zeroes a fixed number of edge samples, and the
//! learning matrix `L_l` distinguishes the schemes: the derivative of the
//! stable-inverse map at the measured output (Newton-style), the transposed
//! model Jacobian at the current input (steepest descent), or a constant
//! scalar gain.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inversion::InversePwaModel;
use crate::model::PwaModel;
use crate::stable_inversion::{
    stable_inverse_jacobian, stable_invert, Decoupling, StableInversionConfig,
};

/// Which end of the horizon a lifted vector is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Entries are `u_0 .. u_{N-mu}`.
    Input,
    /// Entries are `y_mu .. y_N` (references use this too).
    Output,
}

/// A stacked time-series vector of length `N - mu + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSignal {
    pub values: DVector<f64>,
    pub alignment: Alignment,
}

impl LiftedSignal {
    pub fn input(values: DVector<f64>) -> Self {
        Self {
            values,
            alignment: Alignment::Input,
        }
    }

    pub fn output(values: DVector<f64>) -> Self {
        Self {
            values,
            alignment: Alignment::Output,
        }
    }

    /// Lifted length for a horizon of `n` steps (samples `0..=n`) and global
    /// relative degree `mu`.
    pub fn expected_len(n: usize, mu: usize) -> usize {
        n + 1 - mu
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn check_len(&self, n: usize, mu: usize) -> Result<()> {
        let expected = Self::expected_len(n, mu);
        if self.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "lifted signal length",
                expected,
                actual: self.len(),
            });
        }
        Ok(())
    }
}

/// Zero-phase lowpass `Q` and edge mask `E` acting on lifted vectors.
#[derive(Debug, Clone)]
pub struct FilterPair {
    /// Zero-phase lowpass: the causal pass followed by the reversed pass.
    pub q: DMatrix<f64>,
    /// Diagonal of the edge mask: 0 on the first and last `n_edge` samples,
    /// 1 elsewhere.
    pub e: DVector<f64>,
    /// Single causal pass: lower-triangular Toeplitz of the impulse response.
    pub f: DMatrix<f64>,
    pub n_edge: usize,
}

impl FilterPair {
    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.len() == 0
    }

    pub fn apply_q(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.q * v
    }

    pub fn apply_e(&self, v: &DVector<f64>) -> DVector<f64> {
        v.component_mul(&self.e)
    }
}

/// Impulse response of the lowpass `b z (z + 1) / (z^2 + a1 z + a2)`,
/// normalized to a unit impulse input.
pub fn lowpass_impulse_response(a1: f64, a2: f64, b: f64, len: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(len);
    for k in 0..len {
        let next = match k {
            0 => b,
            1 => b * (1.0 - a1),
            _ => -a1 * h[k - 1] - a2 * h[k - 2],
        };
        h.push(next);
    }
    h
}

/// Lowpass impulse response rescaled to unit DC gain. The trial filter is
/// built from this form: a passband gain below one would bias every learning
/// scheme toward a proportionally distorted reference, so the shape of the
/// loop lowpass is kept but its static gain is pinned to one.
pub fn unit_dc_lowpass_impulse(a1: f64, a2: f64, b: f64, len: usize) -> Vec<f64> {
    let mut h = lowpass_impulse_response(a1, a2, b, len);
    let dc = 2.0 * b / (1.0 + a1 + a2);
    for v in h.iter_mut() {
        *v /= dc;
    }
    h
}

/// Builds the trial filters from a causal impulse response: `F` is its
/// lower-triangular Toeplitz matrix, `Q` applies `F` forward then reversed
/// (exchange-conjugated), and `E` zeroes `n_edge` samples at each end.
pub fn build_filters(impulse: &[f64], n_edge: usize, lifted_len: usize) -> Result<FilterPair> {
    if impulse.len() != lifted_len {
        return Err(Error::DimensionMismatch {
            context: "filter impulse response length",
            expected: lifted_len,
            actual: impulse.len(),
        });
    }
    if 2 * n_edge > lifted_len {
        return Err(Error::DimensionMismatch {
            context: "edge mask width",
            expected: lifted_len / 2,
            actual: n_edge,
        });
    }
    let n = lifted_len;
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            f[(i, j)] = impulse[i - j];
        }
    }
    // Exchange conjugation J F J flips both index orders, turning the causal
    // pass into the anticausal one.
    let mut reversed = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            reversed[(i, j)] = f[(n - 1 - i, n - 1 - j)];
        }
    }
    let q = reversed * &f;
    let mut e = DVector::from_element(n, 1.0);
    for i in 0..n_edge {
        e[i] = 0.0;
        e[n - 1 - i] = 0.0;
    }
    Ok(FilterPair { q, e, f, n_edge })
}

/// Root-mean-square tracking error normalized by the reference peak:
/// `|r - y|_2 / (sqrt(len) |r|_inf)`.
pub fn nrmse(r: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if r.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "nrmse operands",
            expected: r.len(),
            actual: y.len(),
        });
    }
    let peak = r.amax();
    if peak == 0.0 {
        return Err(Error::Numerical {
            context: "nrmse",
            detail: "reference is identically zero, normalization undefined".into(),
        });
    }
    Ok((r - y).norm() / ((r.len() as f64).sqrt() * peak))
}

/// Largest absolute tracking error `|r - y|_inf`.
pub fn peak_error(r: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if r.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "peak error operands",
            expected: r.len(),
            actual: y.len(),
        });
    }
    Ok((r - y).amax())
}

/// One learning update: `E Q (u + L (r - Q y))`. The first and last `n_edge`
/// samples of the result are exactly zero.
pub fn ilc_iterate(
    u: &DVector<f64>,
    y: &DVector<f64>,
    r: &DVector<f64>,
    learning: &DMatrix<f64>,
    filters: &FilterPair,
) -> Result<DVector<f64>> {
    let m = filters.len();
    for (len, context) in [
        (u.len(), "lifted input"),
        (y.len(), "lifted output"),
        (r.len(), "lifted reference"),
        (learning.nrows(), "learning matrix rows"),
        (learning.ncols(), "learning matrix columns"),
    ] {
        if len != m {
            return Err(Error::DimensionMismatch {
                context,
                expected: m,
                actual: len,
            });
        }
    }
    let error = r - filters.apply_q(y);
    let inner = u + learning * error;
    Ok(filters.apply_e(&filters.apply_q(&inner)))
}

/// Newton-style learning matrix: the derivative of the stable-inverse map at
/// the measured output. Inverting `y_measured` fixes the switching sequence;
/// with it frozen the map is affine and the derivative is exact.
pub fn ililc_learning_matrix(
    inverse: &InversePwaModel,
    decoupling: &Decoupling,
    config: &StableInversionConfig,
    y_measured: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let preview: Vec<f64> = y_measured.iter().copied().collect();
    let solution = stable_invert(inverse, decoupling, &preview, config)?;
    stable_inverse_jacobian(inverse, decoupling, &solution.locations)
}

/// Steepest-descent learning matrix: `gain` times the transposed Jacobian of
/// the lifted forward map, taken along the switching sequence that simulating
/// `u_current` produces (and then frozen).
pub fn gradient_learning_matrix(
    model: &PwaModel,
    x0: &DVector<f64>,
    mu_tilde: usize,
    u_current: &DVector<f64>,
    gain: f64,
) -> Result<DMatrix<f64>> {
    let m = u_current.len();
    if m == 0 {
        return Err(Error::DimensionMismatch {
            context: "lifted input",
            expected: 1,
            actual: 0,
        });
    }
    // Lifted length m covers samples u_0..u_{N-mu} with N = m + mu - 1; the
    // last outputs need mu more (irrelevant) inputs to be reachable.
    let n_horizon = m + mu_tilde - 1;
    let mut inputs: Vec<f64> = u_current.iter().copied().collect();
    inputs.resize(n_horizon + 1, 0.0);
    let sim = model.simulate(x0, &inputs)?;
    let locs = &sim.locations;

    let mut jac = DMatrix::zeros(m, m);
    for j in 0..m {
        let mats_j = model.schedule().get(locs[j], j)?;
        if mu_tilde == 0 {
            jac[(j, j)] = mats_j.d;
        }
        // sens = d x_step / d u_j, pushed forward one step at a time.
        let mut sens = mats_j.b.clone();
        for step in j + 1..=n_horizon {
            let mats = model.schedule().get(locs[step], step)?;
            if step >= mu_tilde {
                let i = step - mu_tilde;
                if i < m {
                    jac[(i, j)] = mats.c.dot(&sens);
                }
            }
            if step < n_horizon {
                sens = &mats.a * sens;
            }
        }
    }
    Ok(gain * jac.transpose())
}

/// Constant scalar learning matrix `gain * I`.
pub fn ptype_learning_matrix(gain: f64, size: usize) -> DMatrix<f64> {
    DMatrix::identity(size, size) * gain
}

/// Maps a lifted input trajectory to the measured lifted output it produces.
/// Implementations own their noise; `trial` indexes the draw so reruns are
/// reproducible and distinct trials see fresh noise.
pub trait PlantExecutor {
    fn lifted_len(&self) -> usize;
    fn run(&mut self, u: &DVector<f64>, trial: usize) -> Result<DVector<f64>>;
}

/// Learning-matrix recipe, re-evaluated on every trial from the latest data.
#[derive(Debug, Clone)]
pub enum LearningRule {
    /// Derivative of the stable-inverse map at the measured output.
    IterativeInversion {
        inverse: InversePwaModel,
        decoupling: Decoupling,
        config: StableInversionConfig,
    },
    /// Transposed model Jacobian at the current input, scaled by `gain`.
    Gradient {
        model: PwaModel,
        x0: DVector<f64>,
        mu_tilde: usize,
        gain: f64,
    },
    /// Constant `gain * I`.
    PType { gain: f64 },
}

impl LearningRule {
    pub fn learning_matrix(
        &self,
        u_current: &DVector<f64>,
        y_measured: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        match self {
            LearningRule::IterativeInversion {
                inverse,
                decoupling,
                config,
            } => ililc_learning_matrix(inverse, decoupling, config, y_measured),
            LearningRule::Gradient {
                model,
                x0,
                mu_tilde,
                gain,
            } => gradient_learning_matrix(model, x0, *mu_tilde, u_current, *gain),
            LearningRule::PType { gain } => Ok(ptype_learning_matrix(*gain, u_current.len())),
        }
    }
}

/// Everything one learning experiment needs: the update rule, the trial
/// filters, and the plant the inputs are tried on.
pub struct IlcSession<E> {
    pub rule: LearningRule,
    pub filters: FilterPair,
    pub executor: E,
}

/// One executed trial.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub nrmse: f64,
    pub peak_error: f64,
}

/// Runs `n_trials` trials from a zero initial input (trial 0 measures the
/// plant under feedback alone). Each subsequent input is one learning update
/// on the previous trial's data.
pub fn run_trials<E: PlantExecutor>(
    session: &mut IlcSession<E>,
    r: &DVector<f64>,
    n_trials: usize,
) -> Result<Vec<TrialRecord>> {
    let m = session.executor.lifted_len();
    if r.len() != m {
        return Err(Error::DimensionMismatch {
            context: "lifted reference",
            expected: m,
            actual: r.len(),
        });
    }
    if session.filters.len() != m {
        return Err(Error::DimensionMismatch {
            context: "trial filters",
            expected: m,
            actual: session.filters.len(),
        });
    }
    let mut u = DVector::zeros(m);
    let mut history = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let y = session
            .executor
            .run(&u, trial)
            .map_err(|e| Error::Numerical {
                context: "plant executor",
                detail: format!("trial {trial}: {e}"),
            })?;
        if y.len() != m {
            return Err(Error::DimensionMismatch {
                context: "measured lifted output",
                expected: m,
                actual: y.len(),
            });
        }
        let record = TrialRecord {
            u: u.clone(),
            y: y.clone(),
            nrmse: nrmse(r, &y)?,
            peak_error: peak_error(r, &y)?,
        };
        history.push(record);
        if trial + 1 < n_trials {
            let learning = session.rule.learning_matrix(&u, &y)?;
            u = ilc_iterate(&u, &y, r, &learning, &session.filters)?;
        }
    }
    Ok(history)
}
