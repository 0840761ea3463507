//! Exact inversion of piecewise affine models.
//!
//! For a model with global relative degree `mu` the output `mu` steps ahead
//! is an affine function of the current state and input once the location
//! sequence over the preview window is fixed:
//!
//! ```text
//! y_{k+mu} = Ccal x_k + Dcal u_k + Gcal + sum_s psi_s u_{k+s}
//! ```
//!
//! Solving for `u_k` and substituting back into the state update produces an
//! inverse system that is itself piecewise affine. Three cases have explicit
//! location selectors: direct feedthrough (`mu = 0`), one-step preview with
//! location-invariant output maps (`mu = 1`), and two-step preview with
//! output-based switching (`mu = 2`). Everything else requires enumerating
//! location sequences per step.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{PwaModel, SimResult};
use crate::partition::{Partition, Signature};
use crate::schedule::{LocationMatrices, Schedule};
use crate::tol;

/// Result of the global relative degree search.
#[derive(Debug, Clone)]
pub struct RelativeDegreeReport {
    pub mu_tilde: usize,
    pub anchor_k: usize,
    pub cap: usize,
    /// For each candidate depth `m < mu_tilde`, one location sequence whose
    /// input coefficient vanishes there.
    pub zero_witnesses: Vec<Vec<usize>>,
    /// Smallest input coefficient magnitude over all sequences at depth
    /// `mu_tilde`, and the sequence attaining it.
    pub min_coefficient: f64,
    pub min_sequence: Vec<usize>,
}

/// Affine preview coefficients for one fixed location sequence.
#[derive(Debug, Clone)]
pub struct PreviewCoefficients {
    /// Row vector multiplying `x_k` (stored as a column).
    pub c: DVector<f64>,
    /// Coefficient of `u_k`.
    pub d: f64,
    /// Constant term.
    pub g: f64,
    /// `psi[s-1]` multiplies `u_{k+s}` for `s = 1..mu`.
    pub psi: Vec<f64>,
}

/// An exact inverse in piecewise affine form.
///
/// The inverse consumes the preview `y_{k+mu_tilde}` as its input at step
/// `k` and emits `u_k` as its output. Its state equals the forward state, so
/// running it from the forward initial condition reproduces the forward
/// trajectory.
#[derive(Debug, Clone)]
pub struct InversePwaModel {
    /// The inverse dynamics as a plain model (input `y_{k+mu}`, output `u`).
    pub model: PwaModel,
    pub mu_tilde: usize,
    /// The forward model this inverse was derived from.
    pub source: PwaModel,
    /// For two-step preview the inverse locations are pairs: entry `i` maps
    /// refined location `i` to `(q_k, q_{k+1})` of the source model.
    pub location_pairs: Option<Vec<(usize, usize)>>,
}

impl InversePwaModel {
    /// Runs the inverse over the previewed output sequence
    /// (`preview[j] = y_{j + mu_tilde}`) from the forward initial state.
    /// The returned `y` field holds the reconstructed inputs.
    pub fn run(&self, x0: &DVector<f64>, preview: &[f64]) -> Result<SimResult> {
        self.model.simulate(x0, preview)
    }

    /// Source location of an inverse location (identity except for pairs).
    pub fn source_location(&self, q: usize) -> usize {
        match &self.location_pairs {
            Some(pairs) => pairs[q].0,
            None => q,
        }
    }
}

/// Per-assumption verdict with numeric evidence.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub holds: bool,
    pub residual: f64,
    pub detail: String,
}

impl AssumptionCheck {
    fn pass(residual: f64, detail: impl Into<String>) -> Self {
        Self {
            holds: true,
            residual,
            detail: detail.into(),
        }
    }

    fn fail(residual: f64, detail: impl Into<String>) -> Self {
        Self {
            holds: false,
            residual,
            detail: detail.into(),
        }
    }
}

/// Structural assumption survey of a model (A2 through A6).
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// A2: single input, single output.
    pub siso: AssumptionCheck,
    /// A3: switching driven by the state alone.
    pub state_based_switching: AssumptionCheck,
    /// Component relative degree per location at the anchor step.
    pub component_degrees: Vec<usize>,
    /// A4: all component degrees agree.
    pub equal_component_degrees: AssumptionCheck,
    /// A5: output maps C, D, G do not depend on the location.
    pub location_invariant_output: AssumptionCheck,
    /// A6: switching is a function of the output, P = P_o C and
    /// w = w_o - P_o G with time-invariant C and G.
    pub output_based_switching: AssumptionCheck,
    pub p_output: Option<Vec<f64>>,
    pub w_output: Option<Vec<f64>>,
    /// Global relative degree if the search succeeded within the cap.
    pub global_degree: Option<usize>,
}

fn norm_scale(m: &LocationMatrices) -> f64 {
    1.0f64
        .max(m.a.amax())
        .max(m.b.amax())
        .max(m.c.amax())
        .max(m.d.abs())
}

/// Relative degree of a single location: smallest `m` such that the output
/// at `k + m` within that location explicitly contains `u_k`.
pub fn component_relative_degree(
    model: &PwaModel,
    q: usize,
    anchor_k: usize,
    cap: usize,
) -> Result<usize> {
    let m0 = model.schedule().get(q, anchor_k)?;
    let scale = norm_scale(&m0);
    if m0.d.abs() > tol::DEGREE_COEFFICIENT_REL * scale {
        return Ok(0);
    }
    // row_m = C_{k+m} A_{k+m-1} ... A_{k+1}, stored as a column.
    let mut row = model.schedule().get(q, anchor_k + 1)?.c.clone();
    for m in 1..=cap {
        let b = model.schedule().get(q, anchor_k)?.b.clone();
        let coef = row.dot(&b);
        let factor_scale = row.amax().max(1e-300) * b.amax().max(1e-300);
        if coef.abs() > tol::DEGREE_COEFFICIENT_REL * factor_scale.max(1.0) {
            return Ok(m);
        }
        if m < cap {
            let a = model.schedule().get(q, anchor_k + m)?.a.clone();
            let c_next = model.schedule().get(q, anchor_k + m + 1)?.c.clone();
            // Advance the product one step: new row = C_{k+m+1} A_{k+m} ... A_{k+1}.
            row = advance_row(&c_next, &a, anchor_k, m, model, q)?;
        }
    }
    Err(Error::DegreeExceedsCap { cap })
}

/// Recomputes `C_{k+m+1} A_{k+m} ... A_{k+1}` from scratch. Products are
/// short (at most the degree cap), so clarity beats caching.
fn advance_row(
    c_top: &DVector<f64>,
    _a: &DMatrix<f64>,
    anchor_k: usize,
    m: usize,
    model: &PwaModel,
    q: usize,
) -> Result<DVector<f64>> {
    let mut row = c_top.clone();
    for j in (1..=m).rev() {
        let a_j = model.schedule().get(q, anchor_k + j)?;
        row = a_j.a.transpose() * row;
    }
    Ok(row)
}

/// Input coefficient of `y_{k+m}` for one location sequence
/// `seq = (q_k, ..., q_{k+m})`, together with the norm product of its
/// factors (for a scale-aware zero test).
fn sequence_coefficient(model: &PwaModel, k: usize, seq: &[usize]) -> Result<(f64, f64)> {
    let m = seq.len() - 1;
    if m == 0 {
        let mats = model.schedule().get(seq[0], k)?;
        return Ok((mats.d, norm_scale(&mats)));
    }
    let mut row = model.schedule().get(seq[m], k + m)?.c.clone();
    let mut scale = row.amax();
    for j in (1..m).rev() {
        let a = model.schedule().get(seq[j], k + j)?;
        scale *= a.a.amax().max(1e-300);
        row = a.a.transpose() * row;
    }
    let b = model.schedule().get(seq[0], k)?.b.clone();
    scale *= b.amax().max(1e-300);
    Ok((row.dot(&b), scale.max(1.0)))
}

fn for_each_sequence(n_q: usize, len: usize, mut f: impl FnMut(&[usize]) -> Result<bool>) -> Result<bool> {
    let mut seq = vec![0usize; len];
    loop {
        if !f(&seq)? {
            return Ok(false);
        }
        // Odometer increment.
        let mut i = 0;
        loop {
            if i == len {
                return Ok(true);
            }
            seq[i] += 1;
            if seq[i] < n_q {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
    }
}

/// Global relative degree: the smallest preview depth at which the input
/// coefficient is nonzero for *every* location sequence over the window.
///
/// Checks A4 (equal component degrees) first; for schedules with
/// time-varying linear parts, the search is repeated at the horizon midpoint
/// and end and must agree.
pub fn global_relative_degree(
    model: &PwaModel,
    anchor_k: usize,
    cap: usize,
) -> Result<RelativeDegreeReport> {
    let report = global_degree_at(model, anchor_k, cap)?;
    if !model.schedule().is_time_invariant_linear_part() {
        if let Some(h) = model.horizon() {
            let last = h.saturating_sub(cap + 1);
            for probe in [last / 2, last] {
                if probe == anchor_k {
                    continue;
                }
                let other = global_degree_at(model, probe, cap)?;
                if other.mu_tilde != report.mu_tilde {
                    return Err(Error::AssumptionViolated {
                        assumption: "A4",
                        detail: format!(
                            "relative degree varies along the horizon: {} at step {}, {} at step {}",
                            report.mu_tilde, anchor_k, other.mu_tilde, probe
                        ),
                    });
                }
            }
        }
    }
    Ok(report)
}

fn global_degree_at(model: &PwaModel, anchor_k: usize, cap: usize) -> Result<RelativeDegreeReport> {
    let n_q = model.n_locations();
    let mut degrees = Vec::with_capacity(n_q);
    for q in 0..n_q {
        degrees.push(component_relative_degree(model, q, anchor_k, cap)?);
    }
    let mu_c = degrees[0];
    if degrees.iter().any(|&d| d != mu_c) {
        return Err(Error::AssumptionViolated {
            assumption: "A4",
            detail: format!("component relative degrees differ across locations: {degrees:?}"),
        });
    }

    // Depths below the common component degree vanish along any constant
    // location sequence.
    let mut zero_witnesses: Vec<Vec<usize>> = (0..mu_c).map(|m| vec![0; m + 1]).collect();

    for m in mu_c..=cap {
        let mut min_coef = f64::INFINITY;
        let mut min_seq = Vec::new();
        let mut witness: Option<Vec<usize>> = None;
        for_each_sequence(n_q, m + 1, |seq| {
            let (coef, scale) = sequence_coefficient(model, anchor_k, seq)?;
            if coef.abs() <= tol::DEGREE_COEFFICIENT_REL * scale {
                witness = Some(seq.to_vec());
                return Ok(false);
            }
            if coef.abs() < min_coef {
                min_coef = coef.abs();
                min_seq = seq.to_vec();
            }
            Ok(true)
        })?;
        match witness {
            Some(w) => zero_witnesses.push(w),
            None => {
                return Ok(RelativeDegreeReport {
                    mu_tilde: m,
                    anchor_k,
                    cap,
                    zero_witnesses,
                    min_coefficient: min_coef,
                    min_sequence: min_seq,
                });
            }
        }
    }
    Err(Error::DegreeExceedsCap { cap })
}

/// Expands the preview `y_{k+mu}` for the fixed location sequence
/// `seq = (q_k, ..., q_{k+mu})` into its affine coefficients.
pub fn preview_coefficients(
    model: &PwaModel,
    k: usize,
    seq: &[usize],
) -> Result<PreviewCoefficients> {
    assert!(!seq.is_empty(), "sequence must cover at least step k");
    let mu = seq.len() - 1;
    if mu == 0 {
        let m = model.schedule().get(seq[0], k)?;
        return Ok(PreviewCoefficients {
            c: m.c.clone(),
            d: m.d,
            g: m.g,
            psi: Vec::new(),
        });
    }

    // rows[s] = C_{k+mu} A_{k+mu-1} ... A_{k+s} for s = 1..=mu (rows[mu] = C).
    let top = model.schedule().get(seq[mu], k + mu)?;
    let mut rows: Vec<DVector<f64>> = vec![DVector::zeros(0); mu + 1];
    rows[mu] = top.c.clone();
    for s in (1..mu).rev() {
        let a = model.schedule().get(seq[s], k + s)?;
        rows[s] = a.a.transpose() * &rows[s + 1];
    }

    let first = model.schedule().get(seq[0], k)?;
    let c = first.a.transpose() * &rows[1];
    let d = rows[1].dot(&first.b);
    let mut g = top.g;
    g += rows[1].dot(&first.f);
    let mut psi = Vec::with_capacity(mu.saturating_sub(1));
    for s in 1..mu {
        let mats = model.schedule().get(seq[s], k + s)?;
        g += rows[s + 1].dot(&mats.f);
        psi.push(rows[s + 1].dot(&mats.b));
    }
    Ok(PreviewCoefficients { c, d, g, psi })
}

/// The shared output maps `(C, D, G)` required by A5, raising
/// `AssumptionViolated` if any location disagrees. For time-varying
/// schedules, invariance is checked at sampled steps.
fn shared_output_maps(model: &PwaModel, k: usize) -> Result<(DVector<f64>, f64, f64)> {
    let base = model.schedule().get(0, k)?.into_owned();
    let scale = norm_scale(&base).max(base.g.abs());
    for q in 1..model.n_locations() {
        let m = model.schedule().get(q, k)?;
        let res = (&m.c - &base.c).amax().max((m.d - base.d).abs()).max((m.g - base.g).abs());
        if res > tol::ASSUMPTION_REL * scale {
            return Err(Error::AssumptionViolated {
                assumption: "A5",
                detail: format!(
                    "output maps differ between locations 0 and {q} (residual {res:.3e})"
                ),
            });
        }
    }
    Ok((base.c, base.d, base.g))
}

fn a5_residual(model: &PwaModel, k: usize) -> Result<f64> {
    let base = model.schedule().get(0, k)?.clone();
    let scale = norm_scale(&base).max(base.g.abs());
    let mut worst = 0.0f64;
    for q in 1..model.n_locations() {
        let m = model.schedule().get(q, k)?;
        let res = (&m.c - &base.c).amax().max((m.d - base.d).abs()).max((m.g - base.g).abs());
        worst = worst.max(res / scale);
    }
    Ok(worst)
}

/// Factorizes the switching through the output: `P = P_o C`,
/// `w = w_o - P_o G`. Returns `(P_o, w_o, residual)`.
fn output_switching_factor(
    partition: &Partition,
    c: &DVector<f64>,
    g: f64,
) -> (DVector<f64>, DVector<f64>, f64) {
    let n_p = partition.n_hyperplanes();
    let cc = c.dot(c);
    let mut p_o = DVector::zeros(n_p);
    let mut residual = 0.0f64;
    for i in 0..n_p {
        let row = partition.p().row(i).transpose();
        let coef = if cc > 0.0 { row.dot(c) / cc } else { 0.0 };
        p_o[i] = coef;
        let res = (&row - c * coef).amax();
        let scale = row.amax().max(1e-300);
        residual = residual.max(res / scale);
    }
    let w_o = partition.w() + &p_o * g;
    (p_o, w_o, residual)
}

/// Surveys assumptions A2 through A6 at the anchor step.
pub fn check_assumptions(model: &PwaModel, anchor_k: usize) -> AssumptionReport {
    let siso = AssumptionCheck::pass(0.0, "scalar input and output by construction");
    let state_based_switching = AssumptionCheck::pass(
        0.0,
        "signatures are functions of the state alone by construction",
    );

    let cap = tol::DEGREE_CAP;
    let mut component_degrees = Vec::new();
    for q in 0..model.n_locations() {
        match component_relative_degree(model, q, anchor_k, cap) {
            Ok(d) => component_degrees.push(d),
            Err(_) => {
                component_degrees.clear();
                break;
            }
        }
    }
    let equal_component_degrees = if component_degrees.is_empty() {
        AssumptionCheck::fail(f64::NAN, "component degree search exceeded the cap")
    } else if component_degrees.iter().all(|&d| d == component_degrees[0]) {
        AssumptionCheck::pass(0.0, format!("all locations have degree {}", component_degrees[0]))
    } else {
        AssumptionCheck::fail(f64::NAN, format!("degrees differ: {component_degrees:?}"))
    };

    let location_invariant_output = match a5_residual(model, anchor_k) {
        Ok(res) if res <= tol::ASSUMPTION_REL => {
            AssumptionCheck::pass(res, "C, D, G agree across locations")
        }
        Ok(res) => AssumptionCheck::fail(res, "output maps differ across locations"),
        Err(e) => AssumptionCheck::fail(f64::NAN, e.to_string()),
    };

    let (output_based_switching, p_output, w_output) = match shared_output_maps(model, anchor_k) {
        Ok((c, _, g)) => {
            let (p_o, w_o, res) = output_switching_factor(model.partition(), &c, g);
            let time_ok = model.schedule().is_time_invariant_linear_part();
            if res <= tol::ASSUMPTION_REL && time_ok {
                (
                    AssumptionCheck::pass(res, "P factors through the output map"),
                    Some(p_o.iter().copied().collect()),
                    Some(w_o.iter().copied().collect()),
                )
            } else if !time_ok {
                (
                    AssumptionCheck::fail(res, "output maps are time-varying"),
                    None,
                    None,
                )
            } else {
                (
                    AssumptionCheck::fail(res, "P has components outside the output map"),
                    None,
                    None,
                )
            }
        }
        Err(e) => (AssumptionCheck::fail(f64::NAN, e.to_string()), None, None),
    };

    let global_degree = global_relative_degree(model, anchor_k, cap)
        .ok()
        .map(|r| r.mu_tilde);

    AssumptionReport {
        siso,
        state_based_switching,
        component_degrees,
        equal_component_degrees,
        location_invariant_output,
        output_based_switching,
        p_output,
        w_output,
        global_degree,
    }
}

fn require_degree(model: &PwaModel, required: usize) -> Result<()> {
    let report = global_relative_degree(model, 0, tol::DEGREE_CAP)?;
    if report.mu_tilde != required {
        return Err(Error::WrongDegree {
            required,
            actual: report.mu_tilde,
        });
    }
    Ok(())
}

/// Direct-feedthrough inverse (`mu = 0`): swaps the roles of input and
/// output per location,
/// `Dbar = D^{-1}`, `Cbar = -Dbar C`, `Gbar = -Dbar G`,
/// `Abar = A + B Cbar`, `Bbar = B Dbar`, `Fbar = F + B Gbar`.
pub fn invert_rd0(model: &PwaModel) -> Result<InversePwaModel> {
    require_degree(model, 0)?;
    let transform = |m: &LocationMatrices| -> LocationMatrices {
        let dbar = 1.0 / m.d;
        let cbar = &m.c * (-dbar);
        let gbar = -dbar * m.g;
        LocationMatrices {
            a: &m.a + &m.b * cbar.transpose(),
            b: &m.b * dbar,
            f: &m.f + &m.b * gbar,
            c: cbar,
            d: dbar,
            g: gbar,
        }
    };
    let schedule = match model.schedule() {
        Schedule::Constant { locations } => Schedule::Constant {
            locations: locations.iter().map(transform).collect(),
        },
        Schedule::Tabulated { steps } => Schedule::Tabulated {
            steps: steps
                .iter()
                .map(|step| step.iter().map(transform).collect())
                .collect(),
        },
        Schedule::ExogenousForced {
            locations,
            input_gain,
            output_gain,
            signal,
        } => {
            // The affine channels transform linearly; apply the same map to
            // the base offsets and to the signal-proportional gains.
            let base: Vec<LocationMatrices> = locations.iter().map(transform).collect();
            let mut in_gain = Vec::with_capacity(locations.len());
            let mut out_gain = Vec::with_capacity(locations.len());
            for (q, m) in locations.iter().enumerate() {
                let dbar = 1.0 / m.d;
                let ggain = -dbar * output_gain[q];
                in_gain.push(&input_gain[q] + &m.b * ggain);
                out_gain.push(ggain);
            }
            Schedule::ExogenousForced {
                locations: base,
                input_gain: in_gain,
                output_gain: out_gain,
                signal: signal.clone(),
            }
        }
    };
    let inverse = PwaModel::new(model.partition().clone(), schedule)?;
    Ok(InversePwaModel {
        model: inverse,
        mu_tilde: 0,
        source: model.clone(),
        location_pairs: None,
    })
}

/// One-step-preview inverse (`mu = 1`, needs A5):
/// `Dbar_k = (C_{k+1} B_k)^{-1}`, `Cbar_k = -Dbar_k C_{k+1} A_k`,
/// `Gbar_k = -Dbar_k (C_{k+1} F_k + G_{k+1})`, and the structural updates
/// `Abar = A + B Cbar`, `Bbar = B Dbar`, `Fbar = F + B Gbar`.
/// The inverse input at step `k` is `y_{k+1}`.
pub fn invert_rd1(model: &PwaModel) -> Result<InversePwaModel> {
    shared_output_maps(model, 0)?;
    require_degree(model, 1)?;

    let transform = |m: &LocationMatrices, c_next: &DVector<f64>, g_next: f64| {
        let dbar = 1.0 / c_next.dot(&m.b);
        let cbar = m.a.transpose() * c_next * (-dbar);
        let gbar = -dbar * (c_next.dot(&m.f) + g_next);
        LocationMatrices {
            a: &m.a + &m.b * cbar.transpose(),
            b: &m.b * dbar,
            f: &m.f + &m.b * gbar,
            c: cbar,
            d: dbar,
            g: gbar,
        }
    };

    let schedule = match model.schedule() {
        Schedule::Constant { locations } => {
            let c = locations[0].c.clone();
            let g = locations[0].g;
            Schedule::Constant {
                locations: locations.iter().map(|m| transform(m, &c, g)).collect(),
            }
        }
        Schedule::ExogenousForced {
            locations,
            input_gain,
            output_gain,
            signal,
        } if output_gain.iter().all(|&g| g == 0.0) => {
            let c = locations[0].c.clone();
            let g = locations[0].g;
            let base: Vec<LocationMatrices> =
                locations.iter().map(|m| transform(m, &c, g)).collect();
            let mut in_gain = Vec::with_capacity(locations.len());
            let mut out_gain = Vec::with_capacity(locations.len());
            for (q, m) in locations.iter().enumerate() {
                let dbar = 1.0 / c.dot(&m.b);
                // The forcing share proportional to signal[k] maps through
                // the same affine transform as the constant forcing.
                let ggain = -dbar * c.dot(&input_gain[q]);
                in_gain.push(&input_gain[q] + &m.b * ggain);
                out_gain.push(ggain);
            }
            if signal.is_empty() {
                return Err(Error::HorizonOverflow { k: 0, horizon: 0 });
            }
            Schedule::ExogenousForced {
                locations: base,
                input_gain: in_gain,
                output_gain: out_gain,
                signal: signal[..signal.len() - 1].to_vec(),
            }
        }
        other => {
            // Generic time-varying case: tabulate step by step.
            let h = other.horizon().ok_or(Error::Numerical {
                context: "one-step inverse",
                detail: "unbounded non-constant schedule".into(),
            })?;
            if h < 2 {
                return Err(Error::HorizonOverflow { k: 1, horizon: h });
            }
            let mut steps = Vec::with_capacity(h - 1);
            for k in 0..h - 1 {
                shared_output_maps(model, k + 1)?;
                let next = model.schedule().get(0, k + 1)?;
                let (c_next, g_next) = (next.c.clone(), next.g);
                let mut row = Vec::with_capacity(model.n_locations());
                for q in 0..model.n_locations() {
                    let m = model.schedule().get(q, k)?;
                    row.push(transform(&m, &c_next, g_next));
                }
                steps.push(row);
            }
            Schedule::Tabulated { steps }
        }
    };
    let inverse = PwaModel::new(model.partition().clone(), schedule)?;
    Ok(InversePwaModel {
        model: inverse,
        mu_tilde: 1,
        source: model.clone(),
        location_pairs: None,
    })
}

/// Two-step-preview inverse (`mu = 2`, needs A5 and A6, time-invariant
/// matrices). The location one step ahead is an explicit affine test on the
/// current state because `C B_q = 0` removes the input from the preview of
/// the switching signal:
///
/// ```text
/// delta_{k+1} = H(P_o C (A_q x_k + F_q) - w_o + P_o G)
/// ```
///
/// The inverse is piecewise affine over a refined partition whose locations
/// are pairs `(q_k, q_{k+1})` and whose extra hyperplanes encode the test
/// above for every source location.
pub fn invert_rd2(model: &PwaModel) -> Result<InversePwaModel> {
    let (c, _, g) = shared_output_maps(model, 0)?;
    if !matches!(model.schedule(), Schedule::Constant { .. }) {
        return Err(Error::AssumptionViolated {
            assumption: "A6",
            detail: "two-step inversion requires time-invariant matrices".into(),
        });
    }
    require_degree(model, 2)?;

    let partition = model.partition();
    let (p_o, w_o, res) = output_switching_factor(partition, &c, g);
    if res > tol::ASSUMPTION_REL {
        return Err(Error::AssumptionViolated {
            assumption: "A6",
            detail: format!("P does not factor through the output map (residual {res:.3e})"),
        });
    }

    let n_q = model.n_locations();
    let n_p = partition.n_hyperplanes();
    let n_x = model.n_x();

    // Refined hyperplanes: the original block, then per source location q the
    // rows P_o C A_q with offsets w_o - P_o (C F_q + G).
    let mut p_ref = DMatrix::zeros(n_p * (n_q + 1), n_x);
    let mut w_ref = DVector::zeros(n_p * (n_q + 1));
    p_ref.view_mut((0, 0), (n_p, n_x)).copy_from(partition.p());
    w_ref.rows_mut(0, n_p).copy_from(partition.w());
    for q in 0..n_q {
        let mats = model.schedule().get(q, 0)?;
        let ca = mats.a.transpose() * &c; // row C A_q as a column
        let offset = &w_o - &p_o * (c.dot(&mats.f) + g);
        for i in 0..n_p {
            for j in 0..n_x {
                p_ref[(n_p * (q + 1) + i, j)] = p_o[i] * ca[j];
            }
            w_ref[n_p * (q + 1) + i] = offset[i];
        }
    }

    // Signature sets per pair (q, p): base block in the q set, block q in the
    // p set, all other blocks free.
    let free_blocks = n_q - 1;
    let free_combos = 1usize << (free_blocks * n_p);
    let mut pair_sets: Vec<Vec<Signature>> = Vec::with_capacity(n_q * n_q);
    let mut pairs = Vec::with_capacity(n_q * n_q);
    let mut total = 0usize;
    for q in 0..n_q {
        for p in 0..n_q {
            let mut set = Vec::new();
            for base_sig in &partition.signatures()[q] {
                for next_sig in &partition.signatures()[p] {
                    for combo in 0..free_combos {
                        let mut sig = vec![0u8; n_p * (n_q + 1)];
                        sig[..n_p].copy_from_slice(base_sig);
                        sig[n_p * (q + 1)..n_p * (q + 2)].copy_from_slice(next_sig);
                        let mut bit = 0;
                        for block in 0..n_q {
                            if block == q {
                                continue;
                            }
                            for i in 0..n_p {
                                sig[n_p * (block + 1) + i] = ((combo >> bit) & 1) as u8;
                                bit += 1;
                            }
                        }
                        set.push(sig);
                    }
                }
            }
            total += set.len();
            if total > 4096 {
                return Err(Error::Numerical {
                    context: "two-step inverse partition",
                    detail: "refined signature enumeration exceeds 4096 entries".into(),
                });
            }
            pair_sets.push(set);
            pairs.push((q, p));
        }
    }
    let refined = Partition::new(p_ref, w_ref, pair_sets)?;

    let mut locations = Vec::with_capacity(n_q * n_q);
    for &(q, p) in &pairs {
        let mq = model.schedule().get(q, 0)?.clone();
        let mp = model.schedule().get(p, 0)?.clone();
        let ca_p = mp.a.transpose() * &c; // C A_p
        let dbar = 1.0 / ca_p.dot(&mq.b); // (C A_p B_q)^{-1}
        let cbar = mq.a.transpose() * &ca_p * (-dbar);
        let gbar = -dbar * (ca_p.dot(&mq.f) + c.dot(&mp.f) + g);
        locations.push(LocationMatrices {
            a: &mq.a + &mq.b * cbar.transpose(),
            b: &mq.b * dbar,
            f: &mq.f + &mq.b * gbar,
            c: cbar,
            d: dbar,
            g: gbar,
        });
    }

    let inverse = PwaModel::new(refined, Schedule::Constant { locations })?;
    Ok(InversePwaModel {
        model: inverse,
        mu_tilde: 2,
        source: model.clone(),
        location_pairs: Some(pairs),
    })
}

/// All inputs at step `k` that reach `y_{k+mu} = y_target` consistently: for
/// each assumed location sequence over the preview window the affine preview
/// equation is solved for `u_k`, then the sequence is validated by
/// re-simulating with the candidate input and the provided future inputs.
/// Distinct consistent inputs are returned sorted; an empty set is an error.
pub fn enumerate_implicit_solutions(
    model: &PwaModel,
    k: usize,
    x: &DVector<f64>,
    y_target: f64,
    future_u: &[f64],
) -> Result<Vec<f64>> {
    let report = global_relative_degree(model, k, tol::DEGREE_CAP)?;
    let mu = report.mu_tilde;
    if mu == 0 {
        return Err(Error::WrongDegree {
            required: 1,
            actual: 0,
        });
    }
    if future_u.len() + 1 < mu {
        return Err(Error::DimensionMismatch {
            context: "future inputs",
            expected: mu - 1,
            actual: future_u.len(),
        });
    }

    let n_q = model.n_locations();
    let (q0, _) = model.partition().locate(x, k)?;
    let mut solutions: Vec<f64> = Vec::new();

    for_each_sequence(n_q, mu, |tail| {
        let mut seq = Vec::with_capacity(mu + 1);
        seq.push(q0);
        seq.extend_from_slice(tail);
        let coeffs = preview_coefficients(model, k, &seq)?;
        if coeffs.d == 0.0 {
            return Ok(true);
        }
        let mut rhs = y_target - coeffs.c.dot(x) - coeffs.g;
        for (s, &psi) in coeffs.psi.iter().enumerate() {
            rhs -= psi * future_u[s];
        }
        let u = rhs / coeffs.d;

        // Validate: simulating with this input must visit the assumed
        // locations and land on the target.
        let mut inputs = Vec::with_capacity(mu);
        inputs.push(u);
        inputs.extend_from_slice(&future_u[..mu - 1]);
        let sim = model.simulate(x, &inputs)?;
        let mut consistent = true;
        for step in 1..mu {
            if sim.locations[step] != seq[step] {
                consistent = false;
                break;
            }
        }
        if consistent {
            let (q_final, _) = model.partition().locate(&sim.x[mu], k + mu)?;
            consistent = q_final == seq[mu];
        }
        if consistent {
            let (y, _) = model.output(k + mu, &sim.x[mu], 0.0)?;
            let scale = y_target.abs().max(1.0);
            if (y - y_target).abs() > tol::IMPLICIT_SOLVE_REL * scale {
                consistent = false;
            }
        }
        if consistent {
            let duplicate = solutions
                .iter()
                .any(|&s| (s - u).abs() <= 1e-9 * s.abs().max(1.0));
            if !duplicate {
                solutions.push(u);
            }
        }
        Ok(true)
    })?;

    if solutions.is_empty() {
        return Err(Error::EmptySolutionSet { k });
    }
    solutions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(solutions)
}

/// Convenience accessor used by tests and the stable inversion layer: the
/// inverse matrices of inverse-location `q` at step `k`.
pub fn inverse_matrices<'a>(
    inv: &'a InversePwaModel,
    q: usize,
    k: usize,
) -> Result<Cow<'a, LocationMatrices>> {
    inv.model.schedule().get(q, k)
}
