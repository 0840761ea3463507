//! Bounded (non-causal) solutions of unstable inverse dynamics.
//!
//! Exact inverses of non-minimum-phase models are unstable: simulating them
//! forward diverges. When a single constant transform `V` block-diagonalizes
//! the state matrices of every inverse location into a stable and an
//! anti-stable part, a bounded solution exists over a finite horizon by
//! integrating the stable part forward from rest and the anti-stable part
//! backward from rest. The switching signal must be recoverable during
//! whichever pass runs first, which splits the construction in two:
//!
//! * switching depends on the stable modes only: forward pass first, which
//!   fixes the location sequence, then the backward pass reuses it;
//! * switching depends on the anti-stable modes only: backward pass first,
//!   solving each step by candidate enumeration over locations and keeping
//!   the candidates whose signature is consistent with the assumed location.

use nalgebra::{Complex, DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::inversion::InversePwaModel;
use crate::model::PwaModel;
use crate::partition::{Partition, Signature};
use crate::schedule::Schedule;
use crate::tol;

/// A constant state transform splitting every location's inverse dynamics
/// into a stable block (first `n_stable` modal coordinates) and an
/// anti-stable block (the rest). `chi = v * x` maps into modal coordinates.
#[derive(Debug, Clone)]
pub struct Decoupling {
    pub v: DMatrix<f64>,
    pub v_inv: DMatrix<f64>,
    pub n_stable: usize,
    pub n_unstable: usize,
    /// Eigenvalues of the anchor state matrix, stable first.
    pub anchor_eigenvalues: Vec<Complex<f64>>,
    /// Worst relative magnitude of the off-diagonal coupling blocks over all
    /// locations and steps.
    pub block_residual: f64,
    /// Smallest distance of any anchor eigenvalue magnitude from 1.
    pub hyperbolicity_margin: f64,
}

/// Which modal half-space the switching hyperplanes read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchDependency {
    StableModes,
    UnstableModes,
    Unsupported,
}

/// Tie-break rule when several locations admit a consistent backward step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionCost {
    /// Smallest jump of the anti-stable state across the step (default).
    #[default]
    StateJump,
    /// Smallest input magnitude; valid only when no stable modes exist,
    /// because the input is unknown until the forward pass otherwise.
    InputMagnitude,
    /// Smallest input increment between consecutive steps; same restriction.
    InputJump,
}

#[derive(Debug, Clone, Default)]
pub struct StableInversionConfig {
    pub selection_cost: SelectionCost,
}

/// Bounded solution of the inverse dynamics over one horizon.
#[derive(Debug, Clone)]
pub struct StableInversionResult {
    /// Reconstructed inputs, one per preview sample.
    pub u: Vec<f64>,
    /// Inverse state trajectory in original coordinates (`preview.len() + 1`).
    pub x: Vec<DVector<f64>>,
    /// Location visited at each step.
    pub locations: Vec<usize>,
    /// Norm of the anti-stable modal state at the first step. Decays with
    /// the lead-in padding; measures the truncated anticipation.
    pub boundary_unstable_norm: f64,
    /// Norm of the stable modal state at the final step. Decays with the
    /// trailing padding; measures the truncated settling.
    pub boundary_stable_norm: f64,
    /// Steps at which more than one location admitted a consistent backward
    /// solution (anti-stable switching only).
    pub ambiguous_steps: Vec<usize>,
    pub dependency: SwitchDependency,
}

/// A reference extended with constant lead-in and trailing segments.
#[derive(Debug, Clone)]
pub struct PaddedSignal {
    pub samples: Vec<f64>,
    pub value: f64,
    pub lead: usize,
    pub trail: usize,
}

fn mat_power(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut acc = DMatrix::identity(n, n);
    for _ in 0..p {
        acc = &acc * m;
    }
    acc
}

/// Basis of the `dim`-dimensional near-kernel of `m`, as matrix columns.
fn kernel_basis(m: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let svd = SVD::new(m.clone(), false, true);
    let v_t = svd.v_t.expect("SVD of a real matrix always yields V^T");
    // Singular values are sorted descending; the kernel directions are the
    // trailing rows of V^T.
    let mut basis = DMatrix::zeros(n, dim);
    for j in 0..dim {
        basis.set_column(j, &v_t.row(n - dim + j).transpose());
    }
    basis
}

struct EigCluster {
    /// Representative eigenvalue (one of a conjugate pair when complex).
    value: Complex<f64>,
    /// Algebraic multiplicity (pair counted once per conjugate member).
    count: usize,
    stable: bool,
}

fn cluster_eigenvalues(eigs: &[Complex<f64>]) -> Result<Vec<EigCluster>> {
    let scale = eigs.iter().map(|e| e.norm()).fold(1.0f64, f64::max);
    let tol = 1e-6 * scale;
    let mut used = vec![false; eigs.len()];
    let mut clusters: Vec<EigCluster> = Vec::new();
    for i in 0..eigs.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let mut members = vec![eigs[i]];
        for (j, flag) in used.iter_mut().enumerate().skip(i + 1) {
            if !*flag && ((eigs[j] - eigs[i]).norm() <= tol || (eigs[j].conj() - eigs[i]).norm() <= tol)
            {
                *flag = true;
                members.push(eigs[j]);
            }
        }
        // Average over the upper half plane so conjugate members reinforce
        // rather than cancel.
        let mean = members
            .iter()
            .map(|e| if e.im < 0.0 { e.conj() } else { *e })
            .sum::<Complex<f64>>()
            / members.len() as f64;
        let complex = mean.im.abs() > tol;
        if complex && members.len() % 2 != 0 {
            return Err(Error::NotDecouplable {
                detail: format!(
                    "complex eigenvalue cluster near {mean} has odd multiplicity {}",
                    members.len()
                ),
            });
        }
        let count = if complex { members.len() / 2 } else { members.len() };
        let value = if complex {
            mean
        } else {
            Complex::new(mean.re, 0.0)
        };
        let magnitude = value.norm();
        if (magnitude - 1.0).abs() < tol::HYPERBOLICITY_MARGIN {
            return Err(Error::NonHyperbolic {
                magnitude,
                margin: tol::HYPERBOLICITY_MARGIN,
            });
        }
        clusters.push(EigCluster {
            value,
            count,
            stable: magnitude < 1.0,
        });
    }
    // Stable clusters first, then deterministic order within each half.
    clusters.sort_by(|a, b| {
        b.stable
            .cmp(&a.stable)
            .then(a.value.norm().partial_cmp(&b.value.norm()).unwrap())
            .then(a.value.re.partial_cmp(&b.value.re).unwrap())
    });
    Ok(clusters)
}

/// Steps at which the linear part of the schedule can change.
fn distinct_steps(schedule: &Schedule) -> Vec<usize> {
    match schedule {
        Schedule::Tabulated { steps } => (0..steps.len()).collect(),
        _ => vec![0],
    }
}

/// Finds a constant transform that block-diagonalizes the state matrices of
/// every location (and step) of `model` into stable and anti-stable parts.
///
/// The transform is built from the generalized eigenspaces of the anchor
/// matrix (location 0 at step 0) and then verified against the whole family:
/// the off-diagonal coupling blocks must vanish to within a relative
/// tolerance, and each diagonal block must stay on its side of the unit
/// circle for every location.
pub fn compute_decoupling(model: &PwaModel) -> Result<Decoupling> {
    let anchor = model.schedule().get(0, 0)?.a.clone();
    let n = anchor.nrows();
    let eigs: Vec<Complex<f64>> = anchor.clone().complex_eigenvalues().iter().copied().collect();
    let clusters = cluster_eigenvalues(&eigs)?;

    let mut stable_cols: Vec<DMatrix<f64>> = Vec::new();
    let mut unstable_cols: Vec<DMatrix<f64>> = Vec::new();
    let mut ordered_eigs: Vec<Complex<f64>> = Vec::new();
    for cluster in &clusters {
        let dim = if cluster.value.im != 0.0 {
            2 * cluster.count
        } else {
            cluster.count
        };
        let m = if cluster.value.im != 0.0 {
            // Real representation of the conjugate pair: ((A - sI)^2 + w^2 I)^m.
            let shifted = &anchor - DMatrix::identity(n, n) * cluster.value.re;
            let quad = &shifted * &shifted + DMatrix::identity(n, n) * (cluster.value.im * cluster.value.im);
            mat_power(&quad, cluster.count)
        } else {
            let shifted = &anchor - DMatrix::identity(n, n) * cluster.value.re;
            mat_power(&shifted, cluster.count)
        };
        let basis = kernel_basis(&m, dim);
        for _ in 0..cluster.count {
            ordered_eigs.push(cluster.value);
            if cluster.value.im != 0.0 {
                ordered_eigs.push(cluster.value.conj());
            }
        }
        if cluster.stable {
            stable_cols.push(basis);
        } else {
            unstable_cols.push(basis);
        }
    }

    let n_stable: usize = stable_cols.iter().map(|b| b.ncols()).sum();
    let n_unstable: usize = unstable_cols.iter().map(|b| b.ncols()).sum();
    if n_stable + n_unstable != n {
        return Err(Error::NotDecouplable {
            detail: format!(
                "generalized eigenspaces span {} of {} dimensions",
                n_stable + n_unstable,
                n
            ),
        });
    }

    let mut t = DMatrix::zeros(n, n);
    let mut col = 0;
    for basis in stable_cols.iter().chain(unstable_cols.iter()) {
        for j in 0..basis.ncols() {
            t.set_column(col, &basis.column(j));
            col += 1;
        }
    }
    let v_inv = t;
    let v = v_inv.clone().try_inverse().ok_or_else(|| Error::NotDecouplable {
        detail: "modal basis is numerically singular".into(),
    })?;
    let cond = v.amax() * v_inv.amax();
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::NotDecouplable {
            detail: format!("modal basis is ill-conditioned (indicator {cond:.3e})"),
        });
    }

    // Verify the transform against every location and (distinct) step.
    let mut block_residual = 0.0f64;
    for k in distinct_steps(model.schedule()) {
        for q in 0..model.n_locations() {
            let a = model.schedule().get(q, k)?.a.clone();
            let at = &v * &a * &v_inv;
            let scale = a.amax().max(1.0);
            if n_stable > 0 && n_unstable > 0 {
                let upper = at.view((0, n_stable), (n_stable, n_unstable)).amax();
                let lower = at.view((n_stable, 0), (n_unstable, n_stable)).amax();
                let res = upper.max(lower) / scale;
                if res > tol::DECOUPLING_REL {
                    return Err(Error::NotDecouplable {
                        detail: format!(
                            "location {q} at step {k} couples the modal blocks (residual {res:.3e})"
                        ),
                    });
                }
                block_residual = block_residual.max(res);
            }
            // Each diagonal block must stay strictly on its side of the unit
            // circle for the split to mean the same thing in every location.
            if n_stable > 0 {
                let bs = at.view((0, 0), (n_stable, n_stable)).into_owned();
                for e in bs.complex_eigenvalues().iter() {
                    let m = e.norm();
                    if m >= 1.0 + tol::HYPERBOLICITY_MARGIN {
                        return Err(Error::NotDecouplable {
                            detail: format!(
                                "location {q} at step {k} has eigenvalue magnitude \
                                 {m:.6} inside the stable block: the anchor's \
                                 stable/anti-stable split is not location-invariant"
                            ),
                        });
                    }
                    if m >= 1.0 - tol::HYPERBOLICITY_MARGIN {
                        return Err(Error::NonHyperbolic {
                            magnitude: m,
                            margin: tol::HYPERBOLICITY_MARGIN,
                        });
                    }
                }
            }
            if n_unstable > 0 {
                let bu = at
                    .view((n_stable, n_stable), (n_unstable, n_unstable))
                    .into_owned();
                for e in bu.complex_eigenvalues().iter() {
                    let m = e.norm();
                    if m <= 1.0 - tol::HYPERBOLICITY_MARGIN {
                        return Err(Error::NotDecouplable {
                            detail: format!(
                                "location {q} at step {k} has eigenvalue magnitude \
                                 {m:.6} inside the anti-stable block: the anchor's \
                                 stable/anti-stable split is not location-invariant"
                            ),
                        });
                    }
                    if m <= 1.0 + tol::HYPERBOLICITY_MARGIN {
                        return Err(Error::NonHyperbolic {
                            magnitude: m,
                            margin: tol::HYPERBOLICITY_MARGIN,
                        });
                    }
                }
            }
        }
    }

    let hyperbolicity_margin = ordered_eigs
        .iter()
        .map(|e| (e.norm() - 1.0).abs())
        .fold(f64::INFINITY, f64::min);

    Ok(Decoupling {
        v,
        v_inv,
        n_stable,
        n_unstable,
        anchor_eigenvalues: ordered_eigs,
        block_residual,
        hyperbolicity_margin,
    })
}

/// Reads which modal block the switching hyperplanes depend on: with
/// `P x = (P v_inv) chi`, the columns of `P v_inv` touching the other block
/// must vanish.
pub fn classify_switching(partition: &Partition, dec: &Decoupling) -> SwitchDependency {
    if partition.n_hyperplanes() == 0 || dec.n_unstable == 0 {
        return SwitchDependency::StableModes;
    }
    if dec.n_stable == 0 {
        return SwitchDependency::UnstableModes;
    }
    let p_modal = partition.p() * &dec.v_inv;
    let scale = p_modal.amax().max(1e-300);
    let stable_part = p_modal.view((0, 0), (p_modal.nrows(), dec.n_stable)).amax();
    let unstable_part = p_modal
        .view((0, dec.n_stable), (p_modal.nrows(), dec.n_unstable))
        .amax();
    if unstable_part <= tol::ASSUMPTION_REL * scale {
        SwitchDependency::StableModes
    } else if stable_part <= tol::ASSUMPTION_REL * scale {
        SwitchDependency::UnstableModes
    } else {
        SwitchDependency::Unsupported
    }
}

/// Input level at which the inverse admits a rest equilibrium at the state
/// origin: minimizes the combined forcing `(Bbar + gain) value + Fbar` of
/// the location containing the origin. For exogenously forced schedules the
/// input and the forcing signal are assumed to carry the same value, which
/// is the case when the signal is the previewed reference itself.
pub fn force_zero_value(inv: &InversePwaModel) -> Result<f64> {
    let (q0, _) = inv
        .model
        .partition()
        .locate(&DVector::zeros(inv.model.n_x()), 0)?;
    let (mut coef, f_const) = match inv.model.schedule() {
        Schedule::ExogenousForced {
            locations,
            input_gain,
            ..
        } => (input_gain[q0].clone(), locations[q0].f.clone()),
        _ => {
            let mats = inv.model.schedule().get(q0, 0)?;
            (DVector::zeros(mats.f.len()), mats.f.clone())
        }
    };
    let base_b = match inv.model.schedule() {
        Schedule::ExogenousForced { locations, .. } => locations[q0].b.clone(),
        _ => inv.model.schedule().get(q0, 0)?.b.clone(),
    };
    coef += base_b;

    let denom = coef.dot(&coef);
    let value = if denom > 0.0 {
        -coef.dot(&f_const) / denom
    } else {
        0.0
    };
    let residual = (&coef * value + &f_const).amax();
    let scale = (coef.amax() * value.abs()).max(f_const.amax()).max(1e-300);
    if residual > tol::PAD_RESIDUAL_REL * scale && residual > 1e-14 {
        return Err(Error::NoForceZeroValue { k: 0 });
    }
    Ok(value)
}

/// Extends a signal with constant lead-in and trailing segments.
pub fn pad_signal(signal: &[f64], lead: usize, trail: usize, value: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(signal.len() + lead + trail);
    out.extend(std::iter::repeat(value).take(lead));
    out.extend_from_slice(signal);
    out.extend(std::iter::repeat(value).take(trail));
    out
}

/// Pads a reference with the force-zeroing rest value of `inv`. Only valid
/// when the inverse forcing does not track an embedded exogenous signal
/// (pad before construction in that case, so the signal is padded too).
pub fn pad_reference(
    inv: &InversePwaModel,
    reference: &[f64],
    lead: usize,
    trail: usize,
) -> Result<PaddedSignal> {
    if matches!(inv.model.schedule(), Schedule::ExogenousForced { .. }) {
        return Err(Error::Numerical {
            context: "reference padding",
            detail: "exogenously forced schedules must be padded before inversion".into(),
        });
    }
    let value = force_zero_value(inv)?;
    Ok(PaddedSignal {
        samples: pad_signal(reference, lead, trail, value),
        value,
        lead,
        trail,
    })
}

/// Samples after which the slowest transient decays below 2 percent, from
/// the anchor eigenvalues (backward decay rate `1/|e|` for anti-stable
/// modes).
pub fn settling_samples(dec: &Decoupling) -> usize {
    let mut rho = 0.0f64;
    for e in &dec.anchor_eigenvalues {
        let m = e.norm();
        let decay = if m < 1.0 { m } else { 1.0 / m };
        rho = rho.max(decay);
    }
    if rho <= 1e-12 {
        return 1;
    }
    let n = (0.02f64.ln() / rho.ln()).ceil();
    (n as usize).clamp(1, 100_000)
}

/// Transformed per-location blocks, cached when the linear parts are
/// time-invariant.
struct ModalBlocks {
    a_ss: DMatrix<f64>,
    a_uu_inv: DMatrix<f64>,
    b_s: DVector<f64>,
    b_u: DVector<f64>,
}

struct ModalView<'a> {
    model: &'a PwaModel,
    dec: &'a Decoupling,
    cache: Vec<ModalBlocks>,
    time_invariant: bool,
}

impl<'a> ModalView<'a> {
    fn new(model: &'a PwaModel, dec: &'a Decoupling) -> Result<Self> {
        let time_invariant = model.schedule().is_time_invariant_linear_part();
        let mut cache = Vec::new();
        if time_invariant {
            for q in 0..model.n_locations() {
                cache.push(Self::blocks_at(model, dec, q, 0)?);
            }
        }
        Ok(Self {
            model,
            dec,
            cache,
            time_invariant,
        })
    }

    fn blocks_at(model: &PwaModel, dec: &Decoupling, q: usize, k: usize) -> Result<ModalBlocks> {
        let (n_s, n_u) = (dec.n_stable, dec.n_unstable);
        let mats = model.schedule().get(q, k)?;
        let at = &dec.v * &mats.a * &dec.v_inv;
        let bt = &dec.v * &mats.b;
        let a_uu = at.view((n_s, n_s), (n_u, n_u)).into_owned();
        let a_uu_inv = if n_u > 0 {
            a_uu.try_inverse().ok_or_else(|| Error::Numerical {
                context: "anti-stable block",
                detail: format!("block of location {q} at step {k} is singular"),
            })?
        } else {
            a_uu
        };
        Ok(ModalBlocks {
            a_ss: at.view((0, 0), (n_s, n_s)).into_owned(),
            a_uu_inv,
            b_s: bt.rows(0, n_s).into_owned(),
            b_u: bt.rows(n_s, n_u).into_owned(),
        })
    }

    fn blocks(&mut self, q: usize, k: usize) -> Result<&ModalBlocks> {
        if self.time_invariant {
            return Ok(&self.cache[q]);
        }
        // Time-varying: recompute (no caching; only used by short tabulated
        // schedules).
        let blocks = Self::blocks_at(self.model, self.dec, q, k)?;
        self.cache.clear();
        self.cache.push(blocks);
        Ok(&self.cache[0])
    }

    /// Modal forcing split `(f_s, f_u)` at `(q, k)`.
    fn forcing(&self, q: usize, k: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let mats = self.model.schedule().get(q, k)?;
        let ft = &self.dec.v * &mats.f;
        Ok((
            ft.rows(0, self.dec.n_stable).into_owned(),
            ft.rows(self.dec.n_stable, self.dec.n_unstable).into_owned(),
        ))
    }
}

fn check_finite(value: f64, context: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical {
            context,
            detail: "trajectory left the representable range".into(),
        })
    }
}

/// Composes original-coordinate states and reads the inputs back out.
fn compose_result(
    inv: &InversePwaModel,
    dec: &Decoupling,
    preview: &[f64],
    chi_s: Vec<DVector<f64>>,
    chi_u: Vec<DVector<f64>>,
    locations: Vec<usize>,
    ambiguous_steps: Vec<usize>,
    dependency: SwitchDependency,
) -> Result<StableInversionResult> {
    let steps = preview.len();
    let mut x = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let mut chi = DVector::zeros(dec.n_stable + dec.n_unstable);
        chi.rows_mut(0, dec.n_stable).copy_from(&chi_s[k]);
        chi.rows_mut(dec.n_stable, dec.n_unstable).copy_from(&chi_u[k]);
        x.push(&dec.v_inv * chi);
    }
    let mut u = Vec::with_capacity(steps);
    for k in 0..steps {
        let mats = inv.model.schedule().get(locations[k], k)?;
        let val = mats.c.dot(&x[k]) + mats.d * preview[k] + mats.g;
        check_finite(val, "input reconstruction")?;
        u.push(val);
    }
    let boundary_unstable_norm = chi_u[0].norm();
    let boundary_stable_norm = chi_s[steps].norm();
    Ok(StableInversionResult {
        u,
        x,
        locations,
        boundary_unstable_norm,
        boundary_stable_norm,
        ambiguous_steps,
        dependency,
    })
}

/// Bounded inversion when the switching depends on the stable modes: the
/// forward pass selects locations as it goes, the backward pass reuses them.
fn invert_stable_switching(
    inv: &InversePwaModel,
    dec: &Decoupling,
    preview: &[f64],
) -> Result<StableInversionResult> {
    let steps = preview.len();
    let partition = inv.model.partition();
    let p_modal = partition.p() * &dec.v_inv;
    let mut view = ModalView::new(&inv.model, dec)?;

    let mut chi_s = vec![DVector::zeros(dec.n_stable); steps + 1];
    let mut locations = Vec::with_capacity(steps);
    for k in 0..steps {
        // Under stable-mode switching the hyperplane values depend only on
        // the stable coordinates, available causally.
        let mut delta: Signature = Vec::with_capacity(partition.n_hyperplanes());
        for i in 0..partition.n_hyperplanes() {
            let mut acc = -partition.w()[i];
            for j in 0..dec.n_stable {
                acc += p_modal[(i, j)] * chi_s[k][j];
            }
            delta.push(u8::from(acc >= 0.0));
        }
        let q = partition.select_location(&delta, k)?;
        locations.push(q);
        let (f_s, _) = view.forcing(q, k)?;
        let blocks = view.blocks(q, k)?;
        chi_s[k + 1] = &blocks.a_ss * &chi_s[k] + &blocks.b_s * preview[k] + f_s;
        check_finite(chi_s[k + 1].amax(), "stable forward pass")?;
    }

    let mut chi_u = vec![DVector::zeros(dec.n_unstable); steps + 1];
    for k in (0..steps).rev() {
        let q = locations[k];
        let (_, f_u) = view.forcing(q, k)?;
        let blocks = view.blocks(q, k)?;
        let rhs = &chi_u[k + 1] - &blocks.b_u * preview[k] - f_u;
        chi_u[k] = &blocks.a_uu_inv * rhs;
        check_finite(chi_u[k].amax(), "anti-stable backward pass")?;
    }

    compose_result(
        inv,
        dec,
        preview,
        chi_s,
        chi_u,
        locations,
        Vec::new(),
        SwitchDependency::StableModes,
    )
}

/// Bounded inversion when the switching depends on the anti-stable modes:
/// each backward step enumerates candidate locations and keeps the ones
/// whose solution lies in their own region; ties are broken by the
/// configured cost.
pub fn stable_invert_unstable_switching(
    inv: &InversePwaModel,
    dec: &Decoupling,
    preview: &[f64],
    config: &StableInversionConfig,
) -> Result<StableInversionResult> {
    if dec.n_stable > 0
        && matches!(
            config.selection_cost,
            SelectionCost::InputMagnitude | SelectionCost::InputJump
        )
    {
        return Err(Error::Numerical {
            context: "candidate selection",
            detail: "input-based costs need the full state during the backward pass, \
                     which requires every mode to be anti-stable"
                .into(),
        });
    }
    let steps = preview.len();
    let partition = inv.model.partition();
    let p_modal = partition.p() * &dec.v_inv;
    let mut view = ModalView::new(&inv.model, dec)?;

    let mut chi_u = vec![DVector::zeros(dec.n_unstable); steps + 1];
    let mut locations = vec![0usize; steps];
    let mut ambiguous_steps = Vec::new();
    let mut next_input: Option<f64> = None;
    for k in (0..steps).rev() {
        let mut best: Option<(usize, DVector<f64>, f64, f64)> = None;
        let mut consistent = 0usize;
        for q in 0..inv.model.n_locations() {
            let (_, f_u) = view.forcing(q, k)?;
            let blocks = view.blocks(q, k)?;
            let rhs = &chi_u[k + 1] - &blocks.b_u * preview[k] - f_u;
            let cand = &blocks.a_uu_inv * rhs;
            // Membership: hyperplane values read the anti-stable modes only.
            let mut delta: Signature = Vec::with_capacity(partition.n_hyperplanes());
            for i in 0..partition.n_hyperplanes() {
                let mut acc = -partition.w()[i];
                for j in 0..dec.n_unstable {
                    acc += p_modal[(i, dec.n_stable + j)] * cand[j];
                }
                delta.push(u8::from(acc >= 0.0));
            }
            if !partition.signatures()[q].iter().any(|s| *s == delta) {
                continue;
            }
            consistent += 1;
            let input = if dec.n_stable == 0 {
                let x_cand = &dec.v_inv * &cand;
                let mats = inv.model.schedule().get(q, k)?;
                Some(mats.c.dot(&x_cand) + mats.d * preview[k] + mats.g)
            } else {
                None
            };
            let cost = match config.selection_cost {
                SelectionCost::StateJump => (&cand - &chi_u[k + 1]).norm(),
                SelectionCost::InputMagnitude => input.unwrap().abs(),
                SelectionCost::InputJump => match next_input {
                    Some(prev) => (input.unwrap() - prev).abs(),
                    None => input.unwrap().abs(),
                },
            };
            if best.as_ref().is_none_or(|b| cost < b.2) {
                best = Some((q, cand, cost, input.unwrap_or(0.0)));
            }
        }
        let (q, cand, _, input) = best.ok_or(Error::EmptySolutionSet { k })?;
        if consistent > 1 {
            ambiguous_steps.push(k);
        }
        check_finite(cand.amax(), "anti-stable backward pass")?;
        chi_u[k] = cand;
        locations[k] = q;
        next_input = Some(input);
    }
    ambiguous_steps.reverse();

    let mut chi_s = vec![DVector::zeros(dec.n_stable); steps + 1];
    for k in 0..steps {
        let q = locations[k];
        let (f_s, _) = view.forcing(q, k)?;
        let blocks = view.blocks(q, k)?;
        chi_s[k + 1] = &blocks.a_ss * &chi_s[k] + &blocks.b_s * preview[k] + f_s;
        check_finite(chi_s[k + 1].amax(), "stable forward pass")?;
    }

    compose_result(
        inv,
        dec,
        preview,
        chi_s,
        chi_u,
        locations,
        ambiguous_steps,
        SwitchDependency::UnstableModes,
    )
}

/// Bounded inversion of an exact inverse over a finite horizon, dispatching
/// on how the switching reads the modal coordinates. `preview[k]` is the
/// inverse input at step `k` (the reference `mu_tilde` steps ahead).
pub fn stable_invert(
    inv: &InversePwaModel,
    dec: &Decoupling,
    preview: &[f64],
    config: &StableInversionConfig,
) -> Result<StableInversionResult> {
    match classify_switching(inv.model.partition(), dec) {
        SwitchDependency::StableModes => invert_stable_switching(inv, dec, preview),
        SwitchDependency::UnstableModes => {
            stable_invert_unstable_switching(inv, dec, preview, config)
        }
        SwitchDependency::Unsupported => Err(Error::AssumptionViolated {
            assumption: "A9",
            detail: "switching hyperplanes mix stable and anti-stable modal coordinates".into(),
        }),
    }
}

/// Exact derivative of the bounded inversion with respect to the preview,
/// holding the location sequence fixed. With locations frozen the two-pass
/// recursion is affine in the preview, so column `j` follows from pushing a
/// unit preview impulse at step `j` forward through the stable block and
/// backward through the anti-stable block, then reading both out through the
/// input map. Entry `(k, j)` is `du_k / d preview_j`.
pub fn stable_inverse_jacobian(
    inv: &InversePwaModel,
    dec: &Decoupling,
    locations: &[usize],
) -> Result<DMatrix<f64>> {
    let steps = locations.len();
    let (n_s, n_u) = (dec.n_stable, dec.n_unstable);
    let mut view = ModalView::new(&inv.model, dec)?;

    // Input read-out per step: u_k = c_k . x_k + d_k preview_k + g_k with
    // x_k = v_inv chi_k, so the modal read-out row is v_inv^T c_k.
    let mut rows_s = Vec::with_capacity(steps);
    let mut rows_u = Vec::with_capacity(steps);
    let mut d = Vec::with_capacity(steps);
    let v_inv_t = dec.v_inv.transpose();
    for k in 0..steps {
        let mats = inv.model.schedule().get(locations[k], k)?;
        let row = &v_inv_t * &mats.c;
        rows_s.push(row.rows(0, n_s).into_owned());
        rows_u.push(row.rows(n_s, n_u).into_owned());
        d.push(mats.d);
    }

    let mut jac = DMatrix::zeros(steps, steps);
    for j in 0..steps {
        jac[(j, j)] += d[j];
        if n_s > 0 {
            // Stable half: the impulse enters at step j+1 and runs forward.
            let mut sens = view.blocks(locations[j], j)?.b_s.clone();
            for k in j + 1..steps {
                jac[(k, j)] += rows_s[k].dot(&sens);
                sens = &view.blocks(locations[k], k)?.a_ss * sens;
            }
        }
        if n_u > 0 {
            // Anti-stable half: the impulse enters at step j and runs backward.
            let blocks = view.blocks(locations[j], j)?;
            let mut sens = -(&blocks.a_uu_inv * &blocks.b_u);
            jac[(j, j)] += rows_u[j].dot(&sens);
            for k in (0..j).rev() {
                sens = &view.blocks(locations[k], k)?.a_uu_inv * sens;
                jac[(k, j)] += rows_u[k].dot(&sens);
            }
        }
    }
    Ok(jac)
}
