//! Deterministic fixture models and randomized model families.
//!
//! These are used throughout the test suites and by the acceptance tests, and
//! are exported so downstream crates can exercise the same cases. Everything
//! here is constructed so that the relevant structural requirements hold
//! exactly (by construction, not by tolerance).

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::model::PwaModel;
use crate::partition::{Partition, Signature};
use crate::poly::real_coefficients_from_roots;
use crate::schedule::{LocationMatrices, Schedule};

/// Two-location model for which two different inputs reach the same output
/// two steps ahead, each consistent with the switching it induces.
///
/// Dynamics: `A_0 = [0 1; 0 0]`, `A_1 = [0 2; 0 0]`, shared `B = [0; 1]`,
/// `C = [1 0]`, switching on `H(x_1 - 1.5)`: signature `[1]` selects the
/// first location, `[0]` the second. Both locations have component relative
/// degree 2, and the preview coefficient depends on the location entered at
/// `k + 1`, which itself depends on the applied input.
pub fn ambiguous_preview_model() -> PwaModel {
    let b = DVector::from_row_slice(&[0.0, 1.0]);
    let c = DVector::from_row_slice(&[1.0, 0.0]);
    let loc = |a01: f64| {
        LocationMatrices::linear(
            DMatrix::from_row_slice(2, 2, &[0.0, a01, 0.0, 0.0]),
            b.clone(),
            c.clone(),
            0.0,
        )
        .unwrap()
    };
    let partition = Partition::new(
        DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        DVector::from_row_slice(&[1.5]),
        vec![vec![vec![1]], vec![vec![0]]],
    )
    .unwrap();
    PwaModel::new(
        partition,
        Schedule::Constant {
            locations: vec![loc(1.0), loc(2.0)],
        },
    )
    .unwrap()
}

/// Single-location chain with relative degree 2 (`C B = 0`, `C A B = 1`).
pub fn double_integrator_chain() -> PwaModel {
    let mats = LocationMatrices::linear(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DVector::from_row_slice(&[0.0, 1.0]),
        DVector::from_row_slice(&[1.0, 0.0]),
        0.0,
    )
    .unwrap();
    PwaModel::single_location(mats).unwrap()
}

/// Two-location relative-degree-2 model whose switching is a threshold on
/// the output (`P = P_o C`), so the location one step ahead is an explicit
/// function of the current state.
pub fn output_threshold_rd2_model() -> PwaModel {
    let b = DVector::from_row_slice(&[0.0, 1.0]);
    let c = DVector::from_row_slice(&[1.0, 0.0]);
    let loc = |a: [f64; 4], f: [f64; 2]| {
        LocationMatrices::new(
            DMatrix::from_row_slice(2, 2, &a),
            b.clone(),
            DVector::from_row_slice(&f),
            c.clone(),
            0.0,
            0.0,
        )
        .unwrap()
    };
    // C B = 0 and C A_q B != 0 in both locations; products C A_p B_q are
    // nonzero for every pair, so the global relative degree is 2.
    let locations = vec![
        loc([0.9, 1.0, 0.0, 0.5], [0.01, -0.02]),
        loc([1.1, 2.0, 0.0, -0.3], [0.0, 0.015]),
    ];
    // P = 1.0 * C, w = 0.5: switching on y >= 0.5 (G = 0).
    let partition = Partition::new(
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DVector::from_row_slice(&[0.5]),
        vec![vec![vec![1]], vec![vec![0]]],
    )
    .unwrap();
    PwaModel::new(partition, Schedule::Constant { locations }).unwrap()
}

/// Observable-canonical realization of `num(z)/den(z) + d` with `C = e_1`.
///
/// `den` is monic with constant-first coefficients (length `n + 1`), `num`
/// has degree at most `n - 1` (constant-first, length `n`).
pub fn observable_canonical(num: &[f64], den: &[f64], d: f64) -> LocationMatrices {
    let n = den.len() - 1;
    assert!(num.len() <= n, "numerator degree must be below the denominator's");
    assert!((den[n] - 1.0).abs() < 1e-12, "denominator must be monic");
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, 0)] = -den[n - 1 - i];
        if i + 1 < n {
            a[(i, i + 1)] = 1.0;
        }
    }
    // Rows of A above hold -a_{n-1}..-a_0 in its first column; B holds the
    // numerator coefficients highest power first.
    let mut b = DVector::zeros(n);
    for (power, &coef) in num.iter().enumerate() {
        b[n - 1 - power] = coef;
    }
    let mut c = DVector::zeros(n);
    c[0] = 1.0;
    LocationMatrices::new(a, b, DVector::zeros(n), c, d, 0.0).unwrap()
}

/// SISO transfer function from zeros, poles, and gain in observable
/// canonical form. Strictly proper inputs yield `d = 0`; an equal number of
/// zeros and poles yields the biproper realization with `d = gain`.
pub fn transfer_realization(
    zeros: &[Complex<f64>],
    poles: &[Complex<f64>],
    gain: f64,
) -> Result<LocationMatrices> {
    let den = real_coefficients_from_roots(poles)?;
    let zero_poly = real_coefficients_from_roots(zeros)?;
    let n = poles.len();
    assert!(zeros.len() <= n);
    let mut num_full = vec![0.0; n + 1];
    for (i, &z) in zero_poly.iter().enumerate() {
        num_full[i] = gain * z;
    }
    let d = if zeros.len() == n { gain } else { 0.0 };
    // Remove the direct-feedthrough share from the numerator.
    let mut num_sp = vec![0.0; n];
    for i in 0..n {
        num_sp[i] = num_full[i] - d * den[i];
    }
    Ok(observable_canonical(&num_sp, &den, d))
}

/// One generated inversion round-trip case: a model, an initial state, and a
/// smooth input whose trajectory stays clear of the switching hyperplanes.
#[derive(Debug, Clone)]
pub struct RoundTripCase {
    pub model: PwaModel,
    pub x0: DVector<f64>,
    pub u: Vec<f64>,
}

/// Draws a random model with the requested global relative degree (0, 1, or
/// 2) together with an input for which the forward trajectory is bounded and
/// keeps a margin from every switching boundary.
///
/// All locations share `C = e_1`, `D`, and `G`. For degrees 1 and 2 each
/// location is an observable-canonical realization with zeros and poles
/// inside the disc of radius 0.75, keeping the forward dynamics and the
/// exact inverse dynamics numerically benign. For degree 0 the inverse
/// iteration matrix is drawn directly with largest singular value below
/// 0.85 and the forward matrix recovered from it, so switched products of
/// the inverse locations contract regardless of the switching pattern. For
/// degree 2 the switching is a threshold on the output, so explicit
/// two-step-ahead inversion applies.
pub fn random_round_trip_case<R: Rng>(degree: usize, horizon: usize, rng: &mut R) -> RoundTripCase {
    assert!(degree <= 2);
    for _ in 0..500 {
        let n_x = rng.random_range(degree.max(1)..=4);
        let n_q = if degree == 2 {
            rng.random_range(1..=2)
        } else {
            rng.random_range(1..=3)
        };
        let g_shared: f64 = rng.random_range(-0.2..0.2);
        let d_shared: f64 = if degree == 0 {
            let mag = rng.random_range(0.4..1.5);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        } else {
            0.0
        };

        let mut locations = Vec::with_capacity(n_q);
        let mut ok = true;
        for _ in 0..n_q {
            match random_location(n_x, degree, d_shared, g_shared, rng) {
                Some(loc) => locations.push(loc),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }

        let partition = match random_partition(n_x, n_q, degree, g_shared, rng) {
            Some(p) => p,
            None => continue,
        };
        let model = match PwaModel::new(partition, Schedule::Constant { locations }) {
            Ok(m) => m,
            Err(_) => continue,
        };

        let x0 = DVector::from_fn(n_x, |_, _| rng.random_range(-0.4..0.4));
        let u = smooth_input(horizon, rng);
        if case_is_well_separated(&model, &x0, &u) {
            return RoundTripCase { model, x0, u };
        }
    }
    panic!("failed to draw a well-separated round-trip case");
}

fn random_location<R: Rng>(
    n_x: usize,
    degree: usize,
    d: f64,
    g: f64,
    rng: &mut R,
) -> Option<LocationMatrices> {
    if degree == 0 {
        // Backwards draw: the feedthrough inverse iterates
        // `x⁺ = (A − b cᵀ/d) x + …`, and switched products of per-location
        // inverse matrices must stay contractive for long round trips, which
        // a spectral-radius bound alone does not give. Drawing the inverse
        // matrix with bounded largest singular value and recovering
        // `A = Ā + b cᵀ/d` makes every product contract by construction.
        let mut abar = DMatrix::from_fn(n_x, n_x, |_, _| rng.random_range(-1.0..1.0));
        let sigma = abar.clone().singular_values()[0];
        if sigma > 0.0 {
            abar *= rng.random_range(0.3..0.85) / sigma;
        }
        let b = DVector::from_fn(n_x, |_, _| rng.random_range(-1.0..1.0));
        let mut c = DVector::zeros(n_x);
        c[0] = 1.0;
        let a = &abar + &b * c.transpose() / d;
        let mut loc = LocationMatrices::linear(a, b, c, d).ok()?;
        for i in 0..n_x {
            loc.f[i] = rng.random_range(-0.05..0.05);
        }
        loc.g = g;
        return Some(loc);
    }

    let poles = random_spectrum(n_x, 0.75, rng);
    let zeros = random_spectrum(n_x.checked_sub(degree)?, 0.75, rng);
    let mag = rng.random_range(0.5..1.8);
    let gain = if rng.random_bool(0.5) { mag } else { -mag };
    let mut loc = transfer_realization(&zeros, &poles, gain).ok()?;
    for i in 0..n_x {
        loc.f[i] = rng.random_range(-0.05..0.05);
    }
    loc.g = g;
    Some(loc)
}

/// Random self-conjugate spectrum inside the disc of the given radius.
fn random_spectrum<R: Rng>(count: usize, radius: f64, rng: &mut R) -> Vec<Complex<f64>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if count - out.len() >= 2 && rng.random_bool(0.4) {
            let r = rng.random_range(0.1..radius);
            let th = rng.random_range(0.2..std::f64::consts::PI - 0.2);
            out.push(Complex::new(r * th.cos(), r * th.sin()));
            out.push(Complex::new(r * th.cos(), -r * th.sin()));
        } else {
            out.push(Complex::new(rng.random_range(-radius..radius), 0.0));
        }
    }
    out
}

fn random_partition<R: Rng>(
    n_x: usize,
    n_q: usize,
    degree: usize,
    g_shared: f64,
    rng: &mut R,
) -> Option<Partition> {
    if n_q == 1 {
        return Some(Partition::single_location(n_x));
    }
    let sets: Vec<Vec<Signature>> = match n_q {
        2 => vec![vec![vec![1]], vec![vec![0]]],
        3 => vec![
            vec![vec![1, 1]],
            vec![vec![1, 0]],
            vec![vec![0, 1], vec![0, 0]],
        ],
        _ => return None,
    };
    let n_p = sets[0][0].len();
    let (p, w) = if degree == 2 {
        // Output-threshold switching: P = P_o C with C = e_1, w = w_o - P_o G.
        let mut p = DMatrix::zeros(n_p, n_x);
        let mut w = DVector::zeros(n_p);
        for i in 0..n_p {
            let po = rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            p[(i, 0)] = po;
            w[i] = rng.random_range(-0.3..0.3) - po * g_shared;
        }
        (p, w)
    } else {
        let p = DMatrix::from_fn(n_p, n_x, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(n_p, |_, _| rng.random_range(-0.2..0.2));
        (p, w)
    };
    Partition::new(p, w, sets).ok()
}

/// Smooth bounded input: a short sum of incommensurate sinusoids.
pub fn smooth_input<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.3..1.0),
                rng.random_range(0.02..0.4),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    (0..len)
        .map(|k| {
            terms
                .iter()
                .map(|(amp, freq, phase)| amp * (freq * k as f64 + phase).sin())
                .sum()
        })
        .collect()
}

/// A case is usable for round-trip comparisons when the forward trajectory
/// stays bounded and no state comes close to a switching hyperplane, so that
/// roundoff cannot flip the location selection between forward and inverse
/// passes.
fn case_is_well_separated(model: &PwaModel, x0: &DVector<f64>, u: &[f64]) -> bool {
    let sim = match model.simulate(x0, u) {
        Ok(s) => s,
        Err(_) => return false,
    };
    let p = model.partition().p();
    let w = model.partition().w();
    let scale = 1.0 + p.amax();
    for x in &sim.x {
        if x.amax() > 50.0 {
            return false;
        }
        for i in 0..p.nrows() {
            if (p.row(i).transpose().dot(x) - w[i]).abs() < 1e-5 * scale {
                return false;
            }
        }
    }
    true
}

/// Forward model whose exact inverse has a shared block-diagonalizing
/// transform and whose switching depends only on the stable inverse modes.
///
/// Construction runs backwards: the inverse state matrices are chosen as
/// `blkdiag(0, T2 diag(s_q, u_q) T2^{-1})` with one stable and one unstable
/// mode, then the forward model is recovered from `A_q = Abar_q + b_q rho_q^T`
/// with `C = e_1`, which makes `rho_q` the negated inverse output map. The
/// zero eigenvalue contributed by inversion is a stable mode shared by both
/// locations, so a single transform decouples every location exactly.
pub fn stable_switching_decoupled_model() -> PwaModel {
    decoupled_model_internal(SwitchModes::Stable, [0.0, 0.0])
}

/// As [`stable_switching_decoupled_model`], but the switching hyperplane is
/// aligned with the unstable inverse mode, and the per-location forcing can
/// be offset to craft feasible or infeasible backward steps.
pub fn unstable_switching_decoupled_model(forcing_offsets: [f64; 2]) -> PwaModel {
    decoupled_model_internal(SwitchModes::Unstable, forcing_offsets)
}

enum SwitchModes {
    Stable,
    Unstable,
}

fn decoupled_model_internal(switch: SwitchModes, forcing_offsets: [f64; 2]) -> PwaModel {
    let n = 3;
    // Modal data of the inverse dynamics. Coordinate 0 is the zero eigenvalue
    // introduced by inversion, coordinate 1 the stable mode, coordinate 2 the
    // unstable mode.
    let t2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 1.0]);
    let t2_inv = t2.clone().try_inverse().unwrap();
    let modes = [(0.5, 1.6), (0.7, 2.0)];
    let b_fwd = [
        DVector::from_row_slice(&[1.0, 0.4, -0.3]),
        DVector::from_row_slice(&[1.2, -0.1, 0.2]),
    ];
    let rho = [
        DVector::from_row_slice(&[0.3, -0.5, 0.2]),
        DVector::from_row_slice(&[-0.1, 0.4, 0.6]),
    ];
    let g_out = 0.02;

    // V^{-1} columns are the inverse eigenvectors: e_1, then T2 embedded in
    // coordinates 1..3. Stable-first ordering: [0-mode, stable, unstable].
    let mut v_inv = DMatrix::zeros(n, n);
    v_inv[(0, 0)] = 1.0;
    for i in 0..2 {
        for j in 0..2 {
            v_inv[(i + 1, j + 1)] = t2[(i, j)];
        }
    }
    let v = v_inv.clone().try_inverse().unwrap();

    let mut locations = Vec::new();
    for q in 0..2 {
        let (s, u) = modes[q];
        let block = &t2 * DMatrix::from_diagonal(&DVector::from_row_slice(&[s, u])) * &t2_inv;
        let mut abar = DMatrix::zeros(n, n);
        for i in 0..2 {
            for j in 0..2 {
                abar[(i + 1, j + 1)] = block[(i, j)];
            }
        }
        let a = &abar + &b_fwd[q] * rho[q].transpose();
        let mut c = DVector::zeros(n);
        c[0] = 1.0;

        // Forward forcing chosen so the inverse forcing Fbar_q has prescribed
        // modal components; c^T Fbar = -G makes the zero-mode row consistent.
        let fbar_modal = DVector::from_row_slice(&[
            0.0,
            0.01 + 0.005 * q as f64,
            0.02 - 0.01 * q as f64 + forcing_offsets[q],
        ]);
        let mut fbar = &v_inv * fbar_modal;
        fbar[0] = -g_out;
        let loc = LocationMatrices::new(a, b_fwd[q].clone(), fbar.clone(), c, 0.0, g_out).unwrap();
        locations.push(loc);
    }

    let row = match switch {
        // A combination of the stable modal rows of V.
        SwitchModes::Stable => v.row(0) * 0.2 + v.row(1) * 1.0,
        // The unstable modal row of V.
        SwitchModes::Unstable => v.row(2) * 1.0,
    };
    let p = DMatrix::from_rows(&[row]);
    let w = DVector::from_row_slice(&[0.01]);
    let partition = Partition::new(p, w, vec![vec![vec![1]], vec![vec![0]]]).unwrap();
    PwaModel::new(partition, Schedule::Constant { locations }).unwrap()
}
