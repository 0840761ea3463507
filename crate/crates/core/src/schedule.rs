//! Per-location, possibly time-varying system matrices.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// The six matrices of one location of a SISO piecewise affine system:
/// `x' = A x + B u + F`, `y = C x + D u + G`.
///
/// `c` is stored as a column vector but acts as the row `c^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationMatrices {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub f: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
    pub g: f64,
}

impl LocationMatrices {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        f: DVector<f64>,
        c: DVector<f64>,
        d: f64,
        g: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "state matrix columns",
                expected: n,
                actual: a.ncols(),
            });
        }
        for (len, context) in [
            (b.len(), "input map length"),
            (f.len(), "forcing length"),
            (c.len(), "output map length"),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(Self { a, b, f, c, d, g })
    }

    /// Linear-only location (`F = 0`, `G = 0`).
    pub fn linear(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, d: f64) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, DVector::zeros(n), c, d, 0.0)
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
}

/// Time dependence of the location matrices.
///
/// `Constant` schedules are valid for every step. `Tabulated` schedules list
/// the matrices of each step explicitly. `ExogenousForced` schedules have
/// constant `A, B, C, D` per location but affine offsets that follow a bound
/// scalar signal: `F_{q,k} = F_q + input_gain_q * signal[k]` and
/// `G_{q,k} = G_q + output_gain_q * signal[k]`. This is how a closed loop
/// driven by a reference enters the piecewise affine form, and how the
/// inverse of such a model carries the reference dependence along.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant {
        locations: Vec<LocationMatrices>,
    },
    Tabulated {
        /// `steps[k][q]` holds the matrices of location `q` at step `k`.
        steps: Vec<Vec<LocationMatrices>>,
    },
    ExogenousForced {
        locations: Vec<LocationMatrices>,
        input_gain: Vec<DVector<f64>>,
        output_gain: Vec<f64>,
        signal: Vec<f64>,
    },
}

impl Schedule {
    pub fn n_locations(&self) -> usize {
        match self {
            Schedule::Constant { locations } => locations.len(),
            Schedule::Tabulated { steps } => steps.first().map_or(0, Vec::len),
            Schedule::ExogenousForced { locations, .. } => locations.len(),
        }
    }

    /// Number of steps on which the schedule is defined, `None` if unbounded.
    pub fn horizon(&self) -> Option<usize> {
        match self {
            Schedule::Constant { .. } => None,
            Schedule::Tabulated { steps } => Some(steps.len()),
            Schedule::ExogenousForced { signal, .. } => Some(signal.len()),
        }
    }

    /// Whether `A, B, C, D, G` at a fixed location are the same for all `k`.
    /// Only the forcing may then vary with time.
    pub fn is_time_invariant_linear_part(&self) -> bool {
        !matches!(self, Schedule::Tabulated { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let n_q = self.n_locations();
        if n_q == 0 {
            return Err(Error::DimensionMismatch {
                context: "schedule locations",
                expected: 1,
                actual: 0,
            });
        }
        let n_x = self.get(0, 0)?.n_x();
        match self {
            Schedule::Constant { locations } => {
                for loc in locations {
                    check_n_x(loc, n_x)?;
                }
            }
            Schedule::Tabulated { steps } => {
                for step in steps {
                    if step.len() != n_q {
                        return Err(Error::DimensionMismatch {
                            context: "tabulated step locations",
                            expected: n_q,
                            actual: step.len(),
                        });
                    }
                    for loc in step {
                        check_n_x(loc, n_x)?;
                    }
                }
            }
            Schedule::ExogenousForced {
                locations,
                input_gain,
                output_gain,
                ..
            } => {
                if input_gain.len() != n_q {
                    return Err(Error::DimensionMismatch {
                        context: "exogenous input gains",
                        expected: n_q,
                        actual: input_gain.len(),
                    });
                }
                if output_gain.len() != n_q {
                    return Err(Error::DimensionMismatch {
                        context: "exogenous output gains",
                        expected: n_q,
                        actual: output_gain.len(),
                    });
                }
                for loc in locations {
                    check_n_x(loc, n_x)?;
                }
                for gain in input_gain {
                    if gain.len() != n_x {
                        return Err(Error::DimensionMismatch {
                            context: "exogenous input gain length",
                            expected: n_x,
                            actual: gain.len(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Matrices of location `q` at step `k`. Borrows when no per-step
    /// assembly is needed.
    pub fn get(&self, q: usize, k: usize) -> Result<Cow<'_, LocationMatrices>> {
        if let Some(h) = self.horizon() {
            if k >= h {
                return Err(Error::HorizonOverflow { k, horizon: h });
            }
        }
        match self {
            Schedule::Constant { locations } => locations
                .get(q)
                .map(Cow::Borrowed)
                .ok_or(location_out_of_range(self.n_locations(), q)),
            Schedule::Tabulated { steps } => steps[k]
                .get(q)
                .map(Cow::Borrowed)
                .ok_or(location_out_of_range(self.n_locations(), q)),
            Schedule::ExogenousForced {
                locations,
                input_gain,
                output_gain,
                signal,
            } => {
                let base = locations
                    .get(q)
                    .ok_or(location_out_of_range(self.n_locations(), q))?;
                let mut mats = base.clone();
                mats.f += &input_gain[q] * signal[k];
                mats.g += output_gain[q] * signal[k];
                Ok(Cow::Owned(mats))
            }
        }
    }
}

fn check_n_x(loc: &LocationMatrices, n_x: usize) -> Result<()> {
    if loc.n_x() != n_x {
        return Err(Error::DimensionMismatch {
            context: "location state dimension",
            expected: n_x,
            actual: loc.n_x(),
        });
    }
    Ok(())
}

fn location_out_of_range(n_q: usize, q: usize) -> Error {
    Error::DimensionMismatch {
        context: "location index",
        expected: n_q,
        actual: q,
    }
}
