//! Piecewise affine model in closed selector form and its simulation.
//!
//! The system is
//!
//! ```text
//! x_{k+1} = A_{q,k} x_k + B_{q,k} u_k + F_{q,k}
//! y_k     = C_{q,k} x_k + D_{q,k} u_k + G_{q,k}
//! ```
//!
//! where the active location `q` is selected from the state through the
//! partition: `delta_k = H(P x_k - w)` and `delta_k` lies in exactly one
//! location's signature set.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::partition::{Partition, Signature};
use crate::schedule::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct PwaModel {
    partition: Partition,
    schedule: Schedule,
    /// Common per-location relative degree declared by the modeler, if known.
    /// Purely informational; degree computations never trust it.
    pub declared_component_degree: Option<usize>,
}

/// Output of [`PwaModel::simulate`]. For `L` input samples there are `L + 1`
/// states and `L` outputs, signatures, and location indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub x: Vec<DVector<f64>>,
    pub y: Vec<f64>,
    pub delta: Vec<Signature>,
    pub locations: Vec<usize>,
}

impl PwaModel {
    pub fn new(partition: Partition, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        let n_x = schedule.get(0, 0)?.n_x();
        if partition.n_x() != n_x {
            return Err(Error::DimensionMismatch {
                context: "partition state dimension",
                expected: n_x,
                actual: partition.n_x(),
            });
        }
        if partition.n_locations() != schedule.n_locations() {
            return Err(Error::DimensionMismatch {
                context: "schedule locations",
                expected: partition.n_locations(),
                actual: schedule.n_locations(),
            });
        }
        Ok(Self {
            partition,
            schedule,
            declared_component_degree: None,
        })
    }

    /// Single-location model, i.e. an affine time series model without
    /// switching.
    pub fn single_location(
        mats: crate::schedule::LocationMatrices,
    ) -> Result<Self> {
        let n_x = mats.n_x();
        Self::new(
            Partition::single_location(n_x),
            Schedule::Constant {
                locations: vec![mats],
            },
        )
    }

    pub fn n_x(&self) -> usize {
        self.partition.n_x()
    }

    pub fn n_locations(&self) -> usize {
        self.partition.n_locations()
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn horizon(&self) -> Option<usize> {
        self.schedule.horizon()
    }

    /// Selects the active location at `(k, x)` and advances one step.
    pub fn step(&self, k: usize, x: &DVector<f64>, u: f64) -> Result<(DVector<f64>, usize)> {
        let (q, _) = self.partition.locate(x, k)?;
        let m = self.schedule.get(q, k)?;
        Ok((&m.a * x + &m.b * u + &m.f, q))
    }

    /// Output at `(k, x)` under input `u`.
    pub fn output(&self, k: usize, x: &DVector<f64>, u: f64) -> Result<(f64, usize)> {
        let (q, _) = self.partition.locate(x, k)?;
        let m = self.schedule.get(q, k)?;
        Ok((m.c.dot(x) + m.d * u + m.g, q))
    }

    /// Runs the model over the input sequence from the given initial state.
    ///
    /// Exactly one location is active at each step; a signature outside every
    /// signature set aborts with [`Error::NoLocation`].
    pub fn simulate(&self, x0: &DVector<f64>, u: &[f64]) -> Result<SimResult> {
        if x0.len() != self.n_x() {
            return Err(Error::DimensionMismatch {
                context: "initial state",
                expected: self.n_x(),
                actual: x0.len(),
            });
        }
        if let Some(h) = self.horizon() {
            if u.len() > h {
                return Err(Error::HorizonOverflow {
                    k: u.len() - 1,
                    horizon: h,
                });
            }
        }
        let mut x = Vec::with_capacity(u.len() + 1);
        let mut y = Vec::with_capacity(u.len());
        let mut delta = Vec::with_capacity(u.len());
        let mut locations = Vec::with_capacity(u.len());
        x.push(x0.clone());
        for (k, &u_k) in u.iter().enumerate() {
            let (q, sig) = self.partition.locate(&x[k], k)?;
            let m = self.schedule.get(q, k)?;
            y.push(m.c.dot(&x[k]) + m.d * u_k + m.g);
            x.push(&m.a * &x[k] + &m.b * u_k + &m.f);
            delta.push(sig);
            locations.push(q);
        }
        Ok(SimResult {
            x,
            y,
            delta,
            locations,
        })
    }
}
