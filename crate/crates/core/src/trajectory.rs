//! Discrete-time signal container with a plain-text CSV form.
//!
//! The CSV format is `k,<label>_0,<label>_1,...` with one row per step and
//! floats printed with 17 significant digits, which round-trips `f64`
//! exactly. The label encodes the signal's role.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalRole {
    State,
    Input,
    Output,
    Reference,
    LocationSignature,
}

impl SignalRole {
    pub fn label(self) -> &'static str {
        match self {
            SignalRole::State => "x",
            SignalRole::Input => "u",
            SignalRole::Output => "y",
            SignalRole::Reference => "r",
            SignalRole::LocationSignature => "delta",
        }
    }

    fn from_label(label: &str) -> Option<Self> {
        match label {
            "x" => Some(SignalRole::State),
            "u" => Some(SignalRole::Input),
            "y" => Some(SignalRole::Output),
            "r" => Some(SignalRole::Reference),
            "delta" => Some(SignalRole::LocationSignature),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub role: SignalRole,
    /// Step index of the first sample.
    pub start_k: usize,
    pub samples: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(role: SignalRole, start_k: usize, samples: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let dim = first.len();
            if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
                return Err(Error::DimensionMismatch {
                    context: "trajectory sample width",
                    expected: dim,
                    actual: bad.len(),
                });
            }
        }
        Ok(Self {
            role,
            start_k,
            samples,
        })
    }

    /// Scalar-valued trajectory from a flat list.
    pub fn scalar(role: SignalRole, start_k: usize, values: &[f64]) -> Self {
        Self {
            role,
            start_k,
            samples: values.iter().map(|&v| DVector::from_row_slice(&[v])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, DVector::len)
    }

    /// Flattens a scalar trajectory into its value list.
    pub fn scalar_values(&self) -> Result<Vec<f64>> {
        if self.dim() != 1 && !self.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "scalar trajectory width",
                expected: 1,
                actual: self.dim(),
            });
        }
        Ok(self.samples.iter().map(|s| s[0]).collect())
    }

    /// Serializes to the CSV trajectory format.
    pub fn to_csv(&self) -> String {
        let dim = self.dim();
        let label = self.role.label();
        let mut out = String::from("k");
        for i in 0..dim {
            out.push_str(&format!(",{label}_{i}"));
        }
        out.push('\n');
        for (offset, sample) in self.samples.iter().enumerate() {
            out.push_str(&(self.start_k + offset).to_string());
            for value in sample.iter() {
                // 17 significant digits: lossless for f64.
                out.push_str(&format!(",{value:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV trajectory format, inferring the role from the header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Numerical {
            context: "trajectory csv",
            detail: "empty file".into(),
        })?;
        let mut cols = header.split(',');
        let k_col = cols.next().unwrap_or_default().trim();
        if k_col != "k" {
            return Err(Error::Numerical {
                context: "trajectory csv",
                detail: format!("header must start with 'k', got '{k_col}'"),
            });
        }
        let labels: Vec<&str> = cols.map(str::trim).collect();
        let role = labels
            .first()
            .and_then(|l| l.rsplit_once('_'))
            .and_then(|(prefix, _)| SignalRole::from_label(prefix))
            .ok_or_else(|| Error::Numerical {
                context: "trajectory csv",
                detail: format!("unrecognized column labels {labels:?}"),
            })?;
        let dim = labels.len();

        let mut start_k = 0usize;
        let mut expected_k = None;
        let mut samples = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::DimensionMismatch {
                    context: "trajectory csv row width",
                    expected: dim + 1,
                    actual: fields.len(),
                });
            }
            let k: usize = fields[0].parse().map_err(|_| Error::Numerical {
                context: "trajectory csv",
                detail: format!("bad step index '{}'", fields[0]),
            })?;
            match expected_k {
                None => {
                    start_k = k;
                    expected_k = Some(k + 1);
                }
                Some(want) => {
                    if k != want {
                        return Err(Error::Numerical {
                            context: "trajectory csv",
                            detail: format!("non-contiguous step index {k}, expected {want}"),
                        });
                    }
                    expected_k = Some(k + 1);
                }
            }
            let mut sample = DVector::zeros(dim);
            for (i, field) in fields[1..].iter().enumerate() {
                sample[i] = field.parse().map_err(|_| Error::Numerical {
                    context: "trajectory csv",
                    detail: format!("bad float '{field}'"),
                })?;
            }
            samples.push(sample);
        }
        Trajectory::new(role, start_k, samples)
    }
}
