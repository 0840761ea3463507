//! JSON file formats for models and benchmark configs, designed to be
//! written by hand: matrices are nested row-major arrays, complex numbers
//! are `[re, im]` pairs, and optional fields default sensibly.

use std::fs;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PwaModel;
use crate::partition::{Partition, Signature};
use crate::printhead::{
    BenchConfig, FeedbackParams, NoiseSpec, PlantSpec, ReferenceSpec, ZpkModel,
};
use crate::schedule::{LocationMatrices, Schedule};

fn io_error(context: &'static str, e: impl std::fmt::Display) -> Error {
    Error::Numerical {
        context,
        detail: e.to_string(),
    }
}

/// Whether a stored model is a plant to invert or an already-inverted system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelRole {
    Forward,
    Inverse,
}

/// One location's matrices as nested arrays: `a` row-major, `c` a row vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub f: Option<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub g: f64,
}

impl LocationFile {
    fn to_matrices(&self) -> Result<LocationMatrices> {
        let n = self.a.len();
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "model file: square A row",
                    expected: n,
                    actual: self.a[i].len(),
                });
            }
        }
        let a = DMatrix::from_fn(n, n, |i, j| self.a[i][j]);
        let b = DVector::from_vec(self.b.clone());
        let f = match &self.f {
            Some(f) => DVector::from_vec(f.clone()),
            None => DVector::zeros(n),
        };
        let c = DVector::from_vec(self.c.clone());
        LocationMatrices::new(a, b, f, c, self.d, self.g)
    }

    fn from_matrices(m: &LocationMatrices) -> Self {
        let n = m.a.nrows();
        Self {
            a: (0..n)
                .map(|i| (0..n).map(|j| m.a[(i, j)]).collect())
                .collect(),
            b: m.b.iter().copied().collect(),
            f: Some(m.f.iter().copied().collect()),
            c: m.c.iter().copied().collect(),
            d: m.d,
            g: m.g,
        }
    }
}

/// Switching geometry: `p` row-major, one signature set per location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionFile {
    pub p: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub signatures: Vec<Vec<Signature>>,
}

impl PartitionFile {
    /// `n_x_hint` supplies the state dimension when `p` has no rows (a
    /// single-location model), since an empty nested array carries none.
    fn to_partition(&self, n_x_hint: usize) -> Result<Partition> {
        let rows = self.p.len();
        let cols = self.p.first().map_or(n_x_hint, Vec::len);
        for row in &self.p {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "model file: ragged P",
                    expected: cols,
                    actual: row.len(),
                });
            }
        }
        let p = DMatrix::from_fn(rows, cols, |i, j| self.p[i][j]);
        let w = DVector::from_vec(self.w.clone());
        Partition::new(p, w, self.signatures.clone())
    }

    fn from_partition(p: &Partition) -> Self {
        let m = p.p();
        Self {
            p: (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect(),
            w: p.w().iter().copied().collect(),
            signatures: p.signatures().to_vec(),
        }
    }
}

/// Schedule body, tagged by kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleFile {
    /// Same matrices at every step.
    Constant { locations: Vec<LocationFile> },
    /// Explicit per-step, per-location tables.
    Tabulated { steps: Vec<Vec<LocationFile>> },
    /// Constant matrices with a bound exogenous signal entering the forcing
    /// terms through per-location gains.
    ExogenousForced {
        locations: Vec<LocationFile>,
        input_gain: Vec<Vec<f64>>,
        output_gain: Vec<f64>,
        signal: Vec<f64>,
    },
}

impl ScheduleFile {
    fn to_schedule(&self) -> Result<Schedule> {
        match self {
            ScheduleFile::Constant { locations } => Ok(Schedule::Constant {
                locations: locations
                    .iter()
                    .map(LocationFile::to_matrices)
                    .collect::<Result<_>>()?,
            }),
            ScheduleFile::Tabulated { steps } => Ok(Schedule::Tabulated {
                steps: steps
                    .iter()
                    .map(|qs| qs.iter().map(LocationFile::to_matrices).collect())
                    .collect::<Result<_>>()?,
            }),
            ScheduleFile::ExogenousForced {
                locations,
                input_gain,
                output_gain,
                signal,
            } => Ok(Schedule::ExogenousForced {
                locations: locations
                    .iter()
                    .map(LocationFile::to_matrices)
                    .collect::<Result<_>>()?,
                input_gain: input_gain
                    .iter()
                    .map(|g| DVector::from_vec(g.clone()))
                    .collect(),
                output_gain: output_gain.clone(),
                signal: signal.clone(),
            }),
        }
    }

    fn from_schedule(s: &Schedule) -> Self {
        match s {
            Schedule::Constant { locations } => ScheduleFile::Constant {
                locations: locations.iter().map(LocationFile::from_matrices).collect(),
            },
            Schedule::Tabulated { steps } => ScheduleFile::Tabulated {
                steps: steps
                    .iter()
                    .map(|qs| qs.iter().map(LocationFile::from_matrices).collect())
                    .collect(),
            },
            Schedule::ExogenousForced {
                locations,
                input_gain,
                output_gain,
                signal,
            } => ScheduleFile::ExogenousForced {
                locations: locations.iter().map(LocationFile::from_matrices).collect(),
                input_gain: input_gain.iter().map(|g| g.iter().copied().collect()).collect(),
                output_gain: output_gain.clone(),
                signal: signal.clone(),
            },
        }
    }
}

/// On-disk model: role, optional declared degree, switching geometry, and
/// the schedule of location matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub role: ModelRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_tilde: Option<usize>,
    pub partition: PartitionFile,
    pub schedule: ScheduleFile,
}

impl ModelFile {
    pub fn from_model(model: &PwaModel, role: ModelRole, mu_tilde: Option<usize>) -> Self {
        Self {
            role,
            mu_tilde,
            partition: PartitionFile::from_partition(model.partition()),
            schedule: ScheduleFile::from_schedule(model.schedule()),
        }
    }

    pub fn to_model(&self) -> Result<PwaModel> {
        let schedule = self.schedule.to_schedule()?;
        let n_x = schedule.get(0, 0).map(|m| m.n_x()).unwrap_or(0);
        PwaModel::new(self.partition.to_partition(n_x)?, schedule)
    }
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).map_err(|e| io_error("reading model file", e))?;
    serde_json::from_str(&text).map_err(|e| io_error("parsing model file", e))
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    let text =
        serde_json::to_string_pretty(file).map_err(|e| io_error("encoding model file", e))?;
    fs::write(path, text).map_err(|e| io_error("writing model file", e))
}

fn complex_pairs(values: &[Complex<f64>]) -> Vec<[f64; 2]> {
    values.iter().map(|z| [z.re, z.im]).collect()
}

fn pairs_complex(values: &[[f64; 2]]) -> Vec<Complex<f64>> {
    values.iter().map(|[re, im]| Complex::new(*re, *im)).collect()
}

/// Transfer function with `[re, im]` zero/pole entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZpkFile {
    pub zeros: Vec<[f64; 2]>,
    pub poles: Vec<[f64; 2]>,
    pub gain: f64,
    pub ts: f64,
}

impl ZpkFile {
    fn to_zpk(&self) -> ZpkModel {
        ZpkModel::new(
            pairs_complex(&self.zeros),
            pairs_complex(&self.poles),
            self.gain,
            self.ts,
        )
    }

    fn from_zpk(z: &ZpkModel) -> Self {
        Self {
            zeros: complex_pairs(&z.zeros),
            poles: complex_pairs(&z.poles),
            gain: z.gain,
            ts: z.ts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantSpecFile {
    pub zpk: ZpkFile,
    pub feedback: FeedbackParams,
}

impl PlantSpecFile {
    fn to_spec(&self) -> PlantSpec {
        PlantSpec {
            zpk: self.zpk.to_zpk(),
            feedback: self.feedback.clone(),
        }
    }

    fn from_spec(s: &PlantSpec) -> Self {
        Self {
            zpk: ZpkFile::from_zpk(&s.zpk),
            feedback: s.feedback.clone(),
        }
    }
}

/// Benchmark config file. Every field is optional; omitted fields take the
/// built-in benchmark defaults, so `{}` reproduces the stock study.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchFile {
    pub truth: Option<PlantSpecFile>,
    pub control: Option<PlantSpecFile>,
    pub noise: Option<NoiseSpec>,
    pub reference: Option<ReferenceSpec>,
    pub n_truth: Option<usize>,
    pub n_control: Option<usize>,
    pub n_edge: Option<usize>,
    pub trials: Option<usize>,
    pub gamma_gradient: Option<f64>,
    pub gamma_ptype: Option<f64>,
}

impl BenchFile {
    pub fn into_config(self) -> BenchConfig {
        let mut cfg = BenchConfig::default();
        if let Some(t) = self.truth {
            cfg.truth = t.to_spec();
        }
        if let Some(c) = self.control {
            cfg.control = c.to_spec();
        }
        if let Some(n) = self.noise {
            cfg.noise = n;
        }
        if let Some(r) = self.reference {
            cfg.reference = r;
        }
        if let Some(v) = self.n_truth {
            cfg.n_truth = v;
        }
        if let Some(v) = self.n_control {
            cfg.n_control = v;
        }
        if let Some(v) = self.n_edge {
            cfg.n_edge = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.gamma_gradient {
            cfg.gamma_gradient = v;
        }
        if let Some(v) = self.gamma_ptype {
            cfg.gamma_ptype = v;
        }
        cfg
    }

    pub fn from_config(cfg: &BenchConfig) -> Self {
        Self {
            truth: Some(PlantSpecFile::from_spec(&cfg.truth)),
            control: Some(PlantSpecFile::from_spec(&cfg.control)),
            noise: Some(cfg.noise.clone()),
            reference: Some(cfg.reference.clone()),
            n_truth: Some(cfg.n_truth),
            n_control: Some(cfg.n_control),
            n_edge: Some(cfg.n_edge),
            trials: Some(cfg.trials),
            gamma_gradient: Some(cfg.gamma_gradient),
            gamma_ptype: Some(cfg.gamma_ptype),
        }
    }
}

pub fn load_bench_config(path: &Path) -> Result<BenchConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_error("reading bench config", e))?;
    let file: BenchFile =
        serde_json::from_str(&text).map_err(|e| io_error("parsing bench config", e))?;
    Ok(file.into_config())
}
