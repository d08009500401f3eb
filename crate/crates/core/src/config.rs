//! Experiment configuration (TOML) and the reference batch-reactor scenario.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{GeometryError, HyperRect, Polytope};
use crate::sim::{DisturbanceKind, DisturbanceModel, Impulse, Method};
use crate::tightening::{
    synthesize_nominal_gain, synthesize_tightening_gains, PlantModel, RmpcSetup, TighteningError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid field `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tightening(#[from] TighteningError),
}

fn field_err(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.to_string(), msg: msg.into() }
}

/// A set given as `{ inf_norm = r }`, `{ lo = [..], hi = [..] }` or
/// `{ a = [[..]], b = [..] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SetSpec {
    InfNorm { inf_norm: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    HRep { a: Vec<Vec<f64>>, b: Vec<f64> },
}

impl SetSpec {
    pub fn to_polytope(&self, dim: usize, field: &str) -> Result<Polytope, ConfigError> {
        let p = match self {
            SetSpec::InfNorm { inf_norm } => {
                if !inf_norm.is_finite() || *inf_norm < 0.0 {
                    return Err(field_err(field, "inf_norm must be finite and nonnegative"));
                }
                Polytope::inf_ball(dim, *inf_norm)
            }
            SetSpec::Box { lo, hi } => {
                HyperRect::new(DVector::from_vec(lo.clone()), DVector::from_vec(hi.clone()))
                    .map_err(|e| field_err(field, e.to_string()))?
                    .to_polytope()
            }
            SetSpec::HRep { a, b } => {
                let m = to_matrix(a, field)?;
                Polytope::new(m, DVector::from_vec(b.clone())).map_err(|e| field_err(field, e.to_string()))?
            }
        };
        if p.dim() != dim {
            return Err(field_err(field, format!("dimension {} but expected {dim}", p.dim())));
        }
        Ok(p)
    }
}

fn to_matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, ConfigError> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(field_err(field, "matrix must be a nonempty list of equal-length rows"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(field_err(field, "non-finite entry"));
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetsSpec {
    pub x: SetSpec,
    pub u: SetSpec,
    pub w: SetSpec,
    pub tx: SetSpec,
    pub tu: SetSpec,
    pub xf: SetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub horizon: usize,
    /// Defaults to `n_x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nilpotency: Option<usize>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// LQR weights for the nominal gain when `f` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lqr_q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lqr_r: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<Vec<f64>>>,
    /// `K_0..K_{N−2}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSpec {
    pub t: usize,
    pub coord: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKindSpec {
    Zero,
    Uniform,
    WorstCase,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKindSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replay: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub out_of_set: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub impulses: Vec<ImpulseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub method: Method,
    pub x0: Vec<f64>,
    pub steps: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub sets: SetsSpec,
    pub controller: ControllerSpec,
    pub disturbance: DisturbanceSpec,
    pub run: RunSpec,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical TOML serialization without the output
    /// directory, hex encoded.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let mut c = self.clone();
        c.run.out_dir = None;
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }

    pub fn plant(&self) -> Result<PlantModel, ConfigError> {
        let a = to_matrix(&self.plant.a, "plant.a")?;
        let b = to_matrix(&self.plant.b, "plant.b")?;
        let (nx, nu) = (a.nrows(), b.ncols());
        if a.ncols() != nx || b.nrows() != nx {
            return Err(field_err("plant", "A must be square and B must have n_x rows"));
        }
        let s = &self.sets;
        Ok(PlantModel {
            a,
            b,
            x_set: s.x.to_polytope(nx, "sets.x")?,
            u_set: s.u.to_polytope(nu, "sets.u")?,
            w_set: s.w.to_polytope(nx, "sets.w")?,
            tx: s.tx.to_polytope(nx, "sets.tx")?,
            tu: s.tu.to_polytope(nu, "sets.tu")?,
            xf: s.xf.to_polytope(nx, "sets.xf")?,
        })
    }

    /// Synthesize missing gains and build the tightened setup.
    pub fn setup(&self) -> Result<RmpcSetup, ConfigError> {
        let plant = self.plant()?;
        plant.validate()?;
        let (nx, nu) = (plant.nx(), plant.nu());
        let c = &self.controller;
        let n = c.horizon;
        let m = c.nilpotency.unwrap_or(nx);
        if n < nx + 1 {
            return Err(TighteningError::Horizon(format!("N = {n} < n_x + 1 = {}", nx + 1)).into());
        }
        let f = match &c.f {
            Some(rows) => to_matrix(rows, "controller.f")?,
            None => {
                let lq = c
                    .lqr_q
                    .as_ref()
                    .map(|r| to_matrix(r, "controller.lqr_q"))
                    .transpose()?
                    .unwrap_or_else(|| DMatrix::identity(nx, nx));
                let lr = c
                    .lqr_r
                    .as_ref()
                    .map(|r| to_matrix(r, "controller.lqr_r"))
                    .transpose()?
                    .unwrap_or_else(|| DMatrix::identity(nu, nu));
                synthesize_nominal_gain(&plant, &lq, &lr)?
            }
        };
        let k = match &c.k {
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, rows)| to_matrix(rows, &format!("controller.k[{i}]")))
                .collect::<Result<Vec<_>, _>>()?,
            None => synthesize_tightening_gains(&plant.a, &plant.b, m, n)?,
        };
        let q = to_matrix(&c.q, "controller.q")?;
        let r = to_matrix(&c.r, "controller.r")?;
        Ok(RmpcSetup::build(plant, n, m, f, k, q, r)?)
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_vec(self.run.x0.clone())
    }

    pub fn disturbance(&self) -> Result<DisturbanceModel, ConfigError> {
        let d = &self.disturbance;
        let kind = match d.kind {
            DisturbanceKindSpec::Zero => DisturbanceKind::Zero,
            DisturbanceKindSpec::Uniform => DisturbanceKind::UniformBox { seed: self.run.seed },
            DisturbanceKindSpec::WorstCase => DisturbanceKind::WorstCase,
            DisturbanceKindSpec::Replay => {
                if d.replay.is_empty() {
                    return Err(field_err("disturbance.replay", "replay kind needs a sequence"));
                }
                DisturbanceKind::Replay {
                    seq: d.replay.iter().map(|w| DVector::from_vec(w.clone())).collect(),
                    out_of_set: d.out_of_set,
                }
            }
        };
        let impulses = d
            .impulses
            .iter()
            .map(|i| Impulse { t: i.t, coord: i.coord, value: i.value })
            .collect();
        Ok(DisturbanceModel { kind, impulses })
    }

    /// Reference batch-reactor scenario.
    pub fn batch_reactor() -> Self {
        let a = vec![
            vec![1.08, -0.05, 0.29, -0.24],
            vec![-0.03, 0.81, 0.00, 0.03],
            vec![0.04, 0.19, 0.73, 0.24],
            vec![0.00, 0.19, 0.05, 0.91],
        ];
        let b = vec![vec![0.00, -0.02], vec![0.26, 0.00], vec![0.08, -0.13], vec![0.08, -0.00]];
        let diag = |v: &[f64]| -> Vec<Vec<f64>> {
            (0..v.len())
                .map(|i| (0..v.len()).map(|j| if i == j { v[i] } else { 0.0 }).collect())
                .collect()
        };
        ExperimentConfig {
            plant: PlantSpec { a, b },
            sets: SetsSpec {
                x: SetSpec::InfNorm { inf_norm: 2.0 },
                u: SetSpec::InfNorm { inf_norm: 2.0 },
                w: SetSpec::InfNorm { inf_norm: 0.02 },
                tx: SetSpec::InfNorm { inf_norm: 0.5 },
                tu: SetSpec::InfNorm { inf_norm: 1.5 },
                xf: SetSpec::InfNorm { inf_norm: 0.2 },
            },
            controller: ControllerSpec {
                horizon: 10,
                nilpotency: Some(4),
                q: diag(&[2.0; 4]),
                r: diag(&[1.0; 2]),
                lqr_q: Some(diag(&[0.1; 4])),
                lqr_r: Some(diag(&[1.0, 5.0])),
                f: None,
                k: None,
            },
            disturbance: DisturbanceSpec {
                kind: DisturbanceKindSpec::Uniform,
                replay: Vec::new(),
                out_of_set: false,
                impulses: Vec::new(),
            },
            run: RunSpec {
                method: Method::Cp1,
                x0: vec![1.5, 1.5, -1.5, 1.5],
                steps: 60,
                seed: 2024,
                out_dir: None,
            },
        }
    }
}
