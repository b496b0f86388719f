//! JSON model documents:
//! `{"blocks": [m0, ...], "B": [[...], ...] | [...], "coefficients": {...}, "mu": .., "M": ..}`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, StructureError};
use crate::fields::{ellipticity_check, Coefficients, EllipticityReport, OperatorSpec, SampleGrid};
use crate::model::{kalman_rank, validate_structure, SystemMatrix};

/// `B` as nested rows or as a flat row-major list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixSpec {
    fn to_matrix(&self, expected: usize) -> Result<DMatrix<f64>, StructureError> {
        match self {
            MatrixSpec::Rows(rows) => {
                let n = rows.len();
                let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
                if rows.iter().any(|r| r.len() != n) {
                    return Err(StructureError::Dimension {
                        rows: n,
                        cols,
                        sum: expected,
                    });
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
            MatrixSpec::Flat(values) => {
                let n = (values.len() as f64).sqrt().round() as usize;
                if n * n != values.len() {
                    return Err(StructureError::Dimension {
                        rows: values.len(),
                        cols: 1,
                        sum: expected,
                    });
                }
                Ok(DMatrix::from_row_slice(n, n, values))
            }
        }
    }
}

/// Sampling lattice for the coefficient checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n: usize,
    pub extent: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { n: 32, extent: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub blocks: Vec<usize>,
    #[serde(rename = "B")]
    pub b: MatrixSpec,
    /// `(1/2) Δ_{m0}` when absent.
    #[serde(default)]
    pub coefficients: Option<Coefficients>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(rename = "M", default)]
    pub m_bound: f64,
    #[serde(default)]
    pub samples: Option<SampleSpec>,
}

fn default_mu() -> f64 {
    2.0
}

/// A fully validated model.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: OperatorSpec,
    pub ellipticity: EllipticityReport,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn system(&self) -> Result<SystemMatrix, Error> {
        let d: usize = self.blocks.iter().sum();
        let b = self.b.to_matrix(d)?;
        Ok(validate_structure(b, &self.blocks)?)
    }

    /// Structure, Kalman rank, coefficient shapes, ellipticity and
    /// boundedness, in that order.
    pub fn build(&self) -> Result<Model, Error> {
        let system = self.system()?;
        let rank = kalman_rank(&system);
        if rank != system.dim() {
            return Err(Error::Coefficient {
                clause: "kalman-rank",
                message: format!("Kalman rank {rank} is below d = {}", system.dim()),
            });
        }
        let coefficients = self
            .coefficients
            .clone()
            .unwrap_or_else(|| Coefficients::principal(system.m0(), 1.0));
        let spec = OperatorSpec::new(system, coefficients, self.mu, self.m_bound).map_err(as_validation)?;
        let samples = self.samples.unwrap_or_default();
        if samples.n == 0 || !(samples.extent > 0.0) {
            return Err(Error::Config("sample lattice needs n > 0 and a positive extent".into()));
        }
        let grid = SampleGrid::lattice(spec.system.dim(), spec.system.m0(), samples.n, samples.extent);
        let report = ellipticity_check(&spec, &grid).map_err(as_validation)?;
        if !report.passes_ellipticity {
            return Err(Error::Coefficient {
                clause: "ellipticity",
                message: format!(
                    "sampled constants ({}, {}) exceed mu = {}",
                    report.mu_low, report.mu_high, spec.mu
                ),
            });
        }
        if !report.passes_bound {
            return Err(Error::Coefficient {
                clause: "boundedness",
                message: format!("lower-order coefficients reach {} > M = {}", report.lower_order_sup, spec.m_bound),
            });
        }
        Ok(Model {
            spec,
            ellipticity: report,
        })
    }
}

fn as_validation(e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite(message) => Error::Coefficient {
            clause: "ellipticity",
            message,
        },
        Error::Config(message) => Error::Coefficient {
            clause: "coefficient-shape",
            message,
        },
        Error::NonFinite(what) => Error::Coefficient {
            clause: "non-finite",
            message: format!("non-finite value in {what}"),
        },
        other => other,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse model: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] Error),
}

pub fn parse_model(text: &str) -> Result<Model, LoadError> {
    Ok(ModelConfig::from_json(text)?.build()?)
}

pub fn load_model(path: &Path) -> Result<Model, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LANGEVIN: &str = r#"{"blocks": [1, 1], "B": [[0, 0], [1, 0]]}"#;

    #[test]
    fn langevin_round_trip() {
        let cfg = ModelConfig::from_json(LANGEVIN).unwrap();
        let model = cfg.build().unwrap();
        assert_eq!(model.spec.system.dim(), 2);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ModelConfig::from_json(&text).unwrap(), cfg);
        let flat = parse_model(r#"{"blocks": [1, 1], "B": [0, 0, 1, 0]}"#).unwrap();
        assert_eq!(flat.spec.system, model.spec.system);
    }

    #[test]
    fn rejections_carry_clauses() {
        let clause = |text: &str| match parse_model(text) {
            Err(LoadError::Invalid(e)) => e.clause(),
            other => panic!("expected a validation error, got {other:?}"),
        };
        assert_eq!(clause(r#"{"blocks": [1, 2], "B": [[0,0,0],[1,0,0],[0,1,0]]}"#), Some("m-monotonicity"));
        assert_eq!(clause(r#"{"blocks": [1, 1], "B": [[0, 0], [0, 0]]}"#), Some("subdiagonal-rank"));
        assert_eq!(clause(r#"{"blocks": [1, 1], "B": [0, 0, 1]}"#), Some("dimension"));
        let weak = r#"{"blocks": [1], "B": [[0]], "mu": 1.5,
            "coefficients": {"a": {"kind": "scaled", "matrix": [[1]], "scale": {"kind": "time_sinusoid", "mean": 1.25, "amplitude": 0.75}}}}"#;
        assert_eq!(clause(weak), Some("ellipticity"));
        let lower = r#"{"blocks": [1], "B": [[0]], "M": 0.1,
            "coefficients": {"a": {"kind": "scaled", "matrix": [[0.5]], "scale": {"kind": "constant", "value": 1}},
                             "c": {"kind": "constant", "value": 0.5}}}"#;
        assert_eq!(clause(lower), Some("boundedness"));
        assert!(matches!(parse_model("{not json"), Err(LoadError::Parse(_))));
        assert!(matches!(parse_model(r#"{"blocks": [1]}"#), Err(LoadError::Parse(_))));
    }
}
