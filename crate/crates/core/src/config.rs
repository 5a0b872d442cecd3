//! TOML configuration documents.
//!
//! One document feeds every subcommand. Only `[system]` and `[diffusion]`
//! are required; the remaining sections fall back to documented defaults.
//!
//! ```toml
//! [system]
//! n = 2
//! m = 1
//! D = [[1.0, 0.0], [0.0, 2.0]]
//! A = [[0.0, 0.0], [1.0, 0.0]]
//! B = [[1.0], [0.0]]
//! omega = [0.3, 0.8]
//! T = 0.5
//!
//! [diffusion]
//! kind = "power-law"
//! alpha = 0.5
//!
//! [grid]
//! nx = 2000
//! nt = 2000
//! grading = { kind = "power", gamma = 2.0 }
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    BoundaryRegime, DegeneracyClass, DiffusionCoefficient, DiffusionKind, Grading, GridSpec, Interval,
    SystemSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub omega: [f64; 2],
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<BoundaryRegime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSection {
    #[serde(flatten)]
    pub kind: DiffusionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<DegeneracyClass>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_nt")]
    pub nt: usize,
    #[serde(default = "default_grading")]
    pub grading: Grading,
}

fn default_nx() -> usize {
    GridSpec::default().nx
}
fn default_nt() -> usize {
    GridSpec::default().nt
}
fn default_grading() -> Grading {
    Grading::Uniform
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: default_nx(),
            nt: default_nt(),
            grading: default_grading(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub modes: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { modes: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanSection {
    /// Scan horizon `P_max`.
    pub modes: usize,
    /// Relative singular value threshold.
    pub tol: f64,
    /// Mode used by the `witness` subcommand; the first deficient mode
    /// when absent.
    pub witness_mode: Option<usize>,
}

impl Default for KalmanSection {
    fn default() -> Self {
        Self {
            modes: 100,
            tol: 1e-8,
            witness_mode: None,
        }
    }
}

/// One term `amplitude * Phi_mode * e_component` of the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialTerm {
    pub component: usize,
    pub mode: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub modes: usize,
    pub project_out_deficient: bool,
    pub initial: Vec<InitialTerm>,
    /// Snapshot stride of the `simulate` subcommand.
    pub stride: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            modes: 16,
            project_out_deficient: false,
            initial: vec![InitialTerm {
                component: 1,
                mode: 1,
                amplitude: 1.0,
            }],
            stride: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanSection {
    /// Region `omega_0` holding the critical points of `sigma`.
    pub omega0: Option<[f64; 2]>,
    /// Lower end of the `s` grid; the natural scale of the weights when
    /// absent.
    pub s_min: Option<f64>,
    pub s_points: usize,
    /// Number of random initial data.
    pub samples: usize,
    /// Potential `c` in `u_t - (a u_x)_x + c u = f`.
    pub potential: f64,
}

impl Default for CarlemanSection {
    fn default() -> Self {
        Self {
            omega0: None,
            s_min: None,
            s_points: 8,
            samples: 5,
            potential: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub system: SystemSection,
    pub diffusion: DiffusionSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub kalman: KalmanSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub carleman: CarlemanSection,
}

fn matrix(name: &str, rows: &[Vec<f64>], expect_rows: usize, expect_cols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != expect_rows || rows.iter().any(|r| r.len() != expect_cols) {
        let got_cols = rows.first().map(|r| r.len()).unwrap_or(0);
        return Err(Error::Shape(format!(
            "{name} must be {expect_rows}x{expect_cols}, got {}x{got_cols}{}",
            rows.len(),
            if rows.iter().any(|r| r.len() != got_cols) { " (ragged)" } else { "" }
        )));
    }
    Ok(DMatrix::from_fn(expect_rows, expect_cols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn coefficient(&self) -> Result<DiffusionCoefficient> {
        let inferred = DiffusionCoefficient::infer(self.diffusion.kind.clone())?;
        Ok(DiffusionCoefficient {
            class: self.diffusion.class.unwrap_or(inferred.class),
            k: self.diffusion.k.unwrap_or(inferred.k),
            theta_sd: self.diffusion.theta.or(inferred.theta_sd),
            kind: inferred.kind,
        })
    }

    /// Builds and validates the system described by the document.
    pub fn system_spec(&self) -> Result<SystemSpec> {
        let s = &self.system;
        if s.n == 0 || s.m == 0 {
            return Err(Error::Shape("n and m must be positive".into()));
        }
        // D and A are checked for squareness against their own row count
        // first so that a non-square matrix is reported as such.
        for (name, mat) in [("D", &s.d), ("A", &s.a)] {
            if mat.iter().any(|r| r.len() != mat.len()) {
                return Err(Error::Shape(format!("{name} is not square")));
            }
        }
        let d = matrix("D", &s.d, s.n, s.n)?;
        let a = matrix("A", &s.a, s.n, s.n)?;
        let b = matrix("B", &s.b, s.n, s.m)?;
        let coefficient = self.coefficient()?;
        let grid = GridSpec {
            nx: self.grid.nx,
            nt: self.grid.nt,
            grading: self.grid.grading,
        };
        SystemSpec::new(
            coefficient,
            d,
            a,
            b,
            Interval::new(s.omega[0], s.omega[1]),
            s.horizon,
            s.bc,
            grid,
        )
    }

    /// Document describing `spec` with default auxiliary sections.
    pub fn from_spec(spec: &SystemSpec) -> Self {
        Self {
            system: SystemSection {
                n: spec.n(),
                m: spec.m(),
                d: rows(&spec.d),
                a: rows(&spec.a),
                b: rows(&spec.b),
                omega: [spec.omega.lo, spec.omega.hi],
                horizon: spec.horizon,
                bc: Some(spec.bc),
            },
            diffusion: DiffusionSection {
                kind: spec.coefficient.kind.clone(),
                class: Some(spec.coefficient.class),
                k: Some(spec.coefficient.k),
                theta: spec.coefficient.theta_sd,
            },
            grid: GridSection {
                nx: spec.grid.nx,
                nt: spec.grid.nt,
                grading: spec.grid.grading,
            },
            spectrum: SpectrumSection::default(),
            kalman: KalmanSection::default(),
            control: ControlSection::default(),
            carleman: CarlemanSection::default(),
        }
    }
}

pub fn parse_problem_config(text: &str) -> Result<SystemSpec> {
    ConfigDocument::parse(text)?.system_spec()
}

pub fn emit_config(spec: &SystemSpec) -> Result<String> {
    ConfigDocument::from_spec(spec).to_toml()
}
