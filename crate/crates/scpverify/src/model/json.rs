//! JSON problem-file schema.
//!
//! This is the contract between the CLI and everything else:
//!
//! ```json
//! {
//!   "n": 2, "d": 2,
//!   "objective": {"P": [[...]], "K": [[...]], "c": [...]},
//!   "ineq": [...], "eq": [...],
//!   "discrete": {"binary": [0, 1]},
//!   "parameter_set": {"lower": [...], "upper": [...]},
//!   "schedule": [{"trust_region": {"rho_k": 0.2}}, ...],
//!   "init": {"cold": [0.0, 0.0]}
//! }
//! ```
//!
//! Matrices are row-major nested arrays, numbers are decimal doubles.

use super::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticFormFile {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub lin_x: Option<Vec<f64>>,
    #[serde(default)]
    pub constant: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineRowFile {
    pub a_z: Vec<f64>,
    pub a_x: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteFile {
    Binary(Vec<usize>),
    Sparsity(usize),
    PlusMinusOne(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSetFile {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub discrete_coords: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundTargetFile {
    Binary(Vec<usize>),
    Sparsity(usize),
    PlusMinusOne(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSpecFile {
    TrustRegion { rho_k: f64 },
    PenalizedCcp { tau_k: f64 },
    ProxLinear { rho: f64 },
    Relax { lambda: f64 },
    Round { target: RoundTargetFile },
    Polish {},
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSetFile {
    Cold(Vec<f64>),
    Warm(Vec<f64>),
    Omitted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositeFile {
    pub weight: f64,
    pub pieces: Vec<QuadraticFormFile>,
}

/// Whole problem file: problem data plus parameter set and schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub d: usize,
    pub objective: QuadraticFormFile,
    #[serde(default)]
    pub ineq: Vec<QuadraticFormFile>,
    #[serde(default)]
    pub eq: Vec<AffineRowFile>,
    #[serde(default)]
    pub discrete: Option<DiscreteFile>,
    #[serde(default)]
    pub composite: Option<CompositeFile>,
    pub parameter_set: ParameterSetFile,
    pub schedule: Vec<StepSpecFile>,
    pub init: InitialSetFile,
}

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("matrix at {0} is ragged or has wrong shape")]
    BadMatrix(String),
    #[error("vector at {0} has length {1}, expected {2}")]
    BadVector(String, usize, usize),
}

fn to_matrix(rows: &[Vec<f64>], nr: usize, nc: usize, loc: &str) -> Result<DMatrix<f64>, SchemaError> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(SchemaError::BadMatrix(loc.to_string()));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(nr, nc, &flat))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn to_vector(v: &[f64], len: usize, loc: &str) -> Result<DVector<f64>, SchemaError> {
    if v.len() != len {
        return Err(SchemaError::BadVector(loc.to_string(), v.len(), len));
    }
    Ok(DVector::from_row_slice(v))
}

impl QuadraticFormFile {
    fn to_form(&self, n: usize, d: usize, loc: &str) -> Result<QuadraticForm, SchemaError> {
        let lin_x = match &self.lin_x {
            Some(v) => to_vector(v, d, &format!("{loc}.lin_x"))?,
            None => DVector::zeros(d),
        };
        Ok(QuadraticForm {
            p: to_matrix(&self.p, n, n, &format!("{loc}.P"))?,
            k: to_matrix(&self.k, n, d, &format!("{loc}.K"))?,
            c: to_vector(&self.c, n, &format!("{loc}.c"))?,
            lin_x,
            constant: self.constant,
        })
    }

    fn from_form(form: &QuadraticForm) -> Self {
        QuadraticFormFile {
            p: from_matrix(&form.p),
            k: from_matrix(&form.k),
            c: form.c.iter().cloned().collect(),
            lin_x: Some(form.lin_x.iter().cloned().collect()),
            constant: form.constant,
        }
    }
}

impl ProblemFile {
    /// Convert the file representation into internal types.
    pub fn into_parts(
        &self,
    ) -> Result<(ParametricProblem, AlgorithmSchedule, ParameterSet), SchemaError> {
        let (n, d) = (self.n, self.d);
        let objective = self.objective.to_form(n, d, "objective")?;
        let ineq = self
            .ineq
            .iter()
            .enumerate()
            .map(|(i, g)| g.to_form(n, d, &format!("ineq[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let eq = self
            .eq
            .iter()
            .enumerate()
            .map(|(j, h)| {
                Ok(AffineRow {
                    a_z: to_vector(&h.a_z, n, &format!("eq[{j}].a_z"))?,
                    a_x: to_vector(&h.a_x, d, &format!("eq[{j}].a_x"))?,
                    b: h.b,
                })
            })
            .collect::<Result<Vec<_>, SchemaError>>()?;
        let discrete = self.discrete.as_ref().map(|df| match df {
            DiscreteFile::Binary(idx) => DiscreteConstraint::Binary(idx.clone()),
            DiscreteFile::Sparsity(k) => DiscreteConstraint::Sparsity(*k),
            DiscreteFile::PlusMinusOne(idx) => DiscreteConstraint::PlusMinusOne(idx.clone()),
        });
        let composite = match &self.composite {
            Some(cf) => Some(CompositeTerm {
                weight: cf.weight,
                pieces: cf
                    .pieces
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p.to_form(n, d, &format!("composite[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?,
            }),
            None => None,
        };
        let problem = ParametricProblem {
            n,
            d,
            objective,
            ineq,
            eq,
            discrete,
            composite,
        };

        let pset = ParameterSet {
            lower: to_vector(&self.parameter_set.lower, d, "parameter_set.lower")?,
            upper: to_vector(&self.parameter_set.upper, d, "parameter_set.upper")?,
            discrete_coords: self.parameter_set.discrete_coords.iter().cloned().collect(),
        };

        let steps = self
            .schedule
            .iter()
            .map(|s| match s {
                StepSpecFile::TrustRegion { rho_k } => StepSpec::TrustRegion { rho_k: *rho_k },
                StepSpecFile::PenalizedCcp { tau_k } => StepSpec::PenalizedCcp { tau_k: *tau_k },
                StepSpecFile::ProxLinear { rho } => StepSpec::ProxLinear { rho: *rho },
                StepSpecFile::Relax { lambda } => StepSpec::Relax { lambda: *lambda },
                StepSpecFile::Round { target } => StepSpec::Round {
                    target: match target {
                        RoundTargetFile::Binary(idx) => RoundTarget::Binary(idx.clone()),
                        RoundTargetFile::Sparsity(k) => RoundTarget::Sparsity(*k),
                        RoundTargetFile::PlusMinusOne(idx) => RoundTarget::PlusMinusOne(idx.clone()),
                    },
                },
                StepSpecFile::Polish {} => StepSpec::Polish,
            })
            .collect();
        let init = match &self.init {
            InitialSetFile::Cold(p) => InitialSet::Cold(to_vector(p, n, "init.cold")?),
            InitialSetFile::Warm(p) => InitialSet::Warm(to_vector(p, n, "init.warm")?),
            InitialSetFile::Omitted => InitialSet::Omitted,
        };
        Ok((problem, AlgorithmSchedule::new(steps, init), pset))
    }

    /// Build the file representation from internal types.
    pub fn from_parts(
        problem: &ParametricProblem,
        schedule: &AlgorithmSchedule,
        pset: &ParameterSet,
    ) -> Self {
        ProblemFile {
            n: problem.n,
            d: problem.d,
            objective: QuadraticFormFile::from_form(&problem.objective),
            ineq: problem.ineq.iter().map(QuadraticFormFile::from_form).collect(),
            eq: problem
                .eq
                .iter()
                .map(|h| AffineRowFile {
                    a_z: h.a_z.iter().cloned().collect(),
                    a_x: h.a_x.iter().cloned().collect(),
                    b: h.b,
                })
                .collect(),
            discrete: problem.discrete.as_ref().map(|dc| match dc {
                DiscreteConstraint::Binary(idx) => DiscreteFile::Binary(idx.clone()),
                DiscreteConstraint::Sparsity(k) => DiscreteFile::Sparsity(*k),
                DiscreteConstraint::PlusMinusOne(idx) => DiscreteFile::PlusMinusOne(idx.clone()),
            }),
            composite: problem.composite.as_ref().map(|c| CompositeFile {
                weight: c.weight,
                pieces: c.pieces.iter().map(QuadraticFormFile::from_form).collect(),
            }),
            parameter_set: ParameterSetFile {
                lower: pset.lower.iter().cloned().collect(),
                upper: pset.upper.iter().cloned().collect(),
                discrete_coords: pset.discrete_coords.iter().cloned().collect(),
            },
            schedule: schedule
                .steps
                .iter()
                .map(|s| match s {
                    StepSpec::TrustRegion { rho_k } => StepSpecFile::TrustRegion { rho_k: *rho_k },
                    StepSpec::PenalizedCcp { tau_k } => StepSpecFile::PenalizedCcp { tau_k: *tau_k },
                    StepSpec::ProxLinear { rho } => StepSpecFile::ProxLinear { rho: *rho },
                    StepSpec::Relax { lambda } => StepSpecFile::Relax { lambda: *lambda },
                    StepSpec::Round { target } => StepSpecFile::Round {
                        target: match target {
                            RoundTarget::Binary(idx) => RoundTargetFile::Binary(idx.clone()),
                            RoundTarget::Sparsity(k) => RoundTargetFile::Sparsity(*k),
                            RoundTarget::PlusMinusOne(idx) => {
                                RoundTargetFile::PlusMinusOne(idx.clone())
                            }
                        },
                    },
                    StepSpec::Polish => StepSpecFile::Polish {},
                })
                .collect(),
            init: match &schedule.init {
                InitialSet::Cold(p) => InitialSetFile::Cold(p.iter().cloned().collect()),
                InitialSet::Warm(p) => InitialSetFile::Warm(p.iter().cloned().collect()),
                InitialSet::Omitted => InitialSetFile::Omitted,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_problem() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let prob = crate::model::tests::box_qp(p);
        let schedule = AlgorithmSchedule::new(
            vec![StepSpec::TrustRegion { rho_k: 0.2 }],
            InitialSet::Cold(DVector::zeros(2)),
        );
        let pset = ParameterSet::box_set(
            DVector::from_row_slice(&[2.0, 2.0]),
            DVector::from_row_slice(&[4.0, 4.0]),
        );
        let file = ProblemFile::from_parts(&prob, &schedule, &pset);
        let text = serde_json::to_string_pretty(&file).unwrap();
        let parsed: ProblemFile = serde_json::from_str(&text).unwrap();
        let (p2, s2, x2) = parsed.into_parts().unwrap();
        assert_eq!(prob, p2);
        assert_eq!(schedule, s2);
        assert_eq!(pset, x2);
    }
}
