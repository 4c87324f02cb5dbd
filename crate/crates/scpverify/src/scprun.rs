//! Deterministic forward execution of SCP schedules and the sample-maximum
//! baseline.
//!
//! `run_schedule` walks an algorithm schedule at a concrete parameter value,
//! solving each step's convex QP with `qpcore` (or projecting, for rounding
//! steps) and recording everything the encoder later cross-checks.
//! `sample_maximum` runs many parameter samples in parallel and reports the
//! per-iteration maximum of a performance metric; it is the empirical lower
//! bound the verified worst case must dominate.

use crate::model::{
    eval_objective, eval_violation, AlgorithmSchedule, FixedProblem,
    ParametricProblem, ParameterSet, PerformanceMetric, StepSpec,
};
use crate::qpcore::{solve_qp, QpError, QpSolution, QpStatus, StandardQp};
use crate::steps::{
    build_ccp, build_polish, build_prox_linear, build_relax, build_trust_region, round_forward,
    AtomBoxes, AtomValues, StepError, SymQp,
};
use crate::interval::Interval;
use nalgebra::DVector;
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

/// Forward solve tolerance, fixed independently of any verified epsilon.
pub const FORWARD_TOL: f64 = 1e-9;
const FORWARD_MAX_ITER: usize = 200_000;

/// What one step produced, kept for encoder cross-checks.
#[derive(Debug, Clone)]
pub struct StepArtifacts {
    pub spec: StepSpec,
    /// Instantiated subproblem and its solution (QP-valued steps only).
    pub qp: Option<(StandardQp, QpSolution)>,
    /// Symbolic form the subproblem was instantiated from.
    pub sym: Option<SymQp>,
    /// Sparsity-round selection mask (empty otherwise).
    pub aux: Vec<f64>,
}

/// Record of a full forward run.
#[derive(Debug, Clone)]
pub struct IterateTrace {
    /// Iterates z^0 ... z^K, or z^1 ... z^K when the schedule has no
    /// initial point.
    pub iterates: Vec<DVector<f64>>,
    /// Whether `iterates[0]` is the initial point.
    pub has_initial: bool,
    pub steps: Vec<StepArtifacts>,
    /// Objective value per stored iterate.
    pub objectives: Vec<f64>,
    /// Squared l2 constraint violation per stored iterate.
    pub violations: Vec<f64>,
}

impl IterateTrace {
    pub fn final_iterate(&self) -> &DVector<f64> {
        self.iterates.last().expect("trace holds at least one iterate")
    }

    /// JSON dump of iterates and per-iterate metric values.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "has_initial": self.has_initial,
            "iterates": self.iterates.iter().map(|z| z.as_slice().to_vec()).collect::<Vec<_>>(),
            "objectives": self.objectives,
            "violations": self.violations,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("step {index} subproblem is primal infeasible")]
    StepInfeasible {
        index: usize,
        /// Normalized Farkas certificate from the QP solver.
        certificate: Vec<f64>,
        /// Certificate value -b'y > 0 under the normalization 1'y <= 1.
        gamma: f64,
    },
    #[error("step {index} subproblem is unbounded below")]
    StepUnbounded { index: usize },
    #[error("step {index} QP solve hit the iteration limit")]
    MaxIter { index: usize },
    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: StepError,
    },
    #[error("step {index} solver failure: {source}")]
    Solver {
        index: usize,
        #[source]
        source: QpError,
    },
    #[error("schedule step {index} needs a previous iterate but the schedule has no initial point")]
    MissingInitialPoint { index: usize },
    #[error("suboptimality sampling needs a reference oracle")]
    MissingOracle,
}

/// Trivial atom boxes for forward instantiation: bounds are not consumed on
/// this path, only the instantiated data is.
fn forward_boxes(x: &DVector<f64>, prev: Option<&DVector<f64>>, aux_len: usize) -> AtomBoxes {
    AtomBoxes {
        x: x.iter().map(|&v| Interval::point(v)).collect(),
        prev: match prev {
            Some(z) => z.iter().map(|&v| Interval::point(v)).collect(),
            None => vec![],
        },
        aux: vec![Interval::new(0.0, 1.0); aux_len],
    }
}

fn build_sym(
    spec: &StepSpec,
    problem: &ParametricProblem,
    boxes: &AtomBoxes,
    iterate_box: &[Interval],
) -> Result<Option<SymQp>, StepError> {
    Ok(match spec {
        StepSpec::TrustRegion { rho_k } => {
            Some(build_trust_region(problem, *rho_k, boxes, iterate_box)?)
        }
        StepSpec::PenalizedCcp { tau_k } => Some(build_ccp(problem, *tau_k, boxes, iterate_box)?),
        StepSpec::ProxLinear { rho } => Some(build_prox_linear(problem, *rho, boxes, iterate_box)?),
        StepSpec::Relax { lambda } => Some(build_relax(problem, *lambda, boxes, iterate_box)?),
        StepSpec::Polish => Some(build_polish(problem, boxes, iterate_box)?),
        StepSpec::Round { .. } => None,
    })
}

/// Apply one step at a concrete parameter value. `z_k` is the previous
/// iterate (ignored by Relax), `aux` the selection mask carried from a
/// preceding sparsity round.
pub fn apply_step(
    spec: &StepSpec,
    problem: &ParametricProblem,
    z_k: Option<&DVector<f64>>,
    x: &DVector<f64>,
    aux: &[f64],
    index: usize,
) -> Result<(DVector<f64>, StepArtifacts), RunError> {
    if let StepSpec::Round { target } = spec {
        let prev = z_k.ok_or(RunError::MissingInitialPoint { index })?;
        let (z_next, mask) = round_forward(target, prev);
        return Ok((
            z_next,
            StepArtifacts { spec: spec.clone(), qp: None, sym: None, aux: mask },
        ));
    }
    let needs_prev = !matches!(spec, StepSpec::Relax { .. });
    if needs_prev && z_k.is_none() {
        return Err(RunError::MissingInitialPoint { index });
    }

    let boxes = forward_boxes(x, z_k, aux.len());
    let iterate_box = vec![Interval::whole(); problem.n];
    let sym = build_sym(spec, problem, &boxes, &iterate_box)
        .map_err(|source| RunError::Step { index, source })?
        .expect("non-round step builds a QP");
    let qp = sym.instantiate(&AtomValues { x, prev: z_k, aux });
    let sol = solve_qp(&qp, FORWARD_TOL, FORWARD_MAX_ITER)
        .map_err(|source| RunError::Solver { index, source })?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::PrimalInfeasible => {
            let scale = sol.y.iter().sum::<f64>().max(1.0);
            let cert: Vec<f64> = sol.y.iter().map(|v| v / scale).collect();
            let gamma = -qp
                .b
                .iter()
                .zip(&cert)
                .map(|(b, y)| b * y)
                .sum::<f64>();
            return Err(RunError::StepInfeasible { index, certificate: cert, gamma });
        }
        QpStatus::DualInfeasible => return Err(RunError::StepUnbounded { index }),
        QpStatus::MaxIter => return Err(RunError::MaxIter { index }),
    }
    let z_next = sym.extract_next(&sol.u, z_k);
    Ok((
        z_next,
        StepArtifacts { spec: spec.clone(), qp: Some((qp, sol)), sym: Some(sym), aux: vec![] },
    ))
}

/// Run a full schedule at a concrete parameter value.
pub fn run_schedule(
    problem: &ParametricProblem,
    schedule: &AlgorithmSchedule,
    x: &DVector<f64>,
) -> Result<IterateTrace, RunError> {
    let mut iterates: Vec<DVector<f64>> = Vec::with_capacity(schedule.k() + 1);
    let mut prev: Option<DVector<f64>> = schedule.init.point().cloned();
    let has_initial = prev.is_some();
    if let Some(z0) = &prev {
        iterates.push(z0.clone());
    }
    let mut steps = Vec::with_capacity(schedule.k());
    let mut aux: Vec<f64> = vec![];
    for (index, spec) in schedule.steps.iter().enumerate() {
        let (z_next, art) = apply_step(spec, problem, prev.as_ref(), x, &aux, index)?;
        aux = art.aux.clone();
        iterates.push(z_next.clone());
        steps.push(art);
        prev = Some(z_next);
    }
    let objectives: Vec<f64> = iterates
        .iter()
        .map(|z| eval_objective(problem, z, x).expect("trace dims are validated"))
        .collect();
    let violations: Vec<f64> = iterates
        .iter()
        .map(|z| eval_violation(problem, z, x).expect("trace dims are validated"))
        .collect();
    Ok(IterateTrace { iterates, has_initial, steps, objectives, violations })
}

/// Reference optimal-value oracle used by suboptimality sampling.
pub type OptOracle<'a> = &'a (dyn Fn(&FixedProblem) -> f64 + Sync);

/// Per-iteration maximum of a sampled metric.
#[derive(Debug, Clone, Serialize)]
pub struct IterationMax {
    pub iteration: usize,
    pub value: f64,
    pub argmax_x: Vec<f64>,
}

/// Result of the sample-maximum baseline.
#[derive(Debug, Clone, Serialize)]
pub struct SampleMaxReport {
    pub num_samples: usize,
    pub seed: u64,
    pub per_iteration: Vec<IterationMax>,
    /// Samples whose run failed (infeasible step, solver limit); their
    /// Farkas gamma still feeds the feasibility metric.
    pub failed_samples: usize,
}

impl SampleMaxReport {
    /// Maximum metric value at the final iteration.
    pub fn final_max(&self) -> f64 {
        self.per_iteration.last().map(|m| m.value).unwrap_or(0.0)
    }

    /// CSV curve `iteration,value` mirroring the per-iteration maxima.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,value\n");
        for m in &self.per_iteration {
            out.push_str(&format!("{},{:.17e}\n", m.iteration, m.value));
        }
        out
    }
}

/// Draw a uniform sample from the parameter set; discrete coordinates take
/// an endpoint with equal probability.
pub fn sample_parameter(pset: &ParameterSet, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(pset.d(), |j, _| {
        if pset.discrete_coords.contains(&j) {
            if rng.gen_bool(0.5) {
                pset.upper[j]
            } else {
                pset.lower[j]
            }
        } else if pset.lower[j] == pset.upper[j] {
            pset.lower[j]
        } else {
            Uniform::new_inclusive(pset.lower[j], pset.upper[j]).sample(rng)
        }
    })
}

/// Metric value of a single iterate. `f_star` is the reference optimal
/// value (suboptimality only).
fn metric_at(
    problem: &ParametricProblem,
    metric: PerformanceMetric,
    z: &DVector<f64>,
    x: &DVector<f64>,
    f_star: Option<f64>,
) -> f64 {
    match metric {
        PerformanceMetric::Suboptimality => {
            eval_objective(problem, z, x).expect("validated dims")
                - f_star.expect("oracle value present")
        }
        PerformanceMetric::ViolationSquaredL2 => {
            eval_violation(problem, z, x).expect("validated dims")
        }
        // Feasibility gamma is zero along a completed trace; positive
        // values come from infeasible steps and are handled by the caller.
        PerformanceMetric::SubproblemFeasibility => 0.0,
    }
}

struct SampleOutcome {
    x: Vec<f64>,
    /// Metric value per iteration index (aligned with iterate positions
    /// past the initial point).
    values: Vec<f64>,
    failed: bool,
}

/// Sample-maximum baseline: per-iteration max of the metric over uniform
/// parameter samples. Samples run in parallel; the reduction is ordered by
/// sample index, so the report is identical across thread counts.
pub fn sample_maximum(
    problem: &ParametricProblem,
    schedule: &AlgorithmSchedule,
    pset: &ParameterSet,
    metric: PerformanceMetric,
    num_samples: usize,
    seed: u64,
    oracle: Option<OptOracle>,
) -> Result<SampleMaxReport, RunError> {
    if metric == PerformanceMetric::Suboptimality && oracle.is_none() {
        return Err(RunError::MissingOracle);
    }
    let k_steps = schedule.k();
    let outcomes: Vec<SampleOutcome> = crate::par::map_indexed(num_samples, |i| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let x = sample_parameter(pset, &mut rng);
        let f_star = if metric == PerformanceMetric::Suboptimality {
            let fixed = crate::model::substitute_parameter(problem, &x).expect("validated dims");
            Some(oracle.expect("checked above")(&fixed))
        } else {
            None
        };
        match run_schedule(problem, schedule, &x) {
            Ok(trace) => {
                // Skip the initial point so index k matches "after step k+1".
                let start = usize::from(trace.has_initial);
                let values: Vec<f64> = trace.iterates[start..]
                    .iter()
                    .map(|z| metric_at(problem, metric, z, &x, f_star))
                    .collect();
                SampleOutcome { x: x.as_slice().to_vec(), values, failed: false }
            }
            Err(RunError::StepInfeasible { index, gamma, .. }) => {
                // Later iterations inherit the infeasibility signal.
                let mut values = vec![0.0; index];
                values.resize(k_steps, gamma.max(0.0));
                let failed = metric != PerformanceMetric::SubproblemFeasibility;
                SampleOutcome { x: x.as_slice().to_vec(), values, failed }
            }
            Err(_) => SampleOutcome { x: x.as_slice().to_vec(), values: vec![], failed: true },
        }
    });

    let mut per_iteration: Vec<IterationMax> = Vec::with_capacity(k_steps);
    let mut failed_samples = 0usize;
    for out in &outcomes {
        if out.failed {
            failed_samples += 1;
        }
    }
    for k in 0..k_steps {
        let mut best: Option<(f64, &SampleOutcome)> = None;
        for out in &outcomes {
            if let Some(&v) = out.values.get(k) {
                match best {
                    Some((bv, _)) if bv >= v => {}
                    _ => best = Some((v, out)),
                }
            }
        }
        if let Some((value, out)) = best {
            per_iteration.push(IterationMax { iteration: k + 1, value, argmax_x: out.x.clone() });
        }
    }
    Ok(SampleMaxReport { num_samples, seed, per_iteration, failed_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiscreteConstraint, InitialSet, QuadraticForm, RoundTarget};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    /// Knapsack-style relaxed problem: min -x'z with hard box [0,1] and
    /// concave binary-indicator rows z_i - z_i^2 <= 0.
    fn knapsack_relaxed(n: usize, cap_row: Option<(Vec<f64>, f64)>) -> ParametricProblem {
        let mut ineq = Vec::new();
        for i in 0..n {
            // z_i - z_i^2 <= 0
            let mut p = DMatrix::zeros(n, n);
            p[(i, i)] = -2.0;
            let mut c = DVector::zeros(n);
            c[i] = 1.0;
            ineq.push(QuadraticForm::new(p, DMatrix::zeros(n, n), c));
            // box rows z_i <= 1 and -z_i <= 0
            let mut c = DVector::zeros(n);
            c[i] = 1.0;
            ineq.push(
                QuadraticForm::linear(n, DMatrix::zeros(n, n), c)
                    .with_offset(DVector::zeros(n), -1.0),
            );
            let mut c = DVector::zeros(n);
            c[i] = -1.0;
            ineq.push(QuadraticForm::linear(n, DMatrix::zeros(n, n), c));
        }
        if let Some((a, b)) = cap_row {
            ineq.push(
                QuadraticForm::linear(n, DMatrix::zeros(n, n), dvec(&a))
                    .with_offset(DVector::zeros(n), -b),
            );
        }
        ParametricProblem {
            n,
            d: n,
            objective: QuadraticForm::linear(n, -DMatrix::identity(n, n), DVector::zeros(n)),
            ineq,
            eq: vec![],
            discrete: None,
            composite: None,
        }
    }

    #[test]
    fn ccp_step_slacks_absorb_binary_rows() {
        // z_k = (0.5, 0.5), tau = 0.01, x = (1, 1). The linearized binary
        // rows reduce to s_i >= 1/4 and the tiny penalty lets the
        // objective pull z to the box corner: z1 = (1, 1), s = 1/4.
        let problem = knapsack_relaxed(2, None);
        let spec = StepSpec::PenalizedCcp { tau_k: 0.01 };
        let zk = dvec(&[0.5, 0.5]);
        let x = dvec(&[1.0, 1.0]);
        let (z1, art) = apply_step(&spec, &problem, Some(&zk), &x, &[], 0).unwrap();
        assert_relative_eq!(z1[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(z1[1], 1.0, epsilon = 1e-6);
        let (_, sol) = art.qp.as_ref().unwrap();
        // slack block follows the two z coordinates
        assert_relative_eq!(sol.u[2], 0.25, epsilon = 1e-6);
        assert_relative_eq!(sol.u[3], 0.25, epsilon = 1e-6);
    }

    #[test]
    fn k0_schedule_trace_is_initial_point() {
        let problem = knapsack_relaxed(2, None);
        let schedule = AlgorithmSchedule::new(vec![], InitialSet::Cold(dvec(&[0.5, 0.5])));
        let trace = run_schedule(&problem, &schedule, &dvec(&[1.0, 1.0])).unwrap();
        assert_eq!(trace.iterates.len(), 1);
        assert!(trace.has_initial);
    }

    #[test]
    fn deterministic_traces() {
        let problem = knapsack_relaxed(3, Some((vec![1.0, 1.0, 1.0], 1.5)));
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::PenalizedCcp { tau_k: 1.0 },
                StepSpec::PenalizedCcp { tau_k: 2.0 },
            ],
            InitialSet::Cold(DVector::from_element(3, 0.5)),
        );
        let x = dvec(&[5.0, 3.0, 4.0]);
        let a = run_schedule(&problem, &schedule, &x).unwrap();
        let b = run_schedule(&problem, &schedule, &x).unwrap();
        assert_eq!(a.iterates, b.iterates);
        assert_eq!(a.objectives, b.objectives);
    }

    #[test]
    fn trust_region_feasibility_preserving() {
        // Convex box QP: every trust-region iterate stays feasible.
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let problem = crate::model::tests::box_qp(p);
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::TrustRegion { rho_k: 0.3 },
                StepSpec::TrustRegion { rho_k: 0.3 },
                StepSpec::TrustRegion { rho_k: 0.3 },
            ],
            InitialSet::Cold(DVector::zeros(2)),
        );
        let x = dvec(&[2.0, -1.0]);
        let trace = run_schedule(&problem, &schedule, &x).unwrap();
        for v in &trace.violations {
            assert!(*v <= 1e-8, "violation {v} exceeds feasibility tolerance");
        }
        // Objective decreases toward the constrained optimum here.
        assert!(trace.objectives.last().unwrap() < &trace.objectives[0]);
    }

    #[test]
    fn relax_round_polish_binary() {
        // min -x'z, z binary, capacity z1 + z2 <= 1. Relaxation puts full
        // weight on the larger reward, rounding keeps it binary, polish
        // re-solves with the binary block pinned.
        let n = 2;
        let mut problem = knapsack_relaxed(n, Some((vec![1.0, 1.0], 1.0)));
        // drop the concave indicator rows: the relax path carries the
        // binary constraint in `discrete` instead
        problem.ineq.retain(|g| g.p.amax() == 0.0);
        problem.discrete = Some(DiscreteConstraint::Binary(vec![0, 1]));
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::Relax { lambda: 1.0 },
                StepSpec::Round { target: RoundTarget::Binary(vec![0, 1]) },
                StepSpec::Polish,
            ],
            InitialSet::Omitted,
        );
        let x = dvec(&[5.0, 2.0]);
        let trace = run_schedule(&problem, &schedule, &x).unwrap();
        assert!(!trace.has_initial);
        assert_eq!(trace.iterates.len(), 3);
        let z_final = trace.final_iterate();
        assert_relative_eq!(z_final[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(z_final[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn singleton_pset_sampling_matches_run() {
        let problem = knapsack_relaxed(2, None);
        let schedule = AlgorithmSchedule::new(
            vec![StepSpec::PenalizedCcp { tau_k: 1.0 }],
            InitialSet::Cold(dvec(&[0.5, 0.5])),
        );
        let x = dvec(&[2.0, 3.0]);
        let pset = ParameterSet::box_set(x.clone(), x.clone());
        let report = sample_maximum(
            &problem,
            &schedule,
            &pset,
            PerformanceMetric::ViolationSquaredL2,
            7,
            42,
            None,
        )
        .unwrap();
        let trace = run_schedule(&problem, &schedule, &x).unwrap();
        assert_eq!(report.per_iteration.len(), 1);
        assert_relative_eq!(report.final_max(), trace.violations[1], epsilon = 1e-12);
        assert_eq!(report.failed_samples, 0);
    }

    #[test]
    fn sampling_deterministic_across_runs() {
        let problem = knapsack_relaxed(3, Some((vec![1.0, 1.0, 1.0], 1.5)));
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::PenalizedCcp { tau_k: 1.0 },
                StepSpec::PenalizedCcp { tau_k: 2.0 },
            ],
            InitialSet::Cold(DVector::from_element(3, 0.5)),
        );
        let pset = ParameterSet::box_set(dvec(&[1.0, 1.0, 1.0]), dvec(&[6.0, 6.0, 6.0]));
        let a = sample_maximum(
            &problem,
            &schedule,
            &pset,
            PerformanceMetric::ViolationSquaredL2,
            24,
            7,
            None,
        )
        .unwrap();
        let b = sample_maximum(
            &problem,
            &schedule,
            &pset,
            PerformanceMetric::ViolationSquaredL2,
            24,
            7,
            None,
        )
        .unwrap();
        for (ma, mb) in a.per_iteration.iter().zip(&b.per_iteration) {
            assert_eq!(ma.value, mb.value);
            assert_eq!(ma.argmax_x, mb.argmax_x);
        }
    }

    #[test]
    fn knapsack_ccp_stalls_after_one_iteration() {
        // With a tiny penalty the subproblem ignores the indicator rows
        // and jumps to the same corner every iteration: the violation
        // curve is flat after iteration 1.
        let problem = knapsack_relaxed(3, Some((vec![1.0, 1.0, 1.0], 1.5)));
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::PenalizedCcp { tau_k: 1.0 },
                StepSpec::PenalizedCcp { tau_k: 1.0 },
                StepSpec::PenalizedCcp { tau_k: 1.0 },
            ],
            InitialSet::Cold(DVector::from_element(3, 0.5)),
        );
        let pset = ParameterSet::box_set(dvec(&[1.0, 1.0, 1.0]), dvec(&[6.0, 6.0, 6.0]));
        let report = sample_maximum(
            &problem,
            &schedule,
            &pset,
            PerformanceMetric::ViolationSquaredL2,
            50,
            3,
            None,
        )
        .unwrap();
        assert_eq!(report.per_iteration.len(), 3);
        let v: Vec<f64> = report.per_iteration.iter().map(|m| m.value).collect();
        assert!(v[0] > 0.0, "first-iteration violation should be positive, got {v:?}");
        assert_relative_eq!(v[1], v[2], epsilon = 1e-9);
    }

    #[test]
    fn suboptimality_requires_oracle() {
        let problem = knapsack_relaxed(2, None);
        let schedule = AlgorithmSchedule::new(
            vec![StepSpec::PenalizedCcp { tau_k: 1.0 }],
            InitialSet::Cold(dvec(&[0.5, 0.5])),
        );
        let pset = ParameterSet::box_set(dvec(&[1.0, 1.0]), dvec(&[2.0, 2.0]));
        let err = sample_maximum(
            &problem,
            &schedule,
            &pset,
            PerformanceMetric::Suboptimality,
            3,
            0,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, RunError::MissingOracle));
    }

    #[test]
    fn sample_parameter_respects_discrete_coords() {
        let mut pset = ParameterSet::box_set(dvec(&[0.0, -1.0]), dvec(&[1.0, 1.0]));
        pset.discrete_coords.insert(1);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..50 {
            let x = sample_parameter(&pset, &mut rng);
            assert!((0.0..=1.0).contains(&x[0]));
            assert!(x[1] == -1.0 || x[1] == 1.0);
        }
    }
}
