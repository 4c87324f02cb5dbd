//! Solving compiled verification programs, with forward-run incumbents and
//! the sequential multi-iteration strategy.
//!
//! The global solver only sees a program; this layer knows where the
//! program came from. Incumbents are generated by reading the parameter
//! block out of a node's LP point, snapping it into the parameter set, and
//! replaying the algorithm schedule: the resulting trace extends to a full
//! program-feasible assignment by construction. Sequential verification
//! solves iteration counts 0..K in order and reuses bounds proven on the
//! shared prefix variables (parameter, earlier iterates and their
//! subproblem blocks) as initial boxes for the next count.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DVector;

use crate::encoder::{
    assignment_from_trace, build_farkas, build_suboptimality, build_violation, Encoded,
    EncodeError, EncodeOptions,
};
use crate::interval::Interval;
use crate::model::{AlgorithmSchedule, ParameterSet, ParametricProblem, PerformanceMetric};
use crate::scprun::{apply_step, run_schedule, RunError};

use super::oracle::{reference_oracle, OracleOptions};
use super::{solve_global_with, GlobError, GlobalOptions, GlobalResult};

/// Result for one iteration count of [`verify_sequential`].
#[derive(Debug)]
pub struct SequentialEntry {
    pub k: usize,
    pub result: GlobalResult,
}

/// Read the parameter block out of an LP point and snap it into the
/// parameter set, respecting the node box (branching may have committed a
/// discrete coordinate to one endpoint already).
fn snap_x(
    meta_x: &[crate::encoder::program::VarId],
    vals: &[f64],
    bounds: &[Interval],
    pset: &ParameterSet,
) -> DVector<f64> {
    DVector::from_iterator(
        meta_x.len(),
        meta_x.iter().enumerate().map(|(j, id)| {
            let b = bounds[id.0];
            let v = b.clamp(vals[id.0]);
            if pset.discrete_coords.contains(&j) {
                let lo = pset.lower[j];
                let hi = pset.upper[j];
                match (b.contains_with_tol(lo, 1e-9), b.contains_with_tol(hi, 1e-9)) {
                    (true, false) => lo,
                    (false, true) => hi,
                    _ => {
                        if (v - lo).abs() <= (v - hi).abs() {
                            lo
                        } else {
                            hi
                        }
                    }
                }
            } else {
                v
            }
        }),
    )
}

fn cache_key(x: &DVector<f64>) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Solve a compiled program with forward-run incumbent completion.
pub fn solve_encoded(
    problem: &ParametricProblem,
    schedule: &AlgorithmSchedule,
    pset: &ParameterSet,
    encoded: &Encoded,
    gopts: &GlobalOptions,
) -> Result<GlobalResult, GlobError> {
    let meta = &encoded.meta;
    let prog = &encoded.prog;
    let mut opts = gopts.clone();
    for step in &meta.steps {
        for &y in &step.y {
            opts.cap_vars.push((y, prog.vars[y.0].hi));
        }
    }

    // reference optima for suboptimality incumbents, cached per parameter
    let oracle_opts = if meta.metric == PerformanceMetric::Suboptimality && !meta.z_star.is_empty()
    {
        let grid = match problem.n {
            0..=2 => 41,
            3 => 21,
            4 => 11,
            _ => 7,
        };
        Some(OracleOptions {
            grid,
            box_lo: Some(DVector::from_iterator(
                meta.z_star.len(),
                meta.z_star.iter().map(|id| prog.vars[id.0].lo),
            )),
            box_hi: Some(DVector::from_iterator(
                meta.z_star.len(),
                meta.z_star.iter().map(|id| prog.vars[id.0].hi),
            )),
            ..OracleOptions::default()
        })
    } else {
        None
    };
    let zstar_cache: Mutex<BTreeMap<Vec<u64>, Option<DVector<f64>>>> =
        Mutex::new(BTreeMap::new());
    let zstar_for = |x: &DVector<f64>| -> Option<DVector<f64>> {
        let oo = oracle_opts.as_ref()?;
        let key = cache_key(x);
        if let Some(hit) = zstar_cache.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let res = reference_oracle(problem, x, oo).ok().map(|(_, z)| z);
        zstar_cache.lock().unwrap().insert(key, res.clone());
        res
    };

    let hint = |vals: &[f64], bounds: &[Interval]| -> Option<Vec<f64>> {
        let x = snap_x(&meta.x, vals, bounds, pset);
        match meta.metric {
            PerformanceMetric::Suboptimality | PerformanceMetric::ViolationSquaredL2 => {
                let trace = run_schedule(problem, schedule, &x).ok()?;
                let zs;
                let zstar = if meta.z_star.is_empty() {
                    None
                } else {
                    zs = zstar_for(&x).unwrap_or_else(|| trace.final_iterate().clone());
                    Some(&zs)
                };
                Some(assignment_from_trace(encoded, &x, &trace, zstar))
            }
            PerformanceMetric::SubproblemFeasibility => {
                let kk = schedule.k();
                let pre = schedule.prefix(kk - 1);
                let trace = run_schedule(problem, &pre, &x).ok()?;
                let mut vals = assignment_from_trace(encoded, &x, &trace, None);
                // y = 0 is always feasible (gamma 0); an infeasible final
                // step upgrades it to a positive certificate
                let prev = trace.iterates.last();
                let aux = trace.steps.last().map(|s| s.aux.clone()).unwrap_or_default();
                if let Err(RunError::StepInfeasible { certificate, .. }) =
                    apply_step(&schedule.steps[kk - 1], problem, prev, &x, &aux, kk - 1)
                {
                    for (id, y) in meta.farkas_y.iter().zip(&certificate) {
                        vals[id.0] = y.clamp(0.0, 1.0);
                    }
                }
                Some(vals)
            }
        }
    };

    solve_global_with(prog, &opts, Some(&hint))
}

/// Solve the verification problem for every iteration count up to `k_max`,
/// reusing bounds proven on shared prefix variables between counts.
pub fn verify_sequential(
    problem: &ParametricProblem,
    schedule: &AlgorithmSchedule,
    pset: &ParameterSet,
    metric: PerformanceMetric,
    eopts: &EncodeOptions,
    k_max: usize,
    gopts: &GlobalOptions,
) -> Result<Vec<SequentialEntry>, GlobError> {
    let k_max = k_max.min(schedule.k());
    let k_min = match metric {
        PerformanceMetric::SubproblemFeasibility => 1,
        _ if schedule.init.point().is_some() => 0,
        _ => 1,
    };
    let mut learned: HashMap<String, Interval> = HashMap::new();
    let mut entries = Vec::new();
    for k in k_min..=k_max {
        let prefix = schedule.prefix(k);
        let built = match metric {
            PerformanceMetric::Suboptimality => {
                build_suboptimality(problem, &prefix, pset, eopts)
            }
            PerformanceMetric::ViolationSquaredL2 => {
                build_violation(problem, &prefix, pset, eopts)
            }
            PerformanceMetric::SubproblemFeasibility => {
                build_farkas(problem, &prefix, pset, eopts)
            }
        };
        let mut encoded = match built {
            Ok(e) => e,
            // a rounding step cannot sit at the verified position; the
            // next count may work again
            Err(EncodeError::FarkasFinalStepNotAffine) => continue,
            Err(e) => return Err(e.into()),
        };

        // inject prefix bounds proven at earlier counts
        let updates: Vec<(usize, Interval)> = encoded
            .prog
            .vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                learned
                    .get(&v.name)
                    .map(|b| (i, Interval::new(v.lo, v.hi).intersect(b)))
            })
            .collect();
        for (i, b) in updates {
            encoded
                .prog
                .set_bound(crate::encoder::program::VarId(i), b);
        }

        let result = solve_encoded(problem, &prefix, pset, &encoded, gopts)?;

        // harvest bounds on variables whose meaning is identical at count
        // k+1: the parameter, all but the last iterate, all but the last
        // step block
        let meta = &encoded.meta;
        let mut safe: Vec<crate::encoder::program::VarId> = meta.x.clone();
        if meta.z.len() > 1 {
            for ids in &meta.z[..meta.z.len() - 1] {
                safe.extend(ids.iter().copied());
            }
        }
        if meta.steps.len() > 1 {
            for st in &meta.steps[..meta.steps.len() - 1] {
                safe.extend(st.u.iter().copied());
                safe.extend(st.s.iter().copied());
                safe.extend(st.y.iter().copied());
            }
        }
        for id in safe {
            let name = encoded.prog.vars[id.0].name.clone();
            let b = result.root_bounds[id.0];
            learned
                .entry(name)
                .and_modify(|e| *e = e.intersect(&b))
                .or_insert(b);
        }

        entries.push(SequentialEntry { k, result });
    }
    Ok(entries)
}
