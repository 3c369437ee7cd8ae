//! Randomized trial harnesses that check the planner's guarantees on
//! synthetic models. Each returns per-trial rows plus a summary so callers
//! can both assert and export.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, check_filter_condition, lemma1_check, AnalysisError};
use crate::domain::{Incident, RecoveryState};
use crate::hallucination::{estimate_from_samples, EstimateError};
use crate::model::{build_synthetic, FixedLatencyModel, ModelError, SyntheticConfig, SyntheticModel};
use crate::planner::{PlanError, Planner, PlannerConfig};
use crate::stream::{RandomStream, StreamPurpose};

/// Placeholder incident for harnesses whose models ignore the incident.
pub fn blank_incident() -> Incident {
    Incident {
        id: "synthetic".into(),
        system_description: "synthetic recovery model".into(),
        logs: vec!["synthetic".into()],
        summary: None,
        iocs: vec![],
        enrichment: vec![],
        ground_truth: None,
    }
}

/// A random synthetic configuration: 2 to 12 actions, up to half of them
/// hallucinated, random proposal weights and the given mixing weight.
pub fn random_config(stream: &mut RandomStream, lambda: f64) -> SyntheticConfig {
    let n_actions = stream.random_range(2..=12usize);
    let max_halluc = n_actions / 2;
    let halluc = stream.random_range(0..=max_halluc);
    let weights: Vec<f64> = (0..n_actions).map(|_| stream.random_range(0.1..1.0)).collect();
    SyntheticConfig {
        n_actions,
        hallucinated_fraction: halluc as f64 / n_actions as f64,
        unnecessary_fraction: 0.0,
        kernel_mixing_lambda: lambda,
        progress_bias: 1.0,
        seed: stream.random(),
        proposal_weights: Some(weights),
    }
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Row {
    pub trial: usize,
    pub model_seed: u64,
    pub n_actions: usize,
    pub lambda: f64,
    /// Empty when every action is hallucinated.
    pub delta: Option<f64>,
    pub eta: f64,
    pub j_inf_norm: f64,
    pub j_tilde_inf_norm: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Summary {
    pub trials: usize,
    pub solvable: usize,
    pub held: usize,
    /// Largest `lhs - rhs` seen; at most the slack when every trial held.
    pub worst_excess: f64,
    pub rows: Vec<Lemma1Row>,
}

/// Draws `trials` models with mixing weight uniform in `[0, max_lambda]` and
/// checks `|J~ - J| <= eta |J~| |J| + slack` on each solvable one.
pub fn lemma1_suite(trials: usize, max_lambda: f64, slack: f64, seed: u64) -> Lemma1Summary {
    let mut rows = Vec::with_capacity(trials);
    let mut worst_excess = f64::NEG_INFINITY;
    for trial in 0..trials {
        let mut stream = RandomStream::derive(seed, StreamPurpose::Trial, &[1, trial as u64]);
        let lambda = stream.random_range(0.0..=max_lambda);
        let config = random_config(&mut stream, lambda);
        let Ok(model) = build_synthetic(&config) else { continue };
        let Ok(report) = lemma1_check(&model) else { continue };
        let j = analysis::true_time_to_go(&model).expect("solvable after the check");
        let j_tilde = analysis::model_time_to_go(&model).expect("solvable after the check");
        worst_excess = worst_excess.max(report.lhs - report.rhs);
        rows.push(Lemma1Row {
            trial,
            model_seed: config.seed,
            n_actions: config.n_actions,
            lambda,
            delta: analysis::compute_delta(&model, &j).ok(),
            eta: model.eta,
            j_inf_norm: j.inf_norm(),
            j_tilde_inf_norm: j_tilde.inf_norm(),
            lhs: report.lhs,
            rhs: report.rhs,
            holds: report.lhs <= report.rhs + slack,
        });
    }
    Lemma1Summary {
        trials,
        solvable: rows.len(),
        held: rows.iter().filter(|r| r.holds).count(),
        worst_excess,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Row {
    pub trial: usize,
    pub lambda: f64,
    pub delta: f64,
    pub rhs: f64,
    pub decision_points: usize,
    /// Decision points whose candidate set had a non-hallucinated action.
    pub eligible: usize,
    pub selected_non_hallucinated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Summary {
    pub models_drawn: usize,
    pub models_accepted: usize,
    pub eligible: usize,
    pub selected_non_hallucinated: usize,
    pub rows: Vec<Prop1Row>,
}

/// Draws models with small mixing weights, keeps those meeting the filter
/// condition, and counts how often the exact planner picks a
/// non-hallucinated action when one is on offer. Every non-terminal state
/// is a decision point, with candidates drawn at `n_candidates` each.
pub fn prop1_suite(models: usize, n_candidates: usize, seed: u64) -> Result<Prop1Summary, PlanError> {
    let incident = blank_incident();
    let mut rows = Vec::with_capacity(models);
    let mut drawn = 0;
    while rows.len() < models && drawn < models * 50 {
        let trial = drawn;
        drawn += 1;
        let mut stream = RandomStream::derive(seed, StreamPurpose::Trial, &[2, trial as u64]);
        let lambda = 10f64.powf(stream.random_range(-8.0..-3.0));
        let config = random_config(&mut stream, lambda);
        if config.hallucinated_count() == 0 {
            continue;
        }
        let Ok(model) = build_synthetic(&config) else { continue };
        let Ok(report) = check_filter_condition(&model) else { continue };
        if !report.holds {
            continue;
        }
        let planner = Planner::new(
            &model,
            &incident,
            PlannerConfig {
                n_candidates,
                exact_expectation: true,
                seed: trial as u64,
                max_parallel: 1,
                ..Default::default()
            },
        )?;
        let mut row = Prop1Row {
            trial,
            lambda,
            delta: report.delta,
            rhs: report.rhs,
            decision_points: 0,
            eligible: 0,
            selected_non_hallucinated: 0,
        };
        for state in RecoveryState::all().filter(|s| !s.is_terminal()) {
            let decision = planner.decide(state.index(), state, &[])?;
            row.decision_points += 1;
            let halluc = |e: &crate::planner::CandidateEvaluation| {
                model.resolve(&e.action).is_none_or(|id| model.hallucinated[id])
            };
            if decision.evaluations.iter().any(|e| !halluc(e)) {
                row.eligible += 1;
                if !halluc(decision.selected_evaluation()) {
                    row.selected_non_hallucinated += 1;
                }
            }
        }
        rows.push(row);
    }
    Ok(Prop1Summary {
        models_drawn: drawn,
        models_accepted: rows.len(),
        eligible: rows.iter().map(|r| r.eligible).sum(),
        selected_non_hallucinated: rows.iter().map(|r| r.selected_non_hallucinated).sum(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Summary {
    pub true_rate: f64,
    pub samples_per_trial: usize,
    pub epsilon: f64,
    pub trials: usize,
    /// Trials with `h >= h̄ + eps`.
    pub exceedances: usize,
    pub empirical_probability: f64,
    pub hoeffding_bound: f64,
}

/// Builds a model with `hallucinated` of `n_actions` actions hallucinated
/// under a uniform proposal, estimates the rate from `l` samples in each
/// trial, and counts how often the truth exceeds the estimate by `eps`.
pub fn prop2_trials(
    n_actions: usize,
    hallucinated: usize,
    l: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<Prop2Summary, EstimateError> {
    let model = build_synthetic(&SyntheticConfig {
        n_actions,
        hallucinated_fraction: hallucinated as f64 / n_actions as f64,
        unnecessary_fraction: 0.0,
        seed,
        ..Default::default()
    })?;
    let true_rate = model.hallucination_probability(RecoveryState::INITIAL);
    let incident = blank_incident();
    let mut exceedances = 0;
    for trial in 0..trials {
        let mut stream = RandomStream::derive(seed, StreamPurpose::Estimate, &[trial as u64]);
        let est = estimate_from_samples(&model, &model, &incident, l, 0.5, &mut stream)?;
        // integer form of h >= h̄ + eps, free of rounding in h - eps
        let threshold = (true_rate - epsilon) * l as f64;
        if (est.hallucinated_count as f64) <= threshold + 1e-9 {
            exceedances += 1;
        }
    }
    Ok(Prop2Summary {
        true_rate,
        samples_per_trial: l,
        epsilon,
        trials,
        exceedances,
        empirical_probability: exceedances as f64 / trials as f64,
        hoeffding_bound: crate::hallucination::hoeffding_failure_bound(epsilon, l),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub n_candidates: usize,
    pub selections: usize,
    pub hallucinated_selected: usize,
    pub rate: f64,
    /// Standard error of `rate` under the reference rate `p^N`.
    pub standard_error: f64,
    /// `p^N` with `p` the per-candidate hallucination probability.
    pub reference: f64,
}

/// Selected-action hallucination rate of the exact planner for each
/// candidate count, on one synthetic model, at the initial state.
pub fn selection_rates(model: &SyntheticModel, max_n: usize, selections: usize, seed: u64) -> Result<Vec<SelectionRow>, PlanError> {
    let incident = blank_incident();
    let p = model.hallucination_probability(RecoveryState::INITIAL);
    let mut rows = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let planner = Planner::new(
            model,
            &incident,
            PlannerConfig {
                n_candidates: n,
                exact_expectation: true,
                seed: seed.wrapping_add(n as u64),
                max_parallel: 1,
                ..Default::default()
            },
        )?;
        let mut hit = 0;
        for k in 0..selections {
            let d = planner.decide(k, RecoveryState::INITIAL, &[])?;
            let chosen = &d.selected_evaluation().action;
            if model.resolve(chosen).is_none_or(|id| model.hallucinated[id]) {
                hit += 1;
            }
        }
        let reference = p.powi(n as i32);
        rows.push(SelectionRow {
            n_candidates: n,
            selections,
            hallucinated_selected: hit,
            rate: hit as f64 / selections as f64,
            standard_error: (reference * (1.0 - reference) / selections as f64).sqrt(),
            reference,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_candidates: usize,
    pub parallel: bool,
    pub wall_ms: f64,
    pub queries: usize,
}

/// Wall time of one candidate-evaluation round against a model with fixed
/// query latency, one rollout per candidate.
pub fn scaling_round(latency: Duration, n_candidates: usize, parallel: bool) -> Result<ScalingRow, PlanError> {
    let model = FixedLatencyModel::new(latency);
    let incident = blank_incident();
    let planner = Planner::new(
        &model,
        &incident,
        PlannerConfig {
            n_candidates,
            m_samples: 1,
            max_parallel: if parallel { n_candidates } else { 1 },
            ..Default::default()
        },
    )?;
    let candidates = planner.propose(0, RecoveryState::INITIAL, &[])?;
    let start = Instant::now();
    planner.evaluate_candidates(0, RecoveryState::INITIAL, &candidates, &[])?;
    let wall = start.elapsed();
    Ok(ScalingRow {
        n_candidates,
        parallel,
        wall_ms: wall.as_secs_f64() * 1e3,
        queries: model.query_count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub trial: usize,
    pub state: usize,
    pub action: usize,
    pub exact_q: f64,
    pub sampled_q: f64,
    pub standard_error: f64,
    pub censored: usize,
    pub within: bool,
}

/// Compares the Monte-Carlo estimate with `m` rollouts against the exact
/// expectation on random (model, state, action) triples. The depth budget
/// is large enough that censoring does not bias the comparison.
pub fn mc_consistency(triples: usize, m: usize, max_lambda: f64, seed: u64) -> Result<Vec<ConsistencyRow>, PlanError> {
    let incident = blank_incident();
    let mut rows = Vec::with_capacity(triples);
    let mut trial = 0;
    while rows.len() < triples {
        let mut stream = RandomStream::derive(seed, StreamPurpose::Trial, &[3, trial as u64]);
        trial += 1;
        let lambda = stream.random_range(0.0..=max_lambda);
        let config = random_config(&mut stream, lambda);
        let model = match build_synthetic(&config) {
            Ok(m) => m,
            Err(ModelError::Construction(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let state = RecoveryState::from_index(stream.random_range(0..63usize)).expect("in range");
        let action_id = stream.random_range(0..model.n_actions());
        let action = model.action(action_id);
        let base = PlannerConfig {
            m_samples: m,
            max_rollout_depth: 100_000,
            max_parallel: 1,
            ..Default::default()
        };
        let exact = Planner::new(&model, &incident, PlannerConfig { exact_expectation: true, ..base.clone() })?;
        let sampled = Planner::new(&model, &incident, base)?;
        let exact_q = exact.estimate_q(state, &action, &[], &mut stream)?.q_estimate;
        let eval = sampled.estimate_q(state, &action, &[], &mut stream)?;
        let n = eval.rollout_lengths.len() as f64;
        let mean = eval.q_estimate;
        let var = eval.rollout_lengths.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = (var / n).sqrt();
        rows.push(ConsistencyRow {
            trial: trial - 1,
            state: state.index(),
            action: action_id,
            exact_q,
            sampled_q: mean,
            standard_error: se,
            censored: eval.censored_count,
            within: (mean - exact_q).abs() <= 3.0 * se,
        });
    }
    Ok(rows)
}

/// The value-analysis quantities of one synthetic model.
pub fn analyze(model: &SyntheticModel) -> Result<ModelAnalysis, AnalysisError> {
    let j = analysis::true_time_to_go(model)?;
    let j_tilde = analysis::model_time_to_go(model)?;
    Ok(ModelAnalysis {
        eta: model.eta,
        delta: analysis::compute_delta(model, &j)?,
        j_inf_norm: j.inf_norm(),
        j_tilde_inf_norm: j_tilde.inf_norm(),
        lemma1: lemma1_check(model)?,
        filter: check_filter_condition(model)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAnalysis {
    pub eta: f64,
    pub delta: f64,
    pub j_inf_norm: f64,
    pub j_tilde_inf_norm: f64,
    pub lemma1: analysis::Lemma1Report,
    pub filter: analysis::FilterConditionReport,
}
