//! Synthetic ground-truth response model.
//!
//! Every action carries a true kernel over the 64 recovery states and a
//! model kernel that the planner sees. Hallucinated actions are identity
//! kernels under the true dynamics. The model kernels are the true kernels
//! mixed with a uniform distribution over non-terminal states, which makes
//! the maximal row distance between the two (eta) a dial.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ExactKernels, ModelError, Proposal, QueryContext, ResponseModel, TransitionKernel};
use crate::analysis::{self, AnalysisError};
use crate::domain::{RecoveryState, ResponseAction, Stage, STATE_COUNT};
use crate::stream::{RandomStream, StreamPurpose};

/// A time-to-go change at or below this magnitude counts as zero.
pub const HALLUCINATION_TOLERANCE: f64 = 1e-9;

const MAX_BUILD_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_actions: usize,
    pub hallucinated_fraction: f64,
    pub unnecessary_fraction: f64,
    pub kernel_mixing_lambda: f64,
    /// Weight on stage completion; the remainder regresses one completed
    /// stage. Draws that stop improving the time-to-go are rejected.
    pub progress_bias: f64,
    pub seed: u64,
    /// State-independent action weights; uniform when absent.
    pub proposal_weights: Option<Vec<f64>>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_actions: 8,
            hallucinated_fraction: 0.25,
            unnecessary_fraction: 0.1,
            kernel_mixing_lambda: 0.0,
            progress_bias: 1.0,
            seed: 0,
            proposal_weights: None,
        }
    }
}

impl SyntheticConfig {
    pub fn hallucinated_count(&self) -> usize {
        (self.hallucinated_fraction * self.n_actions as f64).round() as usize
    }

    pub fn unnecessary_count(&self) -> usize {
        (self.unnecessary_fraction * self.n_actions as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Construction(msg));
        if self.n_actions == 0 {
            return bad("n_actions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.hallucinated_fraction) {
            return bad(format!("hallucinated_fraction {} not in [0, 1)", self.hallucinated_fraction));
        }
        if self.hallucinated_count() >= self.n_actions {
            return bad("no non-hallucinated action would remain".into());
        }
        if !(0.0..=1.0).contains(&self.unnecessary_fraction) {
            return bad(format!("unnecessary_fraction {} not in [0, 1]", self.unnecessary_fraction));
        }
        if !(0.0..=1.0).contains(&self.kernel_mixing_lambda) {
            return bad(format!("kernel_mixing_lambda {} not in [0, 1]", self.kernel_mixing_lambda));
        }
        if !(self.progress_bias > 0.0 && self.progress_bias <= 1.0) {
            return bad(format!("progress_bias {} not in (0, 1]", self.progress_bias));
        }
        if let Some(w) = &self.proposal_weights {
            if w.len() != self.n_actions {
                return bad("proposal_weights length differs from n_actions".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAction {
    pub text: String,
    /// Stages this action is most likely to complete.
    pub focus: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub actions: Vec<SyntheticAction>,
    pub true_kernels: Vec<TransitionKernel>,
    pub model_kernels: Vec<TransitionKernel>,
    pub proposal: Proposal,
    pub hallucinated: Vec<bool>,
    pub unnecessary: Vec<bool>,
    pub eta: f64,
    pub seed: u64,
}

const STAGE_PHRASES: [&str; 6] = [
    "Isolate the affected hosts from the network",
    "Triage alerts and scope the intrusion",
    "Capture memory and disk images for forensics",
    "Remove attacker persistence and malicious binaries",
    "Patch the exploited services and tighten firewall rules",
    "Restore services from verified clean backups",
];

const HALLUCINATED_PHRASES: [&str; 6] = [
    "Rename the incident ticket",
    "Update the login banner text",
    "Restart the print spooler on the admin workstation",
    "Send a generic security awareness reminder",
    "Re-run the antivirus definition update",
    "Archive last quarter's audit reports",
];

impl SyntheticModel {
    /// Assembles a model from explicit parts; eta is computed exactly.
    pub fn from_parts(
        actions: Vec<SyntheticAction>,
        true_kernels: Vec<TransitionKernel>,
        model_kernels: Vec<TransitionKernel>,
        proposal: Proposal,
        hallucinated: Vec<bool>,
        unnecessary: Vec<bool>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let n = actions.len();
        if n == 0
            || true_kernels.len() != n
            || model_kernels.len() != n
            || hallucinated.len() != n
            || unnecessary.len() != n
            || proposal.n_actions() != n
        {
            return Err(ModelError::Construction("per-action tables differ in length".into()));
        }
        for k in true_kernels.iter().chain(&model_kernels) {
            if k.size() != STATE_COUNT {
                return Err(ModelError::InvalidKernel(format!(
                    "kernel has {} states, expected {STATE_COUNT}",
                    k.size()
                )));
            }
            k.validate()?;
        }
        if proposal.n_states() != STATE_COUNT {
            return Err(ModelError::InvalidProposal("proposal must cover 64 states".into()));
        }
        let eta = analysis::compute_eta(&true_kernels, &model_kernels)
            .map_err(|e| ModelError::Construction(e.to_string()))?;
        Ok(SyntheticModel {
            actions,
            true_kernels,
            model_kernels,
            proposal,
            hallucinated,
            unnecessary,
            eta,
            seed,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, id: usize) -> ResponseAction {
        ResponseAction::synthetic(self.actions[id].text.clone(), id, self.unnecessary[id])
    }

    pub fn resolve(&self, action: &ResponseAction) -> Option<usize> {
        match action.synthetic_id {
            Some(id) if id < self.actions.len() => Some(id),
            _ => self.actions.iter().position(|a| a.text == action.text),
        }
    }

    /// Probability under the proposal that a sampled action is hallucinated
    /// at `state`.
    pub fn hallucination_probability(&self, state: RecoveryState) -> f64 {
        self.proposal
            .row(state.index())
            .iter()
            .zip(&self.hallucinated)
            .filter(|(_, h)| **h)
            .map(|(w, _)| w)
            .sum()
    }

    /// Whether the true dynamics can move `state` under `action`. Unknown
    /// actions have no effect.
    pub fn changes_true_state(&self, action: &ResponseAction, state: RecoveryState) -> bool {
        match self.resolve(action) {
            Some(id) => {
                let s = state.index();
                !self.true_kernels[id].is_point_mass(s, s)
            }
            None => false,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("synthetic model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let parsed: SyntheticModel =
            serde_json::from_str(text).map_err(|e| ModelError::Construction(e.to_string()))?;
        // re-derive eta and shape checks
        SyntheticModel::from_parts(
            parsed.actions,
            parsed.true_kernels,
            parsed.model_kernels,
            parsed.proposal,
            parsed.hallucinated,
            parsed.unnecessary,
            parsed.seed,
        )
    }
}

/// Per-action bit-completion probabilities for a progressing action.
fn draw_stage_probabilities(stream: &mut RandomStream) -> (Vec<Stage>, [f64; 6]) {
    let mut stages = Stage::ALL.to_vec();
    stages.shuffle(stream);
    let focus_len = if stream.uniform() < 0.5 { 1 } else { 2 };
    let focus: Vec<Stage> = stages[..focus_len].to_vec();
    let mut probs = [0.0; 6];
    for stage in Stage::ALL {
        probs[stage.bit() as usize] = if focus.contains(&stage) {
            stream.random_range(0.5..0.9)
        } else {
            stream.random_range(0.03..0.15)
        };
    }
    let mut focus = focus;
    focus.sort();
    (focus, probs)
}

/// Kernel for an action that completes each missing stage independently
/// with the given probability; with weight `1 - progress_bias` it instead
/// clears one completed stage chosen uniformly.
fn progressing_kernel(probs: &[f64; 6], progress_bias: f64) -> TransitionKernel {
    let n = STATE_COUNT;
    let terminal = n - 1;
    let mut data = vec![0.0; n * n];
    for s in 0..terminal {
        let row = &mut data[s * n..(s + 1) * n];
        let missing: Vec<usize> = (0..6).filter(|b| s & (1 << b) == 0).collect();
        for subset in 0u32..(1 << missing.len()) {
            let mut target = s;
            let mut p = progress_bias;
            for (k, bit) in missing.iter().enumerate() {
                if subset & (1 << k) != 0 {
                    target |= 1 << bit;
                    p *= probs[*bit];
                } else {
                    p *= 1.0 - probs[*bit];
                }
            }
            row[target] += p;
        }
        let regress = 1.0 - progress_bias;
        if regress > 0.0 {
            let set: Vec<usize> = (0..6).filter(|b| s & (1 << b) != 0).collect();
            if set.is_empty() {
                row[s] += regress;
            } else {
                let share = regress / set.len() as f64;
                for bit in set {
                    row[s & !(1 << bit)] += share;
                }
            }
        }
    }
    data[terminal * n + terminal] = 1.0;
    TransitionKernel::from_dense_unchecked(n, data)
}

/// `(1 - lambda) * kernel + lambda * U` on non-terminal rows, with `U`
/// uniform over the non-terminal states.
pub fn mix_uniform(kernel: &TransitionKernel, lambda: f64) -> TransitionKernel {
    let n = kernel.size();
    let terminal = n - 1;
    let u = 1.0 / terminal as f64;
    let mut mixed = kernel.clone();
    for s in 0..terminal {
        for (t, p) in mixed.row_mut(s).iter_mut().enumerate() {
            let uniform = if t == terminal { 0.0 } else { u };
            *p = (1.0 - lambda) * *p + lambda * uniform;
        }
    }
    mixed
}

pub fn build_synthetic(config: &SyntheticConfig) -> Result<SyntheticModel, ModelError> {
    config.validate()?;
    let n = config.n_actions;
    let proposal = match &config.proposal_weights {
        Some(w) => Proposal::state_independent(STATE_COUNT, w)?,
        None => Proposal::uniform(STATE_COUNT, n),
    };
    let mut last_failure = String::new();
    for attempt in 0..MAX_BUILD_ATTEMPTS {
        let mut stream = RandomStream::derive(config.seed, StreamPurpose::Build, &[attempt]);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream);
        let mut hallucinated = vec![false; n];
        for &i in &order[..config.hallucinated_count()] {
            hallucinated[i] = true;
        }
        order.shuffle(&mut stream);
        let mut unnecessary = vec![false; n];
        for &i in &order[..config.unnecessary_count()] {
            unnecessary[i] = true;
        }

        let mut actions = Vec::with_capacity(n);
        let mut true_kernels = Vec::with_capacity(n);
        for (id, halluc) in hallucinated.iter().enumerate() {
            if *halluc {
                let phrase = HALLUCINATED_PHRASES[stream.random_range(0..HALLUCINATED_PHRASES.len())];
                actions.push(SyntheticAction {
                    text: format!("[{id}] {phrase}"),
                    focus: vec![],
                });
                true_kernels.push(TransitionKernel::identity(STATE_COUNT));
            } else {
                let (focus, probs) = draw_stage_probabilities(&mut stream);
                let phrase = focus
                    .iter()
                    .map(|s| STAGE_PHRASES[s.bit() as usize])
                    .collect::<Vec<_>>()
                    .join("; ");
                actions.push(SyntheticAction {
                    text: format!("[{id}] {phrase}"),
                    focus,
                });
                true_kernels.push(progressing_kernel(&probs, config.progress_bias));
            }
        }

        // Every non-hallucinated action must strictly shorten the expected
        // time-to-go in every non-terminal state.
        let j = match analysis::solve_time_to_go(&analysis::induced_chain(&true_kernels, &proposal)
            .map_err(|e| ModelError::Construction(e.to_string()))?)
        {
            Ok(j) => j,
            Err(e) => {
                last_failure = e.to_string();
                continue;
            }
        };
        let delta = analysis::min_improvement(&true_kernels, &hallucinated, &j)
            .map_err(|e| ModelError::Construction(e.to_string()))?;
        if delta <= HALLUCINATION_TOLERANCE {
            last_failure = format!("minimal improvement {delta} is not positive");
            continue;
        }

        let model_kernels: Vec<TransitionKernel> = true_kernels
            .iter()
            .map(|k| mix_uniform(k, config.kernel_mixing_lambda))
            .collect();
        let model = SyntheticModel::from_parts(
            actions,
            true_kernels,
            model_kernels,
            proposal.clone(),
            hallucinated,
            unnecessary,
            config.seed,
        )?;
        debug_assert_eq!(
            label_hallucinated(&model).ok().as_deref(),
            Some(model.hallucinated.as_slice())
        );
        return Ok(model);
    }
    Err(ModelError::Construction(format!(
        "no draw in {MAX_BUILD_ATTEMPTS} attempts met the progress requirement ({last_failure})"
    )))
}

/// Flags each action whose true kernel leaves the expected time-to-go
/// unchanged in every non-terminal state.
pub fn label_hallucinated_kernels(
    kernels: &[TransitionKernel],
    proposal: &Proposal,
) -> Result<Vec<bool>, AnalysisError> {
    let j = analysis::solve_time_to_go(&analysis::induced_chain(kernels, proposal)?)?;
    Ok(kernels
        .iter()
        .map(|k| {
            (0..k.terminal()).all(|s| analysis::improvement(k, &j, s).abs() <= HALLUCINATION_TOLERANCE)
        })
        .collect())
}

pub fn label_hallucinated(model: &SyntheticModel) -> Result<Vec<bool>, AnalysisError> {
    label_hallucinated_kernels(&model.true_kernels, &model.proposal)
}

impl ResponseModel for SyntheticModel {
    fn propose_actions(
        &self,
        state: RecoveryState,
        _ctx: &QueryContext<'_>,
        n: usize,
        stream: &mut RandomStream,
    ) -> Result<Vec<ResponseAction>, ModelError> {
        if state.is_terminal() {
            return Err(ModelError::TerminalState);
        }
        let s = state.index();
        Ok((0..n).map(|_| self.action(self.proposal.sample(s, stream))).collect())
    }

    fn predict_next_state(
        &self,
        state: RecoveryState,
        action: &ResponseAction,
        _ctx: &QueryContext<'_>,
        stream: &mut RandomStream,
    ) -> Result<RecoveryState, ModelError> {
        if state.is_terminal() {
            return Err(ModelError::TerminalState);
        }
        let Some(id) = self.resolve(action) else {
            return Ok(state);
        };
        let next = self.model_kernels[id].sample_next(state.index(), stream);
        Ok(RecoveryState::from_index(next).expect("kernel has 64 states"))
    }

    fn exact_kernels(&self) -> Option<ExactKernels<'_>> {
        Some(ExactKernels {
            kernels: &self.model_kernels,
            proposal: &self.proposal,
        })
    }

    fn kernel_index(&self, action: &ResponseAction) -> Option<usize> {
        self.resolve(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Incident;

    fn incident() -> Incident {
        Incident {
            id: "t".into(),
            system_description: String::new(),
            logs: vec!["x".into()],
            summary: None,
            iocs: vec![],
            enrichment: vec![],
            ground_truth: None,
        }
    }

    #[test]
    fn zero_mixing_keeps_kernels() {
        let m = build_synthetic(&SyntheticConfig { kernel_mixing_lambda: 0.0, ..Default::default() }).unwrap();
        assert_eq!(m.true_kernels, m.model_kernels);
        assert_eq!(m.eta, 0.0);
    }

    #[test]
    fn no_hallucinations_when_fraction_zero() {
        let m = build_synthetic(&SyntheticConfig { hallucinated_fraction: 0.0, ..Default::default() }).unwrap();
        assert!(m.hallucinated.iter().all(|h| !h));
    }

    #[test]
    fn eta_bounded_by_twice_lambda() {
        for seed in 0..20 {
            let cfg = SyntheticConfig {
                kernel_mixing_lambda: 0.1,
                seed,
                n_actions: 3 + (seed as usize % 5),
                ..Default::default()
            };
            let m = build_synthetic(&cfg).unwrap();
            assert!(m.eta <= 0.2 + 1e-12, "eta {}", m.eta);
            // closed form: lambda * max_r TV(P_r, U)
            let u: Vec<f64> = (0..64).map(|t| if t == 63 { 0.0 } else { 1.0 / 63.0 }).collect();
            let u = &u;
            let closed = m
                .true_kernels
                .iter()
                .flat_map(|k| (0..63).map(move |s| analysis::tv_distance(k.row(s), u)))
                .fold(0.0f64, f64::max)
                * 0.1;
            assert!((closed - m.eta).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_configs_rejected() {
        let bad = SyntheticConfig { n_actions: 2, hallucinated_fraction: 0.9, ..Default::default() };
        assert!(matches!(build_synthetic(&bad), Err(ModelError::Construction(_))));
        let bad = SyntheticConfig { progress_bias: 0.0, ..Default::default() };
        assert!(build_synthetic(&bad).is_err());
        let bad = SyntheticConfig { n_actions: 0, ..Default::default() };
        assert!(build_synthetic(&bad).is_err());
    }

    #[test]
    fn hallucinated_true_kernels_are_identity() {
        let m = build_synthetic(&SyntheticConfig { n_actions: 10, hallucinated_fraction: 0.4, ..Default::default() })
            .unwrap();
        assert_eq!(m.hallucinated.iter().filter(|h| **h).count(), 4);
        for (k, h) in m.true_kernels.iter().zip(&m.hallucinated) {
            if *h {
                assert_eq!(*k, TransitionKernel::identity(64));
            }
        }
    }

    #[test]
    fn labels_recompute_on_generated_models() {
        for seed in 0..25 {
            let cfg = SyntheticConfig {
                seed,
                n_actions: 2 + seed as usize % 7,
                hallucinated_fraction: 0.3,
                kernel_mixing_lambda: 0.05,
                ..Default::default()
            };
            let m = build_synthetic(&cfg).unwrap();
            assert_eq!(label_hallucinated(&m).unwrap(), m.hallucinated);
        }
    }

    #[test]
    fn label_strictly_decreasing_chain() {
        // 3-state chain s0 -> s1 -> terminal, embedded in 4 states with a
        // spare state that exits directly.
        let advance = TransitionKernel::from_rows(vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let labels = label_hallucinated_kernels(
            &[advance, TransitionKernel::identity(4)],
            &Proposal::uniform(4, 2),
        )
        .unwrap();
        assert_eq!(labels, vec![false, true]);
    }

    #[test]
    fn proposals_and_predictions() {
        let m = build_synthetic(&SyntheticConfig { n_actions: 4, ..Default::default() }).unwrap();
        let inc = incident();
        let ctx = QueryContext::new(&inc);
        let mut s1 = RandomStream::from_seed(9);
        let mut s2 = RandomStream::from_seed(9);
        let a = m.propose_actions(RecoveryState::INITIAL, &ctx, 4, &mut s1).unwrap();
        let b = m.propose_actions(RecoveryState::INITIAL, &ctx, 4, &mut s2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|x| x.synthetic_id.unwrap() < 4));
        assert_eq!(m.propose_actions(RecoveryState::INITIAL, &ctx, 1, &mut s1).unwrap().len(), 1);
        assert_eq!(
            m.propose_actions(RecoveryState::TERMINAL, &ctx, 1, &mut s1),
            Err(ModelError::TerminalState)
        );
    }

    #[test]
    fn identity_action_predicts_same_state() {
        let m = build_synthetic(&SyntheticConfig { n_actions: 4, hallucinated_fraction: 0.25, ..Default::default() })
            .unwrap();
        let h = m.hallucinated.iter().position(|h| *h).unwrap();
        let inc = incident();
        let ctx = QueryContext::new(&inc);
        let mut stream = RandomStream::from_seed(3);
        let s = RecoveryState::from_index(5).unwrap();
        for _ in 0..50 {
            assert_eq!(m.predict_next_state(s, &m.action(h), &ctx, &mut stream).unwrap(), s);
        }
        // unknown free-text action has no effect
        let other = ResponseAction::new("do something unlisted").unwrap();
        assert_eq!(m.predict_next_state(s, &other, &ctx, &mut stream).unwrap(), s);
    }

    #[test]
    fn json_round_trip_rederives_eta() {
        let m = build_synthetic(&SyntheticConfig { kernel_mixing_lambda: 0.2, n_actions: 3, ..Default::default() })
            .unwrap();
        let back = SyntheticModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
