//! Built-in decision engine: Bayesian scoring of candidate paths, constrained
//! argmax choice, rank-prior updates and rationale rendering.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::RoadNetwork;
use crate::routing::{CostedPath, RouteConstraints, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecisionError {
    #[error("no admissible candidate")]
    NoAdmissibleCandidate,
    #[error("evidence is zero for every candidate")]
    ZeroEvidence,
    #[error("prior covers {prior} ranks but there are {candidates} candidates")]
    PriorTooShort { prior: usize, candidates: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("realized time must be positive, got {0}")]
    NonPositiveTime(f64),
}

/// Likelihood shape: an e-fold per `tau_s` seconds of extra predicted time and
/// a factor `gamma` per extra traffic light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionParams {
    pub tau_s: f64,
    pub gamma: f64,
    /// Weight of the newest outcome in the prior update.
    pub learning_rate: f64,
    /// Outcomes up to this multiple of the prediction count as good.
    pub tolerance: f64,
}

impl Default for DecisionParams {
    fn default() -> Self {
        DecisionParams {
            tau_s: 60.0,
            gamma: 0.9,
            learning_rate: 0.05,
            tolerance: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvaluation {
    pub path: CostedPath,
    pub predicted_time: f64,
    pub light_count: u32,
    pub admissible: bool,
    pub violations: Vec<Violation>,
}

impl CandidateEvaluation {
    pub fn new(path: CostedPath, predicted_time: f64, constraints: &RouteConstraints) -> Self {
        let violations = constraints.violations(path.path.edges());
        CandidateEvaluation {
            light_count: path.light_count,
            admissible: violations.is_empty(),
            path,
            predicted_time,
            violations,
        }
    }
}

/// Prior over candidate ranks (1 = cheapest candidate at the junction).
#[derive(Debug, Clone, PartialEq)]
pub struct PathPrior(Vec<f64>);

const PRIOR_FLOOR: f64 = 1e-6;

impl PathPrior {
    pub fn uniform(ranks: usize) -> Self {
        assert!(ranks > 0);
        PathPrior(vec![1.0 / ranks as f64; ranks])
    }

    pub fn new(probabilities: Vec<f64>) -> Result<Self, DecisionError> {
        if probabilities.is_empty() {
            return Err(DecisionError::InvalidPrior("empty".into()));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(DecisionError::InvalidPrior(
                "entries must be positive".into(),
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DecisionError::InvalidPrior(format!("sums to {sum}")));
        }
        Ok(PathPrior(probabilities))
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Evidence weight of each candidate; zero for inadmissible ones.
pub fn likelihood(
    evals: &[CandidateEvaluation],
    params: &DecisionParams,
) -> Result<Vec<f64>, DecisionError> {
    let admissible = evals.iter().filter(|e| e.admissible);
    let t_min = admissible
        .clone()
        .map(|e| e.predicted_time)
        .min_by(f64::total_cmp)
        .ok_or(DecisionError::NoAdmissibleCandidate)?;
    let l_min = admissible.map(|e| e.light_count).min().unwrap();
    Ok(evals
        .iter()
        .map(|e| {
            if !e.admissible {
                return 0.0;
            }
            let dt = (e.predicted_time - t_min) / params.tau_s;
            (-dt).exp() * params.gamma.powi((e.light_count - l_min) as i32)
        })
        .collect())
}

/// Bayes rule over the first `weights.len()` prior ranks.
pub fn posterior(prior: &PathPrior, weights: &[f64]) -> Result<Vec<f64>, DecisionError> {
    if prior.len() < weights.len() {
        return Err(DecisionError::PriorTooShort {
            prior: prior.len(),
            candidates: weights.len(),
        });
    }
    let joint: Vec<f64> = weights
        .iter()
        .zip(prior.probabilities())
        .map(|(w, p)| w * p)
        .collect();
    let evidence: f64 = joint.iter().sum();
    if !(evidence > 0.0) {
        return Err(DecisionError::ZeroEvidence);
    }
    Ok(joint.into_iter().map(|j| j / evidence).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Built-in Bayesian engine, no backend configured.
    Builtin,
    /// External decision service.
    Backend,
    /// Built-in engine after the backend failed or returned an invalid answer.
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub vehicle: String,
    pub junction: String,
    pub candidates: Vec<CandidateEvaluation>,
    pub posterior: Vec<f64>,
    pub chosen_index: usize,
    pub rationale: String,
    pub engine: Engine,
    pub mandatory: Vec<String>,
    pub forbidden: Vec<String>,
}

impl DecisionRecord {
    pub fn chosen(&self) -> &CandidateEvaluation {
        &self.candidates[self.chosen_index]
    }

    /// One JSON object per line for the audit log.
    pub fn log_line(&self, net: &RoadNetwork, time: f64) -> String {
        #[derive(Serialize)]
        struct Candidate<'a> {
            id: String,
            edges: Vec<&'a str>,
            predicted_time_s: f64,
            light_count: u32,
            admissible: bool,
            posterior: f64,
        }
        #[derive(Serialize)]
        struct Line<'a> {
            time: f64,
            vehicle: &'a str,
            junction: &'a str,
            engine: Engine,
            chosen: String,
            candidates: Vec<Candidate<'a>>,
            mandatory: &'a [String],
            forbidden: &'a [String],
            rationale: &'a str,
        }
        let line = Line {
            time,
            vehicle: &self.vehicle,
            junction: &self.junction,
            engine: self.engine,
            chosen: candidate_label(self.chosen_index),
            candidates: self
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| Candidate {
                    id: candidate_label(i),
                    edges: c.path.path.ids(net),
                    predicted_time_s: c.predicted_time,
                    light_count: c.light_count,
                    admissible: c.admissible,
                    posterior: self.posterior[i],
                })
                .collect(),
            mandatory: &self.mandatory,
            forbidden: &self.forbidden,
            rationale: &self.rationale,
        };
        serde_json::to_string(&line).expect("decision record serializes")
    }
}

/// `path1`, `path2`, ... for 0-based candidate positions.
pub fn candidate_label(index: usize) -> String {
    format!("path{}", index + 1)
}

/// Pick the admissible candidate with the highest posterior.
///
/// Ties go to the lower predicted time, then fewer lights, then the
/// lexicographically smaller edge sequence.
#[allow(clippy::too_many_arguments)]
pub fn choose(
    net: &RoadNetwork,
    vehicle: &str,
    junction: &str,
    evals: Vec<CandidateEvaluation>,
    prior: &PathPrior,
    constraints: &RouteConstraints,
    params: &DecisionParams,
) -> Result<DecisionRecord, DecisionError> {
    let weights = likelihood(&evals, params)?;
    let post = posterior(prior, &weights)?;
    let chosen_index = (0..evals.len())
        .filter(|&i| evals[i].admissible)
        .max_by(|&a, &b| {
            post[a]
                .total_cmp(&post[b])
                .then_with(|| evals[b].predicted_time.total_cmp(&evals[a].predicted_time))
                .then_with(|| evals[b].light_count.cmp(&evals[a].light_count))
                .then_with(|| evals[b].path.path.cmp(&evals[a].path.path))
                .then(b.cmp(&a))
        })
        .ok_or(DecisionError::NoAdmissibleCandidate)?;
    let names = |set: &std::collections::BTreeSet<_>| {
        set.iter()
            .map(|e| net.edge(*e).id.clone())
            .collect::<Vec<String>>()
    };
    let mut record = DecisionRecord {
        vehicle: vehicle.to_string(),
        junction: junction.to_string(),
        candidates: evals,
        posterior: post,
        chosen_index,
        rationale: String::new(),
        engine: Engine::Builtin,
        mandatory: names(constraints.mandatory()),
        forbidden: names(constraints.forbidden()),
    };
    record.rationale = render_rationale(&record);
    Ok(record)
}

/// Exponential-forgetting update of the rank prior after a realized trip
/// segment. A good outcome pulls mass toward the chosen rank, a bad one
/// spreads it over the other ranks.
pub fn update_prior(
    prior: &PathPrior,
    chosen_index: usize,
    realized_time: f64,
    predicted_time: f64,
    params: &DecisionParams,
) -> Result<PathPrior, DecisionError> {
    if !(realized_time > 0.0) {
        return Err(DecisionError::NonPositiveTime(realized_time));
    }
    let n = prior.len();
    let good = realized_time <= params.tolerance * predicted_time;
    let target: Vec<f64> = (0..n)
        .map(|i| {
            if good || n == 1 {
                f64::from(u8::from(i == chosen_index))
            } else if i == chosen_index {
                0.0
            } else {
                1.0 / (n - 1) as f64
            }
        })
        .collect();
    let rate = params.learning_rate;
    let mixed: Vec<f64> = prior
        .probabilities()
        .iter()
        .zip(&target)
        .map(|(p, t)| ((1.0 - rate) * p + rate * t).max(PRIOR_FLOOR))
        .collect();
    let sum: f64 = mixed.iter().sum();
    Ok(PathPrior(mixed.into_iter().map(|p| p / sum).collect()))
}

fn ordering_line<T: Copy>(values: &[T], cmp: impl Fn(T, T) -> Ordering) -> String {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp(values[a], values[b]).then(a.cmp(&b)));
    let mut out = candidate_label(order[0]);
    for pair in order.windows(2) {
        let sep = match cmp(values[pair[0]], values[pair[1]]) {
            Ordering::Equal => " = ",
            _ => " < ",
        };
        out.push_str(sep);
        out.push_str(&candidate_label(pair[1]));
    }
    out
}

fn time_cmp(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0) {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

pub fn render_rationale(record: &DecisionRecord) -> String {
    let times: Vec<f64> = record.candidates.iter().map(|c| c.predicted_time).collect();
    let lights: Vec<u32> = record.candidates.iter().map(|c| c.light_count).collect();
    let mut out = String::new();
    let _ = writeln!(out, "Total time: {}", ordering_line(&times, time_cmp));
    let _ = writeln!(
        out,
        "Traffic light count: {}",
        ordering_line(&lights, |a, b| a.cmp(&b))
    );
    let list = |ids: &[String]| {
        if ids.is_empty() {
            "none".to_string()
        } else {
            ids.join(", ")
        }
    };
    let _ = writeln!(out, "Error edges: {}", list(&record.forbidden));
    if !record.mandatory.is_empty() || !record.forbidden.is_empty() {
        let _ = writeln!(out, "Mandatory path: {}", list(&record.mandatory));
    }
    let _ = write!(
        out,
        "Taking all factors into consideration, {} is selected.",
        candidate_label(record.chosen_index)
    );
    out
}
