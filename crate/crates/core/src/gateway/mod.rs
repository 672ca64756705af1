//! Decision-service gateway: prompt construction, the HTTP wire client,
//! verdict validation and fallback to the built-in engine.

pub mod stub;

use std::fmt::Write as _;
use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{
    candidate_label, choose, render_rationale, CandidateEvaluation, DecisionError, DecisionParams,
    DecisionRecord, Engine, PathPrior,
};
use crate::network::{Junction, RoadNetwork};
use crate::routing::RouteConstraints;

/// Largest response body accepted from a backend.
const MAX_BODY_BYTES: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("backend timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("backend returned status {0}")]
    Status(u16),
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("unknown candidate {0:?}")]
    UnknownCandidate(String),
    #[error("candidate {0} violates the route constraints")]
    InadmissibleCandidate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub enabled: bool,
    pub retries: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:8787/decide".into(),
            timeout_ms: 2000,
            enabled: false,
            retries: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub edges: Vec<String>,
    pub predicted_time_s: f64,
    pub light_count: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WireConstraints {
    pub mandatory: Vec<String>,
    pub forbidden: Vec<String>,
}

impl WireConstraints {
    pub fn admits(&self, edges: &[String]) -> bool {
        self.mandatory.iter().all(|m| edges.contains(m))
            && !self.forbidden.iter().any(|f| edges.contains(f))
    }
}

/// Request body sent to a decision backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPrompt {
    #[serde(rename = "prompt")]
    pub text: String,
    #[serde(rename = "candidates")]
    pub manifest: Vec<ManifestEntry>,
    pub constraints: WireConstraints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendVerdict {
    #[serde(rename = "chosen")]
    pub chosen_candidate_id: String,
    pub rationale: String,
}

pub fn junction_properties(junction: &Junction) -> &'static str {
    if junction.signalized {
        "traffic_light_right_on_red"
    } else {
        "priority"
    }
}

fn bracket(ids: &[String]) -> String {
    format!("[{}]", ids.join(", "))
}

pub fn build_prompt(
    net: &RoadNetwork,
    vehicle: &str,
    junction: &Junction,
    candidates: &[CandidateEvaluation],
    constraints: &RouteConstraints,
) -> DecisionPrompt {
    assert!(
        !candidates.is_empty(),
        "prompt needs at least one candidate"
    );
    let names = |set: &std::collections::BTreeSet<_>| {
        set.iter()
            .map(|e| net.edge(*e).id.clone())
            .collect::<Vec<String>>()
    };
    let wire_constraints = WireConstraints {
        mandatory: names(constraints.mandatory()),
        forbidden: names(constraints.forbidden()),
    };
    let manifest: Vec<ManifestEntry> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| ManifestEntry {
            id: candidate_label(i),
            edges: c
                .path
                .path
                .ids(net)
                .into_iter()
                .map(str::to_string)
                .collect(),
            predicted_time_s: c.predicted_time,
            light_count: c.light_count,
        })
        .collect();
    let target = candidates[0].path.path.last();
    let j = &junction.id;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "Vehicle {vehicle} has arrived at intersection {j}. The current properties of \
         intersection {j} are {}, and the node ID is {j}, with the target edge being {}.",
        junction_properties(junction),
        net.edge(target).id
    );
    let _ = writeln!(text, "\nThere are several alternative paths available:");
    for (i, m) in manifest.iter().enumerate() {
        let _ = writeln!(text, "Alternative path {}: {}", i + 1, bracket(&m.edges));
    }
    if !wire_constraints.mandatory.is_empty() {
        let _ = writeln!(
            text,
            "Mandatory path: {}",
            wire_constraints.mandatory.join(", ")
        );
    }
    if !wire_constraints.forbidden.is_empty() {
        let _ = writeln!(
            text,
            "Error edges: {}",
            wire_constraints.forbidden.join(", ")
        );
    }
    let _ = writeln!(text, "\nPath information:");
    for m in &manifest {
        let _ = writeln!(
            text,
            "{}: predicted travel time {} s, traffic light count {}",
            m.id, m.predicted_time_s, m.light_count
        );
    }
    let _ = write!(
        text,
        "\nSelect one alternative path that satisfies the constraints and minimizes total \
         travel time. Answer with the path id and the reason."
    );
    DecisionPrompt {
        text,
        manifest,
        constraints: wire_constraints,
    }
}

pub fn parse_verdict(body: &[u8]) -> Result<BackendVerdict, GatewayError> {
    serde_json::from_slice(body).map_err(|e| GatewayError::MalformedBody(e.to_string()))
}

/// Index of the manifest entry named by the verdict, if admissible.
pub fn validate_verdict(
    verdict: &BackendVerdict,
    prompt: &DecisionPrompt,
) -> Result<usize, GatewayError> {
    let index = prompt
        .manifest
        .iter()
        .position(|m| m.id == verdict.chosen_candidate_id)
        .ok_or_else(|| GatewayError::UnknownCandidate(verdict.chosen_candidate_id.clone()))?;
    if !prompt.constraints.admits(&prompt.manifest[index].edges) {
        return Err(GatewayError::InadmissibleCandidate(
            verdict.chosen_candidate_id.clone(),
        ));
    }
    Ok(index)
}

pub trait DecisionBackend {
    fn query(&self, prompt: &DecisionPrompt) -> Result<BackendVerdict, GatewayError>;
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    retries: u32,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms.max(1)))
            .build();
        HttpBackend {
            agent,
            endpoint: config.endpoint.clone(),
            retries: config.retries,
        }
    }

    fn attempt(&self, body: &[u8]) -> Result<BackendVerdict, GatewayError> {
        let response = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json")
            .send_bytes(body)
            .map_err(map_ureq_error)?;
        if response.status() != 200 {
            return Err(GatewayError::Status(response.status()));
        }
        let mut bytes = Vec::new();
        response
            .into_reader()
            .take(MAX_BODY_BYTES)
            .read_to_end(&mut bytes)
            .map_err(|e| map_io_error(&e))?;
        parse_verdict(&bytes)
    }
}

fn map_io_error(e: &std::io::Error) -> GatewayError {
    match e.kind() {
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => GatewayError::Timeout,
        _ => GatewayError::Connection(e.to_string()),
    }
}

fn map_ureq_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Status(code, _) => GatewayError::Status(code),
        ureq::Error::Transport(t) => {
            let io = std::error::Error::source(&t)
                .and_then(|s| s.downcast_ref::<std::io::Error>())
                .map(map_io_error);
            match io {
                Some(err) => err,
                None if t.to_string().contains("timed out") => GatewayError::Timeout,
                None => GatewayError::Connection(t.to_string()),
            }
        }
    }
}

impl DecisionBackend for HttpBackend {
    fn query(&self, prompt: &DecisionPrompt) -> Result<BackendVerdict, GatewayError> {
        let body = serde_json::to_vec(prompt).expect("prompt serializes");
        let mut result = self.attempt(&body);
        for _ in 0..self.retries {
            match result {
                Err(
                    GatewayError::Timeout | GatewayError::Connection(_) | GatewayError::Status(_),
                ) => result = self.attempt(&body),
                _ => break,
            }
        }
        result
    }
}

/// Decide at a junction: ask the backend when one is given, and fall back to
/// the built-in engine on any backend or validation error.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    net: &RoadNetwork,
    vehicle: &str,
    junction: &Junction,
    candidates: Vec<CandidateEvaluation>,
    constraints: &RouteConstraints,
    prior: &PathPrior,
    params: &DecisionParams,
    backend: Option<&dyn DecisionBackend>,
) -> Result<DecisionRecord, DecisionError> {
    let Some(backend) = backend else {
        return choose(
            net,
            vehicle,
            &junction.id,
            candidates,
            prior,
            constraints,
            params,
        );
    };
    let prompt = build_prompt(net, vehicle, junction, &candidates, constraints);
    let verdict = backend
        .query(&prompt)
        .and_then(|v| validate_verdict(&v, &prompt).map(|ix| (ix, v)));
    let mut record = choose(
        net,
        vehicle,
        &junction.id,
        candidates,
        prior,
        constraints,
        params,
    )?;
    match verdict {
        Ok((index, verdict)) => {
            record.chosen_index = index;
            record.engine = Engine::Backend;
            record.rationale = if verdict.rationale.trim().is_empty() {
                render_rationale(&record)
            } else {
                verdict.rationale
            };
        }
        Err(e) => {
            log::warn!(
                "decision backend failed for {vehicle} at {}: {e}",
                junction.id
            );
            record.engine = Engine::Fallback;
        }
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::stub::{StubMode, StubServer};
    use super::*;
    use crate::network::generate_manhattan;
    use crate::routing::yen_k_shortest;
    use crate::traffic_state::TrafficState;
    use std::time::Instant;

    fn at_a2(
        constraints: &[&[&str]; 2],
    ) -> (RoadNetwork, Vec<CandidateEvaluation>, RouteConstraints) {
        let net = generate_manhattan(4, 4).unwrap();
        let c = RouteConstraints::from_ids(&net, constraints[0], constraints[1]).unwrap();
        let state = TrafficState::free_flow(&net, Default::default());
        let w = state.weights(&net);
        let cands = yen_k_shortest(
            &net,
            &w,
            net.edge_ix("A3A2").unwrap(),
            net.edge_ix("B2C2").unwrap(),
            3,
        )
        .unwrap();
        let evals = cands
            .into_iter()
            .map(|p| {
                let (t, _) = state.path_time(&net, p.path.edges());
                CandidateEvaluation::new(p, t, &c)
            })
            .collect();
        (net, evals, c)
    }

    fn a2(net: &RoadNetwork) -> &Junction {
        net.junction(net.junction_ix("A2").unwrap())
    }

    struct Fixed(Vec<u8>);
    impl DecisionBackend for Fixed {
        fn query(&self, _: &DecisionPrompt) -> Result<BackendVerdict, GatewayError> {
            parse_verdict(&self.0)
        }
    }

    #[test]
    fn prompt_text() {
        let (net, evals, c) = at_a2(&[&[], &[]]);
        let p = build_prompt(&net, "veh_42", a2(&net), &evals, &c);
        assert!(p.text.starts_with(
            "Vehicle veh_42 has arrived at intersection A2. The current properties of \
             intersection A2 are traffic_light_right_on_red, and the node ID is A2, with the \
             target edge being B2C2."
        ));
        assert_eq!(p.text.matches("Alternative path ").count(), 3);
        assert!(p.text.contains("Alternative path 1: [A3A2, A2B2, B2C2]\n"));
        assert!(p
            .text
            .contains("Alternative path 3: [A3A2, A2A1, A1A0, A0B0, B0B1, B1B2, B2C2]\n"));
        assert!(!p.text.contains("Mandatory path"));
        for m in &p.manifest {
            assert!(p.text.contains(&bracket(&m.edges)));
        }
        assert_eq!(p, build_prompt(&net, "veh_42", a2(&net), &evals, &c));

        let (net, evals, c) = at_a2(&[&["A2A1"], &["A1B1"]]);
        let p = build_prompt(&net, "veh_42", a2(&net), &evals, &c);
        assert!(p.text.contains("Mandatory path: A2A1\n"));
        assert!(p.text.contains("Error edges: A1B1\n"));

        let p1 = build_prompt(&net, "veh_42", a2(&net), &evals[..1], &c);
        assert_eq!(p1.text.matches("Alternative path ").count(), 1);
        assert_ne!(p1.text, p.text);
    }

    #[test]
    fn wire_format() {
        let (net, evals, c) = at_a2(&[&["A2A1"], &[]]);
        let p = build_prompt(&net, "veh_42", a2(&net), &evals, &c);
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert!(v["prompt"].is_string());
        assert_eq!(v["candidates"][1]["id"], "path2");
        assert_eq!(v["candidates"][1]["edges"][1], "A2A1");
        assert!(v["candidates"][0]["predicted_time_s"].is_f64());
        assert_eq!(v["candidates"][0]["light_count"], 2);
        assert_eq!(v["constraints"]["mandatory"][0], "A2A1");
        assert!(v["constraints"]["forbidden"].as_array().unwrap().is_empty());
    }

    #[test]
    fn validation() {
        let (net, evals, c) = at_a2(&[&["A2A1"], &["A1B1"]]);
        let p = build_prompt(&net, "veh_42", a2(&net), &evals, &c);
        let verdict = |id: &str| BackendVerdict {
            chosen_candidate_id: id.into(),
            rationale: String::new(),
        };
        assert_eq!(validate_verdict(&verdict("path3"), &p), Ok(2));
        assert_eq!(
            validate_verdict(&verdict("path9"), &p),
            Err(GatewayError::UnknownCandidate("path9".into()))
        );
        assert_eq!(
            validate_verdict(&verdict("path2"), &p),
            Err(GatewayError::InadmissibleCandidate("path2".into()))
        );
        let (net, evals, c) = at_a2(&[&[], &[]]);
        let p = build_prompt(&net, "veh_42", a2(&net), &evals, &c);
        assert_eq!(validate_verdict(&verdict("path1"), &p), Ok(0));
    }

    #[test]
    fn disabled_backend_matches_builtin() {
        let (net, evals, c) = at_a2(&[&["A2A1"], &[]]);
        let prior = PathPrior::uniform(3);
        let params = DecisionParams::default();
        let a = decide(
            &net,
            "veh_42",
            a2(&net),
            evals.clone(),
            &c,
            &prior,
            &params,
            None,
        )
        .unwrap();
        let b = choose(&net, "veh_42", "A2", evals, &prior, &c, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.engine, Engine::Builtin);
    }

    #[test]
    fn stub_backend_roundtrip() {
        let server = StubServer::start(StubMode::Reference).unwrap();
        let config = BackendConfig {
            endpoint: server.url(),
            enabled: true,
            ..Default::default()
        };
        let backend = HttpBackend::new(&config);
        let (net, evals, c) = at_a2(&[&["A2A1"], &[]]);
        let prompt = build_prompt(&net, "veh_42", a2(&net), &evals, &c);
        let verdict = backend.query(&prompt).unwrap();
        assert_eq!(verdict.chosen_candidate_id, "path2");
        let r = decide(
            &net,
            "veh_42",
            a2(&net),
            evals,
            &c,
            &PathPrior::uniform(3),
            &DecisionParams::default(),
            Some(&backend),
        )
        .unwrap();
        assert_eq!(r.chosen_index, 1);
        assert_eq!(r.engine, Engine::Backend);
    }

    #[test]
    fn slow_backend_times_out_and_falls_back() {
        let server = StubServer::start(StubMode::Delay(Duration::from_secs(5))).unwrap();
        let config = BackendConfig {
            endpoint: server.url(),
            enabled: true,
            timeout_ms: 2000,
            retries: 0,
        };
        let backend = HttpBackend::new(&config);
        let (net, evals, c) = at_a2(&[&[], &[]]);
        let prompt = build_prompt(&net, "veh_42", a2(&net), &evals, &c);
        let start = Instant::now();
        assert_eq!(backend.query(&prompt), Err(GatewayError::Timeout));
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_millis(4000), "{elapsed:?}");

        let prior = PathPrior::uniform(3);
        let params = DecisionParams::default();
        let r = decide(
            &net,
            "veh_42",
            a2(&net),
            evals.clone(),
            &c,
            &prior,
            &params,
            Some(&backend),
        )
        .unwrap();
        let builtin = choose(&net, "veh_42", "A2", evals, &prior, &c, &params).unwrap();
        assert_eq!(r.engine, Engine::Fallback);
        assert_eq!(r.chosen_index, builtin.chosen_index);
    }

    #[test]
    fn bad_responses() {
        let (net, evals, c) = at_a2(&[&[], &[]]);
        let prompt = build_prompt(&net, "veh_42", a2(&net), &evals, &c);
        let server = StubServer::start(StubMode::Fixed {
            status: 200,
            body: b"{not json".to_vec(),
        })
        .unwrap();
        let backend = HttpBackend::new(&BackendConfig {
            endpoint: server.url(),
            enabled: true,
            ..Default::default()
        });
        assert!(matches!(
            backend.query(&prompt),
            Err(GatewayError::MalformedBody(_))
        ));

        let server = StubServer::start(StubMode::Fixed {
            status: 503,
            body: Vec::new(),
        })
        .unwrap();
        let backend = HttpBackend::new(&BackendConfig {
            endpoint: server.url(),
            enabled: true,
            retries: 2,
            ..Default::default()
        });
        assert_eq!(backend.query(&prompt), Err(GatewayError::Status(503)));
        assert_eq!(server.requests_served(), 3);

        let closed = HttpBackend::new(&BackendConfig {
            endpoint: "http://127.0.0.1:9/decide".into(),
            enabled: true,
            ..Default::default()
        });
        assert!(matches!(
            closed.query(&prompt),
            Err(GatewayError::Connection(_))
        ));
    }

    #[test]
    fn fixed_verdict_is_honoured() {
        let (net, evals, c) = at_a2(&[&[], &[]]);
        let backend = Fixed(br#"{"chosen":"path3","rationale":"scenic"}"#.to_vec());
        let r = decide(
            &net,
            "veh_42",
            a2(&net),
            evals,
            &c,
            &PathPrior::uniform(3),
            &DecisionParams::default(),
            Some(&backend),
        )
        .unwrap();
        assert_eq!(r.chosen_index, 2);
        assert_eq!(r.rationale, "scenic");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn body_strategy() -> impl Strategy<Value = Vec<u8>> {
            prop_oneof![
                proptest::collection::vec(any::<u8>(), 0..64),
                (0usize..6, ".{0,12}").prop_map(|(i, r)| {
                    serde_json::to_vec(
                        &serde_json::json!({"chosen": format!("path{i}"), "rationale": r}),
                    )
                    .unwrap()
                }),
                "path[0-9]{1,2}".prop_map(|s| format!(r#"{{"chosen":"{s}"}}"#).into_bytes()),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]
            #[test]
            fn fuzzed_backend_never_yields_inadmissible(body in body_strategy(), case in 0usize..3) {
                let sets: [[&[&str]; 2]; 3] = [[&[], &[]], [&["A2A1"], &[]], [&["A2A1"], &["A1B1"]]];
                let (net, evals, c) = at_a2(&sets[case]);
                let backend = Fixed(body);
                let r = decide(&net, "veh_42", a2(&net), evals, &c, &PathPrior::uniform(3),
                               &DecisionParams::default(), Some(&backend)).unwrap();
                prop_assert!(r.chosen().admissible);
                prop_assert!(!r.rationale.is_empty());
            }
        }
    }
}
