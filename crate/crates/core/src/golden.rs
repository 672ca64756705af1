//! The three worked decisions for `veh_42` at junction A2 of the 4x4
//! Manhattan grid: plain selection, a mandatory edge, and an emergency
//! closure on top of it. Shared by the CLI and the golden tests.

use thiserror::Error;

use crate::decision::{
    CandidateEvaluation, DecisionError, DecisionParams, DecisionRecord, Engine, PathPrior,
};
use crate::gateway::{build_prompt, decide, DecisionBackend, DecisionPrompt};
use crate::network::{generate_manhattan, NetworkError, RoadNetwork};
use crate::routing::{yen_k_shortest, Path, RouteConstraints, RoutingError};
use crate::sim::splice;
use crate::traffic_state::TrafficState;

pub const VEHICLE: &str = "veh_42";
pub const JUNCTION: &str = "A2";
pub const CURRENT_EDGE: &str = "A3A2";
pub const TARGET_EDGE: &str = "B2C2";
/// Free-flow global route of the vehicle before the decision.
pub const GLOBAL_ROUTE: [&str; 6] = ["top0A3", "A3A2", "A2B2", "B2C2", "C2D2", "D2right2"];

#[derive(Debug, Error)]
pub enum GoldenError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenCase {
    pub name: &'static str,
    pub mandatory: &'static [&'static str],
    pub forbidden: &'static [&'static str],
    pub expected_choice: usize,
    pub expected_rationale: &'static str,
    pub expected_route: &'static [&'static str],
}

pub const EXPECTED_CANDIDATES: [&[&str]; 3] = [
    &["A3A2", "A2B2", "B2C2"],
    &["A3A2", "A2A1", "A1B1", "B1B2", "B2C2"],
    &["A3A2", "A2A1", "A1A0", "A0B0", "B0B1", "B1B2", "B2C2"],
];

pub const CASES: [GoldenCase; 3] = [
    GoldenCase {
        name: "standard",
        mandatory: &[],
        forbidden: &[],
        expected_choice: 0,
        expected_rationale: "Total time: path1 < path2 < path3\n\
                             Traffic light count: path1 < path2 < path3\n\
                             Error edges: none\n\
                             Taking all factors into consideration, path1 is selected.",
        expected_route: &["top0A3", "A3A2", "A2B2", "B2C2", "C2D2", "D2right2"],
    },
    GoldenCase {
        name: "mandatory",
        mandatory: &["A2A1"],
        forbidden: &[],
        expected_choice: 1,
        expected_rationale: "Total time: path1 < path2 < path3\n\
                             Traffic light count: path1 < path2 < path3\n\
                             Error edges: none\n\
                             Mandatory path: A2A1\n\
                             Taking all factors into consideration, path2 is selected.",
        expected_route: &[
            "top0A3", "A3A2", "A2A1", "A1B1", "B1B2", "B2C2", "C2D2", "D2right2",
        ],
    },
    GoldenCase {
        name: "emergency",
        mandatory: &["A2A1"],
        forbidden: &["A1B1"],
        expected_choice: 2,
        expected_rationale: "Total time: path1 < path2 < path3\n\
                             Traffic light count: path1 < path2 < path3\n\
                             Error edges: A1B1\n\
                             Mandatory path: A2A1\n\
                             Taking all factors into consideration, path3 is selected.",
        expected_route: &[
            "top0A3", "A3A2", "A2A1", "A1A0", "A0B0", "B0B1", "B1B2", "B2C2", "C2D2", "D2right2",
        ],
    },
];

#[derive(Debug, Clone)]
pub struct GoldenOutcome {
    pub case: GoldenCase,
    pub candidates: Vec<Vec<String>>,
    pub prompt: DecisionPrompt,
    pub record: DecisionRecord,
    pub route: Vec<String>,
}

impl GoldenOutcome {
    /// Human-readable differences from the expected outcome; empty on a match.
    /// Free-text rationales from a backend are not compared.
    pub fn mismatches(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, (got, want)) in self.candidates.iter().zip(EXPECTED_CANDIDATES).enumerate() {
            if got != want {
                out.push(format!(
                    "candidate path{}: got {got:?}, want {want:?}",
                    i + 1
                ));
            }
        }
        if self.candidates.len() != EXPECTED_CANDIDATES.len() {
            out.push(format!(
                "got {} candidates, want {}",
                self.candidates.len(),
                EXPECTED_CANDIDATES.len()
            ));
        }
        if self.record.chosen_index != self.case.expected_choice {
            out.push(format!(
                "chose path{}, want path{}",
                self.record.chosen_index + 1,
                self.case.expected_choice + 1
            ));
        }
        let got_lines: Vec<&str> = self.record.rationale.lines().collect();
        let want_lines: Vec<&str> = self.case.expected_rationale.lines().collect();
        let compared = if self.record.engine == Engine::Backend {
            0
        } else {
            got_lines.len().max(want_lines.len())
        };
        for i in 0..compared {
            let (g, w) = (got_lines.get(i), want_lines.get(i));
            if g != w {
                out.push(format!(
                    "rationale line {}: got {:?}, want {:?}",
                    i + 1,
                    g.unwrap_or(&""),
                    w.unwrap_or(&"")
                ));
            }
        }
        if self.route != self.case.expected_route {
            out.push(format!(
                "route: got {:?}, want {:?}",
                self.route, self.case.expected_route
            ));
        }
        out
    }
}

/// Run one case on free-flow travel times with a uniform prior, asking
/// `backend` first when given.
pub fn run_case(
    case: &GoldenCase,
    backend: Option<&dyn DecisionBackend>,
) -> Result<GoldenOutcome, GoldenError> {
    let net = generate_manhattan(4, 4)?;
    run_case_on(&net, case, backend)
}

pub fn run_case_on(
    net: &RoadNetwork,
    case: &GoldenCase,
    backend: Option<&dyn DecisionBackend>,
) -> Result<GoldenOutcome, GoldenError> {
    let constraints = RouteConstraints::from_ids(net, case.mandatory, case.forbidden)?;
    let state = TrafficState::free_flow(net, Default::default());
    let weights = state.weights(net);
    let current = net.edge_ix(CURRENT_EDGE)?;
    let target = net.edge_ix(TARGET_EDGE)?;
    let evals: Vec<CandidateEvaluation> = yen_k_shortest(net, &weights, current, target, 3)?
        .into_iter()
        .map(|c| {
            let (t, _) = state.path_time(net, c.path.edges());
            CandidateEvaluation::new(c, t, &constraints)
        })
        .collect();
    let junction = net.junction(net.junction_ix(JUNCTION)?);
    let prompt = build_prompt(net, VEHICLE, junction, &evals, &constraints);
    let candidates = prompt.manifest.iter().map(|m| m.edges.clone()).collect();
    let record = decide(
        net,
        VEHICLE,
        junction,
        evals,
        &constraints,
        &PathPrior::uniform(3),
        &DecisionParams::default(),
        backend,
    )?;
    let global = Path::from_ids(net, &GLOBAL_ROUTE)?;
    let pos = global
        .edges()
        .iter()
        .position(|&e| e == current)
        .expect("route holds current edge");
    let target_idx = global
        .edges()
        .iter()
        .position(|&e| e == target)
        .expect("route holds target");
    let route = splice(
        global.edges(),
        pos,
        record.chosen().path.path.edges(),
        target_idx,
    )
    .into_iter()
    .map(|e| net.edge(e).id.clone())
    .collect();
    Ok(GoldenOutcome {
        case: *case,
        candidates,
        prompt,
        record,
        route,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_cases_match() {
        for case in &CASES {
            let outcome = run_case(case, None).unwrap();
            assert!(
                outcome.mismatches().is_empty(),
                "{}: {:?}",
                case.name,
                outcome.mismatches()
            );
        }
    }

    #[test]
    fn prompt_carries_constraints() {
        let outcome = run_case(&CASES[2], None).unwrap();
        let text = &outcome.prompt.text;
        assert!(text.starts_with("Vehicle veh_42 has arrived at intersection A2."));
        assert!(text.contains("traffic_light_right_on_red"));
        assert!(text.contains("with the target edge being B2C2."));
        assert!(text.contains("Alternative path 3: [A3A2, A2A1, A1A0, A0B0, B0B1, B1B2, B2C2]"));
        assert!(text.contains("Mandatory path: A2A1\nError edges: A1B1\n"));
    }

    #[test]
    fn reference_backend_agrees() {
        use crate::gateway::stub::{StubMode, StubServer};
        use crate::gateway::{BackendConfig, HttpBackend};
        let server = StubServer::start(StubMode::Reference).unwrap();
        let backend = HttpBackend::new(&BackendConfig {
            endpoint: server.url(),
            enabled: true,
            ..Default::default()
        });
        for case in &CASES {
            let outcome = run_case(case, Some(&backend)).unwrap();
            assert_eq!(outcome.record.engine, Engine::Backend);
            assert!(
                outcome.mismatches().is_empty(),
                "{}: {:?}",
                case.name,
                outcome.mismatches()
            );
        }
    }

    #[test]
    fn mismatch_report() {
        let mut outcome = run_case(&CASES[0], None).unwrap();
        outcome.record.chosen_index = 1;
        outcome.record.rationale = outcome.record.rationale.replace("none", "A1B1");
        let diffs = outcome.mismatches();
        assert!(diffs.iter().any(|d| d == "chose path2, want path1"));
        assert!(diffs.iter().any(|d| d.starts_with("rationale line 3")));
    }
}
