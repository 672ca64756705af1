//! Live edge observations, a three-state Markov model of edge conditions,
//! expected signal waits and travel-time prediction.

use thiserror::Error;

use crate::network::{Edge, EdgeIx, RoadNetwork, SignalProgram};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("edge {0} is not governed by this signal program")]
    NotGoverned(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeState {
    Congested,
    Slow,
    Free,
}

impl EdgeState {
    pub const ALL: [EdgeState; 3] = [EdgeState::Free, EdgeState::Slow, EdgeState::Congested];

    pub fn index(self) -> usize {
        match self {
            EdgeState::Free => 0,
            EdgeState::Slow => 1,
            EdgeState::Congested => 2,
        }
    }
}

/// Thresholds and representative speeds of the state model. Speeds are
/// fractions of the edge speed limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateParams {
    pub free_ratio: f64,
    pub slow_ratio: f64,
    pub free_speed: f64,
    pub slow_speed: f64,
    pub congested_speed: f64,
    pub min_speed_mps: f64,
    pub smoothing: f64,
}

impl Default for StateParams {
    fn default() -> Self {
        StateParams {
            free_ratio: 0.7,
            slow_ratio: 0.3,
            free_speed: 0.85,
            slow_speed: 0.5,
            congested_speed: 0.15,
            min_speed_mps: 0.5,
            smoothing: 1.0,
        }
    }
}

impl StateParams {
    pub fn representative_speed(&self, state: EdgeState) -> f64 {
        match state {
            EdgeState::Free => self.free_speed,
            EdgeState::Slow => self.slow_speed,
            EdgeState::Congested => self.congested_speed,
        }
    }

    pub fn classify(&self, v_avg: f64, v_max: f64) -> EdgeState {
        let ratio = v_avg / v_max;
        if ratio >= self.free_ratio {
            EdgeState::Free
        } else if ratio >= self.slow_ratio {
            EdgeState::Slow
        } else {
            EdgeState::Congested
        }
    }
}

/// Default-threshold classification of an observed mean speed.
pub fn classify(v_avg: f64, v_max: f64) -> EdgeState {
    StateParams::default().classify(v_avg, v_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeObservation {
    pub edge: EdgeIx,
    pub v_avg: f64,
    pub vehicle_count: u32,
    /// Vehicles per meter per lane.
    pub density: f64,
    pub timestamp: f64,
}

impl EdgeObservation {
    pub fn new(ix: EdgeIx, edge: &Edge, v_avg: f64, vehicle_count: u32, timestamp: f64) -> Self {
        EdgeObservation {
            edge: ix,
            v_avg: v_avg.clamp(0.0, edge.v_max),
            vehicle_count,
            density: vehicle_count as f64 / (edge.length * edge.lanes as f64),
            timestamp,
        }
    }

    /// Empty edge at its speed limit.
    pub fn free_flow(ix: EdgeIx, edge: &Edge, timestamp: f64) -> Self {
        Self::new(ix, edge, edge.v_max, 0, timestamp)
    }
}

/// Per-edge transition counts between consecutive observed states, with
/// additive smoothing when read as probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    counts: Vec<[[u64; 3]; 3]>,
    alpha: f64,
}

impl TransitionModel {
    pub fn new(edge_count: usize) -> Self {
        Self::with_smoothing(edge_count, 1.0)
    }

    pub fn with_smoothing(edge_count: usize, alpha: f64) -> Self {
        assert!(alpha > 0.0, "smoothing must be positive");
        TransitionModel {
            counts: vec![[[0; 3]; 3]; edge_count],
            alpha,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn record_transition(&mut self, edge: EdgeIx, prev: EdgeState, next: EdgeState) {
        self.counts[edge.0][prev.index()][next.index()] += 1;
    }

    /// Set counts directly, e.g. when seeding from history.
    pub fn set_count(&mut self, edge: EdgeIx, prev: EdgeState, next: EdgeState, count: u64) {
        self.counts[edge.0][prev.index()][next.index()] = count;
    }

    pub fn count(&self, edge: EdgeIx, prev: EdgeState, next: EdgeState) -> u64 {
        self.counts[edge.0][prev.index()][next.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().flatten().sum()
    }

    pub fn transition_probability(&self, edge: EdgeIx, prev: EdgeState, next: EdgeState) -> f64 {
        let row = &self.counts[edge.0][prev.index()];
        let total: u64 = row.iter().sum();
        (row[next.index()] as f64 + self.alpha) / (total as f64 + 3.0 * self.alpha)
    }

    /// Next-state distribution in [`EdgeState::ALL`] order.
    pub fn row(&self, edge: EdgeIx, prev: EdgeState) -> [f64; 3] {
        EdgeState::ALL.map(|next| self.transition_probability(edge, prev, next))
    }
}

/// Expected stop-line wait for a vehicle arriving uniformly at random over the
/// cycle: each red run of length r contributes r^2 / (2C).
pub fn expected_signal_wait(program: &SignalProgram, edge_id: &str) -> Result<f64, TrafficError> {
    let runs = program
        .red_runs(edge_id)
        .ok_or_else(|| TrafficError::NotGoverned(edge_id.to_string()))?;
    Ok(runs.iter().map(|r| r * r).sum::<f64>() / (2.0 * program.cycle()))
}

/// Predicted traversal time of one edge: length over the expected effective
/// speed one step ahead, plus the expected signal wait when `program` is given.
pub fn estimate_edge_time(
    edge: &Edge,
    obs: &EdgeObservation,
    model: &TransitionModel,
    program: Option<&SignalProgram>,
    params: &StateParams,
) -> f64 {
    let current = params.classify(obs.v_avg, edge.v_max);
    let row = model.row(obs.edge, current);
    let v_eff: f64 = EdgeState::ALL
        .iter()
        .zip(row)
        .map(|(&s, p)| p * params.representative_speed(s) * edge.v_max)
        .sum();
    let travel = edge.length / v_eff.max(params.min_speed_mps);
    let wait = program
        .and_then(|p| expected_signal_wait(p, &edge.id).ok())
        .unwrap_or(0.0);
    travel + wait
}

/// Snapshot of everything travel-time prediction reads.
#[derive(Debug, Clone)]
pub struct TrafficState {
    pub params: StateParams,
    pub observations: Vec<EdgeObservation>,
    pub model: TransitionModel,
}

impl TrafficState {
    /// Every edge empty and at its speed limit, no transition history.
    pub fn free_flow(net: &RoadNetwork, params: StateParams) -> Self {
        TrafficState {
            observations: net
                .edges()
                .iter()
                .enumerate()
                .map(|(i, e)| EdgeObservation::free_flow(EdgeIx(i), e, 0.0))
                .collect(),
            model: TransitionModel::with_smoothing(net.edge_count(), params.smoothing),
            params,
        }
    }

    pub fn edge_time(&self, net: &RoadNetwork, e: EdgeIx, with_signal: bool) -> f64 {
        let program = if with_signal { net.signal_for(e) } else { None };
        estimate_edge_time(
            net.edge(e),
            &self.observations[e.0],
            &self.model,
            program,
            &self.params,
        )
    }

    /// Per-edge routing weights, signal wait included.
    pub fn weights(&self, net: &RoadNetwork) -> Vec<f64> {
        (0..net.edge_count())
            .map(|i| self.edge_time(net, EdgeIx(i), true))
            .collect()
    }

    /// Predicted time and light count of a path. The final edge is timed
    /// without its downstream signal, matching how lights are counted.
    pub fn path_time(&self, net: &RoadNetwork, path: &[EdgeIx]) -> (f64, u32) {
        let n = path.len();
        let time = path
            .iter()
            .enumerate()
            .map(|(i, &e)| self.edge_time(net, e, i + 1 < n))
            .sum();
        (time, crate::routing::light_count(net, path))
    }
}
