//! Deterministic discrete-time traffic simulator with per-junction route
//! decisions for autonomous vehicles.
//!
//! Each step runs, in order: insertion of due vehicles, car-following with
//! red lights as standing obstacles, edge hand-offs, periodic observation and
//! transition-model updates, the AV decision hook, and retirement of arrived
//! vehicles. Invariants are checked after every step.

pub mod config;
pub mod demand;
pub mod idm;

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{CandidateEvaluation, DecisionError, DecisionRecord, Engine, PathPrior};
use crate::gateway::{decide, DecisionBackend, HttpBackend};
use crate::metrics::VehicleRecord;
use crate::network::{EdgeIx, JunctionIx, NetworkError, RoadNetwork};
use crate::routing::{
    critical_waypoint, dijkstra, dijkstra_restricted, route_via, yen_k_shortest, Restrictions,
    RouteConstraints, RoutingError,
};
use crate::traffic_state::{EdgeObservation, TrafficState};

pub use config::{Method, ScenarioConfig};
pub use demand::{assign_fleet, generate_demand, Trip};
pub use idm::{idm_acceleration, IdmParams};

use idm::ballistic;

/// Speed below which a vehicle counts as waiting, m/s.
pub const WAITING_SPEED: f64 = 0.1;
/// Minimum bumper-to-bumper distance kept by the position update, m.
const SAFETY_MARGIN: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("invariant violated at t={time}: {message}")]
    Invariant { time: f64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleKind {
    #[serde(rename = "AV")]
    Av,
    #[serde(rename = "HV")]
    Hv,
}

impl VehicleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleKind::Av => "AV",
            VehicleKind::Hv => "HV",
        }
    }
}

#[derive(Debug, Clone)]
struct PendingOutcome {
    rank: usize,
    predicted: f64,
    start: f64,
    target: EdgeIx,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: String,
    pub kind: VehicleKind,
    pub route: Vec<EdgeIx>,
    /// Free-flow constrained route fixed at departure; empty for HVs.
    pub global_path: Vec<EdgeIx>,
    pub destination: EdgeIx,
    pub edge_index: usize,
    pub offset: f64,
    pub speed: f64,
    pub depart_time: f64,
    pub inserted_time: Option<f64>,
    pub arrival_time: Option<f64>,
    pub visited_junctions: BTreeSet<JunctionIx>,
    pub waiting: f64,
    /// Passed the point where it could still stop for the current red light.
    committed: bool,
    last_decision: Option<(JunctionIx, usize)>,
    prior: PathPrior,
    pending: Vec<PendingOutcome>,
}

impl Vehicle {
    pub fn is_active(&self) -> bool {
        self.inserted_time.is_some() && self.arrival_time.is_none()
    }

    pub fn current_edge(&self) -> EdgeIx {
        self.route[self.edge_index]
    }

    pub fn traversed(&self) -> &[EdgeIx] {
        if self.inserted_time.is_some() {
            &self.route[..=self.edge_index]
        } else {
            &[]
        }
    }

    pub fn prior(&self) -> &PathPrior {
        &self.prior
    }
}

/// Replace the route segment from `pos` through `target_idx` with `chosen`,
/// which must start with the current edge and end with `route[target_idx]`.
pub fn splice(route: &[EdgeIx], pos: usize, chosen: &[EdgeIx], target_idx: usize) -> Vec<EdgeIx> {
    debug_assert_eq!(chosen.first(), Some(&route[pos]));
    debug_assert_eq!(chosen.last(), Some(&route[target_idx]));
    let mut out = Vec::with_capacity(pos + chosen.len() + route.len() - target_idx);
    out.extend_from_slice(&route[..pos]);
    out.extend_from_slice(chosen);
    out.extend_from_slice(&route[target_idx + 1..]);
    out
}

/// Shortest route from `src` to `dst` through every mandatory edge and around
/// every forbidden one. Mandatory edges are visited nearest-first.
pub fn constrained_route(
    net: &RoadNetwork,
    weights: &[f64],
    src: EdgeIx,
    mandatory: &BTreeSet<EdgeIx>,
    dst: EdgeIx,
    forbidden: &BTreeSet<EdgeIx>,
) -> Result<Vec<EdgeIx>, RoutingError> {
    let restrictions = Restrictions {
        banned_edges: forbidden.iter().copied().collect::<HashSet<_>>(),
        banned_junctions: HashSet::new(),
    };
    let mut remaining: BTreeSet<EdgeIx> = mandatory
        .iter()
        .copied()
        .filter(|&m| m != src && m != dst)
        .collect();
    let mut waypoints = Vec::new();
    let mut at = src;
    while !remaining.is_empty() {
        let mut best: Option<(f64, EdgeIx)> = None;
        for &m in &remaining {
            if let Ok(p) = dijkstra_restricted(net, weights, at, m, &restrictions) {
                if best.is_none_or(|(c, _)| p.cost < c) {
                    best = Some((p.cost, m));
                }
            }
        }
        let (_, next) = best.ok_or_else(|| RoutingError::NoRoute {
            from: net.edge(at).id.clone(),
            to: net.edge(*remaining.iter().next().unwrap()).id.clone(),
        })?;
        remaining.remove(&next);
        waypoints.push(next);
        at = next;
    }
    route_via(net, weights, src, &waypoints, dst, &restrictions)
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub records: Vec<VehicleRecord>,
    pub decisions: Vec<String>,
    pub events: Vec<String>,
    pub steps: u64,
    pub end_time: f64,
    pub n_av: usize,
    pub fallback_decisions: usize,
}

pub struct Simulation {
    net: RoadNetwork,
    config: ScenarioConfig,
    av_constraints: RouteConstraints,
    vehicles: Vec<Vehicle>,
    waiting_queue: VecDeque<usize>,
    /// Vehicles per edge, leader first.
    queues: Vec<Vec<usize>>,
    traffic: TrafficState,
    live_weights: Vec<f64>,
    window_speed: Vec<f64>,
    window_samples: Vec<u32>,
    steps: u64,
    time: f64,
    inserted: usize,
    arrived: usize,
    n_av: usize,
    backend: Option<Box<dyn DecisionBackend>>,
    depart_at_rest: bool,
    events: Vec<String>,
    decision_lines: Vec<String>,
    decision_records: Vec<(f64, DecisionRecord)>,
    fallback_decisions: usize,
}

impl Simulation {
    /// Load the network from the scenario and build the simulation.
    pub fn from_config(config: ScenarioConfig) -> Result<Self, SimError> {
        let net = config.network.load(None)?;
        Self::new(net, config)
    }

    pub fn new(net: RoadNetwork, config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut demand_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trips = generate_demand(&net, &config.demand, &mut demand_rng)?;
        Self::with_trips(net, config, trips)
    }

    /// Build from an explicit trip list instead of generated demand.
    pub fn with_trips(
        net: RoadNetwork,
        config: ScenarioConfig,
        trips: Vec<Trip>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let mut fleet_rng = ChaCha8Rng::seed_from_u64(config.seed);
        fleet_rng.set_stream(1);
        let (n_av, av_set) = assign_fleet(trips.len(), config.penetration_rate, &mut fleet_rng);
        let av_constraints = config.constraints.av.resolve(&net)?;
        let hv_constraints = config.constraints.hv.resolve(&net)?;
        let static_weights = net.free_flow_weights();
        let mut routes: HashMap<(EdgeIx, EdgeIx, VehicleKind), Vec<EdgeIx>> = HashMap::new();
        let mut vehicles = Vec::with_capacity(trips.len());
        let mut order: Vec<usize> = (0..trips.len()).collect();
        order.sort_by(|&a, &b| trips[a].depart.total_cmp(&trips[b].depart).then(a.cmp(&b)));
        for (i, trip) in trips.into_iter().enumerate() {
            let kind = if av_set.contains(&i) {
                VehicleKind::Av
            } else {
                VehicleKind::Hv
            };
            let constraints = match kind {
                VehicleKind::Av => &av_constraints,
                VehicleKind::Hv => &hv_constraints,
            };
            let key = (trip.origin, trip.destination, kind);
            let route = match routes.get(&key) {
                Some(r) => r.clone(),
                None => {
                    let r = constrained_route(
                        &net,
                        &static_weights,
                        trip.origin,
                        constraints.mandatory(),
                        trip.destination,
                        constraints.forbidden(),
                    )?;
                    routes.insert(key, r.clone());
                    r
                }
            };
            vehicles.push(Vehicle {
                id: trip.vehicle,
                kind,
                global_path: if kind == VehicleKind::Av {
                    route.clone()
                } else {
                    Vec::new()
                },
                route,
                destination: trip.destination,
                edge_index: 0,
                offset: 0.0,
                speed: 0.0,
                depart_time: trip.depart,
                inserted_time: None,
                arrival_time: None,
                visited_junctions: BTreeSet::new(),
                waiting: 0.0,
                committed: false,
                last_decision: None,
                prior: PathPrior::uniform(config.routing.k),
                pending: Vec::new(),
            });
        }
        let backend: Option<Box<dyn DecisionBackend>> = if config.backend.enabled {
            Some(Box::new(HttpBackend::new(&config.backend)))
        } else {
            None
        };
        let traffic = TrafficState::free_flow(&net, Default::default());
        let live_weights = traffic.weights(&net);
        let edge_count = net.edge_count();
        Ok(Simulation {
            queues: vec![Vec::new(); edge_count],
            window_speed: vec![0.0; edge_count],
            window_samples: vec![0; edge_count],
            waiting_queue: order.into(),
            net,
            config,
            av_constraints,
            vehicles,
            traffic,
            live_weights,
            steps: 0,
            time: 0.0,
            inserted: 0,
            arrived: 0,
            n_av,
            backend,
            depart_at_rest: false,
            events: Vec::new(),
            decision_lines: Vec::new(),
            decision_records: Vec::new(),
            fallback_decisions: 0,
        })
    }

    /// Replace the decision backend (or remove it with `None`).
    pub fn set_backend(&mut self, backend: Option<Box<dyn DecisionBackend>>) {
        self.backend = backend;
    }

    /// Insert vehicles standing instead of at the largest safe speed.
    pub fn set_depart_at_rest(&mut self, at_rest: bool) {
        self.depart_at_rest = at_rest;
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn inserted(&self) -> usize {
        self.inserted
    }

    pub fn arrived(&self) -> usize {
        self.arrived
    }

    pub fn active(&self) -> usize {
        self.queues.iter().map(Vec::len).sum()
    }

    pub fn n_av(&self) -> usize {
        self.n_av
    }

    pub fn queue(&self, e: EdgeIx) -> &[usize] {
        &self.queues[e.0]
    }

    pub fn traffic(&self) -> &TrafficState {
        &self.traffic
    }

    pub fn decision_records(&self) -> &[(f64, DecisionRecord)] {
        &self.decision_records
    }

    pub fn is_finished(&self) -> bool {
        self.waiting_queue.is_empty() && self.active() == 0
    }

    /// Bumper-to-bumper gaps of every follower, per edge.
    pub fn follower_gaps(&self) -> Vec<f64> {
        let len = self.config.idm.vehicle_length;
        self.queues
            .iter()
            .flat_map(|q| {
                q.windows(2)
                    .map(move |w| self.vehicles[w[0]].offset - len - self.vehicles[w[1]].offset)
            })
            .collect()
    }

    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        while !self.is_finished() && self.steps < self.config.max_steps {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> SimOutcome {
        let records = self
            .vehicles
            .iter()
            .map(|v| VehicleRecord::from_vehicle(&self.net, v))
            .collect();
        SimOutcome {
            records,
            decisions: self.decision_lines,
            events: self.events,
            steps: self.steps,
            end_time: self.time,
            n_av: self.n_av,
            fallback_decisions: self.fallback_decisions,
        }
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        let dt = self.config.step_length;
        let t = self.time;
        self.insert_due(t);
        self.move_vehicles(t, dt);
        let arriving = self.hand_offs(t, t + dt);
        for q in &self.queues {
            for &vi in q {
                let v = &self.vehicles[vi];
                self.window_speed[v.current_edge().0] += v.speed;
                self.window_samples[v.current_edge().0] += 1;
            }
        }
        for q in &self.queues {
            for &vi in q {
                if self.vehicles[vi].speed < WAITING_SPEED {
                    self.vehicles[vi].waiting += dt;
                }
            }
        }
        self.time = t + dt;
        self.steps += 1;
        if self.steps.is_multiple_of(self.config.observation_interval) {
            self.update_observations();
        }
        if self.config.method != Method::StaticDijkstra {
            self.control_hook(&arriving);
        }
        self.retire(arriving);
        self.check_invariants()
    }

    fn insert_due(&mut self, t: f64) {
        let p = self.config.idm;
        let mut blocked = Vec::new();
        while let Some(&vi) = self.waiting_queue.front() {
            if self.vehicles[vi].depart_time > t + 1e-9 {
                break;
            }
            self.waiting_queue.pop_front();
            let origin = self.vehicles[vi].route[0];
            let v_max = self.net.edge(origin).v_max;
            let gap = self.queues[origin.0].last().map_or(f64::INFINITY, |&tail| {
                self.vehicles[tail].offset - p.vehicle_length
            });
            if gap <= p.min_gap {
                blocked.push(vi);
                continue;
            }
            let speed = if self.depart_at_rest {
                0.0
            } else {
                ((gap - p.min_gap) / p.headway).clamp(0.0, v_max)
            };
            let v = &mut self.vehicles[vi];
            v.inserted_time = Some(t);
            v.speed = speed;
            v.offset = 0.0;
            self.queues[origin.0].push(vi);
            self.inserted += 1;
            self.events.push(format!(
                "{t:.1} insert {} {} {}",
                v.id,
                v.kind.as_str(),
                self.net.edge(origin).id
            ));
        }
        for vi in blocked.into_iter().rev() {
            self.waiting_queue.push_front(vi);
        }
    }

    fn red_for(&self, e: EdgeIx, t: f64) -> bool {
        self.net
            .signal_for(e)
            .is_some_and(|p| !p.is_green(&self.net.edge(e).id, t))
    }

    fn move_vehicles(&mut self, t: f64, dt: f64) {
        let p = self.config.idm;
        let mut updates: Vec<(usize, f64, f64, bool)> = Vec::with_capacity(self.active());
        for (ei, q) in self.queues.iter().enumerate() {
            let edge = self.net.edge(EdgeIx(ei));
            for (k, &vi) in q.iter().enumerate() {
                let v = &self.vehicles[vi];
                let mut committed = v.committed;
                let (gap, dv) = if k > 0 {
                    let leader = &self.vehicles[q[k - 1]];
                    (
                        leader.offset - p.vehicle_length - v.offset,
                        v.speed - leader.speed,
                    )
                } else if v.edge_index + 1 == v.route.len() {
                    (f64::INFINITY, 0.0)
                } else {
                    let to_end = edge.length - v.offset;
                    let must_stop = if !committed && self.red_for(EdgeIx(ei), t) {
                        if v.speed * v.speed / (2.0 * p.emergency_decel) <= to_end {
                            true
                        } else {
                            committed = true;
                            false
                        }
                    } else {
                        false
                    };
                    if must_stop {
                        (to_end, v.speed)
                    } else {
                        let next = v.route[v.edge_index + 1];
                        match self.queues[next.0].last() {
                            Some(&tail) => {
                                let tail = &self.vehicles[tail];
                                (
                                    to_end + tail.offset - p.vehicle_length,
                                    v.speed - tail.speed,
                                )
                            }
                            None => (f64::INFINITY, 0.0),
                        }
                    }
                };
                let a = idm_acceleration(&p, v.speed, edge.v_max, gap.max(1e-3), dv);
                let (mut speed, mut disp) = ballistic(v.speed, a, dt, edge.v_max);
                if gap.is_finite() {
                    let limit = (gap - SAFETY_MARGIN).max(0.0);
                    if disp > limit {
                        disp = limit;
                        speed = speed.min(limit / dt);
                    }
                }
                updates.push((vi, speed, v.offset + disp, committed));
            }
        }
        for (vi, speed, offset, committed) in updates {
            let v = &mut self.vehicles[vi];
            v.speed = speed;
            v.offset = offset;
            v.committed = committed;
        }
    }

    /// Move vehicles that ran past their edge end onto the next edge; returns
    /// the vehicles that reached the end of their destination edge.
    fn hand_offs(&mut self, t: f64, now: f64) -> Vec<usize> {
        let len = self.config.idm.vehicle_length;
        let mut over: Vec<(f64, usize)> = Vec::new();
        let mut arriving = Vec::new();
        for q in &self.queues {
            let Some(&vi) = q.first() else { continue };
            let v = &self.vehicles[vi];
            let length = self.net.edge(v.current_edge()).length;
            if v.edge_index + 1 == v.route.len() {
                if v.offset >= length - 1e-9 {
                    arriving.push(vi);
                }
            } else if v.offset > length {
                over.push((v.offset - length, vi));
            }
        }
        over.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (overshoot, vi) in over {
            let from = self.vehicles[vi].current_edge();
            let length = self.net.edge(from).length;
            let next = self.vehicles[vi].route[self.vehicles[vi].edge_index + 1];
            let allowed = !self.red_for(from, t) || self.vehicles[vi].committed;
            let mut offset = overshoot.min(self.net.edge(next).length);
            if let Some(&tail) = self.queues[next.0].last() {
                offset = offset.min(self.vehicles[tail].offset - len - SAFETY_MARGIN);
            }
            if !allowed || offset < 0.0 {
                let v = &mut self.vehicles[vi];
                v.offset = length;
                v.speed = 0.0;
                continue;
            }
            self.queues[from.0].remove(0);
            self.queues[next.0].push(vi);
            let v = &mut self.vehicles[vi];
            v.edge_index += 1;
            v.offset = offset;
            v.committed = false;
            self.resolve_pending(vi, from, now);
        }
        for &vi in &arriving {
            let v = &mut self.vehicles[vi];
            v.offset = self.net.edge(v.current_edge()).length;
            let edge = v.current_edge();
            self.resolve_pending(vi, edge, now);
        }
        arriving
    }

    /// Feed realized times of completed decision windows back into the prior.
    fn resolve_pending(&mut self, vi: usize, finished_edge: EdgeIx, now: f64) {
        let params = self.config.decision;
        let v = &mut self.vehicles[vi];
        let (done, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut v.pending)
            .into_iter()
            .partition(|p| p.target == finished_edge);
        v.pending = keep;
        for p in done {
            let realized = (now - p.start).max(1e-9);
            if let Ok(prior) =
                crate::decision::update_prior(&v.prior, p.rank, realized, p.predicted, &params)
            {
                v.prior = prior;
            }
        }
    }

    fn update_observations(&mut self) {
        for ei in 0..self.net.edge_count() {
            let e = EdgeIx(ei);
            let edge = self.net.edge(e);
            let v_avg = if self.window_samples[ei] > 0 {
                self.window_speed[ei] / self.window_samples[ei] as f64
            } else {
                edge.v_max
            };
            let obs = EdgeObservation::new(e, edge, v_avg, self.queues[ei].len() as u32, self.time);
            let params = self.traffic.params;
            let prev = params.classify(self.traffic.observations[ei].v_avg, edge.v_max);
            let next = params.classify(obs.v_avg, edge.v_max);
            self.traffic.model.record_transition(e, prev, next);
            self.traffic.observations[ei] = obs;
            self.window_speed[ei] = 0.0;
            self.window_samples[ei] = 0;
        }
        self.live_weights = self.traffic.weights(&self.net);
    }

    fn control_hook(&mut self, arriving: &[usize]) {
        let radius = self.config.routing.trigger_radius_m;
        let literal = self.config.routing.literal_visit_trigger;
        let mut deciding = Vec::new();
        for (vi, v) in self.vehicles.iter_mut().enumerate() {
            if v.kind != VehicleKind::Av || !v.is_active() || arriving.contains(&vi) {
                continue;
            }
            if v.edge_index + 1 >= v.route.len() {
                continue;
            }
            let edge = self.net.edge(v.current_edge());
            if edge.length - v.offset > radius {
                continue;
            }
            let junction = edge.to;
            let decide_now = if literal {
                let approach = (junction, v.edge_index);
                if v.last_decision == Some(approach) {
                    false
                } else if v.visited_junctions.contains(&junction) {
                    v.last_decision = Some(approach);
                    true
                } else {
                    v.visited_junctions.insert(junction);
                    v.last_decision = Some(approach);
                    false
                }
            } else {
                v.visited_junctions.insert(junction)
            };
            if decide_now {
                deciding.push(vi);
            }
        }
        for vi in deciding {
            match self.config.method {
                Method::DynamicDijkstra => self.reroute_shortest(vi),
                Method::CandidateChoice => self.choose_candidate(vi),
                Method::StaticDijkstra => {}
            }
        }
    }

    fn reroute_shortest(&mut self, vi: usize) {
        let v = &self.vehicles[vi];
        let pos = v.edge_index;
        let Ok(best) = dijkstra(
            &self.net,
            &self.live_weights,
            v.current_edge(),
            v.destination,
        ) else {
            return;
        };
        let mut route = v.route[..pos].to_vec();
        route.extend_from_slice(best.path.edges());
        let changed = route != v.route;
        let junction = self.net.edge(v.current_edge()).to;
        self.events.push(format!(
            "{:.1} reroute {} {}{}",
            self.time,
            v.id,
            self.net.junction(junction).id,
            if changed { " changed" } else { "" }
        ));
        self.vehicles[vi].route = route;
    }

    fn choose_candidate(&mut self, vi: usize) {
        let net = &self.net;
        let pos = self.vehicles[vi].edge_index;
        let current = self.vehicles[vi].current_edge();
        let junction = net.junction(net.edge(current).to);

        if self.config.routing.reanchor_global {
            let v = &self.vehicles[vi];
            let done: BTreeSet<EdgeIx> = v.route[..pos].iter().copied().collect();
            let remaining: BTreeSet<EdgeIx> = self
                .av_constraints
                .mandatory()
                .difference(&done)
                .copied()
                .collect();
            if let Ok(global) = constrained_route(
                net,
                &self.live_weights,
                current,
                &remaining,
                v.destination,
                self.av_constraints.forbidden(),
            ) {
                let v = &mut self.vehicles[vi];
                v.route.truncate(pos);
                v.route.extend_from_slice(&global);
                v.global_path = global;
            }
        }

        let v = &self.vehicles[vi];
        let ahead = &v.route[pos..];
        // A forbidden target pushes the target further downstream.
        let mut horizon = self.config.routing.horizon;
        let target = loop {
            let Ok(t) = critical_waypoint(&v.global_path, ahead, horizon) else {
                return;
            };
            if !self.av_constraints.forbidden().contains(&t)
                || t == v.destination
                || horizon >= v.global_path.len()
            {
                break t;
            }
            horizon += 1;
        };
        let Some(target_idx) = ahead.iter().position(|&e| e == target).map(|i| i + pos) else {
            return;
        };
        if target_idx == pos {
            return;
        }
        let window: BTreeSet<EdgeIx> = v.route[pos..=target_idx].iter().copied().collect();
        let mandatory: BTreeSet<EdgeIx> = self
            .av_constraints
            .mandatory()
            .intersection(&window)
            .copied()
            .collect();
        let constraints = RouteConstraints::new(mandatory, self.av_constraints.forbidden().clone())
            .expect("subset of consistent constraints");

        let Ok(candidates) = yen_k_shortest(
            net,
            &self.live_weights,
            current,
            target,
            self.config.routing.k,
        ) else {
            return;
        };
        let evals: Vec<CandidateEvaluation> = candidates
            .into_iter()
            .map(|c| {
                let (t, _) = self.traffic.path_time(net, c.path.edges());
                CandidateEvaluation::new(c, t, &constraints)
            })
            .collect();
        let result = decide(
            net,
            &v.id,
            junction,
            evals,
            &constraints,
            &v.prior,
            &self.config.decision,
            self.backend.as_deref(),
        );
        let time = self.time;
        match result {
            Ok(record) => {
                let chosen = record.chosen();
                debug_assert!(chosen.admissible);
                let edges = chosen.path.path.edges().to_vec();
                let done_fraction = v.offset / net.edge(current).length;
                let predicted = (chosen.predicted_time
                    - done_fraction * self.traffic.edge_time(net, current, false))
                .max(1e-9);
                let pending = PendingOutcome {
                    rank: record.chosen_index,
                    predicted,
                    start: time,
                    target,
                };
                let route = splice(&v.route, pos, &edges, target_idx);
                if record.engine == Engine::Fallback {
                    self.fallback_decisions += 1;
                }
                self.events.push(format!(
                    "{time:.1} decide {} {} {} {}",
                    v.id,
                    junction.id,
                    crate::decision::candidate_label(record.chosen_index),
                    serde_json::to_string(&record.engine)
                        .unwrap()
                        .trim_matches('"')
                ));
                self.decision_lines.push(record.log_line(net, time));
                self.decision_records.push((time, record));
                let v = &mut self.vehicles[vi];
                v.route = route;
                let ahead: HashSet<EdgeIx> = v.route[pos..].iter().copied().collect();
                v.pending.retain(|p| ahead.contains(&p.target));
                v.pending.push(pending);
            }
            Err(DecisionError::NoAdmissibleCandidate) => {
                // Keep window-mandatory edges, drop forbidden ones, rerun on live weights.
                let ordered: Vec<EdgeIx> = v.route[pos + 1..target_idx]
                    .iter()
                    .copied()
                    .filter(|e| constraints.mandatory().contains(e))
                    .collect();
                let restrictions = Restrictions {
                    banned_edges: constraints.forbidden().iter().copied().collect(),
                    banned_junctions: HashSet::new(),
                };
                let leg = route_via(
                    net,
                    &self.live_weights,
                    current,
                    &ordered,
                    target,
                    &restrictions,
                );
                self.fallback_decisions += 1;
                self.events.push(format!(
                    "{time:.1} no-admissible {} {}{}",
                    v.id,
                    junction.id,
                    if leg.is_ok() { " rerouted" } else { "" }
                ));
                if let Ok(leg) = leg {
                    let route = splice(&v.route, pos, &leg, target_idx);
                    self.vehicles[vi].route = route;
                }
            }
            Err(e) => {
                self.events.push(format!(
                    "{time:.1} decision-error {} {} {e}",
                    v.id, junction.id
                ));
            }
        }
    }

    fn retire(&mut self, arriving: Vec<usize>) {
        for vi in arriving {
            let e = self.vehicles[vi].current_edge();
            self.queues[e.0].retain(|&x| x != vi);
            let v = &mut self.vehicles[vi];
            v.arrival_time = Some(self.time);
            self.arrived += 1;
            self.events.push(format!(
                "{:.1} arrive {} {}",
                self.time,
                v.id,
                self.net.edge(e).id
            ));
        }
    }

    fn check_invariants(&self) -> Result<(), SimError> {
        let fail = |message: String| {
            Err(SimError::Invariant {
                time: self.time,
                message,
            })
        };
        let active = self.active();
        if self.inserted != active + self.arrived {
            return fail(format!(
                "conservation: inserted {} != active {active} + arrived {}",
                self.inserted, self.arrived
            ));
        }
        let len = self.config.idm.vehicle_length;
        for (ei, q) in self.queues.iter().enumerate() {
            let edge = self.net.edge(EdgeIx(ei));
            for (k, &vi) in q.iter().enumerate() {
                let v = &self.vehicles[vi];
                if v.route.get(v.edge_index) != Some(&EdgeIx(ei)) {
                    return fail(format!("{} queued on {} off its route", v.id, edge.id));
                }
                if !(0.0..=edge.length + 1e-9).contains(&v.offset) {
                    return fail(format!("{} offset {} outside {}", v.id, v.offset, edge.id));
                }
                if !(0.0..=edge.v_max + 0.5).contains(&v.speed) {
                    return fail(format!("{} speed {} out of bounds", v.id, v.speed));
                }
                if k > 0 {
                    let leader = &self.vehicles[q[k - 1]];
                    let gap = leader.offset - len - v.offset;
                    if gap <= 0.0 {
                        return fail(format!(
                            "collision on {}: {} behind {} with gap {gap}",
                            edge.id, v.id, leader.id
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
