//! Edge-to-edge routing: shortest paths, loopless k-shortest candidates,
//! hard route constraints and critical-segment waypoints.
//!
//! Paths are sequences of edges. A path is loopless when no junction is
//! visited twice, counting the start junction of the first edge. Ties between
//! equal-cost paths are broken by fewer signalized junctions, then by the
//! lexicographic order of the edge-id sequence.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use thiserror::Error;

use crate::network::{EdgeIx, JunctionIx, NetworkError, RoadNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("no route from {from} to {to}")]
    NoRoute { from: String, to: String },
    #[error("edge weight for {edge} must be finite and positive, got {weight}")]
    InvalidWeight { edge: String, weight: f64 },
    #[error("expected {expected} edge weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no admissible candidate")]
    NoAdmissibleCandidate,
    #[error("edge {0} is both mandatory and forbidden")]
    ConflictingConstraint(String),
    #[error("global path exhausted: vehicle is already on the final edge")]
    PathExhausted,
    #[error("route never rejoins the global path")]
    OffGlobalPath,
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Non-empty, connected, loopless edge sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path(Vec<EdgeIx>);

impl Path {
    pub fn new(net: &RoadNetwork, edges: Vec<EdgeIx>) -> Result<Self, RoutingError> {
        if edges.is_empty() {
            return Err(RoutingError::InvalidPath("empty".into()));
        }
        for pair in edges.windows(2) {
            if !net.successors_of(pair[0]).contains(&pair[1]) {
                return Err(RoutingError::InvalidPath(format!(
                    "{} does not continue into {}",
                    net.edge(pair[0]).id,
                    net.edge(pair[1]).id
                )));
            }
        }
        if !is_loopless(net, &edges) {
            return Err(RoutingError::InvalidPath("junction visited twice".into()));
        }
        Ok(Path(edges))
    }

    pub fn from_ids<S: AsRef<str>>(net: &RoadNetwork, ids: &[S]) -> Result<Self, RoutingError> {
        let edges = ids
            .iter()
            .map(|id| net.edge_ix(id.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Path::new(net, edges)
    }

    /// Wrap a sequence the caller already knows to be valid.
    pub(crate) fn trusted(edges: Vec<EdgeIx>) -> Self {
        debug_assert!(!edges.is_empty());
        Path(edges)
    }

    pub fn edges(&self) -> &[EdgeIx] {
        &self.0
    }

    pub fn first(&self) -> EdgeIx {
        self.0[0]
    }

    pub fn last(&self) -> EdgeIx {
        *self.0.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, e: EdgeIx) -> bool {
        self.0.contains(&e)
    }

    pub fn ids<'a>(&'a self, net: &'a RoadNetwork) -> Vec<&'a str> {
        net.edge_ids(&self.0).collect()
    }

    pub fn into_edges(self) -> Vec<EdgeIx> {
        self.0
    }
}

pub fn is_loopless(net: &RoadNetwork, edges: &[EdgeIx]) -> bool {
    let Some(first) = edges.first() else {
        return true;
    };
    let mut seen = HashSet::with_capacity(edges.len() + 1);
    seen.insert(net.edge(*first).from);
    edges.iter().all(|e| seen.insert(net.edge(*e).to))
}

/// Signalized junctions passed before the final edge.
pub fn light_count(net: &RoadNetwork, edges: &[EdgeIx]) -> u32 {
    match edges.split_last() {
        Some((_, init)) => init.iter().filter(|e| net.ends_at_signal(**e)).count() as u32,
        None => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostedPath {
    pub path: Path,
    pub cost: f64,
    pub light_count: u32,
}

impl CostedPath {
    pub fn evaluate(net: &RoadNetwork, weights: &[f64], path: Path) -> Self {
        let cost = path.edges().iter().map(|e| weights[e.0]).sum();
        let light_count = light_count(net, path.edges());
        CostedPath {
            path,
            cost,
            light_count,
        }
    }

    /// Total order used for every deterministic ranking in this module.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.light_count.cmp(&other.light_count))
            .then_with(|| self.path.cmp(&other.path))
    }
}

/// Hard constraints: every mandatory edge must be used, no forbidden edge may be.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouteConstraints {
    mandatory: BTreeSet<EdgeIx>,
    forbidden: BTreeSet<EdgeIx>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Violation {
    MandatoryMissing(EdgeIx),
    ForbiddenHit(EdgeIx),
}

impl RouteConstraints {
    pub fn new(
        mandatory: BTreeSet<EdgeIx>,
        forbidden: BTreeSet<EdgeIx>,
    ) -> Result<Self, RoutingError> {
        if let Some(e) = mandatory.intersection(&forbidden).next() {
            return Err(RoutingError::ConflictingConstraint(format!("#{}", e.0)));
        }
        Ok(RouteConstraints {
            mandatory,
            forbidden,
        })
    }

    pub fn from_ids<S: AsRef<str>>(
        net: &RoadNetwork,
        mandatory: &[S],
        forbidden: &[S],
    ) -> Result<Self, RoutingError> {
        let resolve = |ids: &[S]| {
            ids.iter()
                .map(|id| net.edge_ix(id.as_ref()))
                .collect::<Result<BTreeSet<_>, _>>()
        };
        let mandatory = resolve(mandatory)?;
        let forbidden = resolve(forbidden)?;
        if let Some(e) = mandatory.intersection(&forbidden).next() {
            return Err(RoutingError::ConflictingConstraint(net.edge(*e).id.clone()));
        }
        Ok(RouteConstraints {
            mandatory,
            forbidden,
        })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn mandatory(&self) -> &BTreeSet<EdgeIx> {
        &self.mandatory
    }

    pub fn forbidden(&self) -> &BTreeSet<EdgeIx> {
        &self.forbidden
    }

    pub fn is_empty(&self) -> bool {
        self.mandatory.is_empty() && self.forbidden.is_empty()
    }

    /// Violations in a fixed order: missing mandatory edges, then forbidden hits.
    pub fn violations(&self, edges: &[EdgeIx]) -> Vec<Violation> {
        let mut out: Vec<Violation> = self
            .mandatory
            .iter()
            .filter(|m| !edges.contains(m))
            .map(|&m| Violation::MandatoryMissing(m))
            .collect();
        out.extend(
            self.forbidden
                .iter()
                .filter(|f| edges.contains(f))
                .map(|&f| Violation::ForbiddenHit(f)),
        );
        out
    }

    pub fn admits(&self, edges: &[EdgeIx]) -> bool {
        self.mandatory.iter().all(|m| edges.contains(m))
            && !self.forbidden.iter().any(|f| edges.contains(f))
    }
}

/// Keep the candidates that satisfy `constraints`, in their original order.
pub fn filter_candidates(
    candidates: Vec<CostedPath>,
    constraints: &RouteConstraints,
) -> Result<Vec<CostedPath>, RoutingError> {
    let kept: Vec<CostedPath> = candidates
        .into_iter()
        .filter(|c| constraints.admits(c.path.edges()))
        .collect();
    if kept.is_empty() {
        Err(RoutingError::NoAdmissibleCandidate)
    } else {
        Ok(kept)
    }
}

/// Extra exclusions for a shortest-path search.
#[derive(Debug, Clone, Default)]
pub struct Restrictions {
    pub banned_edges: HashSet<EdgeIx>,
    pub banned_junctions: HashSet<JunctionIx>,
}

fn check_weights(net: &RoadNetwork, weights: &[f64]) -> Result<(), RoutingError> {
    if weights.len() != net.edge_count() {
        return Err(RoutingError::WeightCount {
            expected: net.edge_count(),
            got: weights.len(),
        });
    }
    for (i, &w) in weights.iter().enumerate() {
        if !(w.is_finite() && w > 0.0) {
            return Err(RoutingError::InvalidWeight {
                edge: net.edge(EdgeIx(i)).id.clone(),
                weight: w,
            });
        }
    }
    Ok(())
}

fn no_route(net: &RoadNetwork, src: EdgeIx, dst: EdgeIx) -> RoutingError {
    RoutingError::NoRoute {
        from: net.edge(src).id.clone(),
        to: net.edge(dst).id.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Label {
    cost: f64,
    lights: u32,
    edges: Vec<EdgeIx>,
}

impl Label {
    fn cmp_rank(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.lights.cmp(&other.lights))
            .then_with(|| self.edges.cmp(&other.edges))
    }
}

impl Eq for Label {}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so BinaryHeap pops the best label first.
impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cmp_rank(self)
    }
}

/// Loopless shortest path under `restrictions`.
///
/// The search runs on the edge graph, never re-enters the junctions of `src`
/// nor any banned junction, and never leaves the downstream junction of
/// `dst`. With positive weights the optimum under those rules is loopless:
/// any repeated junction could be cut out to get a strictly cheaper walk,
/// unless the cut would need a u-turn, in which case the junction one step
/// further out repeats as well, and the argument moves outward until it hits
/// one of the excluded junctions.
fn search(
    net: &RoadNetwork,
    weights: &[f64],
    src: EdgeIx,
    dst: EdgeIx,
    restrictions: &Restrictions,
) -> Option<CostedPath> {
    if restrictions.banned_edges.contains(&src) || restrictions.banned_edges.contains(&dst) {
        return None;
    }
    let s = net.edge(src);
    let d = net.edge(dst);
    let blocked =
        |j: JunctionIx| j == s.from || j == s.to || restrictions.banned_junctions.contains(&j);
    if restrictions.banned_junctions.contains(&s.from)
        || restrictions.banned_junctions.contains(&s.to)
    {
        return None;
    }
    if src == dst {
        return Some(CostedPath {
            path: Path::trusted(vec![src]),
            cost: weights[src.0],
            light_count: 0,
        });
    }
    if blocked(d.to) {
        return None;
    }

    let mut best: Vec<Option<Label>> = vec![None; net.edge_count()];
    let mut heap = BinaryHeap::new();
    let start = Label {
        cost: weights[src.0],
        lights: 0,
        edges: vec![src],
    };
    best[src.0] = Some(start.clone());
    heap.push(start);

    while let Some(label) = heap.pop() {
        let here = *label.edges.last().unwrap();
        if best[here.0].as_ref() != Some(&label) {
            continue;
        }
        if here == dst {
            return Some(CostedPath {
                path: Path::trusted(label.edges),
                cost: label.cost,
                light_count: label.lights,
            });
        }
        let junction = net.edge(here).to;
        if junction == d.to {
            continue;
        }
        let lights = label.lights + u32::from(net.ends_at_signal(here));
        for &next in net.successors_of(here) {
            let to = net.edge(next).to;
            if restrictions.banned_edges.contains(&next) || blocked(to) {
                continue;
            }
            let mut edges = Vec::with_capacity(label.edges.len() + 1);
            edges.extend_from_slice(&label.edges);
            edges.push(next);
            let candidate = Label {
                cost: label.cost + weights[next.0],
                lights,
                edges,
            };
            let improves = match &best[next.0] {
                None => true,
                Some(cur) => candidate.cmp_rank(cur) == Ordering::Less,
            };
            if improves {
                best[next.0] = Some(candidate.clone());
                heap.push(candidate);
            }
        }
    }
    None
}

/// Minimum-weight loopless path that starts with `src` and ends with `dst`.
/// Both end edges count toward the cost.
pub fn dijkstra(
    net: &RoadNetwork,
    weights: &[f64],
    src: EdgeIx,
    dst: EdgeIx,
) -> Result<CostedPath, RoutingError> {
    dijkstra_restricted(net, weights, src, dst, &Restrictions::default())
}

pub fn dijkstra_restricted(
    net: &RoadNetwork,
    weights: &[f64],
    src: EdgeIx,
    dst: EdgeIx,
    restrictions: &Restrictions,
) -> Result<CostedPath, RoutingError> {
    check_weights(net, weights)?;
    search(net, weights, src, dst, restrictions).ok_or_else(|| no_route(net, src, dst))
}

/// Up to `k` loopless paths in rank order (Yen's algorithm). The first entry
/// is the [`dijkstra`] result.
pub fn yen_k_shortest(
    net: &RoadNetwork,
    weights: &[f64],
    src: EdgeIx,
    dst: EdgeIx,
    k: usize,
) -> Result<Vec<CostedPath>, RoutingError> {
    if k == 0 {
        return Err(RoutingError::ZeroK);
    }
    let first = dijkstra(net, weights, src, dst)?;
    let mut accepted = vec![first];
    let mut pending: BTreeMap<Vec<EdgeIx>, CostedPath> = BTreeMap::new();

    while accepted.len() < k {
        let prev = accepted.last().unwrap().path.edges().to_vec();
        for i in 0..prev.len() - 1 {
            let root = &prev[..=i];
            let mut restrictions = Restrictions::default();
            restrictions
                .banned_junctions
                .extend(prev[..i].iter().map(|e| net.edge(*e).from));
            for p in &accepted {
                let edges = p.path.edges();
                if edges.len() > i + 1 && &edges[..=i] == root {
                    restrictions.banned_edges.insert(edges[i + 1]);
                }
            }
            let Some(spur) = search(net, weights, prev[i], dst, &restrictions) else {
                continue;
            };
            let mut edges = prev[..i].to_vec();
            edges.extend_from_slice(spur.path.edges());
            if pending.contains_key(&edges) || accepted.iter().any(|a| a.path.edges() == edges) {
                continue;
            }
            let candidate = CostedPath::evaluate(net, weights, Path::trusted(edges.clone()));
            pending.insert(edges, candidate);
        }
        let Some(best_key) = pending
            .iter()
            .min_by(|a, b| a.1.rank_cmp(b.1))
            .map(|(key, _)| key.clone())
        else {
            break;
        };
        accepted.push(pending.remove(&best_key).unwrap());
    }
    Ok(accepted)
}

/// Shortest route from `src` to `dst` that passes through `waypoints` in
/// order. Segments are individually loopless; the joined route need not be.
pub fn route_via(
    net: &RoadNetwork,
    weights: &[f64],
    src: EdgeIx,
    waypoints: &[EdgeIx],
    dst: EdgeIx,
    restrictions: &Restrictions,
) -> Result<Vec<EdgeIx>, RoutingError> {
    let mut route = vec![src];
    let mut at = src;
    for &next in waypoints.iter().chain(std::iter::once(&dst)) {
        if next == at {
            continue;
        }
        let leg = dijkstra_restricted(net, weights, at, next, restrictions)?;
        route.extend_from_slice(&leg.path.edges()[1..]);
        at = next;
    }
    Ok(route)
}

/// Critical segment `horizon` steps downstream of the vehicle's progress point
/// on `global`, clamped to the destination edge.
///
/// `route_ahead` starts with the vehicle's current edge. When that edge lies on
/// the global path it is the progress point; otherwise the progress point is
/// just before the first downstream edge where the route rejoins the global
/// path.
pub fn critical_waypoint(
    global: &[EdgeIx],
    route_ahead: &[EdgeIx],
    horizon: usize,
) -> Result<EdgeIx, RoutingError> {
    let g = global;
    if g.is_empty() {
        return Err(RoutingError::PathExhausted);
    }
    let last = g.len() - 1;
    let progress = route_ahead
        .iter()
        .enumerate()
        .find_map(|(i, e)| g.iter().position(|x| x == e).map(|pos| (i, pos)));
    let progress = match progress {
        Some((0, pos)) => pos,
        Some((_, pos)) => {
            if pos == 0 {
                // Rejoining at the very first global edge: that edge is next.
                return Ok(g[0]);
            }
            pos - 1
        }
        None => return Err(RoutingError::OffGlobalPath),
    };
    if progress >= last {
        return Err(RoutingError::PathExhausted);
    }
    Ok(g[(progress + horizon.max(1)).min(last)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_grid, generate_manhattan, GridLayout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(net: &RoadNetwork, path: &Path) -> Vec<String> {
        path.ids(net).into_iter().map(String::from).collect()
    }

    /// Every loopless path from `src` to `dst` by depth-first enumeration.
    fn enumerate_simple(net: &RoadNetwork, src: EdgeIx, dst: EdgeIx) -> Vec<Vec<EdgeIx>> {
        fn go(
            net: &RoadNetwork,
            dst: EdgeIx,
            path: &mut Vec<EdgeIx>,
            seen: &mut HashSet<JunctionIx>,
            out: &mut Vec<Vec<EdgeIx>>,
        ) {
            let here = *path.last().unwrap();
            if here == dst {
                out.push(path.clone());
                return;
            }
            for &next in net.successors_of(here) {
                let to = net.edge(next).to;
                if seen.insert(to) {
                    path.push(next);
                    go(net, dst, path, seen, out);
                    path.pop();
                    seen.remove(&to);
                }
            }
        }
        let mut out = Vec::new();
        let mut seen = HashSet::from([net.edge(src).from, net.edge(src).to]);
        if net.edge(src).from == net.edge(src).to {
            return out;
        }
        go(net, dst, &mut vec![src], &mut seen, &mut out);
        out
    }

    fn cost_of(weights: &[f64], p: &[EdgeIx]) -> f64 {
        p.iter().map(|e| weights[e.0]).sum()
    }

    fn manhattan() -> RoadNetwork {
        generate_manhattan(4, 4).unwrap()
    }

    #[test]
    fn single_edge_route() {
        let net = manhattan();
        let w = net.free_flow_weights();
        let e = net.edge_ix("A2B2").unwrap();
        let p = dijkstra(&net, &w, e, e).unwrap();
        assert_eq!(p.path.edges(), &[e]);
        assert_eq!(p.cost, w[e.0]);
    }

    #[test]
    fn global_route_through_b2_c2() {
        let net = manhattan();
        let w = net.free_flow_weights();
        let p = dijkstra(
            &net,
            &w,
            net.edge_ix("top1B3").unwrap(),
            net.edge_ix("D2right2").unwrap(),
        )
        .unwrap();
        let route = ids(&net, &p.path);
        assert!(route.contains(&"B2C2".to_string()));
        assert!(route.contains(&"C2D2".to_string()));
        Path::new(&net, p.path.edges().to_vec()).unwrap();
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // A3 -> D2 needs one step down and three steps right; all orderings
        // cost the same and pass the same number of lights.
        let net = manhattan();
        let w = net.free_flow_weights();
        let p = dijkstra(
            &net,
            &w,
            net.edge_ix("top0A3").unwrap(),
            net.edge_ix("D2right2").unwrap(),
        )
        .unwrap();
        assert_eq!(
            ids(&net, &p.path),
            ["top0A3", "A3A2", "A2B2", "B2C2", "C2D2", "D2right2"]
        );
    }

    #[test]
    fn unreachable_is_an_error() {
        let net = manhattan();
        let w = net.free_flow_weights();
        // the reverse of the start edge would need a u-turn loop
        let err = dijkstra(
            &net,
            &w,
            net.edge_ix("A2B2").unwrap(),
            net.edge_ix("B2A2").unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, RoutingError::NoRoute { .. }));
        // leaving the network through a dead end
        let err = dijkstra(
            &net,
            &w,
            net.edge_ix("A2left2").unwrap(),
            net.edge_ix("A2B2").unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, RoutingError::NoRoute { .. }));
    }

    #[test]
    fn weights_are_validated() {
        let net = manhattan();
        let mut w = net.free_flow_weights();
        w[3] = 0.0;
        let e = net.edge_ix("A2B2").unwrap();
        assert!(matches!(
            dijkstra(&net, &w, e, e),
            Err(RoutingError::InvalidWeight { .. })
        ));
        assert!(matches!(
            dijkstra(&net, &w[..2], e, e),
            Err(RoutingError::WeightCount { .. })
        ));
    }

    #[test]
    fn alternatives_at_a2() {
        let net = manhattan();
        let w = net.free_flow_weights();
        let paths = yen_k_shortest(
            &net,
            &w,
            net.edge_ix("A3A2").unwrap(),
            net.edge_ix("B2C2").unwrap(),
            3,
        )
        .unwrap();
        let got: Vec<Vec<String>> = paths.iter().map(|p| ids(&net, &p.path)).collect();
        assert_eq!(
            got,
            vec![
                vec!["A3A2", "A2B2", "B2C2"],
                vec!["A3A2", "A2A1", "A1B1", "B1B2", "B2C2"],
                vec!["A3A2", "A2A1", "A1A0", "A0B0", "B0B1", "B1B2", "B2C2"],
            ]
        );
        assert_eq!(
            paths.iter().map(|p| p.light_count).collect::<Vec<_>>(),
            vec![2, 4, 6]
        );
    }

    #[test]
    fn k_one_is_dijkstra() {
        let net = manhattan();
        let w = net.free_flow_weights();
        let (s, d) = (
            net.edge_ix("right0D0").unwrap(),
            net.edge_ix("A2left2").unwrap(),
        );
        let one = yen_k_shortest(&net, &w, s, d, 1).unwrap();
        assert_eq!(one, vec![dijkstra(&net, &w, s, d).unwrap()]);
        assert_eq!(yen_k_shortest(&net, &w, s, d, 0), Err(RoutingError::ZeroK));
    }

    #[test]
    fn fewer_paths_than_k() {
        let net = manhattan();
        let w = net.free_flow_weights();
        let e = net.edge_ix("A2B2").unwrap();
        assert_eq!(yen_k_shortest(&net, &w, e, e, 3).unwrap().len(), 1);
        // A stub entry followed by its grid edge has exactly one loopless route.
        let (s, d) = (
            net.edge_ix("left2A2").unwrap(),
            net.edge_ix("A2B2").unwrap(),
        );
        assert_eq!(yen_k_shortest(&net, &w, s, d, 3).unwrap().len(), 1);
    }

    fn random_weights(net: &RoadNetwork, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..net.edge_count())
            .map(|_| rng.gen_range(1.0..100.0))
            .collect()
    }

    #[test]
    fn dijkstra_matches_enumeration_on_3x3() {
        let net = generate_grid(GridLayout {
            rows: 3,
            cols: 3,
            horizontal_m: 100.0,
            vertical_m: 100.0,
            v_max: 10.0,
            lanes: 1,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let w = random_weights(&net, &mut rng);
            let s = EdgeIx(rng.gen_range(0..net.edge_count()));
            let d = EdgeIx(rng.gen_range(0..net.edge_count()));
            let all = enumerate_simple(&net, s, d);
            let best = all.iter().map(|p| cost_of(&w, p)).min_by(f64::total_cmp);
            match (dijkstra(&net, &w, s, d), best) {
                (Ok(p), Some(b)) => assert!((p.cost - b).abs() < 1e-9),
                (Err(RoutingError::NoRoute { .. }), None) => {}
                (got, want) => panic!("mismatch {got:?} vs {want:?}"),
            }
        }
    }

    #[test]
    fn yen_matches_enumeration_on_3x3() {
        let net = generate_grid(GridLayout {
            rows: 3,
            cols: 3,
            horizontal_m: 100.0,
            vertical_m: 100.0,
            v_max: 10.0,
            lanes: 1,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let w = random_weights(&net, &mut rng);
            let s = EdgeIx(rng.gen_range(0..net.edge_count()));
            let d = EdgeIx(rng.gen_range(0..net.edge_count()));
            let mut all = enumerate_simple(&net, s, d);
            all.sort_by(|a, b| cost_of(&w, a).total_cmp(&cost_of(&w, b)));
            all.truncate(3);
            match yen_k_shortest(&net, &w, s, d, 3) {
                Ok(paths) => {
                    let got: Vec<Vec<EdgeIx>> =
                        paths.iter().map(|p| p.path.edges().to_vec()).collect();
                    assert_eq!(got, all);
                }
                Err(RoutingError::NoRoute { .. }) => assert!(all.is_empty()),
                Err(other) => panic!("{other}"),
            }
        }
    }

    #[test]
    fn constraint_filtering() {
        let net = manhattan();
        let w = net.free_flow_weights();
        let cands = yen_k_shortest(
            &net,
            &w,
            net.edge_ix("A3A2").unwrap(),
            net.edge_ix("B2C2").unwrap(),
            3,
        )
        .unwrap();
        assert_eq!(
            filter_candidates(cands.clone(), &RouteConstraints::none()).unwrap(),
            cands
        );

        let mandatory = RouteConstraints::from_ids(&net, &["A2A1"], &[]).unwrap();
        let kept = filter_candidates(cands.clone(), &mandatory).unwrap();
        assert_eq!(kept, cands[1..].to_vec());

        let both = RouteConstraints::from_ids(&net, &["A2A1"], &["A1B1"]).unwrap();
        let kept = filter_candidates(cands.clone(), &both).unwrap();
        assert_eq!(kept, vec![cands[2].clone()]);
        assert_eq!(filter_candidates(kept.clone(), &both).unwrap(), kept);

        let impossible = RouteConstraints::from_ids(&net, &["C3D3"], &[]).unwrap();
        assert_eq!(
            filter_candidates(cands, &impossible),
            Err(RoutingError::NoAdmissibleCandidate)
        );
        assert!(matches!(
            RouteConstraints::from_ids(&net, &["A2A1"], &["A2A1"]),
            Err(RoutingError::ConflictingConstraint(_))
        ));
    }

    #[test]
    fn waypoint_indexing() {
        let net = manhattan();
        let global = Path::from_ids(
            &net,
            &["top0A3", "A3A2", "A2B2", "B2C2", "C2D2", "D2right2"],
        )
        .unwrap();
        let g = global.edges().to_vec();
        assert_eq!(critical_waypoint(global.edges(), &g[1..], 1).unwrap(), g[2]);
        assert_eq!(critical_waypoint(global.edges(), &g[1..], 2).unwrap(), g[3]);
        assert_eq!(critical_waypoint(global.edges(), &g[4..], 2).unwrap(), g[5]);
        assert_eq!(
            critical_waypoint(global.edges(), &g[5..], 1),
            Err(RoutingError::PathExhausted)
        );
    }

    /// Detour splices: the vehicle is on an edge off the global path and its
    /// route rejoins the global path further down.
    #[test]
    fn waypoint_after_detour() {
        let net = manhattan();
        let global = Path::from_ids(
            &net,
            &["top0A3", "A3A2", "A2B2", "B2C2", "C2D2", "D2right2"],
        )
        .unwrap();
        let g = global.edges().to_vec();
        let e = |id: &str| net.edge_ix(id).unwrap();
        // took path 2 at A2: currently on A2A1, rejoins at B2C2
        let ahead = [
            e("A2A1"),
            e("A1B1"),
            e("B1B2"),
            e("B2C2"),
            e("C2D2"),
            e("D2right2"),
        ];
        assert_eq!(critical_waypoint(global.edges(), &ahead, 1).unwrap(), g[3]);
        assert_eq!(critical_waypoint(global.edges(), &ahead, 2).unwrap(), g[4]);
        // on B1B2, the edge right before the re-entry
        assert_eq!(
            critical_waypoint(global.edges(), &ahead[2..], 2).unwrap(),
            g[4]
        );
        // detour that rejoins only at the destination
        let ahead = [e("C2C1"), e("C1D1"), e("D1D2"), e("D2right2")];
        assert_eq!(critical_waypoint(global.edges(), &ahead, 2).unwrap(), g[5]);
        let lost = [e("C2C1"), e("C1D1")];
        assert_eq!(
            critical_waypoint(global.edges(), &lost, 1),
            Err(RoutingError::OffGlobalPath)
        );
    }

    #[test]
    fn route_via_waypoints() {
        let net = manhattan();
        let w = net.free_flow_weights();
        let e = |id: &str| net.edge_ix(id).unwrap();
        let route = route_via(
            &net,
            &w,
            e("top0A3"),
            &[e("A2A1")],
            e("D2right2"),
            &Restrictions::default(),
        )
        .unwrap();
        assert!(route.contains(&e("A2A1")));
        assert_eq!(route[0], e("top0A3"));
        assert_eq!(*route.last().unwrap(), e("D2right2"));
        for pair in route.windows(2) {
            assert!(net.successors_of(pair[0]).contains(&pair[1]));
        }
    }

    #[test]
    fn path_validation() {
        let net = manhattan();
        assert!(Path::from_ids(&net, &["A3A2", "B2C2"]).is_err());
        assert!(Path::from_ids::<&str>(&net, &[]).is_err());
        // loop around one block returns to A2
        assert!(Path::from_ids(&net, &["A3A2", "A2B2", "B2B1", "B1A1", "A1A2", "A2B2"]).is_err());
    }
}
