//! Trip generation and AV/HV fleet assignment.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

use super::config::DemandConfig;
use super::SimError;
use crate::network::{EdgeIx, RoadNetwork};
use crate::routing::dijkstra;

#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub vehicle: String,
    pub depart: f64,
    pub origin: EdgeIx,
    pub destination: EdgeIx,
}

const MAX_RESAMPLES: usize = 100;

/// Number of AVs for a fleet of `total` at penetration rate `pr`, and their
/// positions in the trip list, sorted.
pub fn assign_fleet<R: Rng>(total: usize, pr: f64, rng: &mut R) -> (usize, BTreeSet<usize>) {
    let n_av = ((pr * total as f64).round() as usize).min(total);
    let chosen = sample(rng, total, n_av).into_iter().collect();
    (n_av, chosen)
}

pub fn vehicle_name(index: usize) -> String {
    format!("veh_{index}")
}

/// One trip per vehicle, departing at the configured rate. Random origins and
/// destinations are drawn uniformly from boundary entries and exits and
/// resampled until reachable.
pub fn generate_demand<R: Rng>(
    net: &RoadNetwork,
    config: &DemandConfig,
    rng: &mut R,
) -> Result<Vec<Trip>, SimError> {
    let fixed = |id: &Option<String>| -> Result<Option<EdgeIx>, SimError> {
        id.as_deref()
            .map(|s| net.edge_ix(s))
            .transpose()
            .map_err(Into::into)
    };
    let fixed_origin = fixed(&config.start_edge)?;
    let fixed_destination = fixed(&config.end_edge)?;
    let entries = net.entry_edges();
    let exits = net.exit_edges();
    if (fixed_origin.is_none() && entries.is_empty())
        || (fixed_destination.is_none() && exits.is_empty())
    {
        return Err(SimError::Config("network has no boundary edges".into()));
    }
    let weights = net.free_flow_weights();
    let mut trips = Vec::with_capacity(config.vehicles);
    for i in 0..config.vehicles {
        let mut pair = None;
        for _ in 0..MAX_RESAMPLES {
            let o = fixed_origin.unwrap_or_else(|| entries[rng.gen_range(0..entries.len())]);
            let d = fixed_destination.unwrap_or_else(|| exits[rng.gen_range(0..exits.len())]);
            if o != d && dijkstra(net, &weights, o, d).is_ok() {
                pair = Some((o, d));
                break;
            }
            if fixed_origin.is_some() && fixed_destination.is_some() {
                break;
            }
        }
        let (origin, destination) = pair.ok_or_else(|| {
            SimError::Config(format!(
                "no reachable origin/destination pair for {} after {MAX_RESAMPLES} draws",
                vehicle_name(i)
            ))
        })?;
        trips.push(Trip {
            vehicle: vehicle_name(i),
            depart: i as f64 / config.rate,
            origin,
            destination,
        });
    }
    Ok(trips)
}
