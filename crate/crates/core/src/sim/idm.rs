//! Intelligent Driver Model car-following.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    /// Maximum acceleration, m/s^2.
    pub accel: f64,
    /// Comfortable deceleration, m/s^2.
    pub decel: f64,
    /// Emergency deceleration bound, m/s^2.
    pub emergency_decel: f64,
    /// Standstill gap, m.
    pub min_gap: f64,
    /// Desired time headway, s.
    pub headway: f64,
    pub delta: f64,
    pub vehicle_length: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            accel: 2.6,
            decel: 4.5,
            emergency_decel: 9.0,
            min_gap: 2.5,
            headway: 1.0,
            delta: 4.0,
            vehicle_length: 5.0,
        }
    }
}

/// Acceleration for speed `v` toward `v_desired`, with `gap` meters
/// (bumper to bumper, possibly infinite) to an obstacle closing at `dv` m/s.
pub fn idm_acceleration(p: &IdmParams, v: f64, v_desired: f64, gap: f64, dv: f64) -> f64 {
    let free = 1.0 - (v / v_desired).powf(p.delta);
    let interaction = if gap.is_finite() {
        let s_star = (p.min_gap + v * p.headway + v * dv / (2.0 * (p.accel * p.decel).sqrt()))
            .max(p.min_gap);
        (s_star / gap.max(1e-6)).powi(2)
    } else {
        0.0
    };
    (p.accel * (free - interaction)).clamp(-p.emergency_decel, p.accel)
}

/// Ballistic update over `dt`: returns (new speed, displacement).
pub fn ballistic(v: f64, a: f64, dt: f64, v_cap: f64) -> (f64, f64) {
    let v_next = v + a * dt;
    if v_next < 0.0 {
        // Stops within the step.
        return (0.0, if a < 0.0 { -v * v / (2.0 * a) } else { 0.0 });
    }
    let v_next = v_next.min(v_cap);
    (v_next, 0.5 * (v + v_next) * dt)
}
