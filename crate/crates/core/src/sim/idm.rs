//! Intelligent Driver Model for human-driven vehicles.

use serde::Serialize;

/// Extra standstill distance over `d_min`. Discrete-time IDM undershoots its
/// jam distance by a fraction of a meter when closing in on a queue.
const JAM_MARGIN: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub jam_distance: f64,
    pub exponent: f64,
}

impl IdmParams {
    pub fn from_scenario(p: &crate::intersection::ScenarioParams) -> Self {
        Self {
            desired_speed: p.v_max,
            time_headway: p.tau,
            max_accel: p.u_max,
            comfortable_decel: 2.0,
            jam_distance: p.d_min + JAM_MARGIN,
            exponent: 4.0,
        }
    }

    /// Acceleration for speed `v` following an obstacle at distance `gap`
    /// moving at `v_lead`; `None` means free road.
    pub fn accel(&self, v: f64, lead: Option<(f64, f64)>) -> f64 {
        let free = 1.0 - (v / self.desired_speed).powf(self.exponent);
        let interaction = match lead {
            None => 0.0,
            Some((gap, v_lead)) => {
                let dv = v - v_lead;
                let s_star = self.jam_distance
                    + (v * self.time_headway
                        + v * dv / (2.0 * (self.max_accel * self.comfortable_decel).sqrt()))
                    .max(0.0);
                let gap = gap.max(1e-3);
                (s_star / gap).powi(2)
            }
        };
        self.max_accel * (free - interaction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intersection::ScenarioParams;

    #[test]
    fn free_road_and_following() {
        let idm = IdmParams::from_scenario(&ScenarioParams::default());
        assert!((idm.accel(0.0, None) - 3.0).abs() < 1e-12);
        assert!(idm.accel(15.0, None).abs() < 1e-12);
        // Equilibrium gap at equal speeds: (s0 + v T) / sqrt(1 - (v / v0)^4).
        let v = 10.0;
        let s_eq = (7.0 + v) / (1.0 - (v / 15.0_f64).powi(4)).sqrt();
        assert!(idm.accel(v, Some((s_eq, v))).abs() < 1e-9);
        assert!(idm.accel(v, Some((5.0, 0.0))) < -4.0);
    }
}
