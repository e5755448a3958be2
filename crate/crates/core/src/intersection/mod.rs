//! Signalized mixed-traffic intersection: scenario description and the
//! compiler that turns one receding-horizon snapshot into a [`MiqpProblem`].
//!
//! One agent is created per traffic light controller (one per lane) and one
//! per connected automated vehicle (CAV). Human-driven vehicles (HDVs) are not
//! agents; their motion enters the problem through a constant-acceleration
//! prediction.
//!
//! [`MiqpProblem`]: crate::model::MiqpProblem

mod compile;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compile::{
    compile, compile_with, soften, CavVars, CompileOptions, Compiled, TlcVars, VarMap,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    #[serde(alias = "CAV")]
    Cav,
    #[serde(alias = "HDV")]
    Hdv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    #[serde(rename = "H")]
    pub horizon: usize,
    pub dt: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub tau: f64,
    pub d_min: f64,
    pub w_p: f64,
    pub w_v: f64,
    pub w_u: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub eps_strict: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.5,
            delta_min: 20.0,
            delta_max: 100.0,
            v_min: 0.0,
            v_max: 15.0,
            u_min: -4.0,
            u_max: 3.0,
            tau: 1.0,
            d_min: 6.0,
            w_p: 1.0,
            w_v: 1.0,
            w_u: 0.1,
            big_m: 1e3,
            eps_strict: 1e-3,
        }
    }
}

impl ScenarioParams {
    fn check(&self) -> Result<()> {
        let positive = [
            ("H", self.horizon as f64),
            ("dt", self.dt),
            ("delta_min", self.delta_min),
            ("delta_max", self.delta_max),
            ("v_max", self.v_max),
            ("u_max", self.u_max),
            ("tau", self.tau),
            ("d_min", self.d_min),
            ("w_p", self.w_p),
            ("w_v", self.w_v),
            ("w_u", self.w_u),
            ("M", self.big_m),
            ("eps_strict", self.eps_strict),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Scenario(format!(
                    "parameter {name} = {v} must be positive"
                )));
            }
        }
        if !(self.v_min >= 0.0 && self.v_min < self.v_max) {
            return Err(Error::Scenario(format!(
                "need 0 <= v_min < v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if !(self.u_min < 0.0 && self.u_min.is_finite()) {
            return Err(Error::Scenario(format!(
                "u_min = {} must be negative",
                self.u_min
            )));
        }
        if self.delta_min > self.delta_max {
            return Err(Error::Scenario("delta_min exceeds delta_max".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lane {
    pub id: usize,
    /// Conflict zone entry, which is also the stop line.
    pub psi: f64,
    /// Conflict zone exit.
    pub phi: f64,
    /// 1 for green, 0 for red.
    pub light: u8,
    /// Time step of the last switch; may be negative.
    pub last_switch: i64,
    #[serde(default)]
    pub conflicts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vehicle {
    /// Identifier carried through simulation; not used by the compiler.
    #[serde(default)]
    pub id: u64,
    pub lane: usize,
    pub kind: VehicleKind,
    pub p: f64,
    pub v: f64,
    /// Last applied acceleration, used to predict HDVs.
    #[serde(default)]
    pub u_last: f64,
}

/// One snapshot at time step `k0`. Vehicles of a lane must be listed front to
/// back (decreasing position); their index within the lane is that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionScenario {
    #[serde(default)]
    pub k0: i64,
    #[serde(default)]
    pub params: ScenarioParams,
    pub lanes: Vec<Lane>,
    #[serde(default)]
    pub vehicles: Vec<Vehicle>,
}

impl IntersectionScenario {
    pub fn from_json(s: &str) -> Result<Self> {
        let scn: Self = serde_json::from_str(s)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn lane_index(&self, id: usize) -> Option<usize> {
        self.lanes.iter().position(|l| l.id == id)
    }

    /// Vehicle indices on lane `l` (a lane index, not an id), front to back.
    pub fn lane_vehicles(&self, l: usize) -> Vec<usize> {
        let id = self.lanes[l].id;
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| v.lane == id)
            .map(|(k, _)| k)
            .collect()
    }

    /// Unordered conflicting lane pairs `(l, m)` with `l < m`, as lane indices.
    pub fn conflict_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = BTreeSet::new();
        for (l, lane) in self.lanes.iter().enumerate() {
            for &other in &lane.conflicts {
                if let Some(m) = self.lane_index(other) {
                    out.insert((l.min(m), l.max(m)));
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn lanes_conflict(&self, l: usize, m: usize) -> bool {
        self.lanes[l].conflicts.contains(&self.lanes[m].id)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.check()?;
        let mut ids = BTreeSet::new();
        for lane in &self.lanes {
            if !ids.insert(lane.id) {
                return Err(Error::Scenario(format!("duplicate lane id {}", lane.id)));
            }
            if !(lane.psi > 0.0 && lane.psi < lane.phi && lane.phi.is_finite()) {
                return Err(Error::Scenario(format!(
                    "lane {}: need 0 < psi < phi, got psi = {}, phi = {}",
                    lane.id, lane.psi, lane.phi
                )));
            }
            if lane.light > 1 {
                return Err(Error::Scenario(format!(
                    "lane {}: light must be 0 or 1",
                    lane.id
                )));
            }
        }
        for lane in &self.lanes {
            for &c in &lane.conflicts {
                let Some(m) = self.lane_index(c) else {
                    return Err(Error::Scenario(format!(
                        "lane {} conflicts with unknown lane {c}",
                        lane.id
                    )));
                };
                if c == lane.id {
                    return Err(Error::Scenario(format!(
                        "lane {} conflicts with itself",
                        lane.id
                    )));
                }
                if !self.lanes[m].conflicts.contains(&lane.id) {
                    return Err(Error::Scenario(format!(
                        "conflict between lanes {} and {c} is not symmetric",
                        lane.id
                    )));
                }
            }
        }
        let tol = 1e-9;
        for (k, v) in self.vehicles.iter().enumerate() {
            if self.lane_index(v.lane).is_none() {
                return Err(Error::Scenario(format!(
                    "vehicle {k} on unknown lane {}",
                    v.lane
                )));
            }
            if !(v.p.is_finite() && v.u_last.is_finite()) {
                return Err(Error::Scenario(format!(
                    "vehicle {k} has a non-finite state"
                )));
            }
            if !(v.v >= self.params.v_min - tol && v.v <= self.params.v_max + tol) {
                return Err(Error::Scenario(format!(
                    "vehicle {k} speed {} outside [{}, {}]",
                    v.v, self.params.v_min, self.params.v_max
                )));
            }
        }
        for l in 0..self.lanes.len() {
            let vs = self.lane_vehicles(l);
            for w in vs.windows(2) {
                if self.vehicles[w[0]].p < self.vehicles[w[1]].p {
                    return Err(Error::Scenario(format!(
                        "lane {}: vehicles {} and {} are not ordered front to back",
                        self.lanes[l].id, w[0], w[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Priority of lane `l` (lane index): vehicles before the stop line, weighted
/// more the closer they are to it.
pub fn lane_priority(scn: &IntersectionScenario, l: usize) -> f64 {
    let psi = scn.lanes[l].psi;
    let half = psi / 2.0;
    scn.lane_vehicles(l)
        .into_iter()
        .map(|k| scn.vehicles[k].p)
        .filter(|&p| p < psi)
        .map(|p| sigmoid((p - half) / half))
        .sum()
}

/// Number of vehicle pairs, one per lane with at least one HDV, where
/// neither vehicle has left its conflict zone.
pub fn count_conflicts(scn: &IntersectionScenario, l: usize, m: usize) -> Result<usize> {
    if l >= scn.lanes.len() || m >= scn.lanes.len() || !scn.lanes_conflict(l, m) {
        return Err(Error::Scenario(format!(
            "lanes {l} and {m} do not conflict"
        )));
    }
    let pending = |lane: usize| -> Vec<VehicleKind> {
        let phi = scn.lanes[lane].phi;
        scn.lane_vehicles(lane)
            .into_iter()
            .map(|k| &scn.vehicles[k])
            .filter(|v| v.p < phi)
            .map(|v| v.kind)
            .collect()
    };
    let a = pending(l);
    let b = pending(m);
    let mut n = 0;
    for ka in &a {
        for kb in &b {
            if *ka == VehicleKind::Hdv || *kb == VehicleKind::Hdv {
                n += 1;
            }
        }
    }
    Ok(n)
}

/// Constant-acceleration prediction of positions and speeds for steps
/// `1..=horizon`, with the acceleration cut so the speed stays within limits.
pub fn predict_hdv(veh: &Vehicle, params: &ScenarioParams, horizon: usize) -> (Vec<f64>, Vec<f64>) {
    let dt = params.dt;
    let (mut p, mut v) = (veh.p, veh.v);
    let mut ps = Vec::with_capacity(horizon);
    let mut vs = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let v_next = (v + dt * veh.u_last).clamp(params.v_min, params.v_max);
        let u = (v_next - v) / dt;
        p += dt * v + 0.5 * dt * dt * u;
        v = v_next;
        ps.push(p);
        vs.push(v);
    }
    (ps, vs)
}

/// Whether a vehicle at `(p, v)` can stop before `psi` under full braking.
pub fn can_stop(p: f64, v: f64, psi: f64, u_min: f64) -> bool {
    p + v * v / (2.0 * u_min.abs()) <= psi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_lanes() -> IntersectionScenario {
        IntersectionScenario {
            k0: 0,
            params: ScenarioParams::default(),
            lanes: vec![
                Lane {
                    id: 0,
                    psi: 100.0,
                    phi: 120.0,
                    light: 1,
                    last_switch: -50,
                    conflicts: vec![1],
                },
                Lane {
                    id: 1,
                    psi: 100.0,
                    phi: 120.0,
                    light: 0,
                    last_switch: -50,
                    conflicts: vec![0],
                },
            ],
            vehicles: vec![],
        }
    }

    fn veh(lane: usize, kind: VehicleKind, p: f64) -> Vehicle {
        Vehicle {
            id: 0,
            lane,
            kind,
            p,
            v: 10.0,
            u_last: 0.0,
        }
    }

    #[test]
    fn priority_values() {
        let mut s = two_lanes();
        assert_eq!(lane_priority(&s, 0), 0.0);
        s.vehicles.push(veh(0, VehicleKind::Cav, 50.0));
        assert!((lane_priority(&s, 0) - 0.5).abs() < 1e-12);
        s.vehicles[0].p = 100.0 - 1e-12;
        assert!((lane_priority(&s, 0) - 0.731_058_578_630_005).abs() < 1e-9);
        s.vehicles[0].p = 100.0;
        assert_eq!(lane_priority(&s, 0), 0.0);
    }

    #[test]
    fn conflict_counting() {
        let mut s = two_lanes();
        s.vehicles = vec![
            veh(0, VehicleKind::Cav, 10.0),
            veh(1, VehicleKind::Cav, 10.0),
        ];
        assert_eq!(count_conflicts(&s, 0, 1).unwrap(), 0);
        s.vehicles[0].kind = VehicleKind::Hdv;
        assert_eq!(count_conflicts(&s, 0, 1).unwrap(), 1);
        s.vehicles[0].p = 121.0;
        assert_eq!(count_conflicts(&s, 0, 1).unwrap(), 0);
        s.lanes[0].conflicts.clear();
        s.lanes[1].conflicts.clear();
        assert!(count_conflicts(&s, 0, 1).is_err());
    }

    #[test]
    fn hdv_prediction_clamps() {
        let p = ScenarioParams::default();
        let (ps, vs) = predict_hdv(&veh(0, VehicleKind::Hdv, 0.0), &p, 2);
        assert_eq!(ps, vec![5.0, 10.0]);
        assert_eq!(vs, vec![10.0, 10.0]);

        let fast = Vehicle {
            v: 14.0,
            u_last: 3.0,
            ..veh(0, VehicleKind::Hdv, 0.0)
        };
        let (ps, vs) = predict_hdv(&fast, &p, 3);
        assert_eq!(vs, vec![15.0, 15.0, 15.0]);
        assert!((ps[0] - (7.0 + 0.125 * 2.0)).abs() < 1e-12);
        assert!((ps[2] - ps[1] - 7.5).abs() < 1e-12);

        let slow = Vehicle {
            v: 1.0,
            u_last: -4.0,
            ..veh(0, VehicleKind::Hdv, 0.0)
        };
        let (ps, vs) = predict_hdv(&slow, &p, 4);
        assert!(vs.iter().all(|&v| v == 0.0));
        assert!(ps.windows(2).all(|w| w[1] >= w[0]));
        assert!(ps[0] >= 0.0);
    }

    #[test]
    fn validation_catches_bad_scenarios() {
        let mut s = two_lanes();
        assert!(s.validate().is_ok());
        s.lanes[1].conflicts.clear();
        assert!(s.validate().is_err());

        let mut s = two_lanes();
        s.vehicles = vec![
            veh(0, VehicleKind::Cav, 10.0),
            veh(0, VehicleKind::Cav, 20.0),
        ];
        assert!(s.validate().is_err());

        let mut s = two_lanes();
        s.lanes[0].phi = 50.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_defaults_and_round_trip() {
        let s = IntersectionScenario::from_json(
            r#"{"lanes":[{"id":3,"psi":10,"phi":20,"light":0,"last_switch":0}],
                "vehicles":[{"lane":3,"kind":"HDV","p":1,"v":2}]}"#,
        )
        .unwrap();
        assert_eq!(s.params, ScenarioParams::default());
        assert_eq!(s.vehicles[0].kind, VehicleKind::Hdv);
        let back = IntersectionScenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
        assert!(IntersectionScenario::from_json(r#"{"lanes":[],"extra":1}"#).is_err());
    }
}
