//! Stick-slip simulator of the concentric papillae skin.
//!
//! Replaces the physical sensor and the external-camera labelling: it drives
//! the papillae against a counter-surface, turns their shear-deflection rates
//! into camera events, and reads slip onsets directly off the tip
//! displacements.

mod dynamics;
mod generate;
mod geometry;
mod scenario;

use thiserror::Error;

pub use dynamics::{step_dynamics, Mode, PapillaState, SkinState, StepOutcome};
pub use generate::{generate_events, ImageModel};
pub use geometry::{build_geometry, compression, normal_forces, Papilla, Skin, SkinGeometry};
pub use scenario::{
    run_scenario, simulate, DisturbanceSide, ScenarioConfig, ScenarioKind, Simulation,
    DISTURBANCE_FRACTIONS, KINEMATIC_DEPTHS_MM, KINEMATIC_DIRECTIONS_DEG, KINEMATIC_SPEEDS_MM_S,
    PLATE_MASSES_KG, RETRACTION_SPEEDS_MM_S,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("geometry violation: {0}")]
    GeometryViolation(String),
    #[error("no papilla slipped past the displacement threshold")]
    NoSlipOccurred,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Mechanics, imaging and event-generation constants.
#[derive(Clone, Debug, PartialEq)]
pub struct SimParams {
    /// Normal stiffness, N/mm.
    pub k_n: f64,
    /// Tangential stiffness, N/mm.
    pub k_t: f64,
    pub mu_s: f64,
    pub mu_k: f64,
    /// Events per mm of shear-deflection path.
    pub alpha: f64,
    /// Background events per second per papilla footprint.
    pub lambda_bg: f64,
    /// Fraction of background events with negative polarity.
    pub beta: f64,
    /// Footprint radius of a papilla in the image, px.
    pub r_px: f64,
    pub px_per_mm: f64,
    /// m/s².
    pub g: f64,
    /// Integration step, s.
    pub dt_s: f64,
    /// Integration steps per trajectory sample.
    pub record_every: usize,
    /// Time constant of the slip relaxation, s.
    pub slip_relax_s: f64,
    /// Excess deflection below which a slipping tip re-sticks, mm.
    pub stick_eps_mm: f64,
    /// Tip slip distance that marks a papilla as slipping, mm.
    pub slip_threshold_mm: f64,
    /// Stationary interval before any motion, s.
    pub lead_in_s: f64,
    /// Kinematic travel distance, mm.
    pub travel_mm: f64,
    /// Starting indentation of the gravity trials, mm.
    pub gravity_depth_mm: f64,
    /// Time simulated after gross slip in gravity trials, s.
    pub gravity_tail_s: f64,
    /// Plate travel after which it leaves the skin, mm.
    pub plate_release_mm: f64,
    /// Hard cap on simulated time, s.
    pub max_duration_s: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            k_n: 1.0,
            k_t: 0.5,
            mu_s: 1.2,
            mu_k: 0.8,
            alpha: 400.0,
            lambda_bg: 50.0,
            beta: 0.05,
            r_px: 25.0,
            px_per_mm: 10.0,
            g: 9.81,
            dt_s: 1e-4,
            record_every: 10,
            slip_relax_s: 5e-3,
            stick_eps_mm: 1e-4,
            slip_threshold_mm: 0.1,
            lead_in_s: 0.06,
            travel_mm: 15.0,
            gravity_depth_mm: 3.0,
            gravity_tail_s: 2.0,
            plate_release_mm: 20.0,
            max_duration_s: 60.0,
        }
    }
}

impl SimParams {
    pub fn record_dt_s(&self) -> f64 {
        self.dt_s * self.record_every as f64
    }
}

/// Papilla states sampled every `record_dt_s`.
///
/// Sample `k` covers `[k·Δ, (k+1)·Δ)` and holds the mean deflection speed over
/// that interval plus the state at its end.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub record_dt_s: f64,
    pub n_papillae: usize,
    pub rings: Vec<usize>,
    /// Mean `|δ̇|` per sample and papilla, mm/s, sample-major.
    pub speed: Vec<f32>,
    /// Tip slip distance per sample and papilla, mm.
    pub slip: Vec<f32>,
    /// Contact flag per sample and papilla.
    pub contact: Vec<bool>,
    /// Exact time of each papilla's first stick→slip transition, s.
    pub first_slip_s: Vec<Option<f64>>,
}

impl Trajectory {
    pub fn new(record_dt_s: f64, rings: Vec<usize>) -> Self {
        let n = rings.len();
        Self {
            record_dt_s,
            n_papillae: n,
            rings,
            speed: Vec::new(),
            slip: Vec::new(),
            contact: Vec::new(),
            first_slip_s: vec![None; n],
        }
    }

    pub fn samples(&self) -> usize {
        if self.n_papillae == 0 {
            0
        } else {
            self.speed.len() / self.n_papillae
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples() as f64 * self.record_dt_s
    }

    pub fn push(&mut self, speeds: &[f64], state: &SkinState) {
        debug_assert_eq!(speeds.len(), self.n_papillae);
        self.speed.extend(speeds.iter().map(|&s| s as f32));
        self.slip
            .extend(state.papillae.iter().map(|p| p.slip_distance() as f32));
        self.contact
            .extend(state.papillae.iter().map(|p| p.in_contact()));
    }

    pub fn speed_at(&self, sample: usize, papilla: usize) -> f64 {
        self.speed[sample * self.n_papillae + papilla] as f64
    }

    /// Earliest first-slip time per ring, over papillae that ever broke away.
    pub fn ring_first_slip_s(&self) -> Vec<Option<f64>> {
        let n_rings = self.rings.iter().copied().max().map_or(0, |m| m + 1);
        let mut out = vec![None::<f64>; n_rings];
        for (i, t) in self.first_slip_s.iter().enumerate() {
            if let Some(t) = *t {
                let slot = &mut out[self.rings[i]];
                *slot = Some(slot.map_or(t, |cur| cur.min(t)));
            }
        }
        out
    }
}

/// Slip onsets read off the tip displacements, in µs.
///
/// Incipient onset: end of the first sample in which any contacting papilla
/// has slipped more than `threshold_mm`. Gross onset: the same for the central
/// papilla. Gross is absent when the centre never crosses.
pub fn ground_truth_onsets(
    traj: &Trajectory,
    threshold_mm: f64,
) -> Result<(u64, Option<u64>), SimError> {
    let n = traj.n_papillae;
    let centre = traj.rings.iter().position(|&r| r == 0);
    let mut incipient = None;
    let mut gross = None;
    for k in 0..traj.samples() {
        let row = k * n..(k + 1) * n;
        let crossed = |i: usize| {
            traj.contact[row.start + i] && traj.slip[row.start + i] as f64 > threshold_mm
        };
        let t_us = ((k + 1) as f64 * traj.record_dt_s * 1e6).round() as u64;
        if incipient.is_none() && (0..n).any(crossed) {
            incipient = Some(t_us);
        }
        if let Some(c) = centre {
            if gross.is_none() && crossed(c) {
                gross = Some(t_us);
                break;
            }
        }
    }
    let incipient = incipient.ok_or(SimError::NoSlipOccurred)?;
    Ok((incipient, gross))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(slips: &[[f32; 3]]) -> Trajectory {
        let mut t = Trajectory::new(1e-3, vec![0, 1, 2]);
        for s in slips {
            t.speed.extend([0.0; 3]);
            t.slip.extend(s);
            t.contact.extend([true; 3]);
        }
        t
    }

    #[test]
    fn onsets_from_thresholds() {
        let t = traj(&[
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.3],
            [0.0, 0.2, 0.5],
            [0.25, 0.4, 0.6],
        ]);
        assert_eq!(ground_truth_onsets(&t, 0.1).unwrap(), (2000, Some(4000)));
        let only_outer = traj(&[[0.0, 0.0, 0.3], [0.0, 0.0, 0.5]]);
        assert_eq!(ground_truth_onsets(&only_outer, 0.1).unwrap(), (1000, None));
        assert!(matches!(
            ground_truth_onsets(&traj(&[[0.0; 3]]), 0.1),
            Err(SimError::NoSlipOccurred)
        ));
    }

    #[test]
    fn out_of_contact_papillae_are_ignored() {
        let mut t = traj(&[[0.0, 0.0, 0.5], [0.0, 0.3, 0.5]]);
        t.contact[2] = false;
        t.contact[5] = false;
        assert_eq!(ground_truth_onsets(&t, 0.1).unwrap(), (2000, None));
    }
}
