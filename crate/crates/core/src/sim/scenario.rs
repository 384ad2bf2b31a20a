use serde::{Deserialize, Serialize};

use super::dynamics::{Mode, SkinState, StepOutcome};
use super::generate::{generate_events, ImageModel};
use super::geometry::Skin;
use super::{ground_truth_onsets, SimError, SimParams, Trajectory};
use crate::events::Trial;

pub const KINEMATIC_DEPTHS_MM: [f64; 6] = [2.4, 2.6, 2.8, 3.0, 3.2, 3.4];
pub const KINEMATIC_SPEEDS_MM_S: [f64; 6] = [0.6, 0.8, 1.0, 1.2, 1.4, 1.6];
pub const KINEMATIC_DIRECTIONS_DEG: [f64; 8] = [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0];
pub const PLATE_MASSES_KG: [f64; 3] = [0.165, 0.205, 0.245];
pub const RETRACTION_SPEEDS_MM_S: [f64; 3] = [0.3, 0.5, 0.7];
pub const DISTURBANCE_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceSide {
    Left,
    Right,
}

impl DisturbanceSide {
    /// Sign of the sensor's horizontal motion.
    pub fn sign(self) -> f64 {
        match self {
            DisturbanceSide::Left => -1.0,
            DisturbanceSide::Right => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Constant indentation, constant tangential sensor velocity.
    Kinematic {
        depth_mm: f64,
        speed_mm_s: f64,
        direction_deg: f64,
    },
    /// Weighted plate held by friction while the sensor retracts.
    Gravity {
        mass_kg: f64,
        retraction_mm_s: f64,
        disturbance_fraction: f64,
        disturbance_side: DisturbanceSide,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Skips the grid-membership check (generalization runs).
    #[serde(default)]
    pub off_grid: bool,
    pub scenario: ScenarioKind,
}

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| (g - v).abs() < 1e-9)
}

impl ScenarioConfig {
    pub fn kinematic(depth_mm: f64, speed_mm_s: f64, direction_deg: f64, seed: u64) -> Self {
        Self {
            seed,
            off_grid: false,
            scenario: ScenarioKind::Kinematic {
                depth_mm,
                speed_mm_s,
                direction_deg,
            },
        }
    }

    pub fn gravity(mass_kg: f64, retraction_mm_s: f64, seed: u64) -> Self {
        Self::disturbed(mass_kg, retraction_mm_s, 0.0, DisturbanceSide::Left, seed)
    }

    pub fn disturbed(
        mass_kg: f64,
        retraction_mm_s: f64,
        disturbance_fraction: f64,
        disturbance_side: DisturbanceSide,
        seed: u64,
    ) -> Self {
        Self {
            seed,
            off_grid: false,
            scenario: ScenarioKind::Gravity {
                mass_kg,
                retraction_mm_s,
                disturbance_fraction,
                disturbance_side,
            },
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        match self.scenario {
            ScenarioKind::Kinematic {
                depth_mm,
                speed_mm_s,
                direction_deg,
            } => {
                if !(depth_mm >= 0.0 && speed_mm_s > 0.0 && direction_deg.is_finite()) {
                    return bad(format!(
                        "depth {depth_mm} mm / speed {speed_mm_s} mm/s / direction {direction_deg}°"
                    ));
                }
                if !self.off_grid
                    && !(on_grid(depth_mm, &KINEMATIC_DEPTHS_MM)
                        && on_grid(speed_mm_s, &KINEMATIC_SPEEDS_MM_S)
                        && on_grid(direction_deg, &KINEMATIC_DIRECTIONS_DEG))
                {
                    return bad("kinematic setting off the experiment grid".into());
                }
            }
            ScenarioKind::Gravity {
                mass_kg,
                retraction_mm_s,
                disturbance_fraction,
                ..
            } => {
                if !(mass_kg > 0.0 && retraction_mm_s > 0.0 && disturbance_fraction >= 0.0) {
                    return bad(format!(
                        "mass {mass_kg} kg / retraction {retraction_mm_s} mm/s / disturbance {disturbance_fraction}"
                    ));
                }
                if !self.off_grid
                    && !(on_grid(mass_kg, &PLATE_MASSES_KG)
                        && on_grid(retraction_mm_s, &RETRACTION_SPEEDS_MM_S)
                        && on_grid(disturbance_fraction, &DISTURBANCE_FRACTIONS))
                {
                    return bad("gravity setting off the experiment grid".into());
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Left/right disturbance trials share noise draws through reflection.
    pub fn mirrored(&self) -> bool {
        matches!(
            self.scenario,
            ScenarioKind::Gravity {
                disturbance_side: DisturbanceSide::Right,
                ..
            }
        )
    }
}

/// Everything a scenario run produces.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub trial: Trial,
}

struct Recorder {
    traj: Trajectory,
    acc: Vec<f64>,
    substeps: usize,
    every: usize,
    step_dt: f64,
}

impl Recorder {
    fn new(skin: &Skin, params: &SimParams) -> Self {
        let rings = skin.papillae.iter().map(|p| p.ring).collect();
        Self {
            traj: Trajectory::new(params.record_dt_s(), rings),
            acc: vec![0.0; skin.papillae.len()],
            substeps: 0,
            every: params.record_every,
            step_dt: params.dt_s,
        }
    }

    fn after_step(&mut self, state: &SkinState, out: &StepOutcome) {
        for (a, m) in self.acc.iter_mut().zip(&out.moved) {
            *a += m;
        }
        for &i in &out.broke {
            if self.traj.first_slip_s[i].is_none() {
                self.traj.first_slip_s[i] = Some(state.t_s);
            }
        }
        self.substeps += 1;
        if self.substeps == self.every {
            let span = self.step_dt * self.every as f64;
            let speeds: Vec<f64> = self.acc.iter().map(|a| a / span).collect();
            self.traj.push(&speeds, state);
            self.acc.iter_mut().for_each(|a| *a = 0.0);
            self.substeps = 0;
        }
    }
}

fn centre_crossed(state: &SkinState, threshold: f64) -> bool {
    state
        .papillae
        .iter()
        .any(|p| p.ring == 0 && p.mode != Mode::Free && p.slip_distance() > threshold)
}

fn simulate_kinematic(
    skin: &Skin,
    params: &SimParams,
    depth: f64,
    speed: f64,
    direction_deg: f64,
) -> Trajectory {
    let theta = direction_deg.to_radians();
    // the surface moves opposite to the sensor in the sensor frame
    let w_move = [-speed * theta.cos(), -speed * theta.sin()];
    let motion_s = params.travel_mm / speed;
    let total_steps = ((params.lead_in_s + motion_s) / params.dt_s).round() as usize;
    let lead_steps = (params.lead_in_s / params.dt_s).round() as usize;

    let mut state = SkinState::at_rest(skin, params, depth);
    let mut rec = Recorder::new(skin, params);
    let mut out = StepOutcome::default();
    for step in 0..total_steps {
        let w = if step < lead_steps {
            [0.0, 0.0]
        } else {
            w_move
        };
        state.step(skin, params, params.dt_s, w, depth, &mut out);
        rec.after_step(&state, &out);
    }
    rec.traj
}

fn simulate_gravity(
    skin: &Skin,
    params: &SimParams,
    mass_kg: f64,
    retraction: f64,
    disturbance: f64,
) -> Trajectory {
    let load = mass_kg * params.g;
    let d0 = params.gravity_depth_mm;
    let mut state = SkinState::at_rest(skin, params, d0);
    // the plate hangs in equilibrium on the stuck tips before retraction starts
    let n = state.contact_count().max(1) as f64;
    for p in state.papillae.iter_mut().filter(|p| p.in_contact()) {
        p.delta = [0.0, -load / (params.k_t * n)];
    }
    let mut rec = Recorder::new(skin, params);
    let mut out = StepOutcome::default();
    let w_x = -disturbance;
    let mut plate_y = 0.0;
    let mut released = false;
    let mut stop_at: Option<f64> = None;
    let max_steps = (params.max_duration_s / params.dt_s) as usize;
    for _ in 0..max_steps {
        let t = state.t_s;
        let depth = (d0 - retraction * (t - params.lead_in_s).max(0.0)).max(0.0);
        if released {
            state.step(skin, params, params.dt_s, [w_x, 0.0], 0.0, &mut out);
        } else {
            match state.step_gravity(skin, params, params.dt_s, w_x, depth, load, &mut out) {
                Some(w_y) => {
                    plate_y += w_y * params.dt_s;
                    if -plate_y > params.plate_release_mm {
                        state.release_all();
                        released = true;
                    }
                }
                None => released = true,
            }
        }
        rec.after_step(&state, &out);
        if stop_at.is_none() && (centre_crossed(&state, params.slip_threshold_mm) || released) {
            stop_at = Some(state.t_s + params.gravity_tail_s);
        }
        if stop_at.is_some_and(|s| state.t_s >= s) {
            break;
        }
    }
    rec.traj
}

/// Runs a scenario and keeps the trajectory alongside the trial.
pub fn simulate(
    config: &ScenarioConfig,
    skin: &Skin,
    params: &SimParams,
) -> Result<Simulation, SimError> {
    config.validate()?;
    let trajectory = match config.scenario {
        ScenarioKind::Kinematic {
            depth_mm,
            speed_mm_s,
            direction_deg,
        } => simulate_kinematic(skin, params, depth_mm, speed_mm_s, direction_deg),
        ScenarioKind::Gravity {
            mass_kg,
            retraction_mm_s,
            disturbance_fraction,
            disturbance_side,
        } => simulate_gravity(
            skin,
            params,
            mass_kg,
            retraction_mm_s,
            disturbance_side.sign() * disturbance_fraction * retraction_mm_s,
        ),
    };
    let (incipient, gross) = ground_truth_onsets(&trajectory, params.slip_threshold_mm)?;
    let image = ImageModel::from_params(params, config.mirrored());
    let stream = generate_events(&trajectory, skin, &image, params, config.seed);
    let trial = Trial {
        stream,
        incipient_onset_us: Some(incipient),
        gross_onset_us: gross,
        scenario: Some(config.clone()),
    };
    Ok(Simulation { trajectory, trial })
}

pub fn run_scenario(
    config: &ScenarioConfig,
    skin: &Skin,
    params: &SimParams,
) -> Result<Trial, SimError> {
    simulate(config, skin, params).map(|s| s.trial)
}
