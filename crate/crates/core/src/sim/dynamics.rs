//! Quasi-static stick-slip mechanics of the papillae.
//!
//! Each papilla tip is tied to its base by an isotropic tangential spring
//! `k_t`. `delta` is the tip deflection (tip minus base) and `w` the velocity
//! of the counter-surface relative to the sensor. A stuck tip moves with the
//! surface, so `δ̇ = w`. A stuck tip breaks away once `k_t|δ| > μ_s N`. A
//! slipping tip slides back along `−δ̂` with speed `(|δ| − μ_k N / k_t) / τ`,
//! which relaxes the spring force toward kinetic friction; it sticks again
//! once that excess falls below `stick_eps_mm`.

use super::geometry::{compression, Skin};
use super::SimParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Not touching the counter-surface.
    Free,
    Stick,
    Slip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PapillaState {
    pub ring: usize,
    pub rest: [f64; 2],
    /// Tip deflection relative to the base, mm.
    pub delta: [f64; 2],
    pub mode: Mode,
    /// Normal force, N.
    pub normal: f64,
    /// Tip displacement relative to the counter-surface accumulated while in contact, mm.
    pub slip: [f64; 2],
}

impl PapillaState {
    pub fn slip_distance(&self) -> f64 {
        norm(self.slip)
    }

    pub fn in_contact(&self) -> bool {
        self.mode != Mode::Free
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinState {
    pub t_s: f64,
    pub papillae: Vec<PapillaState>,
}

pub(crate) fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

impl SkinState {
    /// Undeflected papillae pressed to `depth`; those with positive normal force stick.
    pub fn at_rest(skin: &Skin, params: &SimParams, depth: f64) -> Self {
        let papillae = skin
            .papillae
            .iter()
            .map(|p| {
                let normal = params.k_n * compression(&skin.geometry, p.ring, depth);
                PapillaState {
                    ring: p.ring,
                    rest: p.pos,
                    delta: [0.0; 2],
                    mode: if normal > 0.0 {
                        Mode::Stick
                    } else {
                        Mode::Free
                    },
                    normal,
                    slip: [0.0; 2],
                }
            })
            .collect();
        Self { t_s: 0.0, papillae }
    }

    pub fn contact_count(&self) -> usize {
        self.papillae.iter().filter(|p| p.in_contact()).count()
    }
}

/// Slip velocity of a slipping tip relative to the surface, or zero.
fn slip_velocity(p: &PapillaState, params: &SimParams) -> [f64; 2] {
    if p.mode != Mode::Slip {
        return [0.0; 2];
    }
    let d = norm(p.delta);
    let dk = params.mu_k * p.normal / params.k_t;
    let excess = d - dk;
    if excess <= 0.0 || d == 0.0 {
        return [0.0; 2];
    }
    let s = excess / params.slip_relax_s / d;
    [-p.delta[0] * s, -p.delta[1] * s]
}

/// Sets the normal force for the current indentation, switching contact on or off.
fn update_normal(p: &mut PapillaState, skin: &Skin, params: &SimParams, depth: f64) {
    p.normal = params.k_n * compression(&skin.geometry, p.ring, depth);
    match (p.normal > 0.0, p.mode) {
        (false, Mode::Stick | Mode::Slip) => p.mode = Mode::Free,
        (true, Mode::Free) => p.mode = Mode::Stick,
        _ => {}
    }
}

/// Advances one papilla by `dt` with surface velocity `w`. Returns the length
/// of the deflection path travelled and whether the papilla broke away.
fn advance(p: &mut PapillaState, params: &SimParams, dt: f64, w: [f64; 2]) -> (f64, bool) {
    let old = p.delta;
    match p.mode {
        Mode::Free => {
            let k = dt / params.slip_relax_s;
            p.delta = [old[0] * (1.0 - k), old[1] * (1.0 - k)];
        }
        Mode::Stick => {
            p.delta = [old[0] + w[0] * dt, old[1] + w[1] * dt];
        }
        Mode::Slip => {
            let vs = slip_velocity(p, params);
            p.delta = [old[0] + (w[0] + vs[0]) * dt, old[1] + (w[1] + vs[1]) * dt];
            p.slip = [p.slip[0] + vs[0] * dt, p.slip[1] + vs[1] * dt];
        }
    }
    let moved = norm([p.delta[0] - old[0], p.delta[1] - old[1]]);
    let mut broke = false;
    match p.mode {
        Mode::Stick if params.k_t * norm(p.delta) > params.mu_s * p.normal => {
            p.mode = Mode::Slip;
            broke = true;
        }
        Mode::Slip
            if norm(p.delta) - params.mu_k * p.normal / params.k_t <= params.stick_eps_mm =>
        {
            p.mode = Mode::Stick;
        }
        _ => {}
    }
    (moved, broke)
}

/// Per-step outcome used by trajectory recording.
#[derive(Clone, Debug, Default)]
pub struct StepOutcome {
    /// Deflection path length per papilla over the step, mm.
    pub moved: Vec<f64>,
    /// Papillae that broke away during the step.
    pub broke: Vec<usize>,
}

impl SkinState {
    /// Kinematic step: prescribed surface velocity `w` (mm/s) and indentation `depth` (mm).
    pub fn step(
        &mut self,
        skin: &Skin,
        params: &SimParams,
        dt: f64,
        w: [f64; 2],
        depth: f64,
        out: &mut StepOutcome,
    ) {
        out.moved.clear();
        out.broke.clear();
        for (i, p) in self.papillae.iter_mut().enumerate() {
            update_normal(p, skin, params, depth);
            let (m, b) = advance(p, params, dt, w);
            out.moved.push(m);
            if b {
                out.broke.push(i);
            }
        }
        self.t_s += dt;
    }

    /// Gravity-loaded plate step. The plate rides a vertical track: its
    /// horizontal velocity `w_x` is prescribed, and its vertical velocity is
    /// the one that keeps the summed spring force of all contacting tips equal
    /// to the plate weight `load_n`. Returns the plate's vertical velocity, or
    /// `None` when no papilla touches the plate.
    pub fn step_gravity(
        &mut self,
        skin: &Skin,
        params: &SimParams,
        dt: f64,
        w_x: f64,
        depth: f64,
        load_n: f64,
        out: &mut StepOutcome,
    ) -> Option<f64> {
        for p in self.papillae.iter_mut() {
            update_normal(p, skin, params, depth);
        }
        let mut n_contact = 0usize;
        let mut sum = 0.0;
        for p in self.papillae.iter().filter(|p| p.in_contact()) {
            n_contact += 1;
            sum += p.delta[1] + slip_velocity(p, params)[1] * dt;
        }
        let w_y = if n_contact == 0 {
            None
        } else {
            Some((-load_n / params.k_t - sum) / (n_contact as f64 * dt))
        };
        self.step(skin, params, dt, [w_x, w_y.unwrap_or(0.0)], depth, out);
        w_y
    }

    /// Drops every papilla out of contact (plate gone).
    pub fn release_all(&mut self) {
        for p in &mut self.papillae {
            p.mode = Mode::Free;
            p.normal = 0.0;
        }
    }
}

/// Functional form of [`SkinState::step`].
pub fn step_dynamics(
    state: &SkinState,
    skin: &Skin,
    params: &SimParams,
    dt: f64,
    surface_velocity: [f64; 2],
    depth: f64,
) -> SkinState {
    let mut next = state.clone();
    next.step(
        skin,
        params,
        dt,
        surface_velocity,
        depth,
        &mut StepOutcome::default(),
    );
    next
}
