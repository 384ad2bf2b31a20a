//! Camera events from a papilla trajectory.
//!
//! Each papilla emits an inhomogeneous Poisson process with rate
//! `alpha·|δ̇| + lambda_bg`, placed uniformly over its image footprint. The
//! motion part is always positive; a `beta` fraction of the background part is
//! negative.
//!
//! Random streams are keyed so that two trials whose dynamics are mirror
//! images (left vs right disturbance) draw identical noise: papilla `i` in the
//! plain trial and papilla `mirror(i)` in the mirrored one share a stream, and
//! horizontal offsets are negated when `mirrored` is set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::Skin;
use super::{SimParams, Trajectory};
use crate::events::{Event, EventStream, SENSOR_HEIGHT, SENSOR_WIDTH};
use crate::seed::derive_seed;

/// Orthographic projection of the skin onto the sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageModel {
    pub px_per_mm: f64,
    pub r_px: f64,
    /// Reflect all horizontal noise draws about the vertical axis.
    pub mirrored: bool,
}

impl ImageModel {
    pub fn from_params(params: &SimParams, mirrored: bool) -> Self {
        Self {
            px_per_mm: params.px_per_mm,
            r_px: params.r_px,
            mirrored,
        }
    }
}

/// Column of a horizontal image offset `a` (px) from the optical axis, which
/// sits on the boundary between columns 319 and 320. Symmetric: `col(-a) == 639 - col(a)`.
fn column(a: f64) -> Option<u16> {
    let half = (SENSOR_WIDTH / 2) as f64;
    let c = if a.is_sign_negative() {
        half - 1.0 - (-a).floor()
    } else {
        half + a.floor()
    };
    (c >= 0.0 && c < SENSOR_WIDTH as f64).then_some(c as u16)
}

fn row(b: f64) -> Option<u16> {
    let r = ((SENSOR_HEIGHT / 2) as f64 + b).floor();
    (r >= 0.0 && r < SENSOR_HEIGHT as f64).then_some(r as u16)
}

fn exp1(rng: &mut ChaCha8Rng) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln()
}

fn disk_offset(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    loop {
        let dx = radius * (2.0 * rng.gen::<f64>() - 1.0);
        let dy = radius * (2.0 * rng.gen::<f64>() - 1.0);
        if dx * dx + dy * dy <= radius * radius {
            return (dx, dy);
        }
    }
}

fn stream_key(skin: &Skin, i: usize, mirrored: bool) -> u64 {
    let m = skin.papillae[i].mirror;
    let orbit = i.min(m) as u64;
    let side = m != i && ((i > m) ^ mirrored);
    orbit * 2 + side as u64
}

fn to_us(t_s: f64) -> u64 {
    (t_s * 1e6).floor() as u64
}

pub fn generate_events(
    traj: &Trajectory,
    skin: &Skin,
    image: &ImageModel,
    params: &SimParams,
    rng_seed: u64,
) -> EventStream {
    let dt = traj.record_dt_s;
    let mut events = Vec::new();
    let flip = if image.mirrored { -1.0 } else { 1.0 };

    let horizon = traj.duration_s();
    for (i, pap) in skin.papillae.iter().enumerate() {
        let key = stream_key(skin, i, image.mirrored);
        let (cx, cy) = (pap.pos[0] * image.px_per_mm, -pap.pos[1] * image.px_per_mm);
        let mut place = |rng: &mut ChaCha8Rng, t_us: u64, polarity: i8| {
            let (dx, dy) = disk_offset(rng, image.r_px);
            if let (Some(x), Some(y)) = (column(cx + flip * dx), row(cy + dy)) {
                events.push(Event::new(t_us, x, y, polarity));
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, "papilla", key));
        let mut acc = 0.0;
        let mut next = exp1(&mut rng);
        for k in 0..traj.samples() {
            let inc = params.alpha * traj.speed_at(k, i) * dt;
            if inc <= 0.0 {
                continue;
            }
            let start = acc;
            acc += inc;
            while next <= acc {
                let frac = (next - start) / inc;
                place(&mut rng, to_us((k as f64 + frac) * dt), 1);
                next += exp1(&mut rng);
            }
        }

        if params.lambda_bg > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, "background", key));
            let mut t = exp1(&mut rng) / params.lambda_bg;
            while t < horizon {
                let polarity = if rng.gen::<f64>() < params.beta {
                    -1
                } else {
                    1
                };
                place(&mut rng, to_us(t), polarity);
                t += exp1(&mut rng) / params.lambda_bg;
            }
        }
    }

    events.sort_by_key(|e| e.t_us);
    EventStream::sensor(events)
}
