use std::f64::consts::PI;

use super::SimError;

/// Papilla layout parameters, lengths in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinGeometry {
    /// Height of the central papilla.
    pub h_c: f64,
    /// Height decrement from one ring to the next.
    pub d_h: f64,
    /// Radial spacing between rings.
    pub d_c: f64,
    /// Papilla radius.
    pub r: f64,
    /// Papillae per ring, centre first.
    pub ring_counts: [usize; 4],
}

impl Default for SkinGeometry {
    fn default() -> Self {
        Self {
            h_c: 10.1,
            d_h: 1.1,
            d_c: 5.6,
            r: 2.0,
            ring_counts: [1, 6, 12, 18],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Papilla {
    /// 0 = centre.
    pub ring: usize,
    /// Rest position in the sensor plane, mm; +y is up.
    pub pos: [f64; 2],
    pub height: f64,
    /// Index of the papilla reflected through the vertical axis (itself when on it).
    pub mirror: usize,
}

/// A validated geometry with its papillae laid out.
#[derive(Clone, Debug, PartialEq)]
pub struct Skin {
    pub geometry: SkinGeometry,
    pub papillae: Vec<Papilla>,
}

impl Skin {
    pub fn rings(&self) -> usize {
        self.geometry.ring_counts.len()
    }

    pub fn ring_radius(&self, ring: usize) -> f64 {
        ring as f64 * self.geometry.d_c
    }
}

/// Lays out the papillae on concentric rings of radius `ring * d_c` with
/// heights `h_c - ring * d_h`.
///
/// Ring `k` with `n` papillae puts papilla `j` at angle `90° + 360°·j/n`, so
/// the layout is symmetric about the vertical axis. Mirrored positions are
/// produced by exact negation of `x`.
pub fn build_geometry(g: SkinGeometry) -> Result<Skin, SimError> {
    if !(g.d_h > 0.0 && g.h_c > 2.0 * g.d_h) {
        return Err(SimError::GeometryViolation(format!(
            "need h_c > 2·d_h > 0 (h_c = {}, d_h = {})",
            g.h_c, g.d_h
        )));
    }
    if !(g.r > 0.0 && g.d_c > 2.0 * g.r) {
        return Err(SimError::GeometryViolation(format!(
            "papillae overlap across rings: d_c = {} must exceed 2r = {}",
            g.d_c,
            2.0 * g.r
        )));
    }
    let outer = (g.ring_counts.len() - 1) as f64;
    if g.h_c - outer * g.d_h <= 0.0 {
        return Err(SimError::GeometryViolation(
            "outer ring has non-positive height".into(),
        ));
    }
    if g.ring_counts[0] != 1 {
        return Err(SimError::GeometryViolation(
            "the centre ring holds exactly one papilla".into(),
        ));
    }
    let mut papillae = vec![Papilla {
        ring: 0,
        pos: [0.0, 0.0],
        height: g.h_c,
        mirror: 0,
    }];
    for (ring, &n) in g.ring_counts.iter().enumerate().skip(1) {
        if n == 0 {
            return Err(SimError::GeometryViolation(format!("ring {ring} is empty")));
        }
        let radius = ring as f64 * g.d_c;
        if n > 1 && 2.0 * radius * (PI / n as f64).sin() <= 2.0 * g.r {
            return Err(SimError::GeometryViolation(format!(
                "papillae overlap within ring {ring}"
            )));
        }
        let base = papillae.len();
        let height = g.h_c - ring as f64 * g.d_h;
        let mut pos = vec![[0.0; 2]; n];
        for j in 0..n {
            let mirror_j = (n - j) % n;
            if j == mirror_j || 2 * j == n {
                let theta = PI / 2.0 + 2.0 * PI * j as f64 / n as f64;
                pos[j] = [0.0, radius * theta.sin()];
            } else if j < mirror_j {
                let theta = PI / 2.0 + 2.0 * PI * j as f64 / n as f64;
                pos[j] = [radius * theta.cos(), radius * theta.sin()];
            } else {
                let m = pos[mirror_j];
                pos[j] = [-m[0], m[1]];
            }
        }
        for (j, p) in pos.into_iter().enumerate() {
            papillae.push(Papilla {
                ring,
                pos: p,
                height,
                mirror: base + (n - j) % n,
            });
        }
    }
    Ok(Skin {
        geometry: g,
        papillae,
    })
}

/// Per-papilla normal force for an indentation `depth` (mm) measured from
/// first contact with the central papilla: `k_n · max(0, depth − ring·d_h)`.
pub fn normal_forces(skin: &Skin, depth: f64, k_n: f64) -> Vec<f64> {
    skin.papillae
        .iter()
        .map(|p| k_n * compression(&skin.geometry, p.ring, depth))
        .collect()
}

pub fn compression(g: &SkinGeometry, ring: usize, depth: f64) -> f64 {
    (depth - ring as f64 * g.d_h).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_layout() {
        let skin = build_geometry(SkinGeometry::default()).unwrap();
        assert_eq!(skin.papillae.len(), 37);
        assert_relative_eq!(skin.papillae[0].height, 10.1);
        let outer = skin.papillae.iter().find(|p| p.ring == 3).unwrap();
        assert_relative_eq!(outer.height, 6.8, epsilon = 1e-12);
        for (ring, want) in [(0, 0.0), (1, 5.6), (2, 11.2), (3, 16.8)] {
            assert_relative_eq!(skin.ring_radius(ring), want, epsilon = 1e-12);
            for p in skin.papillae.iter().filter(|p| p.ring == ring) {
                assert_relative_eq!(p.pos[0].hypot(p.pos[1]), want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn layout_is_exactly_mirror_symmetric() {
        let skin = build_geometry(SkinGeometry::default()).unwrap();
        for (i, p) in skin.papillae.iter().enumerate() {
            let m = &skin.papillae[p.mirror];
            assert_eq!(m.pos[0], -p.pos[0]);
            assert_eq!(m.pos[1], p.pos[1]);
            assert_eq!(m.ring, p.ring);
            assert_eq!(skin.papillae[p.mirror].mirror, i);
        }
    }

    #[test]
    fn overlap_rejected() {
        let g = SkinGeometry {
            d_c: 3.9,
            ..SkinGeometry::default()
        };
        assert!(matches!(
            build_geometry(g),
            Err(SimError::GeometryViolation(_))
        ));
        let g = SkinGeometry {
            h_c: 2.0,
            ..SkinGeometry::default()
        };
        assert!(matches!(
            build_geometry(g),
            Err(SimError::GeometryViolation(_))
        ));
    }

    #[test]
    fn normal_force_examples() {
        let skin = build_geometry(SkinGeometry::default()).unwrap();
        let n = normal_forces(&skin, 2.4, 1.0);
        for (p, f) in skin.papillae.iter().zip(&n) {
            if p.ring == 3 {
                assert_eq!(*f, 0.0);
            }
        }
        let n = normal_forces(&skin, 3.4, 1.0);
        let ring2 = skin.papillae.iter().position(|p| p.ring == 2).unwrap();
        assert_relative_eq!(n[ring2], 1.2, epsilon = 1e-12);
        assert!(normal_forces(&skin, 0.0, 1.0).iter().all(|&f| f == 0.0));
        // non-increasing with ring index
        let n = normal_forces(&skin, 3.0, 1.0);
        for w in skin.papillae.windows(2).zip(n.windows(2)) {
            if w.0[1].ring > w.0[0].ring {
                assert!(w.1[1] <= w.1[0]);
            }
        }
    }
}
