//! Synthetic test objects. Values lie in `[0, 1]`; edges are anti-aliased by
//! 4x4 supersampling so that projections of the pixelated object stay smooth.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outer radius of the star, disk and ring phantoms, as a fraction of the half-width.
pub const OUTER_RADIUS: f64 = 0.9;
/// Number of alternating bands of the concentric-circle phantom.
pub const RING_BANDS: usize = 8;

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomKind {
    /// Random ellipses on an elliptical body.
    Blobs,
    /// Alternating bright/dark wedges; `spokes` bright wedges in total.
    SiemensStar { spokes: usize },
    /// Alternating rings of equal width.
    ConcentricCircles,
    /// Uniform disk of value one.
    Disk,
}

impl PhantomKind {
    pub fn name(&self) -> &'static str {
        match self {
            PhantomKind::Blobs => "blobs",
            PhantomKind::SiemensStar { .. } => "siemens_star",
            PhantomKind::ConcentricCircles => "concentric_circles",
            PhantomKind::Disk => "disk",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn blob_ellipses(seed: u64) -> Vec<Ellipse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shapes = vec![Ellipse {
        cx: 0.0,
        cy: 0.0,
        a: 0.85,
        b: 0.72,
        cos: 1.0,
        sin: 0.0,
        value: 0.35,
    }];
    for i in 0..14 {
        let r = 0.55 * rng.gen::<f64>().sqrt();
        let phi = rng.gen_range(0.0..2.0 * PI);
        let (sin, cos) = rng.gen_range(0.0..PI).sin_cos();
        // a handful of small, bright details and some larger low-contrast regions
        let (size, value) = if i % 3 == 0 {
            (rng.gen_range(0.03..0.07), rng.gen_range(0.35..0.6))
        } else {
            (rng.gen_range(0.08..0.22), rng.gen_range(-0.25..0.3))
        };
        shapes.push(Ellipse {
            cx: r * phi.cos(),
            cy: r * phi.sin(),
            a: size,
            b: size * rng.gen_range(0.4..1.0),
            cos,
            sin,
            value,
        });
    }
    shapes
}

/// Builds a `n_side x n_side` phantom. `seed` only affects [`PhantomKind::Blobs`].
pub fn make_phantom(kind: PhantomKind, n_side: usize, seed: u64) -> Result<Array2<f64>> {
    if n_side < 16 {
        return Err(Error::param("n_side", "phantoms need at least 16 pixels per side"));
    }
    if let PhantomKind::SiemensStar { spokes } = kind {
        if spokes < 2 {
            return Err(Error::param("spokes", "a Siemens star needs at least 2 spokes"));
        }
    }
    let ellipses = matches!(kind, PhantomKind::Blobs).then(|| blob_ellipses(seed));
    let value_at = |x: f64, y: f64| -> f64 {
        let r = x.hypot(y);
        match kind {
            PhantomKind::Disk => f64::from(u8::from(r <= OUTER_RADIUS)),
            PhantomKind::SiemensStar { spokes } => {
                if r > OUTER_RADIUS {
                    return 0.0;
                }
                let phi = y.atan2(x).rem_euclid(2.0 * PI);
                let wedge = (phi / (PI / spokes as f64)).floor() as usize;
                f64::from(u8::from(wedge % 2 == 0))
            }
            PhantomKind::ConcentricCircles => {
                if r > OUTER_RADIUS {
                    return 0.0;
                }
                let band = (r / (OUTER_RADIUS / RING_BANDS as f64)).floor() as usize;
                f64::from(u8::from(band % 2 == 0))
            }
            PhantomKind::Blobs => ellipses
                .as_ref()
                .expect("blob shapes")
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.value)
                .sum(),
        }
    };
    let half = n_side as f64 / 2.0;
    let step = 1.0 / SUPERSAMPLE as f64;
    let image = Array2::from_shape_fn((n_side, n_side), |(row, col)| {
        let mut acc = 0.0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let px = col as f64 + (sx as f64 + 0.5) * step;
                let py = row as f64 + (sy as f64 + 0.5) * step;
                acc += value_at((px - half) / half, (half - py) / half);
            }
        }
        (acc / (SUPERSAMPLE * SUPERSAMPLE) as f64).clamp(0.0, 1.0)
    });
    Ok(image)
}

/// Radii (in pixels from the image center) of the ring edges of the
/// concentric-circle phantom.
pub fn ring_edge_radii(n_side: usize) -> Vec<f64> {
    let half = n_side as f64 / 2.0;
    (1..=RING_BANDS)
        .map(|k| OUTER_RADIUS * half * k as f64 / RING_BANDS as f64)
        .collect()
}

/// Polar angles of the radial edges of a Siemens star.
pub fn star_edge_angles(spokes: usize) -> Vec<f64> {
    (0..2 * spokes).map(|k| k as f64 * PI / spokes as f64).collect()
}
