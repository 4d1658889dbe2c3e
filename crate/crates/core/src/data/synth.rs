//! Seeded synthetic fundus-like images: a smooth background with noise,
//! darker quadratic Bezier vessels and a circular field of view.

use serde::{Deserialize, Serialize};

use crate::engine::{Shape, Tensor};
use crate::rng::{self, SeededRng};

use super::{DataError, SampleRecord};

/// Polyline resolution of each vessel centerline.
const CENTERLINE_SEGMENTS: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Inclusive range of vessel counts.
    pub n_vessels: (usize, usize),
    pub radius_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 128,
            n_vessels: (6, 12),
            radius_range: (1.0, 4.0),
            contrast_range: (0.1, 0.5),
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidConfig(msg));
        if self.image_size < 8 || !self.image_size.is_multiple_of(4) {
            return bad(format!(
                "image size {} must be a multiple of 4 and at least 8",
                self.image_size
            ));
        }
        if self.n_vessels.0 > self.n_vessels.1 {
            return bad(format!("vessel count range {:?} is empty", self.n_vessels));
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1) {
            return bad(format!(
                "radius range {:?} must be positive and nonempty",
                self.radius_range
            ));
        }
        if r1 > self.image_size as f64 / 8.0 {
            return bad(format!(
                "radius {} exceeds image_size/8 = {}",
                r1,
                self.image_size as f64 / 8.0
            ));
        }
        let (c0, c1) = self.contrast_range;
        if !(c0 > 0.0 && c0 <= c1 && c1 <= 1.0) {
            return bad(format!(
                "contrast range {:?} must lie in (0,1] and be nonempty",
                self.contrast_range
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise sigma {} must be finite and nonnegative",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

/// Inscribed disc centered at `(size-1)/2` with radius `size/2`.
pub fn fov_disc(size: usize) -> Tensor {
    let c = (size as f64 - 1.0) / 2.0;
    let r2 = (size as f64 / 2.0).powi(2);
    let mut t = Tensor::zeros(Shape::new(1, 1, size, size));
    for y in 0..size {
        for x in 0..size {
            let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            t.data_mut()[y * size + x] = f64::from(d2 <= r2);
        }
    }
    t
}

struct Vessel {
    points: Vec<(f64, f64)>,
    radius: f64,
    contrast: f64,
}

impl Vessel {
    fn sample(rng: &mut SeededRng, cfg: &SynthConfig) -> Self {
        let size = cfg.image_size as f64;
        let c = (size - 1.0) / 2.0;
        // Start uniformly inside the disc, leaving a margin of one radius.
        let rho = (size / 2.0 - 1.0) * rng::uniform(rng, 0.0, 1.0).sqrt();
        let phi = rng::uniform(rng, 0.0, std::f64::consts::TAU);
        let p0 = (c + rho * phi.cos(), c + rho * phi.sin());
        let theta = rng::uniform(rng, 0.0, std::f64::consts::TAU);
        let length = rng::uniform(rng, 0.25, 0.5) * size;
        let p2 = (p0.0 + length * theta.cos(), p0.1 + length * theta.sin());
        let bend = rng::uniform(rng, -0.3, 0.3) * length;
        let p1 = (
            (p0.0 + p2.0) / 2.0 - bend * theta.sin(),
            (p0.1 + p2.1) / 2.0 + bend * theta.cos(),
        );
        let radius = rng::uniform(rng, cfg.radius_range.0, cfg.radius_range.1);
        let contrast = rng::uniform(rng, cfg.contrast_range.0, cfg.contrast_range.1);
        let points = (0..=CENTERLINE_SEGMENTS)
            .map(|i| {
                let t = i as f64 / CENTERLINE_SEGMENTS as f64;
                let (a, b, d) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
                (
                    a * p0.0 + b * p1.0 + d * p2.0,
                    a * p0.1 + b * p1.1 + d * p2.1,
                )
            })
            .collect();
        Vessel {
            points,
            radius,
            contrast,
        }
    }

    fn distance(&self, x: f64, y: f64) -> f64 {
        self.points
            .windows(2)
            .map(|s| segment_distance((x, y), s[0], s[1]))
            .fold(f64::INFINITY, f64::min)
    }

    fn bounds(&self, size: usize) -> (usize, usize, usize, usize) {
        let clamp = |v: f64| v.clamp(0.0, size as f64 - 1.0);
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in &self.points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let r = self.radius + 1.0;
        (
            clamp((x0 - r).floor()) as usize,
            clamp((x1 + r).ceil()) as usize,
            clamp((y0 - r).floor()) as usize,
            clamp((y1 + r).ceil()) as usize,
        )
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Generates one record; a pure function of `cfg` (including its seed).
pub fn generate_synthetic(cfg: &SynthConfig, id: &str) -> Result<SampleRecord, DataError> {
    cfg.validate()?;
    let size = cfg.image_size;
    let mut rng = rng::seeded(cfg.seed);
    let base = rng::uniform(&mut rng, 0.55, 0.75);
    let gx = rng::uniform(&mut rng, -0.15, 0.15);
    let gy = rng::uniform(&mut rng, -0.15, 0.15);
    let count = rng::uniform_int(&mut rng, cfg.n_vessels.0 as u64, cfg.n_vessels.1 as u64) as usize;
    let vessels: Vec<Vessel> = (0..count).map(|_| Vessel::sample(&mut rng, cfg)).collect();

    // Per-pixel darkening: strongest vessel wins, fading to half at the wall.
    let mut dark = vec![0.0f64; size * size];
    let mut inside = vec![false; size * size];
    for v in &vessels {
        let (x0, x1, y0, y1) = v.bounds(size);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = v.distance(x as f64, y as f64);
                if d <= v.radius {
                    let i = y * size + x;
                    inside[i] = true;
                    let q = d / v.radius;
                    dark[i] = dark[i].max(v.contrast * (1.0 - 0.5 * q * q));
                }
            }
        }
    }

    let fov = fov_disc(size);
    let mut image = Tensor::zeros(Shape::new(1, 1, size, size));
    let mut mask = Tensor::zeros(Shape::new(1, 1, size, size));
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            // Noise is drawn for every pixel so the stream does not depend on the FOV.
            let noise = cfg.noise_sigma * rng::standard_normal(&mut rng);
            if fov.data()[i] == 0.0 {
                continue;
            }
            let bg = base + gx * (x as f64 / s - 0.5) + gy * (y as f64 / s - 0.5);
            image.data_mut()[i] = (bg * (1.0 - dark[i]) + noise).clamp(0.0, 1.0);
            mask.data_mut()[i] = f64::from(inside[i]);
        }
    }
    Ok(SampleRecord {
        id: id.to_string(),
        image,
        vessel_mask: mask,
        fov_mask: fov,
    })
}

/// `n` records with ids `synth_0000..` and per-record seeds derived from
/// `cfg.seed` and the record index.
pub fn generate_dataset(cfg: &SynthConfig, n: usize) -> Result<Vec<SampleRecord>, DataError> {
    (0..n)
        .map(|i| {
            let per = SynthConfig {
                seed: rng::derive_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            generate_synthetic(&per, &format!("synth_{i:04}"))
        })
        .collect()
}
