//! Deterministic synthetic 8-bit test content: smooth shading, flat shapes
//! with hard edges, oriented texture and mild sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::plane::Plane;

enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

struct Layer {
    shape: Shape,
    level: f64,
    /// Oriented sinusoid inside the shape: (amplitude, fy, fx).
    texture: Option<(f64, f64, f64)>,
}

impl Layer {
    fn covers(&self, y: f64, x: f64) -> bool {
        match self.shape {
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
        }
    }
}

/// Integer-valued image in `[0, 255]`.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let base = rng.gen_range(60.0..190.0);
    let (gy, gx) = (rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0));
    let n_layers = rng.gen_range(6..14);
    let layers: Vec<Layer> = (0..n_layers)
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                Shape::Ellipse {
                    cy: rng.gen_range(0.0..h),
                    cx: rng.gen_range(0.0..w),
                    ry: rng.gen_range(0.05..0.35) * h,
                    rx: rng.gen_range(0.05..0.35) * w,
                }
            } else {
                let (y0, x0) = (rng.gen_range(0.0..h), rng.gen_range(0.0..w));
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.gen_range(0.05..0.4) * h,
                    x1: x0 + rng.gen_range(0.05..0.4) * w,
                }
            };
            let texture = rng.gen_bool(0.4).then(|| {
                let period = rng.gen_range(3.0..24.0);
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let f = 2.0 * std::f64::consts::PI / period;
                (rng.gen_range(4.0..30.0), f * angle.sin(), f * angle.cos())
            });
            Layer {
                shape,
                level: rng.gen_range(10.0..245.0),
                texture,
            }
        })
        .collect();
    let noise = rng.gen_range(0.5..3.0);
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f64, x as f64);
            let mut v = base + gy * (fy / h - 0.5) + gx * (fx / w - 0.5);
            for l in &layers {
                if l.covers(fy, fx) {
                    v = l.level;
                    if let Some((a, ky, kx)) = l.texture {
                        v += a * (ky * fy + kx * fx).sin();
                    }
                }
            }
            // sum of uniforms: roughly Gaussian
            let n: f64 = (0..4).map(|_| rng.gen_range(-0.5..0.5)).sum::<f64>() * noise;
            data.push((v + n).round().clamp(0.0, 255.0));
        }
    }
    Plane {
        width,
        height,
        data,
    }
}

/// `count` frames of one scene panning by `(vy, vx)` pixels per frame.
pub fn synthetic_sequence(width: usize, height: usize, count: usize, motion: (i64, i64), seed: u64) -> Vec<Plane> {
    let margin = 8 * count;
    let big = synthetic_image(width + 2 * margin, height + 2 * margin, seed);
    (0..count as i64)
        .map(|t| {
            let mut p = Plane::zeros(width, height);
            for y in 0..height {
                for x in 0..width {
                    let sy = (y as i64 + margin as i64 - motion.0 * t).clamp(0, big.height as i64 - 1) as usize;
                    let sx = (x as i64 + margin as i64 - motion.1 * t).clamp(0, big.width as i64 - 1) as usize;
                    p.set(y, x, big.get(sy, sx));
                }
            }
            p
        })
        .collect()
}
