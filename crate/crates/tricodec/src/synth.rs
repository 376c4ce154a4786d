//! Deterministic synthetic test images: layered value noise over a color
//! gradient with a few soft geometric shapes. The statistics (smooth regions,
//! soft edges, mild texture) are chosen to resemble downscaled photographs so
//! encoder behavior on them is representative.

use crate::model::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smoothstep-interpolated value noise on a lattice with `cells` cells per
/// image side. Output in [0, 1].
struct ValueNoise {
    lattice: Vec<f64>,
    cells: usize,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, cells: usize) -> ValueNoise {
        let n = (cells + 1) * (cells + 1);
        ValueNoise {
            lattice: (0..n).map(|_| rng.gen::<f64>()).collect(),
            cells,
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let fu = (u * self.cells as f64).min(self.cells as f64 - 1e-9);
        let fv = (v * self.cells as f64).min(self.cells as f64 - 1e-9);
        let (iu, iv) = (fu as usize, fv as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tu, tv) = (smooth(fu - iu as f64), smooth(fv - iv as f64));
        let side = self.cells + 1;
        let g = |x: usize, y: usize| self.lattice[y * side + x];
        let top = g(iu, iv) * (1.0 - tu) + g(iu + 1, iv) * tu;
        let bot = g(iu, iv + 1) * (1.0 - tu) + g(iu + 1, iv + 1) * tu;
        top * (1.0 - tv) + bot * tv
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// A soft-edged disk or band blended over the background.
struct Shape {
    cx: f64,
    cy: f64,
    radius: f64,
    softness: f64,
    color: [f64; 3],
    band: bool,
    angle: f64,
}

impl Shape {
    fn coverage(&self, u: f64, v: f64) -> f64 {
        let d = if self.band {
            let (s, c) = self.angle.sin_cos();
            ((u - self.cx) * c + (v - self.cy) * s).abs()
        } else {
            ((u - self.cx).powi(2) + (v - self.cy).powi(2)).sqrt()
        };
        // 1 inside, 0 outside, smooth ramp across the softness margin
        let t = (d - self.radius) / self.softness;
        (1.0 - t.clamp(0.0, 1.0)).powi(2) * (1.0 + 2.0 * t.clamp(0.0, 1.0))
    }
}

/// Generate test image number `index` at the given size. The same arguments
/// always produce the same pixels.
pub fn synth_image(index: u64, width: u32, height: u32) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_1DEA ^ index.wrapping_mul(0x9E37_79B9));
    let rand_color = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        [
            rng.gen_range(20.0..235.0),
            rng.gen_range(20.0..235.0),
            rng.gen_range(20.0..235.0),
        ]
    };
    // background: diagonal gradient between two colors, direction randomized
    let bg_a = rand_color(&mut rng);
    let bg_b = rand_color(&mut rng);
    let grad_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    // two noise octaves warp the gradient and add texture
    let coarse = ValueNoise::new(&mut rng, 4);
    let medium = ValueNoise::new(&mut rng, 9);
    let fine = ValueNoise::new(&mut rng, 23);
    let noise_amp = rng.gen_range(14.0..30.0);
    // per-pixel grain, like sensor noise in a downscaled photograph; its
    // amplitude varies slowly across the frame
    let grain_amp = rng.gen_range(10.0..17.0);
    let shapes: Vec<Shape> = (0..rng.gen_range(3..=5))
        .map(|_| Shape {
            cx: rng.gen_range(0.1..0.9),
            cy: rng.gen_range(0.1..0.9),
            radius: rng.gen_range(0.08..0.3),
            softness: rng.gen_range(0.02..0.12),
            color: rand_color(&mut rng),
            band: rng.gen_bool(0.3),
            angle: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect();

    let mut out = Raster::new(width, height);
    let (gs, gc) = grad_angle.sin_cos();
    for y in 0..height {
        for x in 0..width {
            let u = x as f64 / (width - 1) as f64;
            let v = y as f64 / (height - 1) as f64;
            // gradient coordinate warped by coarse noise
            let warp = 0.35 * (coarse.at(u, v) - 0.5);
            let t = ((u - 0.5) * gc + (v - 0.5) * gs + 0.5 + warp).clamp(0.0, 1.0);
            let mut c = lerp3(bg_a, bg_b, t);
            for s in &shapes {
                let cov = s.coverage(u, v);
                if cov > 0.0 {
                    c = lerp3(c, s.color, cov.min(1.0));
                }
            }
            let n = 0.7 * (medium.at(u, v) - 0.5) + 0.3 * (fine.at(u, v) - 0.5);
            // triangular-distributed grain sample, std ~ 0.41 * amplitude
            let grain = (rng.gen::<f64>() + rng.gen::<f64>() - 1.0)
                * grain_amp
                * (1.0 + 0.8 * (medium.at(u, v) - 0.5));
            let rgb =
                c.map(|ch| (ch + noise_amp * n + grain).round().clamp(0.0, 255.0) as u8);
            out.set(x, y, rgb);
        }
    }
    out
}
