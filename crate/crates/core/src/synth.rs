//! Procedural signal families standing in for the real INR datasets at desk
//! scale. Each family exposes classes (fixed base parameters drawn from the
//! class index + dataset seed) with per-item jitter, so a "class" has the
//! intra-class variation few-shot generation needs. Item 0, 1, 2, … of a
//! class are deterministic given the dataset seed.

use crate::error::{Error, Result};
use crate::inr::{grid_coords_2d, grid_coords_3d, SignalSample};
use crate::rng::{mix, rng_stream};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Blobs2d,
    DigitsLike,
    Spheres3d,
    Superquadrics3d,
}

impl SignalKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blobs2d" => Ok(SignalKind::Blobs2d),
            "digits-like" => Ok(SignalKind::DigitsLike),
            "spheres3d" => Ok(SignalKind::Spheres3d),
            "superquadrics3d" => Ok(SignalKind::Superquadrics3d),
            other => Err(Error::Config(format!("unknown signal kind '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SignalKind::Blobs2d => "blobs2d",
            SignalKind::DigitsLike => "digits-like",
            SignalKind::Spheres3d => "spheres3d",
            SignalKind::Superquadrics3d => "superquadrics3d",
        }
    }

    pub fn coord_dim(&self) -> usize {
        match self {
            SignalKind::Blobs2d | SignalKind::DigitsLike => 2,
            SignalKind::Spheres3d | SignalKind::Superquadrics3d => 3,
        }
    }

    pub fn default_res(&self) -> usize {
        if self.coord_dim() == 2 {
            16
        } else {
            12
        }
    }
}

/// One synthetic class: a shape family member with frozen base parameters.
#[derive(Debug, Clone, Copy)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub class_index: usize,
    pub dataset_seed: u64,
}

impl SignalSpec {
    pub fn new(kind: SignalKind, class_index: usize, dataset_seed: u64) -> Self {
        SignalSpec { kind, class_index, dataset_seed }
    }

    fn class_rng(&self) -> ChaCha8Rng {
        rng_stream(mix(self.dataset_seed, 0xC1A55), self.class_index as u64)
    }

    fn item_rng(&self, item: usize) -> ChaCha8Rng {
        rng_stream(
            mix(mix(self.dataset_seed, 0x17E4), self.class_index as u64),
            item as u64,
        )
    }

    /// Jittered member `item` of the class, sampled on the canonical grid.
    pub fn sample(&self, item: usize, res: usize, out_dim: usize) -> Result<SignalSample> {
        self.build(Some(self.item_rng(item)), res, out_dim)
    }

    /// The zero-jitter class member (base parameters only).
    pub fn prototype(&self, res: usize, out_dim: usize) -> Result<SignalSample> {
        self.build(None, res, out_dim)
    }

    fn build(&self, jitter: Option<ChaCha8Rng>, res: usize, out_dim: usize) -> Result<SignalSample> {
        if res < 2 {
            return Err(Error::contract("signal resolution must be >= 2"));
        }
        match self.kind.coord_dim() {
            2 => {
                if out_dim != 1 && out_dim != 3 {
                    return Err(Error::contract("2-D signals support out_dim 1 or 3"));
                }
                let coords = grid_coords_2d(res);
                let field: Box<dyn Fn(f64, f64) -> f64> = match self.kind {
                    SignalKind::Blobs2d => Box::new(blobs_field(self.class_rng(), jitter)),
                    SignalKind::DigitsLike => Box::new(digit_field(
                        self.class_index,
                        self.class_rng(),
                        jitter,
                    )),
                    _ => unreachable!(),
                };
                let tint = self.tint(out_dim);
                let mut targets = Vec::with_capacity(res * res * out_dim);
                for xy in coords.data().chunks(2) {
                    let f = field(xy[0], xy[1]);
                    for &t in &tint {
                        targets.push((0.05 + 0.9 * t * f).clamp(0.0, 1.0));
                    }
                }
                SignalSample::new(coords, Tensor::new(vec![res * res, out_dim], targets)?)
            }
            _ => {
                if out_dim != 1 {
                    return Err(Error::contract("3-D occupancy signals are scalar"));
                }
                let coords = grid_coords_3d(res);
                let field: Box<dyn Fn(f64, f64, f64) -> f64> = match self.kind {
                    SignalKind::Spheres3d => Box::new(spheres_field(self.class_rng(), jitter)),
                    SignalKind::Superquadrics3d => {
                        Box::new(superquadric_field(self.class_rng(), jitter))
                    }
                    _ => unreachable!(),
                };
                let targets: Vec<f64> = coords
                    .data()
                    .chunks(3)
                    .map(|p| field(p[0], p[1], p[2]).clamp(0.0, 1.0))
                    .collect();
                SignalSample::new(coords, Tensor::new(vec![res * res * res, 1], targets)?)
            }
        }
    }

    /// Per-class channel multipliers; grayscale gets a single unit channel.
    fn tint(&self, out_dim: usize) -> Vec<f64> {
        if out_dim == 1 {
            return vec![1.0];
        }
        let mut rng = rng_stream(mix(self.dataset_seed, 0x71A7), self.class_index as u64);
        let mut t: Vec<f64> = (0..3).map(|_| rng.random_range(0.45..1.0)).collect();
        let peak = t.iter().cloned().fold(0.0, f64::max);
        for v in &mut t {
            *v /= peak;
        }
        t
    }
}

fn jitter_scalar(rng: &mut Option<ChaCha8Rng>, lo: f64, hi: f64, identity: f64) -> f64 {
    match rng {
        Some(r) => r.random_range(lo..hi),
        None => identity,
    }
}

fn blobs_field(
    mut class: ChaCha8Rng,
    mut jitter: Option<ChaCha8Rng>,
) -> impl Fn(f64, f64) -> f64 {
    let n = class.random_range(2..5usize);
    let mut blobs = Vec::with_capacity(n);
    for _ in 0..n {
        let cx = class.random_range(-0.55..0.55);
        let cy = class.random_range(-0.55..0.55);
        let s = class.random_range(0.02..0.08);
        let amp = class.random_range(0.45..0.85);
        let dx = jitter_scalar(&mut jitter, -0.08, 0.08, 0.0);
        let dy = jitter_scalar(&mut jitter, -0.08, 0.08, 0.0);
        let sj = jitter_scalar(&mut jitter, 0.85, 1.15, 1.0);
        let aj = jitter_scalar(&mut jitter, 0.9, 1.1, 1.0);
        blobs.push((cx + dx, cy + dy, s * sj, amp * aj));
    }
    move |x: f64, y: f64| {
        blobs
            .iter()
            .map(|&(cx, cy, s, amp)| {
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                amp * (-d2 / s).exp()
            })
            .sum()
    }
}

/// Seven-segment layout on a [−0.75, 0.75]² box; classes cycle through the
/// ten digit patterns with per-class stroke width and per-item affine jitter.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((-0.38, 0.68), (0.38, 0.68)),   // A: top
    ((0.45, 0.60), (0.45, 0.08)),    // B: top right
    ((0.45, -0.08), (0.45, -0.60)),  // C: bottom right
    ((-0.38, -0.68), (0.38, -0.68)), // D: bottom
    ((-0.45, -0.08), (-0.45, -0.60)),// E: bottom left
    ((-0.45, 0.60), (-0.45, 0.08)),  // F: top left
    ((-0.38, 0.0), (0.38, 0.0)),     // G: middle
];

const DIGIT_PATTERNS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],    // 0
    &[1, 2],                // 1
    &[0, 1, 6, 4, 3],       // 2
    &[0, 1, 6, 2, 3],       // 3
    &[5, 6, 1, 2],          // 4
    &[0, 5, 6, 2, 3],       // 5
    &[0, 5, 6, 4, 2, 3],    // 6
    &[0, 1, 2],             // 7
    &[0, 1, 2, 3, 4, 5, 6], // 8
    &[0, 1, 2, 3, 5, 6],    // 9
];

fn dist_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (px - a.0, py - a.1);
    let t = ((wx * vx + wy * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn digit_field(
    class_index: usize,
    mut class: ChaCha8Rng,
    mut jitter: Option<ChaCha8Rng>,
) -> impl Fn(f64, f64) -> f64 {
    let pattern = DIGIT_PATTERNS[class_index % 10];
    let thickness = class.random_range(0.09..0.13);
    let base_scale = class.random_range(0.95..1.05);

    let angle = jitter_scalar(&mut jitter, -0.08, 0.08, 0.0);
    let tx = jitter_scalar(&mut jitter, -0.06, 0.06, 0.0);
    let ty = jitter_scalar(&mut jitter, -0.06, 0.06, 0.0);
    let scale = base_scale * jitter_scalar(&mut jitter, 0.92, 1.08, 1.0);
    let thick = thickness * jitter_scalar(&mut jitter, 0.9, 1.1, 1.0);

    let segs: Vec<((f64, f64), (f64, f64))> =
        pattern.iter().map(|&i| SEGMENTS[i]).collect();
    let (c, s) = (angle.cos(), angle.sin());
    move |x: f64, y: f64| {
        // inverse affine: undo translation, rotation, scale
        let (ux, uy) = (x - tx, y - ty);
        let (rx, ry) = ((c * ux + s * uy) / scale, (-s * ux + c * uy) / scale);
        segs.iter()
            .map(|&(a, b)| smoothstep(thick + 0.05, thick - 0.02, dist_to_segment(rx, ry, a, b)))
            .fold(0.0, f64::max)
    }
}

fn spheres_field(
    mut class: ChaCha8Rng,
    mut jitter: Option<ChaCha8Rng>,
) -> impl Fn(f64, f64, f64) -> f64 {
    let n = class.random_range(1..4usize);
    let mut spheres = Vec::with_capacity(n);
    for _ in 0..n {
        let c: Vec<f64> = (0..3).map(|_| class.random_range(-0.35..0.35)).collect();
        let r = class.random_range(0.18..0.4);
        let dx = jitter_scalar(&mut jitter, -0.05, 0.05, 0.0);
        let dy = jitter_scalar(&mut jitter, -0.05, 0.05, 0.0);
        let dz = jitter_scalar(&mut jitter, -0.05, 0.05, 0.0);
        let rj = jitter_scalar(&mut jitter, 0.9, 1.1, 1.0);
        spheres.push((c[0] + dx, c[1] + dy, c[2] + dz, r * rj));
    }
    move |x: f64, y: f64, z: f64| {
        let sdf = spheres
            .iter()
            .map(|&(cx, cy, cz, r)| {
                ((x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz)).sqrt() - r
            })
            .fold(f64::INFINITY, f64::min);
        1.0 / (1.0 + (sdf / 0.05).exp())
    }
}

fn superquadric_field(
    mut class: ChaCha8Rng,
    mut jitter: Option<ChaCha8Rng>,
) -> impl Fn(f64, f64, f64) -> f64 {
    let p = class.random_range(0.9..3.5);
    let base: Vec<f64> = (0..3).map(|_| class.random_range(0.28..0.55)).collect();
    let base_angle = class.random_range(0.0..std::f64::consts::PI);

    let axes: Vec<f64> = base
        .iter()
        .map(|a| a * jitter_scalar(&mut jitter, 0.92, 1.08, 1.0))
        .collect();
    let angle = base_angle + jitter_scalar(&mut jitter, -0.1, 0.1, 0.0);
    let (c, s) = (angle.cos(), angle.sin());
    move |x: f64, y: f64, z: f64| {
        let (rx, ry) = (c * x + s * y, -s * x + c * y);
        let f = (rx / axes[0]).abs().powf(p)
            + (ry / axes[1]).abs().powf(p)
            + (z / axes[2]).abs().powf(p);
        let g = f.powf(1.0 / p) - 1.0;
        1.0 / (1.0 + (g / 0.07).exp())
    }
}
