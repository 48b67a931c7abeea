//! Deterministic synthetic articulated figures: five limbs radiating
//! from a torso center, each with its own angle and foreshortening
//! factor, rendered as soft line segments with bright Gaussian blobs at
//! the joints. Labels are exact by construction and every joint stays
//! inside the frame.

use alloc::vec::Vec;

use crate::pose::{KeypointSet, Sample};
use crate::real::Real;
use crate::rng::{derive_seed, rng_from_seed, uniform};
use crate::tensor::{Shape, Tensor};

/// Joint order: head, left hand, right hand, left foot, right foot.
pub const JOINT_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FigureSpec {
    pub image_size: usize,
    /// Center jitter (+- pixels on both axes).
    pub center_jitter: f64,
    /// Per-limb angle ranges in degrees (image coordinates, y down).
    pub angle_ranges: [(f64, f64); JOINT_COUNT],
    /// Per-limb base lengths in pixels.
    pub limb_lengths: [f64; JOINT_COUNT],
    /// Foreshortening factor range multiplying each limb length.
    pub foreshorten: (f64, f64),
    pub limb_thickness: f64,
    pub limb_intensity: f64,
    pub blob_sigma: f64,
}

impl Default for FigureSpec {
    fn default() -> Self {
        FigureSpec {
            image_size: 64,
            center_jitter: 3.0,
            angle_ranges: [
                (250.0, 290.0), // head, up
                (140.0, 220.0), // left hand
                (-40.0, 40.0),  // right hand
                (100.0, 135.0), // left foot
                (45.0, 80.0),   // right foot
            ],
            limb_lengths: [18.0, 20.0, 20.0, 22.0, 22.0],
            foreshorten: (0.4, 1.0),
            limb_thickness: 1.6,
            limb_intensity: 0.55,
            blob_sigma: 1.2,
        }
    }
}

impl FigureSpec {
    /// Joint index pairs that swap under a horizontal flip.
    pub fn flip_pairs(&self) -> Vec<(usize, usize)> {
        alloc::vec![(1, 2), (3, 4)]
    }
}

/// Fully determined pose; `generate` samples these, tests can pin them.
#[derive(Debug, Clone, PartialEq)]
pub struct FigurePose {
    pub center: [f64; 2],
    pub angles_deg: [f64; JOINT_COUNT],
    pub foreshorten: [f64; JOINT_COUNT],
}

/// Joint positions in image pixels.
pub fn joints_of(spec: &FigureSpec, pose: &FigurePose) -> Vec<[f64; 2]> {
    (0..JOINT_COUNT)
        .map(|i| {
            let theta = pose.angles_deg[i] * core::f64::consts::PI / 180.0;
            let len = spec.limb_lengths[i] * pose.foreshorten[i];
            let (sin, cos) = num_traits::Float::sin_cos(theta);
            [pose.center[0] + len * cos, pose.center[1] + len * sin]
        })
        .collect()
}

fn dist_to_segment(px: f64, py: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    let vx = b[0] - a[0];
    let vy = b[1] - a[1];
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a[0]) * vx + (py - a[1]) * vy) / len2).clamp(0.0, 1.0)
    };
    let dx = px - (a[0] + t * vx);
    let dy = py - (a[1] + t * vy);
    num_traits::Float::sqrt(dx * dx + dy * dy)
}

/// Render one figure to a grayscale image in [0, 1].
pub fn render<T: Real>(spec: &FigureSpec, pose: &FigurePose) -> Tensor<T> {
    let n = spec.image_size;
    let joints = joints_of(spec, pose);
    let mut img = alloc::vec![0.0f64; n * n];
    let clampf = |v: f64, lo: f64, hi: f64| num_traits::Float::min(num_traits::Float::max(v, lo), hi);

    let blob = |acc: &mut [f64], cx: f64, cy: f64, amp: f64, sigma: f64| {
        let inv = 1.0 / (2.0 * sigma * sigma);
        let r = sigma * 3.0;
        let x0 = clampf(num_traits::Float::floor(cx - r), 0.0, (n - 1) as f64) as usize;
        let x1 = clampf(num_traits::Float::ceil(cx + r), 0.0, (n - 1) as f64) as usize;
        let y0 = clampf(num_traits::Float::floor(cy - r), 0.0, (n - 1) as f64) as usize;
        let y1 = clampf(num_traits::Float::ceil(cy + r), 0.0, (n - 1) as f64) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                acc[y * n + x] += amp * num_traits::Float::exp(-(dx * dx + dy * dy) * inv);
            }
        }
    };

    for joint in &joints {
        let a = pose.center;
        let b = *joint;
        let pad = spec.limb_thickness + 1.0;
        let x0 = clampf(num_traits::Float::floor(a[0].min(b[0]) - pad), 0.0, (n - 1) as f64) as usize;
        let x1 = clampf(num_traits::Float::ceil(a[0].max(b[0]) + pad), 0.0, (n - 1) as f64) as usize;
        let y0 = clampf(num_traits::Float::floor(a[1].min(b[1]) - pad), 0.0, (n - 1) as f64) as usize;
        let y1 = clampf(num_traits::Float::ceil(a[1].max(b[1]) + pad), 0.0, (n - 1) as f64) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = dist_to_segment(x as f64, y as f64, a, b);
                if d < spec.limb_thickness {
                    img[y * n + x] += spec.limb_intensity * (1.0 - d / spec.limb_thickness);
                }
            }
        }
        blob(&mut img, joint[0], joint[1], 1.0, spec.blob_sigma);
    }
    // Dimmer torso blob so the center reads as body, not joint.
    blob(&mut img, pose.center[0], pose.center[1], 0.6, spec.blob_sigma);

    Tensor::new(
        Shape::new(1, 1, n, n),
        img.iter().map(|&v| T::from_f64(v.min(1.0))).collect(),
    )
    .expect("render buffer sized to shape")
}

pub fn sample_pose(spec: &FigureSpec, rng: &mut crate::rng::EngineRng) -> FigurePose {
    let c = spec.image_size as f64 / 2.0;
    let j = spec.center_jitter;
    let center = [
        c + uniform::<f64>(rng, -j, j),
        c + uniform::<f64>(rng, -j, j),
    ];
    let mut angles = [0.0; JOINT_COUNT];
    let mut fs = [0.0; JOINT_COUNT];
    for i in 0..JOINT_COUNT {
        angles[i] = uniform::<f64>(rng, spec.angle_ranges[i].0, spec.angle_ranges[i].1);
        fs[i] = uniform::<f64>(rng, spec.foreshorten.0, spec.foreshorten.1);
    }
    FigurePose {
        center,
        angles_deg: angles,
        foreshorten: fs,
    }
}

/// Deterministic dataset: sample `i` always comes from the stream
/// `derive_seed(seed, "sample/i")`, so generation order (or parallel
/// generation) cannot change the result.
pub fn generate<T: Real>(count: usize, spec: &FigureSpec, seed: u64) -> Vec<Sample<T>> {
    (0..count).map(|i| generate_one(spec, seed, i)).collect()
}

/// One sample of the stream; `generate(count, ..)` is exactly
/// `(0..count).map(generate_one)`.
pub fn generate_one<T: Real>(spec: &FigureSpec, seed: u64, index: usize) -> Sample<T> {
    let mut rng = rng_from_seed(derive_seed(seed, &alloc::format!("sample/{index}")));
    let pose = sample_pose(spec, &mut rng);
    let joints = joints_of(spec, &pose);
    Sample {
        image: render(spec, &pose),
        joints: KeypointSet::all_visible(joints),
    }
}
