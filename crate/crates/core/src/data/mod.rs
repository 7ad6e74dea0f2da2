//! Synthetic layered B-scans with ground-truth label maps, plus the
//! augmentation, padding and fold-splitting pipeline.

mod augment;
mod folds;
mod io;

pub use augment::{affine, augment, gamma, gaussian_blur, AffineParams, AugmentParams};
pub use folds::{split_folds, Fold};
pub use io::{
    decode_sample, encode_sample, list_samples, read_sample, sample_file_name, write_pgm, write_sample, SAMPLE_MAGIC,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const NUM_CLASSES: usize = 7;
pub const NUM_LAYERS: usize = 6;

/// One B-scan: image in `[0, 1]` and a label map over classes `0..=6`,
/// both row-major `height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
    pub patient: u32,
    pub seed: u64,
}

impl Sample {
    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Image as a `[1, 1, H, W]` tensor.
    pub fn image_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, 1, self.height, self.width], |i| T::from_f64_lossy(self.image[i] as f64))
    }

    /// Class indices cast to reals, `[1, 1, H, W]`.
    pub fn target_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, 1, self.height, self.width], |i| T::from_f64_lossy(self.labels[i] as f64))
    }

    /// Per-class pixel counts.
    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub height: usize,
    pub width: usize,
    /// Mean row of the top retinal surface.
    pub top: f64,
    /// Mean thickness of layers 1..=6 in pixels.
    pub thickness: [f64; NUM_LAYERS],
    /// Standard deviation of the smooth thickness fluctuation per layer.
    pub thickness_std: [f64; NUM_LAYERS],
    /// Sag of the parabolic retina shape between image centre and edge, pixels.
    pub curvature: f64,
    /// Correlation length of the boundary fluctuations, pixels.
    pub smoothness: f64,
    pub drusen_count: usize,
    /// Maximum drusen elevation in pixels.
    pub drusen_height: f64,
    /// Gaussian width of a drusen bump, pixels.
    pub drusen_width: f64,
    pub speckle: f64,
    /// Mean intensity of classes 0..=6.
    pub intensity: [f64; NUM_CLASSES],
    pub seed: u64,
}

impl GenParams {
    pub fn desk() -> Self {
        Self {
            height: 128,
            width: 128,
            top: 34.0,
            thickness: [7.0, 10.0, 8.0, 12.0, 6.0, 5.0],
            thickness_std: [1.0, 1.5, 1.0, 1.5, 0.8, 0.8],
            curvature: 10.0,
            smoothness: 24.0,
            drusen_count: 2,
            drusen_height: 10.0,
            drusen_width: 6.0,
            speckle: 0.08,
            intensity: [0.05, 0.80, 0.35, 0.60, 0.25, 0.55, 0.95],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 4 {
            return Err(Error::config("image must be at least 16x4"));
        }
        if self.thickness.iter().any(|&t| t.is_nan() || t < 1.0) {
            return Err(Error::config("layer thicknesses must be at least 1 pixel"));
        }
        if self.thickness_std.iter().any(|&s| s.is_nan() || s < 0.0) {
            return Err(Error::config("thickness deviations must be non-negative"));
        }
        if self.drusen_count > 0 && !(self.drusen_height >= 0.0 && self.drusen_height < self.height as f64 / 4.0) {
            return Err(Error::config("drusen height must be below a quarter of the image height"));
        }
        if self.drusen_count > 0 && !(self.drusen_width > 0.0) {
            return Err(Error::config("drusen width must be positive"));
        }
        if !(self.smoothness > 0.0) || !(self.curvature >= 0.0) || !(self.speckle >= 0.0) {
            return Err(Error::config("smoothness must be positive, curvature and speckle non-negative"));
        }
        if self.intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config("class intensities must lie in [0, 1]"));
        }
        let span = self.top + self.thickness.iter().sum::<f64>() + self.curvature;
        if self.top < 0.0 || span >= self.height as f64 {
            return Err(Error::config(format!("layers span {span:.1} rows but the image has {}", self.height)));
        }
        Ok(())
    }
}

/// Smooth random curve: a few sinusoids with wavelengths of at least
/// `smoothness`, scaled to standard deviation `std`, scaled down further when
/// its curvature would exceed `max_curv`.
fn smooth_curve(rng: &mut ChaCha8Rng, width: usize, smoothness: f64, std: f64, max_curv: Option<f64>) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; width];
    }
    let terms: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let wavelength = smoothness * rng.random_range(1.0..4.0);
            let amp: f64 = rng.random_range(0.5..1.0);
            (amp, std::f64::consts::TAU / wavelength, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    // sum of independent unit-phase sinusoids has variance sum(a^2)/2
    let norm = (terms.iter().map(|t| t.0 * t.0).sum::<f64>() / 2.0).sqrt();
    let mut gain = std / norm;
    if let Some(max_curv) = max_curv {
        let curv: f64 = terms.iter().map(|(a, w, _)| a * w * w).sum::<f64>() * gain;
        if curv > max_curv {
            gain *= max_curv / curv;
        }
    }
    (0..width).map(|x| gain * terms.iter().map(|(a, w, p)| a * (w * x as f64 + p).sin()).sum::<f64>()).collect()
}

/// Row positions of the seven boundaries `b0..b6` for every column. Class
/// `k` occupies rows with `b[k-1] <= r + 0.5 < b[k]`.
pub fn boundaries(p: &GenParams) -> Result<Vec<Vec<f64>>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let w = p.width;
    let centre = (w as f64 - 1.0) / 2.0;
    let half = (w as f64 / 2.0).max(1.0);
    // parabola with value `curvature` at the edges; second derivative 2a
    let a = p.curvature / (half * half);
    let bowl: Vec<f64> = (0..w).map(|x| a * (x as f64 - centre).powi(2) - p.curvature / 2.0).collect();
    // fluctuations together use at most half the bowl's curvature so every b'' > 0

    let mut b = Vec::with_capacity(NUM_CLASSES);
    let shift = smooth_curve(&mut rng, w, p.smoothness, p.thickness_std[0], Some(a / 2.0));
    b.push((0..w).map(|x| p.top + bowl[x] + shift[x]).collect::<Vec<f64>>());
    for k in 0..NUM_LAYERS {
        let fluct = smooth_curve(&mut rng, w, p.smoothness, p.thickness_std[k], Some(a / (2.0 * NUM_LAYERS as f64)));
        let prev = &b[k];
        b.push((0..w).map(|x| prev[x] + p.thickness[k] + fluct[x]).collect());
    }

    for _ in 0..p.drusen_count {
        let cx = rng.random_range(0.0..w as f64);
        let height = rng.random_range(0.5..=1.0) * p.drusen_height;
        let sigma = p.drusen_width * rng.random_range(0.75..1.5);
        for x in 0..w {
            let g = height * (-((x as f64 - cx).powi(2)) / (2.0 * sigma * sigma)).exp();
            b[3][x] -= 0.3 * g;
            b[4][x] -= g;
            b[5][x] -= g;
            b[6][x] -= 0.5 * g;
        }
    }

    // keep every layer at least one pixel thick and inside the image
    let h = p.height as f64;
    for x in 0..w {
        for k in (1..NUM_CLASSES).rev() {
            b[k - 1][x] = b[k - 1][x].min(b[k][x] - 1.0);
        }
        b[0][x] = b[0][x].max(0.0);
        for k in 1..NUM_CLASSES {
            b[k][x] = b[k][x].max(b[k - 1][x] + 1.0);
        }
        for k in (0..NUM_CLASSES).rev() {
            b[k][x] = b[k][x].min(h - (NUM_CLASSES - k) as f64);
        }
    }
    Ok(b)
}

pub fn generate(p: &GenParams) -> Result<Sample> {
    let b = boundaries(p)?;
    let (h, w) = (p.height, p.width);
    let mut labels = vec![0u8; h * w];
    for x in 0..w {
        for r in 0..h {
            let y = r as f64 + 0.5;
            if y < b[0][x] || y >= b[NUM_LAYERS][x] {
                continue;
            }
            let k = (1..=NUM_LAYERS).find(|&k| y < b[k][x]).expect("inside the retina");
            labels[r * w + x] = k as u8;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let image = labels
        .iter()
        .map(|&l| {
            let v = p.intensity[l as usize] + p.speckle * noise.sample(&mut rng);
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(Sample { height: h, width: w, image, labels, patient: 0, seed: p.seed })
}

/// Mixes a base seed with patient and sample indices.
pub fn derive_seed(seed: u64, patient: u32, index: u32) -> u64 {
    let mut z = seed ^ ((patient as u64) << 32 | index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `patients x per_patient` samples. Each patient gets its own anatomy
/// (thicknesses, position, curvature); samples of one patient are
/// neighbouring slices with small perturbations around it.
pub fn generate_dataset(base: &GenParams, patients: u32, per_patient: u32) -> Result<Vec<Sample>> {
    base.validate()?;
    let mut out = Vec::with_capacity((patients * per_patient) as usize);
    for pid in 0..patients {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base.seed, pid, u32::MAX));
        let mut anatomy = base.clone();
        for t in &mut anatomy.thickness {
            *t = (*t * rng.random_range(0.85..1.15)).max(1.0);
        }
        anatomy.top = base.top + rng.random_range(-0.1..0.1) * base.top;
        anatomy.curvature = base.curvature * rng.random_range(0.6..1.2);
        for s in 0..per_patient {
            let mut p = anatomy.clone();
            p.seed = derive_seed(base.seed, pid, s);
            p.top += rng.random_range(-2.0..2.0);
            p.drusen_count = if base.drusen_count == 0 { 0 } else { rng.random_range(0..=base.drusen_count) };
            // shrink rather than fail if the perturbations overflow the image
            while p.validate().is_err() && p.top > 1.0 {
                p.top -= 1.0;
            }
            let mut sample = generate(&p)?;
            sample.patient = pid;
            out.push(sample);
        }
    }
    Ok(out)
}

/// Per column, the first row of each class `1..=6` (`None` when the class is
/// absent in that column).
pub fn layer_tops(s: &Sample, class: u8) -> Vec<Option<usize>> {
    (0..s.width).map(|x| (0..s.height).find(|&r| s.label(r, x) == class)).collect()
}

/// Largest height of the points above their lower convex hull; 0 for a
/// convex sequence. Missing points are skipped.
pub fn convexity_defect(rows: &[Option<usize>]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().enumerate().filter_map(|(x, r)| r.map(|r| (x as f64, r as f64))).collect();
    if pts.len() < 3 {
        return 0.0;
    }
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mut worst: f64 = 0.0;
    let mut seg = 0;
    for &(x, y) in &pts {
        while seg + 1 < hull.len() - 1 && hull[seg + 1].0 <= x {
            seg += 1;
        }
        let (a, b) = (hull[seg], hull[seg + 1]);
        let on_hull = a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0);
        worst = worst.max(y - on_hull);
    }
    worst
}

/// Whether every layer-top curve is convex up to pixel quantisation.
pub fn is_convex(s: &Sample, tolerance: f64) -> bool {
    (1..=NUM_LAYERS as u8).all(|c| convexity_defect(&layer_tops(s, c)) <= tolerance)
}

/// Mirror about the vertical axis.
pub fn flip_horizontal(s: &Sample) -> Sample {
    let w = s.width;
    let mut out = s.clone();
    for r in 0..s.height {
        for x in 0..w {
            out.image[r * w + x] = s.image[r * w + w - 1 - x];
            out.labels[r * w + x] = s.labels[r * w + w - 1 - x];
        }
    }
    out
}

/// Originals followed by their mirror images.
pub fn flip_double(samples: &[Sample]) -> Vec<Sample> {
    samples.iter().cloned().chain(samples.iter().map(flip_horizontal)).collect()
}

/// Centres `data` (`h x w`) in a zero-filled `target x target` grid.
/// Returns the grid and the `(row, col)` offset of the original content.
pub fn pad_to_square<T: Copy + Default>(
    data: &[T],
    h: usize,
    w: usize,
    target: usize,
) -> Result<(Vec<T>, (usize, usize))> {
    if data.len() != h * w {
        return Err(Error::config(format!("{} values for a {h}x{w} grid", data.len())));
    }
    if target < h || target < w {
        return Err(Error::config(format!("cannot pad {h}x{w} to {target}x{target}")));
    }
    let (top, left) = ((target - h) / 2, (target - w) / 2);
    let mut out = vec![T::default(); target * target];
    for r in 0..h {
        out[(r + top) * target + left..(r + top) * target + left + w].copy_from_slice(&data[r * w..(r + 1) * w]);
    }
    Ok((out, (top, left)))
}

pub fn unpad<T: Copy>(data: &[T], size: usize, offset: (usize, usize), h: usize, w: usize) -> Vec<T> {
    let (top, left) = offset;
    (0..h).flat_map(|r| data[(r + top) * size + left..(r + top) * size + left + w].iter().copied()).collect()
}

/// Pads image (black) and labels (class 0) to a square.
pub fn pad_sample(s: &Sample, target: usize) -> Result<Sample> {
    let (image, _) = pad_to_square(&s.image, s.height, s.width, target)?;
    let (labels, _) = pad_to_square(&s.labels, s.height, s.width, target)?;
    Ok(Sample { height: target, width: target, image, labels, ..s.clone() })
}

/// Spatial subsampling by `factor`: block-mean image, top-left labels.
pub fn subsample(s: &Sample, factor: usize) -> Result<Sample> {
    if factor == 0 || s.height % factor != 0 || s.width % factor != 0 {
        return Err(Error::config(format!("{}x{} is not divisible by {factor}", s.height, s.width)));
    }
    let (h, w) = (s.height / factor, s.width / factor);
    let mut image = vec![0f32; h * w];
    let mut labels = vec![0u8; h * w];
    let norm = (factor * factor) as f32;
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += s.image[(r * factor + dr) * s.width + c * factor + dc];
                }
            }
            image[r * w + c] = acc / norm;
            labels[r * w + c] = s.labels[r * factor * s.width + c * factor];
        }
    }
    Ok(Sample { height: h, width: w, image, labels, ..s.clone() })
}

/// Checks the anatomical ordering of one column: background, then
/// non-decreasing classes, then background.
pub fn column_ordered(s: &Sample, col: usize) -> bool {
    let mut phase = 0; // 0: above, 1: inside, 2: below
    let mut last = 0u8;
    for r in 0..s.height {
        let l = s.label(r, col);
        match (phase, l) {
            (0, 0) => {}
            (0, _) => {
                phase = 1;
                last = l;
            }
            (1, 0) => phase = 2,
            (1, _) if l >= last => last = l,
            (2, 0) => {}
            _ => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(t: f64) -> GenParams {
        GenParams {
            thickness: [t; NUM_LAYERS],
            thickness_std: [0.0; NUM_LAYERS],
            curvature: 0.0,
            drusen_count: 0,
            speckle: 0.0,
            top: 20.0,
            ..GenParams::desk()
        }
    }

    #[test]
    fn constant_thickness_runs() {
        for t in [1.0, 4.0, 9.0] {
            let s = generate(&flat(t)).unwrap();
            for c in 1..=NUM_LAYERS as u8 {
                for x in 0..s.width {
                    let run = (0..s.height).filter(|&r| s.label(r, x) == c).count();
                    assert_eq!(run, t as usize, "class {c} col {x}");
                }
            }
        }
    }

    #[test]
    fn zero_noise_image_is_class_intensity() {
        let p = flat(5.0);
        let s = generate(&p).unwrap();
        for (v, l) in s.image.iter().zip(&s.labels) {
            assert_eq!(*v, p.intensity[*l as usize] as f32);
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let p = GenParams { seed: 17, ..GenParams::desk() };
        assert_eq!(generate(&p).unwrap(), generate(&p).unwrap());
        let q = GenParams { seed: 18, ..p.clone() };
        assert_ne!(generate(&p).unwrap().image, generate(&q).unwrap().image);
    }

    #[test]
    fn healthy_samples_are_convex_and_ordered() {
        for seed in 0..20 {
            let p = GenParams { seed, drusen_count: 0, ..GenParams::desk() };
            let s = generate(&p).unwrap();
            assert!(is_convex(&s, 1.0), "seed {seed}");
            assert!((0..s.width).all(|c| column_ordered(&s, c)));
            assert!(s.class_histogram()[1..].iter().all(|&n| n > 0));
        }
    }

    #[test]
    fn drusen_break_convexity() {
        for seed in 0..20 {
            let p = GenParams { seed, drusen_count: 1, drusen_height: 20.0, ..GenParams::desk() };
            let s = generate(&p).unwrap();
            let defect = [5u8, 6].map(|c| convexity_defect(&layer_tops(&s, c)));
            assert!(defect.iter().any(|&d| d > 1.0), "seed {seed}: {defect:?}");
            assert!((0..s.width).all(|c| column_ordered(&s, c)));
        }
    }

    #[test]
    fn convexity_defect_oracle() {
        let v: Vec<Option<usize>> = [4, 1, 0, 1, 4].iter().map(|&r| Some(r)).collect();
        assert_eq!(convexity_defect(&v), 0.0);
        let v: Vec<Option<usize>> = [0, 3, 0].iter().map(|&r| Some(r)).collect();
        assert_eq!(convexity_defect(&v), 3.0);
    }

    #[test]
    fn padding() {
        let data: Vec<u8> = (0..(512 * 496)).map(|i| (i % 251) as u8).collect();
        let (padded, off) = pad_to_square(&data, 512, 496, 512).unwrap();
        assert_eq!(off, (0, 8));
        assert_eq!(padded.len(), 512 * 512);
        assert_eq!(padded.iter().filter(|&&v| v == 0).count() - data.iter().filter(|&&v| v == 0).count(), 512 * 16);
        assert_eq!(unpad(&padded, 512, off, 512, 496), data);
        let sq: Vec<u8> = (0..16).collect();
        assert_eq!(pad_to_square(&sq, 4, 4, 4).unwrap().0, sq);
        assert!(pad_to_square(&sq, 4, 4, 3).is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let s = generate(&GenParams { seed: 3, ..GenParams::desk() }).unwrap();
        assert_eq!(flip_horizontal(&flip_horizontal(&s)), s);
        assert_eq!(flip_horizontal(&s).class_histogram(), s.class_histogram());
        assert_eq!(flip_double(&[s.clone(), s]).len(), 4);
    }

    #[test]
    fn subsample_shapes() {
        let s = generate(&GenParams::desk()).unwrap();
        let t = subsample(&s, 4).unwrap();
        assert_eq!((t.height, t.width, t.image.len()), (32, 32, 1024));
        assert!(subsample(&s, 3).is_err());
    }

    #[test]
    fn dataset_patients() {
        let d = generate_dataset(&GenParams::desk(), 3, 4).unwrap();
        assert_eq!(d.len(), 12);
        assert_eq!(d.iter().filter(|s| s.patient == 2).count(), 4);
        assert_eq!(d, generate_dataset(&GenParams::desk(), 3, 4).unwrap());
    }
}
