use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Sample;

/// Probabilities and ranges of the random augmentations. Each family fires
/// independently with its probability.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub p_affine: f64,
    pub p_noise: f64,
    pub p_blur: f64,
    pub p_gamma: f64,
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    /// Maximal shift as a fraction of the image extent.
    pub max_shift: f64,
    pub max_noise_sigma: f64,
    pub max_blur_sigma: f64,
    pub gamma_range: (f64, f64),
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            p_affine: 0.5,
            p_noise: 0.5,
            p_blur: 0.5,
            p_gamma: 0.5,
            max_rotation_deg: 10.0,
            scale_range: (0.9, 1.1),
            max_shift: 0.05,
            max_noise_sigma: 0.05,
            max_blur_sigma: 1.5,
            gamma_range: (0.7, 1.4),
        }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        Self { p_affine: 0.0, p_noise: 0.0, p_blur: 0.0, p_gamma: 0.0, ..Self::default() }
    }
}

/// Rotation about the image centre, isotropic scale, then shift (pixels).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub angle_deg: f64,
    pub scale: f64,
    pub shift: (f64, f64),
}

/// Warps image (bilinear) and labels (nearest) with the same transform.
/// Pixels mapped from outside the image become black / class 0.
pub fn affine(s: &Sample, t: AffineParams) -> Sample {
    let (h, w) = (s.height, s.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = t.angle_deg.to_radians().sin_cos();
    let mut out = s.clone();
    for r in 0..h {
        for c in 0..w {
            // inverse map: undo shift, rotate back, unscale
            let dy = r as f64 - cy - t.shift.0;
            let dx = c as f64 - cx - t.shift.1;
            let sy = (cos * dy - sin * dx) / t.scale + cy;
            let sx = (sin * dy + cos * dx) / t.scale + cx;
            let (nr, nc) = (sy.round(), sx.round());
            out.labels[r * w + c] = if nr >= 0.0 && nc >= 0.0 && (nr as usize) < h && (nc as usize) < w {
                s.labels[nr as usize * w + nc as usize]
            } else {
                0
            };
            out.image[r * w + c] = bilinear(&s.image, h, w, sy, sx);
        }
    }
    out
}

fn bilinear(img: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r as usize >= h || c as usize >= w {
            0.0
        } else {
            img[r as usize * w + c as usize] as f64
        }
    };
    let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0))
        + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0));
    v.clamp(0.0, 1.0) as f32
}

/// Separable Gaussian blur with edge clamping; identity for `sigma <= 0`.
pub fn gaussian_blur(img: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let pass = |src: &[f32], along_rows: bool| -> Vec<f32> {
        let mut dst = vec![0f32; src.len()];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let o = j as isize - radius;
                    let (rr, cc) = if along_rows {
                        (r, (c as isize + o).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((r as isize + o).clamp(0, h as isize - 1) as usize, c)
                    };
                    acc += k * src[rr * w + cc] as f64;
                }
                dst[r * w + c] = acc as f32;
            }
        }
        dst
    };
    pass(&pass(img, true), false)
}

pub fn gamma(img: &[f32], g: f64) -> Vec<f32> {
    if g == 1.0 {
        return img.to_vec();
    }
    img.iter().map(|&v| (v as f64).powf(g).clamp(0.0, 1.0) as f32).collect()
}

/// One random draw of every augmentation family.
pub fn augment<R: Rng>(s: &Sample, p: &AugmentParams, rng: &mut R) -> Sample {
    let mut out = s.clone();
    if rng.random_bool(p.p_affine.clamp(0.0, 1.0)) {
        let t = AffineParams {
            angle_deg: rng.random_range(-p.max_rotation_deg..=p.max_rotation_deg),
            scale: rng.random_range(p.scale_range.0..=p.scale_range.1),
            shift: (
                rng.random_range(-p.max_shift..=p.max_shift) * s.height as f64,
                rng.random_range(-p.max_shift..=p.max_shift) * s.width as f64,
            ),
        };
        out = affine(&out, t);
    }
    if rng.random_bool(p.p_noise.clamp(0.0, 1.0)) {
        let sigma = rng.random_range(0.0..=p.max_noise_sigma);
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("positive sigma");
            out.image.iter_mut().for_each(|v| *v = (*v as f64 + n.sample(rng)).clamp(0.0, 1.0) as f32);
        }
    }
    if rng.random_bool(p.p_blur.clamp(0.0, 1.0)) {
        let sigma = rng.random_range(0.0..=p.max_blur_sigma);
        out.image = gaussian_blur(&out.image, out.height, out.width, sigma);
    }
    if rng.random_bool(p.p_gamma.clamp(0.0, 1.0)) {
        let g = rng.random_range(p.gamma_range.0..=p.gamma_range.1);
        out.image = gamma(&out.image, g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Sample {
        generate(&GenParams { seed: 5, ..GenParams::desk() }).unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            assert_eq!(augment(&s, &AugmentParams::disabled(), &mut rng), s);
        }
    }

    #[test]
    fn unit_gamma_and_identity_affine() {
        let s = sample();
        assert_eq!(gamma(&s.image, 1.0), s.image);
        let id = affine(&s, AffineParams { angle_deg: 0.0, scale: 1.0, shift: (0.0, 0.0) });
        assert_eq!(id, s);
    }

    #[test]
    fn integer_shift_moves_labels() {
        let s = sample();
        let t = affine(&s, AffineParams { angle_deg: 0.0, scale: 1.0, shift: (3.0, 0.0) });
        for r in 3..s.height {
            for c in 0..s.width {
                assert_eq!(t.label(r, c), s.label(r - 3, c));
            }
        }
        assert!((0..3).all(|r| (0..s.width).all(|c| t.label(r, c) == 0)));
    }

    #[test]
    fn blur_preserves_constants() {
        let img = vec![0.25f32; 64];
        let b = gaussian_blur(&img, 8, 8, 1.5);
        assert!(b.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn augmented_images_stay_in_range() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let all = AugmentParams { p_affine: 1.0, p_noise: 1.0, p_blur: 1.0, p_gamma: 1.0, ..Default::default() };
        for _ in 0..5 {
            let a = augment(&s, &all, &mut rng);
            assert!(a.image.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(a.labels.iter().all(|&l| l <= 6));
        }
    }
}
