//! Boundary extraction, Chamfer distance, per-layer Dice, paired t-tests
//! and the per-patient evaluation report.

mod report;
mod stats;

pub use report::{compare, evaluate, parse_scores_csv, Comparison, EvalReport, LayerStats, PatientScores, Stat};
pub use stats::{paired_t_test, student_t_two_sided, TTest};

use crate::data::NUM_LAYERS;

pub type Point = (usize, usize);

/// Contour pixels of one class: members with a 4-neighbour of another class
/// or on the image border.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Boundary {
    pub class: u8,
    /// `(row, col)` in row-major order.
    pub points: Vec<Point>,
}

impl Boundary {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Region contours of classes `1..=6`.
pub fn extract_boundaries(labels: &[u8], height: usize, width: usize) -> Vec<Boundary> {
    assert_eq!(labels.len(), height * width, "label map size");
    let mut out: Vec<Boundary> = (1..=NUM_LAYERS as u8).map(|class| Boundary { class, points: Vec::new() }).collect();
    for r in 0..height {
        for c in 0..width {
            let l = labels[r * width + c];
            if l == 0 || l as usize > NUM_LAYERS {
                continue;
            }
            let differs = |rr: Option<usize>, cc: Option<usize>| match (rr, cc) {
                (Some(rr), Some(cc)) if rr < height && cc < width => labels[rr * width + cc] != l,
                _ => true,
            };
            if differs(r.checked_sub(1), Some(c))
                || differs(Some(r + 1), Some(c))
                || differs(Some(r), c.checked_sub(1))
                || differs(Some(r), Some(c + 1))
            {
                out[l as usize - 1].points.push((r, c));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChamferMode {
    /// All-pairs minimum; quadratic.
    BruteForce,
    /// Lookup in an exact Euclidean distance transform.
    Transform,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chamfer {
    /// Mean of the two directed distances.
    pub symmetric: f64,
    /// Mean over `a` of the distance to the nearest point of `b`.
    pub a_to_b: f64,
    pub b_to_a: f64,
}

fn dist(p: Point, q: Point) -> f64 {
    let dy = p.0 as f64 - q.0 as f64;
    let dx = p.1 as f64 - q.1 as f64;
    (dy * dy + dx * dx).sqrt()
}

fn directed_brute(a: &[Point], b: &[Point]) -> f64 {
    a.iter().map(|&p| b.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / a.len() as f64
}

/// Squared Euclidean distance to the nearest feature cell, exact, by two
/// passes of the lower envelope of parabolas.
pub fn squared_distance_transform(feature: &[bool], height: usize, width: usize) -> Vec<f64> {
    const FAR: f64 = 1e20;
    let mut grid: Vec<f64> = feature.iter().map(|&f| if f { 0.0 } else { FAR }).collect();
    let n = height.max(width);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for col in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + col];
        }
        envelope(&f[..height], &mut d[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + col] = d[r];
        }
    }
    for r in 0..height {
        f[..width].copy_from_slice(&grid[r * width..(r + 1) * width]);
        envelope(&f[..width], &mut d[..width], &mut v, &mut z);
        grid[r * width..(r + 1) * width].copy_from_slice(&d[..width]);
    }
    grid
}

fn envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * (qf - p));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

fn directed_transform(a: &[Point], b: &[Point]) -> f64 {
    let height = a.iter().chain(b).map(|p| p.0).max().unwrap_or(0) + 1;
    let width = a.iter().chain(b).map(|p| p.1).max().unwrap_or(0) + 1;
    let mut feature = vec![false; height * width];
    for &(r, c) in b {
        feature[r * width + c] = true;
    }
    let sq = squared_distance_transform(&feature, height, width);
    a.iter().map(|&(r, c)| sq[r * width + c].sqrt()).sum::<f64>() / a.len() as f64
}

/// Symmetric Chamfer distance; `None` when either set is empty.
pub fn chamfer(a: &[Point], b: &[Point], mode: ChamferMode) -> Option<Chamfer> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let directed = match mode {
        ChamferMode::BruteForce => directed_brute,
        ChamferMode::Transform => directed_transform,
    };
    let (ab, ba) = (directed(a, b), directed(b, a));
    Some(Chamfer { symmetric: 0.5 * (ab + ba), a_to_b: ab, b_to_a: ba })
}

/// `2|P n G| / (|P| + |G|)` over the pixels of class `c`; 1 when the class
/// is absent from both maps.
pub fn dice(pred: &[u8], gt: &[u8], c: u8) -> f64 {
    assert_eq!(pred.len(), gt.len(), "label maps differ in size");
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(gt) {
        p += (a == c) as usize;
        g += (b == c) as usize;
        both += (a == c && b == c) as usize;
    }
    if p + g == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + g) as f64
    }
}
