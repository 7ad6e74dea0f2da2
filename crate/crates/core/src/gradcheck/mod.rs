//! Finite-difference verification of analytic gradients (64-bit only).

pub mod suite;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Mode, ParamId};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub mode: Mode,
    /// Check at most this many entries of each tensor (all when `None`).
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-4, mode: Mode::Train, max_entries_per_tensor: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `tensor[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
    /// Entries where the step had to shrink because a relu or pool
    /// decision flipped inside the difference stencil.
    pub refined: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares backward against five-point central differences of a scalar
/// probe loss.
///
/// Scalar-output graphs are differentiated directly; otherwise the probe is
/// `sum(r * output)` with `r` drawn uniformly from `[-1, 1]` using `seed`.
/// Every trainable parameter and every input marked `requires_grad` is
/// checked. When a perturbation changes the relu/pool branch pattern the
/// step is shrunk (up to three times) so the stencil stays on one linear
/// piece.
pub fn gradient_check(
    graph: &mut Graph<f64>,
    inputs: &[&Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let buffers: Vec<(ParamId, Vec<f64>)> =
        graph.params.iter().filter(|(_, p)| !p.trainable).map(|(id, p)| (id, p.tensor.data().to_vec())).collect();
    let restore_buffers = |g: &mut Graph<f64>| {
        for (id, data) in &buffers {
            g.params.get_mut(*id).tensor.data_mut().copy_from_slice(data);
        }
    };

    graph.track_kinks(true);
    graph.zero_grads();
    let y = graph.forward_retained(inputs, opts.mode)?;
    restore_buffers(graph);
    let base_sig = graph.kink_signature();
    let probe: Tensor<f64> = if y.len() == 1 {
        Tensor::full(y.shape(), 1.0)
    } else {
        Tensor::from_fn(y.shape(), |_| rng.random_range(-1.0..1.0))
    };
    graph.backward(&probe)?;

    let loss = |g: &mut Graph<f64>, ins: &[&Tensor<f64>]| -> Result<(f64, u64)> {
        let out = g.forward(ins, opts.mode)?;
        let l = out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        Ok((l, g.kink_signature()))
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, refined: 0 };
    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match opts.max_entries_per_tensor {
            Some(k) if k < len => {
                let mut v = sample(rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        }
    };

    let targets: Vec<(ParamId, String, Vec<f64>)> = graph
        .params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| {
            (id, p.name.clone(), p.tensor.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.tensor.len()]))
        })
        .collect();

    for (id, name, analytic) in targets {
        for idx in pick(analytic.len(), &mut rng) {
            let orig = graph.params.get(id).tensor.data()[idx];
            let mut h = opts.step;
            let mut numeric = 0.0;
            for attempt in 0..4 {
                let eval = |delta: f64, g: &mut Graph<f64>| -> Result<(f64, bool)> {
                    g.params.get_mut(id).tensor.data_mut()[idx] = orig + delta;
                    let (l, sig) = loss(g, inputs)?;
                    restore_buffers(g);
                    Ok((l, sig == base_sig))
                };
                let (d, smooth) = stencil(h, |delta| eval(delta, graph))?;
                graph.params.get_mut(id).tensor.data_mut()[idx] = orig;
                numeric = d;
                if smooth {
                    break;
                }
                if attempt == 0 {
                    report.refined += 1;
                }
                h /= 10.0;
            }
            let err = relative_error(analytic[idx], numeric);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{idx}]");
            }
        }
    }

    for slot in 0..graph.input_count() {
        let Some(analytic) = graph.input_grad(slot).map(|g| g.data().to_vec()) else { continue };
        let mut x = inputs[slot].clone();
        for idx in pick(analytic.len(), &mut rng) {
            let orig = x.data()[idx];
            let mut h = opts.step;
            let mut numeric = 0.0;
            for attempt in 0..4 {
                let (d, smooth) = stencil(h, |delta| {
                    x.data_mut()[idx] = orig + delta;
                    let (l, sig) = with_input(graph, inputs, slot, &x, &loss)?;
                    restore_buffers(graph);
                    Ok((l, sig == base_sig))
                })?;
                x.data_mut()[idx] = orig;
                numeric = d;
                if smooth {
                    break;
                }
                if attempt == 0 {
                    report.refined += 1;
                }
                h /= 10.0;
            }
            let err = relative_error(analytic[idx], numeric);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("input{slot}[{idx}]");
            }
        }
    }
    graph.track_kinks(false);
    Ok(report)
}

/// `(-f(2h) + 8f(h) - 8f(-h) + f(-2h)) / 12h`, plus whether every
/// evaluation stayed on the base branch pattern.
fn stencil(h: f64, mut f: impl FnMut(f64) -> Result<(f64, bool)>) -> Result<(f64, bool)> {
    let (p2, s1) = f(2.0 * h)?;
    let (p1, s2) = f(h)?;
    let (m1, s3) = f(-h)?;
    let (m2, s4) = f(-2.0 * h)?;
    Ok(((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h), s1 && s2 && s3 && s4))
}

fn with_input<F>(
    graph: &mut Graph<f64>,
    inputs: &[&Tensor<f64>],
    slot: usize,
    x: &Tensor<f64>,
    loss: &F,
) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<f64>, &[&Tensor<f64>]) -> Result<(f64, u64)>,
{
    let mut ins: Vec<&Tensor<f64>> = inputs.to_vec();
    ins[slot] = x;
    loss(graph, &ins)
}
