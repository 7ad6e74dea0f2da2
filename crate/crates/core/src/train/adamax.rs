use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::tensor::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with the infinity norm. Moments are kept per trainable parameter,
/// indexed like the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaMax<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub u: Vec<Vec<T>>,
}

impl<T: Scalar> AdaMax<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = |p: &crate::graph::Param<T>| if p.trainable { vec![T::zero(); p.tensor.len()] } else { Vec::new() };
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            t: 0,
            m: params.iter().map(|(_, p)| zeros(p)).collect(),
            u: params.iter().map(|(_, p)| zeros(p)).collect(),
        }
    }

    /// One update with learning rate `lr` from the gradients stored on the
    /// parameters. Parameters without a gradient count as zero-gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::State("optimizer was built for a different parameter set".into()));
        }
        for p in params.iter_mut() {
            if let Some(g) = p.tensor.grad() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric {
                        node: p.name.clone(),
                        message: format!("non-finite gradient at {i}"),
                    });
                }
            }
        }
        self.t += 1;
        let step = lr / (1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32));
        for (k, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, u) = (&mut self.m[k], &mut self.u[k]);
            let grad: Option<Vec<T>> = p.tensor.grad().map(|g| g.to_vec());
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i].to_f64_lossy());
                let mi = self.beta1 * m[i].to_f64_lossy() + (1.0 - self.beta1) * g;
                let ui = (self.beta2 * u[i].to_f64_lossy()).max(g.abs());
                m[i] = T::from_f64_lossy(mi);
                u[i] = T::from_f64_lossy(ui);
                data[i] = T::from_f64_lossy(data[i].to_f64_lossy() - step * mi / (ui + self.eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::default();
        let mut t = Tensor::from_f64(&[values.len()], values).unwrap();
        t.set_requires_grad(true);
        t.accumulate_grad(grads);
        s.add("w", t, true).unwrap();
        s.add("stat", Tensor::full(&[2], 3.0), false).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[1.0, -2.0], &[0.0, 0.0]);
        let mut opt = AdaMax::new(&s);
        opt.step(&mut s, 1e-3).unwrap();
        assert_eq!(s.get(s.id("w").unwrap()).tensor.data(), &[1.0, -2.0]);
        assert_eq!(s.get(s.id("stat").unwrap()).tensor.data(), &[3.0, 3.0]);
    }

    #[test]
    fn first_and_second_steps_move_by_lr() {
        let lr = 1e-3;
        let mut s = store(&[0.5, 0.5, 0.5], &[2.0, -0.25, 7.0]);
        let mut opt = AdaMax::new(&s);
        opt.step(&mut s, lr).unwrap();
        let w1 = s.get(s.id("w").unwrap()).tensor.data().to_vec();
        for (w, sign) in w1.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((w - (0.5 + sign * lr)).abs() < 1e-10, "{w}");
        }
        opt.step(&mut s, lr).unwrap();
        let w2 = s.get(s.id("w").unwrap()).tensor.data().to_vec();
        for (a, b) in w1.iter().zip(&w2) {
            assert!(((a - b).abs() - lr).abs() < 1e-10);
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = store(&[0.0], &[f64::NAN]);
        let mut opt = AdaMax::new(&s);
        match opt.step(&mut s, 1e-3) {
            Err(Error::Numeric { node, .. }) => assert_eq!(node, "w"),
            other => panic!("{other:?}"),
        }
    }
}
