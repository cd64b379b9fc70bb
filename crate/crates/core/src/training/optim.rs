use crate::error::{Error, Result};
use crate::transformer::Weights;

/// Rescales `grads` so their global L2 norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Weights, clip_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip_norm && norm > 0.0 {
        grads.scale(clip_norm / norm);
    }
    norm
}

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Weights,
    v: Weights,
}

impl AdamW {
    pub fn new(params: &Weights, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut Weights, grads: &Weights) -> Result<()> {
        let shapes = |w: &Weights| w.tensors().iter().map(|t| t.shape.clone()).collect::<Vec<_>>();
        if shapes(params) != shapes(grads) || shapes(params) != shapes(&self.m) {
            return Err(Error::ShapeMismatch(
                "optimizer state, parameters and gradients differ in layout".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, wd, b1, b2, eps) = (
            self.learning_rate,
            self.weight_decay,
            self.beta1,
            self.beta2,
            self.eps,
        );
        let groups = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in groups {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                p.data[i] -= lr * wd * p.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::ModelConfig;

    fn weights() -> Weights {
        Weights::init(&ModelConfig::small(8, 1, 4, 2), 1)
    }

    #[test]
    fn clipping() {
        let w = weights();
        let norm = w.global_norm();

        let mut small = w.clone();
        small.scale(0.5 / norm);
        let before = small.clone();
        assert!((clip_gradients(&mut small, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(small, before);

        let mut big = w.clone();
        big.scale(4.0 / norm);
        let reference = big.clone();
        clip_gradients(&mut big, 1.0);
        assert!((big.global_norm() - 1.0).abs() < 1e-12);
        let (a, b) = (&big.embed.data, &reference.embed.data);
        assert!(a.iter().zip(b).all(|(x, y)| (x - 0.25 * y).abs() < 1e-15));

        let mut zero = w.zeros_like();
        assert_eq!(clip_gradients(&mut zero, 1.0), 0.0);
        assert_eq!(zero, w.zeros_like());
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = weights();
        let before = p.clone();
        let mut opt = AdamW::new(&p, 1e-3, 0.0);
        opt.step(&mut p, &before.zeros_like()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_each_element_by_the_learning_rate() {
        let mut p = weights();
        let before = p.clone();
        let mut g = p.clone();
        for t in g.tensors_mut() {
            for (i, v) in t.data.iter_mut().enumerate() {
                *v = if i % 2 == 0 { 0.3 } else { -2.0 };
            }
        }
        let mut opt = AdamW::new(&p, 1e-3, 0.0);
        opt.step(&mut p, &g).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for ((a, b), gg) in p.tensors().iter().zip(before.tensors()).zip(g.tensors()) {
            for i in 0..a.data.len() {
                let expected = -1e-3 * gg.data[i] / (gg.data[i].abs() + 1e-8);
                assert!((a.data[i] - b.data[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decay_shrinks_parameters() {
        let mut p = weights();
        let before = p.clone();
        let mut opt = AdamW::new(&p, 1e-2, 0.5);
        opt.step(&mut p, &before.zeros_like()).unwrap();
        for (a, b) in p.embed.data.iter().zip(&before.embed.data) {
            assert!((a - (b - 1e-2 * 0.5 * b)).abs() < 1e-15);
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut p = weights();
        let other = Weights::init(&ModelConfig::small(8, 2, 4, 2), 1);
        let mut opt = AdamW::new(&p, 1e-3, 0.0);
        assert!(matches!(opt.step(&mut p, &other), Err(Error::ShapeMismatch(_))));
    }
}
