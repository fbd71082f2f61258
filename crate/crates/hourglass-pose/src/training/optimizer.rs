//! Root-mean-square propagation with a per-parameter second-moment cache.
//!
//! Update rule, elementwise: v <- rho*v + (1-rho)*g^2, then
//! theta <- theta - lr*g/(sqrt(v) + eps). The cache is keyed by parameter
//! name in visitation order and round-trips through checkpoints bit-exactly.

use crate::model::Network;
use crate::nn::ParamVisit;
use crate::{Error, Result};
use ndarray::ArrayD;

/// One elementwise update. Exposed separately so tests can drive it against
/// a scalar-loop oracle without a network in the way.
pub fn rmsprop_update(
    theta: &mut ArrayD<f64>,
    grad: &ArrayD<f64>,
    v: &mut ArrayD<f64>,
    learning_rate: f64,
    rho: f64,
    epsilon: f64,
) {
    for ((t, g), vv) in theta.iter_mut().zip(grad.iter()).zip(v.iter_mut()) {
        *vv = rho * *vv + (1.0 - rho) * g * g;
        *t -= learning_rate * g / (vv.sqrt() + epsilon);
    }
}

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    state: Vec<(String, ArrayD<f64>)>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, rho: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !(epsilon > 0.0) || !(rho > 0.0 && rho < 1.0) {
            return Err(Error::contract(format!(
                "rmsprop wants lr >= 0, 0 < rho < 1, eps > 0; got lr={learning_rate} rho={rho} eps={epsilon}"
            )));
        }
        Ok(RmsProp { learning_rate, rho, epsilon, state: Vec::new() })
    }

    /// Applies one step over every parameter of the network, consuming the
    /// accumulated gradients (they are left in place; call `zero_grads` before
    /// the next accumulation). A non-finite gradient aborts with the name of
    /// the offending parameter.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        let mut idx = 0usize;
        let mut err: Option<Error> = None;
        let state = &mut self.state;
        let (lr, rho, eps) = (self.learning_rate, self.rho, self.epsilon);
        net.for_each_param(&mut |p| {
            if err.is_some() {
                return;
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                err = Some(Error::Diverged(format!("non-finite gradient in {}", p.name)));
                return;
            }
            if state.len() == idx {
                state.push((p.name.clone(), ArrayD::zeros(p.value.shape())));
            }
            let (name, v) = &mut state[idx];
            if name != &p.name || v.shape() != p.value.shape() {
                err = Some(Error::Incompatible(format!(
                    "optimizer state entry {idx} is {name}, parameter is {}",
                    p.name
                )));
                return;
            }
            rmsprop_update(&mut p.value, &p.grad, v, lr, rho, eps);
            idx += 1;
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Cache entries in visitation order, for checkpointing.
    pub fn state(&self) -> &[(String, ArrayD<f64>)] {
        &self.state
    }

    /// Replaces the cache wholesale (resume path). Consistency with the
    /// network is re-checked on the next `step`.
    pub fn load_state(&mut self, state: Vec<(String, ArrayD<f64>)>) {
        self.state = state;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> ArrayD<f64> {
        ArrayD::from_elem(IxDyn(&[1]), v)
    }

    #[test]
    fn scalar_step_matches_hand_computation() {
        let mut theta = scalar(0.0);
        let mut v = scalar(0.0);
        let g = scalar(1.0);
        rmsprop_update(&mut theta, &g, &mut v, 0.00025, 0.99, 1e-8);
        assert!((v[[0]] - 0.01).abs() < 1e-15);
        let expect = -0.00025 / (0.1 + 1e-8);
        assert!((theta[[0]] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_state() {
        let mut theta = scalar(3.5);
        let mut v = scalar(0.04);
        let g = scalar(0.0);
        rmsprop_update(&mut theta, &g, &mut v, 0.1, 0.99, 1e-8);
        assert_eq!(theta[[0]], 3.5);
        assert!((v[[0]] - 0.0396).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_a_elementwise_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let mut theta = ArrayD::zeros(IxDyn(&[3]));
        let mut v = ArrayD::zeros(IxDyn(&[3]));
        let mut theta_ref = [0.0f64; 3];
        let mut v_ref = [0.0f64; 3];
        for e in theta.iter_mut() {
            *e = rng.gen_range(-1.0..1.0);
        }
        for i in 0..3 {
            theta_ref[i] = theta[[i]];
        }
        let (lr, rho, eps) = (0.01, 0.9, 1e-8);
        for _ in 0..2 {
            let mut g = ArrayD::zeros(IxDyn(&[3]));
            for e in g.iter_mut() {
                *e = rng.gen_range(-1.0..1.0);
            }
            rmsprop_update(&mut theta, &g, &mut v, lr, rho, eps);
            for i in 0..3 {
                let gi = g[[i]];
                v_ref[i] = rho * v_ref[i] + (1.0 - rho) * gi * gi;
                theta_ref[i] -= lr * gi / (v_ref[i].sqrt() + eps);
            }
        }
        for i in 0..3 {
            assert!((theta[[i]] - theta_ref[i]).abs() < 1e-12);
            assert!((v[[i]] - v_ref[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ten_random_steps_match_the_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let n = 5;
        let mut theta = ArrayD::zeros(IxDyn(&[n]));
        let mut v = ArrayD::zeros(IxDyn(&[n]));
        let mut theta_ref = vec![0.0f64; n];
        let mut v_ref = vec![0.0f64; n];
        let (lr, rho, eps) = (0.003, 0.99, 1e-8);
        for _ in 0..10 {
            let mut g = ArrayD::zeros(IxDyn(&[n]));
            for e in g.iter_mut() {
                *e = rng.gen_range(-2.0..2.0);
            }
            rmsprop_update(&mut theta, &g, &mut v, lr, rho, eps);
            for i in 0..n {
                let gi = g[[i]];
                v_ref[i] = rho * v_ref[i] + (1.0 - rho) * gi * gi;
                theta_ref[i] -= lr * gi / (v_ref[i].sqrt() + eps);
            }
        }
        for i in 0..n {
            assert!((theta[[i]] - theta_ref[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        use crate::model::{ModelConfig, UpsampleMode};
        let cfg = ModelConfig {
            num_stacks: 1,
            hourglass_order: 1,
            channels: 8,
            num_joints: 2,
            input_side: 32,
            heatmap_side: 8,
            upsample: UpsampleMode::Nearest,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        net.for_each_param(&mut |p| {
            if p.name == "stem.res1.conv2.weight" {
                p.grad.fill(f64::NAN);
            }
        });
        let mut opt = RmsProp::new(0.001, 0.99, 1e-8).unwrap();
        match opt.step(&mut net) {
            Err(Error::Diverged(msg)) => assert!(msg.contains("stem.res1.conv2.weight")),
            other => panic!("expected diverged error, got {other:?}"),
        }
    }

    #[test]
    fn hyperparameters_are_validated() {
        assert!(RmsProp::new(-0.1, 0.99, 1e-8).is_err());
        assert!(RmsProp::new(0.1, 1.0, 1e-8).is_err());
        assert!(RmsProp::new(0.1, 0.99, 0.0).is_err());
    }
}
