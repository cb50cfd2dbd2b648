//! Stochastic gradient descent with momentum, weight decay, and a linear
//! learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::network::{Gradients, Network};
use crate::nn::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// The training protocol knobs. Defaults follow the reference protocol:
/// batches of 64, momentum 0.9, weight decay 5e-4, learning rate annealed
/// linearly from 1e-3 to 5e-4, early stopping on validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_initial: 1e-3,
            lr_final: 5e-4,
            patience: 5,
            max_epochs: 30,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum {} outside [0,1)",
                self.momentum
            )));
        }
        if self.lr_final > self.lr_initial {
            return Err(Error::InvalidArgument(format!(
                "lr_final {} exceeds lr_initial {}",
                self.lr_final, self.lr_initial
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate for `epoch` (0-based): linear interpolation reaching
    /// `lr_final` at the last epoch. A single-epoch schedule stays at
    /// `lr_initial`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.max_epochs <= 1 {
            return self.lr_initial;
        }
        let t = (epoch as f64 / (self.max_epochs - 1) as f64).clamp(0.0, 1.0);
        self.lr_initial + (self.lr_final - self.lr_initial) * t
    }
}

/// One momentum-SGD update:
/// v <- momentum * v - lr * (g + decay * w); w <- w + v.
///
/// Aborts with a diagnostic when any gradient value is non-finite.
pub fn sgd_step<F: Scalar>(
    net: &mut Network<F>,
    grads: &Gradients<F>,
    velocity: &mut Gradients<F>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    let lr = F::from_f64(cfg.learning_rate(epoch));
    let momentum = F::from_f64(cfg.momentum);
    let decay = F::from_f64(cfg.weight_decay);
    for (li, layer) in net.layers_mut().iter_mut().enumerate() {
        for (pi, p) in layer.params.iter_mut().enumerate() {
            let g = &grads[li][pi];
            let v = &mut velocity[li][pi];
            if !g.all_finite() {
                return Err(Error::Numerics(format!(
                    "non-finite gradient in layer {li} param {pi}"
                )));
            }
            for ((w, &gv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(v.data_mut().iter_mut())
            {
                *vv = momentum * *vv - lr * (gv + decay * *w);
                *w += *vv;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::LayerSpec;
    use crate::nn::network::NetworkSpec;

    fn one_weight_net(w0: f32) -> Network<f32> {
        let spec = NetworkSpec::new(
            vec![1],
            vec![LayerSpec::FullyConnected { units: 1 }],
        );
        let mut net: Network<f32> = Network::init(&spec, 0).unwrap();
        net.layers_mut()[0].params[0].data_mut()[0] = w0;
        net.layers_mut()[0].params[1].data_mut()[0] = 0.0;
        net
    }

    fn grad_of(net: &Network<f32>, g: f32) -> Gradients<f32> {
        let mut grads = net.zero_like_params();
        grads[0][0].data_mut()[0] = g;
        grads
    }

    #[test]
    fn plain_gradient_descent_when_momentum_zero() {
        let mut net = one_weight_net(1.0);
        let mut vel = net.zero_like_params();
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            lr_initial: 0.1,
            lr_final: 0.1,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let grads = grad_of(&net, 2.0);
        sgd_step(&mut net, &grads, &mut vel, &cfg, 0).unwrap();
        let w = net.layers()[0].params[0].data()[0];
        assert!((w - (1.0 - 0.1 * 2.0)).abs() < 1e-7);
    }

    #[test]
    fn momentum_accumulates_closed_form() {
        // two steps with constant gradient: v2 = -lr*g*(1 + momentum)
        let mut net = one_weight_net(0.0);
        let mut vel = net.zero_like_params();
        let cfg = TrainConfig {
            momentum: 0.9,
            weight_decay: 0.0,
            lr_initial: 0.01,
            lr_final: 0.01,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let grads = grad_of(&net, 3.0);
        sgd_step(&mut net, &grads, &mut vel, &cfg, 0).unwrap();
        sgd_step(&mut net, &grads, &mut vel, &cfg, 0).unwrap();
        let v = vel[0][0].data()[0];
        let expected = -0.01f32 * 3.0 * 1.9;
        assert!((v - expected).abs() < 1e-7, "{v} vs {expected}");
    }

    #[test]
    fn weight_decay_term_is_decay_times_weight() {
        // zero gradient isolates the decay contribution
        let mut net = one_weight_net(2.0);
        let mut vel = net.zero_like_params();
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.5,
            lr_initial: 0.1,
            lr_final: 0.1,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let grads = grad_of(&net, 0.0);
        sgd_step(&mut net, &grads, &mut vel, &cfg, 0).unwrap();
        let w = net.layers()[0].params[0].data()[0];
        assert!((w - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-7);
    }

    #[test]
    fn quadratic_bowl_decreases_monotonically() {
        // loss = 0.5 * w^2, gradient = w; lr below the overdamping bound
        // (1 - sqrt(momentum))^2 so the heavy-ball iterates do not oscillate
        let mut net = one_weight_net(5.0);
        let mut vel = net.zero_like_params();
        let cfg = TrainConfig {
            momentum: 0.9,
            weight_decay: 0.0,
            lr_initial: 0.002,
            lr_final: 0.002,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let mut prev_loss = f32::MAX;
        for _ in 0..300 {
            let w = net.layers()[0].params[0].data()[0];
            let loss = 0.5 * w * w;
            assert!(loss <= prev_loss + 1e-12, "loss increased: {prev_loss} -> {loss}");
            prev_loss = loss;
            let grads = grad_of(&net, w);
            sgd_step(&mut net, &grads, &mut vel, &cfg, 0).unwrap();
        }
        assert!(prev_loss < 1e-3, "final loss {prev_loss}");
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut net = one_weight_net(1.0);
        let mut vel = net.zero_like_params();
        let cfg = TrainConfig::default();
        let grads = grad_of(&net, f32::NAN);
        assert!(matches!(
            sgd_step(&mut net, &grads, &mut vel, &cfg, 0),
            Err(Error::Numerics(_))
        ));
    }

    #[test]
    fn learning_rate_interpolates_linearly() {
        let cfg = TrainConfig {
            lr_initial: 1e-3,
            lr_final: 5e-4,
            max_epochs: 11,
            ..TrainConfig::default()
        };
        assert!((cfg.learning_rate(0) - 1e-3).abs() < 1e-12);
        assert!((cfg.learning_rate(10) - 5e-4).abs() < 1e-12);
        assert!((cfg.learning_rate(5) - 7.5e-4).abs() < 1e-12);
        // clamped past the schedule end
        assert!((cfg.learning_rate(99) - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.lr_final = 1.0;
        assert!(cfg.validate().is_err());
    }
}
