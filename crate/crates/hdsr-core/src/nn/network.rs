//! Network assembly: an ordered layer stack with derived shapes, seeded
//! initialization, cached forward passes, and full backpropagation.

use crate::error::{Error, Result};
use crate::nn::layer::{self, LayerCache, LayerSpec, Mode};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Architecture description: input shape plus ordered layer descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec { input, layers }
    }

    /// Shapes flowing between layers: `shapes[0]` is the input shape,
    /// `shapes[i+1]` the output of layer `i`. Errors when layers do not
    /// compose.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        shapes.push(self.input.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let out = l.output_shape(shapes.last().unwrap()).map_err(|e| {
                Error::ShapeMismatch(format!("layer {i}: {e}"))
            })?;
            shapes.push(out);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.layer_shapes()?.pop().unwrap())
    }
}

/// One instantiated layer: descriptor, trainable parameters, auxiliary state.
#[derive(Debug, Clone)]
pub struct Layer<F = f32> {
    pub spec: LayerSpec,
    pub params: Vec<Tensor<F>>,
    pub aux: Vec<Tensor<F>>,
}

/// A network with materialized weights.
#[derive(Debug, Clone)]
pub struct Network<F = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<F>>,
}

/// Per-layer parameter gradients, mirroring `Network::layers[i].params`.
pub type Gradients<F> = Vec<Vec<Tensor<F>>>;

/// Cached activations from a training-mode forward pass.
pub struct Tape<F> {
    caches: Vec<LayerCache<F>>,
    shapes: Vec<Vec<usize>>,
}

/// Per-layer sample statistics captured by batchnorm layers during a
/// training-mode forward pass: `(mean, var)` per channel, `None` for layers
/// without statistics. Small enough to outlive the tape.
pub type BnSampleStats<F> = Vec<Option<(Vec<F>, Vec<F>)>>;

impl<F: Scalar> Tape<F> {
    pub fn batchnorm_stats(&self) -> BnSampleStats<F> {
        self.caches
            .iter()
            .map(|c| match c {
                LayerCache::BatchNorm { mean, var, .. } => Some((mean.clone(), var.clone())),
                _ => None,
            })
            .collect()
    }
}

impl<F: Scalar> Network<F> {
    /// Seed-deterministic initialization: uniform He-style scaling by fan-in
    /// for weight matrices, zeros for biases, identity stats for batchnorm.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let param_shapes = l.param_shapes(&shapes[i])?;
            let mut params = Vec::with_capacity(param_shapes.len());
            for (j, ps) in param_shapes.iter().enumerate() {
                let t = match l {
                    LayerSpec::BatchNorm => {
                        // gamma starts at one, beta at zero
                        if j == 0 {
                            Tensor::scalar_filled(ps, F::ONE)
                        } else {
                            Tensor::zeros(ps)
                        }
                    }
                    _ => {
                        if ps.len() >= 2 {
                            let fan_in: usize = ps[1..].iter().product();
                            let bound = (6.0 / fan_in as f64).sqrt();
                            let mut rng =
                                rng::stream(seed, "init", ((i as u64) << 8) | j as u64);
                            let data = (0..ps.iter().product::<usize>())
                                .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
                                .collect();
                            Tensor::from_vec(ps, data)?
                        } else {
                            Tensor::zeros(ps)
                        }
                    }
                };
                params.push(t);
            }
            let aux = l
                .aux_shapes(&shapes[i])?
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    if j == 1 {
                        Tensor::scalar_filled(s, F::ONE) // running variance
                    } else {
                        Tensor::zeros(s) // running mean
                    }
                })
                .collect();
            layers.push(Layer {
                spec: l.clone(),
                params,
                aux,
            });
        }
        Ok(Network {
            input_shape: spec.input.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            input: self.input_shape.clone(),
            layers: self.layers.iter().map(|l| l.spec.clone()).collect(),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.params.iter().map(Tensor::numel).sum::<usize>())
            .sum()
    }

    fn check_input(&self, input: &Tensor<F>) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} does not match declared {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in &self.layers {
            let (y, _) = layer::forward(&l.spec, &l.params, &l.aux, &x, Mode::Infer, false)?;
            x = y;
        }
        Ok(x)
    }

    /// Training-mode forward pass with cached activations for [`Self::backward`].
    pub fn forward_training(&self, input: &Tensor<F>) -> Result<(Tensor<F>, Tape<F>)> {
        self.check_input(input)?;
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        shapes.push(input.shape().to_vec());
        let mut x = input.clone();
        for l in &self.layers {
            let (y, cache) = layer::forward(&l.spec, &l.params, &l.aux, &x, Mode::Train, true)?;
            caches.push(cache.expect("cache requested"));
            shapes.push(y.shape().to_vec());
            x = y;
        }
        Ok((x, Tape { caches, shapes }))
    }

    /// Backpropagate `dout` (gradient at the network output) through the tape.
    /// Returns per-layer parameter gradients and the gradient at the input.
    pub fn backward(&self, tape: &Tape<F>, dout: &Tensor<F>) -> Result<(Gradients<F>, Tensor<F>)> {
        if dout.shape() != tape.shapes.last().unwrap().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} does not match output {:?}",
                dout.shape(),
                tape.shapes.last().unwrap()
            )));
        }
        let mut grads: Gradients<F> = vec![Vec::new(); self.layers.len()];
        let mut d = dout.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (dinput, pgrads) =
                layer::backward(&l.spec, &l.params, &tape.shapes[i], &tape.caches[i], &d)?;
            grads[i] = pgrads;
            d = dinput;
        }
        Ok((grads, d))
    }

    /// Zero-filled gradient (or velocity) buffers mirroring the parameters.
    pub fn zero_like_params(&self) -> Gradients<F> {
        self.layers
            .iter()
            .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect()
    }

    /// Fold a batch of per-sample batchnorm statistics into the running
    /// averages: running <- momentum * running + (1 - momentum) * batch_mean.
    pub fn update_running_stats(&mut self, batch: &[BnSampleStats<F>], momentum: f64) {
        if batch.is_empty() {
            return;
        }
        let m = F::from_f64(momentum);
        let one_minus = F::from_f64(1.0 - momentum);
        let inv_count = F::from_f64(1.0 / batch.len() as f64);
        for (i, l) in self.layers.iter_mut().enumerate() {
            if !matches!(l.spec, LayerSpec::BatchNorm) {
                continue;
            }
            let c = l.aux[0].numel();
            let mut mean_acc = vec![F::ZERO; c];
            let mut var_acc = vec![F::ZERO; c];
            for sample in batch {
                if let Some((mean, var)) = &sample[i] {
                    for ch in 0..c {
                        mean_acc[ch] += mean[ch];
                        var_acc[ch] += var[ch];
                    }
                }
            }
            for ch in 0..c {
                let bm = mean_acc[ch] * inv_count;
                let bv = var_acc[ch] * inv_count;
                let rm = &mut l.aux[0].data_mut()[ch];
                *rm = m * *rm + one_minus * bm;
                let rv = &mut l.aux[1].data_mut()[ch];
                *rv = m * *rv + one_minus * bv;
            }
        }
    }

    /// Flatten every parameter tensor into one vector (checkpoint payloads).
    pub fn flat_params(&self) -> Vec<F> {
        let mut out = Vec::new();
        for l in &self.layers {
            for p in &l.params {
                out.extend_from_slice(p.data());
            }
            for a in &l.aux {
                out.extend_from_slice(a.data());
            }
        }
        out
    }

    /// Load parameters from a flat vector produced by [`Self::flat_params`].
    pub fn load_flat_params(&mut self, flat: &[F]) -> Result<()> {
        let mut pos = 0usize;
        for l in &mut self.layers {
            for p in &mut l.params {
                let n = p.numel();
                if pos + n > flat.len() {
                    return Err(Error::Data("flat parameter buffer too short".into()));
                }
                p.data_mut().copy_from_slice(&flat[pos..pos + n]);
                pos += n;
            }
            for a in &mut l.aux {
                let n = a.numel();
                if pos + n > flat.len() {
                    return Err(Error::Data("flat parameter buffer too short".into()));
                }
                a.data_mut().copy_from_slice(&flat[pos..pos + n]);
                pos += n;
            }
        }
        if pos != flat.len() {
            return Err(Error::Data(format!(
                "flat parameter buffer has {} extra values",
                flat.len() - pos
            )));
        }
        Ok(())
    }

    /// Convert precision, preserving values (tests build f64 oracles this way).
    pub fn cast<G: Scalar>(&self) -> Network<G> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    params: l.params.iter().map(Tensor::cast).collect(),
                    aux: l.aux.iter().map(Tensor::cast).collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::ActKind;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec::new(
            vec![1, 8, 8],
            vec![
                LayerSpec::Conv {
                    filters: 3,
                    kernel: (3, 3),
                    stride: (1, 1),
                    pad: (1, 1),
                },
                LayerSpec::Activation {
                    kind: ActKind::LeakyRelu,
                },
                LayerSpec::MaxPool {
                    window: (2, 2),
                    stride: (2, 2),
                },
                LayerSpec::FullyConnected { units: 5 },
                LayerSpec::Softmax,
            ],
        )
    }

    #[test]
    fn shape_algebra_matches_execution() {
        let spec = toy_spec();
        let shapes = spec.layer_shapes().unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![5]);
        let net: Network<f32> = Network::init(&spec, 3).unwrap();
        let input = Tensor::scalar_filled(&[1, 8, 8], 0.5f32);
        let out = net.forward(&input).unwrap();
        assert_eq!(out.shape(), &[5]);
        let sum: f32 = out.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = toy_spec();
        let a: Network<f32> = Network::init(&spec, 9).unwrap();
        let b: Network<f32> = Network::init(&spec, 9).unwrap();
        let c: Network<f32> = Network::init(&spec, 10).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn rejects_mismatched_input() {
        let net: Network<f32> = Network::init(&toy_spec(), 1).unwrap();
        let bad = Tensor::zeros(&[1, 4, 4]);
        assert!(net.forward(&bad).is_err());
    }

    #[test]
    fn identity_conv_passes_input_through() {
        // 1x1 conv, single filter, weight 1, bias 0
        let spec = NetworkSpec::new(
            vec![1, 4, 4],
            vec![LayerSpec::Conv {
                filters: 1,
                kernel: (1, 1),
                stride: (1, 1),
                pad: (0, 0),
            }],
        );
        let mut net: Network<f32> = Network::init(&spec, 0).unwrap();
        net.layers_mut()[0].params[0].data_mut()[0] = 1.0;
        net.layers_mut()[0].params[1].data_mut()[0] = 0.0;
        let input = Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let out = net.forward(&input).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn maxpool_constant_halves_resolution() {
        let spec = NetworkSpec::new(
            vec![1, 6, 6],
            vec![LayerSpec::MaxPool {
                window: (2, 2),
                stride: (2, 2),
            }],
        );
        let net: Network<f32> = Network::init(&spec, 0).unwrap();
        let input = Tensor::scalar_filled(&[1, 6, 6], 3.25f32);
        let out = net.forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn nonsquare_pool_halves_width_only() {
        let spec = NetworkSpec::new(
            vec![2, 4, 8],
            vec![LayerSpec::MaxPool {
                window: (1, 2),
                stride: (1, 2),
            }],
        );
        let net: Network<f32> = Network::init(&spec, 0).unwrap();
        let input = Tensor::scalar_filled(&[2, 4, 8], 1.0f32);
        let out = net.forward(&input).unwrap();
        assert_eq!(out.shape(), &[2, 4, 4]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradients() {
        let spec = toy_spec();
        let net: Network<f32> = Network::init(&spec, 5).unwrap();
        let input = Tensor::scalar_filled(&[1, 8, 8], 0.3f32);
        let (out, tape) = net.forward_training(&input).unwrap();
        let dout = Tensor::zeros(out.shape());
        let (grads, _) = net.backward(&tape, &dout).unwrap();
        for layer in &grads {
            for g in layer {
                assert!(g.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let spec = toy_spec();
        let a: Network<f32> = Network::init(&spec, 11).unwrap();
        let mut b: Network<f32> = Network::init(&spec, 12).unwrap();
        b.load_flat_params(&a.flat_params()).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
    }
}
