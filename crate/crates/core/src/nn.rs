//! Fully connected feed-forward networks trained by mean squared error.
//!
//! Hidden layers use rectified-linear activations and the output layer is
//! affine. Gradients are computed by hand-written backpropagation and applied
//! with adaptive moment estimation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs x outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Parameter-shaped buffer; used for gradients and optimizer moments.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// He-uniform initialisation, zero biases. `sizes` lists every layer
    /// width including input and output.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        rng.random_range(-limit..limit)
                    }),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.ncols() != l.bias.len() {
                return Err(Error::invalid(format!(
                    "layer {i}: bias length does not match weights"
                )));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.weights.nrows() != l.weights.ncols() {
                    return Err(Error::invalid(format!(
                        "layer {i}: output width does not match next layer"
                    )));
                }
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weights.ncols()));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "expected {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.forward_batch(batch).into_raw_vec_and_offset().0)
    }

    /// Row-wise forward pass over a `batch x inputs` matrix.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            a = a.dot(&l.weights) + &l.bias;
            if i < last {
                a.mapv_inplace(relu);
            }
        }
        a
    }

    /// Loss `(1/B) sum_i ||y_i - g(x_i)||^2` and its gradient.
    pub fn mse_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
    ) -> (f64, Gradients) {
        let batch = x.nrows() as f64;
        let last = self.layers.len() - 1;
        // activations[0] = x, activations[i + 1] = output of layer i
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&l.weights) + &l.bias;
            if i < last {
                z.mapv_inplace(relu);
            }
            activations.push(z);
        }
        let residual = &activations[last + 1] - &y;
        let loss = residual.mapv(|r| r * r).sum() / batch;

        let mut delta = residual * (2.0 / batch);
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = activations[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights.t());
                // relu'(z) is 1 exactly where the stored activation is positive
                ndarray::Zip::from(&mut back)
                    .and(&activations[i])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = back;
            }
            grads.push(Dense {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }

    pub fn mse(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
        let out = self.forward_batch(x);
        (&out - &y).mapv(|r| r * r).sum() / x.nrows() as f64
    }

    pub fn copy_from(&mut self, other: &Mlp) {
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.assign(&src.weights);
            dst.bias.assign(&src.bias);
        }
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

impl Gradients {
    fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let lr_t =
            self.learning_rate * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        let bias_fix = 1.0 - b2.powi(self.step);
        let layers = net.layers.iter_mut().zip(&grads.layers).zip(
            self.first
                .layers
                .iter_mut()
                .zip(self.second.layers.iter_mut()),
        );
        for ((param, grad), (m, v)) in layers {
            let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr_t * *m / ((*v).sqrt() + eps * bias_fix.sqrt());
            };
            ndarray::Zip::from(&mut param.weights)
                .and(&grad.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            ndarray::Zip::from(&mut param.bias)
                .and(&grad.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}

/// One optimiser step on a minibatch; returns the pre-update batch loss.
pub fn train_step(
    net: &mut Mlp,
    opt: &mut Adam,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::invalid("minibatch is empty"));
    }
    if x.nrows() != y.nrows() || x.ncols() != net.input_dim() || y.ncols() != net.output_dim() {
        return Err(Error::invalid("minibatch shape does not match network"));
    }
    let (loss, grads) = net.mse_gradients(x, y);
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {loss}")));
    }
    opt.apply(net, &grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::zeros(&[3, 4, 1]).unwrap();
        net.layers_mut()[1].bias[0] = 2.5;
        assert_eq!(net.forward(&[1.0, -7.0, 3.0]).unwrap(), vec![2.5]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn single_hidden_unit_by_hand() {
        // h = relu(2*x0 - x1 + 0.5), y = 3*h - 1
        let net = Mlp::from_layers(vec![
            Dense {
                weights: array![[2.0], [-1.0]],
                bias: array![0.5],
            },
            Dense {
                weights: array![[3.0]],
                bias: array![-1.0],
            },
        ])
        .unwrap();
        assert_eq!(net.forward(&[1.0, 0.5]).unwrap(), vec![5.0]);
        // negative pre-activation is cut
        assert_eq!(net.forward(&[-1.0, 0.5]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[2, 5, 1], &mut rng).unwrap();
        let x = array![[0.3, -1.2], [1.5, 0.7], [-0.4, 0.1]];
        let y = net.forward_batch(x.view());
        let (loss, grads) = net.mse_gradients(x.view(), y.view());
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn small_step_decreases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[3, 8, 8, 2], &mut rng).unwrap();
        let x = Array2::from_shape_fn((16, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let y = Array2::from_shape_fn((16, 2), |(i, j)| ((i + j) as f64 * 0.21).cos());
        let mut opt = Adam::new(&net, 1e-4);
        let before = net.mse(x.view(), y.view());
        train_step(&mut net, &mut opt, x.view(), y.view()).unwrap();
        assert!(net.mse(x.view(), y.view()) <= before);
    }

    #[test]
    fn rejects_empty_or_nonfinite_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[1, 2, 1], &mut rng).unwrap();
        let mut opt = Adam::new(&net, 1e-3);
        let empty = Array2::<f64>::zeros((0, 1));
        assert!(train_step(&mut net, &mut opt, empty.view(), empty.view()).is_err());
        let x = array![[1.0]];
        let y = array![[f64::NAN]];
        assert!(matches!(
            train_step(&mut net, &mut opt, x.view(), y.view()),
            Err(Error::Training(_))
        ));
    }
}
