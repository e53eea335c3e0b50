//! The regression network and its training loop.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_from_seed;

/// Layer dimensions k-n-m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_units: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_units == 0 || output_dim == 0 {
            return Err(Error::invalid("all network dimensions must be at least 1"));
        }
        Ok(Self {
            input_dim,
            hidden_units,
            output_dim,
        })
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Stop after this many epochs without training-loss improvement.
    /// Off by default.
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 100,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero learning rate is allowed: it trains to a no-op, which is
        // occasionally useful for isolating data paths.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid(
                "learning_rate must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam betas must lie in (0, 1)"));
        }
        if self.adam_epsilon <= 0.0 {
            return Err(Error::invalid("adam_epsilon must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// A k-n-m network. `w1` is n x k, `w2` is m x n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: NetworkSpec,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Mean training loss per epoch; empty before training.
    pub loss_curve: Vec<f64>,
}

/// Glorot-uniform weights, zero biases, deterministic in the seed.
pub fn init_network(spec: NetworkSpec, seed: u64) -> TrainedModel {
    let mut rng = rng_from_seed(seed);
    let mut glorot = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..=limit))
    };
    let w1 = glorot(
        spec.hidden_units,
        spec.input_dim,
        spec.input_dim,
        spec.hidden_units,
    );
    let w2 = glorot(
        spec.output_dim,
        spec.hidden_units,
        spec.hidden_units,
        spec.output_dim,
    );
    TrainedModel {
        spec,
        w1,
        b1: Array1::zeros(spec.hidden_units),
        w2,
        b2: Array1::zeros(spec.output_dim),
        loss_curve: Vec::new(),
    }
}

impl TrainedModel {
    /// y = W2 * max(0, W1 * x + b1) + b2
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::invalid(format!(
                "input has {} components, expected {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input has non-finite components"));
        }
        let x = ndarray::ArrayView2::from_shape((1, x.len()), x)
            .expect("contiguous slice reshapes to a row");
        Ok(self.forward_batch(&x.to_owned()).row(0).to_vec())
    }

    /// Batched forward pass over rows of `inputs` (N x k -> N x m).
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Array2<f64> {
        let hidden = self.hidden_activations(inputs);
        hidden.dot(&self.w2.t()) + &self.b2
    }

    fn hidden_activations(&self, inputs: &Array2<f64>) -> Array2<f64> {
        let mut z = inputs.dot(&self.w1.t()) + &self.b1;
        z.mapv_inplace(|v| v.max(0.0));
        z
    }

    /// MSE of the batched forward pass against `targets`.
    pub fn loss(&self, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
        Ok(mse(&self.forward_batch(inputs), targets)?.0)
    }

    /// Exact backpropagated gradients of the MSE loss at the current
    /// parameters.
    pub fn gradients(&self, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<Gradients> {
        let rows = inputs.nrows();
        if rows == 0 || targets.nrows() != rows {
            return Err(Error::invalid("gradient batch shapes disagree"));
        }
        let scale = 2.0 / (rows * self.spec.output_dim) as f64;

        let z = inputs.dot(&self.w1.t()) + &self.b1;
        let hidden = z.mapv(|v| v.max(0.0));
        let outputs = hidden.dot(&self.w2.t()) + &self.b2;

        let d_out = (&outputs - targets) * scale;
        let w2 = d_out.t().dot(&hidden);
        let b2 = d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&self.w2);
        d_hidden.zip_mut_with(&z, |dv, zv| {
            if *zv <= 0.0 {
                *dv = 0.0;
            }
        });
        let w1 = d_hidden.t().dot(inputs);
        let b1 = d_hidden.sum_axis(Axis(0));
        Ok(Gradients { w1, b1, w2, b2 })
    }
}

/// Gradients aligned with [`TrainedModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Mean squared error: per-row error is the squared difference averaged
/// over output components; the aggregate averages the per-row errors.
pub fn mse(predictions: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
    if predictions.shape() != targets.shape() {
        return Err(Error::invalid(format!(
            "prediction shape {:?} != target shape {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    if predictions.nrows() == 0 {
        return Err(Error::invalid("mse of zero rows"));
    }
    let m = predictions.ncols() as f64;
    let per_row: Vec<f64> = predictions
        .rows()
        .into_iter()
        .zip(targets.rows())
        .map(|(p, t)| {
            p.iter()
                .zip(t.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / m
        })
        .collect();
    let aggregate = per_row.iter().sum::<f64>() / per_row.len() as f64;
    Ok((aggregate, per_row))
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], config: &TrainConfig) {
        self.step += 1;
        let b1 = config.adam_beta1;
        let b2 = config.adam_beta2;
        let bias1 = 1.0 - b1.powi(self.step as i32);
        let bias2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
        }
    }
}

/// Runs `config.epochs` passes of mini-batch Adam over seeded shuffles of
/// the rows. Deterministic in (model, data, config).
pub fn train(
    mut model: TrainedModel,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::invalid("no training rows"));
    }
    if targets.nrows() != n
        || inputs.ncols() != model.spec.input_dim
        || targets.ncols() != model.spec.output_dim
    {
        return Err(Error::invalid(format!(
            "training shapes {:?}/{:?} do not match network {}x{}x{}",
            inputs.shape(),
            targets.shape(),
            model.spec.input_dim,
            model.spec.hidden_units,
            model.spec.output_dim
        )));
    }
    if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data has non-finite values"));
    }

    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam_w1 = AdamState::new(model.w1.len());
    let mut adam_b1 = AdamState::new(model.b1.len());
    let mut adam_w2 = AdamState::new(model.w2.len());
    let mut adam_b2 = AdamState::new(model.b2.len());

    model.loss_curve.clear();
    let mut best_loss = f64::INFINITY;
    let mut stale_epochs = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let x = inputs.select(Axis(0), batch);
            let t = targets.select(Axis(0), batch);
            let loss = model.loss(&x, &t)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            let grads = model.gradients(&x, &t)?;
            adam_w1.update(
                model.w1.as_slice_mut().expect("row-major"),
                grads.w1.as_slice().expect("row-major"),
                config,
            );
            adam_b1.update(
                model.b1.as_slice_mut().expect("contiguous"),
                grads.b1.as_slice().expect("contiguous"),
                config,
            );
            adam_w2.update(
                model.w2.as_slice_mut().expect("row-major"),
                grads.w2.as_slice().expect("row-major"),
                config,
            );
            adam_b2.update(
                model.b2.as_slice_mut().expect("contiguous"),
                grads.b2.as_slice().expect("contiguous"),
                config,
            );
        }
        let epoch_loss = epoch_loss / n as f64;
        model.loss_curve.push(epoch_loss);

        if let Some(patience) = config.early_stop_patience {
            if epoch_loss + 1e-12 < best_loss {
                best_loss = epoch_loss;
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= patience {
                    break;
                }
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn spec(k: usize, n: usize, m: usize) -> NetworkSpec {
        NetworkSpec::new(k, n, m).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_bounded_weights() {
        let a = init_network(spec(3, 2, 1), 77);
        let b = init_network(spec(3, 2, 1), 77);
        assert_eq!(a, b);
        assert!(a.b1.iter().all(|&v| v == 0.0));
        assert!(a.b2.iter().all(|&v| v == 0.0));
        let limit = (6.0f64 / (3 + 2) as f64).sqrt();
        assert!(a.w1.iter().all(|v| v.abs() <= limit));
        let c = init_network(spec(3, 2, 1), 78);
        assert_ne!(a.w1, c.w1);
    }

    #[test]
    fn forward_of_zero_model_is_zero() {
        let mut model = init_network(spec(2, 3, 2), 1);
        model.w1.fill(0.0);
        model.w2.fill(0.0);
        assert_eq!(model.forward(&[5.0, -3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_applies_relu() {
        let mut model = init_network(spec(2, 2, 2), 1);
        model.w1 = Array2::eye(2);
        model.w2 = Array2::eye(2);
        assert_eq!(model.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn forward_composition_by_hand() {
        // 3 * max(0, 2*1 + 1) - 1 = 8
        let mut model = init_network(spec(1, 1, 1), 1);
        model.w1 = array![[2.0]];
        model.b1 = array![1.0];
        model.w2 = array![[3.0]];
        model.b2 = array![-1.0];
        assert_eq!(model.forward(&[1.0]).unwrap(), vec![8.0]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let model = init_network(spec(3, 2, 1), 1);
        assert!(model.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(mse(&a, &a).unwrap().0, 0.0);

        let (agg, rows) = mse(&array![[0.0]], &array![[1.0]]).unwrap();
        assert_eq!(agg, 1.0);
        assert_eq!(rows, vec![1.0]);

        let (agg, rows) = mse(&array![[0.0, 0.0]], &array![[1.0, 3.0]]).unwrap();
        assert_eq!(rows, vec![5.0]);
        assert_eq!(agg, 5.0);

        assert!(mse(&array![[0.0]], &array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let model = init_network(spec(2, 3, 1), 5);
        let inputs = array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.5], [0.2, 0.9]];
        let targets = array![[1.0], [0.0], [0.5], [0.7]];
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let trained = train(model.clone(), &inputs, &targets, &config).unwrap();
        assert_eq!(trained.w1, model.w1);
        assert_eq!(trained.b1, model.b1);
        assert_eq!(trained.w2, model.w2);
        assert_eq!(trained.b2, model.b2);
        assert_eq!(trained.loss_curve.len(), 3);
    }

    #[test]
    fn identity_task_reaches_small_training_mse() {
        // y = x is exactly representable once the single hidden unit is
        // active across the input range.
        let n = 500;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let inputs = Array2::from_shape_vec((n, 1), xs.clone()).unwrap();
        let targets = Array2::from_shape_vec((n, 1), xs).unwrap();
        let config = TrainConfig {
            seed: 3,
            ..TrainConfig::default()
        };
        let model = init_network(spec(1, 1, 1), 2);
        let trained = train(model, &inputs, &targets, &config).unwrap();
        let final_mse = trained.loss(&inputs, &targets).unwrap();
        assert!(final_mse < 1e-3, "final training MSE {final_mse}");
    }

    #[test]
    fn training_is_deterministic() {
        let inputs = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let targets = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 2 + j) as f64).cos());
        let config = TrainConfig {
            epochs: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(init_network(spec(3, 4, 2), 1), &inputs, &targets, &config).unwrap();
        let b = train(init_network(spec(3, 4, 2), 1), &inputs, &targets, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_data_is_rejected() {
        let inputs = array![[f64::NAN]];
        let targets = array![[0.0]];
        let config = TrainConfig::default();
        assert!(train(init_network(spec(1, 1, 1), 0), &inputs, &targets, &config).is_err());
    }

    // Central finite differences around the current parameters.
    fn finite_difference_gradients(
        model: &TrainedModel,
        inputs: &Array2<f64>,
        targets: &Array2<f64>,
        h: f64,
    ) -> Gradients {
        let mut probe = model.clone();
        let mut grad_of = |get: &mut dyn FnMut(&mut TrainedModel) -> &mut f64| {
            let original = *get(&mut probe);
            *get(&mut probe) = original + h;
            let up = probe.loss(inputs, targets).unwrap();
            *get(&mut probe) = original - h;
            let down = probe.loss(inputs, targets).unwrap();
            *get(&mut probe) = original;
            (up - down) / (2.0 * h)
        };
        let w1 = Array2::from_shape_fn(model.w1.dim(), |idx| {
            grad_of(&mut |m: &mut TrainedModel| &mut m.w1[idx])
        });
        let b1 = Array1::from_shape_fn(model.b1.dim(), |i| {
            grad_of(&mut |m: &mut TrainedModel| &mut m.b1[i])
        });
        let w2 = Array2::from_shape_fn(model.w2.dim(), |idx| {
            grad_of(&mut |m: &mut TrainedModel| &mut m.w2[idx])
        });
        let b2 = Array1::from_shape_fn(model.b2.dim(), |i| {
            grad_of(&mut |m: &mut TrainedModel| &mut m.b2[i])
        });
        Gradients { w1, b1, w2, b2 }
    }

    fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
        let pairs = analytic
            .w1
            .iter()
            .zip(numeric.w1.iter())
            .chain(analytic.b1.iter().zip(numeric.b1.iter()))
            .chain(analytic.w2.iter().zip(numeric.w2.iter()))
            .chain(analytic.b2.iter().zip(numeric.b2.iter()));
        pairs
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = crate::util::rng_from_seed(31);
        let inputs = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let targets = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
        let mut model = init_network(spec(3, 4, 2), 17);
        // Shift biases so no preactivation sits on the ReLU kink.
        model.b1.mapv_inplace(|_| 0.05);
        let analytic = model.gradients(&inputs, &targets).unwrap();
        let numeric = finite_difference_gradients(&model, &inputs, &targets, 1e-5);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn relu_network_without_biases_is_positively_homogeneous() {
        let model = init_network(spec(4, 6, 3), 12);
        let x: Vec<f64> = vec![0.3, -0.7, 1.1, 0.4];
        let base = model.forward(&x).unwrap();
        for alpha in [0.0, 0.5, 2.0, 7.5] {
            let scaled_x: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            let scaled = model.forward(&scaled_x).unwrap();
            for (s, b) in scaled.iter().zip(&base) {
                assert_relative_eq!(*s, alpha * b, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn early_stopping_halts_on_stale_loss() {
        let inputs = Array2::from_shape_fn((20, 2), |(i, j)| ((i + j) as f64).sin());
        let targets = Array2::from_shape_fn((20, 1), |(i, _)| (i as f64).cos());
        let config = TrainConfig {
            learning_rate: 0.0, // loss can never improve
            epochs: 50,
            early_stop_patience: Some(3),
            ..TrainConfig::default()
        };
        let trained = train(init_network(spec(2, 2, 1), 0), &inputs, &targets, &config).unwrap();
        assert!(trained.loss_curve.len() <= 5);
    }
}
