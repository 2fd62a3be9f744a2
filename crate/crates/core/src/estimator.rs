//! Offline-trained regressors for per-server offloading delay and energy.
//!
//! A sample's input is the server's recent capacity history (newest first),
//! its backlog, the task's input size and work, and the upload rate on the
//! best free channel. The target is the realised edge delay (or energy).

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{train_step, Adam, Mlp};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MIN_TRAINING_SAMPLES: usize = 100;

/// Feature vector `[f_0 .. f_{U-1}, backlog, input_bits, work_cycles, rate]`.
pub fn features(
    capacity_history: &[f64],
    backlog: f64,
    input_bits: f64,
    work_cycles: f64,
    rate: f64,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(capacity_history.len() + 4);
    x.extend_from_slice(capacity_history);
    x.extend_from_slice(&[backlog, input_bits, work_cycles, rate]);
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSample {
    pub features: Vec<f64>,
    pub target: f64,
}

/// Samples recorded for one offloaded task: shared input, two targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePair {
    pub features: Vec<f64>,
    pub delay: f64,
    pub energy: f64,
}

impl SamplePair {
    pub fn delay_sample(&self) -> EstimatorSample {
        EstimatorSample {
            features: self.features.clone(),
            target: self.delay,
        }
    }

    pub fn energy_sample(&self) -> EstimatorSample {
        EstimatorSample {
            features: self.features.clone(),
            target: self.energy,
        }
    }
}

/// Per-column affine standardisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero spread get a unit scale so they map to zero.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = v.sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Transform applied to the target before standardisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    Identity,
    /// Natural log; targets must be positive. Errors become relative, so
    /// short delays are resolved as well as long ones.
    #[default]
    Log,
}

impl TargetTransform {
    fn forward(self, y: f64) -> f64 {
        match self {
            TargetTransform::Identity => y,
            TargetTransform::Log => y.ln(),
        }
    }

    fn inverse(self, z: f64) -> f64 {
        match self {
            TargetTransform::Identity => z,
            TargetTransform::Log => z.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub target_transform: TargetTransform,
    /// Feed `ln(1 + x)` of every (non-negative) feature to the network.
    pub log_inputs: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            hidden: vec![64, 128, 128],
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            target_transform: TargetTransform::default(),
            log_inputs: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(
                "estimator.hidden",
                "needs at least one non-empty layer",
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("estimator.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("estimator.batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("estimator.learning_rate", "must be > 0"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config(
                "estimator.validation_fraction",
                "must be in (0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_samples: usize,
    pub validation_samples: usize,
    pub final_train_loss: f64,
    /// In raw target units.
    pub validation_mse: f64,
    pub validation_r2: f64,
}

/// Anything that maps a feature vector to a non-negative estimate.
pub trait Predictor {
    fn predict(&self, features: &[f64]) -> f64;
}

/// A trained regressor. Only obtainable from [`fit_offline`] or by loading a
/// saved model, so an `Estimator` value is always trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    version: u32,
    net: Mlp,
    inputs: Standardizer,
    target: Standardizer,
    transform: TargetTransform,
    log_inputs: bool,
}

impl Estimator {
    fn prepare(&self, features: &[f64]) -> Vec<f64> {
        prepare(features, self.log_inputs)
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    /// Unclamped prediction in raw target units.
    pub fn predict_raw(&self, features: &[f64]) -> Result<f64> {
        let z = self
            .net
            .forward(&self.inputs.apply(&self.prepare(features)))?;
        Ok(self.transform.inverse(self.target.invert(&z)[0]))
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let est: Estimator = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if est.version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model version {}",
                est.version
            )));
        }
        let check = Mlp::from_layers(est.net.layers().to_vec())?;
        if est.inputs.mean.len() != check.input_dim()
            || est.target.mean.len() != 1
            || check.output_dim() != 1
        {
            return Err(Error::Parse(
                "model normalisation does not match network shape".into(),
            ));
        }
        Ok(est)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Predictor for Estimator {
    /// Clamped below at zero; delays and energies are never negative.
    fn predict(&self, features: &[f64]) -> f64 {
        self.predict_raw(features)
            .expect("feature width checked by caller")
            .max(0.0)
    }
}

fn prepare(features: &[f64], log_inputs: bool) -> Vec<f64> {
    if log_inputs {
        features.iter().map(|v| v.ln_1p()).collect()
    } else {
        features.to_vec()
    }
}

fn matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}

/// Coefficient of determination of `pred` against `truth`.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Trains a regressor on `samples` with a seeded 90/10 train/validation split.
pub fn fit_offline(
    samples: &[EstimatorSample],
    config: &FitConfig,
    seed: u64,
) -> Result<(Estimator, FitReport)> {
    config.validate()?;
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(Error::invalid(format!(
            "need at least {MIN_TRAINING_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].features.len();
    if dim == 0 || samples.iter().any(|s| s.features.len() != dim) {
        return Err(Error::invalid(
            "samples must share a non-empty feature width",
        ));
    }
    if samples
        .iter()
        .any(|s| !s.target.is_finite() || s.features.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid("samples contain non-finite values"));
    }
    let transform = config.target_transform;
    if transform == TargetTransform::Log && samples.iter().any(|s| !(s.target > 0.0)) {
        return Err(Error::invalid(
            "log target transform needs positive targets",
        ));
    }
    if config.log_inputs && samples.iter().any(|s| s.features.iter().any(|v| *v < 0.0)) {
        return Err(Error::invalid("log inputs need non-negative features"));
    }
    let prepared: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| prepare(&s.features, config.log_inputs))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples.len() as f64 * config.validation_fraction).round() as usize).max(1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let train_rows: Vec<&[f64]> = train_idx.iter().map(|&i| prepared[i].as_slice()).collect();
    let inputs = Standardizer::fit(&train_rows);
    let train_targets: Vec<[f64; 1]> = train_idx
        .iter()
        .map(|&i| [transform.forward(samples[i].target)])
        .collect();
    let target = Standardizer::fit(
        &train_targets
            .iter()
            .map(|t| t.as_slice())
            .collect::<Vec<_>>(),
    );

    let xs: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| inputs.apply(&prepared[i]))
        .collect();
    let ys: Vec<f64> = train_idx
        .iter()
        .map(|&i| target.apply(&[transform.forward(samples[i].target)])[0])
        .collect();

    let mut sizes = vec![dim];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, &mut rng)?;
    let mut opt = Adam::new(&net, config.learning_rate);

    let mut batch_order: Vec<usize> = (0..xs.len()).collect();
    let mut final_train_loss = f64::NAN;
    for _ in 0..config.epochs {
        batch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in batch_order.chunks(config.batch_size) {
            let x = Array2::from_shape_fn((chunk.len(), dim), |(r, c)| xs[chunk[r]][c]);
            let y = Array2::from_shape_fn((chunk.len(), 1), |(r, _)| ys[chunk[r]]);
            epoch_loss += train_step(&mut net, &mut opt, x.view(), y.view())? * chunk.len() as f64;
        }
        final_train_loss = epoch_loss / xs.len() as f64;
    }
    if !net.all_finite() {
        return Err(Error::Training("parameters diverged".into()));
    }

    let est = Estimator {
        version: MODEL_FORMAT_VERSION,
        net,
        inputs,
        target,
        transform,
        log_inputs: config.log_inputs,
    };
    let truth: Vec<f64> = val_idx.iter().map(|&i| samples[i].target).collect();
    let val_x = matrix(
        &val_idx
            .iter()
            .map(|&i| est.inputs.apply(&prepared[i]))
            .collect::<Vec<_>>(),
    );
    let pred: Vec<f64> = est
        .net
        .forward_batch(ArrayView2::from(&val_x))
        .column(0)
        .iter()
        .map(|z| transform.inverse(est.target.invert(&[*z])[0]))
        .collect();
    let validation_mse = truth
        .iter()
        .zip(&pred)
        .map(|(y, p)| (y - p).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    let report = FitReport {
        train_samples: train_idx.len(),
        validation_samples: val_idx.len(),
        final_train_loss,
        validation_mse,
        validation_r2: r_squared(&truth, &pred),
    };
    Ok((est, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_set(n: usize, seed: u64) -> Vec<EstimatorSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = 2.0 * x[0] - x[1] + 0.5 * x[2] + 3.0;
                EstimatorSample {
                    features: x,
                    target: y,
                }
            })
            .collect()
    }

    fn tiny() -> FitConfig {
        FitConfig {
            hidden: vec![16, 16],
            epochs: 5,
            target_transform: TargetTransform::Identity,
            log_inputs: false,
            ..FitConfig::default()
        }
    }

    #[test]
    fn log_transform_fits_positive_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let set: Vec<EstimatorSample> = (0..1500)
            .map(|_| {
                let x: Vec<f64> = vec![rng.random_range(1e9..1e10), rng.random_range(1e6..1e7)];
                let y = 1e9 / x[0] + x[1] / 1e7;
                EstimatorSample {
                    features: x,
                    target: y,
                }
            })
            .collect();
        let cfg = FitConfig {
            epochs: 20,
            ..tiny()
        };
        let log = FitConfig {
            target_transform: TargetTransform::Log,
            log_inputs: true,
            ..cfg.clone()
        };
        let (est, report) = fit_offline(&set, &log, 1).unwrap();
        assert!(report.validation_r2 > 0.95, "r2 {}", report.validation_r2);
        assert!(est.predict_raw(&set[0].features).unwrap() > 0.0);

        let mut bad = set.clone();
        bad[0].target = 0.0;
        assert!(fit_offline(&bad, &log, 1).is_err());
        bad[0].target = 1.0;
        bad[1].features[0] = -1.0;
        assert!(fit_offline(&bad, &log, 1).is_err());
    }

    #[test]
    fn features_layout() {
        let x = features(&[3.0, 2.0, 1.0], 10.0, 8e6, 7e9, 5e7);
        assert_eq!(x, vec![3.0, 2.0, 1.0, 10.0, 8e6, 7e9, 5e7]);
    }

    #[test]
    fn standardize_round_trip() {
        let rows = [
            vec![1.0, 5e9, 3.0],
            vec![2.0, 7e9, 3.0],
            vec![-4.0, 1.2e10, 3.0],
        ];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = Standardizer::fit(&refs);
        for r in &rows {
            let back = s.invert(&s.apply(r));
            for (a, b) in r.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
        // constant column maps to zero
        assert_eq!(s.apply(&rows[0])[2], 0.0);
    }

    #[test]
    fn too_small_dataset_rejected() {
        let set = linear_set(50, 1);
        assert!(fit_offline(&set, &tiny(), 0).is_err());
    }

    #[test]
    fn constant_target_is_learned() {
        let mut set = linear_set(500, 2);
        for s in &mut set {
            s.target = 4.2;
        }
        let (est, report) = fit_offline(&set, &tiny(), 3).unwrap();
        assert!(
            report.validation_mse < 1e-12,
            "mse {}",
            report.validation_mse
        );
        assert!((est.predict(&set[0].features) - 4.2).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_model() {
        let set = linear_set(300, 4);
        let (a, ra) = fit_offline(&set, &tiny(), 9).unwrap();
        let (b, rb) = fit_offline(&set, &tiny(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn predictions_are_clamped_and_row_independent() {
        let mut set = linear_set(400, 5);
        for s in &mut set {
            s.target -= 10.0; // all negative
        }
        let (est, _) = fit_offline(&set, &tiny(), 1).unwrap();
        assert!(est.predict_raw(&set[0].features).unwrap() < 0.0);
        assert_eq!(est.predict(&set[0].features), 0.0);

        let rows: Vec<Vec<f64>> = set.iter().take(3).map(|s| s.features.clone()).collect();
        let fwd = est.predict_many(&rows);
        let rev: Vec<f64> = est.predict_many(&rows.iter().rev().cloned().collect::<Vec<_>>());
        assert_eq!(fwd, rev.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn in_sample_prediction_within_residual_scale() {
        let set = linear_set(2000, 6);
        let (est, report) = fit_offline(&set, &tiny(), 2).unwrap();
        let s = &set[0];
        let err = (est.predict_raw(&s.features).unwrap() - s.target).abs();
        assert!(
            err < 10.0 * report.validation_mse.sqrt() + 0.05,
            "err {err}"
        );
    }

    #[test]
    fn persistence_is_bit_exact() {
        let set = linear_set(300, 7);
        let (est, _) = fit_offline(&set, &tiny(), 4).unwrap();
        let back = Estimator::from_json(&est.to_json().unwrap()).unwrap();
        for s in &set {
            assert_eq!(
                est.predict_raw(&s.features).unwrap().to_bits(),
                back.predict_raw(&s.features).unwrap().to_bits()
            );
        }
        let bad = est
            .to_json()
            .unwrap()
            .replace("\"version\":1", "\"version\":99");
        assert!(Estimator::from_json(&bad).is_err());
    }

    #[test]
    fn r_squared_basics() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]), 0.0);
    }
}
