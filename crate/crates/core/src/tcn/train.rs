use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{build_features, FeatureWindow};
use super::model::{Gradients, TcnArchitecture, TcnModel};
use crate::error::{Error, Result};
use crate::proposal::Tubelet;
use crate::seed::SeedKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Overlap above which a tubelet box is labeled foreground.
    pub label_iou: f64,
    pub window: usize,
    pub window_stride: usize,
    pub hidden_channels: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            iterations: 500,
            batch_size: 16,
            label_iou: 0.5,
            window: 50,
            window_stride: 25,
            hidden_channels: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.iterations == 0
            || self.batch_size == 0
            || self.window == 0
            || self.window_stride == 0
            || self.hidden_channels == 0
        {
            return Err(Error::Config(
                "iterations, batch_size, window, window_stride and hidden_channels must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.label_iou) {
            return Err(Error::Config("label_iou must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn architecture(&self) -> TcnArchitecture {
        TcnArchitecture { hidden_channels: self.hidden_channels, window: self.window, ..TcnArchitecture::default() }
    }
}

/// A feature window with its per-position 0/1 targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub features: FeatureWindow,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TcnModel,
    /// Mini-batch loss before each update.
    pub loss_history: Vec<f64>,
}

/// Momentum SGD on the mean per-position cross-entropy: `v ← μv − η∇`,
/// `θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Gradients,
}

impl Sgd {
    pub fn new(model: &TcnModel, learning_rate: f64, momentum: f64) -> Self {
        Self { learning_rate, momentum, velocity: Gradients::zeros_like(model) }
    }

    pub fn step(&mut self, model: &mut TcnModel, grads: &Gradients) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((layer, (gw, gb)), (vw, vb)) in model.layers.iter_mut().zip(&grads.layers).zip(&mut self.velocity.layers) {
            ndarray::Zip::from(&mut *vw).and(gw).for_each(|v, &g| *v = mu * *v - lr * g);
            ndarray::Zip::from(&mut *vb).and(gb).for_each(|v, &g| *v = mu * *v - lr * g);
            layer.weight += &*vw;
            layer.bias += &*vb;
        }
    }
}

/// Trains a model from a fresh seeded initialization.
pub fn train(data: &[TrainingWindow], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = TcnModel::new(cfg.architecture(), cfg.seed)?;
    train_from(model, data, cfg)
}

/// Continues training `model`. Batches are drawn without replacement
/// from a per-epoch shuffle seeded by `cfg.seed`.
pub fn train_from(mut model: TcnModel, data: &[TrainingWindow], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !data.iter().any(|w| w.features.mask.iter().any(|m| *m)) {
        return Err(Error::InvalidArgument("no unmasked training position".into()));
    }
    let mut rng = SeedKey::new(cfg.seed).str("batches").rng();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let batch_size = cfg.batch_size.min(data.len());
    let mut sgd = Sgd::new(&model, cfg.learning_rate, cfg.momentum);
    let mut history = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        // fixed accumulation order regardless of draw order
        batch.sort_unstable();
        let windows: Vec<&FeatureWindow> = batch.iter().map(|&i| &data[i].features).collect();
        let labels: Vec<&[u8]> = batch.iter().map(|&i| data[i].labels.as_slice()).collect();
        let (loss, grads) = match model.loss_and_gradients(&windows, &labels) {
            Ok((l, g, _)) => (l, g),
            // a batch of fully padded windows contributes nothing
            Err(Error::InvalidArgument(_)) => continue,
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::NumericalAbort(format!("loss {loss} at iteration {it}")));
        }
        history.push(loss);
        sgd.step(&mut model, &grads);
    }
    Ok(TrainOutcome { model, loss_history: history })
}

/// Fraction of unmasked positions whose argmax class equals the label.
pub fn accuracy(model: &TcnModel, data: &[TrainingWindow]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for w in data {
        let p = model.forward(&w.features)?;
        for pos in 0..w.labels.len() {
            if w.features.mask[pos] {
                total += 1;
                let pred = u8::from(p[[1, pos]] > p[[0, pos]]);
                correct += usize::from(pred == w.labels[pos]);
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Fills `tcn_score` with the foreground probability, averaged over every
/// window covering the frame.
pub fn rescore(model: &TcnModel, tubelet: &Tubelet, window_stride: usize) -> Result<Tubelet> {
    let windows = build_features(tubelet, model.arch.window, window_stride)?;
    let len = tubelet.boxes.len();
    let mut sum = vec![0.0; len];
    let mut count = vec![0usize; len];
    for w in &windows {
        let p = model.forward(w)?;
        for pos in 0..w.mask.len() {
            if w.mask[pos] {
                sum[w.start + pos] += p[[1, pos]];
                count[w.start + pos] += 1;
            }
        }
    }
    let mut out = tubelet.clone();
    for (i, b) in out.boxes.iter_mut().enumerate() {
        b.tcn_score = Some((sum[i] / count[i] as f64).clamp(0.0, 1.0));
    }
    Ok(out)
}
