use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{loss_and_gradient, Weights};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch sample order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // zero is accepted so a null step can be exercised
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Input("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Plain SGD on mean squared error.
///
/// Samples are visited in a seeded shuffled order each epoch; gradients are
/// averaged over `batch_size` consecutive samples before each step. Returns
/// the trained weights and the mean pre-step loss of every epoch.
pub fn train(
    weights: &Weights<f32>,
    dataset: &[(Tensor<f32>, Vec<f32>)],
    cfg: &TrainConfig,
) -> Result<(Weights<f32>, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("training dataset is empty".into()));
    }
    let mut w = weights.clone();
    let mut params = w.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let lr = cfg.learning_rate as f32;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = vec![0.0f32; params.len()];
            for &i in batch {
                let (tile, target) = &dataset[i];
                let (l, g) = loss_and_gradient(&w, tile, target)?;
                if !l.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        loss: l as f64,
                    });
                }
                total += l as f64;
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            let scale = lr / batch.len() as f32;
            for (p, a) in params.iter_mut().zip(&acc) {
                *p -= scale * a;
            }
            w = Weights::from_flat(w.config, &params)?;
            if !w.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        let mean = total / dataset.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6e}");
        history.push(mean);
    }
    Ok((w, history))
}
