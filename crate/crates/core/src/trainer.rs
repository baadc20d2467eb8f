//! Mini-batch training of the encoder and worker preferences.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{ItemStore, TripletAnnotation};
use crate::error::{Error, Result};
use crate::model::{init_params, EncoderConfig, ModelParams};
use crate::objective::{loss_gradients, ObjectiveOptions};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{seeded, STREAM_NEW_WORKERS, STREAM_SHUFFLE};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub use_entropy: bool,
    pub entropy_stop_gradient: bool,
    /// Training always runs on one thread with a fixed reduction order, so
    /// this only records the caller's request.
    pub deterministic: bool,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            seed: 0,
            use_entropy: true,
            entropy_stop_gradient: false,
            deterministic: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        self.optimizer.validate()
    }

    pub fn objective(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            use_entropy: self.use_entropy,
            entropy_stop_gradient: self.entropy_stop_gradient,
        }
    }
}

/// Passed to the progress callback after each epoch.
pub struct EpochReport<'a> {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub params: &'a ModelParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss of each epoch.
    pub history: Vec<f64>,
}

/// Appends a preference row for every worker in `triplets` that `params`
/// does not know yet, in order of first appearance. Rows are uniform in
/// `[0, 1)`.
pub fn add_missing_workers(params: &mut ModelParams, triplets: &[TripletAnnotation], seed: u64) -> Result<()> {
    let mut rng = seeded(seed, STREAM_NEW_WORKERS);
    let views = params.num_views();
    for t in triplets {
        if params.workers.index_of(&t.worker).is_none() {
            let row: Vec<f64> = (0..views).map(|_| rng.random::<f64>()).collect();
            params.workers.push(&t.worker, &row)?;
        }
    }
    Ok(())
}

/// Distinct worker ids in order of first appearance.
pub fn worker_ids(triplets: &[TripletAnnotation]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    triplets
        .iter()
        .filter(|t| seen.insert(t.worker.as_str()))
        .map(|t| t.worker.clone())
        .collect()
}

pub fn train(
    mut params: ModelParams,
    config: &EncoderConfig,
    items: &ItemStore,
    triplets: &[TripletAnnotation],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_shapes(config)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            history: Vec::new(),
        });
    }
    if triplets.is_empty() {
        return Err(Error::Argument("no training triplets".into()));
    }
    for t in triplets {
        for id in t.items() {
            items.resolve(id)?;
        }
    }
    add_missing_workers(&mut params, triplets, cfg.seed)?;
    let rows: Vec<usize> = triplets
        .iter()
        .map(|t| params.workers.index_of(&t.worker).expect("added above"))
        .collect();

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params)?;
    let mut shuffle_rng = seeded(cfg.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let opts = cfg.objective();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&n| triplets[n].clone()));
            let lg = loss_gradients(&params, config, items, &batch, opts).map_err(|e| match e {
                Error::Numeric(detail) => Error::Diverged {
                    epoch,
                    batch: b,
                    detail,
                },
                other => other,
            })?;
            if !lg.loss.is_finite() {
                let bad = lg
                    .per_triplet
                    .iter()
                    .position(|l| !l.is_finite())
                    .map(|n| format!("triplet {} has loss {}", batch[n], lg.per_triplet[n]))
                    .unwrap_or_else(|| format!("batch loss {}", lg.loss));
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: bad,
                });
            }
            let active: BTreeSet<usize> = chunk.iter().map(|&n| rows[n]).collect();
            let active: Vec<usize> = active.into_iter().collect();
            opt.step(&mut params, &lg.grads, &active);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: "parameters became non-finite after the update".into(),
                });
            }
            total += lg.loss * chunk.len() as f64;
        }
        let mean_loss = total / triplets.len() as f64;
        history.push(mean_loss);
        progress(&EpochReport {
            epoch,
            mean_loss,
            params: &params,
        })?;
    }
    Ok(TrainOutcome { params, history })
}

/// Initialises parameters for the workers in `triplets` and trains them.
pub fn fit(
    config: &EncoderConfig,
    items: &ItemStore,
    triplets: &[TripletAnnotation],
    cfg: &TrainConfig,
    progress: impl FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    let workers = worker_ids(triplets);
    if workers.is_empty() {
        return Err(Error::Argument("no training triplets".into()));
    }
    let params = init_params(config, &workers)?;
    train(params, config, items, triplets, cfg, progress)
}

/// [`fit`] with a single view. Returns the config actually used.
pub fn train_single_view_baseline(
    config: &EncoderConfig,
    items: &ItemStore,
    triplets: &[TripletAnnotation],
    cfg: &TrainConfig,
    progress: impl FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<(EncoderConfig, TrainOutcome)> {
    let single = EncoderConfig {
        num_views: 1,
        ..config.clone()
    };
    let outcome = fit(&single, items, triplets, cfg, progress)?;
    Ok((single, outcome))
}

/// `epoch loss` lines, one per epoch.
pub fn format_loss_log(history: &[f64]) -> String {
    history
        .iter()
        .enumerate()
        .map(|(e, l)| format!("{} {l:.17e}\n", e + 1))
        .collect()
}

pub fn write_loss_log(path: &Path, history: &[f64]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_loss_log(history).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, ItemTensor};

    fn tiny() -> (EncoderConfig, ItemStore, Vec<TripletAnnotation>) {
        let config = EncoderConfig {
            height: 2,
            width: 2,
            channels: 3,
            hidden: vec![4, 3],
            embed_dim: 2,
            num_views: 2,
            activation: Activation::Tanh,
            seed: 3,
        };
        let items: ItemStore = (0..6u32)
            .map(|id| {
                let px = (0..12).map(|n| ((n as u32 * 7 + id * 5) % 11) as f64 / 10.0).collect();
                (id, ItemTensor::new(2, 2, 3, px).unwrap())
            })
            .collect();
        let t = |w: &str, i, j, k| TripletAnnotation::new(w, i, j, k).unwrap();
        let triplets = vec![
            t("a", 0, 1, 2),
            t("a", 3, 4, 5),
            t("b", 0, 2, 4),
            t("b", 1, 3, 5),
            t("a", 2, 5, 0),
        ];
        (config, items, triplets)
    }

    #[test]
    fn zero_epochs_returns_input() {
        let (config, items, triplets) = tiny();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let params = init_params(&config, &["a".into()]).unwrap();
        let out = train(params.clone(), &config, &items, &triplets, &cfg, |_| Ok(())).unwrap();
        assert_eq!(out.params, params);
        assert!(out.history.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (config, items, triplets) = tiny();
        for optimizer in [OptimizerKind::default(), OptimizerKind::SgdMomentum { momentum: 0.9 }] {
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 2,
                learning_rate: 0.0,
                optimizer,
                ..TrainConfig::default()
            };
            let params = init_params(&config, &["a".into(), "b".into()]).unwrap();
            let out = train(params.clone(), &config, &items, &triplets, &cfg, |_| Ok(())).unwrap();
            assert_eq!(out.params, params);
            assert_eq!(out.history.len(), 3);
        }
    }

    #[test]
    fn new_workers_get_rows() {
        let (config, items, triplets) = tiny();
        let params = init_params(&config, &["b".into()]).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(params, &config, &items, &triplets, &cfg, |_| Ok(())).unwrap();
        assert_eq!(out.params.workers.ids(), ["b", "a"]);
        assert!(out.params.workers.row(1).iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn absent_worker_rows_untouched() {
        let (config, items, triplets) = tiny();
        let only_a: Vec<_> = triplets.iter().filter(|t| t.worker == "a").cloned().collect();
        let params = init_params(&config, &["a".into(), "b".into()]).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let out = train(params.clone(), &config, &items, &only_a, &cfg, |_| Ok(())).unwrap();
        assert_eq!(out.params.workers.row(1), params.workers.row(1));
        assert_ne!(out.params.workers.row(0), params.workers.row(0));
    }

    #[test]
    fn loss_decreases_and_progress_sees_every_epoch() {
        let (config, items, triplets) = tiny();
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 5,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let out = fit(&config, &items, &triplets, &cfg, |r| {
            seen.push((r.epoch, r.mean_loss));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), 60);
        assert_eq!(seen[59], (60, out.history[59]));
        assert!(out.history[59] < out.history[0]);
    }

    #[test]
    fn unknown_item_is_reported() {
        let (config, items, mut triplets) = tiny();
        triplets.push(TripletAnnotation::new("a", 0, 1, 99).unwrap());
        let r = fit(&config, &items, &triplets, &TrainConfig::default(), |_| Ok(()));
        assert!(matches!(r, Err(Error::Reference(_))));
    }

    #[test]
    fn divergence_is_diagnosed() {
        let (config, items, triplets) = tiny();
        let mut params = init_params(&config, &["a".into(), "b".into()]).unwrap();
        params.workers.weights_mut()[[0, 0]] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        match train(params, &config, &items, &triplets, &cfg, |_| Ok(())) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loss_log_format() {
        let s = format_loss_log(&[1.5, 0.25]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("1 "));
        assert_eq!(lines[1].split(' ').nth(1).unwrap().parse::<f64>().unwrap(), 0.25);
    }
}
