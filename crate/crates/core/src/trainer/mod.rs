//! Training loop, rollout evaluation and metrics.

mod rollout;
mod sample;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::meshgraph::Trajectory;
use crate::pooling::PoolingPlan;
use crate::tensor::{adam_step, AdamConfig, AdamState, Gradients, Tape};
use crate::transfer::{frobenius_penalty, Anchor, Checkpoint};

pub use rollout::{
    evaluate, position_rmse, rollout, ModelPredictor, OraclePredictor, Predictor, RmseAccumulator,
};
pub use sample::{noisy_sample, prepare, task_loss, NoisySample, Prepared, Targets};

/// Optimization hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Weight of the Frobenius penalty on anchored tensors.
    pub lambda: f64,
    pub seed: u64,
    /// Fraction of training trajectories kept, in `(0, 1]`.
    pub fraction: f64,
    /// Seed of the trajectory subsampling permutation.
    pub subset_seed: u64,
    /// Validation rollout period in steps; 0 validates only at the end.
    pub valid_every: usize,
    /// Period of logged training-loss rows.
    pub log_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 1,
            lr_start: 1e-4,
            lr_end: 1e-6,
            lambda: 0.0,
            seed: 0,
            fraction: 1.0,
            subset_seed: 0,
            valid_every: 500,
            log_every: 100,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return config_err("steps, batch_size and log_every must be positive");
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return config_err(format!(
                "fraction must lie in (0, 1], got {}",
                self.fraction
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return config_err("learning rates must be positive");
        }
        if !(self.lambda >= 0.0) {
            return config_err("lambda must be non-negative");
        }
        Ok(())
    }

    /// Exponential interpolation from `lr_start` to `lr_end` over the run.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let frac = step as f64 / self.steps as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

/// Indices of a seeded subset of `n` items: the first `ceil(fraction * n)`
/// entries of a seeded permutation, sorted. Subsets for one seed are nested.
pub fn subsample(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let keep = ((fraction * n as f64).ceil() as usize).clamp(n.min(1), n);
    let mut out = idx[..keep].to_vec();
    out.sort_unstable();
    out
}

/// Starting checkpoint, tensors anchored by the Frobenius penalty and
/// hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub init: Checkpoint,
    pub anchored: Vec<String>,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean total loss over the logging window, if any steps were taken.
    pub train_loss: Option<f64>,
    pub valid_rmse: Option<f64>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest validation RMSE checkpoint; the final one without validation data.
    pub best: Checkpoint,
    pub best_step: usize,
    pub best_rmse: Option<f64>,
    pub last: Checkpoint,
    pub log: Vec<LogRow>,
}

pub const LOG_HEADER: &str = "# valid_rmse = sqrt(mean of squared position error over validation trajectories, rollout steps, non-prescribed mesh vertices and coordinates)\n# train_loss = mean over the logging window of batch-mean normalized delta MSE plus lambda * Frobenius penalty\nstep,train_loss,valid_rmse,wall_time\n";

pub fn write_log_csv<W: Write>(rows: &[LogRow], mut w: W) -> Result<()> {
    w.write_all(LOG_HEADER.as_bytes())?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.3}",
            r.step,
            opt(r.train_loss),
            opt(r.valid_rmse),
            r.wall_time
        )?;
    }
    Ok(())
}

/// Trains `run.init` on `train_set` (subsampled by `fraction`) and validates
/// by full rollouts on `valid_set`.
pub fn train(
    run: &TrainRun,
    train_set: &[Trajectory],
    valid_set: &[Trajectory],
) -> Result<TrainOutcome> {
    let cfg = &run.config;
    cfg.validate()?;
    run.init.validate()?;
    let model = run.init.model()?;
    let subset: Vec<&Trajectory> = subsample(train_set.len(), cfg.fraction, cfg.subset_seed)
        .into_iter()
        .map(|i| &train_set[i])
        .collect();
    if subset.is_empty() {
        return config_err("empty training set");
    }
    if let Some(t) = subset.iter().find(|t| t.num_steps() < 2) {
        return config_err(format!("training trajectory with {} steps", t.num_steps()));
    }

    let mut params = run.init.params.clone();
    let mut norms = run.init.normalizers.clone();
    let mut adam = run
        .init
        .optimizer
        .clone()
        .unwrap_or_else(|| AdamState::new(&params));
    let anchor = Anchor::capture(&params, run.anchored.iter().map(String::as_str))?;
    let mut plans: Vec<Option<PoolingPlan>> = vec![None; subset.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let start = Instant::now();
    let mut log = Vec::new();
    let mut window = (0.0, 0usize);
    let snapshot = |params: &_, norms: &_, adam: &AdamState| Checkpoint {
        config: run.init.config.clone(),
        params: Clone::clone(params),
        normalizers: Clone::clone(norms),
        optimizer: Some(adam.clone()),
    };
    let mut best: Option<(f64, usize, Checkpoint)> = None;

    for step in 1..=cfg.steps {
        let mut grads = Gradients::new(params.len());
        let mut loss = 0.0;
        let mut picks = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..subset.len());
            let traj = subset[i];
            let t = rng.random_range(0..traj.num_steps() - 1);
            picks.push((i, t));
            let current = traj.state(t);
            if plans[i].is_none() {
                plans[i] = Some(model.plan(&model.graph(&current)?)?);
            }
            let plan = plans[i].as_ref().expect("plan set above");
            let p = prepare(
                &model,
                plan,
                &current,
                &traj.state(t + 1),
                &mut norms,
                true,
                &mut rng,
            )?;
            let mut tape = Tape::<f32>::new();
            let pred = model.forward(&mut tape, &params, &p.input)?;
            let l = task_loss(&mut tape, pred, &p.targets)?;
            loss += tape.value(l).data()[0] as f64;
            grads.merge(tape.backward(l, params.len())?);
        }
        let inv = 1.0 / cfg.batch_size as f64;
        loss *= inv;
        grads.scale(inv);
        if !anchor.is_empty() {
            let (pen, mut pg) = frobenius_penalty(&anchor, &params)?;
            loss += cfg.lambda * pen;
            pg.scale(cfg.lambda);
            grads.merge(pg);
        }
        if !loss.is_finite() || !grads.all_finite() {
            let batch: Vec<String> = picks
                .iter()
                .map(|(i, t)| format!("(trajectory {i}, step {t})"))
                .collect();
            return Err(Error::Numerical(format!(
                "non-finite loss {loss} at step {step}, batch {}",
                batch.join(", ")
            )));
        }
        adam_step(
            &mut params,
            &grads,
            &mut adam,
            cfg.learning_rate(step - 1),
            &cfg.adam,
        )?;
        window.0 += loss;
        window.1 += 1;

        let validate_now =
            step == cfg.steps || (cfg.valid_every > 0 && step % cfg.valid_every == 0);
        if step % cfg.log_every == 0 || validate_now {
            let valid_rmse = if validate_now && !valid_set.is_empty() {
                Some(evaluate(&model, &params, &norms, valid_set)?)
            } else {
                None
            };
            if let Some(r) = valid_rmse {
                if best.as_ref().is_none_or(|(b, _, _)| r < *b) {
                    best = Some((r, step, snapshot(&params, &norms, &adam)));
                }
            }
            let train_loss = (window.1 > 0).then(|| window.0 / window.1 as f64);
            window = (0.0, 0);
            log.push(LogRow {
                step,
                train_loss,
                valid_rmse,
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
    }

    let last = snapshot(&params, &norms, &adam);
    let (best_rmse, best_step, best) = match best {
        Some((r, s, c)) => (Some(r), s, c),
        None => (None, cfg.steps, last.clone()),
    };
    Ok(TrainOutcome {
        best,
        best_step,
        best_rmse,
        last,
        log,
    })
}
