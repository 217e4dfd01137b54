//! Shared optimisation loop with seeded batches and resumable state.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::StageConfig;
use super::report::{ReportSink, StepRecord};
use crate::corpus::{derive_rng, TrainingCheckpoint};
use crate::error::{DsrError, Result};
use crate::nn::{clip_global_norm, Graph, ModelParams, Optimizer};

/// Loss and per-parameter-set gradients of one step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub extra: Vec<(&'static str, f64)>,
    pub grads: Vec<Vec<Array2<f64>>>,
}

/// Accumulates the batch mean of losses and gradients.
#[derive(Clone, Debug)]
pub struct GradAccumulator {
    loss: f64,
    grads: Vec<Vec<Array2<f64>>>,
    count: usize,
}

impl GradAccumulator {
    pub fn new(params: &[ModelParams]) -> Self {
        Self {
            loss: 0.0,
            grads: params.iter().map(|p| p.iter().map(|(_, t)| Array2::zeros(t.dim())).collect()).collect(),
            count: 0,
        }
    }

    pub fn add(&mut self, loss: f64, grads: &[Vec<Array2<f64>>]) {
        self.loss += loss;
        for (acc, g) in self.grads.iter_mut().zip(grads) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        self.count += 1;
    }

    pub fn finish(mut self) -> StepOutput {
        let n = self.count.max(1) as f64;
        for set in &mut self.grads {
            for t in set.iter_mut() {
                *t /= n;
            }
        }
        StepOutput { loss: self.loss / n, extra: Vec::new(), grads: self.grads }
    }
}

/// Binds every parameter set trainable, evaluates `f`, and backpropagates.
pub fn loss_and_grads<F>(params: &[ModelParams], f: F) -> Result<(f64, Vec<Vec<Array2<f64>>>)>
where
    F: FnOnce(&mut Graph, &[crate::nn::Bound]) -> Result<crate::nn::Var>,
{
    let mut g = Graph::new();
    let bound: Vec<_> = params.iter().map(|p| p.bind(&mut g, true)).collect();
    let loss = f(&mut g, &bound)?;
    let value = g.scalar_value(loss);
    let grads = g.backward(loss);
    Ok((value, bound.iter().map(|b| b.grads(&grads)).collect()))
}

/// `n` indices into `0..len`: a shuffled pass, topped up with random picks
/// when `n > len`.
pub fn sample_batch(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    while idx.len() < n && len > 0 {
        idx.push(rng.gen_range(0..len));
    }
    idx
}

/// Runs one stage. Batches depend only on `(seed, stage, step)`, so an
/// interrupted and resumed run replays exactly the same updates.
pub struct Trainer {
    pub stage: String,
    pub config: StageConfig,
    pub seed: u64,
    pub params: Vec<ModelParams>,
    pub optimizers: Vec<Optimizer>,
    pub step: u64,
}

impl Trainer {
    pub fn new(stage: &str, config: StageConfig, seed: u64, params: Vec<ModelParams>) -> Self {
        let optimizers = params.iter().map(|p| Optimizer::new(config.optimizer, config.lr, p)).collect();
        Self { stage: stage.to_string(), config, seed, params, optimizers, step: 0 }
    }

    pub fn resume(stage: &str, config: StageConfig, seed: u64, ck: TrainingCheckpoint) -> Result<Self> {
        if ck.stage != stage {
            return Err(DsrError::MalformedCheckpoint(format!("checkpoint is for `{}`, not `{stage}`", ck.stage)));
        }
        Ok(Self { stage: stage.to_string(), config, seed, params: ck.params, optimizers: ck.optimizers, step: ck.step })
    }

    /// Starts fresh, or resumes when a checkpoint is given.
    pub fn start(
        stage: &str,
        config: StageConfig,
        seed: u64,
        params: Vec<ModelParams>,
        resume: Option<TrainingCheckpoint>,
    ) -> Result<Self> {
        match resume {
            Some(ck) => Self::resume(stage, config, seed, ck),
            None => Ok(Self::new(stage, config, seed, params)),
        }
    }

    pub fn checkpoint(&self) -> TrainingCheckpoint {
        TrainingCheckpoint {
            stage: self.stage.clone(),
            step: self.step,
            params: self.params.clone(),
            optimizers: self.optimizers.clone(),
        }
    }

    pub fn step_rng(&self) -> ChaCha8Rng {
        derive_rng(self.seed, &format!("{}:{}", self.stage, self.step))
    }

    /// Runs until `until` steps have been taken in total (capped at the
    /// configured count). `post` runs after each update.
    pub fn run_until<F, P>(&mut self, until: u64, sink: &mut dyn ReportSink, mut f: F, post: P) -> Result<Vec<f64>>
    where
        F: FnMut(&[ModelParams], &mut ChaCha8Rng) -> Result<StepOutput>,
        P: Fn(&mut [ModelParams]),
    {
        let until = until.min(self.config.steps);
        let mut losses = Vec::new();
        while self.step < until {
            let mut rng = self.step_rng();
            let mut out = f(&self.params, &mut rng)?;
            if !out.loss.is_finite() {
                return Err(DsrError::Diverged { stage: self.stage.clone(), step: self.step + 1 });
            }
            if out.grads.len() != self.params.len() {
                return Err(DsrError::Shape(format!(
                    "{} gradient sets for {} parameter sets",
                    out.grads.len(),
                    self.params.len()
                )));
            }
            for ((p, o), g) in self.params.iter_mut().zip(&mut self.optimizers).zip(&mut out.grads) {
                if self.config.clip > 0.0 {
                    clip_global_norm(g, self.config.clip);
                }
                o.step(p, g);
            }
            post(&mut self.params);
            self.step += 1;
            sink.record(&StepRecord::new(&self.stage, self.step, out.loss, &out.extra))?;
            losses.push(out.loss);
        }
        Ok(losses)
    }

    pub fn run<F, P>(&mut self, sink: &mut dyn ReportSink, f: F, post: P) -> Result<Vec<f64>>
    where
        F: FnMut(&[ModelParams], &mut ChaCha8Rng) -> Result<StepOutput>,
        P: Fn(&mut [ModelParams]),
    {
        self.run_until(self.config.steps, sink, f, post)
    }
}
