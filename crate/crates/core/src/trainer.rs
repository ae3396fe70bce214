//! Mini-batch BEGAN training, validation, epoch selection and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Checkpoint;
use crate::error::{Error, Result};
use crate::g3began::{began_losses, convergence_metric, tau_update, BeganState, G3BeganModel, ModelConfig};
use crate::numerics::{
    adam_step_with, clip_grad_norm, sample_gaussian, AdamConfig, Array2, FeatureSeq, Graph,
    ParamEntry, ParamStore, RngState, Var,
};

const VALIDATION_STREAM: u64 = 0x7661_6c69_6461_7465;
const CHECKPOINT_KIND: &str = "g3began";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    pub gamma: f64,
    pub tau0: f64,
    /// Discriminator updates per generator update.
    pub disc_steps: usize,
    /// Fraction of clips held out for validation.
    pub val_fraction: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 5,
            grad_clip: 3.0,
            epochs: 500,
            seed: 0,
            lambda: 0.001,
            gamma: 0.5,
            tau0: 0.0,
            disc_steps: 1,
            val_fraction: 0.1,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("grad_clip", self.grad_clip),
            ("epochs", self.epochs as f64),
            ("disc_steps", self.disc_steps as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.lr >= 0.0) || !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(
                "lr, lambda and gamma must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tau0) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(
                "tau0 must lie in [0,1] and val_fraction in [0,1)".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// A training sub-clip: normalised mel frames and an optional condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub mel: FeatureSeq,
    pub cond: Option<FeatureSeq>,
}

impl Example {
    pub fn frames(&self) -> usize {
        self.mel.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: u64,
    pub epoch: usize,
    pub began: BeganState,
    /// Validation convergence metric per finished epoch.
    pub history: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub gen_adam_step: u64,
    pub disc_adam_step: u64,
    pub rng: RngState,
}

/// Scalars logged for one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lx: f64,
    pub lg: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub tau: f64,
    pub conv_metric: f64,
    pub disc_grad_norm: f64,
    pub gen_grad_norm: f64,
    pub disc_clipped_norm: f64,
    pub gen_clipped_norm: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,epoch,lx,lg,lD,lG,tau,conv_metric";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.lx,
            self.lg,
            self.loss_d,
            self.loss_g,
            self.tau,
            self.conv_metric
        )
    }
}

/// Index of the smallest metric; the earliest wins ties.
pub fn select_best_epoch(history: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &m) in history.iter().enumerate() {
        if best.is_none_or(|(_, b)| m < b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::InvalidArgument("empty metric history".into()))
}

/// Splits clips into (train, validation) with a seeded shuffle.
pub fn split_validation(
    examples: Vec<Example>,
    fraction: f64,
    seed: u64,
) -> (Vec<Example>, Vec<Example>) {
    let n = examples.len();
    let n_val = ((n as f64) * fraction).round() as usize;
    let n_val = if n > 1 { n_val.min(n - 1) } else { 0 };
    let mut order: Vec<usize> = (0..n).collect();
    RngState::new(seed).fork(VALIDATION_STREAM).shuffle(&mut order);
    let val_idx: std::collections::BTreeSet<usize> = order[..n_val].iter().copied().collect();
    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (i, ex) in examples.into_iter().enumerate() {
        if val_idx.contains(&i) {
            val.push(ex);
        } else {
            train.push(ex);
        }
    }
    (train, val)
}

/// Groups a shuffled order into batches of equal frame count, keeping the
/// order in which each length first appears.
pub fn bucket_batches(order: &[usize], frames: impl Fn(usize) -> usize, batch: usize) -> Vec<Vec<usize>> {
    let mut buckets: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in order {
        let t = frames(i);
        match buckets.iter_mut().find(|(len, _)| *len == t) {
            Some((_, v)) => v.push(i),
            None => buckets.push((t, vec![i])),
        }
    }
    buckets
        .into_iter()
        .flat_map(|(_, v)| v.chunks(batch).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect()
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: G3BeganModel,
    pub state: TrainerState,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = RngState::new(config.seed);
        let model = G3BeganModel::new(config.model.clone(), &mut root.fork(1))?;
        let state = TrainerState {
            step: 0,
            epoch: 0,
            began: BeganState {
                tau: config.tau0,
                lambda: config.lambda,
                gamma: config.gamma,
            },
            history: Vec::new(),
            best_epoch: None,
            gen_adam_step: 0,
            disc_adam_step: 0,
            rng: root.fork(2),
        };
        Ok(Self {
            config,
            model,
            state,
        })
    }

    fn check_batch(&self, batch: &[&Example]) -> Result<usize> {
        let first = batch
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let t = first.frames();
        for ex in batch {
            if ex.frames() != t {
                return Err(Error::Shape(
                    "batch sequences must share a frame count".into(),
                ));
            }
            if ex.mel.rows() != self.model.config.mel_dim {
                return Err(Error::Shape(format!(
                    "mel has {} rows, model expects {}",
                    ex.mel.rows(),
                    self.model.config.mel_dim
                )));
            }
            self.model.check_condition(t, ex.cond.as_ref())?;
        }
        Ok(t)
    }

    fn cond_var(g: &mut Graph, ex: &Example) -> Result<Option<Var>> {
        ex.cond.as_ref().map(|c| g.constant(c.clone())).transpose()
    }

    fn mean_of(g: &mut Graph, vars: &[Var]) -> Result<Var> {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = g.add(acc, v)?;
        }
        g.scale(acc, 1.0 / vars.len() as f64)
    }

    /// One discriminator update (or `disc_steps` of them) followed by one
    /// generator update, then one equilibrium update of τ.
    pub fn train_step(&mut self, batch: &[&Example]) -> Result<StepLog> {
        let t = self.check_batch(batch)?;
        let step = self.state.step + 1;
        let noise: Vec<Array2> = batch
            .iter()
            .map(|_| sample_gaussian(&mut self.state.rng, self.model.config.noise_dim, t))
            .collect();
        let adam = self.config.adam();
        let tau = self.state.began.tau;
        let fail = |e: Error| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("step {step}: {what}")),
            other => other,
        };

        let mut lx_val = 0.0;
        let mut lg_val = 0.0;
        let mut disc_norm = 0.0;
        let mut disc_clipped = 0.0;
        for _ in 0..self.config.disc_steps {
            let mut g = Graph::new();
            let mut lx_nodes = Vec::with_capacity(batch.len());
            let mut lg_nodes = Vec::with_capacity(batch.len());
            for (ex, z) in batch.iter().zip(&noise) {
                let fake = self.model.generate(z, ex.cond.as_ref()).map_err(fail)?;
                let c = Self::cond_var(&mut g, ex)?;
                let x = g.constant(ex.mel.clone())?;
                lx_nodes.push(self.model.recon_loss_node(&mut g, x, c).map_err(fail)?);
                let f = g.constant(fake)?;
                lg_nodes.push(self.model.recon_loss_node(&mut g, f, c).map_err(fail)?);
            }
            let lx = Self::mean_of(&mut g, &lx_nodes)?;
            let lg = Self::mean_of(&mut g, &lg_nodes)?;
            let neg = g.scale(lg, -tau)?;
            let loss_d = g.add(lx, neg)?;
            g.backward(loss_d).map_err(fail)?;
            lx_val = g.scalar(lx);
            lg_val = g.scalar(lg);
            let store = &mut self.model.disc_params;
            store.zero_grads();
            g.accumulate_into(store);
            disc_norm = clip_grad_norm(store, self.config.grad_clip);
            disc_clipped = store.grad_norm();
            self.state.disc_adam_step += 1;
            adam_step_with(store, &adam, self.state.disc_adam_step).map_err(fail)?;
        }

        let mut g = Graph::new();
        let mut lg_nodes = Vec::with_capacity(batch.len());
        for (ex, z) in batch.iter().zip(&noise) {
            let c = Self::cond_var(&mut g, ex)?;
            let zv = g.constant(z.clone())?;
            let fake = self.model.generator_forward(&mut g, zv, c).map_err(fail)?;
            lg_nodes.push(self.model.recon_loss_node(&mut g, fake, c).map_err(fail)?);
        }
        let loss_g = Self::mean_of(&mut g, &lg_nodes)?;
        g.backward(loss_g).map_err(fail)?;
        let store = &mut self.model.gen_params;
        store.zero_grads();
        g.accumulate_into(store);
        let gen_norm = clip_grad_norm(store, self.config.grad_clip);
        let gen_clipped = store.grad_norm();
        self.state.gen_adam_step += 1;
        adam_step_with(store, &adam, self.state.gen_adam_step).map_err(fail)?;

        let (ld, lgen) = began_losses(&self.state.began, lx_val, lg_val);
        self.state.began = tau_update(&self.state.began, lx_val, lg_val);
        self.state.step = step;
        Ok(StepLog {
            step,
            epoch: self.state.epoch,
            lx: lx_val,
            lg: lg_val,
            loss_d: ld,
            loss_g: lgen,
            tau: self.state.began.tau,
            conv_metric: convergence_metric(lx_val, lg_val, self.state.began.gamma),
            disc_grad_norm: disc_norm,
            gen_grad_norm: gen_norm,
            disc_clipped_norm: disc_clipped,
            gen_clipped_norm: gen_clipped,
        })
    }

    /// Batches for the next epoch, drawn from the trainer's RNG.
    pub fn epoch_batches(&mut self, train: &[Example]) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        self.state.rng.shuffle(&mut order);
        bucket_batches(&order, |i| train[i].frames(), self.config.batch_size)
    }

    /// Convergence metric over `clips` with noise from a fixed stream, so
    /// values are comparable across epochs.
    pub fn validation_metric(&self, clips: &[Example]) -> Result<f64> {
        if clips.is_empty() {
            return Err(Error::InvalidArgument("no validation clips".into()));
        }
        let mut rng = RngState::new(self.config.seed).fork(VALIDATION_STREAM);
        let (mut lx, mut lg) = (0.0, 0.0);
        for ex in clips {
            lx += self.model.disc_recon_loss(&ex.mel, ex.cond.as_ref())?;
            let fake = self.model.sample(&mut rng, ex.frames(), ex.cond.as_ref())?;
            lg += self.model.disc_recon_loss(&fake, ex.cond.as_ref())?;
        }
        let n = clips.len() as f64;
        Ok(convergence_metric(lx / n, lg / n, self.state.began.gamma))
    }

    /// Runs one epoch over `train`, then records the validation metric.
    /// `on_step` sees every step's log.
    pub fn run_epoch(
        &mut self,
        train: &[Example],
        val: &[Example],
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("no training clips".into()));
        }
        for batch in self.epoch_batches(train) {
            let refs: Vec<&Example> = batch.iter().map(|&i| &train[i]).collect();
            let log = self.train_step(&refs)?;
            on_step(&log);
        }
        let metric = self.validation_metric(if val.is_empty() { train } else { val })?;
        self.state.history.push(metric);
        self.state.best_epoch = Some(select_best_epoch(&self.state.history)?);
        self.state.epoch += 1;
        Ok(metric)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut blobs = Vec::new();
        push_store(&mut blobs, "gen", &self.model.gen_params);
        push_store(&mut blobs, "disc", &self.model.disc_params);
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            state: self.state.clone(),
        };
        Ok(Checkpoint {
            blobs,
            state: serde_json::to_vec(&meta)?,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_slice(&ck.state)
            .map_err(|e| Error::Corrupt(format!("trainer state: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Corrupt(format!(
                "checkpoint holds a {} model",
                meta.kind
            )));
        }
        let mut model = G3BeganModel::skeleton(meta.config.model.clone())?;
        let mut stores = BTreeMap::from([
            ("gen", ParamStore::new()),
            ("disc", ParamStore::new()),
        ]);
        restore_stores(ck, &mut stores)?;
        model.gen_params = stores.remove("gen").expect("present");
        model.disc_params = stores.remove("disc").expect("present");
        let reference = G3BeganModel::new(meta.config.model.clone(), &mut RngState::new(0))?;
        for (ours, theirs) in [
            (&model.gen_params, &reference.gen_params),
            (&model.disc_params, &reference.disc_params),
        ] {
            let same = ours.len() == theirs.len()
                && ours
                    .iter()
                    .zip(theirs.iter())
                    .all(|((a, ea), (b, eb))| a == b && ea.value.shape() == eb.value.shape());
            if !same {
                return Err(Error::Corrupt(
                    "parameters do not match the stored model config".into(),
                ));
            }
        }
        Ok(Self {
            config: meta.config,
            model,
            state: meta.state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    config: TrainConfig,
    state: TrainerState,
}

/// Writes `prefix/name`, `prefix/name#m1` and `prefix/name#m2` blobs.
pub(crate) fn push_store(blobs: &mut Vec<(String, Array2)>, prefix: &str, store: &ParamStore) {
    for (name, e) in store.iter() {
        blobs.push((format!("{prefix}/{name}"), e.value.clone()));
        blobs.push((format!("{prefix}/{name}#m1"), e.moment1.clone()));
        blobs.push((format!("{prefix}/{name}#m2"), e.moment2.clone()));
    }
}

pub(crate) fn restore_stores(
    ck: &Checkpoint,
    stores: &mut BTreeMap<&str, ParamStore>,
) -> Result<()> {
    let mut pending: BTreeMap<(String, String), [Option<Array2>; 3]> = BTreeMap::new();
    for (full, arr) in &ck.blobs {
        let (prefix, rest) = full
            .split_once('/')
            .ok_or_else(|| Error::Corrupt(format!("blob name {full} lacks a prefix")))?;
        if !stores.contains_key(prefix) {
            return Err(Error::Corrupt(format!("unexpected blob {full}")));
        }
        let (name, slot) = match rest.rsplit_once('#') {
            Some((n, "m1")) => (n, 1),
            Some((n, "m2")) => (n, 2),
            Some(_) => return Err(Error::Corrupt(format!("bad blob suffix in {full}"))),
            None => (rest, 0),
        };
        pending
            .entry((prefix.to_string(), name.to_string()))
            .or_default()[slot] = Some(arr.clone());
    }
    for ((prefix, name), [value, m1, m2]) in pending {
        let (Some(value), Some(m1), Some(m2)) = (value, m1, m2) else {
            return Err(Error::Corrupt(format!("incomplete parameter {prefix}/{name}")));
        };
        let grad = Array2::zeros(value.rows(), value.cols());
        stores
            .get_mut(prefix.as_str())
            .expect("checked above")
            .insert_entry(
                name,
                ParamEntry {
                    value,
                    grad,
                    moment1: m1,
                    moment2: m2,
                },
            )?;
    }
    Ok(())
}
