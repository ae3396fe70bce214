use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::leadsheet::LeadSheet;
use super::model::{ChordGenConfig, ChordGenModel};
use crate::container::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{adam_step_with, clip_grad_norm, AdamConfig, Graph, ParamStore, RngState};
use crate::trainer::{push_store, restore_stores};

const CHECKPOINT_KIND: &str = "chordgen";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChordTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub model: ChordGenConfig,
}

impl Default for ChordTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            grad_clip: 3.0,
            seed: 0,
            model: ChordGenConfig::default(),
        }
    }
}

impl ChordTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.batch_size == 0 || !(self.grad_clip > 0.0) {
            return Err(Error::InvalidArgument(
                "chord training needs lr >= 0, batch_size > 0 and grad_clip > 0".into(),
            ));
        }
        self.model.validate()
    }
}

/// Teacher-forced maximum-likelihood training of a chord model.
#[derive(Clone, Debug)]
pub struct ChordTrainer {
    pub config: ChordTrainConfig,
    pub model: ChordGenModel,
    pub step: u64,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: ChordTrainConfig,
    step: u64,
    rng: RngState,
}

impl ChordTrainer {
    pub fn new(config: ChordTrainConfig) -> Result<Self> {
        config.validate()?;
        let root = RngState::new(config.seed);
        let model = ChordGenModel::new(config.model.clone(), &mut root.fork(1))?;
        Ok(Self {
            model,
            step: 0,
            rng: root.fork(2),
            config,
        })
    }

    /// Mean teacher-forced NLL of `sheets` without updating anything.
    pub fn nll(&self, sheets: &[LeadSheet]) -> Result<f64> {
        if sheets.is_empty() {
            return Err(Error::InvalidArgument("no lead sheets".into()));
        }
        let mut total = 0.0;
        for s in sheets {
            let mut g = Graph::new();
            let loss = self.model.sheet_loss(&mut g, s)?;
            total += g.scalar(loss);
        }
        Ok(total / sheets.len() as f64)
    }

    /// One Adam update on the mean per-sheet NLL; returns that NLL.
    pub fn train_step(&mut self, batch: &[&LeadSheet]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let store = &mut self.model.params;
        store.zero_grads();
        let mut total = 0.0;
        for sheet in batch {
            let mut g = Graph::new();
            let loss = self.model.sheet_loss(&mut g, sheet)?;
            let loss = g.scale(loss, 1.0 / batch.len() as f64)?;
            g.backward(loss)?;
            total += g.scalar(loss);
            g.accumulate_into(&mut self.model.params);
        }
        clip_grad_norm(&mut self.model.params, self.config.grad_clip);
        self.step += 1;
        let adam = AdamConfig {
            lr: self.config.lr,
            ..AdamConfig::default()
        };
        adam_step_with(&mut self.model.params, &adam, self.step)?;
        Ok(total)
    }

    /// One shuffled pass over `corpus`; returns the mean batch NLL.
    pub fn run_epoch(&mut self, corpus: &[LeadSheet]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("no lead sheets".into()));
        }
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        self.rng.shuffle(&mut order);
        let mut sum = 0.0;
        let chunks: Vec<&[usize]> = order.chunks(self.config.batch_size).collect();
        for chunk in &chunks {
            let batch: Vec<&LeadSheet> = chunk.iter().map(|&i| &corpus[i]).collect();
            sum += self.train_step(&batch)?;
        }
        Ok(sum / chunks.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut blobs = Vec::new();
        push_store(&mut blobs, "cg", &self.model.params);
        let meta = Meta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            step: self.step,
            rng: self.rng.clone(),
        };
        Ok(Checkpoint {
            blobs,
            state: serde_json::to_vec(&meta)?,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: Meta = serde_json::from_slice(&ck.state)
            .map_err(|e| Error::Corrupt(format!("chord trainer state: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Corrupt(format!("checkpoint holds a {} model", meta.kind)));
        }
        let mut stores = BTreeMap::from([("cg", ParamStore::new())]);
        restore_stores(ck, &mut stores)?;
        let params = stores.remove("cg").expect("present");
        let reference = ChordGenModel::skeleton(meta.config.model.clone())?;
        let fresh = ChordGenModel::new(meta.config.model.clone(), &mut RngState::new(0))?;
        let same = params.len() == fresh.params.len()
            && params
                .iter()
                .zip(fresh.params.iter())
                .all(|((a, ea), (b, eb))| a == b && ea.value.shape() == eb.value.shape());
        if !same {
            return Err(Error::Corrupt("parameters do not match the stored chord model config".into()));
        }
        let mut model = reference;
        model.params = params;
        Ok(Self {
            config: meta.config,
            model,
            step: meta.step,
            rng: meta.rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(melody: bool) -> ChordTrainConfig {
        ChordTrainConfig {
            lr: 1e-2,
            batch_size: 2,
            seed: 7,
            model: ChordGenConfig {
                embed_dim: 8,
                hidden_dim: 16,
                layers: 1,
                melody,
            },
            ..ChordTrainConfig::default()
        }
    }

    fn sheet() -> LeadSheet {
        LeadSheet::from_json(
            r#"{"key":"C","tempo":120,"time_signature":"4/4","beats":[
                {"chord":"C:maj","melody":60},{"chord":"A:min","melody":69},
                {"chord":"F:maj","melody":65},{"chord":"G:7","melody":67}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn nll_starts_at_log_vocab_and_drops() {
        let mut t = ChordTrainer::new(tiny_config(false)).unwrap();
        t.model.zero_output_projection();
        let corpus = vec![sheet()];
        let start = t.nll(&corpus).unwrap();
        assert!((start - 612f64.ln()).abs() < 1e-9);
        for _ in 0..20 {
            t.run_epoch(&corpus).unwrap();
        }
        assert!(t.nll(&corpus).unwrap() < start - 1.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut t = ChordTrainer::new(tiny_config(true)).unwrap();
        t.run_epoch(&[sheet(), sheet().transpose(3)]).unwrap();
        let bytes = t.to_checkpoint().unwrap().to_bytes().unwrap();
        let back = ChordTrainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint().unwrap().to_bytes().unwrap(), bytes);
        assert_eq!(back.step, 1);
    }
}
