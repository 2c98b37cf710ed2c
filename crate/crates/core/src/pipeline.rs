//! Dataset + config → encoded bags → trained model → evaluation outputs.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{load_embeddings, BagEncoder, Dataset, Vocab};
use crate::error::{Error, Result};
use crate::evaluation::{attention_bias_report, predict_all, BiasReport, EvalRecord};
use crate::model::{Architecture, EncodedBag, Model};
use crate::numerics::{Checkpoint, ParamSet};
use crate::training::{run_pretrain_schedule, RunInput, StagePlan, TrainRun};

/// A dataset bound to a configuration and a vocabulary.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: TrainConfig,
    pub dataset: Dataset,
    pub encoder: BagEncoder,
    /// Directory that relative config paths resolve against.
    pub data_dir: PathBuf,
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(" ")
}

impl Experiment {
    /// Builds the vocabulary from the training split.
    pub fn new(dataset: Dataset, config: TrainConfig, data_dir: &Path) -> Self {
        let vocab = Vocab::from_bags(&dataset.train);
        Self::with_vocab(dataset, config, vocab, data_dir)
    }

    fn with_vocab(dataset: Dataset, config: TrainConfig, vocab: Vocab, data_dir: &Path) -> Self {
        let encoder = BagEncoder {
            vocab,
            maxdist: config.maxdist,
            use_paths: config.use_paths,
            max_paths: config.max_paths,
            seed: config.seed,
        };
        Experiment { config, dataset, encoder, data_dir: data_dir.to_path_buf() }
    }

    pub fn load(data_dir: &Path, config: TrainConfig) -> Result<Self> {
        Ok(Self::new(Dataset::load(data_dir)?, config, data_dir))
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture(self.encoder.vocab.len(), self.dataset.entities.len(), self.dataset.relations.len())
    }

    pub fn training_bags(&self) -> Result<Vec<EncodedBag>> {
        self.encoder.training_bags(&self.dataset.train)
    }

    pub fn test_bags(&self) -> Result<(Vec<EncodedBag>, Vec<Vec<usize>>)> {
        self.encoder.test_bags(&self.dataset.test)
    }

    /// Config, vocabulary and index spaces, stored in every checkpoint.
    pub fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("config".into(), self.config.to_text()),
            ("vocab".into(), self.encoder.vocab.to_meta()),
            ("relations".into(), self.dataset.relations.join(" ")),
            ("entities".into(), join(self.dataset.entities.iter().map(|e| e.id.clone()))),
        ]
    }

    /// Runs the configured stage plan.
    pub fn train(&self) -> Result<TrainRun> {
        self.train_with_plan(&self.config.stage_plan())
    }

    pub fn train_with_plan(&self, plan: &StagePlan) -> Result<TrainRun> {
        let bags = self.training_bags()?;
        let arch = self.architecture();
        let words = match &self.config.embeddings {
            Some(p) => load_embeddings(&self.data_dir.join(p), &self.encoder.vocab, arch.word_dim)?,
            None => Vec::new(),
        };
        let metadata = self.metadata();
        let input = RunInput { bags: &bags, metadata: &metadata, word_vectors: &words };
        run_pretrain_schedule(plan, &self.config, arch, input)
    }

    /// Records for the test split, sorted.
    pub fn evaluate(&self, model: &Model) -> Result<Vec<EvalRecord>> {
        let (bags, gold) = self.test_bags()?;
        predict_all(model, &bags, &gold)
    }

    pub fn bias_report(&self, model: &Model, bucket_width: usize) -> Result<BiasReport> {
        let (bags, _) = self.test_bags()?;
        attention_bias_report(model, &bags, bucket_width)
    }

    /// Rebuilds the experiment and model a checkpoint was trained with,
    /// over the dataset in `data_dir`.
    pub fn from_checkpoint(ckpt: &Checkpoint, data_dir: &Path) -> Result<(Self, Model)> {
        let meta = |k: &str| ckpt.meta(k).ok_or_else(|| Error::Checkpoint(format!("missing metadata `{k}`")));
        let config = TrainConfig::parse(meta("config")?)?;
        if config.hash() != ckpt.config_hash {
            return Err(Error::Checkpoint("config hash does not match the stored config".into()));
        }
        let vocab = Vocab::from_meta(meta("vocab")?)?;
        let dataset = Dataset::load(data_dir)?;
        if meta("relations")? != dataset.relations.join(" ") {
            return Err(Error::Checkpoint("relation vocabulary differs from the dataset".into()));
        }
        if meta("entities")? != join(dataset.entities.iter().map(|e| e.id.clone())) {
            return Err(Error::Checkpoint("entity set differs from the dataset".into()));
        }
        let exp = Self::with_vocab(dataset, config, vocab, data_dir);
        let mut model = Model::new(exp.architecture(), &mut ChaCha8Rng::seed_from_u64(0));
        model.load_tensors(&ckpt.tensors)?;
        for slot in model.slots_mut() {
            slot.zero_grad();
        }
        Ok((exp, model))
    }
}
