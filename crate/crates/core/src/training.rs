//! Mini-batch SGD on the joint objective, staged path-type pretraining, and
//! per-stage checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::PathType;
use crate::model::{Architecture, EncodedBag, Model};
use crate::numerics::{sgd_step, Checkpoint, NamedTensor, ParamSet};

/// Which paths a stage lets into the model. Sentences are always kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageFilter {
    Textual,
    Hybrid,
    Kg,
    All,
}

impl StageFilter {
    pub fn tag(self) -> &'static str {
        match self {
            StageFilter::Textual => "textual",
            StageFilter::Hybrid => "hybrid",
            StageFilter::Kg => "kg",
            StageFilter::All => "all",
        }
    }

    pub fn admits(self, t: PathType) -> bool {
        match self {
            StageFilter::Textual => t == PathType::Textual,
            StageFilter::Hybrid => t == PathType::Hybrid,
            StageFilter::Kg => t == PathType::Kg,
            StageFilter::All => true,
        }
    }
}

impl std::str::FromStr for StageFilter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "textual" => Ok(StageFilter::Textual),
            "hybrid" => Ok(StageFilter::Hybrid),
            "kg" => Ok(StageFilter::Kg),
            "all" => Ok(StageFilter::All),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub stages: Vec<(StageFilter, usize)>,
}

impl StagePlan {
    pub fn plain(epochs: usize) -> Self {
        StagePlan { stages: vec![(StageFilter::All, epochs)] }
    }

    /// Textual, Hybrid and KG stages of `epochs` each, then `finetune` epochs on all paths.
    pub fn pretrain(epochs: usize, finetune: usize) -> Self {
        StagePlan {
            stages: vec![
                (StageFilter::Textual, epochs),
                (StageFilter::Hybrid, epochs),
                (StageFilter::Kg, epochs),
                (StageFilter::All, finetune),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.stages.last() {
            None => return Err(Error::InvalidArgument("empty stage plan".into())),
            Some((f, _)) if *f != StageFilter::All => {
                return Err(Error::InvalidArgument("the last stage must use all paths".into()))
            }
            _ => {}
        }
        if self.stages.iter().any(|&(_, e)| e == 0) {
            return Err(Error::InvalidArgument("every stage needs at least one epoch".into()));
        }
        Ok(())
    }
}

/// Copy of `bag` keeping only the paths `filter` admits.
pub fn filter_bag_paths(bag: &EncodedBag, filter: StageFilter) -> EncodedBag {
    EncodedBag {
        head: bag.head,
        tail: bag.tail,
        label: bag.label,
        sentences: bag.sentences.clone(),
        paths: bag.paths.iter().filter(|p| filter.admits(p.path_type)).cloned().collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    /// 1-based, counted across stages.
    pub epoch: usize,
    pub stage: StageFilter,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: StageFilter,
    pub epochs: usize,
    /// Path vectors that entered forward passes, by [`PathType::index`].
    pub path_type_counts: [usize; 3],
    /// Digest of the parameters when the stage began.
    pub start_digest: String,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: Model,
    pub stages: Vec<StageReport>,
    pub loss_trace: Vec<LossRecord>,
}

impl TrainRun {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        &self.stages.last().expect("at least one stage").checkpoint
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,stage,loss\n");
        for r in &self.loss_trace {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.stage.tag(), r.loss);
        }
        s
    }

    /// Writes `stage<k>_<tag>.ckpt` per stage, `model.ckpt` and `loss.csv`.
    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut written = Vec::new();
        for (k, s) in self.stages.iter().enumerate() {
            let path = out.join(format!("stage{}_{}.ckpt", k + 1, s.stage.tag()));
            s.checkpoint.save(&path)?;
            written.push(path);
        }
        let path = out.join("model.ckpt");
        self.final_checkpoint().save(&path)?;
        written.push(path);
        let path = out.join("loss.csv");
        crate::textio::write_file(&path, &self.loss_csv())?;
        written.push(path);
        Ok(written)
    }
}

/// Hex SHA-256 over names, shapes and little-endian values.
pub fn tensor_digest(tensors: &[NamedTensor]) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        h.update(t.name.as_bytes());
        for &d in t.tensor.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.tensor.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Session<'a> {
    config: &'a TrainConfig,
    model: Model,
    rng: ChaCha8Rng,
    batches: usize,
}

impl<'a> Session<'a> {
    /// The one generator is seeded here and first used for initialization.
    /// Pretrained word vectors then overwrite their rows.
    fn new(config: &'a TrainConfig, arch: Architecture, words: &[(usize, Vec<f64>)]) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = Model::new(arch, &mut rng);
        let table = &mut model.net.word_emb.value;
        for (id, v) in words {
            if *id >= table.rows() || v.len() != table.row_len() {
                return Err(Error::ShapeMismatch { left: table.shape().to_vec(), right: vec![*id, v.len()] });
            }
            table.row_mut(*id).copy_from_slice(v);
        }
        Ok(Session { config, model, rng, batches: 0 })
    }

    fn epoch(&mut self, bags: &[EncodedBag], stage: StageFilter, counts: &mut [usize; 3]) -> Result<f64> {
        if bags.is_empty() {
            return Err(Error::Empty("training bags"));
        }
        let mut order: Vec<usize> = (0..bags.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let refs: Vec<&EncodedBag> = chunk.iter().map(|&i| &bags[i]).collect();
            let (loss, grads, c) = self.model.batch_loss_and_grad(&refs, Some(&mut self.rng))?;
            self.batches += 1;
            if !loss.is_finite() {
                return Err(Error::Divergence { stage: stage.tag().into(), batch: self.batches });
            }
            self.model.accumulate(&grads);
            sgd_step(self.model.slots_mut(), self.config.lr_kg, self.config.lr_net)?;
            for k in 0..3 {
                counts[k] += c[k];
            }
            total += loss * chunk.len() as f64;
        }
        Ok(total / bags.len() as f64)
    }

    fn checkpoint(&self, stage: StageFilter, index: usize, metadata: &[(String, String)]) -> Checkpoint {
        let mut meta = metadata.to_vec();
        meta.push(("stage_index".into(), index.to_string()));
        Checkpoint {
            config_hash: self.config.hash(),
            stage: stage.tag().into(),
            metadata: meta,
            tensors: self.model.named_tensors(),
        }
    }
}

/// What a run starts from besides the config.
#[derive(Debug, Clone, Copy)]
pub struct RunInput<'a> {
    pub bags: &'a [EncodedBag],
    /// Copied into every checkpoint.
    pub metadata: &'a [(String, String)],
    /// `(vocab id, vector)` rows that replace the random word embeddings.
    pub word_vectors: &'a [(usize, Vec<f64>)],
}

impl<'a> RunInput<'a> {
    pub fn new(bags: &'a [EncodedBag]) -> Self {
        RunInput { bags, metadata: &[], word_vectors: &[] }
    }
}

/// Runs the stages in order on one model and one generator. Each stage sees
/// only the paths its filter admits; sentences and the KG term are always on.
pub fn run_pretrain_schedule(plan: &StagePlan, config: &TrainConfig, arch: Architecture, input: RunInput) -> Result<TrainRun> {
    plan.validate()?;
    let (bags, metadata) = (input.bags, input.metadata);
    let mut session = Session::new(config, arch, input.word_vectors)?;
    let mut stages = Vec::new();
    let mut loss_trace = Vec::new();
    let mut epoch = 0;
    for (index, &(filter, epochs)) in plan.stages.iter().enumerate() {
        let filtered: Vec<EncodedBag>;
        let stage_bags = if filter == StageFilter::All {
            bags
        } else {
            filtered = bags.iter().map(|b| filter_bag_paths(b, filter)).collect();
            &filtered
        };
        let start_digest = tensor_digest(&session.model.named_tensors());
        let mut counts = [0usize; 3];
        for _ in 0..epochs {
            epoch += 1;
            let loss = session.epoch(stage_bags, filter, &mut counts)?;
            loss_trace.push(LossRecord { epoch, stage: filter, loss });
        }
        let checkpoint = session.checkpoint(filter, index + 1, metadata);
        stages.push(StageReport { stage: filter, epochs, path_type_counts: counts, start_digest, checkpoint });
    }
    Ok(TrainRun { model: session.model, stages, loss_trace })
}

/// Plain training on all paths for `config.epochs` epochs.
pub fn train(config: &TrainConfig, arch: Architecture, input: RunInput) -> Result<TrainRun> {
    let (bags, metadata) = (input.bags, input.metadata);
    let mut session = Session::new(config, arch, input.word_vectors)?;
    let start_digest = tensor_digest(&session.model.named_tensors());
    let mut counts = [0usize; 3];
    let mut loss_trace = Vec::new();
    for epoch in 1..=config.epochs {
        let loss = session.epoch(bags, StageFilter::All, &mut counts)?;
        loss_trace.push(LossRecord { epoch, stage: StageFilter::All, loss });
    }
    let checkpoint = session.checkpoint(StageFilter::All, 1, metadata);
    let report = StageReport { stage: StageFilter::All, epochs: config.epochs, path_type_counts: counts, start_digest, checkpoint };
    Ok(TrainRun { model: session.model, stages: vec![report], loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_bag, toy_architecture, Mode};

    fn bags(n: usize, seed: u64) -> (Architecture, Vec<EncodedBag>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = toy_architecture(Mode::Ranking);
        let bags = (0..n).map(|_| random_bag(&mut rng, &arch, 2, 4)).collect();
        (arch, bags)
    }

    fn config() -> TrainConfig {
        TrainConfig { batch_size: 4, epochs: 2, pretrain_epochs: 1, lr_net: 0.1, lr_kg: 0.1, ..TrainConfig::default() }
    }

    #[test]
    fn filter_keeps_sentences_and_matching_paths() {
        let (_, b) = bags(1, 1);
        let bag = &b[0];
        let types: Vec<PathType> = bag.paths.iter().map(|p| p.path_type).collect();
        assert_eq!(types, vec![PathType::Kg, PathType::Textual, PathType::Hybrid, PathType::Kg]);
        let hybrid = filter_bag_paths(bag, StageFilter::Hybrid);
        assert_eq!(hybrid.paths, vec![bag.paths[2].clone()]);
        assert_eq!(hybrid.sentences, bag.sentences);
        assert_eq!(&filter_bag_paths(bag, StageFilter::All), bag);
        let mut kg_only = bag.clone();
        kg_only.paths.retain(|p| p.path_type != PathType::Textual);
        assert!(filter_bag_paths(&kg_only, StageFilter::Textual).paths.is_empty());
    }

    #[test]
    fn plan_validation() {
        assert!(StagePlan::pretrain(3, 10).validate().is_ok());
        assert!(StagePlan { stages: vec![] }.validate().is_err());
        assert!(StagePlan { stages: vec![(StageFilter::Kg, 2)] }.validate().is_err());
        assert!(StagePlan { stages: vec![(StageFilter::All, 0)] }.validate().is_err());
    }

    #[test]
    fn stages_are_isolated_and_continuous() {
        let (arch, b) = bags(10, 2);
        let run = run_pretrain_schedule(&StagePlan::pretrain(1, 1), &config(), arch, RunInput::new(&b)).unwrap();
        let tags: Vec<&str> = run.stages.iter().map(|s| s.checkpoint.stage.as_str()).collect();
        assert_eq!(tags, ["textual", "hybrid", "kg", "all"]);
        for s in &run.stages[..3] {
            for t in PathType::ALL {
                if !s.stage.admits(t) {
                    assert_eq!(s.path_type_counts[t.index()], 0);
                }
            }
        }
        for w in run.stages.windows(2) {
            assert_eq!(w[1].start_digest, tensor_digest(&w[0].checkpoint.tensors));
        }
    }

    #[test]
    fn plain_plan_equals_train() {
        let (arch, b) = bags(9, 3);
        let cfg = config();
        let a = train(&cfg, arch.clone(), RunInput::new(&b)).unwrap();
        let s = run_pretrain_schedule(&StagePlan::plain(cfg.epochs), &cfg, arch, RunInput::new(&b)).unwrap();
        assert_eq!(a.final_checkpoint().to_bytes(), s.final_checkpoint().to_bytes());
        assert_eq!(a.loss_csv(), s.loss_csv());
    }

    #[test]
    fn loss_decreases_and_divergence_is_reported() {
        let (arch, b) = bags(8, 4);
        let mut cfg = config();
        cfg.epochs = 8;
        cfg.dropout = 0.0;
        let run = train(&cfg, arch.clone(), RunInput::new(&b)).unwrap();
        assert!(run.loss_trace.last().unwrap().loss < run.loss_trace[0].loss);
        cfg.lr_net = 1e300;
        cfg.lr_kg = 1e300;
        let err = train(&cfg, arch, RunInput::new(&b)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. } | Error::NonFiniteGradient(_)), "{err}");
    }
}
