//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::TrainConfig;
use crate::data::synthetic::{desk_config, generate_synthetic, SyntheticSpec};
use crate::data::{attach_paths, Dataset, Split, WalkSettings};
use crate::error::{Error, Result};
use crate::evaluation::{write_bias_report, write_metrics};
use crate::graph::{build_graph, load_graph, write_graph};
use crate::model::{check_gradients, Mode};
use crate::numerics::Checkpoint;
use crate::pipeline::Experiment;

#[derive(Debug, Parser)]
#[command(name = "ugre", version, about = "Relation extraction over a universal graph")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the graph files of a dataset from its triplets and training sentences.
    BuildGraph(BuildGraphArgs),
    /// Attach random-walk paths to every bag of a dataset.
    SearchPaths(SearchPathsArgs),
    /// Write a synthetic dataset with planted path rules.
    GenSynthetic(GenSyntheticArgs),
    /// Train a model and write per-stage checkpoints and the loss trace.
    Train(TrainArgs),
    /// Score the test split and write the PR curve, metrics and attention bias.
    Eval(EvalArgs),
    /// Finite-difference check of the analytic gradients on toy batches.
    Gradcheck(GradcheckArgs),
    /// Group path attention weights on the test split by type and length.
    BiasReport(BiasReportArgs),
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Extra triplet files to add as KG edges.
    #[arg(long = "kg")]
    pub extra_kg: Vec<PathBuf>,
    /// Also add test sentences as textual edges.
    #[arg(long)]
    pub include_test_text: bool,
    /// Output directory for the graph files (defaults to the dataset).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchPathsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding the graph files (defaults to the dataset).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 200)]
    pub num_walks: usize,
    #[arg(long, default_value_t = 100)]
    pub max_paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Config file (defaults to `config.txt` in the dataset, then built-in defaults).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run the path-type pretraining stages first.
    #[arg(long)]
    pub pretrain: bool,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Override a config key, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (defaults to `<data>/run`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Path length bucket width of the bias report.
    #[arg(long, default_value_t = 1)]
    pub bucket_width: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// `base`, `ranking`, or both when omitted.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub bags: usize,
    /// Coordinates sampled per parameter family.
    #[arg(long, default_value_t = 20)]
    pub per_slot: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct BiasReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub bucket_width: usize,
}

/// Parses `argv` and runs it. Returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::BuildGraph(a) => build_graph_cmd(a),
        Command::SearchPaths(a) => search_paths(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::BiasReport(a) => bias_report(a),
    }
}

fn build_graph_cmd(a: BuildGraphArgs) -> Result<()> {
    let triplets = a.data.join("triplets.tsv");
    let train = a.data.join(Split::Train.dir()).join("sentences.tsv");
    let test = a.data.join(Split::Test.dir()).join("sentences.tsv");
    let mut kg: Vec<&Path> = vec![&triplets];
    kg.extend(a.extra_kg.iter().map(PathBuf::as_path));
    let mut text: Vec<&Path> = vec![&train];
    if a.include_test_text {
        text.push(&test);
    }
    let g = build_graph(&a.data.join("entities.txt"), &kg, &text)?;
    let out = a.out.unwrap_or(a.data);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_graph(&g, &out)?;
    println!("graph: {} entities, {} edges -> {}", g.entities().len(), g.edges().len(), out.display());
    Ok(())
}

fn search_paths(a: SearchPathsArgs) -> Result<()> {
    let mut ds = Dataset::load(&a.data)?;
    let g = load_graph(a.graph.as_deref().unwrap_or(&a.data))?;
    let walk = WalkSettings { max_steps: a.max_steps, num_walks: a.num_walks, max_paths: a.max_paths, seed: a.seed };
    attach_paths(&mut ds, &g, walk)?;
    ds.save(&a.data)?;
    let paths: usize = ds.train.iter().chain(&ds.test).map(|b| b.paths.len()).sum();
    println!("attached {paths} paths to {} bags", ds.train.len() + ds.test.len());
    Ok(())
}

fn gen_synthetic(a: GenSyntheticArgs) -> Result<()> {
    let mut spec = SyntheticSpec::new(a.seed);
    if let Some(noise) = a.noise {
        spec.noise = noise;
    }
    let syn = generate_synthetic(&spec)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    syn.write(&a.out, &desk_config(a.seed))?;
    println!(
        "synthetic: {} train bags, {} test bags, {} of {} sentences corrupted -> {}",
        syn.dataset.train.len(),
        syn.dataset.test.len(),
        syn.corrupted,
        syn.sentences,
        a.out.display()
    );
    Ok(())
}

fn load_config(explicit: Option<&Path>, data: &Path) -> Result<TrainConfig> {
    match explicit {
        Some(p) => TrainConfig::load(p),
        None => {
            let p = data.join("config.txt");
            if p.exists() {
                TrainConfig::load(&p)
            } else {
                Ok(TrainConfig::default())
            }
        }
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config = load_config(a.config.as_deref(), &a.data)?;
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::InvalidArgument(format!("expected KEY=VALUE, got `{kv}`")))?;
        config.set(k.trim(), v.trim())?;
    }
    if a.pretrain {
        config.pretrain = true;
    }
    if let Some(mode) = a.mode {
        config.mode = mode;
    }
    config.validate()?;
    let exp = Experiment::load(&a.data, config)?;
    let run = exp.train()?;
    let out = a.out.unwrap_or_else(|| a.data.join("run"));
    run.write(&out)?;
    for r in &run.loss_trace {
        println!("epoch {} [{}] loss {:.6}", r.epoch, r.stage.tag(), r.loss);
    }
    println!("checkpoints -> {}", out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (exp, model) = Experiment::from_checkpoint(&ckpt, &a.data)?;
    let records = exp.evaluate(&model)?;
    let metrics = write_metrics(&a.out, &records)?;
    write_bias_report(&a.out, &exp.bias_report(&model, a.bucket_width)?)?;
    print!("{}", metrics.to_text());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let modes = match a.mode {
        Some(m) => vec![m],
        None => vec![Mode::Base, Mode::Ranking],
    };
    let mut ok = true;
    for mode in modes {
        let report = check_gradients(mode, a.seed, a.bags, a.per_slot, a.eps, a.tol)?;
        println!(
            "{mode}: {} coordinates over {} families, max relative error {:.3e}, {} failures",
            report.checked.len(),
            report.families().len(),
            report.max_rel_error(),
            report.failures.len()
        );
        for f in &report.failures {
            println!("  {}[{}] analytic {:.6e} numeric {:.6e}", f.slot, f.index, f.analytic, f.numeric);
        }
        ok &= report.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument("gradient check failed".into()))
    }
}

fn bias_report(a: BiasReportArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (exp, model) = Experiment::from_checkpoint(&ckpt, &a.data)?;
    let report = exp.bias_report(&model, a.bucket_width)?;
    write_bias_report(&a.out, &report)?;
    print!("{}", report.to_csv());
    Ok(())
}
