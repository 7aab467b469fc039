//! Stage commands behind the command-line driver. Each command reads its
//! inputs from `paths.*`, writes into a fresh `<out_dir>/<command>-<time>-s<seed>`
//! directory together with the effective config, and returns the list of
//! artifacts it wrote.

pub mod checkpoint;
pub mod config;

pub use checkpoint::{Checkpoint, Persist};
pub use config::RunConfig;

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attribution::{rank_and_select, LayerReport};
use crate::degrade::dataset::{read_dataset, write_dataset};
use crate::degrade::{make_pair, DegradationKind, Sampler};
use crate::error::{Error, Result};
use crate::imageio::{read_ppm, write_ppm};
use crate::masking::{plan, sample_mask};
use crate::nn::{AdaSam, AdaSamConfig, Extractor, Network, Restorer, RestorerConfig, Rfr};
use crate::pipeline::report::{format_cka, format_records, format_summary};
use crate::pipeline::texture::texture_accuracy;
use crate::pipeline::{
    apply_report, evaluate, finetune, mac_scores, samples, train_extractor, twin_mask_infer, ExtractorTraining,
    FinetuneConfig, MacConfig, Model, PretrainConfig, Pretrainer, Sample, P,
};
use crate::rng::{derive, stream, Purpose};

pub const CONFIG_FILE: &str = "config.toml";
pub const STAGE1: &str = "stage1.mrckpt";
pub const STAGE2: &str = "stage2.mrckpt";
pub const EXTRACTOR: &str = "extractor.mrckpt";
pub const REPORT: &str = "layers.txt";
pub const LOSS_LOG: &str = "loss.tsv";

/// Offset between training and test clean-image indices.
const TEST_INDEX_BASE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Pretrain,
    MacRank,
    Finetune,
    Eval,
    TwinInfer,
    Extractor,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Synth,
        Command::Pretrain,
        Command::MacRank,
        Command::Finetune,
        Command::Eval,
        Command::TwinInfer,
        Command::Extractor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Pretrain => "pretrain",
            Command::MacRank => "mac-rank",
            Command::Finetune => "finetune",
            Command::Eval => "eval",
            Command::TwinInfer => "twin-infer",
            Command::Extractor => "extractor",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownName(format!("command `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    /// Human-readable result printed by the driver.
    pub summary: String,
}

struct Run {
    dir: PathBuf,
    artifacts: Vec<PathBuf>,
    summary: String,
}

impl Run {
    fn start(command: Command, config: &RunConfig) -> Result<Self> {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S%.3f");
        let base = format!("{command}-{stamp}-s{}", config.run.seed);
        let mut dir = config.run.out_dir.join(&base);
        let mut n = 1;
        while dir.exists() {
            dir = config.run.out_dir.join(format!("{base}-{n}"));
            n += 1;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut run = Run {
            dir,
            artifacts: Vec::new(),
            summary: String::new(),
        };
        run.write(CONFIG_FILE, config.to_text().as_bytes())?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(path.clone());
        Ok(path)
    }

    fn save(&mut self, name: &str, ckpt: &Checkpoint) -> Result<PathBuf> {
        self.write(name, &ckpt.to_bytes())
    }

    fn finish(self) -> RunOutcome {
        RunOutcome {
            dir: self.dir,
            artifacts: self.artifacts,
            summary: self.summary,
        }
    }
}

fn required<'a>(path: Option<&'a Path>, key: &str, hint: &str) -> Result<&'a Path> {
    match path {
        Some(p) if p.exists() => Ok(p),
        Some(p) => Err(Error::MissingArtifact {
            path: p.to_path_buf(),
            hint: format!("`{key}` points at nothing; {hint}"),
        }),
        None => Err(Error::MissingArtifact {
            path: PathBuf::from(format!("<{key}>")),
            hint: format!("`{key}` is not set; {hint}"),
        }),
    }
}

const DATA_HINT: &str = "run `maskrestore synth` and pass its run directory with --data";
const STAGE1_HINT: &str = "run `maskrestore pretrain` and pass its stage1.mrckpt with --checkpoint";
const REPORT_HINT: &str =
    "run `maskrestore mac-rank` and pass its layers.txt with --report, or set mac.k_percent=100 to fine-tune every layer";

fn train_set(config: &RunConfig) -> Result<Vec<Sample>> {
    let root = required(config.paths.data.as_deref(), "paths.data", DATA_HINT)?;
    Ok(samples(&read_dataset(&root.join("train"))?))
}

/// Test sets in config order: training kinds first, then held-out kinds,
/// skipping kinds the dataset lacks.
fn test_sets(config: &RunConfig) -> Result<Vec<(String, Vec<Sample>)>> {
    let root = required(config.paths.data.as_deref(), "paths.data", DATA_HINT)?.join("test");
    let mut sets = Vec::new();
    for kind in config.train_kinds()?.into_iter().chain(config.ood_kinds()?) {
        let dir = root.join(kind.name());
        if dir.is_dir() {
            sets.push((kind.name().to_string(), samples(&read_dataset(&dir)?)));
        }
    }
    if sets.is_empty() {
        return Err(Error::MissingArtifact {
            path: root,
            hint: format!("no test sets for the configured kinds; {DATA_HINT}"),
        });
    }
    Ok(sets)
}

fn load_checkpoint(config: &RunConfig) -> Result<Checkpoint> {
    Checkpoint::load(required(config.paths.checkpoint.as_deref(), "paths.checkpoint", STAGE1_HINT)?)
}

fn model_from(ckpt: &Checkpoint) -> Result<Model> {
    let restorer: Restorer<P> = ckpt.get()?;
    let fusion = if ckpt.has::<Rfr<P>>() && ckpt.has::<Extractor<P>>() {
        Some((ckpt.get()?, ckpt.get()?))
    } else {
        None
    };
    Ok(Model { restorer, fusion })
}

/// Clean-image seed of training pair `i` or test pair `i`; test scenes are
/// shared across kinds so sets pair up by position.
pub fn clean_seed(seed: u64, test: bool, i: usize) -> u64 {
    derive(seed, Purpose::CleanImage, i as u64 + if test { TEST_INDEX_BASE } else { 0 })
}

fn synth(config: &RunConfig, run: &mut Run) -> Result<()> {
    let seed = config.run.seed;
    let size = config.data.size;
    let mix: Vec<Sampler> = config.train_kinds()?.into_iter().map(Sampler::default_for).collect();
    let train = (0..config.data.train)
        .map(|i| make_pair(clean_seed(seed, false, i), &mix, size))
        .collect::<Result<Vec<_>>>()?;
    let manifest = write_dataset(&run.path("train"), &train)?;
    run.artifacts.push(manifest);
    let mut kinds = config.train_kinds()?;
    kinds.extend(config.ood_kinds()?);
    for kind in kinds {
        let one = [Sampler::default_for(kind)];
        let test = (0..config.data.test)
            .map(|i| make_pair(clean_seed(seed, true, i), &one, size))
            .collect::<Result<Vec<_>>>()?;
        let manifest = write_dataset(&run.path(&format!("test/{kind}")), &test)?;
        run.artifacts.push(manifest);
        let _ = writeln!(run.summary, "test/{kind}: {} pairs", test.len());
    }
    let _ = writeln!(run.summary, "train: {} pairs", train.len());
    Ok(())
}

fn pretrain_config(config: &RunConfig) -> Result<PretrainConfig> {
    let p = &config.pretrain;
    Ok(PretrainConfig {
        steps: p.steps,
        batch: p.batch,
        mask_ratio: p.mask_ratio,
        mask_weight: p.mask_weight,
        lr_max: p.lr_max,
        lr_min: p.lr_min,
        mode: config.pretrain_mode()?,
        seed: config.run.seed,
        ..Default::default()
    })
}

fn pretrain(config: &RunConfig, run: &mut Run) -> Result<()> {
    let data = train_set(config)?;
    let seed = config.run.seed;
    let restorer = Restorer::new(RestorerConfig::default(), seed);
    let adasam = AdaSam::new(AdaSamConfig::default(), seed)?;
    let mut trainer = Pretrainer::new(restorer, adasam, pretrain_config(config)?)?;
    let mut log = String::from("step\tlr\trestoration_l1\tmask_loss\n");
    let every = config.pretrain.checkpoint_every;
    let mut last = None;
    while !trainer.is_done() {
        let s = trainer.step(&data)?;
        let _ = writeln!(log, "{}\t{:e}\t{:.6}\t{:.6e}", s.step, s.lr, s.restoration, s.mask);
        let done = trainer.step_index();
        if every > 0 && done % every == 0 && !trainer.is_done() {
            let ckpt = Checkpoint::new(seed, done as u64).with(&trainer.restorer).with(&trainer.adasam);
            run.save(&format!("checkpoints/step{done:06}.mrckpt"), &ckpt)?;
        }
        last = Some(s);
    }
    run.write(LOSS_LOG, log.as_bytes())?;
    let ckpt = Checkpoint::new(seed, trainer.step_index() as u64)
        .with(&trainer.restorer)
        .with(&trainer.adasam);
    let path = run.save(STAGE1, &ckpt)?;
    if let Some(s) = last {
        let _ = writeln!(run.summary, "final masked-region L1 {:.4}", s.restoration);
    }
    let _ = writeln!(run.summary, "checkpoint {}", path.display());
    Ok(())
}

/// The first `probes` training samples of every training kind.
fn probes(data: &[Sample], kinds: &[DegradationKind], per_kind: usize) -> Vec<Sample> {
    kinds
        .iter()
        .flat_map(|k| data.iter().filter(move |s| s.kind == *k).take(per_kind))
        .cloned()
        .collect()
}

fn mac_rank(config: &RunConfig, run: &mut Run) -> Result<()> {
    let ckpt = load_checkpoint(config)?;
    let restorer: Restorer<P> = ckpt.get()?;
    let adasam: AdaSam<P> = ckpt.get()?;
    let data = train_set(config)?;
    let probe_set = probes(&data, &config.train_kinds()?, config.mac.probes);
    let m = &config.mac;
    let mac = MacConfig {
        delta: m.delta,
        steps: m.steps,
        path_ratio: m.path_ratio,
        mask_ratio: config.pretrain.mask_ratio,
        quadrature: config.quadrature()?,
        aggregation: config.aggregation()?,
        seed: config.run.seed,
    };
    let scores = mac_scores(&restorer, &adasam, &probe_set, &mac)?;
    let report = rank_and_select(&scores, m.k_percent)?;
    let path = run.write(REPORT, report.to_text().as_bytes())?;
    let _ = writeln!(
        run.summary,
        "{} probes, selected {}: {}\nreport {}",
        probe_set.len(),
        report.selected_names().len(),
        report.selected_names().join(", "),
        path.display()
    );
    Ok(())
}

/// Extractor weights shipped with the crate, produced by
/// `maskrestore extractor` with default settings.
const BUNDLED_EXTRACTOR: &[u8] = include_bytes!("../../fixtures/extractor.mrckpt");

/// The frozen texture extractor that fusion uses unless `paths.extractor`
/// names another one.
pub fn bundled_extractor() -> Result<Extractor<P>> {
    Ok(Checkpoint::from_bytes(BUNDLED_EXTRACTOR, "bundled extractor")?.get::<Extractor<P>>()?.freeze())
}

fn extractor(config: &RunConfig) -> Result<Extractor<P>> {
    match &config.paths.extractor {
        Some(p) => {
            let p = required(Some(p), "paths.extractor", "run `maskrestore extractor` first")?;
            Ok(Checkpoint::load(p)?.get::<Extractor<P>>()?.freeze())
        }
        None => bundled_extractor(),
    }
}

fn train_extractor_command(config: &RunConfig, run: &mut Run) -> Result<()> {
    let cfg = ExtractorTraining {
        steps: config.extractor.steps,
        size: config.data.size,
        seed: config.run.seed,
        ..Default::default()
    };
    let (e, log) = train_extractor(&cfg)?;
    let text: String = log.iter().enumerate().map(|(i, l)| format!("{i}\t{l:.6}\n")).collect();
    run.write(LOSS_LOG, format!("step\tcross_entropy\n{text}").as_bytes())?;
    let path = run.save(EXTRACTOR, &Checkpoint::new(config.run.seed, log.len() as u64).with(&e))?;
    let accuracy = texture_accuracy(&e, derive(config.run.seed, Purpose::Test, 0), 16, config.data.size)?;
    let _ = writeln!(run.summary, "held-out texture accuracy {accuracy:.3}\nextractor {}", path.display());
    Ok(())
}

fn finetune_command(config: &RunConfig, run: &mut Run) -> Result<()> {
    let ckpt = load_checkpoint(config)?;
    let mut restorer: Restorer<P> = ckpt.get()?;
    // Without a report the dependency check has already demanded k = 100.
    let report = match &config.paths.report {
        Some(p) => LayerReport::load(p)?,
        None => {
            let zero: Vec<(String, f64)> = restorer.group_names().into_iter().map(|n| (n, 0.0)).collect();
            rank_and_select(&zero, 100.0)?
        }
    };
    apply_report(&mut restorer, &report)?;
    let before: Vec<(String, String)> = report
        .unselected_names()
        .into_iter()
        .map(|n| {
            let d = restorer.params().group_digest(&n)?;
            Ok((n, d))
        })
        .collect::<Result<_>>()?;
    let data = train_set(config)?;
    let fusion = if config.finetune.fusion {
        Some((Rfr::new(restorer.config(), config.run.seed), extractor(config)?))
    } else {
        None
    };
    let f = &config.finetune;
    let ft = FinetuneConfig {
        steps: f.steps,
        batch: f.batch,
        lr_max: f.lr_max,
        lr_min: f.lr_min,
        seed: config.run.seed,
        ..Default::default()
    };
    let out = finetune(Model { restorer, fusion }, &data, &ft)?;
    let mut freeze = String::from("group\tdigest\tunchanged\n");
    for (name, d) in &before {
        let now = out.model.restorer.params().group_digest(name)?;
        let _ = writeln!(freeze, "{name}\t{now}\t{}", u8::from(&now == d));
        if &now != d {
            return Err(Error::invalid("finetune", format!("frozen group `{name}` changed")));
        }
    }
    run.write("frozen.tsv", freeze.as_bytes())?;
    let log: String = out.log.iter().enumerate().map(|(i, l)| format!("{i}\t{l:.6}\n")).collect();
    run.write(LOSS_LOG, format!("step\tl1\n{log}").as_bytes())?;
    let mut stage2 = Checkpoint::new(config.run.seed, f.steps as u64).with(&out.model.restorer);
    if ckpt.has::<AdaSam<P>>() {
        stage2.put(&ckpt.get::<AdaSam<P>>()?);
    }
    if let Some((rfr, e)) = &out.model.fusion {
        stage2.put(rfr);
        stage2.put(e);
    }
    let path = run.save(STAGE2, &stage2)?;
    let _ = writeln!(
        run.summary,
        "fine-tuned {} of {} groups, final L1 {:.4}\ncheckpoint {}",
        report.selected_names().len(),
        report.entries.len(),
        out.log.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn eval_command(config: &RunConfig, run: &mut Run) -> Result<()> {
    let model = model_from(&load_checkpoint(config)?)?;
    let sets = test_sets(config)?;
    let report = evaluate(&model, &sets)?;
    let table = format_records(&report.records, config.format()?)?;
    let ext = match config.format()? {
        crate::pipeline::report::Format::Csv => "csv",
        crate::pipeline::report::Format::Table => "txt",
    };
    run.write(&format!("metrics.{ext}"), table.as_bytes())?;
    let summary = format_summary(&report);
    run.write("summary.txt", summary.as_bytes())?;
    if !report.cka.is_empty() {
        run.write("cka.txt", format_cka(&report).as_bytes())?;
    }
    run.summary = format!("{table}{summary}");
    Ok(())
}

/// Inputs for twin-mask inference: every `.ppm` under `paths.images`, or the
/// degraded test images of the dataset.
fn twin_inputs(config: &RunConfig) -> Result<Vec<(String, PathBuf)>> {
    if let Some(dir) = &config.paths.images {
        let dir = required(Some(dir), "paths.images", "point it at a directory of .ppm files")?;
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
            .collect();
        files.sort();
        return Ok(files
            .into_iter()
            .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
            .collect());
    }
    let root = required(config.paths.data.as_deref(), "paths.data", DATA_HINT)?.join("test");
    let mut out = Vec::new();
    for kind in config.train_kinds()?.into_iter().chain(config.ood_kinds()?) {
        let dir = root.join(kind.name());
        if !dir.is_dir() {
            continue;
        }
        for i in 0..read_dataset(&dir)?.len() {
            out.push((format!("{kind}_{i:05}"), dir.join(format!("degraded_{i:05}.ppm"))));
        }
    }
    Ok(out)
}

fn twin_infer(config: &RunConfig, run: &mut Run) -> Result<()> {
    let ckpt = load_checkpoint(config)?;
    let model = Model::plain(ckpt.get()?);
    let adasam: Option<AdaSam<P>> = if ckpt.has::<AdaSam<P>>() { Some(ckpt.get()?) } else { None };
    let inputs = twin_inputs(config)?;
    if inputs.is_empty() {
        return Err(Error::invalid("twin-infer", "no input images found"));
    }
    let ratio = config.pretrain.mask_ratio;
    for (i, (name, path)) in inputs.iter().enumerate() {
        let image: crate::tensor::Tensor<P> = read_ppm(path)?;
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let mask = match &adasam {
            Some(a) => {
                let scores: Vec<f64> = a.scores(&image)?.data().iter().map(|&v| v as f64).collect();
                plan(&scores, h, w, a.config().patch, ratio, config.run.seed, i as u64)?.mask
            }
            None => sample_mask(&vec![1.0; h * w], h, w, ratio, &mut stream(config.run.seed, Purpose::Mask, i as u64))?,
        };
        let out = twin_mask_infer(&model, &image, &mask)?;
        let target = run.path(&format!("twin/{name}.ppm"));
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_ppm(&target, &out)?;
        run.artifacts.push(target);
    }
    let _ = writeln!(run.summary, "restored {} images into {}", inputs.len(), run.path("twin").display());
    Ok(())
}

/// Validates the config, checks stage dependencies and runs `command`.
/// Nothing is created when a dependency is missing.
pub fn run_command(command: Command, config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    check_dependencies(command, config)?;
    let mut run = Run::start(command, config)?;
    match command {
        Command::Synth => synth(config, &mut run)?,
        Command::Pretrain => pretrain(config, &mut run)?,
        Command::MacRank => mac_rank(config, &mut run)?,
        Command::Finetune => finetune_command(config, &mut run)?,
        Command::Eval => eval_command(config, &mut run)?,
        Command::TwinInfer => twin_infer(config, &mut run)?,
        Command::Extractor => train_extractor_command(config, &mut run)?,
    }
    Ok(run.finish())
}

fn check_dependencies(command: Command, config: &RunConfig) -> Result<()> {
    let p = &config.paths;
    match command {
        Command::Synth | Command::Extractor => {}
        Command::Pretrain => {
            required(p.data.as_deref(), "paths.data", DATA_HINT)?;
        }
        Command::MacRank | Command::Eval => {
            required(p.checkpoint.as_deref(), "paths.checkpoint", STAGE1_HINT)?;
            required(p.data.as_deref(), "paths.data", DATA_HINT)?;
        }
        Command::Finetune => {
            required(p.checkpoint.as_deref(), "paths.checkpoint", STAGE1_HINT)?;
            if p.report.is_some() || config.mac.k_percent < 100.0 {
                required(p.report.as_deref(), "paths.report", REPORT_HINT)?;
            }
            required(p.data.as_deref(), "paths.data", DATA_HINT)?;
        }
        Command::TwinInfer => {
            required(p.checkpoint.as_deref(), "paths.checkpoint", STAGE1_HINT)?;
            if p.images.is_none() {
                required(p.data.as_deref(), "paths.data", DATA_HINT)?;
            }
        }
    }
    Ok(())
}
