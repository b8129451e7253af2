use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::table::{plot_csv, polyphony_curve, table_csv, TableRow};
use super::{read_json, write_atomic, write_json};
use crate::data::annotations::{featurize, load_annotations};
use crate::data::{
    build_subset, cache, class_profiles, generate_synthetic, split_by_recording, ClassProfile, DatasetSplit,
    MultiLabelDataset,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, StratifiedReport};
use crate::mixops::{Mix2Policy, MixStrategy};
use crate::nn::{checkpoint, predict_probabilities, train_epoch, AdamWState, Architecture, EpochConfig, TappedNetwork};

pub const THREADS_ENV: &str = "MIX2_THREADS";

/// The eight rows of the ablation grid: no mixing, each single method, each
/// pair at 50/50, and the three-way mixture.
pub fn ablation_policies() -> Vec<(&'static str, Mix2Policy)> {
    [
        "none",
        "mixup",
        "manifold",
        "multimix",
        "mixup+manifold",
        "mixup+multimix",
        "manifold+multimix",
        "mix2",
    ]
    .into_iter()
    .map(|name| (name, name.parse().expect("built-in policy")))
    .collect()
}

/// Dataset, split and class profiles shared by every run of a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub profiles: Vec<ClassProfile>,
    pub input_dim: usize,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<MultiLabelDataset> {
    match &cfg.data.cache {
        Some(path) => cache::load(path),
        None => generate_synthetic(&cfg.data.synthetic),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    prepare_from(cfg, &load_dataset(cfg)?)
}

pub fn prepare_from(cfg: &ExperimentConfig, ds: &MultiLabelDataset) -> Result<Prepared> {
    let split = split_by_recording(ds, cfg.data.train_ratio, cfg.data.split_seed)?;
    let split = build_subset(&split, cfg.data.subset);
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Data(format!(
            "split has {} train and {} test examples",
            split.train.len(),
            split.test.len()
        )));
    }
    let (rows, frames) = split.train.feature_shape().ok_or(Error::EmptyBatch)?;
    let profiles = class_profiles(&split.train, cfg.data.thresholds()?);
    Ok(Prepared {
        input_dim: cfg.model.view.dim(rows, frames),
        split,
        profiles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub iterations: usize,
    pub strategy_counts: BTreeMap<MixStrategy, usize>,
    /// Test-split macro F, present on `eval_every` epochs.
    pub test_macro_f: Option<f64>,
}

/// Training log of a single (policy, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub policy: String,
    pub weights: [f64; 4],
    pub seed: u64,
    pub parameters: usize,
    pub epochs: Vec<EpochRecord>,
    pub strategy_counts: BTreeMap<MixStrategy, usize>,
    pub warnings: Vec<String>,
    pub wall_clock_s: f64,
}

impl RunLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

fn init_network(cfg: &ExperimentConfig, prep: &Prepared, rng: &mut ChaCha8Rng) -> Result<TappedNetwork> {
    let arch = Architecture::new(prep.input_dim, cfg.model.hidden.clone(), prep.split.train.num_classes())?;
    let mut net = TappedNetwork::new(arch, rng);
    if let Some(tap) = cfg.model.tap {
        net.set_tap_index(tap)?;
    }
    Ok(net)
}

/// Initializes from `seed` and trains for the configured number of epochs.
/// The same seed gives the same initialization under every policy.
pub fn train_run(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    policy_name: &str,
    policy: Mix2Policy,
    seed: u64,
) -> Result<(TappedNetwork, RunLog)> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = init_network(cfg, prep, &mut rng)?;
    let mut opt = AdamWState::new(cfg.optimizer);
    let epoch_cfg = EpochConfig {
        policy,
        batch_size: cfg.training.batch_size,
        augment: cfg.augment,
        mix: cfg.mix.params(),
        random_layer: cfg.model.random_layer,
        view: cfg.model.view,
    };
    let mut log = RunLog {
        policy: policy_name.to_string(),
        weights: policy.weights(),
        seed,
        parameters: net.params().num_parameters(),
        epochs: Vec::new(),
        strategy_counts: MixStrategy::ALL.iter().map(|&s| (s, 0)).collect(),
        warnings: Vec::new(),
        wall_clock_s: 0.0,
    };
    for epoch in 1..=cfg.training.epochs {
        let e = train_epoch(&mut net, &mut opt, &prep.split.train, &epoch_cfg, &mut rng)?;
        for (s, n) in &e.strategy_counts {
            *log.strategy_counts.entry(*s).or_default() += n;
        }
        for w in e.warnings {
            if !log.warnings.contains(&w) {
                warn!("{w}");
                log.warnings.push(w);
            }
        }
        let k = cfg.training.eval_every;
        let test_macro_f = if k > 0 && epoch % k == 0 {
            evaluate_network(&net, prep, cfg, policy_name, seed)?.report(None)?.groups.all
        } else {
            None
        };
        info!(
            "{policy_name} seed {seed} epoch {epoch}: loss {:.5} {:?}",
            e.mean_loss, e.strategy_counts
        );
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: e.mean_loss,
            iterations: e.iterations,
            strategy_counts: e.strategy_counts,
            test_macro_f,
        });
    }
    log.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((net, log))
}

/// Stored test-split outputs; every report is recomputed from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub policy: String,
    pub seed: Option<u64>,
    pub threshold: f64,
    pub profiles: Vec<ClassProfile>,
    /// Row-major `n × C` active-class flags.
    pub labels: Vec<Vec<u8>>,
    pub probabilities: Vec<Vec<f64>>,
}

impl PredictionSet {
    fn matrix<T: Copy, U>(rows: &[Vec<T>], c: usize, f: impl Fn(T) -> U) -> Result<Array2<U>> {
        let flat: Vec<U> = rows.iter().flat_map(|r| r.iter().map(|&v| f(v))).collect();
        Array2::from_shape_vec((rows.len(), c), flat).map_err(|e| Error::Shape(format!("prediction table: {e}")))
    }

    pub fn probability_matrix(&self) -> Result<Array2<f64>> {
        Self::matrix(&self.probabilities, self.profiles.len(), |p| p)
    }

    pub fn label_matrix(&self) -> Result<Array2<bool>> {
        Self::matrix(&self.labels, self.profiles.len(), |y| y != 0)
    }

    /// Report at the stored threshold, or at `threshold` when given.
    pub fn report(&self, threshold: Option<f64>) -> Result<StratifiedReport> {
        evaluate(
            &self.probability_matrix()?,
            &self.label_matrix()?,
            &self.profiles,
            threshold.unwrap_or(self.threshold),
        )
    }
}

pub fn evaluate_network(
    net: &TappedNetwork,
    prep: &Prepared,
    cfg: &ExperimentConfig,
    policy: &str,
    seed: impl Into<Option<u64>>,
) -> Result<PredictionSet> {
    let arch = net.architecture();
    let expected = (prep.input_dim, prep.split.test.num_classes());
    if (arch.input_dim, arch.num_classes) != expected {
        return Err(Error::Shape(format!(
            "checkpoint expects {} inputs and {} classes, dataset provides {} inputs and {} classes",
            arch.input_dim, arch.num_classes, expected.0, expected.1
        )));
    }
    let probs = predict_probabilities(net, &prep.split.test, cfg.model.view, cfg.eval.batch_size)?;
    Ok(PredictionSet {
        policy: policy.to_string(),
        seed: seed.into(),
        threshold: cfg.eval.threshold,
        profiles: prep.profiles.clone(),
        labels: prep
            .split
            .test
            .examples
            .iter()
            .map(|e| e.labels.iter().map(|&b| b as u8).collect())
            .collect(),
        probabilities: probs.outer_iter().map(|r| r.to_vec()).collect(),
    })
}

fn profile_table(profiles: &[ClassProfile]) -> String {
    let mut s = String::from("class_id  name          train_count  group\n");
    for p in profiles {
        let _ = writeln!(s, "{:>8}  {:<12}  {:>11}  {}", p.class_id, p.name, p.train_count, p.group);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub examples: usize,
    pub classes: usize,
    pub recordings: usize,
    pub negatives: usize,
    pub negative_fraction: f64,
    pub class_counts: Vec<usize>,
    pub max_polyphony: usize,
    /// Training-split profile under the configured split and thresholds.
    pub profiles: Vec<ClassProfile>,
}

fn summarize(cfg: &ExperimentConfig, ds: &MultiLabelDataset) -> Result<DataSummary> {
    let prep = prepare_from(cfg, ds)?;
    Ok(DataSummary {
        examples: ds.len(),
        classes: ds.num_classes(),
        recordings: ds.recording_names.len(),
        negatives: ds.negative_count(),
        negative_fraction: ds.negative_fraction(),
        class_counts: ds.class_counts(),
        max_polyphony: ds.max_polyphony(),
        profiles: prep.profiles,
    })
}

pub const FEATURES_FILE: &str = "features.bin";
pub const FEATURES_SIDECAR: &str = "features.json";

/// Writes the synthetic dataset to `<out>/features.bin` with a JSON sidecar.
/// Returns the printable class profile table.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<String> {
    let out = &cfg.output.dir;
    let ds = generate_synthetic(&cfg.data.synthetic)?;
    write_atomic(&out.join(FEATURES_FILE), &cache::encode(&ds))?;
    let summary = summarize(cfg, &ds)?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        spec: &'a crate::data::SyntheticSpec,
        #[serde(flatten)]
        summary: &'a DataSummary,
    }
    write_json(
        &out.join(FEATURES_SIDECAR),
        &Sidecar {
            spec: &cfg.data.synthetic,
            summary: &summary,
        },
    )?;
    Ok(format!(
        "{} examples, {} classes, {} recordings, negative fraction {:.4}\n{}",
        summary.examples,
        summary.classes,
        summary.recordings,
        summary.negative_fraction,
        profile_table(&summary.profiles)
    ))
}

/// Featurizes a directory of WAV files into `<out>/features.bin`.
pub fn cmd_featurize(cfg: &ExperimentConfig, audio_dir: &Path, annotations: &Path) -> Result<String> {
    let rows = load_annotations(annotations)?;
    let (ds, log) = featurize(audio_dir, &rows)?;
    let out = &cfg.output.dir;
    write_atomic(&out.join(FEATURES_FILE), &cache::encode(&ds))?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        segments: &'a BTreeMap<String, usize>,
        skipped_files: Vec<String>,
        unannotated_segments: usize,
        examples: usize,
        negative_fraction: f64,
        class_names: &'a [String],
    }
    write_json(
        &out.join(FEATURES_SIDECAR),
        &Sidecar {
            segments: &log.segments,
            skipped_files: log
                .skipped_files
                .iter()
                .map(|(p, e)| format!("{}: {e}", p.display()))
                .collect(),
            unannotated_segments: log.unannotated_segments,
            examples: ds.len(),
            negative_fraction: ds.negative_fraction(),
            class_names: &ds.class_names,
        },
    )?;
    let mut s = String::new();
    for (rec, n) in &log.segments {
        let _ = writeln!(s, "{rec}: {n} segments");
    }
    let _ = write!(
        s,
        "{} examples, {} classes, {} files skipped",
        ds.len(),
        ds.num_classes(),
        log.skipped_files.len()
    );
    Ok(s)
}

fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join("checkpoints").join(format!("seed{seed}.ckpt"))
}

/// Trains one network per configured seed under the configured policy.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<RunLog>> {
    let prep = prepare(cfg)?;
    let policy = cfg.policy()?;
    let out = &cfg.output.dir;
    let mut logs = Vec::new();
    for &seed in &cfg.training.seeds {
        let (net, log) = train_run(cfg, &prep, &cfg.mix.policy, policy, seed)?;
        write_atomic(&checkpoint_path(out, seed), &checkpoint::encode(&net))?;
        logs.push(log);
    }
    write_json(&out.join("train_log.json"), &logs)?;
    Ok(logs)
}

fn seed_from_stem(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.strip_prefix("seed")?.parse().ok()
}

/// Evaluates `checkpoint`, or every checkpoint written by `train`, on the test split.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<StratifiedReport>> {
    let out = &cfg.output.dir;
    let paths = match checkpoint {
        Some(p) => vec![p.to_path_buf()],
        None => {
            let dir = out.join("checkpoints");
            let mut v: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
                .collect();
            v.sort();
            if v.is_empty() {
                return Err(Error::Data(format!("no checkpoints in {}", dir.display())));
            }
            v
        }
    };
    let prep = prepare(cfg)?;
    let mut reports = Vec::new();
    for path in paths {
        let net = checkpoint::load(&path)?;
        let preds = evaluate_network(&net, &prep, cfg, &cfg.mix.policy, seed_from_stem(&path))?;
        let report = preds.report(None)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let dir = out.join("eval").join(stem);
        write_json(&dir.join("predictions.json"), &preds)?;
        write_report(&dir, &report)?;
        reports.push(report);
    }
    Ok(reports)
}

fn write_report(dir: &Path, report: &StratifiedReport) -> Result<()> {
    write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_atomic(&dir.join("report.csv"), &csv)
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Param(format!("{THREADS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Repeated seeds get a `-k` suffix so every run keeps its own directory.
fn run_dir(out: &Path, policy: &str, seed: u64, repeat: usize) -> PathBuf {
    let name = if repeat == 0 { format!("seed{seed}") } else { format!("seed{seed}-{repeat}") };
    out.join("runs").join(policy).join(name)
}

/// Runs the eight-policy grid over every seed, then builds the tables from
/// the stored predictions. Runs execute concurrently, capped by `MIX2_THREADS`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<ReportSummary> {
    let prep = prepare(cfg)?;
    let out = &cfg.output.dir;
    let seeds: Vec<(u64, usize)> = cfg
        .training
        .seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, cfg.training.seeds[..i].iter().filter(|&&x| x == s).count()))
        .collect();
    let jobs: Vec<(&str, Mix2Policy, u64, usize)> = ablation_policies()
        .into_iter()
        .flat_map(|(name, p)| seeds.iter().map(move |&(s, r)| (name, p, s, r)))
        .collect();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::State(format!("thread pool: {e}")))?;
    let logs: Vec<RunLog> = pool.install(|| {
        jobs.par_iter()
            .map(|&(name, policy, seed, repeat)| {
                let (net, log) = train_run(cfg, &prep, name, policy, seed)?;
                let preds = evaluate_network(&net, &prep, cfg, name, seed)?;
                let dir = run_dir(out, name, seed, repeat);
                write_json(&dir.join("predictions.json"), &preds)?;
                write_json(&dir.join("train_log.json"), &log)?;
                write_atomic(&dir.join("model.ckpt"), &checkpoint::encode(&net))?;
                info!("{name} seed {seed} done in {:.1}s", log.wall_clock_s);
                Ok(log)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    write_json(&out.join("runs.json"), &logs)?;
    cmd_report(out, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: String,
    pub seeds: Vec<Option<u64>>,
    pub row: TableRow,
    pub reports: Vec<StratifiedReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub policies: Vec<PolicyResult>,
}

impl ReportSummary {
    pub fn row(&self, policy: &str) -> Option<&TableRow> {
        self.policies.iter().find(|p| p.policy == policy).map(|p| &p.row)
    }
}

fn find_predictions(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_predictions(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "predictions.json") {
            found.push(p);
        }
    }
    Ok(())
}

/// Rebuilds `table.csv`, per-policy polyphony curves and `summary.json` from
/// every `predictions.json` under `dir`.
pub fn cmd_report(dir: &Path, threshold: Option<f64>) -> Result<ReportSummary> {
    let mut paths = Vec::new();
    find_predictions(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::Data(format!("no predictions.json under {}", dir.display())));
    }
    let mut by_policy: BTreeMap<String, Vec<PredictionSet>> = BTreeMap::new();
    for p in &paths {
        let set: PredictionSet = read_json(p)?;
        by_policy.entry(set.policy.clone()).or_default().push(set);
    }
    let grid: Vec<&str> = ablation_policies().iter().map(|(n, _)| *n).collect();
    let mut names: Vec<String> = by_policy.keys().cloned().collect();
    names.sort_by_key(|n| (grid.iter().position(|g| g == n).unwrap_or(grid.len()), n.clone()));

    let mut policies = Vec::new();
    let plot_dir = dir.join("plots");
    for name in names {
        let mut sets = by_policy.remove(&name).expect("key present");
        sets.sort_by_key(|s| s.seed);
        let reports = sets.iter().map(|s| s.report(threshold)).collect::<Result<Vec<_>>>()?;
        let row = TableRow::from_reports(&name, &reports);
        let curve = plot_csv(&polyphony_curve(&reports))?;
        write_atomic(&plot_dir.join(format!("polyphony_{name}.csv")), curve.as_bytes())?;
        policies.push(PolicyResult {
            policy: name,
            seeds: sets.iter().map(|s| s.seed).collect(),
            row,
            reports,
        });
    }
    let rows: Vec<TableRow> = policies.iter().map(|p| p.row.clone()).collect();
    write_atomic(&dir.join("table.csv"), table_csv(&rows)?.as_bytes())?;
    let summary = ReportSummary { policies };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}
