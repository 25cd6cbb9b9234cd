//! Experiment driver: data preparation, per-run training with best-validation
//! checkpointing, and ordered CSV output.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{DatasetConfig, DatasetSource, ExperimentConfig};
use crate::data::{gen_blobs, gen_two_moons, inject_label_noise, load_csv, load_idx, split, Dataset, Split};
use crate::diversity::{RegularizerSpec, Variant};
use crate::error::{Error, Result};
use crate::network::{train_epoch, Mlp, OptimizerState};

/// Results CSV header. Column order is part of the file format.
pub const RESULTS_HEADER: [&str; 11] = [
    "variant", "seed", "lambda1", "lambda2", "gamma", "train_err", "val_err", "test_err", "gap", "epochs",
    "wall_s",
];

/// Per-epoch curve CSV header.
pub const CURVES_HEADER: [&str; 11] = [
    "variant", "seed", "lambda1", "lambda2", "gamma", "epoch", "task_loss", "reg_loss", "train_err", "val_err",
    "j_direct",
];

const TAG_DATA: u64 = 1;
const TAG_SPLIT: u64 = 2;
const TAG_NOISE_TRAIN: u64 = 3;
const TAG_NOISE_VAL: u64 = 4;
const TAG_INIT: u64 = 5;
const TAG_SHUFFLE: u64 = 6;

/// Independent sub-seed for one purpose within a run (splitmix64 finaliser).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One row of the per-epoch curve. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub task_loss: f64,
    pub reg_loss: f64,
    /// Online training error during the epoch (percent).
    pub train_err: f64,
    pub val_err: f64,
    pub j_direct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub spec: RegularizerSpec,
    pub seed: u64,
    /// Errors in percent, measured on the best-validation checkpoint.
    pub train_err: f64,
    pub val_err: f64,
    pub test_err: f64,
    /// `train_err - test_err`.
    pub gap: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub wall_s: f64,
    pub curve: Vec<CurvePoint>,
}

impl RunResult {
    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    fn key(&self) -> RunKey {
        RunKey::new(&self.spec, self.seed)
    }
}

fn fmt_err(x: f64) -> String {
    format!("{x:.6}")
}

/// Empty field for values that do not exist (the untrained epoch-0 row).
fn fmt_opt(x: f64, f: impl Fn(f64) -> String) -> String {
    if x.is_nan() {
        String::new()
    } else {
        f(x)
    }
}

/// `variant,seed,lambda1,lambda2,gamma` rendered exactly as in the CSV.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct RunKey(String);

impl RunKey {
    fn new(spec: &RegularizerSpec, seed: u64) -> Self {
        RunKey(format!(
            "{},{},{},{},{}",
            spec.variant, seed, spec.lambda1, spec.lambda2, spec.gamma
        ))
    }
}

fn results_row(r: &RunResult) -> String {
    format!(
        "{},{},{},{},{},{},{:.3}",
        r.key().0,
        fmt_err(r.train_err),
        fmt_err(r.val_err),
        fmt_err(r.test_err),
        fmt_err(r.gap),
        r.epochs,
        r.wall_s
    )
}

fn curve_rows(r: &RunResult) -> String {
    let key = r.key().0;
    let mut out = String::new();
    for p in &r.curve {
        let j = p.j_direct.map_or_else(String::new, |j| format!("{j:.9e}"));
        out.push_str(&format!(
            "{key},{},{},{},{},{},{j}\n",
            p.epoch,
            fmt_opt(p.task_loss, |v| format!("{v:.9e}")),
            fmt_opt(p.reg_loss, |v| format!("{v:.9e}")),
            fmt_opt(p.train_err, fmt_err),
            fmt_err(p.val_err)
        ));
    }
    out
}

/// Loads file-backed datasets once; synthetic sources are generated per seed.
pub fn load_base(cfg: &DatasetConfig) -> Result<Option<Dataset>> {
    match &cfg.source {
        DatasetSource::Idx { images, labels } => load_idx(images, labels).map(Some),
        DatasetSource::Csv { path, label_column } => load_csv(path, *label_column).map(Some),
        _ => Ok(None),
    }
}

/// Train/val/test split for `seed`. Label noise touches train and val only.
pub fn prepare_split(cfg: &DatasetConfig, base: Option<&Dataset>, seed: u64) -> Result<Split> {
    let generated;
    let full = match (&cfg.source, base) {
        (DatasetSource::TwoMoons { n, noise }, _) => {
            generated = gen_two_moons(*n, *noise, derive_seed(seed, TAG_DATA))?;
            &generated
        }
        (DatasetSource::Blobs { n_per_class, num_classes, dim, spread }, _) => {
            generated = gen_blobs(*n_per_class, *num_classes, *dim, *spread, derive_seed(seed, TAG_DATA))?;
            &generated
        }
        (_, Some(ds)) => ds,
        (_, None) => return Err(Error::InvalidArgument("file-backed dataset was not loaded".into())),
    };
    let mut parts = split(full, cfg.split, derive_seed(seed, TAG_SPLIT))?;
    if cfg.label_noise > 0.0 {
        parts.train = inject_label_noise(&parts.train, cfg.label_noise, derive_seed(seed, TAG_NOISE_TRAIN))?;
        parts.val = inject_label_noise(&parts.val, cfg.label_noise, derive_seed(seed, TAG_NOISE_VAL))?;
    }
    if cfg.standardize {
        standardize(&mut parts);
    }
    Ok(parts)
}

/// Per-column `(x - mean) / std` using training statistics; constant
/// columns are only centred.
fn standardize(parts: &mut Split) {
    let x = &parts.train.features;
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return;
    }
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).iter().sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for ds in [&mut parts.train, &mut parts.val, &mut parts.test] {
        for row in ds.features.as_mut_slice().chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) / scale[j];
            }
        }
    }
}

/// Fresh classifier for the config's architecture, initialised from `seed`.
pub fn build_model(cfg: &ExperimentConfig, data: &Split, seed: u64) -> Result<Mlp> {
    Mlp::classifier(
        data.train.dim(),
        &cfg.model.hidden,
        cfg.model.activation,
        data.train.num_classes,
        derive_seed(seed, TAG_INIT),
    )
}

/// Trains one (regulariser, seed) pair for the full schedule and evaluates the
/// checkpoint with the lowest validation error (earliest on ties).
pub fn train_run(cfg: &ExperimentConfig, spec: &RegularizerSpec, data: &Split, seed: u64) -> Result<RunResult> {
    train_checkpoint(cfg, spec, data, seed).map(|(_, r)| r)
}

/// [`train_run`] that also returns the selected checkpoint.
pub fn train_checkpoint(
    cfg: &ExperimentConfig,
    spec: &RegularizerSpec,
    data: &Split,
    seed: u64,
) -> Result<(Mlp, RunResult)> {
    spec.validate()?;
    let start = Instant::now();
    let o = &cfg.optimizer;
    let mut model = build_model(cfg, data, seed)?;
    let mut opt = OptimizerState::new(&model, o.lr, o.momentum, o.weight_decay, o.schedule.clone())?;
    let shuffle_seed = derive_seed(seed, TAG_SHUFFLE);

    let val0 = model.error_rate(&data.val)?;
    let mut curve = vec![CurvePoint {
        epoch: 0,
        task_loss: f64::NAN,
        reg_loss: f64::NAN,
        train_err: f64::NAN,
        val_err: val0,
        j_direct: None,
    }];
    let mut best = (val0, 0usize, model.parameters());
    let select_by_val = !data.val.is_empty();

    for epoch in 0..o.epochs {
        let m = train_epoch(&mut model, &data.train, spec, &mut opt, o.batch_size, shuffle_seed, epoch)?;
        let val_err = model.error_rate(&data.val)?;
        curve.push(CurvePoint {
            epoch: epoch + 1,
            task_loss: m.task_loss,
            reg_loss: m.reg_loss,
            train_err: m.train_error,
            val_err,
            j_direct: m.j_direct,
        });
        if val_err < best.0 || !select_by_val {
            best = (val_err, epoch + 1, model.parameters());
        }
    }

    let (val_err, best_epoch, params) = best;
    model.set_parameters(&params)?;
    let train_err = model.error_rate(&data.train)?;
    let test_err = model.error_rate(&data.test)?;
    let result = RunResult {
        spec: *spec,
        seed,
        train_err,
        val_err,
        test_err,
        gap: train_err - test_err,
        epochs: o.epochs,
        best_epoch,
        wall_s: start.elapsed().as_secs_f64(),
        curve,
    };
    Ok((model, result))
}

/// Hyperparameter points for one regulariser: the grid axes crossed, with
/// empty axes falling back to the regulariser's own value. Axes a variant
/// ignores collapse to a single value.
pub fn expand_grid(spec: &RegularizerSpec, grid: &super::config::Grid) -> Vec<RegularizerSpec> {
    let axis = |values: &[f64], own: f64, used: bool| -> Vec<f64> {
        if values.is_empty() || !used {
            vec![own]
        } else {
            values.to_vec()
        }
    };
    let v = spec.variant;
    let l1 = axis(&grid.lambda1, spec.lambda1, v != Variant::None);
    let l2 = axis(&grid.lambda2, spec.lambda2, v.uses_similarity());
    let g = axis(&grid.gamma, spec.gamma, v.uses_similarity());
    let mut out = Vec::new();
    for &lambda1 in &l1 {
        for &lambda2 in &l2 {
            for &gamma in &g {
                out.push(RegularizerSpec {
                    lambda1,
                    lambda2,
                    gamma,
                    ..*spec
                });
            }
        }
    }
    out
}

/// Runs every regulariser in the config against every seed and writes the
/// results CSV (and curves CSV, if configured), replacing existing files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    let jobs = job_list(cfg, &cfg.regularizers);
    execute(cfg, jobs, false)
}

/// Grid × regularisers × seeds. Rows already present in the output file are
/// skipped and the new rows are appended, so an interrupted sweep resumes.
/// Returns only the runs executed by this call.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    let points: Vec<RegularizerSpec> = cfg
        .regularizers
        .iter()
        .flat_map(|r| expand_grid(r, &cfg.grid))
        .collect();
    drop_torn_tail(&cfg.output)?;
    if let Some(c) = &cfg.curves {
        drop_torn_tail(c)?;
    }
    let done = completed_keys(&cfg.output)?;
    let jobs = job_list(cfg, &points)
        .into_iter()
        .filter(|(spec, seed)| !done.contains(&RunKey::new(spec, *seed)))
        .collect();
    execute(cfg, jobs, true)
}

fn job_list(cfg: &ExperimentConfig, specs: &[RegularizerSpec]) -> Vec<(RegularizerSpec, u64)> {
    specs
        .iter()
        .flat_map(|s| cfg.seeds.iter().map(move |&seed| (*s, seed)))
        .collect()
}

/// Truncates an unterminated final line left by an interrupted write.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

fn completed_keys(path: &Path) -> Result<HashSet<RunKey>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
        Err(e) => return Err(e.into()),
    };
    let mut keys = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        // a torn final line (interrupted write) is not a completed run
        if fields.len() == RESULTS_HEADER.len() {
            keys.insert(RunKey(fields[..5].join(",")));
        }
    }
    Ok(keys)
}

/// Opens `path` for appending rows, writing `header` if the file is new or
/// `truncate` is set.
fn open_sink(path: &Path, header: &[&str], truncate: bool) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let fresh = truncate || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = if fresh {
        File::create(path)?
    } else {
        OpenOptions::new().append(true).open(path)?
    };
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{}", header.join(","))?;
        w.flush()?;
    }
    Ok(w)
}

/// Runs jobs in parallel; a single writer thread emits rows in job order,
/// flushing after each, so output is deterministic and partial results
/// survive an abort.
fn execute(cfg: &ExperimentConfig, jobs: Vec<(RegularizerSpec, u64)>, append: bool) -> Result<Vec<RunResult>> {
    let mut results_sink = open_sink(&cfg.output, &RESULTS_HEADER, !append)?;
    let mut curves_sink = match &cfg.curves {
        Some(p) => Some(open_sink(p, &CURVES_HEADER, !append)?),
        None => None,
    };
    if jobs.is_empty() {
        return Ok(Vec::new());
    }

    let base = load_base(&cfg.dataset)?;
    let mut seeds: Vec<u64> = jobs.iter().map(|&(_, s)| s).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let splits: BTreeMap<u64, Split> = seeds
        .par_iter()
        .map(|&s| prepare_split(&cfg.dataset, base.as_ref(), s).map(|d| (s, d)))
        .collect::<Result<_>>()?;

    let (tx, rx) = mpsc::channel::<(usize, Result<RunResult>)>();
    let total = jobs.len();
    let (outcomes, write_status) = std::thread::scope(|scope| {
        let writer = scope.spawn(move || -> (Vec<Option<Result<RunResult>>>, Result<()>) {
            let mut slots: Vec<Option<Result<RunResult>>> = (0..total).map(|_| None).collect();
            let mut next = 0;
            let mut status = Ok(());
            for (idx, outcome) in rx {
                slots[idx] = Some(outcome);
                while next < total {
                    let Some(done) = &slots[next] else { break };
                    if let (Ok(r), true) = (done, status.is_ok()) {
                        status = write_result(&mut results_sink, curves_sink.as_mut(), r);
                    }
                    next += 1;
                }
            }
            (slots, status)
        });
        jobs.par_iter().enumerate().for_each_with(tx, |tx, (idx, (spec, seed))| {
            let outcome = train_run(cfg, spec, &splits[seed], *seed);
            let _ = tx.send((idx, outcome));
        });
        writer.join().expect("results writer panicked")
    });
    write_status?;
    outcomes
        .into_iter()
        .map(|o| o.expect("every job reports an outcome"))
        .collect()
}

fn write_result(results: &mut BufWriter<File>, curves: Option<&mut BufWriter<File>>, r: &RunResult) -> Result<()> {
    writeln!(results, "{}", results_row(r))?;
    results.flush()?;
    if let Some(c) = curves {
        c.write_all(curve_rows(r).as_bytes())?;
        c.flush()?;
    }
    Ok(())
}

/// Mean statistics over seeds for one hyperparameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub spec: RegularizerSpec,
    pub runs: usize,
    pub mean_train_err: f64,
    pub mean_val_err: f64,
    pub mean_test_err: f64,
    pub std_test_err: f64,
    pub mean_gap: f64,
}

/// Groups results by hyperparameter point in first-seen order.
pub fn summarize(results: &[RunResult]) -> Vec<Summary> {
    let mut groups: Vec<(RegularizerSpec, Vec<&RunResult>)> = Vec::new();
    for r in results {
        match groups.iter_mut().find(|(s, _)| *s == r.spec) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.spec, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(spec, g)| {
            let n = g.len() as f64;
            let mean = |f: fn(&RunResult) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            let mean_test_err = mean(|r| r.test_err);
            let var = g.iter().map(|r| (r.test_err - mean_test_err).powi(2)).sum::<f64>() / n;
            Summary {
                spec,
                runs: g.len(),
                mean_train_err: mean(|r| r.train_err),
                mean_val_err: mean(|r| r.val_err),
                mean_test_err,
                std_test_err: var.sqrt(),
                mean_gap: mean(|r| r.gap),
            }
        })
        .collect()
}
