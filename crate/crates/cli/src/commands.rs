//! One function per CLI verb. Each returns a short human-readable summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use forgetmi::baselines::{cf_k, eu_k, neggrad_plus, retrain};
use forgetmi::datagen::{
    bucket_shares, generate, label_shares, max_relative_share_error, split_forget, study_counts, PatientProfile,
};
use forgetmi::eval::loss_histogram;
use forgetmi::model::{train_original, Tokenizer, TrainEpoch, DEFAULT_BETA};
use forgetmi::unlearn::{trace_to_csv, unlearn_run};
use forgetmi::{evaluate, ForgetSplit, MetricsReport, Model, Sample};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, CliResult};
use crate::io::*;

pub const HISTOGRAM_BINS: usize = 30;

fn to_jsonl(samples: &[Sample]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s).map_err(forgetmi::Error::from)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// `gen-data`: writes the train/test splits and patient profiles.
pub fn gen_data(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<String> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.data_dir());
    let data = generate(&cfg.data_config())?;
    write_atomic(&dir.join(TRAIN_FILE), &to_jsonl(&data.train)?)?;
    write_atomic(&dir.join(TEST_FILE), &to_jsonl(&data.test)?)?;
    write_json(&dir.join(PROFILES_FILE), &data.profiles)?;
    let shares = label_shares(&data.train);
    Ok(format!(
        "{} patients, {} train / {} test samples; train label shares {:.3?} -> {}",
        data.profiles.len(),
        data.train.len(),
        data.test.len(),
        shares,
        dir.display()
    ))
}

fn load_train(cfg: &ExperimentConfig) -> CliResult<Vec<Sample>> {
    read_samples(&cfg.data_dir().join(TRAIN_FILE))
}

fn load_test(cfg: &ExperimentConfig) -> CliResult<Vec<Sample>> {
    read_samples(&cfg.data_dir().join(TEST_FILE))
}

/// The untrained model every training run starts from.
pub fn initial_model(cfg: &ExperimentConfig, train: &[Sample]) -> Model {
    Model::new(Tokenizer::from_samples(train), DEFAULT_BETA, cfg.seeds().init)
}

fn train_trace_csv(trace: &[TrainEpoch]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in trace {
        w.serialize(row)
            .map_err(|e| CliError::Config(format!("train trace: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Config(format!("train trace: {e}")))
}

/// `train`: fits the original model on the full training split.
pub fn train(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<String> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.clone());
    let train = load_train(cfg)?;
    let (model, trace) = train_original(&initial_model(cfg, &train), &train, &cfg.train_config())?;
    write_model(&dir.join(ORIGINAL_CKPT), &model)?;
    write_atomic(&dir.join(TRAIN_TRACE_FILE), &train_trace_csv(&trace)?)?;
    let last = trace.last().expect("at least one epoch");
    Ok(format!(
        "trained {} epochs: loss {:.5}, train accuracy {:.4} -> {}",
        last.epoch,
        last.loss,
        last.accuracy,
        dir.join(ORIGINAL_CKPT).display()
    ))
}

/// Study-count stratification of a split, stored next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub target_pct: u32,
    pub forget_samples: usize,
    pub train_samples: usize,
    pub forget_pct: f64,
    pub forget_patients: usize,
    /// Patient shares of the single/few/many study-count buckets.
    pub bucket_shares_train: [f64; 3],
    pub bucket_shares_forget: [f64; 3],
    pub max_relative_share_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub split: ForgetSplit,
    pub stats: SplitStats,
}

/// `split`: selects the forget patients.
pub fn split(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<String> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.clone());
    let train = load_train(cfg)?;
    let split = split_forget(&train, cfg.forget_pct, cfg.seeds().split)?;
    let counts = study_counts(&train);
    let train_shares = bucket_shares(counts.values().copied());
    let forget_shares = bucket_shares(split.forget_patient_ids.iter().map(|p| counts[p]));
    let stats = SplitStats {
        target_pct: cfg.forget_pct,
        forget_samples: split.forget_sample_ids.len(),
        train_samples: train.len(),
        forget_pct: 100.0 * split.forget_fraction(),
        forget_patients: split.forget_patient_ids.len(),
        bucket_shares_train: train_shares,
        bucket_shares_forget: forget_shares,
        max_relative_share_error: max_relative_share_error(&forget_shares, &train_shares),
    };
    let summary = format!(
        "forget {} samples of {} ({:.2}%) from {} patients; bucket share error {:.3}",
        stats.forget_samples,
        stats.train_samples,
        stats.forget_pct,
        stats.forget_patients,
        stats.max_relative_share_error
    );
    write_json(&dir.join(SPLIT_FILE), &SplitFile { split, stats })?;
    Ok(summary)
}

fn load_split(cfg: &ExperimentConfig) -> CliResult<ForgetSplit> {
    let file: SplitFile = read_json(&cfg.out_dir.join(SPLIT_FILE))?;
    if file.split.pct != cfg.forget_pct {
        return Err(CliError::Config(format!(
            "forget_pct: config asks for {} but {} holds a {}% split",
            cfg.forget_pct,
            cfg.out_dir.join(SPLIT_FILE).display(),
            file.split.pct
        )));
    }
    Ok(file.split)
}

/// Record of one unlearning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub method: String,
    pub forget_pct: u32,
    pub weights: String,
    pub model_file: String,
    pub model_sha256: String,
    pub wall_time_secs: f64,
    pub config: ExperimentConfig,
}

/// `unlearn`: runs Forget-MI or the configured baseline from `og.ckpt`.
pub fn unlearn(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<String> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.clone());
    let started = Instant::now();
    let train = load_train(cfg)?;
    let original = read_model(&cfg.out_dir.join(ORIGINAL_CKPT))?;
    let split = load_split(cfg)?;
    let (forget, retain) = split.partition(&train);
    if cfg.method != Method::ForgetMi && cfg.weights.is_some() {
        log::warn!("weights are ignored by method {}", cfg.method.name());
    }

    let baseline = cfg.baseline_config();
    let mut losses = None;
    let model = match cfg.method {
        Method::ForgetMi => {
            let (model, trace) = unlearn_run(&original, &forget, &retain, &cfg.unlearn_config())?;
            losses = Some(trace_to_csv(&trace));
            model
        }
        Method::Retrain => {
            let init = Model::new(original.tokenizer.clone(), original.params.beta(), cfg.seeds().init);
            retrain(&init, &retain, &cfg.train_config())?
        }
        Method::NeggradPlus => neggrad_plus(&original, &retain, &forget, &baseline)?,
        Method::CfK => cf_k(&original, &retain, &baseline)?,
        Method::EuK => eu_k(&original, &retain, &baseline)?,
    };

    let mut ckpt = Vec::new();
    forgetmi::model::write_checkpoint(&model, &mut ckpt)?;
    write_atomic(&dir.join(UNLEARNED_CKPT), &ckpt)?;
    if let Some(csv) = losses {
        write_atomic(&dir.join(LOSSES_FILE), csv.as_bytes())?;
    }
    let manifest = Manifest {
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        method: cfg.method.name().to_owned(),
        forget_pct: cfg.forget_pct,
        weights: cfg.weights_label(),
        model_file: UNLEARNED_CKPT.to_owned(),
        model_sha256: hex::encode(Sha256::digest(&ckpt)),
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(format!(
        "{} on {} forget / {} retain samples in {:.1}s -> {}",
        cfg.method.name(),
        forget.len(),
        retain.len(),
        manifest.wall_time_secs,
        dir.join(UNLEARNED_CKPT).display()
    ))
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub method: String,
    pub pct: u32,
    pub weights: String,
    pub metrics: MetricsReport,
}

/// Method and weights label of a checkpoint: taken from a manifest in the
/// same directory that names it, otherwise the original model.
fn describe_model(model_path: &Path) -> (String, String) {
    let dir = model_path.parent().unwrap_or(Path::new("."));
    let name = model_path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    match read_json::<Manifest>(&dir.join(MANIFEST_FILE)) {
        Ok(m) if m.model_file == name => (m.method, m.weights),
        _ => ("original".to_owned(), "-".to_owned()),
    }
}

/// `eval`: metrics and the forget/test loss histogram of one checkpoint.
pub fn eval(
    cfg: &ExperimentConfig,
    model_path: Option<&Path>,
    reference: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<String> {
    let model_path: PathBuf = model_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(UNLEARNED_CKPT));
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => model_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let train = load_train(cfg)?;
    let test = load_test(cfg)?;
    let split = load_split(cfg)?;
    let model = read_model(&model_path)?;
    let reference = match reference {
        None => {
            log::warn!("no --reference given; model distance omitted");
            None
        }
        Some(p) if !p.is_file() => {
            log::warn!("reference checkpoint {} not found; model distance omitted", p.display());
            None
        }
        Some(p) => Some(read_model(p)?),
    };
    let (forget, retain) = split.partition(&train);
    let test_refs: Vec<&Sample> = test.iter().collect();
    let metrics = evaluate(
        &model,
        &retain,
        &test_refs,
        &forget,
        reference.as_ref(),
        cfg.seeds().mia,
    )?;
    metrics.validate()?;
    let histogram = loss_histogram(&model, &forget, &test_refs, HISTOGRAM_BINS)?;
    let (method, weights) = describe_model(&model_path);
    let record = MetricsRecord {
        method,
        pct: cfg.forget_pct,
        weights,
        metrics,
    };
    write_json(&dir.join(METRICS_FILE), &record)?;
    write_atomic(&dir.join(HISTOGRAM_FILE), histogram.to_csv().as_bytes())?;
    let m = &record.metrics;
    let mut summary = format!(
        "{}: mia {:.3}, forget f1 {:.3} auc {:.3}, test f1 {:.3} auc {:.3}, overlap {:.3}",
        record.method,
        m.mia,
        m.forget_f1,
        m.forget_auc,
        m.test_f1,
        m.test_auc,
        histogram.overlap()
    );
    if let Some(d) = m.model_distance {
        let _ = write!(summary, ", distance {d:.4}");
    }
    Ok(summary)
}

#[derive(Serialize)]
struct ReportRow<'a> {
    method: &'a str,
    pct: u32,
    weights: &'a str,
    mia: f64,
    forget_auc: f64,
    forget_f1: f64,
    test_auc: f64,
    test_f1: f64,
    distance: Option<f64>,
}

/// `report`: one CSV row per run directory holding a `metrics.json`.
/// Directories without one are skipped with a warning.
pub fn report(run_dirs: &[PathBuf], out: Option<&Path>) -> CliResult<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "method",
        "pct",
        "weights",
        "mia",
        "forget_auc",
        "forget_f1",
        "test_auc",
        "test_f1",
        "distance",
    ])
    .map_err(|e| CliError::Config(format!("report: {e}")))?;
    for dir in run_dirs {
        let record: MetricsRecord = match read_json(&dir.join(METRICS_FILE)) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping {}: {e}", dir.display());
                continue;
            }
        };
        let m = &record.metrics;
        w.serialize(ReportRow {
            method: &record.method,
            pct: record.pct,
            weights: &record.weights,
            mia: m.mia,
            forget_auc: m.forget_auc,
            forget_f1: m.forget_f1,
            test_auc: m.test_auc,
            test_f1: m.test_f1,
            distance: m.model_distance,
        })
        .map_err(|e| CliError::Config(format!("report: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(format!("report: {e}")))?;
    let text = String::from_utf8(bytes).expect("csv output is utf-8");
    if let Some(dir) = out {
        write_atomic(&dir.join(REPORT_FILE), text.as_bytes())?;
    }
    Ok(text)
}

/// Reads the profiles written by `gen-data`.
pub fn read_profiles(dir: &Path) -> CliResult<Vec<PatientProfile>> {
    read_json(&dir.join(PROFILES_FILE))
}
