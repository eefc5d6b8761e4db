//! Model comparison by ΔAIC, exclusion and leave-one-out sensitivity, and
//! batch runs over collections of dataset files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_design_matrix, parse_dataset, DataFormat, EffectMeasure, NetworkDataset, ParseOptions};
use crate::error::{NmaError, Result};
use crate::heterogeneity::{q_decompose, screen, PValue, QDecomposition, ScreenResult};
use crate::models::{fit_fe, fit_re_estimated, me_from_fe, ModelFit, TauMethod};

/// `|ΔAIC|` at or below this is read as similar support.
pub const SIMILAR_SUPPORT: f64 = 3.0;
/// `|ΔAIC|` above this marks a strong preference.
pub const STRONG_PREFERENCE: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    SimilarSupport,
    MePreferred,
    RePreferred,
    MeStrong,
    ReStrong,
}

impl Classification {
    /// Classifies `ΔAIC = AIC_ME - AIC_RE`; negative values favour ME.
    pub fn from_delta(delta: f64) -> Self {
        if delta.abs() <= SIMILAR_SUPPORT {
            Classification::SimilarSupport
        } else if delta < 0.0 {
            if delta < -STRONG_PREFERENCE {
                Classification::MeStrong
            } else {
                Classification::MePreferred
            }
        } else if delta > STRONG_PREFERENCE {
            Classification::ReStrong
        } else {
            Classification::RePreferred
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::SimilarSupport => "similar_support",
            Classification::MePreferred => "me_preferred",
            Classification::RePreferred => "re_preferred",
            Classification::MeStrong => "me_strong",
            Classification::ReStrong => "re_strong",
        }
    }
}

/// Result of fitting FE, RE and ME to one dataset and comparing ME with RE.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub dataset: String,
    pub measure: EffectMeasure,
    pub tau_method: TauMethod,
    pub m: usize,
    pub n: usize,
    pub fe: ModelFit,
    pub re: ModelFit,
    pub me: ModelFit,
    pub q: QDecomposition,
    pub tau2: f64,
    pub phi: f64,
    pub aic_me: f64,
    pub aic_re: f64,
    pub delta_aic: f64,
    /// `None` when within-design heterogeneity cannot be tested.
    pub classification: Option<Classification>,
}

impl ComparisonReport {
    pub fn untestable(&self) -> bool {
        self.q.p_het == PValue::Untestable
    }

    pub fn designs(&self) -> usize {
        self.q.designs()
    }

    /// Same fits reported at another two-sided confidence level.
    pub fn with_ci_level(mut self, level: f64) -> Result<Self> {
        self.fe = self.fe.with_ci_level(level)?;
        self.re = self.re.with_ci_level(level)?;
        self.me = self.me.with_ci_level(level)?;
        Ok(self)
    }
}

/// Fits all three models and compares ME with RE by AIC.
pub fn compare_models(ds: &NetworkDataset, tau_method: TauMethod) -> Result<ComparisonReport> {
    let x = build_design_matrix(ds)?;
    let fe = fit_fe(ds, &x)?;
    let q = q_decompose(ds, &fe);
    let re = fit_re_estimated(ds, &x, tau_method)?;
    let me = me_from_fe(ds, fe.clone());
    let tau2 = re.tau2().expect("random-effects fit carries tau2");
    let phi = me.phi().expect("multiplicative fit carries phi");
    let delta_aic = me.aic - re.aic;
    let classification = match q.p_het {
        PValue::Untestable => None,
        PValue::Value(_) => Some(Classification::from_delta(delta_aic)),
    };
    Ok(ComparisonReport {
        dataset: ds.name().to_string(),
        measure: ds.measure(),
        tau_method,
        m: ds.m(),
        n: ds.n(),
        aic_me: me.aic,
        aic_re: re.aic,
        fe,
        re,
        me,
        q,
        tau2,
        phi,
        delta_aic,
        classification,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRecord {
    pub excluded: Vec<String>,
    pub refit: ComparisonReport,
    /// Refit minus baseline.
    pub delta_q_het: f64,
    /// Refit ΔAIC minus baseline ΔAIC.
    pub delta_delta_aic: f64,
}

fn sensitivity(baseline: &ComparisonReport, ds: &NetworkDataset, exclude: &[&str], tau: TauMethod) -> Result<SensitivityRecord> {
    let reduced = ds.excluding(exclude)?;
    let refit = compare_models(&reduced, tau)?;
    Ok(SensitivityRecord {
        excluded: exclude.iter().map(|s| s.to_string()).collect(),
        delta_q_het: refit.q.q_het - baseline.q.q_het,
        delta_delta_aic: refit.delta_aic - baseline.delta_aic,
        refit,
    })
}

/// Drops the named studies, re-derives the network and refits.
pub fn exclude_and_refit(ds: &NetworkDataset, exclude: &[&str], tau_method: TauMethod) -> Result<SensitivityRecord> {
    let baseline = compare_models(ds, tau_method)?;
    sensitivity(&baseline, ds, exclude, tau_method)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LooOutcome {
    Refit(Box<SensitivityRecord>),
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooEntry {
    pub study_id: String,
    pub outcome: LooOutcome,
}

/// One refit per study; removals that break the network or leave no
/// residual degrees of freedom are recorded as skipped.
pub fn leave_one_out(ds: &NetworkDataset, tau_method: TauMethod) -> Result<Vec<LooEntry>> {
    let baseline = compare_models(ds, tau_method)?;
    Ok(ds
        .studies()
        .iter()
        .map(|s| {
            let outcome = match sensitivity(&baseline, ds, &[s.study_id.as_str()], tau_method) {
                Ok(r) => LooOutcome::Refit(Box::new(r)),
                Err(e) => LooOutcome::Skipped(e.to_string()),
            };
            LooEntry {
                study_id: s.study_id.clone(),
                outcome,
            }
        })
        .collect())
}

/// CSV table of leave-one-out results.
pub fn loo_csv(entries: &[LooEntry]) -> String {
    let mut out = String::from("excluded,status,m,n,designs,q_het,delta_q_het,tau2,phi,delta_aic,delta_delta_aic,classification,note\n");
    for e in entries {
        match &e.outcome {
            LooOutcome::Refit(r) => {
                let c = &r.refit;
                let _ = writeln!(
                    out,
                    "{},ok,{},{},{},{},{},{},{},{},{},{},",
                    csv_field(&e.study_id),
                    c.m,
                    c.n,
                    c.designs(),
                    c.q.q_het,
                    r.delta_q_het,
                    c.tau2,
                    c.phi,
                    c.delta_aic,
                    r.delta_delta_aic,
                    c.classification.map_or("untestable", Classification::as_str),
                );
            }
            LooOutcome::Skipped(reason) => {
                let _ = writeln!(out, "{},skipped,,,,,,,,,,,{}", csv_field(&e.study_id), csv_field(reason));
            }
        }
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Loads a dataset file; CSV files are named after their stem.
pub fn load_dataset(path: &Path, measure: Option<EffectMeasure>, reference: Option<&str>) -> Result<NetworkDataset> {
    let bytes = std::fs::read(path).map_err(|e| NmaError::Io(format!("{}: {e}", path.display())))?;
    let opts = ParseOptions {
        name: path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("dataset")
            .to_string(),
        measure,
        reference: reference.map(str::to_string),
        ..ParseOptions::default()
    };
    parse_dataset(&bytes, DataFormat::from_path(path), &opts)
}

/// Dataset files (`.csv`, `.json`) directly inside `dir`, sorted by path.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| NmaError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub name: String,
    pub file: String,
    pub measure: Option<EffectMeasure>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub designs: Option<usize>,
    pub q_het: Option<f64>,
    pub df_het: Option<usize>,
    pub p_het: Option<f64>,
    pub screen: Option<ScreenResult>,
    pub tau2: Option<f64>,
    pub phi: Option<f64>,
    pub aic_me: Option<f64>,
    pub aic_re: Option<f64>,
    pub delta_aic: Option<f64>,
    /// Only set for datasets screened as heterogeneous.
    pub classification: Option<Classification>,
    pub error: Option<String>,
}

impl BatchRow {
    fn failed(name: String, file: String, measure: Option<EffectMeasure>, error: String) -> Self {
        Self {
            name,
            file,
            measure,
            m: None,
            n: None,
            designs: None,
            q_het: None,
            df_het: None,
            p_het: None,
            screen: None,
            tau2: None,
            phi: None,
            aic_me: None,
            aic_re: None,
            delta_aic: None,
            classification: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub rows: Vec<BatchRow>,
    /// ΔAIC counts per measure over classified datasets.
    pub histogram: BTreeMap<String, Vec<HistogramBin>>,
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub alpha: f64,
    pub tau_method: TauMethod,
    pub jobs: usize,
    /// Applied to CSV inputs, which carry no measure of their own.
    pub measure: Option<EffectMeasure>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            tau_method: TauMethod::Dl,
            jobs: 1,
            measure: None,
        }
    }
}

fn batch_row(path: &Path, opts: &BatchOptions) -> BatchRow {
    let file = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let ds = match load_dataset(path, opts.measure, None) {
        Ok(ds) => ds,
        Err(e) => return BatchRow::failed(stem, file, opts.measure, e.to_string()),
    };
    let report = match compare_models(&ds, opts.tau_method) {
        Ok(r) => r,
        Err(e) => return BatchRow::failed(ds.name().to_string(), file, Some(ds.measure()), e.to_string()),
    };
    let screened = screen(&report.q, opts.alpha);
    BatchRow {
        name: ds.name().to_string(),
        file,
        measure: Some(ds.measure()),
        m: Some(report.m),
        n: Some(report.n),
        designs: Some(report.designs()),
        q_het: Some(report.q.q_het),
        df_het: Some(report.q.df_het),
        p_het: report.q.p_het.value(),
        screen: Some(screened),
        tau2: Some(report.tau2),
        phi: Some(report.phi),
        aic_me: Some(report.aic_me),
        aic_re: Some(report.aic_re),
        delta_aic: Some(report.delta_aic),
        classification: (screened == ScreenResult::Heterogeneous)
            .then_some(report.classification)
            .flatten(),
        error: None,
    }
}

/// Width-3 ΔAIC bins whose edges include ±3. Values in `[0, 3]` and
/// `[-3, 0)` land in the two central bins, so `|ΔAIC| ≤ 3` never spills out.
fn histogram_bin(delta: f64) -> i64 {
    if delta >= 0.0 {
        ((delta / SIMILAR_SUPPORT).ceil() as i64 - 1).max(0)
    } else {
        (delta / SIMILAR_SUPPORT).floor() as i64
    }
}

fn histogram(rows: &[BatchRow]) -> BTreeMap<String, Vec<HistogramBin>> {
    let mut counts: BTreeMap<String, BTreeMap<i64, usize>> = BTreeMap::new();
    for r in rows {
        if let (Some(m), Some(d), Some(_)) = (r.measure, r.delta_aic, r.classification) {
            *counts.entry(m.as_str().to_string()).or_default().entry(histogram_bin(d)).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(measure, bins)| {
            let lo = *bins.keys().next().expect("non-empty");
            let hi = *bins.keys().last().expect("non-empty");
            let dense = (lo..=hi)
                .map(|k| HistogramBin {
                    lo: k as f64 * SIMILAR_SUPPORT,
                    hi: (k + 1) as f64 * SIMILAR_SUPPORT,
                    count: bins.get(&k).copied().unwrap_or(0),
                })
                .collect();
            (measure, dense)
        })
        .collect()
}

/// Runs the comparison over every file with up to `opts.jobs` worker
/// threads. Rows come back sorted by dataset name, then file name.
pub fn batch_run(sources: &[PathBuf], opts: &BatchOptions) -> BatchSummary {
    let jobs = opts.jobs.clamp(1, sources.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<BatchRow>> = Mutex::new(Vec::with_capacity(sources.len()));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = sources.get(i) else { break };
                let row = batch_row(path, opts);
                results.lock().expect("batch worker panicked").push(row);
            });
        }
    });
    let mut rows = results.into_inner().expect("batch worker panicked");
    rows.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.file.cmp(&b.file)));
    let histogram = histogram(&rows);
    BatchSummary { rows, histogram }
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, T::to_string)
}

impl BatchSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "name,file,measure,m,n,C,q_het,df_het,p_het,screen,tau2,phi,aic_me,aic_re,delta_aic,classification,error\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                csv_field(&r.name),
                csv_field(&r.file),
                opt(&r.measure),
                opt(&r.m),
                opt(&r.n),
                opt(&r.designs),
                opt(&r.q_het),
                opt(&r.df_het),
                opt(&r.p_het),
                r.screen.map_or("", ScreenResult::as_str),
                opt(&r.tau2),
                opt(&r.phi),
                opt(&r.aic_me),
                opt(&r.aic_re),
                opt(&r.delta_aic),
                r.classification.map_or("", Classification::as_str),
                csv_field(r.error.as_deref().unwrap_or("")),
            );
        }
        out
    }

    pub fn rows_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("rows serialise") + "\n"
    }

    pub fn histogram_json(&self) -> String {
        serde_json::to_string_pretty(&self.histogram).expect("histogram serialises") + "\n"
    }
}
