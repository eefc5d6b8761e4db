//! Fit reports as JSON, per-study Q tables as CSV, and forest-plot and
//! network-graph data with SVG renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{csv_field, Classification, ComparisonReport, SensitivityRecord};
use crate::dataset::{group_designs, EffectMeasure, NetworkDataset, Treatment};
use crate::error::{NmaError, Result};
use crate::heterogeneity::{PValue, QDecomposition};
use crate::models::{Heterogeneity, ModelFit, ModelKind, TauMethod};

/// Column of `t` in the fitted parameter vector; `None` for the reference.
fn parameter_index(ds: &NetworkDataset, t: &Treatment) -> Option<usize> {
    ds.treatments()
        .iter()
        .filter(|c| *c != ds.reference())
        .position(|c| c == t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub est: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Estimate {
    fn new(est: f64, se: f64, z: f64) -> Self {
        Self {
            est,
            se,
            ci_lo: est - z * se,
            ci_hi: est + z * se,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HeteroReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phi: Option<f64>,
}

impl From<Heterogeneity> for HeteroReport {
    fn from(h: Heterogeneity) -> Self {
        match h {
            Heterogeneity::None => Self::default(),
            Heterogeneity::Tau2(t) => Self {
                tau2: Some(t),
                tau: Some(t.sqrt()),
                phi: None,
            },
            Heterogeneity::Phi(p) => Self {
                phi: Some(p),
                ..Self::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub kind: ModelKind,
    /// Effects relative to the reference treatment.
    pub d_hat: BTreeMap<String, Estimate>,
    pub hetero: HeteroReport,
    pub log_lik: f64,
    pub n_params: usize,
    pub aic: f64,
}

impl ModelReport {
    pub fn new(ds: &NetworkDataset, fit: &ModelFit) -> Self {
        let z = fit.z();
        let d_hat = ds
            .treatments()
            .iter()
            .filter(|t| *t != ds.reference())
            .enumerate()
            .map(|(j, t)| (t.to_string(), Estimate::new(fit.d_hat[j], fit.se(j), z)))
            .collect();
        Self {
            kind: fit.kind,
            d_hat,
            hetero: fit.hetero.into(),
            log_lik: fit.log_lik,
            n_params: fit.n_params,
            aic: fit.aic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub design: String,
    pub treatments: [String; 2],
    pub studies: Vec<String>,
    pub df: usize,
    pub q_het_c: f64,
    /// Pooled effect of the second treatment against the first.
    pub pooled_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyQ {
    pub study_id: String,
    pub treat_a: String,
    pub treat_b: String,
    pub effect: f64,
    pub se: f64,
    pub q_het_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QReport {
    pub total: f64,
    pub het: f64,
    pub inc: f64,
    pub df_het: usize,
    pub df_inc: usize,
    pub p_het: PValue,
    pub p_inc: PValue,
    pub per_design: Vec<DesignReport>,
    pub per_study: Vec<StudyQ>,
}

impl QReport {
    pub fn new(ds: &NetworkDataset, q: &QDecomposition) -> Self {
        let studies = ds.studies();
        let per_design = q
            .per_design
            .iter()
            .map(|d| DesignReport {
                design: d.design.label(),
                treatments: [d.design.pair.0.to_string(), d.design.pair.1.to_string()],
                studies: d.design.members.iter().map(|&i| studies[i].study_id.clone()).collect(),
                df: d.design.members.len() - 1,
                q_het_c: d.q_het_c,
                pooled_mean: d.pooled_mean,
            })
            .collect();
        let per_study = q
            .per_study
            .iter()
            .map(|c| {
                let s = &studies[c.study];
                StudyQ {
                    study_id: s.study_id.clone(),
                    treat_a: s.treat_a.to_string(),
                    treat_b: s.treat_b.to_string(),
                    effect: s.effect,
                    se: s.se,
                    q_het_i: c.q_het_i,
                }
            })
            .collect();
        Self {
            total: q.q_total,
            het: q.q_het,
            inc: q.q_inc,
            df_het: q.df_het,
            df_inc: q.df_inc,
            p_het: q.p_het,
            p_inc: q.p_inc,
            per_design,
            per_study,
        }
    }

    /// Per-study table with columns `study_id,treat_a,treat_b,effect,se,q_het_i`.
    pub fn per_study_csv(&self) -> String {
        let mut out = String::from("study_id,treat_a,treat_b,effect,se,q_het_i\n");
        for s in &self.per_study {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&s.study_id),
                csv_field(&s.treat_a),
                csv_field(&s.treat_b),
                s.effect,
                s.se,
                s.q_het_i
            );
        }
        out
    }
}

/// Machine-readable summary of one dataset's fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub dataset: String,
    pub measure: EffectMeasure,
    pub reference: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "C")]
    pub designs: usize,
    pub ci_level: f64,
    pub tau_method: TauMethod,
    pub models: Vec<ModelReport>,
    pub q: QReport,
    pub delta_aic: f64,
    pub classification: Option<Classification>,
    pub untestable: bool,
}

/// Builds the report for the requested models, all of which must come from
/// `report`; an empty `kinds` selects FE, RE and ME.
pub fn fit_report(ds: &NetworkDataset, report: &ComparisonReport, kinds: &[ModelKind]) -> Result<FitReport> {
    let fits = [&report.fe, &report.re, &report.me];
    let models = if kinds.is_empty() {
        fits.iter().map(|f| ModelReport::new(ds, f)).collect()
    } else {
        kinds
            .iter()
            .map(|k| {
                fits.iter()
                    .find(|f| f.kind == *k)
                    .map(|f| ModelReport::new(ds, f))
                    .ok_or_else(|| NmaError::InvalidArgument(format!("no {k} fit in this comparison")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(FitReport {
        dataset: report.dataset.clone(),
        measure: report.measure,
        reference: ds.reference().to_string(),
        n: report.n,
        m: report.m,
        designs: report.designs(),
        ci_level: report.fe.ci_level,
        tau_method: report.tau_method,
        models,
        q: QReport::new(ds, &report.q),
        delta_aic: report.delta_aic,
        classification: report.classification,
        untestable: report.untestable(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySummary {
    pub excluded: Vec<String>,
    pub baseline_q_het: f64,
    pub baseline_delta_aic: f64,
    pub delta_q_het: f64,
    pub delta_delta_aic: f64,
}

/// Flat JSON view of a [`ComparisonReport`]; when studies were excluded the
/// top-level numbers describe the refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub dataset: String,
    pub measure: EffectMeasure,
    pub tau_method: TauMethod,
    pub m: usize,
    pub n: usize,
    #[serde(rename = "C")]
    pub designs: usize,
    pub tau2: f64,
    pub tau: f64,
    pub phi: f64,
    pub aic_fe: f64,
    pub aic_re: f64,
    pub aic_me: f64,
    pub delta_aic: f64,
    pub classification: Option<Classification>,
    pub untestable: bool,
    pub q_total: f64,
    pub q_het: f64,
    pub df_het: usize,
    pub p_het: PValue,
    pub q_inc: f64,
    pub df_inc: usize,
    pub p_inc: PValue,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sensitivity: Option<SensitivitySummary>,
}

impl ComparisonSummary {
    pub fn new(r: &ComparisonReport) -> Self {
        Self {
            dataset: r.dataset.clone(),
            measure: r.measure,
            tau_method: r.tau_method,
            m: r.m,
            n: r.n,
            designs: r.designs(),
            tau2: r.tau2,
            tau: r.tau2.sqrt(),
            phi: r.phi,
            aic_fe: r.fe.aic,
            aic_re: r.aic_re,
            aic_me: r.aic_me,
            delta_aic: r.delta_aic,
            classification: r.classification,
            untestable: r.untestable(),
            q_total: r.q.q_total,
            q_het: r.q.q_het,
            df_het: r.q.df_het,
            p_het: r.q.p_het,
            q_inc: r.q.q_inc,
            df_inc: r.q.df_inc,
            p_inc: r.q.p_inc,
            sensitivity: None,
        }
    }

    pub fn with_sensitivity(rec: &SensitivityRecord) -> Self {
        let mut s = Self::new(&rec.refit);
        s.sensitivity = Some(SensitivitySummary {
            excluded: rec.excluded.clone(),
            baseline_q_het: rec.refit.q.q_het - rec.delta_q_het,
            baseline_delta_aic: rec.refit.delta_aic - rec.delta_delta_aic,
            delta_q_het: rec.delta_q_het,
            delta_delta_aic: rec.delta_delta_aic,
        });
        s
    }
}

/// Formats with three significant figures, keeping trailing zeros.
pub fn format_sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.2}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let mut decimals = (2 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding may carry into a new digit, e.g. 9.996 -> 10.00
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded != 0.0 && (rounded.abs().log10().floor() as i32) > magnitude && decimals > 0 {
        decimals -= 1;
        return format!("{x:.decimals$}");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Marker {
    StudyCircle { area_weight: f64 },
    ReSquare,
    MeTriangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    /// Treatment compared against the target; rows are grouped by it.
    pub group: String,
    pub label: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub marker: Marker,
    pub q_label: Option<f64>,
}

/// Forest-plot rows of every treatment against `target`: the studies of the
/// direct design, if any, followed by the RE and ME estimates. Study labels
/// carry `q_het_i` when it exceeds `q_het / m`.
pub fn forest_data(
    ds: &NetworkDataset,
    re: &ModelFit,
    me: &ModelFit,
    q: &QDecomposition,
    target: &str,
) -> Result<Vec<ForestRow>> {
    let target = Treatment::new(target)?;
    if !ds.contains_treatment(target.as_str()) {
        return Err(NmaError::UnknownTreatment(target.to_string()));
    }
    let z = re.z();
    let threshold = q.q_het / ds.m() as f64;
    let designs = group_designs(ds);
    let t_idx = parameter_index(ds, &target);
    let mut rows = Vec::new();
    for other in ds.treatments().iter().filter(|t| **t != target) {
        if let Some(design) = designs.iter().find(|d| d.contains(&target) && d.contains(other)) {
            for &i in &design.members {
                let s = &ds.studies()[i];
                let estimate = if s.treat_a == target { s.effect } else { -s.effect };
                let q_het_i = q.per_study[i].q_het_i;
                rows.push(ForestRow {
                    group: other.to_string(),
                    label: s.study_id.clone(),
                    estimate,
                    ci_lo: estimate - z * s.se,
                    ci_hi: estimate + z * s.se,
                    marker: Marker::StudyCircle {
                        area_weight: 1.0 / (s.se * s.se),
                    },
                    q_label: (q_het_i > threshold).then_some(q_het_i),
                });
            }
        }
        let o_idx = parameter_index(ds, other);
        for (fit, marker, name) in [(re, Marker::ReSquare, "RE"), (me, Marker::MeTriangle, "ME")] {
            let (estimate, var) = fit.contrast(t_idx, o_idx);
            let half = fit.z() * var.sqrt();
            rows.push(ForestRow {
                group: other.to_string(),
                label: name.to_string(),
                estimate,
                ci_lo: estimate - half,
                ci_hi: estimate + half,
                marker,
                q_label: None,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub pair: [String; 2],
    pub study_count: usize,
    /// `study_count` divided by the largest count in the network.
    pub width_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<NetworkEdge>,
}

/// One edge per design, weighted by its number of studies.
pub fn network_data(ds: &NetworkDataset) -> NetworkGraph {
    let designs = group_designs(ds);
    let max = designs.iter().map(|d| d.members.len()).max().unwrap_or(1) as f64;
    NetworkGraph {
        nodes: ds.treatments().iter().map(Treatment::to_string).collect(),
        edges: designs
            .iter()
            .map(|d| NetworkEdge {
                pair: [d.pair.0.to_string(), d.pair.1.to_string()],
                study_count: d.members.len(),
                width_weight: d.members.len() as f64 / max,
            })
            .collect(),
    }
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Layout constants for [`render_forest_svg`] and [`render_network_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct SvgOptions {
    pub width: f64,
    pub row_height: f64,
    /// Radius of the heaviest study circle; others scale with `sqrt(area_weight)`.
    pub max_radius: f64,
    pub title: Option<String>,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self {
            width: 760.0,
            row_height: 20.0,
            max_radius: 8.0,
            title: None,
        }
    }
}

const SVG_HEADER: &str = r#"<?xml version="1.0" encoding="UTF-8"?>"#;
const FONT: &str = r#"font-family="sans-serif" font-size="11""#;

/// Horizontal forest plot with study circles of area `∝ 1/se²`, RE squares
/// and ME triangles, a dashed line at zero and q labels on the right.
pub fn render_forest_svg(rows: &[ForestRow], opts: &SvgOptions) -> String {
    let label_w = 200.0;
    let q_w = 60.0;
    let top = 30.0 + if opts.title.is_some() { 20.0 } else { 0.0 };
    let plot_lo = label_w;
    let plot_hi = opts.width - q_w - 10.0;

    let mut lines: Vec<Option<&ForestRow>> = Vec::new();
    let mut last_group: Option<&str> = None;
    for r in rows {
        if last_group != Some(r.group.as_str()) {
            lines.push(None);
            last_group = Some(r.group.as_str());
        }
        lines.push(Some(r));
    }
    let height = top + opts.row_height * (lines.len() as f64 + 2.0);

    let (mut lo, mut hi) = rows
        .iter()
        .fold((0.0_f64, 0.0_f64), |(lo, hi), r| (lo.min(r.ci_lo), hi.max(r.ci_hi)));
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |v: f64| plot_lo + (v - lo) / (hi - lo) * (plot_hi - plot_lo);
    let k = {
        let max_area = rows
            .iter()
            .filter_map(|r| match r.marker {
                Marker::StudyCircle { area_weight } => Some(area_weight),
                _ => None,
            })
            .fold(0.0_f64, f64::max);
        if max_area > 0.0 {
            opts.max_radius / max_area.sqrt()
        } else {
            0.0
        }
    };

    let mut s = String::new();
    let _ = writeln!(s, "{SVG_HEADER}");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{height:.0}" viewBox="0 0 {w:.0} {height:.0}">"#,
        w = opts.width
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{:.0}" height="{height:.0}" fill="white"/>"#, opts.width);
    if let Some(title) = &opts.title {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            opts.width / 2.0,
            escape_xml(title)
        );
    }
    let bottom = top + opts.row_height * lines.len() as f64;
    let _ = writeln!(
        s,
        r#"<path d="M {x:.2} {top:.2} V {bottom:.2}" stroke="gray" stroke-dasharray="4 3" fill="none"/>"#,
        x = sx(0.0)
    );
    for (i, line) in lines.iter().enumerate() {
        let y = top + opts.row_height * (i as f64 + 0.5);
        let Some(r) = line else {
            let group = lines[i + 1].map_or("", |r| r.group.as_str());
            let _ = writeln!(
                s,
                r#"<text x="8" y="{:.2}" {FONT} font-weight="bold">{}</text>"#,
                y + 4.0,
                escape_xml(group)
            );
            continue;
        };
        let _ = writeln!(
            s,
            r#"<text x="20" y="{:.2}" {FONT}>{}</text>"#,
            y + 4.0,
            escape_xml(&r.label)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#,
            sx(r.ci_lo),
            sx(r.ci_hi)
        );
        let x = sx(r.estimate);
        match r.marker {
            Marker::StudyCircle { area_weight } => {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.3}" fill="steelblue" fill-opacity="0.6" stroke="black" stroke-width="0.5"/>"#,
                    k * area_weight.sqrt()
                );
            }
            Marker::ReSquare => {
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="9" height="9" fill="black"/>"#,
                    x - 4.5,
                    y - 4.5
                );
            }
            Marker::MeTriangle => {
                let _ = writeln!(
                    s,
                    r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="black"/>"#,
                    x,
                    y - 5.0,
                    x - 5.0,
                    y + 4.0,
                    x + 5.0,
                    y + 4.0
                );
            }
        }
        if let Some(q) = r.q_label {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end" {FONT}>{}</text>"#,
                opts.width - 8.0,
                y + 4.0,
                format_sig3(q)
            );
        }
    }
    let axis_y = bottom + 8.0;
    let _ = writeln!(
        s,
        r#"<path d="M {plot_lo:.2} {axis_y:.2} H {plot_hi:.2}" stroke="black" fill="none"/>"#
    );
    for v in [lo + pad, 0.0, hi - pad] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" {FONT}>{}</text>"#,
            sx(v),
            axis_y + 14.0,
            format_sig3(v)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Treatments on a circle, edges with stroke width `∝ study_count`.
pub fn render_network_svg(graph: &NetworkGraph, opts: &SvgOptions) -> String {
    let size = opts.width;
    let c = size / 2.0;
    let radius = size / 2.0 - 110.0;
    let n = graph.nodes.len().max(1) as f64;
    let pos: BTreeMap<&str, (f64, f64)> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let a = -std::f64::consts::FRAC_PI_2 + std::f64::consts::TAU * i as f64 / n;
            (t.as_str(), (c + radius * a.cos(), c + radius * a.sin()))
        })
        .collect();

    let mut s = String::new();
    let _ = writeln!(s, "{SVG_HEADER}");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size:.0}" height="{size:.0}" viewBox="0 0 {size:.0} {size:.0}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{size:.0}" height="{size:.0}" fill="white"/>"#);
    if let Some(title) = &opts.title {
        let _ = writeln!(
            s,
            r#"<text x="{c:.2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            escape_xml(title)
        );
    }
    for e in &graph.edges {
        let (x1, y1) = pos[e.pair[0].as_str()];
        let (x2, y2) = pos[e.pair[1].as_str()];
        let _ = writeln!(
            s,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="steelblue" stroke-opacity="0.8" stroke-width="{:.3}"/>"#,
            1.0 + 9.0 * e.width_weight
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" {FONT} fill="dimgray">{}</text>"#,
            (x1 + x2) / 2.0,
            (y1 + y2) / 2.0 - 4.0,
            e.study_count
        );
    }
    for t in &graph.nodes {
        let (x, y) = pos[t.as_str()];
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="black"/>"#);
        let (dx, anchor) = if x < c - 1.0 {
            (-10.0, "end")
        } else if x > c + 1.0 {
            (10.0, "start")
        } else {
            (0.0, "middle")
        };
        let dy = if (x - c).abs() <= 1.0 {
            if y < c { -12.0 } else { 20.0 }
        } else {
            4.0
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}" {FONT}>{}</text>"#,
            x + dx,
            y + dy,
            escape_xml(t)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::compare_models;
    use crate::dataset::ContrastObservation;

    fn dataset(rows: &[(&str, &str, f64, f64)]) -> NetworkDataset {
        let studies = rows
            .iter()
            .enumerate()
            .map(|(i, (a, b, y, s))| ContrastObservation {
                study_id: format!("s{}", i + 1),
                treat_a: Treatment::new(a).unwrap(),
                treat_b: Treatment::new(b).unwrap(),
                effect: *y,
                se: *s,
            })
            .collect();
        NetworkDataset::new("t", EffectMeasure::Md, studies, None).unwrap()
    }

    #[test]
    fn sig3_formatting() {
        assert_eq!(format_sig3(23.2847), "23.3");
        assert_eq!(format_sig3(9.2511), "9.25");
        assert_eq!(format_sig3(6.0), "6.00");
        assert_eq!(format_sig3(0.0345), "0.0345");
        assert_eq!(format_sig3(190.15), "190");
        assert_eq!(format_sig3(9.996), "10.0");
        assert_eq!(format_sig3(-3.061), "-3.06");
    }

    #[test]
    fn single_study_forest() {
        let ds = dataset(&[("P", "A", 0.4, 0.1)]);
        let r = compare_models(&ds, TauMethod::Dl);
        // one study leaves no residual degrees of freedom for the fits
        assert!(r.is_err());
        let ds = dataset(&[("P", "A", 0.4, 0.1), ("P", "A", 0.6, 0.2)]);
        let r = compare_models(&ds, TauMethod::Dl).unwrap();
        let rows = forest_data(&ds, &r.re, &r.me, &r.q, "P").unwrap();
        assert_eq!(rows.len(), 4);
        let z = crate::numerics::normal_quantile(0.975).unwrap();
        assert!((rows[0].ci_lo - (0.4 - z * 0.1)).abs() < 1e-12);
        assert!((rows[0].ci_hi - (0.4 + z * 0.1)).abs() < 1e-12);
        assert!(forest_data(&ds, &r.re, &r.me, &r.q, "Z").is_err());
    }

    #[test]
    fn forest_orientation_follows_target() {
        let ds = dataset(&[("P", "A", 0.4, 0.1), ("A", "P", 0.6, 0.2)]);
        let r = compare_models(&ds, TauMethod::Dl).unwrap();
        let rows = forest_data(&ds, &r.re, &r.me, &r.q, "P").unwrap();
        assert_eq!(rows[0].estimate, 0.4);
        assert_eq!(rows[1].estimate, -0.6);
        let rows = forest_data(&ds, &r.re, &r.me, &r.q, "A").unwrap();
        assert_eq!(rows[0].estimate, -0.4);
        assert_eq!(rows[1].estimate, 0.6);
    }

    #[test]
    fn one_row_svg() {
        let rows = vec![ForestRow {
            group: "A".into(),
            label: "s1".into(),
            estimate: 0.5,
            ci_lo: 0.2,
            ci_hi: 0.8,
            marker: Marker::StudyCircle { area_weight: 4.0 },
            q_label: None,
        }];
        let svg = render_forest_svg(&rows, &SvgOptions::default());
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<line").count(), 1);
        assert_eq!(svg, render_forest_svg(&rows, &SvgOptions::default()));
    }

    #[test]
    fn labels_are_escaped() {
        let ds = dataset(&[("P&Q", "<A>", 0.4, 0.1), ("P&Q", "<A>", 0.6, 0.2)]);
        let svg = render_network_svg(&network_data(&ds), &SvgOptions::default());
        assert!(svg.contains("P&amp;Q"));
        assert!(svg.contains("&lt;A&gt;"));
        assert!(!svg.contains("<A>"));
    }

    #[test]
    fn fit_report_round_trip() {
        let ds = dataset(&[("P", "A", 1.0, 1.0), ("P", "A", 1.0, 1.0)]);
        let r = compare_models(&ds, TauMethod::Dl).unwrap();
        let rep = fit_report(&ds, &r, &[]).unwrap();
        assert_eq!(rep.models.len(), 3);
        assert!(rep.q.total < 1e-24);
        assert!(rep.delta_aic.abs() < 1e-12);
        let json = serde_json::to_string(&rep).unwrap();
        let back: FitReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.classification, rep.classification);
        assert_eq!(back, rep);
        let only_me = fit_report(&ds, &r, &[ModelKind::Me]).unwrap();
        assert_eq!(only_me.models.len(), 1);
        assert!(fit_report(&ds, &r, &[ModelKind::ReReml]).is_err());
    }

    #[test]
    fn per_study_csv_columns() {
        let ds = dataset(&[("P", "A", 0.0, 1.0), ("P", "A", 2.0, 1.0)]);
        let r = compare_models(&ds, TauMethod::Dl).unwrap();
        let csv = QReport::new(&ds, &r.q).per_study_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("study_id,treat_a,treat_b,effect,se,q_het_i"));
        assert_eq!(lines.next(), Some("s1,P,A,0,1,1"));
        assert_eq!(lines.next(), Some("s2,P,A,2,1,1"));
    }
}
