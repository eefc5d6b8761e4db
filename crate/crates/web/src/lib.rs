//! Browser bindings: parse a dataset pasted into the page, compare the three
//! models and draw the forest and network plots.

use nma_core::analysis::compare_models;
use nma_core::dataset::{parse_dataset, DataFormat, EffectMeasure, NetworkDataset, ParseOptions};
use nma_core::models::TauMethod;
use nma_core::report::{
    fit_report, forest_data, network_data, render_forest_svg, render_network_svg, ComparisonSummary, SvgOptions,
};
use wasm_bindgen::prelude::*;

/// Bundled example datasets, as `(name, JSON text)`.
pub const SAMPLES: [(&str, &str); 3] = [
    ("tables1", include_str!("../../../corpus/tables1.json")),
    ("tables2", include_str!("../../../corpus/tables2.json")),
    ("tables3", include_str!("../../../corpus/tables3.json")),
];

fn parse(text: &str, format: &str, measure: &str) -> Result<NetworkDataset, String> {
    let format = match format {
        "csv" => DataFormat::Csv,
        "json" => DataFormat::Json,
        other => return Err(format!("unknown format {other:?}")),
    };
    let measure = match measure {
        "" => None,
        m => Some(m.parse::<EffectMeasure>().map_err(|e| e.to_string())?),
    };
    let opts = ParseOptions {
        name: "pasted".into(),
        measure,
        ..ParseOptions::default()
    };
    parse_dataset(text.as_bytes(), format, &opts).map_err(|e| e.to_string())
}

fn tau_method(tau: &str) -> Result<TauMethod, String> {
    tau.parse().map_err(|e: nma_core::NmaError| e.to_string())
}

fn strip_prolog(svg: String) -> String {
    match svg.strip_prefix(r#"<?xml version="1.0" encoding="UTF-8"?>"#) {
        Some(rest) => rest.trim_start().to_string(),
        None => svg,
    }
}

/// Full comparison as JSON: `{"summary": ..., "fit": ...}`.
pub fn analyze_text(text: &str, format: &str, measure: &str, tau: &str) -> Result<String, String> {
    let ds = parse(text, format, measure)?;
    let report = compare_models(&ds, tau_method(tau)?).map_err(|e| e.to_string())?;
    let fit = fit_report(&ds, &report, &[]).map_err(|e| e.to_string())?;
    let out = serde_json::json!({
        "summary": ComparisonSummary::new(&report),
        "fit": fit,
        "treatments": ds.treatments().iter().map(|t| t.as_str()).collect::<Vec<_>>(),
    });
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Forest plot SVG against `target`; an empty target means the reference.
pub fn forest_text(text: &str, format: &str, measure: &str, tau: &str, target: &str) -> Result<String, String> {
    let ds = parse(text, format, measure)?;
    let report = compare_models(&ds, tau_method(tau)?).map_err(|e| e.to_string())?;
    let target = if target.is_empty() { ds.reference().as_str() } else { target };
    let rows = forest_data(&ds, &report.re, &report.me, &report.q, target).map_err(|e| e.to_string())?;
    let opts = SvgOptions {
        title: Some(format!("Comparisons against {target}")),
        ..SvgOptions::default()
    };
    Ok(strip_prolog(render_forest_svg(&rows, &opts)))
}

pub fn network_text(text: &str, format: &str, measure: &str) -> Result<String, String> {
    let ds = parse(text, format, measure)?;
    let opts = SvgOptions {
        width: 520.0,
        ..SvgOptions::default()
    };
    Ok(strip_prolog(render_network_svg(&network_data(&ds), &opts)))
}

#[wasm_bindgen]
pub fn analyze(text: &str, format: &str, measure: &str, tau: &str) -> Result<String, JsError> {
    analyze_text(text, format, measure, tau).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn forest_svg(text: &str, format: &str, measure: &str, tau: &str, target: &str) -> Result<String, JsError> {
    forest_text(text, format, measure, tau, target).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn network_svg(text: &str, format: &str, measure: &str) -> Result<String, JsError> {
    network_text(text, format, measure).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sample(name: &str) -> Option<String> {
    SAMPLES.iter().find(|(n, _)| *n == name).map(|(_, t)| t.to_string())
}
