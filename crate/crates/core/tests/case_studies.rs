mod common;

use common::{corpus, corpus_path, published_q};
use nma_core::analysis::{compare_models, exclude_and_refit, leave_one_out, load_dataset, LooOutcome};
use nma_core::dataset::{build_design_matrix, group_designs, EffectMeasure};
use nma_core::heterogeneity::{screen, ScreenResult};
use nma_core::models::{estimate_tau2_reml, reml_objective, reml_upper_bound, TauMethod};
use nma_core::numerics::normal_quantile;
use nma_core::report::{
    fit_report, forest_data, format_sig3, network_data, render_forest_svg, render_network_svg, FitReport, Marker,
    SvgOptions,
};

#[test]
fn per_study_contributions_match_published_tables() {
    for name in ["tables1", "tables2", "tables3"] {
        let ds = corpus(name);
        let r = compare_models(&ds, TauMethod::Dl).unwrap();
        let published = published_q(name);
        assert_eq!(published.len(), ds.m());
        for ((id, q), (s, c)) in published.iter().zip(ds.studies().iter().zip(&r.q.per_study)) {
            assert_eq!(id, &s.study_id);
            let tol = (0.02 * q).max(0.05);
            assert!((c.q_het_i - q).abs() <= tol, "{name} {id}: {} vs {q}", c.q_het_i);
        }
    }
}

#[test]
fn csv_and_json_copies_agree() {
    for (name, measure) in [
        ("tables1", EffectMeasure::LogRr),
        ("tables2", EffectMeasure::LogOr),
        ("tables3", EffectMeasure::LogOr),
    ] {
        let json = corpus(name);
        let csv = load_dataset(&corpus_path(&format!("csv/{name}.csv")), Some(measure), None).unwrap();
        assert_eq!(json.measure(), measure);
        assert_eq!(json.studies(), csv.studies());
        assert_eq!(json.name(), csv.name());
    }
}

#[test]
fn network_sizes() {
    for (name, m, n, c) in [("tables1", 29, 7, 6), ("tables2", 20, 7, 10), ("tables3", 32, 9, 8)] {
        let ds = corpus(name);
        assert_eq!((ds.m(), ds.n(), group_designs(&ds).len()), (m, n, c), "{name}");
    }
}

#[test]
fn star_design_matrix() {
    let ds = corpus("tables1");
    let x = build_design_matrix(&ds).unwrap();
    assert_eq!((x.rows(), x.cols()), (29, 6));
    for (i, s) in ds.studies().iter().enumerate() {
        let row = x.matrix().row(i);
        let j = x.column_of(&s.treat_b).unwrap();
        for (k, v) in row.iter().enumerate() {
            assert_eq!(*v, if k == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn star_fe_estimates_are_design_means() {
    let ds = corpus("tables1");
    let r = compare_models(&ds, TauMethod::Dl).unwrap();
    let x = build_design_matrix(&ds).unwrap();
    for d in &r.q.per_design {
        let j = x.column_of(&d.design.pair.1).unwrap();
        let (mut sw, mut swy) = (0.0, 0.0);
        for &i in &d.design.members {
            let s = &ds.studies()[i];
            sw += 1.0 / (s.se * s.se);
            swy += s.effect / (s.se * s.se);
        }
        assert!((r.fe.d_hat[j] - swy / sw).abs() < 1e-12);
    }
}

#[test]
fn phi_scales_fe_intervals() {
    let ds = corpus("tables1");
    let r = compare_models(&ds, TauMethod::Dl).unwrap();
    assert!((r.phi - r.q.q_total / 23.0).abs() < 1e-12);
    assert!((r.phi - 82.25 / 23.0).abs() < 0.05);
    for j in 0..r.fe.d_hat.len() {
        assert!((r.me.se(j) - r.phi.sqrt() * r.fe.se(j)).abs() < 1e-12);
    }
    let s3 = compare_models(&corpus("tables3"), TauMethod::Dl).unwrap();
    assert!((s3.phi - 190.15 / 24.0).abs() < 0.1);
    assert!(s3.tau2 > 0.0);
}

#[test]
fn screening_flags_all_three_networks() {
    for name in ["tables1", "tables2", "tables3"] {
        let r = compare_models(&corpus(name), TauMethod::Dl).unwrap();
        assert_eq!(screen(&r.q, 0.05), ScreenResult::Heterogeneous, "{name}");
    }
}

#[test]
fn reml_on_smoke_alarm_network_matches_grid() {
    let ds = corpus("tables2");
    let x = build_design_matrix(&ds).unwrap();
    let hi = reml_upper_bound(&ds).min(5.0);
    let (mut best_t, mut best) = (0.0, f64::NEG_INFINITY);
    for k in 0..=100_000 {
        let t = hi * k as f64 / 100_000.0;
        let v = reml_objective(t, &ds, &x).unwrap();
        if v > best {
            best = v;
            best_t = t;
        }
    }
    assert!(best_t < hi);
    let est = estimate_tau2_reml(&ds, &x).unwrap();
    assert!((est - best_t).abs() <= 1e-4, "{est} vs {best_t}");
}

#[test]
fn dl_and_reml_share_the_me_side() {
    for name in ["tables1", "tables2", "tables3"] {
        let ds = corpus(name);
        let dl = compare_models(&ds, TauMethod::Dl).unwrap();
        let reml = compare_models(&ds, TauMethod::Reml).unwrap();
        assert_eq!(dl.aic_me, reml.aic_me);
        assert_eq!(dl.me, reml.me);
    }
}

#[test]
fn leave_one_out_finds_the_diclofenac_patch_study() {
    let ds = corpus("tables1");
    let entries = leave_one_out(&ds, TauMethod::Dl).unwrap();
    assert_eq!(entries.len(), 29);
    let (id, drop) = entries
        .iter()
        .filter_map(|e| match &e.outcome {
            LooOutcome::Refit(r) => Some((e.study_id.as_str(), -r.delta_q_het)),
            LooOutcome::Skipped(_) => None,
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(id, "row23");
    assert!((drop - 23.7).abs() < 0.5, "{drop}");
}

#[test]
fn leave_one_out_on_smoke_alarm_network() {
    let ds = corpus("tables2");
    let entries = leave_one_out(&ds, TauMethod::Dl).unwrap();
    assert_eq!(entries.len(), 20);
    for e in &entries {
        match &e.outcome {
            LooOutcome::Refit(r) => {
                let reduced = ds.excluding(&[e.study_id.as_str()]).unwrap();
                assert_eq!(r.refit.designs(), group_designs(&reduced).len());
                assert_eq!(r.refit.m, 19);
            }
            // single-study designs that carry a treatment cannot be dropped
            LooOutcome::Skipped(why) => assert!(why.contains("no studies left"), "{why}"),
        }
    }
}

#[test]
fn excluding_both_biologic_outliers() {
    let ds = corpus("tables3");
    let rec = exclude_and_refit(&ds, &["row21", "row28"], TauMethod::Dl).unwrap();
    assert!((rec.refit.q.q_total - 78.37).abs() <= 1.0);
    assert!((rec.refit.delta_aic - 5.88).abs() <= 0.5);
    assert_eq!(rec.refit.m, 30);
}

#[test]
fn network_graph_edges() {
    let g = network_data(&corpus("tables1"));
    assert_eq!(g.edges.len(), 6);
    let counts: Vec<usize> = g.edges.iter().map(|e| e.study_count).collect();
    assert_eq!(counts, [3, 5, 3, 6, 9, 3]);
    assert!(g.edges.iter().all(|e| e.pair[0] == "Placebo"));
    let max = *counts.iter().max().unwrap() as f64;
    for e in &g.edges {
        assert_eq!(e.width_weight, e.study_count as f64 / max);
    }

    let g = network_data(&corpus("tables2"));
    assert_eq!(g.edges.len(), 10);
    let e = g
        .edges
        .iter()
        .find(|e| e.pair == ["Education+HSI".to_string(), "Education+LCFE+HSI".to_string()])
        .unwrap();
    assert_eq!(e.study_count, 3);
}

#[test]
fn nsaid_forest_labels() {
    let ds = corpus("tables1");
    let r = compare_models(&ds, TauMethod::Dl).unwrap();
    let rows = forest_data(&ds, &r.re, &r.me, &r.q, "Placebo").unwrap();
    let count = |f: fn(&Marker) -> bool| rows.iter().filter(|r| f(&r.marker)).count();
    assert_eq!(count(|m| matches!(m, Marker::StudyCircle { .. })), 29);
    assert_eq!(count(|m| matches!(m, Marker::ReSquare)), 6);
    assert_eq!(count(|m| matches!(m, Marker::MeTriangle)), 6);

    let threshold = r.q.q_het / 29.0;
    let published = published_q("tables1");
    let mut labelled = Vec::new();
    for row in rows.iter().filter(|r| matches!(r.marker, Marker::StudyCircle { .. })) {
        let i = ds.study_index(&row.label).unwrap();
        let q = r.q.per_study[i].q_het_i;
        assert_eq!(row.q_label.is_some(), q > threshold, "{}", row.label);
        if let Some(v) = row.q_label {
            let p = published[i].1;
            assert!((v - p).abs() <= (0.02 * p).max(0.05));
            labelled.push(row.label.clone());
        }
    }
    let mut expected: Vec<String> = published
        .iter()
        .filter(|(_, q)| *q > 82.25 / 29.0)
        .map(|(id, _)| id.clone())
        .collect();
    labelled.sort();
    expected.sort();
    assert_eq!(labelled, expected);
    let mut printed: Vec<f64> = published.iter().map(|p| p.1).filter(|q| *q > 82.25 / 29.0).collect();
    printed.sort_by(|a, b| b.total_cmp(a));
    let printed: Vec<String> = printed.into_iter().map(format_sig3).collect();
    assert_eq!(printed, ["23.3", "9.25", "6.00", "5.12", "4.55", "4.33", "3.50", "3.36", "3.06"]);

    let z = normal_quantile(0.975).unwrap();
    for row in &rows {
        assert!(row.ci_lo <= row.estimate && row.estimate <= row.ci_hi);
        if let Marker::StudyCircle { area_weight } = row.marker {
            let se = (1.0 / area_weight).sqrt();
            assert!((row.ci_hi - row.ci_lo - 2.0 * z * se).abs() < 1e-10);
        }
    }
}

#[test]
fn smoke_alarm_forest_keeps_usual_care_designs() {
    let ds = corpus("tables2");
    let r = compare_models(&ds, TauMethod::Dl).unwrap();
    let rows = forest_data(&ds, &r.re, &r.me, &r.q, "Usual Care").unwrap();
    let studies: Vec<&str> = rows
        .iter()
        .filter(|r| matches!(r.marker, Marker::StudyCircle { .. }))
        .map(|r| r.label.as_str())
        .collect();
    assert_eq!(studies.len(), 13);
    for id in studies {
        let s = &ds.studies()[ds.study_index(id).unwrap()];
        assert!(s.treat_a.as_str() == "Usual Care" || s.treat_b.as_str() == "Usual Care");
    }
    let re_rows = rows.iter().filter(|r| matches!(r.marker, Marker::ReSquare)).count();
    assert_eq!(re_rows, 6);
}

#[test]
fn forest_svg_is_valid_and_sized_by_precision() {
    let ds = corpus("tables1");
    let r = compare_models(&ds, TauMethod::Dl).unwrap();
    let rows = forest_data(&ds, &r.re, &r.me, &r.q, "Placebo").unwrap();
    let svg = render_forest_svg(&rows, &SvgOptions::default());
    assert_eq!(svg, render_forest_svg(&rows, &SvgOptions::default()));
    let doc = roxmltree::Document::parse(&svg).unwrap();

    let circles: Vec<(f64, f64)> = doc
        .descendants()
        .filter(|n| n.has_tag_name("circle"))
        .map(|n| (n.attribute("cy").unwrap().parse().unwrap(), n.attribute("r").unwrap().parse().unwrap()))
        .collect();
    assert_eq!(circles.len(), 29);
    let (cy, _) = circles.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    // the label text sits on the same row as its circle
    let label = doc
        .descendants()
        .filter(|n| n.has_tag_name("text"))
        .find(|n| {
            let y: f64 = n.attribute("y").unwrap().parse().unwrap();
            (y - 4.0 - cy).abs() < 1e-6 && n.attribute("x") == Some("20")
        })
        .and_then(|n| n.text())
        .unwrap();
    let s = &ds.studies()[ds.study_index(label).unwrap()];
    assert_eq!(s.se, 0.119);
    let min_se = ds.studies().iter().map(|s| s.se).fold(f64::INFINITY, f64::min);
    assert_eq!(s.se, min_se);
}

#[test]
fn network_svg_is_valid() {
    let g = network_data(&corpus("tables2"));
    let svg = render_network_svg(&g, &SvgOptions::default());
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("line")).count(), 10);
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 7);
    let widths: Vec<f64> = doc
        .descendants()
        .filter(|n| n.has_tag_name("line"))
        .map(|n| n.attribute("stroke-width").unwrap().parse().unwrap())
        .collect();
    for (e, w) in g.edges.iter().zip(widths) {
        assert!((w - (1.0 + 9.0 * e.width_weight)).abs() < 1e-3);
    }
}

#[test]
fn biologics_fit_report() {
    let ds = corpus("tables3");
    let r = compare_models(&ds, TauMethod::Dl).unwrap();
    let rep = fit_report(&ds, &r, &[]).unwrap();
    assert!((rep.q.het - 190.15).abs() <= 2.0);
    let json = serde_json::to_string_pretty(&rep).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["classification"], "re_strong");
    assert_eq!(v["C"], 8);
    assert!(v["models"][1]["hetero"]["tau2"].as_f64().unwrap() > 0.0);
    let back: FitReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rep);

    for m in &rep.models {
        let z = normal_quantile(0.975).unwrap();
        for e in m.d_hat.values() {
            assert!((e.ci_hi - e.ci_lo - 2.0 * z * e.se).abs() < 1e-10);
        }
    }
}
