//! Generalised Cochran Q for the fixed-effect network fit and its split into
//! within-design heterogeneity and between-design inconsistency.

use serde::{Deserialize, Serialize};

use crate::dataset::{group_designs, Design, DesignMatrix, NetworkDataset};
use crate::error::Result;
use crate::models::{fit_fe, ModelFit};
use crate::numerics::chi_square_sf;

/// Chi-square p-value, or a marker when the component has no degrees of
/// freedom and so cannot be tested. Serialises as a number or `"untestable"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PValue {
    Value(f64),
    Untestable,
}

impl Serialize for PValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PValue::Value(p) => serializer.serialize_f64(*p),
            PValue::Untestable => serializer.serialize_str("untestable"),
        }
    }
}

impl<'de> Deserialize<'de> for PValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Value(f64),
            Marker(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Value(p) => Ok(PValue::Value(p)),
            Raw::Marker(m) if m == "untestable" => Ok(PValue::Untestable),
            Raw::Marker(m) => Err(serde::de::Error::custom(format!("unexpected p-value marker `{m}`"))),
        }
    }
}

impl PValue {
    fn for_statistic(q: f64, df: usize) -> Self {
        match u32::try_from(df) {
            Ok(df) if df > 0 => PValue::Value(chi_square_sf(q.max(0.0), df).expect("df > 0")),
            _ => PValue::Untestable,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            PValue::Value(p) => Some(p),
            PValue::Untestable => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignContribution {
    pub design: Design,
    pub q_het_c: f64,
    /// Inverse-variance mean in the design's canonical orientation.
    pub pooled_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyContribution {
    pub study: usize,
    pub q_het_i: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QDecomposition {
    pub q_total: f64,
    pub q_het: f64,
    pub q_inc: f64,
    pub df_het: usize,
    pub df_inc: usize,
    pub p_het: PValue,
    pub p_inc: PValue,
    pub per_design: Vec<DesignContribution>,
    /// One entry per study, in dataset order.
    pub per_study: Vec<StudyContribution>,
}

impl QDecomposition {
    pub fn designs(&self) -> usize {
        self.per_design.len()
    }
}

/// `(y - ŷ_FE)' V⁻¹ (y - ŷ_FE)`.
pub fn q_total(ds: &NetworkDataset, fe: &ModelFit) -> f64 {
    fe.residuals
        .iter()
        .zip(ds.studies())
        .map(|(r, s)| r * r / (s.se * s.se))
        .sum()
}

/// Splits `Q_total` into per-design heterogeneity and inconsistency using
/// FE weights `1/s²`. Effects are put in each design's canonical orientation
/// before pooling, so contributions do not depend on how a row was entered.
pub fn q_decompose(ds: &NetworkDataset, fe: &ModelFit) -> QDecomposition {
    let studies = ds.studies();
    let weights: Vec<f64> = studies.iter().map(|s| 1.0 / (s.se * s.se)).collect();
    let mut per_study: Vec<StudyContribution> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| StudyContribution {
            study: i,
            q_het_i: 0.0,
            weight: w,
        })
        .collect();

    let designs = group_designs(ds);
    let mut per_design = Vec::with_capacity(designs.len());
    let mut q_inc = 0.0;
    for design in designs {
        let oriented = |i: usize| studies[i].orientation() * studies[i].effect;
        let fitted = |i: usize| studies[i].orientation() * fe.fitted[i];
        let w_sum: f64 = design.members.iter().map(|&i| weights[i]).sum();
        let pooled_mean = design.members.iter().map(|&i| weights[i] * oriented(i)).sum::<f64>() / w_sum;
        let mut q_het_c = 0.0;
        for &i in &design.members {
            let q = weights[i] * (oriented(i) - pooled_mean).powi(2);
            per_study[i].q_het_i = q;
            q_het_c += q;
            q_inc += weights[i] * (pooled_mean - fitted(i)).powi(2);
        }
        per_design.push(DesignContribution {
            design,
            q_het_c,
            pooled_mean,
        });
    }

    let q_het = per_design.iter().map(|d| d.q_het_c).sum();
    let c = per_design.len();
    let df_het = ds.m() - c;
    let df_inc = c - (ds.n() - 1);
    if df_inc == 0 {
        // designs form a spanning tree, so the FE fit reproduces every design mean
        q_inc = 0.0;
    }
    QDecomposition {
        q_total: q_total(ds, fe),
        q_het,
        q_inc,
        df_het,
        df_inc,
        p_het: PValue::for_statistic(q_het, df_het),
        p_inc: PValue::for_statistic(q_inc, df_inc),
        per_design,
        per_study,
    }
}

/// Fits FE and decomposes in one step.
pub fn decompose(ds: &NetworkDataset, x: &DesignMatrix) -> Result<QDecomposition> {
    let fe = fit_fe(ds, x)?;
    Ok(q_decompose(ds, &fe))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenResult {
    Heterogeneous,
    Homogeneous,
    Untestable,
}

impl ScreenResult {
    pub fn as_str(self) -> &'static str {
        match self {
            ScreenResult::Heterogeneous => "heterogeneous",
            ScreenResult::Homogeneous => "homogeneous",
            ScreenResult::Untestable => "untestable",
        }
    }
}

/// Within-design heterogeneity test at level `alpha`.
pub fn screen(q: &QDecomposition, alpha: f64) -> ScreenResult {
    match q.p_het {
        PValue::Untestable => ScreenResult::Untestable,
        PValue::Value(p) if p < alpha => ScreenResult::Heterogeneous,
        PValue::Value(_) => ScreenResult::Homogeneous,
    }
}

pub fn screen_heterogeneity(ds: &NetworkDataset, x: &DesignMatrix, alpha: f64) -> Result<ScreenResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(crate::NmaError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(screen(&decompose(ds, x)?, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_design_matrix, ContrastObservation, EffectMeasure, Treatment};

    fn ds(rows: &[(&str, &str, f64, f64)]) -> (NetworkDataset, DesignMatrix) {
        let studies = rows
            .iter()
            .enumerate()
            .map(|(i, (a, b, y, s))| ContrastObservation {
                study_id: format!("s{i}"),
                treat_a: Treatment::new(a).unwrap(),
                treat_b: Treatment::new(b).unwrap(),
                effect: *y,
                se: *s,
            })
            .collect();
        let ds = NetworkDataset::new("t", EffectMeasure::Md, studies, None).unwrap();
        let x = build_design_matrix(&ds).unwrap();
        (ds, x)
    }

    #[test]
    fn duplicate_data_has_zero_q() {
        let (d, x) = ds(&[("P", "A", 1.0, 1.0), ("P", "A", 1.0, 1.0)]);
        let q = decompose(&d, &x).unwrap();
        assert!(q.q_total < 1e-24);
        assert!(q.p_het.value().unwrap() > 1.0 - 1e-9);
        assert_eq!(screen(&q, 0.05), ScreenResult::Homogeneous);
    }

    #[test]
    fn two_study_pair() {
        let (d, x) = ds(&[("P", "A", 0.0, 1.0), ("P", "A", 2.0, 1.0)]);
        let q = decompose(&d, &x).unwrap();
        assert!((q.q_total - 2.0).abs() < 1e-14);
        assert!((q.q_het - 2.0).abs() < 1e-14);
        assert_eq!(q.df_inc, 0);
        assert_eq!(q.p_inc, PValue::Untestable);
    }

    #[test]
    fn star_network_has_no_inconsistency() {
        let (d, x) = ds(&[
            ("P", "A", 0.3, 0.2),
            ("P", "A", 0.9, 0.4),
            ("P", "B", -0.2, 0.3),
            ("B", "P", 0.5, 0.5),
        ]);
        let q = decompose(&d, &x).unwrap();
        assert_eq!(q.q_inc, 0.0);
        assert_eq!(q.df_inc, 0);
        assert!((q.q_total - q.q_het).abs() < 1e-12);
    }

    #[test]
    fn loop_network_is_additive() {
        let (d, x) = ds(&[
            ("A", "B", 0.3, 0.2),
            ("B", "C", 0.9, 0.4),
            ("A", "C", -0.2, 0.3),
            ("C", "A", 0.5, 0.5),
            ("A", "B", 0.1, 0.25),
        ]);
        let q = decompose(&d, &x).unwrap();
        assert_eq!(q.df_het, 2);
        assert_eq!(q.df_inc, 1);
        assert!(q.q_inc > 0.0);
        assert!((q.q_total - q.q_het - q.q_inc).abs() <= 1e-10 * q.q_total);
        let sum_i: f64 = q.per_study.iter().map(|s| s.q_het_i).sum();
        assert!((sum_i - q.q_het).abs() < 1e-12);
    }

    #[test]
    fn p_value_json() {
        assert_eq!(serde_json::to_string(&PValue::Untestable).unwrap(), "\"untestable\"");
        assert_eq!(serde_json::to_string(&PValue::Value(0.25)).unwrap(), "0.25");
        assert_eq!(serde_json::from_str::<PValue>("0.25").unwrap(), PValue::Value(0.25));
        assert_eq!(serde_json::from_str::<PValue>("\"untestable\"").unwrap(), PValue::Untestable);
        assert!(serde_json::from_str::<PValue>("\"maybe\"").is_err());
    }

    #[test]
    fn one_study_per_design_is_untestable() {
        let (d, x) = ds(&[("A", "B", 0.3, 0.2), ("B", "C", 0.9, 0.4), ("A", "C", -0.2, 0.3)]);
        assert_eq!(screen_heterogeneity(&d, &x, 0.05).unwrap(), ScreenResult::Untestable);
        assert!(screen_heterogeneity(&d, &x, 1.5).is_err());
    }
}
