//! Two-arm contrast data: validated datasets, study designs and the
//! contrast-coding design matrix.

mod contrast;
mod graph;
mod parse;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NmaError, Result};
use crate::numerics::DenseMatrix;

pub use contrast::{derive_contrast_binary, derive_contrast_continuous, DEFAULT_CORRECTION};
pub use graph::connected_components;
pub use parse::{parse_dataset, DataFormat, DatasetFile, ParseOptions, StudyRecord};

/// Treatment label; surrounding whitespace is trimmed on construction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Treatment(String);

impl Treatment {
    pub fn new(label: &str) -> Result<Self> {
        let t = label.trim();
        if t.is_empty() {
            return Err(NmaError::InvalidTreatment(label.to_string()));
        }
        Ok(Self(t.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Treatment {
    type Error = NmaError;

    fn try_from(s: String) -> Result<Self> {
        Self::new(&s)
    }
}

impl From<Treatment> for String {
    fn from(t: Treatment) -> String {
        t.0
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Scale on which study effects are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EffectMeasure {
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "logOR")]
    LogOr,
    #[serde(rename = "logRR")]
    LogRr,
}

impl EffectMeasure {
    pub fn as_str(self) -> &'static str {
        match self {
            EffectMeasure::Md => "MD",
            EffectMeasure::LogOr => "logOR",
            EffectMeasure::LogRr => "logRR",
        }
    }
}

impl std::str::FromStr for EffectMeasure {
    type Err = NmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "md" => Ok(EffectMeasure::Md),
            "logor" | "log_or" | "or" => Ok(EffectMeasure::LogOr),
            "logrr" | "log_rr" | "rr" => Ok(EffectMeasure::LogRr),
            _ => Err(NmaError::UnknownMeasure(s.to_string())),
        }
    }
}

impl fmt::Display for EffectMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One two-arm study: `effect` estimates `treat_b` relative to `treat_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastObservation {
    pub study_id: String,
    pub treat_a: Treatment,
    pub treat_b: Treatment,
    pub effect: f64,
    pub se: f64,
}

impl ContrastObservation {
    /// Same study with arms swapped and the effect negated.
    pub fn flipped(&self) -> Self {
        Self {
            study_id: self.study_id.clone(),
            treat_a: self.treat_b.clone(),
            treat_b: self.treat_a.clone(),
            effect: -self.effect,
            se: self.se,
        }
    }

    /// `+1` when the study is oriented as its canonical design pair, `-1`
    /// otherwise.
    pub fn orientation(&self) -> f64 {
        if self.treat_a <= self.treat_b {
            1.0
        } else {
            -1.0
        }
    }

    fn validate(&self, row: usize) -> Result<()> {
        if self.treat_a == self.treat_b {
            return Err(NmaError::SelfComparison {
                row,
                treatment: self.treat_a.to_string(),
            });
        }
        if !self.effect.is_finite() {
            return Err(NmaError::MalformedRow {
                row,
                message: format!("non-finite effect {}", self.effect),
            });
        }
        if !(self.se > 0.0) || !self.se.is_finite() {
            return Err(NmaError::NonPositiveSe { row, se: self.se });
        }
        Ok(())
    }
}

/// A validated, connected collection of two-arm contrasts.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDataset {
    name: String,
    measure: EffectMeasure,
    reference: Treatment,
    studies: Vec<ContrastObservation>,
    treatments: Vec<Treatment>,
}

impl NetworkDataset {
    /// Validates studies and derives the sorted treatment list. The reference
    /// defaults to the lexicographically smallest treatment.
    pub fn new(
        name: impl Into<String>,
        measure: EffectMeasure,
        studies: Vec<ContrastObservation>,
        reference: Option<&str>,
    ) -> Result<Self> {
        if studies.is_empty() {
            return Err(NmaError::EmptyDataset);
        }
        let mut seen = HashSet::new();
        for (i, s) in studies.iter().enumerate() {
            s.validate(i + 1)?;
            if !seen.insert(s.study_id.as_str()) {
                return Err(NmaError::DuplicateStudy(s.study_id.clone()));
            }
        }
        let mut treatments: Vec<Treatment> = studies
            .iter()
            .flat_map(|s| [s.treat_a.clone(), s.treat_b.clone()])
            .collect();
        treatments.sort();
        treatments.dedup();

        let components = graph::components_of(&treatments, &studies);
        if components.len() > 1 {
            return Err(NmaError::Disconnected(components));
        }

        let reference = match reference {
            Some(r) => {
                let r = Treatment::new(r)?;
                if !treatments.contains(&r) {
                    return Err(NmaError::UnknownTreatment(r.to_string()));
                }
                r
            }
            None => treatments[0].clone(),
        };
        Ok(Self {
            name: name.into(),
            measure,
            reference,
            studies,
            treatments,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn measure(&self) -> EffectMeasure {
        self.measure
    }

    pub fn reference(&self) -> &Treatment {
        &self.reference
    }

    pub fn studies(&self) -> &[ContrastObservation] {
        &self.studies
    }

    pub fn treatments(&self) -> &[Treatment] {
        &self.treatments
    }

    /// Number of studies.
    pub fn m(&self) -> usize {
        self.studies.len()
    }

    /// Number of treatments.
    pub fn n(&self) -> usize {
        self.treatments.len()
    }

    pub fn effects(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.effect).collect()
    }

    pub fn ses(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.se).collect()
    }

    /// Within-study variances `s_i²`.
    pub fn variances(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.se * s.se).collect()
    }

    pub fn contains_treatment(&self, label: &str) -> bool {
        self.treatments.iter().any(|t| t.as_str() == label.trim())
    }

    pub fn study_index(&self, study_id: &str) -> Option<usize> {
        self.studies.iter().position(|s| s.study_id == study_id)
    }

    /// Same data under a different reference treatment.
    pub fn with_reference(&self, reference: &str) -> Result<Self> {
        Self::new(self.name.clone(), self.measure, self.studies.clone(), Some(reference))
    }

    /// Same data with the studies reordered; `order[k]` is the old index of
    /// the new k-th study.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.m() {
            return Err(NmaError::InvalidArgument("permutation length mismatch".into()));
        }
        let studies = order.iter().map(|&i| self.studies[i].clone()).collect();
        Self::new(self.name.clone(), self.measure, studies, Some(self.reference.as_str()))
    }

    /// Same data with the selected studies' arms swapped.
    pub fn with_flipped(&self, flip: impl Fn(usize) -> bool) -> Self {
        let studies = self
            .studies
            .iter()
            .enumerate()
            .map(|(i, s)| if flip(i) { s.flipped() } else { s.clone() })
            .collect();
        Self { studies, ..self.clone() }
    }

    /// Joint rescaling `(y, s) -> (c y, c s)`.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(NmaError::InvalidArgument(format!("scale must be positive, got {c}")));
        }
        let studies = self
            .studies
            .iter()
            .map(|s| ContrastObservation {
                effect: c * s.effect,
                se: c * s.se,
                ..s.clone()
            })
            .collect();
        Ok(Self { studies, ..self.clone() })
    }

    /// Drops the named studies and re-validates what is left. Fails when an
    /// id is unknown, when a treatment loses its last study, or when the
    /// remaining network is disconnected.
    pub fn excluding(&self, study_ids: &[&str]) -> Result<Self> {
        for id in study_ids {
            if self.study_index(id).is_none() {
                return Err(NmaError::UnknownStudy(id.to_string()));
            }
        }
        let kept: Vec<ContrastObservation> = self
            .studies
            .iter()
            .filter(|s| !study_ids.contains(&s.study_id.as_str()))
            .cloned()
            .collect();
        if kept.is_empty() {
            return Err(NmaError::EmptyDataset);
        }
        for t in &self.treatments {
            if !kept.iter().any(|s| &s.treat_a == t || &s.treat_b == t) {
                return Err(NmaError::TreatmentRemoved(t.to_string()));
            }
        }
        Self::new(self.name.clone(), self.measure, kept, Some(self.reference.as_str()))
    }
}

/// Studies sharing one unordered treatment pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Design {
    /// Canonical pair, lexicographically smaller label first.
    pub pair: (Treatment, Treatment),
    /// Indices into the dataset's study list, ascending.
    pub members: Vec<usize>,
}

impl Design {
    pub fn label(&self) -> String {
        format!("{} vs {}", self.pair.0, self.pair.1)
    }

    pub fn contains(&self, t: &Treatment) -> bool {
        &self.pair.0 == t || &self.pair.1 == t
    }
}

fn canonical_pair(s: &ContrastObservation) -> (Treatment, Treatment) {
    if s.treat_a <= s.treat_b {
        (s.treat_a.clone(), s.treat_b.clone())
    } else {
        (s.treat_b.clone(), s.treat_a.clone())
    }
}

/// Partitions the studies by unordered treatment pair, sorted by pair.
pub fn group_designs(ds: &NetworkDataset) -> Vec<Design> {
    let mut map: BTreeMap<(Treatment, Treatment), Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.studies().iter().enumerate() {
        map.entry(canonical_pair(s)).or_default().push(i);
    }
    map.into_iter()
        .map(|(pair, members)| Design { pair, members })
        .collect()
}

/// Contrast-coding matrix `X` with `E(y) = X d`, `d` indexed by the
/// non-reference treatments in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DenseMatrix,
    column_treatments: Vec<Treatment>,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn column_treatments(&self) -> &[Treatment] {
        &self.column_treatments
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn cols(&self) -> usize {
        self.x.cols()
    }

    pub fn column_of(&self, t: &Treatment) -> Option<usize> {
        self.column_treatments.iter().position(|c| c == t)
    }
}

/// Builds `X`: `+1` on `treat_b`'s column, `-1` on `treat_a`'s column, no
/// entry for the reference.
pub fn build_design_matrix(ds: &NetworkDataset) -> Result<DesignMatrix> {
    let components = graph::components_of(ds.treatments(), ds.studies());
    if components.len() > 1 {
        return Err(NmaError::Disconnected(components));
    }
    let column_treatments: Vec<Treatment> = ds
        .treatments()
        .iter()
        .filter(|t| *t != ds.reference())
        .cloned()
        .collect();
    if column_treatments.is_empty() {
        return Err(NmaError::RankDeficient);
    }
    let col = |t: &Treatment| column_treatments.iter().position(|c| c == t);
    let mut x = DenseMatrix::zeros(ds.m(), column_treatments.len());
    for (i, s) in ds.studies().iter().enumerate() {
        if let Some(j) = col(&s.treat_b) {
            x[(i, j)] = 1.0;
        }
        if let Some(j) = col(&s.treat_a) {
            x[(i, j)] = -1.0;
        }
    }
    Ok(DesignMatrix { x, column_treatments })
}
