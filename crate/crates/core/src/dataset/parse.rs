use serde::{Deserialize, Serialize};

use crate::error::{NmaError, Result};

use super::{
    derive_contrast_binary, derive_contrast_continuous, ContrastObservation, EffectMeasure, NetworkDataset,
    Treatment, DEFAULT_CORRECTION,
};

const CONTRAST_HEADER: [&str; 5] = ["study_id", "treat_a", "treat_b", "effect", "se"];
const BINARY_ARM_HEADER: [&str; 4] = ["study_id", "treatment", "events", "total"];
const CONTINUOUS_ARM_HEADER: [&str; 4] = ["study_id", "treatment", "mean", "se"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    /// Guess from a file extension; anything but `.json` is read as CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => DataFormat::Json,
            _ => DataFormat::Csv,
        }
    }
}

/// Settings applied while reading a dataset. `measure` and `reference`
/// override whatever a JSON file declares; CSV files fall back to MD.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub name: String,
    pub measure: Option<EffectMeasure>,
    pub reference: Option<String>,
    pub correction: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            name: "dataset".into(),
            measure: None,
            reference: None,
            correction: DEFAULT_CORRECTION,
        }
    }
}

/// JSON dataset document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub name: String,
    pub measure: EffectMeasure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub studies: Vec<StudyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    #[serde(default)]
    pub study_id: Option<String>,
    pub treat_a: String,
    pub treat_b: String,
    pub effect: f64,
    pub se: f64,
}

impl From<&NetworkDataset> for DatasetFile {
    fn from(ds: &NetworkDataset) -> Self {
        DatasetFile {
            name: ds.name().to_string(),
            measure: ds.measure(),
            reference: Some(ds.reference().to_string()),
            studies: ds
                .studies()
                .iter()
                .map(|s| StudyRecord {
                    study_id: Some(s.study_id.clone()),
                    treat_a: s.treat_a.to_string(),
                    treat_b: s.treat_b.to_string(),
                    effect: s.effect,
                    se: s.se,
                })
                .collect(),
        }
    }
}

/// Reads a dataset. CSV input may be contrast-level or arm-level; the
/// header line decides which.
pub fn parse_dataset(source: &[u8], format: DataFormat, opts: &ParseOptions) -> Result<NetworkDataset> {
    let text = std::str::from_utf8(source).map_err(|e| NmaError::Io(format!("input is not UTF-8: {e}")))?;
    match format {
        DataFormat::Json => parse_json(text, opts),
        DataFormat::Csv => parse_csv(text, opts),
    }
}

fn synthetic_id(id: &str, row: usize) -> String {
    if id.trim().is_empty() {
        format!("row{row}")
    } else {
        id.trim().to_string()
    }
}

fn observation(id: String, a: &str, b: &str, effect: f64, se: f64, row: usize) -> Result<ContrastObservation> {
    let label = |t: &str| {
        Treatment::new(t).map_err(|_| NmaError::MalformedRow {
            row,
            message: "empty treatment label".into(),
        })
    };
    Ok(ContrastObservation {
        study_id: id,
        treat_a: label(a)?,
        treat_b: label(b)?,
        effect,
        se,
    })
}

fn parse_json(text: &str, opts: &ParseOptions) -> Result<NetworkDataset> {
    let file: DatasetFile =
        serde_json::from_str(text).map_err(|e| NmaError::Io(format!("invalid dataset JSON: {e}")))?;
    let studies = file
        .studies
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let row = i + 1;
            observation(
                synthetic_id(r.study_id.as_deref().unwrap_or(""), row),
                &r.treat_a,
                &r.treat_b,
                r.effect,
                r.se,
                row,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = opts.reference.as_deref().or(file.reference.as_deref());
    NetworkDataset::new(file.name, opts.measure.unwrap_or(file.measure), studies, reference)
}

fn field_f64(record: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    if raw.is_empty() {
        return Err(NmaError::MalformedRow {
            row,
            message: format!("missing field `{name}`"),
        });
    }
    raw.parse::<f64>().map_err(|_| NmaError::MalformedRow {
        row,
        message: format!("non-numeric {name} `{raw}`"),
    })
}

fn field_u64(record: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<u64> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<u64>().map_err(|_| NmaError::MalformedRow {
        row,
        message: format!("invalid count {name} `{raw}`"),
    })
}

fn field_str<'r>(record: &'r csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<&'r str> {
    match record.get(idx).map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(NmaError::MalformedRow {
            row,
            message: format!("missing field `{name}`"),
        }),
    }
}

fn parse_csv(text: &str, opts: &ParseOptions) -> Result<NetworkDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| NmaError::Io(format!("unreadable CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let records = reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| NmaError::MalformedRow {
                row: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let measure = opts.measure.unwrap_or(EffectMeasure::Md);
    let reference = opts.reference.as_deref();
    if header == CONTRAST_HEADER {
        let studies = records
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let row = i + 1;
                if rec.len() != CONTRAST_HEADER.len() {
                    return Err(NmaError::MalformedRow {
                        row,
                        message: format!("expected 5 fields, found {}", rec.len()),
                    });
                }
                observation(
                    synthetic_id(rec.get(0).unwrap_or(""), row),
                    field_str(rec, 1, "treat_a", row)?,
                    field_str(rec, 2, "treat_b", row)?,
                    field_f64(rec, 3, "effect", row)?,
                    field_f64(rec, 4, "se", row)?,
                    row,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkDataset::new(opts.name.clone(), measure, studies, reference)
    } else if header == BINARY_ARM_HEADER || header == CONTINUOUS_ARM_HEADER {
        let binary = header == BINARY_ARM_HEADER;
        let measure = match (binary, opts.measure) {
            (true, None) => EffectMeasure::LogOr,
            (true, Some(EffectMeasure::Md)) => {
                return Err(NmaError::InvalidArgument("binary arm data needs logOR or logRR".into()))
            }
            (false, Some(m)) if m != EffectMeasure::Md => {
                return Err(NmaError::InvalidArgument("continuous arm data yields mean differences".into()))
            }
            (true, Some(m)) => m,
            (false, _) => EffectMeasure::Md,
        };
        let studies = arms_to_contrasts(&records, binary, measure, opts.correction)?;
        NetworkDataset::new(opts.name.clone(), measure, studies, reference)
    } else {
        Err(NmaError::Io(format!(
            "unrecognised CSV header `{}`; expected `{}`, `{}` or `{}`",
            header.join(","),
            CONTRAST_HEADER.join(","),
            BINARY_ARM_HEADER.join(","),
            CONTINUOUS_ARM_HEADER.join(",")
        )))
    }
}

/// Pairs arm rows by study id (first row is arm `a`) and derives contrasts.
fn arms_to_contrasts(
    records: &[csv::StringRecord],
    binary: bool,
    measure: EffectMeasure,
    correction: f64,
) -> Result<Vec<ContrastObservation>> {
    let mut order: Vec<String> = Vec::new();
    let mut arms: std::collections::HashMap<String, Vec<(usize, &csv::StringRecord)>> = Default::default();
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        let id = field_str(rec, 0, "study_id", row)?.to_string();
        let entry = arms.entry(id.clone()).or_default();
        if entry.is_empty() {
            order.push(id);
        }
        entry.push((row, rec));
    }
    order
        .into_iter()
        .map(|id| {
            let rows = &arms[&id];
            if rows.len() != 2 {
                return Err(NmaError::InvalidArms(format!(
                    "study `{id}` has {} arms; exactly two are required",
                    rows.len()
                )));
            }
            let (ra, a) = rows[0];
            let (rb, b) = rows[1];
            let (effect, se) = if binary {
                derive_contrast_binary(
                    field_u64(a, 2, "events", ra)?,
                    field_u64(a, 3, "total", ra)?,
                    field_u64(b, 2, "events", rb)?,
                    field_u64(b, 3, "total", rb)?,
                    measure,
                    correction,
                )
            } else {
                derive_contrast_continuous(
                    field_f64(a, 2, "mean", ra)?,
                    field_f64(a, 3, "se", ra)?,
                    field_f64(b, 2, "mean", rb)?,
                    field_f64(b, 3, "se", rb)?,
                )
            }
            .map_err(|e| match e {
                NmaError::DegenerateTable => NmaError::MalformedRow {
                    row: rb,
                    message: format!("study `{id}`: degenerate 2x2 table"),
                },
                other => other,
            })?;
            observation(
                id,
                field_str(a, 1, "treatment", ra)?,
                field_str(b, 1, "treatment", rb)?,
                effect,
                se,
                rb,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str, measure: Option<EffectMeasure>) -> Result<NetworkDataset> {
        let opts = ParseOptions {
            measure,
            ..ParseOptions::default()
        };
        parse_dataset(text.as_bytes(), DataFormat::Csv, &opts)
    }

    #[test]
    fn single_row() {
        let ds = csv("study_id,treat_a,treat_b,effect,se\ns1,P,A,0.5,0.2\n", Some(EffectMeasure::Md)).unwrap();
        assert_eq!(ds.m(), 1);
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.studies()[0].effect, 0.5);
        assert_eq!(ds.studies()[0].se, 0.2);
        assert_eq!(ds.measure(), EffectMeasure::Md);
    }

    #[test]
    fn zero_se_row() {
        let err = csv("study_id,treat_a,treat_b,effect,se\ns1,P,A,0.5,0\n", None).unwrap_err();
        assert!(err.to_string().contains("non-positive standard error"), "{err}");
    }

    #[test]
    fn malformed_rows() {
        let err = csv("study_id,treat_a,treat_b,effect,se\ns1,P,A,abc,0.2\n", None).unwrap_err();
        assert!(matches!(err, NmaError::MalformedRow { row: 1, .. }));
        let err = csv("study_id,treat_a,treat_b,effect,se\ns1,P,A,0.1\n", None).unwrap_err();
        assert!(matches!(err, NmaError::MalformedRow { row: 1, .. }));
        let err = csv("study_id,treat_a,treat_b,effect,se\ns1,P,,0.1,0.2\n", None).unwrap_err();
        assert!(matches!(err, NmaError::MalformedRow { row: 1, .. }));
        let err = csv("study,a,b\n1,2,3\n", None).unwrap_err();
        assert!(matches!(err, NmaError::Io(_)));
    }

    #[test]
    fn synthetic_ids_and_duplicates() {
        let ds = csv("study_id,treat_a,treat_b,effect,se\n,P,A,0.5,0.2\n,P,A,0.4,0.3\n", None).unwrap();
        assert_eq!(ds.studies()[0].study_id, "row1");
        assert_eq!(ds.studies()[1].study_id, "row2");
        let err = csv("study_id,treat_a,treat_b,effect,se\nx,P,A,0.5,0.2\nx,P,A,0.4,0.3\n", None).unwrap_err();
        assert_eq!(err, NmaError::DuplicateStudy("x".into()));
    }

    #[test]
    fn whitespace_trimmed_labels() {
        let ds = csv("study_id,treat_a,treat_b,effect,se\n1, P ,A,0.5,0.2\n2,P,  A,0.4,0.3\n", None).unwrap();
        assert_eq!(ds.n(), 2);
    }

    #[test]
    fn json_document() {
        let text = r#"{"name":"demo","measure":"logOR","reference":"B",
            "studies":[{"study_id":"s1","treat_a":"A","treat_b":"B","effect":0.2,"se":0.1},
                       {"treat_a":"B","treat_b":"C","effect":-0.1,"se":0.3}]}"#;
        let ds = parse_dataset(text.as_bytes(), DataFormat::Json, &ParseOptions::default()).unwrap();
        assert_eq!(ds.name(), "demo");
        assert_eq!(ds.measure(), EffectMeasure::LogOr);
        assert_eq!(ds.reference().as_str(), "B");
        assert_eq!(ds.studies()[1].study_id, "row2");
        let back = serde_json::to_string(&DatasetFile::from(&ds)).unwrap();
        let again = parse_dataset(back.as_bytes(), DataFormat::Json, &ParseOptions::default()).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn binary_arms() {
        let text = "study_id,treatment,events,total\ns1,P,10,100\ns1,A,20,100\ns2,P,0,50\ns2,B,5,50\n";
        let ds = csv(text, Some(EffectMeasure::LogOr)).unwrap();
        assert_eq!(ds.m(), 2);
        assert!((ds.studies()[0].effect - 2.25_f64.ln()).abs() < 1e-15);
        assert_eq!(ds.studies()[0].treat_a.as_str(), "P");
        assert!(csv(text, Some(EffectMeasure::Md)).is_err());
    }

    #[test]
    fn arm_count_enforced() {
        let text = "study_id,treatment,events,total\ns1,P,10,100\ns1,A,20,100\ns1,B,20,100\n";
        assert!(matches!(csv(text, None), Err(NmaError::InvalidArms(_))));
        let text = "study_id,treatment,events,total\ns1,P,10,100\n";
        assert!(matches!(csv(text, None), Err(NmaError::InvalidArms(_))));
    }

    #[test]
    fn continuous_arms() {
        let text = "study_id,treatment,mean,se\nvan,Placebo,-11.00,2.55\nvan,ADA,-27.60,2.93\n";
        let ds = csv(text, None).unwrap();
        assert!((ds.studies()[0].effect + 16.6).abs() < 1e-12);
        assert!((ds.studies()[0].se - 3.88).abs() < 0.005);
    }

    #[test]
    fn not_utf8() {
        assert!(parse_dataset(&[0xff, 0xfe], DataFormat::Csv, &ParseOptions::default()).is_err());
    }
}
