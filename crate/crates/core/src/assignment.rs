//! Final per-example labels and their CSV export.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataError;
use crate::tree::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Oracle,
    Inferred,
    None,
}

impl LabelSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelSource::Oracle => "oracle",
            LabelSource::Inferred => "inferred",
            LabelSource::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub example_id: usize,
    pub label: Option<usize>,
    pub source: LabelSource,
    pub node: NodeId,
    pub uniformity: f64,
}

/// One entry per example, ordered by example id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub entries: Vec<LabelEntry>,
}

impl LabelAssignment {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, source: LabelSource) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }

    /// Number of returned labels, oracle and inferred.
    pub fn size_of_y(&self) -> usize {
        self.entries.iter().filter(|e| e.label.is_some()).count()
    }

    pub fn correct(&self, truth: &[usize]) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label == Some(truth[e.example_id]))
            .count()
    }

    /// Accuracy over returned labels, or `None` when nothing was returned.
    pub fn accuracy(&self, truth: &[usize]) -> Option<f64> {
        let size = self.size_of_y();
        (size > 0).then(|| self.correct(truth) as f64 / size as f64)
    }

    /// `(example_id, label)` for every returned label.
    pub fn labeled_pairs(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .filter_map(|e| e.label.map(|l| (e.example_id, l)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "example_id,label,source,node_id,uniformity")?;
        for e in &self.entries {
            let label = e.label.map(|l| l.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                e.example_id,
                label,
                e.source.as_str(),
                e.node,
                e.uniformity
            )?;
        }
        out.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut entries = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let parse_err = |message: String| DataError::Parse { row, message };
            let record = record.map_err(|e| parse_err(e.to_string()))?;
            if record.len() != 5 {
                return Err(parse_err(format!("expected 5 columns, found {}", record.len())));
            }
            let num = |i: usize| -> Result<u64, DataError> {
                record[i]
                    .parse()
                    .map_err(|_| parse_err(format!("column {i}: {:?} is not an integer", &record[i])))
            };
            let source = match &record[2] {
                "oracle" => LabelSource::Oracle,
                "inferred" => LabelSource::Inferred,
                "none" => LabelSource::None,
                other => return Err(parse_err(format!("unknown source {other:?}"))),
            };
            let label = if record[1].is_empty() { None } else { Some(num(1)? as usize) };
            entries.push(LabelEntry {
                example_id: num(0)? as usize,
                label,
                source,
                node: NodeId(num(3)?),
                uniformity: record[4]
                    .parse()
                    .map_err(|_| parse_err(format!("uniformity {:?} is not a number", &record[4])))?,
            });
        }
        Ok(Self { entries })
    }
}

/// Write `example_id,label,source,node_id,uniformity`, one row per example.
pub fn export_labels(assignment: &LabelAssignment, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    assignment.write_csv(BufWriter::new(file)).map_err(io)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelAssignment, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    LabelAssignment::read_csv(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_entry() -> impl Strategy<Value = LabelEntry> {
        (0usize..10_000, prop::option::of(0usize..20), 0u8..3, 0u64..500, 0.0f64..=1.0).prop_map(
            |(example_id, label, s, node, uniformity)| {
                let source = match (s, label) {
                    (_, None) => LabelSource::None,
                    (0, Some(_)) => LabelSource::Oracle,
                    _ => LabelSource::Inferred,
                };
                LabelEntry { example_id, label, source, node: NodeId(node), uniformity }
            },
        )
    }

    proptest! {
        #[test]
        fn csv_round_trip(entries in prop::collection::vec(arb_entry(), 0..40)) {
            let assignment = LabelAssignment { entries };
            let text = assignment.to_csv_string();
            let back = LabelAssignment::read_csv(text.as_bytes()).unwrap();
            prop_assert_eq!(back, assignment);
        }
    }

    #[test]
    fn empty_assignment_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        export_labels(&LabelAssignment::default(), &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "example_id,label,source,node_id,uniformity\n");
        assert!(load_labels(&path).unwrap().is_empty());
    }

    #[test]
    fn unlabeled_rows_have_empty_label() {
        let assignment = LabelAssignment {
            entries: vec![
                LabelEntry { example_id: 0, label: None, source: LabelSource::None, node: NodeId(2), uniformity: 0.5 },
                LabelEntry { example_id: 1, label: Some(3), source: LabelSource::Inferred, node: NodeId(2), uniformity: 0.9 },
            ],
        };
        let text = assignment.to_csv_string();
        assert!(text.contains("\n0,,none,2,0.5\n"));
        assert!(text.contains("\n1,3,inferred,2,0.9\n"));
        assert_eq!(assignment.size_of_y(), 1);
        assert_eq!(assignment.accuracy(&[0, 3]), Some(1.0));
    }

    #[test]
    fn export_reports_path_on_error() {
        let err = export_labels(&LabelAssignment::default(), "/nonexistent-dir/x.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
