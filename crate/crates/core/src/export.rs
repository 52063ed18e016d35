//! Dendrogram export: a serializable document with a merge table, plus
//! Newick and CSV renderings and a Newick parser for round-trip checks.
//!
//! Node ids in the merge table: leaves are negative (-1 .. -p, leaf -i is
//! the variable with label index i-1); internal nodes are positive
//! (1 .. p-1), numbered so that children always carry smaller ids than
//! their parent. Rows are listed bottom-up (ascending id), the last row
//! is the root.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divisive::{Diagnostics, HeightMode, SplitTree};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExportError {
    #[error("newick parse error at byte {position}: {message}")]
    NewickParse { position: usize, message: String },
    #[error("dendrogram document is inconsistent: {message}")]
    Inconsistent { message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MergeRow {
    pub id: i64,
    pub left: i64,
    pub right: i64,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiagnosticsDoc {
    pub ultrametric_violations: usize,
    pub monotone_heights: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetadataDoc {
    pub version: String,
    pub rng: String,
    pub seed: Option<u64>,
    /// Echo of the run configuration, free-form key/value pairs.
    pub config: std::collections::BTreeMap<String, String>,
}

/// Serializable dendrogram.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DendrogramDocument {
    pub schema: String,
    pub labels: Vec<String>,
    pub height_mode: String,
    pub merges: Vec<MergeRow>,
    pub diagnostics: DiagnosticsDoc,
    pub metadata: MetadataDoc,
}

pub const DENDROGRAM_SCHEMA: &str = "hcsvd-dendrogram/1";

impl DendrogramDocument {
    /// Builds the document from a split tree. Internal ids are assigned
    /// in reverse creation order so children precede their parents.
    pub fn from_tree(
        tree: &SplitTree,
        diagnostics: Diagnostics,
        metadata: MetadataDoc,
    ) -> DendrogramDocument {
        let n_splits = tree.splits.len();
        // The split created at position i becomes internal node
        // n_splits - i, so the root (created first) has the largest id.
        let mut id_of_members: HashMap<&[usize], i64> = HashMap::new();
        for (i, record) in tree.splits.iter().enumerate() {
            id_of_members.insert(record.parent.members(), (n_splits - i) as i64);
        }
        let node_id = |members: &[usize]| -> i64 {
            if members.len() == 1 {
                -(members[0] as i64 + 1)
            } else {
                id_of_members[members]
            }
        };
        let mut merges: Vec<MergeRow> = tree
            .splits
            .iter()
            .zip(tree.heights.iter())
            .enumerate()
            .map(|(i, (record, &height))| MergeRow {
                id: (n_splits - i) as i64,
                left: node_id(record.left.members()),
                right: node_id(record.right.members()),
                height,
                size: record.parent.len(),
            })
            .collect();
        merges.sort_by_key(|row| row.id);
        DendrogramDocument {
            schema: DENDROGRAM_SCHEMA.to_string(),
            labels: tree.labels.clone(),
            height_mode: tree.height_mode.name().to_string(),
            merges,
            diagnostics: DiagnosticsDoc {
                ultrametric_violations: diagnostics.ultrametric_violations,
                monotone_heights: diagnostics.monotone_heights,
            },
            metadata,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ExportError> {
        serde_json::from_str(text).map_err(|e| ExportError::Inconsistent {
            message: e.to_string(),
        })
    }

    /// Merge table as CSV: id,left,right,height,size.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,left,right,height,size\n");
        for row in &self.merges {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.id, row.left, row.right, row.height, row.size
            ));
        }
        out
    }

    fn row_by_id(&self) -> HashMap<i64, &MergeRow> {
        self.merges.iter().map(|r| (r.id, r)).collect()
    }

    fn root_id(&self) -> Result<i64, ExportError> {
        self.merges
            .iter()
            .map(|r| r.id)
            .max()
            .ok_or(ExportError::Inconsistent {
                message: "no merges".into(),
            })
    }

    /// Newick rendering. Branch lengths are parent height minus child
    /// height; on non-monotone trees negative lengths are clamped to 0
    /// (the JSON document keeps raw heights) and `clamped` reports how
    /// many. Leaves sit at height 0.
    pub fn to_newick(&self) -> Result<(String, usize), ExportError> {
        let rows = self.row_by_id();
        let mut clamped = 0usize;
        let root = self.root_id()?;
        let mut text = String::new();
        self.render_newick(root, &rows, &mut text, &mut clamped)?;
        text.push(';');
        Ok((text, clamped))
    }

    fn render_newick(
        &self,
        id: i64,
        rows: &HashMap<i64, &MergeRow>,
        out: &mut String,
        clamped: &mut usize,
    ) -> Result<(), ExportError> {
        let row = rows.get(&id).ok_or_else(|| ExportError::Inconsistent {
            message: format!("missing internal node {id}"),
        })?;
        out.push('(');
        for (i, child) in [row.left, row.right].into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let child_height = if child < 0 {
                let index = (-child - 1) as usize;
                let label =
                    self.labels
                        .get(index)
                        .ok_or_else(|| ExportError::Inconsistent {
                            message: format!("leaf {child} out of range"),
                        })?;
                out.push_str(&quote_newick_label(label));
                0.0
            } else {
                self.render_newick(child, rows, out, clamped)?;
                rows[&child].height
            };
            let mut length = row.height - child_height;
            if length < 0.0 {
                length = 0.0;
                *clamped += 1;
            }
            out.push(':');
            out.push_str(&format_branch_length(length));
        }
        out.push(')');
        Ok(())
    }
}

fn format_branch_length(length: f64) -> String {
    // Shortest roundtrip representation keeps byte-determinism.
    format!("{length}")
}

fn quote_newick_label(label: &str) -> String {
    let needs_quoting = label
        .chars()
        .any(|c| c.is_whitespace() || "(),:;[]'".contains(c));
    if needs_quoting {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

/// A parsed Newick tree, reduced to what round-trip checks need: every
/// internal node as (height, sorted leaf labels).
#[derive(Debug, Clone, PartialEq)]
pub struct NewickNode {
    pub height: f64,
    pub leaves: Vec<String>,
}

/// Parses the subset of Newick emitted by [`DendrogramDocument::to_newick`]:
/// binary trees with branch lengths and optionally quoted labels. Node
/// heights are reconstructed from leaf level (height 0) upward.
pub fn parse_newick(text: &str) -> Result<Vec<NewickNode>, ExportError> {
    let bytes: Vec<char> = text.chars().collect();
    let mut position = 0usize;
    let mut nodes = Vec::new();
    let (_, height) = parse_clade(&bytes, &mut position, &mut nodes)?;
    skip_whitespace(&bytes, &mut position);
    if position >= bytes.len() || bytes[position] != ';' {
        return Err(ExportError::NewickParse {
            position,
            message: "expected ';'".into(),
        });
    }
    let _ = height;
    Ok(nodes)
}

fn skip_whitespace(bytes: &[char], position: &mut usize) {
    while *position < bytes.len() && bytes[*position].is_whitespace() {
        *position += 1;
    }
}

/// Returns (leaves, height) of the clade starting at `position`.
fn parse_clade(
    bytes: &[char],
    position: &mut usize,
    nodes: &mut Vec<NewickNode>,
) -> Result<(Vec<String>, f64), ExportError> {
    skip_whitespace(bytes, position);
    if *position < bytes.len() && bytes[*position] == '(' {
        *position += 1;
        let mut all_leaves = Vec::new();
        let mut height = 0.0_f64;
        loop {
            let (leaves, child_height) = parse_clade(bytes, position, nodes)?;
            skip_whitespace(bytes, position);
            let length = parse_branch_length(bytes, position)?;
            height = height.max(child_height + length);
            all_leaves.extend(leaves);
            skip_whitespace(bytes, position);
            match bytes.get(*position) {
                Some(',') => {
                    *position += 1;
                }
                Some(')') => {
                    *position += 1;
                    break;
                }
                _ => {
                    return Err(ExportError::NewickParse {
                        position: *position,
                        message: "expected ',' or ')'".into(),
                    })
                }
            }
        }
        all_leaves.sort();
        nodes.push(NewickNode {
            height,
            leaves: all_leaves.clone(),
        });
        Ok((all_leaves, height))
    } else {
        let label = parse_label(bytes, position)?;
        Ok((vec![label], 0.0))
    }
}

fn parse_label(bytes: &[char], position: &mut usize) -> Result<String, ExportError> {
    skip_whitespace(bytes, position);
    if bytes.get(*position) == Some(&'\'') {
        *position += 1;
        let mut label = String::new();
        loop {
            match bytes.get(*position) {
                Some('\'') if bytes.get(*position + 1) == Some(&'\'') => {
                    label.push('\'');
                    *position += 2;
                }
                Some('\'') => {
                    *position += 1;
                    return Ok(label);
                }
                Some(&c) => {
                    label.push(c);
                    *position += 1;
                }
                None => {
                    return Err(ExportError::NewickParse {
                        position: *position,
                        message: "unterminated quoted label".into(),
                    })
                }
            }
        }
    }
    let start = *position;
    while *position < bytes.len() && !"(),:;[]".contains(bytes[*position])
        && !bytes[*position].is_whitespace()
    {
        *position += 1;
    }
    if *position == start {
        return Err(ExportError::NewickParse {
            position: *position,
            message: "empty label".into(),
        });
    }
    Ok(bytes[start..*position].iter().collect())
}

fn parse_branch_length(bytes: &[char], position: &mut usize) -> Result<f64, ExportError> {
    skip_whitespace(bytes, position);
    if bytes.get(*position) != Some(&':') {
        return Err(ExportError::NewickParse {
            position: *position,
            message: "expected ':'".into(),
        });
    }
    *position += 1;
    let start = *position;
    while *position < bytes.len()
        && (bytes[*position].is_ascii_digit() || "+-.eE".contains(bytes[*position]))
    {
        *position += 1;
    }
    let text: String = bytes[start..*position].iter().collect();
    text.parse().map_err(|_| ExportError::NewickParse {
        position: start,
        message: format!("invalid branch length '{text}'"),
    })
}

/// Height mode parsed back from a document string.
pub fn height_mode_from_name(name: &str) -> Option<HeightMode> {
    match name {
        "split_distance" => Some(HeightMode::SplitDistance),
        "reliability" => Some(HeightMode::Reliability),
        "diameter" => Some(HeightMode::Diameter),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divisive::{hcsvd_correlation, HcsvdConfig};
    use crate::matrixkit::CorrelationMatrix;
    use nalgebra::DMatrix;

    fn sample_document() -> DendrogramDocument {
        let mut m = DMatrix::identity(5, 5);
        for (i, j, v) in [(0usize, 1usize, 0.9), (0, 2, 0.8), (1, 2, 0.85), (3, 4, 0.7)] {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        let r = CorrelationMatrix::with_default_labels(m).unwrap();
        let result = hcsvd_correlation(&r, &HcsvdConfig::default()).unwrap();
        DendrogramDocument::from_tree(
            &result.tree,
            result.diagnostics,
            MetadataDoc {
                version: "test".into(),
                rng: "none".into(),
                seed: None,
                config: Default::default(),
            },
        )
    }

    #[test]
    fn json_round_trip() {
        let doc = sample_document();
        let text = doc.to_json();
        let back = DendrogramDocument::from_json(&text).unwrap();
        assert_eq!(doc, back);
    }

    #[test]
    fn merge_ids_are_bottom_up() {
        let doc = sample_document();
        for row in &doc.merges {
            for child in [row.left, row.right] {
                if child > 0 {
                    assert!(child < row.id, "children must precede parents");
                }
            }
        }
        assert_eq!(doc.merges.len(), 4);
    }

    #[test]
    fn newick_round_trip_topology_and_heights() {
        let doc = sample_document();
        let (newick, clamped) = doc.to_newick().unwrap();
        assert_eq!(clamped, 0, "monotone fixture should not clamp");
        let nodes = parse_newick(&newick).unwrap();
        assert_eq!(nodes.len(), doc.merges.len());

        // Compare (leaf set, height) pairs against the document.
        let rows = doc.row_by_id();
        let mut expected: Vec<(Vec<String>, f64)> = doc
            .merges
            .iter()
            .map(|row| {
                let mut leaves = Vec::new();
                collect_leaves(row.id, &rows, &doc.labels, &mut leaves);
                leaves.sort();
                (leaves, row.height)
            })
            .collect();
        let sort_key = |a: &(Vec<String>, f64), b: &(Vec<String>, f64)| {
            a.0.cmp(&b.0)
                .then(a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        };
        expected.sort_by(sort_key);
        let mut got: Vec<(Vec<String>, f64)> = nodes
            .into_iter()
            .map(|n| (n.leaves, n.height))
            .collect();
        got.sort_by(sort_key);
        for ((leaves_a, height_a), (leaves_b, height_b)) in expected.iter().zip(got.iter()) {
            assert_eq!(leaves_a, leaves_b);
            assert!((height_a - height_b).abs() < 1e-9);
        }
    }

    fn collect_leaves(
        id: i64,
        rows: &std::collections::HashMap<i64, &MergeRow>,
        labels: &[String],
        out: &mut Vec<String>,
    ) {
        if id < 0 {
            out.push(labels[(-id - 1) as usize].clone());
            return;
        }
        let row = rows[&id];
        collect_leaves(row.left, rows, labels, out);
        collect_leaves(row.right, rows, labels, out);
    }

    #[test]
    fn quoted_labels_survive() {
        let quoted = quote_newick_label("a b(c)");
        assert_eq!(quoted, "'a b(c)'");
        let mut position = 0usize;
        let chars: Vec<char> = quoted.chars().collect();
        let label = parse_label(&chars, &mut position).unwrap();
        assert_eq!(label, "a b(c)");
    }
}
