use std::fmt::Write as _;

use serde::Serialize;

use super::{format_shape, ModelSpec};

/// Published layer table: name, output shape, parameter count.
const REFERENCE_TABLE: &[(&str, &[usize], usize)] = &[
    ("Input", &[30, 522, 3], 0),
    ("Conv2D-1", &[30, 522, 32], 896),
    ("BatchNorm-1", &[30, 522, 32], 128),
    ("MaxPool2D-1", &[15, 261, 32], 0),
    ("Conv2D-2", &[15, 261, 64], 18_496),
    ("BatchNorm-2", &[15, 261, 64], 256),
    ("MaxPool2D-2", &[7, 130, 64], 0),
    ("Conv2D-3", &[7, 130, 128], 73_856),
    ("BatchNorm-3", &[7, 130, 128], 512),
    ("MaxPool2D-3", &[3, 65, 128], 0),
    ("Conv2D-4", &[3, 65, 256], 295_168),
    ("BatchNorm-4", &[3, 65, 256], 1_024),
    ("MaxPool2D-4", &[1, 32, 256], 0),
    ("Flatten", &[8_192], 0),
    ("Reshape", &[30, 273], 0),
    ("Bidirectional LSTM-1", &[30, 512], 1_082_368),
    ("Dropout-1", &[30, 512], 0),
    ("Bidirectional LSTM-2", &[512], 1_574_912),
    ("Dropout-2", &[512], 0),
    ("Dense", &[20], 10_260),
];

/// Total printed under the published table.
pub const REFERENCE_TOTAL: usize = 3_057_876;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRow {
    pub name: String,
    pub expected_shape: Vec<usize>,
    pub computed_shape: Vec<usize>,
    pub expected_params: usize,
    pub computed_params: usize,
    pub shape_match: bool,
    pub params_match: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchitectureAudit {
    pub rows: Vec<AuditRow>,
    /// Sum of the table's own parameter column.
    pub expected_row_sum: usize,
    pub expected_total: usize,
    pub computed_total: usize,
    pub delta: i64,
    pub discrepancies: Vec<String>,
}

/// Rebuilds the literal table graph and compares it row by row with the
/// published table.
pub fn verify_paper_architecture() -> ArchitectureAudit {
    let report = ModelSpec::paper_literal().build_report();
    let mut rows = Vec::with_capacity(REFERENCE_TABLE.len());
    let mut discrepancies = Vec::new();
    for (&(name, shape, params), got) in REFERENCE_TABLE.iter().zip(&report) {
        debug_assert_eq!(name, got.name);
        let row = AuditRow {
            name: name.to_string(),
            expected_shape: shape.to_vec(),
            computed_shape: got.output_shape.clone(),
            expected_params: params,
            computed_params: got.params,
            shape_match: shape == got.output_shape.as_slice(),
            params_match: params == got.params,
            note: got.note.clone(),
        };
        if !row.params_match {
            discrepancies.push(format!(
                "{}: table lists {} parameters, the layer formula gives {} (delta {})",
                name,
                params,
                got.params,
                got.params as i64 - params as i64
            ));
        }
        if let Some(note) = &row.note {
            discrepancies.push(format!("{name}: {note}"));
        }
        rows.push(row);
    }
    let computed_total: usize = rows.iter().map(|r| r.computed_params).sum();
    ArchitectureAudit {
        expected_row_sum: rows.iter().map(|r| r.expected_params).sum(),
        rows,
        expected_total: REFERENCE_TOTAL,
        computed_total,
        delta: computed_total as i64 - REFERENCE_TOTAL as i64,
        discrepancies,
    }
}

impl ArchitectureAudit {
    pub fn all_shapes_match(&self) -> bool {
        self.rows.iter().all(|r| r.shape_match)
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<22} {:>16} {:>16} {:>10} {:>10}  match",
            "layer", "table shape", "computed shape", "table", "computed"
        );
        for r in &self.rows {
            let flag = match (r.shape_match, r.params_match) {
                (true, true) => "yes",
                (true, false) => "PARAMS",
                (false, true) => "SHAPE",
                (false, false) => "NO",
            };
            let _ = writeln!(
                s,
                "{:<22} {:>16} {:>16} {:>10} {:>10}  {}{}",
                r.name,
                format_shape(&r.expected_shape),
                format_shape(&r.computed_shape),
                r.expected_params,
                r.computed_params,
                flag,
                r.note.as_deref().map(|n| format!("  [{n}]")).unwrap_or_default()
            );
        }
        let _ = writeln!(s, "paper total    {}", self.expected_total);
        let _ = writeln!(s, "computed total {}", self.computed_total);
        let _ = writeln!(s, "delta          {:+}", self.delta);
        for d in &self.discrepancies {
            let _ = writeln!(s, "note: {d}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_isolates_the_first_lstm() {
        let a = verify_paper_architecture();
        assert_eq!(a.rows.len(), REFERENCE_TABLE.len());
        assert!(a.all_shapes_match());
        let bad: Vec<&str> = a
            .rows
            .iter()
            .filter(|r| !r.params_match)
            .map(|r| r.name.as_str())
            .collect();
        assert_eq!(bad, vec!["Bidirectional LSTM-1"]);
        assert_eq!(a.computed_total, 3_060_948);
        assert_eq!(a.expected_total, 3_057_876);
        assert_eq!(a.expected_row_sum, 3_057_876);
        assert_eq!(a.delta, 3_072);
        assert!(a.render_table().contains("UNREALIZABLE"));
    }
}
