//! Ingestion of external (human, model) score tables.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// One task's human and model scores, both in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub task: String,
    pub human: f64,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

/// Parse a `task,human,model` CSV file (header required, UTF-8).
///
/// Validation per row: numeric scores, both in [0, 100], human strictly
/// positive (it divides the difficulty metric). Errors carry 1-based data
/// row numbers.
pub fn load_score_table(path: &Path) -> Result<ScoreTable> {
    let file = std::fs::File::open(path)?;
    read_score_table(file)
}

pub fn read_score_table(source: impl Read) -> Result<ScoreTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| Error::Validation(format!("unreadable CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("missing column {name:?}")))
    };
    let (task_col, human_col, model_col) = (col("task")?, col("human")?, col("model")?);

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::InvalidRow {
            row,
            message: format!("malformed CSV record: {e}"),
        })?;
        let field = |c: usize, name: &str| -> Result<&str> {
            record.get(c).ok_or(Error::InvalidRow {
                row,
                message: format!("missing {name} field"),
            })
        };
        let parse = |c: usize, name: &str| -> Result<f64> {
            let raw = field(c, name)?;
            raw.parse::<f64>().map_err(|_| Error::InvalidRow {
                row,
                message: format!("{name} is not numeric: {raw:?}"),
            })
        };
        let task = field(task_col, "task")?.to_string();
        let human = parse(human_col, "human")?;
        let model = parse(model_col, "model")?;
        for (name, v) in [("human", human), ("model", model)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::InvalidRow {
                    row,
                    message: format!("{name} score {v} outside [0, 100]"),
                });
            }
        }
        if human <= 0.0 {
            return Err(Error::InvalidRow {
                row,
                message: format!("human score must be positive, got {human}"),
            });
        }
        rows.push(ScoreRow { task, human, model });
    }
    Ok(ScoreTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_to_input_precision() {
        let csv = "task,human,model\nSST-2,97.8,96.2\nCSQA,89.0,72.1\n";
        let t = read_score_table(csv.as_bytes()).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].task, "SST-2");
        assert_eq!(t.rows[0].human, 97.8);
        assert_eq!(t.rows[0].model, 96.2);
        assert_eq!(t.rows[1].human, 89.0);
        assert_eq!(t.rows[1].model, 72.1);
    }

    #[test]
    fn zero_human_score_rejected_with_row() {
        let csv = "task,human,model\nOK,50,40\nBAD,0,10\n";
        match read_score_table(csv.as_bytes()) {
            Err(Error::InvalidRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_rejected() {
        let csv = "task,human\nX,50\n";
        assert!(matches!(
            read_score_table(csv.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn non_numeric_rejected_with_row() {
        let csv = "task,human,model\nX,abc,40\n";
        match read_score_table(csv.as_bytes()) {
            Err(Error::InvalidRow { row, message }) => {
                assert_eq!(row, 1);
                assert!(message.contains("human"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn header_only_gives_empty_table() {
        let t = read_score_table("task,human,model\n".as_bytes()).unwrap();
        assert!(t.rows.is_empty());
    }
}
