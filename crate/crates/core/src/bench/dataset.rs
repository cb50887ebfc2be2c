//! HumanEval-style task files: one JSON object per line, optionally gzipped.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use super::BenchError;

const REQUIRED: [&str; 4] = ["task_id", "prompt", "entry_point", "test"];

/// The 164 official HumanEval problems (MIT licensed, see `data/`).
static HUMANEVAL_GZ: &[u8] = include_bytes!("../../data/HumanEval.jsonl.gz");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchTask {
    pub task_id: String,
    /// Signature plus docstring, with any imports and helpers it needs.
    pub prompt: String,
    pub entry_point: String,
    #[serde(default)]
    pub canonical_solution: Option<String>,
    /// Defines `check(candidate)`.
    pub test: String,
}

impl BenchTask {
    /// Everything in the prompt before the entry point's `def` line
    /// (imports and helper definitions the solution may rely on).
    pub fn preamble(&self) -> &str {
        let needle = format!("def {}(", self.entry_point);
        let mut offset = 0;
        for line in self.prompt.split_inclusive('\n') {
            if line.trim_start().starts_with(&needle) && !line.starts_with(char::is_whitespace) {
                return &self.prompt[..offset];
            }
            offset += line.len();
        }
        ""
    }
}

/// Parses JSONL task records. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_tasks(text: &str) -> Result<Vec<BenchTask>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| BenchError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| BenchError::MalformedRecord {
            line: line_no,
            reason: "record is not a JSON object".into(),
        })?;
        if let Some(field) = REQUIRED.iter().find(|f| !obj.contains_key(**f)) {
            return Err(BenchError::MissingField {
                line: line_no,
                field: field.to_string(),
            });
        }
        let task: BenchTask = serde_json::from_value(value).map_err(|e| BenchError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        out.push(task);
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<String, BenchError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut text = String::new();
        GzDecoder::new(bytes)
            .read_to_string(&mut text)
            .map_err(|e| BenchError::MalformedRecord {
                line: 0,
                reason: format!("gzip: {e}"),
            })?;
        Ok(text)
    } else {
        String::from_utf8(bytes.to_vec()).map_err(|e| BenchError::MalformedRecord {
            line: 0,
            reason: e.to_string(),
        })
    }
}

/// Loads a `.jsonl` or gzipped `.jsonl.gz` file (detected by content).
pub fn load_tasks(path: &Path) -> Result<Vec<BenchTask>, BenchError> {
    let bytes = std::fs::read(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_tasks(&decode(&bytes)?)
}

pub fn bundled_humaneval() -> Vec<BenchTask> {
    let text = decode(HUMANEVAL_GZ).expect("bundled dataset decompresses");
    parse_tasks(&text).expect("bundled dataset parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> String {
        serde_json::json!({
            "task_id": id,
            "prompt": "import math\n\n\ndef f(x):\n    \"\"\"Doc.\"\"\"\n",
            "entry_point": "f",
            "canonical_solution": "    return x\n",
            "test": "def check(candidate):\n    assert candidate(1) == 1\n",
        })
        .to_string()
    }

    #[test]
    fn parses_records_and_skips_blank_lines() {
        let text = format!("{}\n\n{}\n", record("a"), record("b"));
        let tasks = parse_tasks(&text).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[1].task_id, "b");
        assert_eq!(tasks[0].preamble(), "import math\n\n\n");
        assert!(parse_tasks("").unwrap().is_empty());
    }

    #[test]
    fn reports_line_of_bad_record() {
        let missing = serde_json::json!({"task_id": "x", "prompt": "p", "test": "t"}).to_string();
        let text = format!("{}\n{}\n", record("a"), missing);
        match parse_tasks(&text) {
            Err(BenchError::MissingField { line, field }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "entry_point");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_tasks("{not json"),
            Err(BenchError::MalformedRecord { line: 1, .. })
        ));
        assert!(matches!(
            parse_tasks("[1]"),
            Err(BenchError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn gzip_detected_by_magic_bytes() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.data");
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(record("z").as_bytes()).unwrap();
        std::fs::write(&path, enc.finish().unwrap()).unwrap();
        let tasks = load_tasks(&path).unwrap();
        assert_eq!(tasks[0].task_id, "z");
        assert!(matches!(
            load_tasks(&dir.path().join("absent.jsonl")),
            Err(BenchError::Io { .. })
        ));
    }

    #[test]
    fn bundled_dataset_is_complete() {
        let tasks = bundled_humaneval();
        assert_eq!(tasks.len(), 164);
        assert_eq!(tasks[0].task_id, "HumanEval/0");
        assert_eq!(tasks[163].task_id, "HumanEval/163");
        for t in &tasks {
            assert!(t.prompt.contains(&format!("def {}(", t.entry_point)), "{}", t.task_id);
        }
    }
}
