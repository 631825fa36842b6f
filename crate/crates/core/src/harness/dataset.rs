//! Benchmark dataset loading.
//!
//! Files are JSON lines (one record per line) or a single JSON array.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::generation::Task;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {index}: {message}")]
    Schema { index: usize, message: String },
    #[error("unknown dataset format `{0}` (expected humaneval, mbpp or tasks)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// `task_id`, `prompt`, `entry_point`, `test`.
    HumanEval,
    /// `task_id`, `text`, `code`, `test_list`, optional `test_setup_code`.
    Mbpp,
    /// Serialized [`Task`] records.
    Tasks,
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "humaneval" => Ok(Self::HumanEval),
            "mbpp" => Ok(Self::Mbpp),
            "tasks" | "task" => Ok(Self::Tasks),
            _ => Err(DatasetError::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HumanEval => "humaneval",
            Self::Mbpp => "mbpp",
            Self::Tasks => "tasks",
        })
    }
}

#[derive(Debug, Deserialize)]
struct HumanEvalRecord {
    task_id: String,
    prompt: String,
    entry_point: String,
    test: String,
}

#[derive(Debug, Deserialize)]
struct MbppRecord {
    task_id: serde_json::Value,
    text: String,
    code: String,
    test_list: Vec<String>,
    #[serde(default)]
    test_setup_code: String,
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<Task>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let tasks = parse_dataset(&text, format)?;
    tracing::info!(path = %path.display(), %format, tasks = tasks.len(), "loaded dataset");
    Ok(tasks)
}

pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<Task>, DatasetError> {
    raw_records(text)?
        .into_iter()
        .enumerate()
        .map(|(index, value)| {
            convert(value, format).map_err(|message| DatasetError::Schema { index, message })
        })
        .collect()
}

fn raw_records(text: &str) -> Result<Vec<serde_json::Value>, DatasetError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| DatasetError::Schema {
            index: 0,
            message: e.to_string(),
        });
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, line)| {
            serde_json::from_str(line).map_err(|e| DatasetError::Schema {
                index,
                message: e.to_string(),
            })
        })
        .collect()
}

fn convert(value: serde_json::Value, format: DatasetFormat) -> Result<Task, String> {
    match format {
        DatasetFormat::HumanEval => {
            let r: HumanEvalRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
            Ok(humaneval_task(r))
        }
        DatasetFormat::Mbpp => {
            let r: MbppRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
            mbpp_task(r)
        }
        DatasetFormat::Tasks => {
            let t: Task = serde_json::from_value(value).map_err(|e| e.to_string())?;
            if t.instruction.trim().is_empty() {
                return Err("empty instruction".into());
            }
            Ok(t)
        }
    }
}

fn humaneval_task(r: HumanEvalRecord) -> Task {
    let instruction = extract_docstring(&r.prompt, &r.entry_point).unwrap_or_else(|| r.prompt.trim().to_string());
    Task {
        tests: format!("{}\n\ncheck({})\n", r.test.trim_end(), r.entry_point),
        task_id: r.task_id,
        instruction,
        prompt_scaffold: r.prompt,
        entry_point: r.entry_point,
    }
}

fn mbpp_task(r: MbppRecord) -> Result<Task, String> {
    if r.test_list.is_empty() {
        return Err("test_list is empty".into());
    }
    let entry_point = mbpp_entry_point(&r.code, &r.test_list[0]).ok_or("no function definition in code")?;
    let mut tests = String::new();
    if !r.test_setup_code.trim().is_empty() {
        tests.push_str(r.test_setup_code.trim_end());
        tests.push('\n');
    }
    tests.push_str(&r.test_list.join("\n"));
    tests.push('\n');
    let task_id = match r.task_id {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    };
    Ok(Task {
        task_id,
        instruction: r.text.trim().to_string(),
        prompt_scaffold: String::new(),
        entry_point,
        tests,
    })
}

/// The reference function the tests call, or else the first definition.
fn mbpp_entry_point(code: &str, first_test: &str) -> Option<String> {
    let defs: Vec<&str> = code
        .lines()
        .filter_map(|l| l.trim_start().strip_prefix("def "))
        .filter_map(|rest| rest.split('(').next())
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .collect();
    defs.iter()
        .find(|d| first_test.contains(&format!("{d}(")))
        .or(defs.first())
        .map(|s| s.to_string())
}

/// Docstring of `entry_point` in a function scaffold, dedented and trimmed.
pub fn extract_docstring(prompt: &str, entry_point: &str) -> Option<String> {
    let def = prompt
        .find(&format!("def {entry_point}("))
        .or_else(|| prompt.find("def "))?;
    let body = &prompt[def..];
    let (open, quote) = ["\"\"\"", "'''"]
        .iter()
        .filter_map(|q| body.find(q).map(|i| (i, *q)))
        .min_by_key(|(i, _)| *i)?;
    let start = open + quote.len();
    let end = start + body[start..].find(quote)?;
    let doc = &body[start..end];
    let lines: Vec<&str> = doc.lines().collect();
    let indent = lines
        .iter()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let out: Vec<&str> = lines
        .iter()
        .enumerate()
        .map(|(k, l)| if k == 0 { l.trim() } else { l.get(indent..).unwrap_or(l.trim_start()) })
        .collect();
    let text = out.join("\n").trim().to_string();
    (!text.is_empty()).then_some(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HE: &str = r#"{"task_id": "HumanEval/0", "prompt": "def add(a, b):\n    \"\"\" Add two numbers.\n    >>> add(1, 2)\n    3\n    \"\"\"\n", "entry_point": "add", "canonical_solution": "    return a + b\n", "test": "def check(candidate):\n    assert candidate(1, 2) == 3\n"}"#;
    const MBPP: &str = r#"{"task_id": 11, "text": "Write a python function to remove first and last occurrence of a given character from the string.", "code": "def remove_Occ(s,ch): \r\n    return s", "test_list": ["assert remove_Occ(\"hello\",\"l\") == \"heo\"", "assert remove_Occ(\"abcda\",\"a\") == \"bcd\"", "assert remove_Occ(\"PHP\",\"P\") == \"H\""], "test_setup_code": "", "challenge_test_list": []}"#;

    #[test]
    fn humaneval_record() {
        let tasks = parse_dataset(HE, DatasetFormat::HumanEval).unwrap();
        let t = &tasks[0];
        assert_eq!(t.task_id, "HumanEval/0");
        assert_eq!(t.instruction, "Add two numbers.\n>>> add(1, 2)\n3");
        assert!(t.prompt_scaffold.starts_with("def add(a, b):"));
        assert!(t.tests.ends_with("check(add)\n"));
    }

    #[test]
    fn mbpp_joins_all_tests() {
        let tasks = parse_dataset(MBPP, DatasetFormat::Mbpp).unwrap();
        let t = &tasks[0];
        assert_eq!(t.task_id, "11");
        assert_eq!(t.entry_point, "remove_Occ");
        assert_eq!(t.tests.lines().count(), 3);
        assert!(t.prompt_scaffold.is_empty());
    }

    #[test]
    fn array_and_lines_agree() {
        let arr = format!("[{HE},\n{HE}]");
        let lines = format!("{HE}\n\n{HE}\n");
        assert_eq!(
            parse_dataset(&arr, DatasetFormat::HumanEval).unwrap(),
            parse_dataset(&lines, DatasetFormat::HumanEval).unwrap()
        );
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_dataset("", DatasetFormat::Mbpp).unwrap().is_empty());
        assert!(parse_dataset("\n  \n", DatasetFormat::HumanEval).unwrap().is_empty());
    }

    #[test]
    fn schema_errors_name_the_record() {
        let text = format!("{MBPP}\n{{\"task_id\": 2}}\n");
        match parse_dataset(&text, DatasetFormat::Mbpp) {
            Err(DatasetError::Schema { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn task_records_round_trip() {
        let t = parse_dataset(MBPP, DatasetFormat::Mbpp).unwrap();
        let line = serde_json::to_string(&t[0]).unwrap();
        assert_eq!(parse_dataset(&line, DatasetFormat::Tasks).unwrap(), t);
        assert_eq!("HumanEval".parse::<DatasetFormat>().unwrap(), DatasetFormat::HumanEval);
    }
}
