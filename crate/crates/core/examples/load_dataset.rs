//! Parsing HumanEval- and MBPP-style records into tasks.

use pragmatic_rerank::harness::{parse_dataset, DatasetFormat};

const HUMANEVAL: &str = r#"{"task_id": "HumanEval/0", "prompt": "def add(a, b):\n    \"\"\"Return a plus b.\n    >>> add(1, 2)\n    3\n    \"\"\"\n", "entry_point": "add", "canonical_solution": "    return a + b\n", "test": "def check(candidate):\n    assert candidate(1, 2) == 3\n"}"#;

const MBPP: &str = r#"{"task_id": 11, "text": "Write a function to remove the first and last occurrence of a given character from the string.", "code": "def remove_Occ(s, ch):\n    return s.replace(ch, \"\", 1)[::-1].replace(ch, \"\", 1)[::-1]\n", "test_list": ["assert remove_Occ(\"hello\",\"l\") == \"heo\""], "test_setup_code": ""}"#;

fn main() {
    for (text, fmt) in [(HUMANEVAL, DatasetFormat::HumanEval), (MBPP, DatasetFormat::Mbpp)] {
        for t in parse_dataset(text, fmt).unwrap() {
            println!("[{fmt}] {} entry={}", t.task_id, t.entry_point);
            println!("  instruction: {}", t.instruction.replace('\n', " / "));
            println!("  tests:\n{}", t.tests.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n"));
        }
    }
}
