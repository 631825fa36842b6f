//! Scripted mock worlds used by the tests and the examples.
//!
//! * [`qualitative_example`]: the `search` task (greatest integer whose
//!   frequency is at least its value) with ten candidates, the ten
//!   instructions written back from them and a hand-calibrated score table.
//!   Coder prefers the short, incomplete `code_09`; the pragmatic listener
//!   prefers the correct `code_01`.
//! * [`mock_suite`]: five small tasks whose candidates carry docstrings, with
//!   synthetic scores and keyword-based equivalence answers.

use std::collections::{BTreeMap, BTreeSet};

use crate::backend::{synthetic_token_logprobs, MockBackend};
use crate::generation::{SamplingConfig, Task};
use crate::harness::exec::MockExecutor;
use crate::harness::pipeline::PipelineConfig;
use crate::instructions::SynthesisConfig;
use crate::prompts;
use crate::InstructionId;

/// Terminates scripted instruction generations.
const END: &str = "\n### instruction end ###";

pub struct QualitativeFixture {
    pub task: Task,
    /// `codes[k]` is `code_{k+1}`.
    pub codes: Vec<String>,
    /// `instructions[k]` is the instruction written from `code_{k+1}`.
    pub instructions: Vec<String>,
    pub backend: MockBackend,
    pub executor: MockExecutor,
    pub config: PipelineConfig,
}

impl QualitativeFixture {
    /// Clusters the judge answers should produce.
    pub fn expected_clusters() -> Vec<Vec<InstructionId>> {
        vec![vec![0, 1, 6, 8], vec![2, 9], vec![3], vec![4, 7], vec![5, 10]]
    }

    /// Coder score of `code_01` and `code_09`.
    pub const CODER_01: f64 = -29.24;
    pub const CODER_09: f64 = -21.12;
    /// Main-cluster speaker scores at alpha = 1.
    pub const SPEAKER_01: f64 = 0.32;
    pub const SPEAKER_09: f64 = 0.25;
}

const SEARCH_INSTRUCTION: &str = "You are given a non-empty list of positive integers. Return the greatest integer \
that is greater than zero, and has a frequency greater than or equal to the value of the integer itself. \
The frequency of an integer is the number of times it appears in the list. If no such a value exist, return -1.";

const SEARCH_TESTS: &str = "\
assert search([5, 5, 5, 5, 1]) == 1
assert search([4, 1, 4, 1, 4, 4]) == 4
assert search([3, 3]) == -1
assert search([8, 8, 8, 8, 8, 8, 8, 8]) == 8
assert search([2, 3, 3, 2, 2]) == 2
assert search([1]) == 1
";

const SEARCH_CODES: [&str; 10] = [
    // code_01
    "def search(lst):
    counts = {}
    for n in lst:
        counts[n] = counts.get(n, 0) + 1
    best = -1
    for n, c in counts.items():
        if n > 0 and c >= n and n > best:
            best = n
    return best
",
    // code_02
    "def search(lst):
    for n in lst:
        if lst.count(n) >= n:
            return n
    return None
",
    // code_03
    "def search(lst):
    if not lst:
        return -1
    seen = set(lst)
    i = 1
    while i in seen:
        i += 1
    return i
",
    // code_04
    "def search(lst):
    dupes = [n for n in set(lst) if n > 0 and lst.count(n) > 1]
    return min(dupes) if dupes else -1
",
    // code_05
    "def search(lst):
    from collections import Counter
    counts = Counter(lst)
    top = max(counts.values())
    return max(n for n, c in counts.items() if c == top)
",
    // code_06
    "def search(lst):
    from collections import Counter
    counts = Counter(lst)
    valid = [n for n, c in counts.items() if c >= n]
    return max(valid) if valid else -1
",
    // code_07
    "def search(lst):
    repeated = [n for n in lst if lst.count(n) > 1]
    return max(repeated) if repeated else -1
",
    // code_08
    "def search(lst):
    freq = [0] * (max(lst) + 1)
    for n in lst:
        freq[n] += 1
    ans = -1
    for i in range(1, len(freq)):
        if freq[i] >= i:
            ans = i
    return ans
",
    // code_09
    "def search(lst):
    for i in lst:
        if lst.count(i) >= i:
            return i
",
    // code_10
    "def search(lst):
    if not lst:
        return -1
    counts = {}
    for n in lst:
        if n > 0:
            counts[n] = counts.get(n, 0) + 1
    top = max(counts.values())
    return min(n for n, c in counts.items() if c == top)
",
];

const SEARCH_INSTRUCTIONS: [&str; 10] = [
    "Create a function that takes a list of numbers. Returns the largest number that appears at least as many times as its value in the list. If no such number exists, return -1.",
    "Create a function that takes a list of integers and finds the first integer that occurs at least as many times as its value. If no such integer is found, return None.",
    "Create a function that takes a list of integers and returns the first missing positive integer. If the list is empty, return -1.",
    "Create a function that takes a list of integers and returns the smallest positive integer that appears more than once. If no such integer exists, return -1.",
    "Create a function that takes a list of integers. Returns the number that appears most frequently in the list. If there are multiple such numbers with the same frequency, return the largest one.",
    "Create a function that takes a list of integers and returns the maximum value that appears at least as many times as its value. If no such value exists, return -1.",
    "Create a function that takes a list of integers and returns the maximum value that appears more than once. If no such value exists, return -1.",
    "Create a function that takes a list of numbers and returns the maximum integer that occurs at least as many times as its value. If multiple such numbers exist, return the largest one. If no such number exists, return -1.",
    "Create a function that takes a list of integers. Returns the first integer that appears at least as many times as its value in the list. If no such integer exists, return None.",
    "Create a function that takes a list of integers. Returns the most frequent integer greater than 0. If multiple integers have the same highest frequency, return the smallest one. If the list is empty, return -1.",
];

/// `SEARCH_L0[c][i] = log P(code_{c+1} | instruction i)`, instruction 0
/// being the original.
const SEARCH_L0: [[f64; 11]; 10] = [
    [-29.24, -29.84, -29.616, -30.189, -29.489, -29.551, -28.24, -30.382, -30.74, -30.51, -30.444],
    [-23.5, -24.0, -22.755, -23.427, -23.017, -23.077, -22.4, -23.91, -24.9, -23.648, -23.97],
    [-31.0, -31.7, -29.668, -26.563, -29.128, -29.128, -30.1, -30.021, -32.6, -30.561, -30.021],
    [-26.7, -27.3, -26.35, -26.749, -25.653, -26.304, -25.7, -26.546, -28.2, -27.243, -27.197],
    [-27.9, -28.4, -27.408, -28.063, -27.284, -26.437, -26.8, -28.177, -29.3, -28.302, -27.33],
    [-30.4, -31.1, -30.242, -30.803, -30.242, -30.242, -29.5, -31.135, -32.0, -31.135, -31.135],
    [-25.8, -26.4, -25.517, -25.867, -25.015, -25.391, -24.8, -25.908, -27.3, -26.41, -26.284],
    [-33.1, -33.6, -32.148, -33.766, -32.75, -32.75, -32.0, -33.643, -34.5, -33.041, -33.643],
    [-21.12, -21.82, -20.712, -21.225, -20.875, -20.875, -20.22, -21.768, -22.72, -21.605, -21.768],
    [-28.6, -29.2, -27.415, -28.122, -27.415, -26.28, -27.6, -28.308, -30.1, -28.308, -27.173],
];

const SEARCH_PRIOR: [f64; 10] = [-38.2, -33.5, -41.0, -36.4, -37.9, -40.3, -35.1, -44.6, -30.8, -39.0];

/// `log P(original instruction | code)`.
const SEARCH_REVIEWER: [f64; 10] = [-10.0, -13.0, -11.0, -12.5, -11.5, -12.0, -13.5, -15.0, -14.0, -12.0];

/// Pairs the judge answers "No" even though they end up in one cluster
/// through other members.
const SEARCH_NOT_DIRECT: [(usize, usize); 2] = [(0, 8), (1, 8)];

fn words(s: &str) -> usize {
    s.split_whitespace().count().max(1)
}

/// The qualitative `search` example, ready to run through the pipeline.
pub fn qualitative_example() -> QualitativeFixture {
    let task = Task {
        task_id: "search".into(),
        instruction: SEARCH_INSTRUCTION.into(),
        prompt_scaffold: String::new(),
        entry_point: "search".into(),
        tests: SEARCH_TESTS.into(),
    };
    let codes: Vec<String> = SEARCH_CODES.iter().map(|s| s.to_string()).collect();
    let instructions: Vec<String> = SEARCH_INSTRUCTIONS.iter().map(|s| s.to_string()).collect();

    let mut all_instr = vec![task.instruction.clone()];
    all_instr.extend(instructions.iter().cloned());

    let mut b = MockBackend::builder()
        .model_name("mock-qualitative")
        .script(task.coder_prompt(), codes.clone());
    for (c, code) in codes.iter().enumerate() {
        b = b.script(prompts::instruction_prompt(code), [format!("{}{END}", instructions[c])]);
        for (i, instr) in all_instr.iter().enumerate() {
            b = b.total_logprob(prompts::coder_prompt(instr), code, SEARCH_L0[c][i], words(code));
        }
        b = b.total_logprob(prompts::PRIOR_PROMPT, code, SEARCH_PRIOR[c], words(code));
        b = b.total_logprob(
            prompts::reviewer_prompt(code),
            task.instruction.trim(),
            SEARCH_REVIEWER[c],
            words(&task.instruction),
        );
    }

    let mut group_of: BTreeMap<String, usize> = BTreeMap::new();
    for (g, members) in QualitativeFixture::expected_clusters().iter().enumerate() {
        for &m in members {
            group_of.insert(normalize(&all_instr[m as usize]), g);
        }
    }
    let index_of: BTreeMap<String, usize> = all_instr.iter().enumerate().map(|(i, t)| (normalize(t), i)).collect();
    let backend = b
        .gen_fallback(move |prompt, _| {
            let (a, bb) = prompts::parse_equivalence_prompt(prompt)?;
            let (ia, ib) = (index_of.get(&normalize(&a))?, index_of.get(&normalize(&bb))?);
            let pair = (*ia.min(ib), *ia.max(ib));
            let same = group_of.get(&normalize(&a)) == group_of.get(&normalize(&bb));
            Some(if same && !SEARCH_NOT_DIRECT.contains(&pair) { " Yes".into() } else { " No".into() })
        })
        .build();

    let executor = MockExecutor::passing([codes[0].clone(), codes[5].clone(), codes[7].clone()]);
    let config = PipelineConfig {
        sampling: SamplingConfig {
            num_samples: 10,
            temperature: 1.0,
            max_tokens: 512,
        },
        synthesis: SynthesisConfig::default(),
        alpha: 1.0,
        ..PipelineConfig::default()
    };
    QualitativeFixture {
        task,
        codes,
        instructions,
        backend,
        executor,
        config,
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One task of the scripted suite.
struct SuiteTask {
    task_id: &'static str,
    instruction: &'static str,
    scaffold: &'static str,
    entry_point: &'static str,
    tests: &'static str,
    /// (completion text, passes)
    variants: [(&'static str, bool); 5],
    /// Sampling order over `variants`.
    order: [usize; 10],
}

const SUITE: [SuiteTask; 5] = [
    SuiteTask {
        task_id: "mock/0",
        instruction: "Write a function that returns the sum of all numbers in a list.",
        scaffold: "",
        entry_point: "sum_list",
        tests: "assert sum_list([1, 2, 3]) == 6\nassert sum_list([]) == 0\nassert sum_list([-1, 1]) == 0\n",
        variants: [
            ("def sum_list(xs):\n    \"\"\"Return the sum of all numbers in a list.\"\"\"\n    return sum(xs)\n", true),
            ("def sum_list(xs):\n    \"\"\"Compute the total of the numbers in a list.\"\"\"\n    total = 0\n    for x in xs:\n        total += x\n    return total\n", true),
            ("def sum_list(xs):\n    \"\"\"Return the product of all numbers in a list.\"\"\"\n    out = 1\n    for x in xs:\n        out *= x\n    return out\n", false),
            ("def sum_list(xs):\n    \"\"\"Return the largest number in a list.\"\"\"\n    return max(xs)\n", false),
            ("def sum_list(xs):\n    \"\"\"Return the sum of the positive numbers in a list.\"\"\"\n    return sum(x for x in xs if x > 0)\n", false),
        ],
        order: [2, 0, 1, 0, 3, 4, 1, 2, 0, 3],
    },
    SuiteTask {
        task_id: "mock/1",
        instruction: "Write a function to find the largest of three numbers.",
        scaffold: "",
        entry_point: "max_of_three",
        tests: "assert max_of_three(1, 2, 3) == 3\nassert max_of_three(5, -1, 2) == 5\nassert max_of_three(0, 7, 7) == 7\n",
        variants: [
            ("def max_of_three(a, b, c):\n    \"\"\"Return the largest of three numbers.\"\"\"\n    return max(a, b, c)\n", true),
            ("def max_of_three(a, b, c):\n    \"\"\"Find the maximum among three given numbers.\"\"\"\n    best = a\n    if b > best:\n        best = b\n    if c > best:\n        best = c\n    return best\n", true),
            ("def max_of_three(a, b, c):\n    \"\"\"Return the smallest of three numbers.\"\"\"\n    return min(a, b, c)\n", false),
            ("def max_of_three(a, b, c):\n    \"\"\"Return the largest of the first two numbers.\"\"\"\n    return max(a, b)\n", false),
            ("def max_of_three(a, b, c):\n    \"\"\"Return the sum of three numbers.\"\"\"\n    return a + b + c\n", false),
        ],
        order: [3, 0, 2, 1, 4, 3, 0, 1, 2, 0],
    },
    SuiteTask {
        task_id: "mock/2",
        instruction: "Write a function that counts the vowels in a string.",
        scaffold: "",
        entry_point: "count_vowels",
        tests: "assert count_vowels('hello') == 2\nassert count_vowels('AEIOU') == 5\nassert count_vowels('xyz') == 0\n",
        variants: [
            ("def count_vowels(s):\n    \"\"\"Count the vowels in a string.\"\"\"\n    return sum(ch in 'aeiouAEIOU' for ch in s)\n", true),
            ("def count_vowels(s):\n    \"\"\"Return how many vowels appear in the given string.\"\"\"\n    n = 0\n    for ch in s.lower():\n        if ch in 'aeiou':\n            n += 1\n    return n\n", true),
            ("def count_vowels(s):\n    \"\"\"Count the consonants in a string.\"\"\"\n    return sum(ch.isalpha() and ch not in 'aeiouAEIOU' for ch in s)\n", false),
            ("def count_vowels(s):\n    \"\"\"Count the lowercase vowels in a string.\"\"\"\n    return sum(ch in 'aeiou' for ch in s)\n", false),
            ("def count_vowels(s):\n    \"\"\"Return the length of a string.\"\"\"\n    return len(s)\n", false),
        ],
        order: [0, 3, 2, 4, 1, 0, 3, 2, 1, 4],
    },
    SuiteTask {
        task_id: "mock/3",
        instruction: "Write a function to reverse the order of words in a sentence.",
        scaffold: "",
        entry_point: "reverse_words",
        tests: "assert reverse_words('a b c') == 'c b a'\nassert reverse_words('hello') == 'hello'\n",
        variants: [
            ("def reverse_words(s):\n    \"\"\"Reverse the order of words in a sentence.\"\"\"\n    return ' '.join(s.split()[::-1])\n", true),
            ("def reverse_words(s):\n    \"\"\"Return the words of a sentence in backwards order.\"\"\"\n    words = s.split()\n    words.reverse()\n    return ' '.join(words)\n", true),
            ("def reverse_words(s):\n    \"\"\"Reverse the characters of a string.\"\"\"\n    return s[::-1]\n", false),
            ("def reverse_words(s):\n    \"\"\"Sort the words in a sentence.\"\"\"\n    return ' '.join(sorted(s.split()))\n", false),
            ("def reverse_words(s):\n    \"\"\"Return the first word of a sentence.\"\"\"\n    return s.split()[0]\n", false),
        ],
        order: [2, 2, 0, 3, 1, 4, 0, 2, 3, 1],
    },
    SuiteTask {
        task_id: "mock/4",
        instruction: "Return the even numbers from a list, keeping their order.",
        scaffold: "def evens(xs):\n    \"\"\"Return the even numbers from a list, keeping their order.\"\"\"\n",
        entry_point: "evens",
        tests: "assert evens([1, 2, 3, 4]) == [2, 4]\nassert evens([4, 2]) == [4, 2]\nassert evens([]) == []\n",
        variants: [
            ("    # behaviour: return the even numbers of a list\n    return [x for x in xs if x % 2 == 0]\n", true),
            ("    # behaviour: keep only the even values from a list\n    out = []\n    for x in xs:\n        if x % 2 == 0:\n            out.append(x)\n    return out\n", true),
            ("    # behaviour: return the odd numbers of a list\n    return [x for x in xs if x % 2]\n", false),
            ("    # behaviour: return the sorted even numbers of a list\n    return sorted(x for x in xs if x % 2 == 0)\n", false),
            ("    # behaviour: count the even numbers in a list\n    return len([x for x in xs if x % 2 == 0])\n", false),
        ],
        order: [0, 2, 4, 1, 3, 0, 2, 1, 4, 3],
    },
];

/// Canonical meaning terms of an instruction, for the scripted judge.
pub fn key_terms(text: &str) -> BTreeSet<&'static str> {
    const VOCAB: &[(&str, &str)] = &[
        ("sum", "sum"),
        ("total", "sum"),
        ("product", "product"),
        ("largest", "max"),
        ("maximum", "max"),
        ("max", "max"),
        ("greatest", "max"),
        ("smallest", "min"),
        ("minimum", "min"),
        ("positive", "positive"),
        ("even", "even"),
        ("odd", "odd"),
        ("vowels", "vowel"),
        ("vowel", "vowel"),
        ("consonants", "consonant"),
        ("count", "count"),
        ("counts", "count"),
        ("many", "count"),
        ("lowercase", "lower"),
        ("length", "length"),
        ("reverse", "reverse"),
        ("backwards", "reverse"),
        ("sort", "sort"),
        ("sorted", "sort"),
        ("words", "word"),
        ("word", "word"),
        ("characters", "char"),
        ("first", "first"),
        ("two", "two"),
    ];
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .filter_map(|w| {
            let w = w.to_ascii_lowercase();
            VOCAB.iter().find(|(k, _)| *k == w).map(|(_, v)| *v)
        })
        .collect()
}

/// Instruction a scripted model writes for `code`: the `# behaviour:`
/// comment if there is one, else the first docstring.
fn describe(code: &str) -> Option<String> {
    if let Some(line) = code.lines().find_map(|l| l.trim().strip_prefix("# behaviour:")) {
        let mut s = line.trim().to_string();
        if let Some(first) = s.get(..1) {
            s = first.to_uppercase() + &s[1..];
        }
        return Some(format!("{s}."));
    }
    let start = code.find("\"\"\"")? + 3;
    let end = start + code[start..].find("\"\"\"")?;
    Some(code[start..end].trim().to_string())
}

pub struct MockSuite {
    pub tasks: Vec<Task>,
    pub backend: MockBackend,
    pub executor: MockExecutor,
    pub config: PipelineConfig,
}

/// Five scripted tasks with ten samples each.
pub fn mock_suite() -> MockSuite {
    let mut b = MockBackend::builder().model_name("mock-suite");
    let mut tasks = Vec::new();
    let mut passing = Vec::new();
    for st in &SUITE {
        let task = Task {
            task_id: st.task_id.into(),
            instruction: st.instruction.into(),
            prompt_scaffold: st.scaffold.into(),
            entry_point: st.entry_point.into(),
            tests: st.tests.into(),
        };
        let samples: Vec<String> = st
            .order
            .iter()
            .map(|&k| format!("{}```\n", st.variants[k].0))
            .collect();
        b = b.script(format!("{}{}", task.coder_prompt(), st.scaffold), samples);
        for (text, ok) in st.variants {
            if ok {
                passing.push(format!("{}{}", st.scaffold, text));
            }
        }
        tasks.push(task);
    }
    let backend = b
        .score_fallback(|p, c| Some(synthetic_token_logprobs(p, c)))
        .gen_fallback(|prompt, _| {
            if let Some(code) = prompts::parse_instruction_prompt(prompt) {
                return describe(code).map(|d| format!("{d}{END}"));
            }
            let (a, bb) = prompts::parse_equivalence_prompt(prompt)?;
            let (ka, kb) = (key_terms(&a), key_terms(&bb));
            Some(if !ka.is_empty() && ka == kb { " Yes".into() } else { " No".into() })
        })
        .build();
    MockSuite {
        tasks,
        backend,
        executor: MockExecutor::passing(passing),
        config: PipelineConfig {
            sampling: SamplingConfig {
                num_samples: 10,
                temperature: 1.0,
                max_tokens: 256,
            },
            ..PipelineConfig::default()
        },
    }
}
