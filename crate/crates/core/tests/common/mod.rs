//! Scripted models behind the recorded fixtures, and helpers to load them.
//!
//! The transcripts under `tests/fixtures/` are recordings of these models;
//! `cargo test --test fixtures -- --ignored` rewrites them.

#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use treegen::bench::{parse_tasks, BenchTask};
use treegen::llm::{replay_session, ReplayTransport, ScriptedTransport};
use treegen::TaskSpec;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn replay(name: &str) -> ReplayTransport {
    replay_session(BufReader::new(File::open(fixture(name)).unwrap())).unwrap()
}

fn code(src: &str) -> String {
    format!("```python\n{}\n```\n", src.trim_end())
}

fn tree(json: &str) -> String {
    format!("Plan first, then the tree.\n\n```json\n{json}\n```\n")
}

const APPROVE: &str = "The implementation follows the requirement and handles the edge cases.\nVERDICT: APPROVE";

// Toy task: solve(x) = double(add_one(x)), where add_one needs a second try.

pub const TOY_CALLS: usize = 1 + 2 * 3 + 3 + 3;

pub fn toy_task() -> TaskSpec {
    serde_json::from_str(&std::fs::read_to_string(fixture("toy_task.json")).unwrap()).unwrap()
}

pub fn toy_model() -> ScriptedTransport {
    const ADD_ONE_WRONG: &str = "def add_one(x: int) -> int:\n    \"\"\"Return x plus one.\"\"\"\n    return x + 2\n";
    const ADD_ONE: &str = "def add_one(x: int) -> int:\n    \"\"\"Return x plus one.\"\"\"\n    return x + 1\n";
    const DOUBLE: &str = "def double(x: int) -> int:\n    \"\"\"Return twice x.\"\"\"\n    return 2 * x\n";
    const SOLVE: &str =
        "def solve(x: int) -> int:\n    \"\"\"Return twice the successor of x.\"\"\"\n    return double(add_one(x))\n";
    ScriptedTransport::new()
        .reply(
            "generalist",
            &[],
            tree(
                r#"{"title": "solve", "description": "Double the successor of x.", "children": [
  {"title": "add_one", "description": "Return x + 1.", "interface_hint": "add_one(x: int) -> int"},
  {"title": "double", "description": "Return 2 * x.", "interface_hint": "double(x: int) -> int"}
]}"#,
            ),
        )
        .reply("code", &["Function to implement: add_one"], code(ADD_ONE_WRONG))
        .reply(
            "code",
            &["Function to implement: add_one", "Attempt 1 feedback"],
            code(ADD_ONE),
        )
        .reply("code", &["Function to implement: double"], code(DOUBLE))
        .reply("code", &["Function to implement: solve"], code(SOLVE))
        .reply("critic", &[], APPROVE)
        .reply(
            "tester",
            &["Requirement: add_one"],
            code("assert add_one(1) == 2\nassert add_one(-1) == 0"),
        )
        .reply(
            "tester",
            &["Requirement: double"],
            code("assert double(3) == 6\nassert double(0) == 0"),
        )
        .reply(
            "tester",
            &["Requirement: solve"],
            code("assert solve(1) == 4\nassert solve(-1) == 0"),
        )
}

// Mini benchmark: the first five HumanEval problems.
//
//   task  one-shot                        guided
//   0     pass                            pass (atomic)
//   1     fail (splits on spaces)         fail (no usable decomposition)
//   2     pass                            pass (atomic)
//   3     fail (checks final balance)     pass (second attempt after tests)
//   4     fail (divides by n - 1)         pass (composed from a `mean` leaf)

pub const MINI_ONE_SHOT_CALLS: usize = 5;
pub const MINI_GUIDED_CALLS: usize = 4 + 3 + 4 + 7 + 7;

pub fn mini_tasks() -> Vec<BenchTask> {
    parse_tasks(&std::fs::read_to_string(fixture("humaneval_mini.jsonl")).unwrap()).unwrap()
}

pub fn mini_model() -> ScriptedTransport {
    const CLOSE: &str = "from typing import List


def has_close_elements(numbers: List[float], threshold: float) -> bool:
    \"\"\"Return True if two of the numbers are closer than threshold.\"\"\"
    ordered = sorted(numbers)
    return any(b - a < threshold for a, b in zip(ordered, ordered[1:]))
";
    const PARENS_BY_SPACES: &str = "from typing import List


def separate_paren_groups(paren_string: str) -> List[str]:
    \"\"\"Split the string into its balanced top-level groups.\"\"\"
    return [group for group in paren_string.split(' ') if group]
";
    const TRUNCATE: &str = "def truncate_number(number: float) -> float:
    \"\"\"Return the fractional part of a positive number.\"\"\"
    return number - int(number)
";
    const BELOW_FINAL: &str = "from typing import List


def below_zero(operations: List[int]) -> bool:
    \"\"\"Return True if the account balance drops below zero.\"\"\"
    total = 0
    for amount in operations:
        total += amount
    return total < 0
";
    const BELOW_RUNNING: &str = "from typing import List


def below_zero(operations: List[int]) -> bool:
    \"\"\"Return True as soon as the running balance drops below zero.\"\"\"
    total = 0
    for amount in operations:
        total += amount
        if total < 0:
            return True
    return False
";
    const MAD_SAMPLE: &str = "from typing import List


def mean_absolute_deviation(numbers: List[float]) -> float:
    \"\"\"Mean absolute deviation around the mean.\"\"\"
    centre = sum(numbers) / len(numbers)
    return sum(abs(x - centre) for x in numbers) / (len(numbers) - 1)
";
    const MEAN: &str = "def mean(numbers: List[float]) -> float:
    \"\"\"Arithmetic mean of a non-empty list of floats.\"\"\"
    return sum(numbers) / len(numbers)
";
    const MAD_COMPOSED: &str = "def mean_absolute_deviation(numbers: List[float]) -> float:
    \"\"\"Average absolute distance of the numbers from their mean.\"\"\"
    centre = mean(numbers)
    return mean([abs(x - centre) for x in numbers])
";
    let atomic = |name: &str| {
        tree(&format!(
            r#"{{"title": "{name}", "description": "Small enough to solve directly.", "children": []}}"#
        ))
    };
    ScriptedTransport::new()
        .reply("critic", &[], APPROVE)
        // has_close_elements
        .reply("generalist", &["def has_close_elements("], atomic("has_close_elements"))
        .reply("code", &["Function to implement: has_close_elements"], code(CLOSE))
        .reply(
            "tester",
            &["Requirement: has_close_elements"],
            code("assert has_close_elements([1.0, 2.0, 3.0], 0.5) is False\nassert has_close_elements([1.0, 2.8, 3.0, 4.0, 5.0, 2.0], 0.3) is True\nassert has_close_elements([], 1.0) is False"),
        )
        // separate_paren_groups
        .reply(
            "generalist",
            &["def separate_paren_groups("],
            "This one needs a careful scan of the characters; I would rather not split it.",
        )
        .reply("code", &["Function to implement: separate_paren_groups"], code(PARENS_BY_SPACES))
        // truncate_number
        .reply("generalist", &["def truncate_number("], atomic("truncate_number"))
        .reply("code", &["Function to implement: truncate_number"], code(TRUNCATE))
        .reply(
            "tester",
            &["Requirement: truncate_number"],
            code("assert truncate_number(3.5) == 0.5\nassert abs(truncate_number(2.25) - 0.25) < 1e-9"),
        )
        // below_zero
        .reply("generalist", &["def below_zero("], atomic("below_zero"))
        .reply("code", &["Function to implement: below_zero"], code(BELOW_FINAL))
        .reply(
            "code",
            &["Function to implement: below_zero", "Attempt 1 feedback"],
            code(BELOW_RUNNING),
        )
        .reply(
            "tester",
            &["Requirement: below_zero"],
            code("assert below_zero([1, 2, 3]) is False\nassert below_zero([1, 2, -4, 5]) is True\nassert below_zero([]) is False"),
        )
        // mean_absolute_deviation
        .reply(
            "generalist",
            &["def mean_absolute_deviation("],
            tree(
                r#"{"title": "mean_absolute_deviation", "description": "Average distance from the mean.", "children": [
  {"title": "mean", "description": "Arithmetic mean of a non-empty list of floats.", "interface_hint": "mean(numbers: List[float]) -> float"}
]}"#,
            ),
        )
        .reply("code", &["Function to implement: mean_absolute_deviation"], code(MAD_SAMPLE))
        .reply(
            "code",
            &["Function to implement: mean_absolute_deviation", "Available functions"],
            code(MAD_COMPOSED),
        )
        .reply("code", &["Function to implement: mean\n"], code(MEAN))
        .reply("tester", &["Requirement: mean\n"], code("assert mean([1.0, 2.0, 3.0]) == 2.0\nassert mean([4.0]) == 4.0"))
        .reply(
            "tester",
            &["Requirement: mean_absolute_deviation"],
            code("assert abs(mean_absolute_deviation([1.0, 2.0, 3.0, 4.0]) - 1.0) < 1e-9\nassert mean_absolute_deviation([2.0, 2.0]) == 0.0"),
        )
}
