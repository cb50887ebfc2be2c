use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::python::{count_assertions, top_level_definitions};
use super::{AgentError, CritiqueVerdict, GeneratedTests, Verdict};
use crate::solution::FunctionInterface;
use crate::tree::{validate_tree, NodeId, NodeKind, ProblemNode, ProblemTree, TaskSpec, TreeCaps};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    /// Info string after the opening fence, e.g. `python`.
    pub lang: String,
    pub body: String,
}

/// All complete fenced code blocks, in order of appearance. An unterminated
/// trailing fence is ignored.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut out = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let t = line.trim();
        match &mut open {
            None => {
                if let Some(info) = t.strip_prefix("```") {
                    if !info.contains('`') {
                        open = Some((info.trim().to_string(), Vec::new()));
                    }
                }
            }
            Some((lang, body)) => {
                if t == "```" {
                    out.push(FencedBlock {
                        lang: std::mem::take(lang),
                        body: body.join("\n"),
                    });
                    open = None;
                } else {
                    body.push(line);
                }
            }
        }
    }
    out
}

/// The decomposition schema: a nested node with optional children.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct NestedNode {
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interface_hint: Option<String>,
    #[serde(default)]
    children: Vec<NestedNode>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TreeReply {
    Bare(NestedNode),
    Wrapped { root: NestedNode },
}

impl TreeReply {
    fn into_root(self) -> NestedNode {
        match self {
            TreeReply::Bare(n) => n,
            TreeReply::Wrapped { root } => root,
        }
    }
}

/// Decodes the problem tree from a decomposition reply.
///
/// The last fenced block that decodes wins (replies often contain scratch
/// blocks first); the whole reply is tried as a last resort. Node ids are
/// outline numbers (`root`, `root.1`, `root.1.2`, ...). Nodes at the depth cap
/// become leaves and anything below them is dropped. The root's description
/// and interface hint are pinned to the task. Only valid trees are returned.
pub fn parse_tree_response(text: &str, task: &TaskSpec, caps: TreeCaps) -> Result<ProblemTree, AgentError> {
    let blocks = fenced_blocks(text);
    let mut last_error = String::from("no fenced block");
    let mut decoded = None;
    for block in blocks.iter().rev() {
        match serde_json::from_str::<TreeReply>(&block.body) {
            Ok(r) => {
                decoded = Some(r.into_root());
                break;
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    if decoded.is_none() && blocks.is_empty() {
        if let Ok(r) = serde_json::from_str::<TreeReply>(text.trim()) {
            decoded = Some(r.into_root());
        }
    }
    let root = decoded.ok_or(AgentError::UnparseableTree(last_error))?;

    let mut nodes = BTreeMap::new();
    let root_id = NodeId::new("root");
    insert_nested(root, root_id.clone(), 0, caps, &mut nodes);
    let r = nodes.get_mut(&root_id).expect("root inserted");
    r.description = task.description.clone();
    if let Some(ep) = &task.entry_point {
        r.interface_hint = Some(ep.clone());
    }
    let tree = ProblemTree {
        task: task.clone(),
        nodes,
        root_id,
        caps,
    };
    let violations = validate_tree(&tree);
    if violations.is_empty() {
        Ok(tree)
    } else {
        Err(AgentError::InvalidTree(violations))
    }
}

fn insert_nested(node: NestedNode, id: NodeId, depth: usize, caps: TreeCaps, out: &mut BTreeMap<NodeId, ProblemNode>) {
    let children_src = if depth >= caps.depth_cap {
        Vec::new()
    } else {
        node.children
    };
    let mut children = Vec::with_capacity(children_src.len());
    for (i, child) in children_src.into_iter().enumerate() {
        let cid = NodeId::new(format!("{}.{}", id, i + 1));
        children.push(cid.clone());
        insert_nested(child, cid, depth + 1, caps, out);
    }
    let kind = if depth == 0 {
        NodeKind::Root
    } else if children.is_empty() {
        NodeKind::Leaf
    } else {
        NodeKind::Internal
    };
    out.insert(
        id.clone(),
        ProblemNode {
            id,
            title: node.title,
            description: node.description,
            interface_hint: node.interface_hint.filter(|h| !h.trim().is_empty()),
            children,
            kind,
        },
    );
}

/// Renders `tree` in the decomposition schema, inside a ```json fence.
pub fn render_tree_block(tree: &ProblemTree) -> String {
    fn nest(tree: &ProblemTree, id: &NodeId) -> NestedNode {
        let n = &tree.nodes[id];
        NestedNode {
            title: n.title.clone(),
            description: n.description.clone(),
            interface_hint: n.interface_hint.clone(),
            children: n.children.iter().map(|c| nest(tree, c)).collect(),
        }
    }
    let root = nest(tree, &tree.root_id);
    format!(
        "```json\n{}\n```",
        serde_json::to_string_pretty(&root).expect("tree serializes")
    )
}

/// Source and declared interface extracted from a code reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeFragment {
    pub source: String,
    pub name: String,
    pub signature: String,
    pub doc: Option<String>,
}

impl CodeFragment {
    /// The interface, provided the function is documented.
    pub fn interface(&self) -> Result<FunctionInterface, AgentError> {
        let doc = self
            .doc
            .clone()
            .ok_or_else(|| AgentError::MissingDocstring(self.name.clone()))?;
        FunctionInterface::new(self.name.clone(), self.signature.clone(), doc)
            .map_err(|_| AgentError::MissingDocstring(self.name.clone()))
    }
}

/// Takes the last fenced block as the source and picks the defined function:
/// the one named `expected_name` when given, otherwise the last top-level
/// function.
pub fn parse_code_response(text: &str, expected_name: Option<&str>) -> Result<CodeFragment, AgentError> {
    let block = fenced_blocks(text).pop().ok_or(AgentError::NoCodeBlock)?;
    let defs: Vec<_> = top_level_definitions(&block.body)
        .into_iter()
        .filter(|d| !d.is_class)
        .collect();
    let last = defs.last().ok_or(AgentError::NoFunctionDefinition)?;
    let chosen = match expected_name {
        Some(expected) => defs
            .iter()
            .find(|d| d.name == expected)
            .ok_or_else(|| AgentError::NameMismatch {
                expected: expected.to_string(),
                found: last.name.clone(),
            })?,
        None => last,
    };
    let mut source = block.body.trim_end().to_string();
    source.push('\n');
    Ok(CodeFragment {
        source,
        name: chosen.name.clone(),
        signature: chosen.signature.clone(),
        doc: chosen.doc.clone(),
    })
}

fn verdict_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[\s>*_`#-]*verdict[\s*_`]*[:\-][\s*_`]*(approve|revise)\b[\s*_`.!]*$")
            .expect("verdict regex")
    })
}

/// Reads the `VERDICT: APPROVE|REVISE` marker; the last marker wins. A reply
/// without a marker counts as a revision with the whole text as feedback.
pub fn parse_critic_response(text: &str) -> CritiqueVerdict {
    let Some(m) = verdict_regex().captures_iter(text).last() else {
        let feedback = text.trim();
        return CritiqueVerdict {
            verdict: Verdict::Revise,
            feedback: if feedback.is_empty() {
                "The critic gave no verdict.".to_string()
            } else {
                feedback.to_string()
            },
        };
    };
    let whole = m.get(0).expect("match");
    if m[1].eq_ignore_ascii_case("approve") {
        return CritiqueVerdict {
            verdict: Verdict::Approve,
            feedback: String::new(),
        };
    }
    let remarks = format!("{}\n{}", &text[..whole.start()], &text[whole.end()..]);
    let remarks = remarks.trim();
    CritiqueVerdict {
        verdict: Verdict::Revise,
        feedback: if remarks.is_empty() {
            "The critic requested a revision without details.".to_string()
        } else {
            remarks.to_string()
        },
    }
}

/// Takes the last fenced block as a test suite and counts its asserts.
pub fn parse_tests_response(text: &str) -> Result<GeneratedTests, AgentError> {
    let block = fenced_blocks(text).pop().ok_or(AgentError::NoCodeBlock)?;
    let case_count = count_assertions(&block.body);
    if case_count == 0 {
        return Err(AgentError::EmptySuite);
    }
    let mut test_source = block.body.trim_end().to_string();
    test_source.push('\n');
    Ok(GeneratedTests {
        test_source,
        case_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn task() -> TaskSpec {
        TaskSpec::new("t", "Sum then sort.").with_entry_point("solve")
    }

    const TWO_LEAVES: &str = r#"{"title":"solve","description":"x","children":[
        {"title":"a","description":"do a","interface_hint":"do_a(x)"},
        {"title":"b","description":"do b","interface_hint":"do_b(x)","children":[]}]}"#;

    #[test]
    fn decodes_single_block() {
        let reply = format!("Plan: two helpers.\n```json\n{TWO_LEAVES}\n```\n");
        let t = parse_tree_response(&reply, &task(), TreeCaps::default()).unwrap();
        assert_eq!(t.nodes.len(), 3);
        let root = t.root().unwrap();
        assert_eq!(root.children, vec![NodeId::new("root.1"), NodeId::new("root.2")]);
        assert_eq!(root.interface_hint.as_deref(), Some("solve"));
        assert_eq!(root.description, "Sum then sort.");
        assert_eq!(t.nodes[&NodeId::new("root.1")].kind, NodeKind::Leaf);
    }

    #[test]
    fn last_decodable_block_wins() {
        let reply = format!(
            "Scratch:\n```json\n{{\"title\":\"draft\"}}\n```\nFinal:\n```json\n{TWO_LEAVES}\n```\nTrailing ```python\nx\n```\n"
        );
        let t = parse_tree_response(&reply, &task(), TreeCaps::default()).unwrap();
        assert_eq!(t.nodes.len(), 3);
    }

    #[test]
    fn no_block_is_unparseable() {
        assert!(matches!(
            parse_tree_response("I think we should write code.", &task(), TreeCaps::default()),
            Err(AgentError::UnparseableTree(_))
        ));
        assert!(matches!(
            parse_tree_response("```json\n{\"nope\": 1}\n```", &task(), TreeCaps::default()),
            Err(AgentError::UnparseableTree(_))
        ));
    }

    #[test]
    fn depth_cap_truncates() {
        // root -> l1 -> l2 -> l3 -> l4 with depth_cap 3: l3 becomes a leaf, l4 dropped.
        let reply = r#"```json
{"title":"r","children":[{"title":"l1","children":[{"title":"l2","children":[
  {"title":"l3","children":[{"title":"l4"}]}]}]}]}
```"#;
        let t = parse_tree_response(reply, &task(), TreeCaps::new(3, 7).unwrap()).unwrap();
        let ids: Vec<&str> = t.nodes.keys().map(|k| k.as_str()).collect();
        assert_eq!(ids, ["root", "root.1", "root.1.1", "root.1.1.1"]);
        let deepest = &t.nodes[&NodeId::new("root.1.1.1")];
        assert_eq!(deepest.title, "l3");
        assert_eq!(deepest.kind, NodeKind::Leaf);
        assert!(validate_tree(&t).is_empty());
    }

    #[test]
    fn branch_cap_violation_is_invalid_tree() {
        let kids: Vec<String> = (0..3).map(|i| format!("{{\"title\":\"k{i}\"}}")).collect();
        let reply = format!("```json\n{{\"title\":\"r\",\"children\":[{}]}}\n```", kids.join(","));
        match parse_tree_response(&reply, &task(), TreeCaps::new(3, 2).unwrap()) {
            Err(AgentError::InvalidTree(v)) => assert_eq!(v[0].rule.name(), "branch-exceeded"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn code_reply_with_one_block() {
        let reply = "Here:\n```python\ndef add(a, b):\n    \"\"\"Return a + b.\"\"\"\n    return a + b\n```";
        let f = parse_code_response(reply, None).unwrap();
        let i = f.interface().unwrap();
        assert_eq!(i.name, "add");
        assert_eq!(i.signature, "(a, b)");
        assert_eq!(i.doc, "Return a + b.");
    }

    #[test]
    fn code_reply_last_block_taken() {
        let reply = "```python\ndef first():\n    '''one'''\n```\nBetter:\n```python\ndef second():\n    '''two'''\n    return 2\n```";
        assert_eq!(parse_code_response(reply, None).unwrap().name, "second");
    }

    #[test]
    fn code_reply_errors() {
        assert_eq!(parse_code_response("no code", None), Err(AgentError::NoCodeBlock));
        assert_eq!(
            parse_code_response("```python\nx = 1\n```", None),
            Err(AgentError::NoFunctionDefinition)
        );
        let reply = "```python\ndef close_elements(numbers, threshold):\n    \"\"\"doc\"\"\"\n    return False\n```";
        assert_eq!(
            parse_code_response(reply, Some("has_close_elements")),
            Err(AgentError::NameMismatch {
                expected: "has_close_elements".into(),
                found: "close_elements".into()
            })
        );
        let f = parse_code_response("```python\ndef f(x):\n    return x\n```", Some("f")).unwrap();
        assert_eq!(f.interface(), Err(AgentError::MissingDocstring("f".into())));
    }

    #[test]
    fn expected_name_picks_among_helpers() {
        let reply = "```python\ndef main(x):\n    \"\"\"m\"\"\"\n    return helper(x)\n\ndef helper(x):\n    \"\"\"h\"\"\"\n    return x\n```";
        assert_eq!(parse_code_response(reply, Some("main")).unwrap().name, "main");
        assert_eq!(parse_code_response(reply, None).unwrap().name, "helper");
    }

    #[test]
    fn critic_verdicts() {
        let v = parse_critic_response("Looks right.\nVERDICT: APPROVE");
        assert_eq!(v.verdict, Verdict::Approve);
        let v = parse_critic_response("1. Empty input crashes.\n2. Quadratic loop.\nVERDICT: REVISE");
        assert_eq!(v.verdict, Verdict::Revise);
        assert_eq!(v.feedback, "1. Empty input crashes.\n2. Quadratic loop.");
        let v = parse_critic_response("Seems mostly fine but I am unsure.");
        assert_eq!(v.verdict, Verdict::Revise);
        assert_eq!(v.feedback, "Seems mostly fine but I am unsure.");
        let v = parse_critic_response("**VERDICT: approve**");
        assert_eq!(v.verdict, Verdict::Approve);
        // Last marker wins.
        let v = parse_critic_response("VERDICT: APPROVE\nOn reflection, no.\nVERDICT: REVISE");
        assert_eq!(v.verdict, Verdict::Revise);
        assert!(v.feedback.contains("On reflection"));
    }

    #[test]
    fn tests_reply() {
        let r = "```python\nassert f(1) == 1\nassert f(2) == 4\nassert f(0) == 0\n```";
        assert_eq!(parse_tests_response(r).unwrap().case_count, 3);
        assert_eq!(
            parse_tests_response("```python\nThese tests check that f works.\n```"),
            Err(AgentError::EmptySuite)
        );
        assert_eq!(parse_tests_response("none"), Err(AgentError::NoCodeBlock));
        let mixed = "```python\ndef approx(a, b):\n    return abs(a - b) < 1e-9\n\nassert approx(f(0.5), 0.25)\nassert f(3) == 9\n```";
        assert_eq!(parse_tests_response(mixed).unwrap().case_count, 2);
    }

    fn arb_nested(depth: u32) -> BoxedStrategy<NestedNode> {
        let leaf = ("[a-z]{1,6}", "[a-z ]{0,12}", proptest::option::of("[a-z_]{1,6}")).prop_map(
            |(title, description, interface_hint)| NestedNode {
                title,
                description,
                interface_hint,
                children: vec![],
            },
        );
        if depth == 0 {
            return leaf.boxed();
        }
        (leaf, proptest::collection::vec(arb_nested(depth - 1), 0..4))
            .prop_map(|(mut n, kids)| {
                n.children = kids;
                n
            })
            .boxed()
    }

    proptest! {
        #[test]
        fn tree_block_round_trips(root in arb_nested(3)) {
            let reply = format!("```json\n{}\n```", serde_json::to_string(&root).unwrap());
            let t = parse_tree_response(&reply, &task(), TreeCaps::default()).unwrap();
            let again = parse_tree_response(&render_tree_block(&t), &task(), TreeCaps::default()).unwrap();
            prop_assert_eq!(t, again);
        }

        #[test]
        fn parsers_are_total(text in "(?s).{0,300}") {
            let _ = parse_tree_response(&text, &task(), TreeCaps::default());
            let _ = parse_code_response(&text, Some("f"));
            let _ = parse_critic_response(&text);
            let _ = parse_tests_response(&text);
        }

        #[test]
        fn parsers_are_total_on_fenced_noise(body in "(?s)[a-z(){}:\"' \n=#\\[\\]]{0,200}") {
            let text = format!("```python\n{body}\n```");
            let _ = parse_code_response(&text, None);
            let _ = parse_tests_response(&text);
            let _ = parse_tree_response(&text, &task(), TreeCaps::default());
        }
    }
}
