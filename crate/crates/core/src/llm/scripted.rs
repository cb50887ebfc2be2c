//! A rule-based stand-in for a model, for tests and offline fixtures.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{ChatRequest, ChatResponse, ChatTransport, LlmError, Role};

struct Rule {
    tag: String,
    needles: Vec<String>,
    reply: String,
}

/// Answers each request with the reply of the most specific matching rule.
///
/// A rule matches when the request tag equals its tag and every needle
/// occurs in the user message. The rule with the most needles wins; among
/// equals the one added last wins. Unmatched requests are transport errors.
#[derive(Default)]
pub struct ScriptedTransport {
    rules: Vec<Rule>,
    calls: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(mut self, tag: &str, needles: &[&str], reply: impl Into<String>) -> Self {
        self.rules.push(Rule {
            tag: tag.to_string(),
            needles: needles.iter().map(|n| n.to_string()).collect(),
            reply: reply.into(),
        });
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatTransport for ScriptedTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let user: String = request
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let best = self
            .rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.tag == request.request_tag && r.needles.iter().all(|n| user.contains(n.as_str())))
            .max_by_key(|(i, r)| (r.needles.len(), *i));
        match best {
            Some((_, rule)) => Ok(ChatResponse::stop(rule.reply.clone())),
            None => Err(LlmError::Transport(format!(
                "no scripted reply for a {} request",
                request.request_tag
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::tests::request;

    #[test]
    fn most_specific_then_latest_rule_wins() {
        let model = ScriptedTransport::new()
            .reply("code", &["f"], "general")
            .reply("code", &["f", "retry"], "specific")
            .reply("code", &["f", "again"], "later");
        assert_eq!(model.send(&request("f")).unwrap().content, "general");
        assert_eq!(model.send(&request("f retry")).unwrap().content, "specific");
        assert_eq!(model.send(&request("f retry again")).unwrap().content, "later");
        assert!(model.send(&request("g")).is_err());
        let mut other = request("f");
        other.request_tag = "critic".into();
        assert!(model.send(&other).is_err());
        assert_eq!(model.calls(), 5);
    }
}
