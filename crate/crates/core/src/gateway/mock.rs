//! Deterministic scripted backend.
//!
//! A script is an ordered list of rules; the first rule whose matcher accepts
//! the request's last user message (and whose optional task matches) supplies
//! the response. Responses are cut at explicit character offsets and each
//! chunk is preceded by a fixed delay, so timing-sensitive tests run under
//! tokio's paused clock without flakiness.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChatChunk, ChatRequest, ChunkStream, LlmBackend};

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("reading mock script: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing mock script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("rule {rule}: invalid pattern: {source}")]
    Pattern { rule: usize, source: regex::Error },
    #[error("rule {rule}: split offsets must be strictly increasing and inside (0, {len})")]
    Splits { rule: usize, len: usize },
    #[error("script must end with a catch-all rule")]
    NoCatchAll,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleMatcher {
    Exact(String),
    Pattern(String),
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: RuleMatcher,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub response: String,
    /// Character offsets at which the response is cut into chunks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub splits: Vec<usize>,
    /// Delay before each chunk.
    #[serde(default)]
    pub delay_ms: u64,
}

impl MockRule {
    pub fn new(matcher: RuleMatcher, response: impl Into<String>) -> Self {
        Self {
            matcher,
            task: None,
            response: response.into(),
            splits: Vec::new(),
            delay_ms: 0,
        }
    }

    pub fn with_splits(mut self, splits: Vec<usize>) -> Self {
        self.splits = splits;
        self
    }

    pub fn with_delay(mut self, delay_ms: u64) -> Self {
        self.delay_ms = delay_ms;
        self
    }

    pub fn for_task(mut self, task: impl Into<String>) -> Self {
        self.task = Some(task.into());
        self
    }

    /// The response cut at `splits`.
    pub fn chunks(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.splits.len() + 1);
        let mut bounds = self.response.char_indices().map(|(b, _)| b).chain([self.response.len()]);
        let mut last_byte = 0;
        let mut last_char = 0;
        for &split in &self.splits {
            let byte = bounds.nth(split - last_char).expect("validated split");
            out.push(self.response[last_byte..byte].to_string());
            last_byte = byte;
            last_char = split + 1;
        }
        out.push(self.response[last_byte..].to_string());
        out
    }
}

#[derive(Debug)]
struct CompiledRule {
    rule: MockRule,
    pattern: Option<Regex>,
}

#[derive(Debug, Deserialize)]
struct ScriptFile {
    rules: Vec<MockRule>,
}

#[derive(Debug)]
pub struct MockScript {
    rules: Vec<CompiledRule>,
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Result<Self, MockScriptError> {
        if !matches!(rules.last(), Some(MockRule { matcher: RuleMatcher::Any, task: None, .. })) {
            return Err(MockScriptError::NoCatchAll);
        }
        let mut compiled = Vec::with_capacity(rules.len());
        for (i, rule) in rules.into_iter().enumerate() {
            let len = rule.response.chars().count();
            let increasing = rule.splits.windows(2).all(|w| w[0] < w[1]);
            let inside = rule.splits.iter().all(|&s| s > 0 && s < len);
            if !increasing || !inside {
                return Err(MockScriptError::Splits { rule: i, len });
            }
            let pattern = match &rule.matcher {
                RuleMatcher::Pattern(p) => {
                    Some(Regex::new(p).map_err(|source| MockScriptError::Pattern { rule: i, source })?)
                }
                _ => None,
            };
            compiled.push(CompiledRule { rule, pattern });
        }
        Ok(Self { rules: compiled })
    }

    pub fn from_json_str(s: &str) -> Result<Self, MockScriptError> {
        let file: ScriptFile = serde_json::from_str(s)?;
        Self::new(file.rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MockScriptError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn rules(&self) -> impl Iterator<Item = &MockRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    /// First rule accepting the request.
    pub fn find(&self, request: &ChatRequest) -> &MockRule {
        let text = request.last_user_message().unwrap_or("");
        let task = request.task();
        self.rules
            .iter()
            .find(|c| {
                let task_ok = c.rule.task.as_deref().is_none_or(|t| Some(t) == task);
                let text_ok = match (&c.rule.matcher, &c.pattern) {
                    (RuleMatcher::Exact(s), _) => s == text,
                    (RuleMatcher::Pattern(_), Some(re)) => re.is_match(text),
                    (RuleMatcher::Pattern(_), None) => false,
                    (RuleMatcher::Any, _) => true,
                };
                task_ok && text_ok
            })
            .map(|c| &c.rule)
            .expect("script ends with a catch-all")
    }
}

/// Scripted backend. Counts the streams it opens.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl LlmBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn open_stream(&self, request: &ChatRequest) -> ChunkStream {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let rule = self.script.find(request);
        let delay = Duration::from_millis(rule.delay_ms);
        let pieces = rule.chunks();
        let last = pieces.len() - 1;
        stream::iter(pieces.into_iter().enumerate())
            .then(move |(i, piece)| async move {
                if !delay.is_zero() {
                    tokio::time::sleep(delay).await;
                }
                Ok(if i == last {
                    ChatChunk::last(piece, Some("stop".into()))
                } else {
                    ChatChunk::partial(piece)
                })
            })
            .boxed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{complete_stream, ChatMessage, GatewayError};
    use tokio::time::Instant;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::user(text)], "mock", 600)
    }

    fn script(rules: Vec<MockRule>) -> MockScript {
        MockScript::new(rules).unwrap()
    }

    #[tokio::test]
    async fn ping_pong_single_chunk() {
        let backend = MockBackend::new(script(vec![
            MockRule::new(RuleMatcher::Exact("ping".into()), "pong"),
            MockRule::new(RuleMatcher::Any, ""),
        ]));
        let chunks: Vec<_> = complete_stream(&backend, &request("ping")).collect().await;
        assert_eq!(chunks, vec![Ok(ChatChunk::last("pong", Some("stop".into())))]);
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn splits_cut_by_characters() {
        let rule = MockRule::new(RuleMatcher::Any, "abcdefghijkl").with_splits(vec![5, 9]);
        let lens: Vec<_> = rule.chunks().iter().map(|c| c.chars().count()).collect();
        assert_eq!(lens, vec![5, 4, 3]);
        let rule = MockRule::new(RuleMatcher::Any, "né日本x").with_splits(vec![1, 3]);
        assert_eq!(rule.chunks(), vec!["n", "é日", "本x"]);
    }

    #[tokio::test(start_paused = true)]
    async fn slow_chunks_hit_the_budget() {
        let backend = MockBackend::new(script(vec![
            MockRule::new(RuleMatcher::Any, "abcdefghijkl").with_splits(vec![5, 9]).with_delay(700),
        ]));
        let start = Instant::now();
        let items: Vec<_> = complete_stream(&backend, &request("anything")).collect().await;
        assert_eq!(items, vec![Err(GatewayError::Timeout { budget_ms: 600 })]);
        assert_eq!(start.elapsed(), Duration::from_millis(600));
    }

    #[tokio::test(start_paused = true)]
    async fn partial_chunks_survive_timeout() {
        let backend = MockBackend::new(script(vec![
            MockRule::new(RuleMatcher::Any, "abcdefghijkl").with_splits(vec![5, 9]).with_delay(250),
        ]));
        let items: Vec<_> = complete_stream(&backend, &request("x")).collect().await;
        assert_eq!(
            items,
            vec![
                Ok(ChatChunk::partial("abcde")),
                Ok(ChatChunk::partial("fghi")),
                Err(GatewayError::Timeout { budget_ms: 600 }),
            ]
        );
    }

    #[test]
    fn first_match_wins_and_tasks_filter() {
        let s = script(vec![
            MockRule::new(RuleMatcher::Pattern("^jobs".into()), "tagged").for_task("tag"),
            MockRule::new(RuleMatcher::Pattern("^jobs".into()), "first"),
            MockRule::new(RuleMatcher::Exact("jobs in rome".into()), "second"),
            MockRule::new(RuleMatcher::Any, "fallback"),
        ]);
        assert_eq!(s.find(&request("jobs in rome")).response, "first");
        assert_eq!(s.find(&request("other")).response, "fallback");
        let tagged = ChatRequest::new(
            vec![ChatMessage::system("# task: tag\n..."), ChatMessage::user("jobs x")],
            "m",
            10,
        );
        assert_eq!(s.find(&tagged).response, "tagged");
    }

    #[test]
    fn script_validation() {
        assert!(matches!(
            MockScript::new(vec![MockRule::new(RuleMatcher::Exact("a".into()), "b")]),
            Err(MockScriptError::NoCatchAll)
        ));
        assert!(matches!(
            MockScript::new(vec![MockRule::new(RuleMatcher::Any, "abc").with_splits(vec![2, 2])]),
            Err(MockScriptError::Splits { .. })
        ));
        assert!(matches!(
            MockScript::new(vec![MockRule::new(RuleMatcher::Any, "abc").with_splits(vec![3])]),
            Err(MockScriptError::Splits { .. })
        ));
        let parsed = MockScript::from_json_str(
            r#"{"rules":[{"match":{"pattern":"^a"},"response":"x","splits":[]},{"match":"any","response":""}]}"#,
        )
        .unwrap();
        assert_eq!(parsed.rules().count(), 2);
    }

    #[tokio::test]
    async fn reassembly_matches_script() {
        let s = script(vec![
            MockRule::new(RuleMatcher::Exact("a".into()), "{\"tool\":\"t\",\"arguments\":{}} é!").with_splits(vec![3, 10, 25]),
            MockRule::new(RuleMatcher::Any, "plain"),
        ]);
        let expected: Vec<String> = s.rules().map(|r| r.response.clone()).collect();
        let backend = MockBackend::new(s);
        for (q, want) in [("a", &expected[0]), ("zzz", &expected[1])] {
            let mut st = complete_stream(&backend, &request(q));
            let text = crate::gateway::collect_text(st.as_mut()).await.unwrap();
            assert_eq!(&text, want);
        }
    }
}
