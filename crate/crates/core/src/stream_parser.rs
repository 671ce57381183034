//! Incremental recognizer for tool calls embedded in streamed model output.
//!
//! The model emits free text interleaved with tool-call objects of the exact
//! shape `{"tool": <non-empty string>, "arguments": <object>}`. [`StreamParser`]
//! consumes arbitrary byte chunks and reports each call in the same
//! [`StreamParser::feed`] that delivers its closing brace, so execution can
//! start while the model is still generating.
//!
//! Text between calls is reported as one [`ParserEvent::TextDelta`] per run,
//! emitted when the run ends (at the next `{` or at [`StreamParser::finish`]).
//! Coalescing runs this way makes the event sequence independent of how the
//! input was chunked.
//!
//! [`parse_complete`] is a separate batch implementation over a whole
//! response; it is the reference the streaming path is tested against.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::ToolCall;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ParserEvent {
    ToolCallComplete { call: ToolCall },
    TextDelta { text: String },
    /// `position` is a byte offset into the concatenation of all chunks.
    ParseError { position: usize, description: String },
}

impl ParserEvent {
    pub fn is_error(&self) -> bool {
        matches!(self, ParserEvent::ParseError { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {position}: {description}")]
pub struct StreamError {
    pub position: usize,
    pub description: String,
}

impl StreamError {
    fn new(position: usize, description: impl Into<String>) -> Self {
        Self {
            position,
            description: description.into(),
        }
    }
}

impl From<StreamError> for ParserEvent {
    fn from(e: StreamError) -> Self {
        ParserEvent::ParseError {
            position: e.position,
            description: e.description,
        }
    }
}

/// Converts a parsed object into a [`ToolCall`], enforcing the wire shape.
fn tool_call_from_value(value: Value, call_index: usize) -> Result<ToolCall, String> {
    let Value::Object(mut map) = value else {
        return Err("tool call is not an object".into());
    };
    if let Some(extra) = map.keys().find(|k| *k != "tool" && *k != "arguments") {
        return Err(format!("unknown key '{extra}' in tool call"));
    }
    let tool = match map.remove("tool") {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(Value::String(_)) => return Err("tool name is empty".into()),
        Some(_) => return Err("tool name is not a string".into()),
        None => return Err("tool call has no 'tool' key".into()),
    };
    let arguments = match map.remove("arguments") {
        Some(Value::Object(args)) => args,
        Some(_) => return Err("tool call arguments are not an object".into()),
        None => return Err("tool call has no 'arguments' key".into()),
    };
    Ok(ToolCall::new(tool, arguments, call_index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Escape {
    None,
    Pending,
    Unicode(u8),
}

/// Push parser state for one response stream.
#[derive(Debug, Clone)]
pub struct StreamParser {
    offset: usize,
    in_object: bool,
    text: Vec<u8>,
    text_start: usize,
    object: Vec<u8>,
    object_start: usize,
    /// Open `{` / `[` inside the current object.
    stack: Vec<u8>,
    in_string: bool,
    escape: Escape,
    emitted: usize,
    error: Option<StreamError>,
}

impl Default for StreamParser {
    fn default() -> Self {
        Self::new()
    }
}

impl StreamParser {
    pub fn new() -> Self {
        Self {
            offset: 0,
            in_object: false,
            text: Vec::new(),
            text_start: 0,
            object: Vec::new(),
            object_start: 0,
            stack: Vec::new(),
            in_string: false,
            escape: Escape::None,
            emitted: 0,
            error: None,
        }
    }

    /// Bytes consumed so far.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn emitted_calls(&self) -> usize {
        self.emitted
    }

    pub fn error(&self) -> Option<&StreamError> {
        self.error.as_ref()
    }

    /// Consumes one chunk. Chunks may split characters, strings or tokens at
    /// any byte. Once an error has been reported, every further call returns
    /// only that error.
    pub fn feed(&mut self, chunk: &[u8]) -> Vec<ParserEvent> {
        if let Some(e) = &self.error {
            return vec![e.clone().into()];
        }
        let mut events = Vec::new();
        for &byte in chunk {
            let pos = self.offset;
            self.offset += 1;
            if let Err(e) = self.step(byte, pos, &mut events) {
                self.error = Some(e.clone());
                events.push(e.into());
                break;
            }
        }
        events
    }

    /// Ends the stream: flushes the trailing text run, or reports an error if
    /// the input stopped inside a tool-call object. A stream that already
    /// reported an error yields nothing further.
    pub fn finish(mut self) -> Vec<ParserEvent> {
        if self.error.is_some() {
            return Vec::new();
        }
        if self.in_object {
            return vec![StreamError::new(self.offset, "input ended inside a tool call object").into()];
        }
        let mut events = Vec::new();
        if let Err(e) = self.flush_text(&mut events) {
            events.push(e.into());
        }
        events
    }

    fn step(&mut self, b: u8, pos: usize, events: &mut Vec<ParserEvent>) -> Result<(), StreamError> {
        if !self.in_object {
            match b {
                b'{' => {
                    self.flush_text(events)?;
                    self.in_object = true;
                    self.object.clear();
                    self.object.push(b);
                    self.object_start = pos;
                    self.stack.clear();
                    self.stack.push(b'{');
                    self.in_string = false;
                    self.escape = Escape::None;
                }
                b'}' => {
                    self.flush_text(events)?;
                    return Err(StreamError::new(pos, "unbalanced '}' outside a tool call"));
                }
                _ => {
                    if self.text.is_empty() {
                        self.text_start = pos;
                    }
                    self.text.push(b);
                }
            }
            return Ok(());
        }

        self.object.push(b);
        if self.in_string {
            match self.escape {
                Escape::Pending => match b {
                    b'"' | b'\\' | b'/' | b'b' | b'f' | b'n' | b'r' | b't' => self.escape = Escape::None,
                    b'u' => self.escape = Escape::Unicode(4),
                    _ => return Err(StreamError::new(pos, format!("invalid escape '\\{}'", b as char))),
                },
                Escape::Unicode(left) => {
                    if !b.is_ascii_hexdigit() {
                        return Err(StreamError::new(pos, "invalid \\u escape"));
                    }
                    self.escape = if left == 1 { Escape::None } else { Escape::Unicode(left - 1) };
                }
                Escape::None => match b {
                    b'\\' => self.escape = Escape::Pending,
                    b'"' => self.in_string = false,
                    0x00..=0x1f => return Err(StreamError::new(pos, "control character inside string")),
                    _ => {}
                },
            }
            return Ok(());
        }

        match b {
            b'"' => self.in_string = true,
            b'{' | b'[' => self.stack.push(b),
            b'}' | b']' => {
                let open = if b == b'}' { b'{' } else { b'[' };
                if self.stack.pop() != Some(open) {
                    return Err(StreamError::new(pos, format!("mismatched '{}'", b as char)));
                }
                if self.stack.is_empty() {
                    let call = self.complete_object()?;
                    events.push(ParserEvent::ToolCallComplete { call });
                    self.in_object = false;
                    self.object.clear();
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn complete_object(&mut self) -> Result<ToolCall, StreamError> {
        let value: Value = serde_json::from_slice(&self.object)
            .map_err(|e| StreamError::new(self.object_start, format!("malformed tool call: {e}")))?;
        let call = tool_call_from_value(value, self.emitted)
            .map_err(|msg| StreamError::new(self.object_start, msg))?;
        self.emitted += 1;
        Ok(call)
    }

    fn flush_text(&mut self, events: &mut Vec<ParserEvent>) -> Result<(), StreamError> {
        if self.text.is_empty() {
            return Ok(());
        }
        let bytes = std::mem::take(&mut self.text);
        match String::from_utf8(bytes) {
            Ok(text) => {
                events.push(ParserEvent::TextDelta { text });
                Ok(())
            }
            Err(e) => Err(StreamError::new(
                self.text_start + e.utf8_error().valid_up_to(),
                "invalid UTF-8 in text",
            )),
        }
    }
}

/// Batch parse of a complete response into the full event sequence.
///
/// Stops at the first error, which is the last event returned.
pub fn parse_events_complete(text: &str) -> Vec<ParserEvent> {
    let bytes = text.as_bytes();
    let mut events = Vec::new();
    let mut run_start = 0;
    let mut i = 0;
    let mut index = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => {
                if run_start < i {
                    events.push(ParserEvent::TextDelta {
                        text: text[run_start..i].to_string(),
                    });
                }
                let mut values = serde_json::Deserializer::from_slice(&bytes[i..]).into_iter::<Value>();
                match values.next() {
                    Some(Ok(value)) => {
                        let end = i + values.byte_offset();
                        match tool_call_from_value(value, index) {
                            Ok(call) => events.push(ParserEvent::ToolCallComplete { call }),
                            Err(msg) => {
                                events.push(StreamError::new(i, msg).into());
                                return events;
                            }
                        }
                        index += 1;
                        i = end;
                        run_start = end;
                    }
                    Some(Err(e)) if e.is_eof() => {
                        events.push(StreamError::new(bytes.len(), "input ended inside a tool call object").into());
                        return events;
                    }
                    Some(Err(e)) => {
                        events.push(StreamError::new(i, format!("malformed tool call: {e}")).into());
                        return events;
                    }
                    None => unreachable!("slice starts with '{{'"),
                }
            }
            b'}' => {
                if run_start < i {
                    events.push(ParserEvent::TextDelta {
                        text: text[run_start..i].to_string(),
                    });
                }
                events.push(StreamError::new(i, "unbalanced '}' outside a tool call").into());
                return events;
            }
            _ => i += 1,
        }
    }
    if run_start < bytes.len() {
        events.push(ParserEvent::TextDelta {
            text: text[run_start..].to_string(),
        });
    }
    events
}

/// All tool calls in a complete response, or the first error.
pub fn parse_complete(text: &str) -> Result<Vec<ToolCall>, StreamError> {
    let mut calls = Vec::new();
    for event in parse_events_complete(text) {
        match event {
            ParserEvent::ToolCallComplete { call } => calls.push(call),
            ParserEvent::TextDelta { .. } => {}
            ParserEvent::ParseError { position, description } => {
                return Err(StreamError { position, description })
            }
        }
    }
    Ok(calls)
}

/// Feeds every chunk then finishes; convenience for callers holding chunks.
/// Stops at the first error, which is then the last event.
pub fn parse_chunks<'a>(chunks: impl IntoIterator<Item = &'a [u8]>) -> Vec<ParserEvent> {
    let mut parser = StreamParser::new();
    let mut events = Vec::new();
    for chunk in chunks {
        events.extend(parser.feed(chunk));
        if parser.error().is_some() {
            return events;
        }
    }
    events.extend(parser.finish());
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn calls(events: &[ParserEvent]) -> Vec<ToolCall> {
        events
            .iter()
            .filter_map(|e| match e {
                ParserEvent::ToolCallComplete { call } => Some(call.clone()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn call_split_inside_tool_name_emits_on_second_feed() {
        let chunks = [
            "{\"tool\":\"location_to",
            "ol\",\"arguments\":{\"place\":\"Naples\"}}",
        ];
        let mut p = StreamParser::new();
        assert!(p.feed(chunks[0].as_bytes()).is_empty());
        let second = p.feed(chunks[1].as_bytes());
        assert_eq!(second.len(), 1);
        let oracle = parse_complete(&chunks.concat()).unwrap();
        assert_eq!(calls(&second), oracle);
        assert_eq!(oracle[0].tool_name, "location_tool");
        assert_eq!(oracle[0].arguments["place"], json!("Naples"));
        assert!(p.finish().is_empty());
    }

    #[test]
    fn empty_input() {
        let mut p = StreamParser::new();
        assert!(p.feed(b"").is_empty());
        assert!(p.finish().is_empty());
    }

    #[test]
    fn unterminated_object_errors_at_end() {
        let mut p = StreamParser::new();
        let input = b"{\"tool\":\"x\"";
        assert!(p.feed(input).is_empty());
        assert_eq!(
            p.finish(),
            vec![ParserEvent::ParseError {
                position: input.len(),
                description: "input ended inside a tool call object".into()
            }]
        );
    }

    #[test]
    fn prose_flushes_once_at_finish() {
        let mut p = StreamParser::new();
        assert!(p.feed(b"hello ").is_empty());
        assert!(p.feed(b"world").is_empty());
        let tail = p.finish();
        assert_eq!(tail, parse_events_complete("hello world"));
        assert_eq!(tail, vec![ParserEvent::TextDelta { text: "hello world".into() }]);
        assert_eq!(parse_complete("hello world").unwrap(), vec![]);
    }

    #[test]
    fn two_calls_with_prose_and_nesting() {
        let text = r#"Sure. {"tool":"route_query","arguments":{"category":"criteria"}}
{"tool":"x","arguments":{"nested":{"a":[1,{"b":"}{"}],"c":null},"s":"q\"uote"}} done"#;
        let got = parse_complete(text).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].call_index, 0);
        assert_eq!(got[1].call_index, 1);
        assert_eq!(
            serde_json::Value::Object(got[1].arguments.clone()),
            json!({"nested":{"a":[1,{"b":"}{"}],"c":null},"s":"q\"uote"})
        );
        // argument key order is preserved as written
        let keys: Vec<_> = got[1].arguments.keys().cloned().collect();
        assert_eq!(keys, vec!["nested", "s"]);
        assert_eq!(parse_chunks([text.as_bytes()]), parse_events_complete(text));
    }

    #[test]
    fn multibyte_split_is_buffered() {
        let text = "café {\"tool\":\"t\",\"arguments\":{\"v\":\"日本\"}} ok";
        let bytes = text.as_bytes();
        // split inside 'é' and inside '日'
        let e = text.find('é').unwrap() + 1;
        let j = text.find('日').unwrap() + 2;
        let events = parse_chunks([&bytes[..e], &bytes[e..j], &bytes[j..]]);
        assert_eq!(events, parse_events_complete(text));
        assert_eq!(events[0], ParserEvent::TextDelta { text: "café ".into() });
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = r#"{"tool":"x","arguments":{},"extra":1}"#;
        let events = parse_chunks([text.as_bytes()]);
        assert!(matches!(&events[..], [ParserEvent::ParseError { position: 0, description }] if description.contains("extra")), "{events:?}");
        assert!(parse_complete(text).is_err());
    }

    #[test]
    fn non_object_arguments_rejected() {
        assert!(parse_complete(r#"{"tool":"x","arguments":[1]}"#).is_err());
        assert!(parse_complete(r#"{"tool":"","arguments":{}}"#).is_err());
        assert!(parse_complete(r#"{"tool":3,"arguments":{}}"#).is_err());
        assert!(parse_complete(r#"{"arguments":{}}"#).is_err());
    }

    #[test]
    fn invalid_escape_reported_at_exact_byte() {
        let text = r#"{"tool":"a\qb","arguments":{}}"#;
        let events = parse_chunks([text.as_bytes()]);
        let bad = text.find('q').unwrap();
        assert!(matches!(events.last(), Some(ParserEvent::ParseError { position, .. }) if *position == bad));
        assert!(parse_complete(text).is_err());
    }

    #[test]
    fn stray_close_brace_and_mismatch() {
        let events = parse_chunks([b"abc } def".as_slice()]);
        assert_eq!(
            events,
            vec![
                ParserEvent::TextDelta { text: "abc ".into() },
                ParserEvent::ParseError { position: 4, description: "unbalanced '}' outside a tool call".into() }
            ]
        );
        let events = parse_chunks([br#"{"tool":"x","arguments":{]"#.as_slice()]);
        assert!(matches!(events.last(), Some(ParserEvent::ParseError { .. })));
    }

    #[test]
    fn poisoned_state_repeats_error_only() {
        let mut p = StreamParser::new();
        let first = p.feed(b"x } y");
        assert_eq!(first.len(), 2);
        let again = p.feed(br#"{"tool":"ok","arguments":{}}"#);
        assert_eq!(again, first[1..]);
        assert_eq!(p.emitted_calls(), 0);
        assert!(p.finish().is_empty());
    }

    #[test]
    fn error_offsets_span_chunks() {
        let mut p = StreamParser::new();
        assert!(p.feed(b"0123").is_empty());
        let ev = p.feed(b"45}");
        assert_eq!(ev[0], ParserEvent::TextDelta { text: "012345".into() });
        assert_eq!(ev[1..], [ParserEvent::ParseError { position: 6, description: "unbalanced '}' outside a tool call".into() }]);
    }

    #[test]
    fn invalid_utf8_in_text() {
        let events = parse_chunks([b"ok \xff".as_slice()]);
        assert_eq!(events, vec![ParserEvent::ParseError { position: 3, description: "invalid UTF-8 in text".into() }]);
        // a truncated character at end of stream is also an error
        let events = parse_chunks([&"é".as_bytes()[..1]]);
        assert!(events[0].is_error());
    }

    #[test]
    fn event_serialization() {
        let e = ParserEvent::TextDelta { text: "hi".into() };
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"event":"text_delta","text":"hi"}"#);
    }
}
