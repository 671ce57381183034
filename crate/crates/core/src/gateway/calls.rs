use std::collections::VecDeque;

use futures::stream::{self, BoxStream, StreamExt};
use thiserror::Error;

use super::{ChunkStream, GatewayError};
use crate::domain::ToolCall;
use crate::stream_parser::{ParserEvent, StreamError, StreamParser};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallStreamError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("malformed model output at byte {}: {}", .0.position, .0.description)]
    Parse(StreamError),
}

pub type ToolCallStream = BoxStream<'static, Result<ToolCall, CallStreamError>>;

struct State {
    chunks: Option<ChunkStream>,
    parser: Option<StreamParser>,
    queue: VecDeque<Result<ToolCall, CallStreamError>>,
}

impl State {
    fn absorb(&mut self, events: Vec<ParserEvent>) {
        for ev in events {
            match ev {
                ParserEvent::ToolCallComplete { call } => self.queue.push_back(Ok(call)),
                ParserEvent::ParseError { position, description } => {
                    self.queue.push_back(Err(CallStreamError::Parse(StreamError { position, description })));
                    self.chunks = None;
                    return;
                }
                ParserEvent::TextDelta { .. } => {}
            }
        }
    }

    fn finish_parser(&mut self) {
        if let Some(p) = self.parser.take() {
            let events = p.finish();
            self.absorb(events);
        }
        self.chunks = None;
    }
}

/// Parses a chunk stream into tool calls, yielding each call as soon as the
/// chunk that closes it arrives. Prose between calls is dropped. The stream
/// ends after the first error.
pub fn tool_calls(chunks: ChunkStream) -> ToolCallStream {
    let state = State { chunks: Some(chunks), parser: Some(StreamParser::new()), queue: VecDeque::new() };
    stream::unfold(state, |mut st| async move {
        loop {
            if let Some(item) = st.queue.pop_front() {
                return Some((item, st));
            }
            let chunks = st.chunks.as_mut()?;
            match chunks.next().await {
                Some(Ok(chunk)) => {
                    let events = st.parser.as_mut().map(|p| p.feed(chunk.delta.as_bytes())).unwrap_or_default();
                    st.absorb(events);
                    if chunk.finished && st.chunks.is_some() {
                        st.finish_parser();
                    }
                }
                Some(Err(e)) => {
                    st.queue.push_back(Err(e.into()));
                    st.chunks = None;
                }
                None => st.finish_parser(),
            }
        }
    })
    .boxed()
}
