//! Minimal server-sent-events decoder for chat-completion streams.

/// One dispatched event: the joined `data:` lines of a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SseEvent {
    pub data: String,
}

/// Incremental decoder; bytes may be split anywhere, including inside UTF-8
/// sequences and CRLF pairs.
#[derive(Debug, Default)]
pub struct SseDecoder {
    buf: Vec<u8>,
    data: Vec<String>,
}

impl SseDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<SseEvent>, std::str::Utf8Error> {
        self.buf.extend_from_slice(bytes);
        let mut events = Vec::new();
        while let Some(nl) = self.buf.iter().position(|&b| b == b'\n') {
            let mut line: Vec<u8> = self.buf.drain(..=nl).collect();
            line.pop();
            if line.last() == Some(&b'\r') {
                line.pop();
            }
            let line = std::str::from_utf8(&line)?;
            if line.is_empty() {
                if !self.data.is_empty() {
                    events.push(SseEvent { data: self.data.join("\n") });
                    self.data.clear();
                }
            } else if let Some(rest) = line.strip_prefix("data:") {
                self.data.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
            }
            // comments (":...") and other fields are ignored
        }
        Ok(events)
    }

    /// Dispatches a final unterminated block, if any.
    pub fn finish(&mut self) -> Option<SseEvent> {
        if !self.buf.is_empty() {
            let rest = std::mem::take(&mut self.buf);
            if let Ok(line) = std::str::from_utf8(&rest) {
                if let Some(d) = line.trim_end_matches('\r').strip_prefix("data:") {
                    self.data.push(d.strip_prefix(' ').unwrap_or(d).to_string());
                }
            }
        }
        if self.data.is_empty() {
            None
        } else {
            Some(SseEvent { data: std::mem::take(&mut self.data).join("\n") })
        }
    }
}
