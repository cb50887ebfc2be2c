//! Transcript files: one JSON object per line,
//!
//! ```text
//! {"fingerprint":"<sha256 hex>","request":{...},"response":{"content":"...","finish_reason":"stop","usage":{...}}}
//! ```
//!
//! `request` is optional and informational; when present its fingerprint must
//! match. Lookup during replay is by fingerprint only, never by position.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, ChatTransport, Fingerprint, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub fingerprint: Fingerprint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<ChatRequest>,
    pub response: ChatResponse,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn parse(source: impl BufRead) -> Result<Self, LlmError> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut offset = 0usize;
        let mut source = source;
        let mut line_no = 0usize;
        let mut line = String::new();
        loop {
            line.clear();
            let n = source.read_line(&mut line)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let start = offset;
            offset += n;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry =
                serde_json::from_str(line.trim_end()).map_err(|e| LlmError::CorruptTranscript {
                    line: line_no,
                    offset: start + e.column().saturating_sub(1),
                    reason: e.to_string(),
                })?;
            if let Some(req) = &entry.request {
                if req.fingerprint() != entry.fingerprint {
                    return Err(LlmError::CorruptTranscript {
                        line: line_no,
                        offset: start,
                        reason: "fingerprint does not match recorded request".into(),
                    });
                }
            }
            if !seen.insert(entry.fingerprint.clone()) {
                return Err(LlmError::CorruptTranscript {
                    line: line_no,
                    offset: start,
                    reason: format!("duplicate fingerprint {}", entry.fingerprint),
                });
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Serves recorded responses by request fingerprint. Read-only, so freely
/// shared across threads.
pub struct ReplayTransport {
    responses: HashMap<Fingerprint, ChatResponse>,
}

impl ReplayTransport {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            responses: transcript
                .entries
                .into_iter()
                .map(|e| (e.fingerprint, e.response))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatTransport for ReplayTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let fp = request.fingerprint();
        self.responses.get(&fp).cloned().ok_or(LlmError::ReplayMiss(fp))
    }
}

pub fn replay_session(source: impl BufRead) -> Result<ReplayTransport, LlmError> {
    Ok(ReplayTransport::new(Transcript::parse(source)?))
}

/// Forwards to `inner` and appends each successful exchange to `sink`.
/// Retries happen inside `inner`, so an exchange is recorded once. A request
/// whose fingerprint was already recorded is not appended again.
pub struct RecordingTransport<T> {
    inner: T,
    sink: Mutex<RecordSink>,
}

struct RecordSink {
    writer: Box<dyn Write + Send>,
    recorded: HashSet<Fingerprint>,
}

pub fn record_session<T: ChatTransport>(inner: T, sink: impl Write + Send + 'static) -> RecordingTransport<T> {
    RecordingTransport {
        inner,
        sink: Mutex::new(RecordSink {
            writer: Box::new(sink),
            recorded: HashSet::new(),
        }),
    }
}

impl<T: ChatTransport> ChatTransport for RecordingTransport<T> {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.send(request)?;
        let fingerprint = request.fingerprint();
        let mut sink = self.sink.lock().expect("record sink poisoned");
        if sink.recorded.insert(fingerprint.clone()) {
            let entry = TranscriptEntry {
                fingerprint,
                request: Some(request.clone()),
                response: response.clone(),
            };
            let line = serde_json::to_string(&entry).expect("entry serializes");
            writeln!(sink.writer, "{line}")?;
            sink.writer.flush()?;
        }
        Ok(response)
    }
}
