//! In-process stub inference server speaking the completion-with-echoed-
//! logprobs contract. Token log-probabilities follow a fixed rule
//! (`-0.5 * char_count`, first token null), so tests can hand-compute
//! expected sums and full runs stay deterministic.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

pub const STUB_LOGPROB_PER_CHAR: f64 = -0.5;

/// A background completion endpoint bound to an ephemeral localhost port.
pub struct StubServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start() -> std::io::Result<Self> {
        Self::start_inner(true)
    }

    /// A stub that never echoes log-probabilities, for exercising the
    /// capability error path.
    pub fn start_without_logprobs() -> std::io::Result<Self> {
        Self::start_inner(false)
    }

    fn start_inner(logprobs: bool) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let _ = handle_connection(stream, logprobs);
                }
            }
        });
        Ok(Self {
            addr,
            shutdown,
            handle: Some(handle),
        })
    }

    /// Endpoint URL to hand to an inference client.
    pub fn url(&self) -> String {
        format!("http://{}/v1/completions", self.addr)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(stream: TcpStream, logprobs_capable: bool) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let mut stream = reader.into_inner();

    let request: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(_) => return respond(&mut stream, 400, &json!({"error": "invalid JSON body"})),
    };
    let Some(prompt) = request.get("prompt").and_then(Value::as_str) else {
        return respond(&mut stream, 400, &json!({"error": "missing \"prompt\""}));
    };
    let echo = request.get("echo").and_then(Value::as_bool).unwrap_or(false);
    let want_logprobs = match request.get("logprobs") {
        Some(Value::Bool(b)) => *b,
        Some(Value::Number(n)) => n.as_u64().unwrap_or(0) > 0,
        _ => false,
    };

    let mut choice = json!({
        "text": if echo { prompt } else { "" },
        "index": 0,
        "finish_reason": "length",
    });
    if echo && want_logprobs && logprobs_capable {
        let pieces = stub_tokenize(prompt);
        let tokens: Vec<&str> = pieces.iter().map(|&(_, t)| t).collect();
        let offsets: Vec<usize> = pieces.iter().map(|&(o, _)| o).collect();
        let logprobs: Vec<Value> = pieces
            .iter()
            .enumerate()
            .map(|(i, &(_, t))| {
                if i == 0 {
                    Value::Null
                } else {
                    json!(STUB_LOGPROB_PER_CHAR * t.chars().count() as f64)
                }
            })
            .collect();
        choice["logprobs"] = json!({
            "tokens": tokens,
            "text_offset": offsets,
            "token_logprobs": logprobs,
        });
    }
    let model = request
        .get("model")
        .and_then(Value::as_str)
        .unwrap_or("stub");
    respond(
        &mut stream,
        200,
        &json!({"model": model, "choices": [choice]}),
    )
}

fn respond(stream: &mut TcpStream, status: u16, body: &Value) -> std::io::Result<()> {
    let payload = serde_json::to_vec(body)?;
    let reason = if status == 200 { "OK" } else { "Bad Request" };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    )?;
    stream.write_all(&payload)?;
    stream.flush()
}

/// Byte-offset tokenization: a word takes one preceding space when present;
/// other whitespace stands alone. Offsets partition the prompt exactly.
pub fn stub_tokenize(text: &str) -> Vec<(usize, &str)> {
    let bytes = text.as_bytes();
    let n = bytes.len();
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < n {
        let start = i;
        if bytes[i] == b' ' && i + 1 < n && !bytes[i + 1].is_ascii_whitespace() {
            i += 1;
            while i < n && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
        } else if bytes[i].is_ascii_whitespace() {
            while i < n && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            // Leave the final space to attach to a following word.
            if i < n && bytes[i - 1] == b' ' && i - start > 1 {
                i -= 1;
            }
        } else {
            while i < n && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
        }
        pieces.push((start, &text[start..i]));
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_partitions_text() {
        for text in ["Review: x Acceptability: good", "a  b", " lead", "tail ", "a\t\nb"] {
            let pieces = stub_tokenize(text);
            let mut rebuilt = String::new();
            let mut expected_offset = 0;
            for (offset, piece) in pieces {
                assert_eq!(offset, expected_offset);
                expected_offset += piece.len();
                rebuilt.push_str(piece);
            }
            assert_eq!(rebuilt, text);
        }
    }

    #[test]
    fn words_take_their_leading_space() {
        let pieces = stub_tokenize("ab cd");
        assert_eq!(pieces, vec![(0, "ab"), (2, " cd")]);
    }

    #[test]
    fn continuation_starts_a_new_token_at_the_boundary() {
        let prompt = "Review: x Acceptability:";
        let full = format!("{prompt} good");
        let pieces = stub_tokenize(&full);
        assert!(pieces.iter().any(|&(o, t)| o == prompt.len() && t == " good"));
    }
}
