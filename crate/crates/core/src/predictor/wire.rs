//! Line-delimited JSON protocol for out-of-process predictors.
//!
//! ```text
//! -> {"op":"hello","version":1}
//! <- {"op":"hello","version":1,"max_context":1024}
//! -> {"op":"predict","id":0,"train_x":[[..]],"train_y":[..],"inference_x":[[..]]}
//! <- {"op":"result","id":0,"proba":[..]}      or {"op":"error","id":0,"message":".."}
//! ```
//!
//! Requests are serialized per session. A session is either a child process
//! ([`ExternalBackend::spawn`]) or any pair of byte streams ([`StreamTransport`]).

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Backend;
use crate::data::Dataset;
use crate::error::{contract, Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_MAX_CONTEXT: usize = 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Message {
    Hello {
        version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_context: Option<usize>,
    },
    Predict {
        id: u64,
        train_x: Vec<Vec<f64>>,
        train_y: Vec<u8>,
        inference_x: Vec<Vec<f64>>,
    },
    Result {
        id: u64,
        proba: Vec<f64>,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
}

impl Message {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn to_rows(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// A bidirectional line channel.
pub trait LineTransport: Send {
    /// Writes one line; `line` must not contain a newline.
    fn send(&mut self, line: &str) -> Result<()>;
    fn recv(&mut self) -> Result<String>;
}

impl<T: LineTransport + ?Sized> LineTransport for Box<T> {
    fn send(&mut self, line: &str) -> Result<()> {
        (**self).send(line)
    }

    fn recv(&mut self) -> Result<String> {
        (**self).recv()
    }
}

/// Transport over arbitrary byte streams without timeouts.
pub struct StreamTransport<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead + Send, W: Write + Send> StreamTransport<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }

    pub fn into_parts(self) -> (R, W) {
        (self.reader, self.writer)
    }
}

impl<R: BufRead + Send, W: Write + Send> LineTransport for StreamTransport<R, W> {
    fn send(&mut self, line: &str) -> Result<()> {
        writeln!(self.writer, "{line}").map_err(|e| Error::Transport(e.to_string()))?;
        self.writer.flush().map_err(|e| Error::Transport(e.to_string()))
    }

    fn recv(&mut self) -> Result<String> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).map_err(|e| Error::Transport(e.to_string()))?;
        if n == 0 {
            return Err(Error::Transport("peer closed the stream".into()));
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }
}

/// Transport to a child process's stdin/stdout with a per-response timeout.
pub struct ChildTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ChildTransport {
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self> {
        let (program, args) = argv.split_first().ok_or_else(|| Error::Config("empty external command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("cannot start '{program}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines: rx, timeout })
    }
}

impl LineTransport for ChildTransport {
    fn send(&mut self, line: &str) -> Result<()> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Transport(format!("write to predictor failed: {e}")))
    }

    fn recv(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Transport(format!("read from predictor failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Transport(format!("no response within {:?}", self.timeout))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Transport("predictor process closed its output".into())),
        }
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Client half of the protocol.
pub struct WireClient<T> {
    transport: T,
    next_id: u64,
    max_context: usize,
}

impl<T: LineTransport> WireClient<T> {
    /// Performs the hello exchange.
    pub fn connect(mut transport: T) -> Result<Self> {
        transport.send(&Message::Hello { version: PROTOCOL_VERSION, max_context: None }.to_line()?)?;
        let reply = transport.recv()?;
        match serde_json::from_str::<Message>(&reply) {
            Ok(Message::Hello { version: PROTOCOL_VERSION, max_context }) => {
                Ok(Self { transport, next_id: 0, max_context: max_context.unwrap_or(DEFAULT_MAX_CONTEXT) })
            }
            Ok(Message::Hello { version, .. }) => {
                Err(Error::Transport(format!("unsupported protocol version {version}")))
            }
            _ => Err(Error::Transport(format!("bad handshake reply: {reply}"))),
        }
    }

    pub fn max_context(&self) -> usize {
        self.max_context
    }

    pub fn predict(&mut self, train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if train.n_rows() > self.max_context {
            return Err(contract(format!(
                "context of {} rows exceeds the predictor limit of {}",
                train.n_rows(),
                self.max_context
            )));
        }
        let id = self.next_id;
        self.next_id += 1;
        let request = Message::Predict {
            id,
            train_x: to_rows(train.features()),
            train_y: train.labels().to_vec(),
            inference_x: to_rows(inference),
        };
        self.transport.send(&request.to_line()?)?;
        let reply = self.transport.recv()?;
        let message: Message =
            serde_json::from_str(&reply).map_err(|e| Error::Transport(format!("malformed response ({e}): {reply}")))?;
        match message {
            Message::Result { id: rid, proba } if rid == id => {
                if proba.len() != inference.nrows() {
                    return Err(Error::Transport(format!(
                        "response {id} has {} probabilities for {} rows",
                        proba.len(),
                        inference.nrows()
                    )));
                }
                if proba.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Transport(format!("response {id} has values outside [0,1]")));
                }
                Ok(proba)
            }
            Message::Result { id: rid, .. } => {
                Err(Error::Transport(format!("response id {rid} does not match request {id}")))
            }
            Message::Error { message, .. } => Err(Error::Transport(format!("predictor error: {message}"))),
            other => Err(Error::Transport(format!("unexpected message {other:?}"))),
        }
    }

    pub fn into_transport(self) -> T {
        self.transport
    }
}

/// A backend living in another process (or behind any [`LineTransport`]).
pub struct ExternalBackend {
    client: Mutex<WireClient<Box<dyn LineTransport>>>,
    name: String,
}

impl ExternalBackend {
    pub fn spawn(argv: &[String]) -> Result<Self> {
        Self::spawn_with_timeout(argv, DEFAULT_TIMEOUT)
    }

    pub fn spawn_with_timeout(argv: &[String], timeout: Duration) -> Result<Self> {
        let transport = ChildTransport::spawn(argv, timeout)?;
        let mut backend = Self::connect(Box::new(transport))?;
        backend.name = format!("external:{}", argv.join(" "));
        Ok(backend)
    }

    pub fn connect(transport: Box<dyn LineTransport>) -> Result<Self> {
        Ok(Self { client: Mutex::new(WireClient::connect(transport)?), name: "external".into() })
    }

    pub fn max_context(&self) -> usize {
        self.client.lock().expect("client lock").max_context()
    }
}

impl Backend for ExternalBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.client
            .lock()
            .map_err(|_| Error::Transport("client poisoned by an earlier panic".into()))?
            .predict(train, inference)
    }
}

/// Serves `backend` over the protocol until `input` reaches end of stream.
/// Malformed requests and backend failures produce error messages and the
/// loop continues.
pub fn serve(backend: &dyn Backend, input: impl BufRead, mut output: impl Write, max_context: usize) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Message>(&line) {
            Ok(Message::Hello { .. }) => Message::Hello { version: PROTOCOL_VERSION, max_context: Some(max_context) },
            Ok(Message::Predict { id, train_x, train_y, inference_x }) => {
                match answer(backend, train_x, train_y, inference_x, max_context) {
                    Ok(proba) => Message::Result { id, proba },
                    Err(e) => Message::Error { id: Some(id), message: e.to_string() },
                }
            }
            Ok(other) => Message::Error { id: None, message: format!("unexpected op in {other:?}") },
            Err(e) => Message::Error { id: None, message: format!("malformed request: {e}") },
        };
        writeln!(output, "{}", reply.to_line()?)?;
        output.flush()?;
    }
    Ok(())
}

fn answer(
    backend: &dyn Backend,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<u8>,
    inference_x: Vec<Vec<f64>>,
    max_context: usize,
) -> Result<Vec<f64>> {
    if train_y.len() > max_context {
        return Err(contract(format!("context of {} rows exceeds {max_context}", train_y.len())));
    }
    if train_y.is_empty() {
        return Err(Error::EmptyContext);
    }
    let p = train_x.first().map_or(0, Vec::len);
    let train = Dataset::from_parts(matrix(train_x, p)?, train_y)?;
    let inference = matrix(inference_x, p)?;
    if inference.nrows() == 0 {
        return Ok(Vec::new());
    }
    backend.predict(&train, inference.view())
}

fn matrix(rows: Vec<Vec<f64>>, p: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(contract("ragged feature rows"));
    }
    Array2::from_shape_vec((n, p), rows.into_iter().flatten().collect()).map_err(|e| contract(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{Predictor, ReferenceBackend};
    use ndarray::array;
    use std::io::Cursor;

    fn serve_in_thread(
        backend: ReferenceBackend,
        max_context: usize,
    ) -> (StreamTransport<BufReader<std::io::PipeReader>, std::io::PipeWriter>, std::thread::JoinHandle<()>) {
        let (req_r, req_w) = std::io::pipe().unwrap();
        let (resp_r, resp_w) = std::io::pipe().unwrap();
        let handle = std::thread::spawn(move || {
            serve(&backend, BufReader::new(req_r), resp_w, max_context).unwrap();
        });
        (StreamTransport::new(BufReader::new(resp_r), req_w), handle)
    }

    #[test]
    fn message_shapes() {
        let hello = Message::Hello { version: 1, max_context: None }.to_line().unwrap();
        assert_eq!(hello, r#"{"op":"hello","version":1}"#);
        let req = Message::Predict {
            id: 3,
            train_x: vec![vec![0.5, -1.0]],
            train_y: vec![1],
            inference_x: vec![vec![0.1, 0.2]],
        };
        assert_eq!(
            req.to_line().unwrap(),
            r#"{"op":"predict","id":3,"train_x":[[0.5,-1.0]],"train_y":[1],"inference_x":[[0.1,0.2]]}"#
        );
        let parsed: Message = serde_json::from_str(r#"{"op":"error","id":2,"message":"x"}"#).unwrap();
        assert_eq!(parsed, Message::Error { id: Some(2), message: "x".into() });
    }

    #[test]
    fn full_precision_round_trip() {
        let v = 0.1 + 0.2;
        let line = Message::Result { id: 0, proba: vec![v, 1.0 / 3.0] }.to_line().unwrap();
        match serde_json::from_str::<Message>(&line).unwrap() {
            Message::Result { proba, .. } => assert_eq!(proba, vec![v, 1.0 / 3.0]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn served_reference_matches_local() {
        let (transport, handle) = serve_in_thread(ReferenceBackend::default(), 1024);
        let external = ExternalBackend::connect(Box::new(transport)).unwrap();
        assert_eq!(external.max_context(), 1024);
        let remote = Predictor::new(external);
        let local = Predictor::reference(1.0).unwrap();
        let train = Dataset::from_parts(array![[0.0, 1.0], [1.0, 0.3], [-0.4, 0.2]], vec![1, 0, 1]).unwrap();
        let q = array![[0.1, 0.1], [1.0 / 3.0, -2.0]];
        assert_eq!(&*remote.predict(&train, q.view()).unwrap(), &*local.predict(&train, q.view()).unwrap());
        assert_eq!(remote.ledger().snapshot(), local.ledger().snapshot());
        drop(remote);
        handle.join().unwrap();
    }

    #[test]
    fn oversize_context_is_rejected_client_side() {
        let (transport, _handle) = serve_in_thread(ReferenceBackend::default(), 2);
        let mut client = WireClient::connect(transport).unwrap();
        let train = Dataset::from_parts(array![[0.0], [1.0], [2.0]], vec![1, 0, 1]).unwrap();
        assert!(matches!(client.predict(&train, array![[0.0]].view()), Err(Error::Contract(_))));
    }

    #[test]
    fn server_recovers_from_malformed_json() {
        let input = "not json\n{\"op\":\"hello\",\"version\":1}\n";
        let mut out = Vec::new();
        serve(&ReferenceBackend::default(), Cursor::new(input), &mut out, 4).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with(r#"{"op":"error""#));
        assert_eq!(lines[1], r#"{"op":"hello","version":1,"max_context":4}"#);
    }

    #[test]
    fn server_rejects_oversize_context_with_id() {
        let input = r#"{"op":"predict","id":9,"train_x":[[0.0],[1.0]],"train_y":[0,1],"inference_x":[[0.5]]}"#;
        let mut out = Vec::new();
        serve(&ReferenceBackend::default(), Cursor::new(input), &mut out, 1).unwrap();
        let reply: Message = serde_json::from_slice(&out).unwrap();
        assert!(matches!(reply, Message::Error { id: Some(9), .. }));
    }

    #[test]
    fn mismatched_id_is_transport_error() {
        let replies = concat!(
            r#"{"op":"hello","version":1,"max_context":8}"#,
            "\n",
            r#"{"op":"result","id":5,"proba":[0.5]}"#,
            "\n"
        );
        let transport = StreamTransport::new(Cursor::new(replies), Vec::new());
        let mut client = WireClient::connect(transport).unwrap();
        let train = Dataset::from_parts(array![[0.0]], vec![1]).unwrap();
        assert!(matches!(client.predict(&train, array![[0.0]].view()), Err(Error::Transport(_))));
    }

    #[test]
    fn wrong_version_fails_handshake() {
        let transport = StreamTransport::new(Cursor::new("{\"op\":\"hello\",\"version\":2}\n"), Vec::new());
        assert!(matches!(WireClient::connect(transport), Err(Error::Transport(_))));
    }
}
