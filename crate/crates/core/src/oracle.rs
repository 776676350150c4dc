//! Black-box posterior access. Attacks only see the target through a
//! [`PosteriorOracle`], served either in-process or over newline-delimited
//! JSON on TCP or stdio.
//!
//! Wire protocol, one JSON object per line:
//!
//! ```text
//! -> {"op":"meta"}                <- {"ok":true,"num_classes":2,"node_count":10}
//! -> {"op":"query","node":3}      <- {"ok":true,"posteriors":[0.8,0.2]}
//! -> not json                     <- {"ok":false,"error":"parse"}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::OracleError;
use crate::features::Posteriors;
use crate::graph::NodeId;
use crate::models::{topk_truncate, NodeClassifier};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleMeta {
    pub num_classes: usize,
    pub node_count: usize,
}

/// Query access to a target model's posteriors.
pub trait PosteriorOracle: Send + Sync {
    fn meta(&self) -> Result<OracleMeta, OracleError>;
    fn query(&self, node: NodeId) -> Result<Posteriors, OracleError>;
    /// Queries issued so far, failed ones included.
    fn query_count(&self) -> u64;
}

/// Error codes carried in `{"ok":false,"error":...}` responses.
pub mod codes {
    pub const PARSE: &str = "parse";
    pub const BAD_REQUEST: &str = "bad_request";
    pub const UNKNOWN_OP: &str = "unknown_op";
    pub const UNKNOWN_NODE: &str = "unknown_node";
}

/// In-process oracle over a fixed posterior table, with optional top-k
/// truncation and an optional append-only query log.
pub struct LocalOracle {
    posteriors: Matrix,
    defense_k: Option<usize>,
    counter: AtomicU64,
    log: Option<Mutex<BufWriter<File>>>,
}

impl LocalOracle {
    /// Evaluates `model` once; the table is immutable afterwards.
    pub fn new(model: &dyn NodeClassifier) -> Self {
        Self::from_posteriors(model.posteriors())
    }

    pub fn from_posteriors(posteriors: Matrix) -> Self {
        Self {
            posteriors,
            defense_k: None,
            counter: AtomicU64::new(0),
            log: None,
        }
    }

    /// Releases only the `k` largest posteriors of every answer.
    pub fn with_defense(mut self, k: Option<usize>) -> Result<Self, OracleError> {
        if let Some(k) = k {
            if k == 0 || k > self.posteriors.cols() {
                return Err(OracleError::Rejected(format!(
                    "defense k={k} outside [1, {}]",
                    self.posteriors.cols()
                )));
            }
        }
        self.defense_k = k;
        Ok(self)
    }

    /// Appends one JSON line per query to `path`.
    pub fn with_query_log(mut self, path: &Path) -> Result<Self, OracleError> {
        let file = File::options().create(true).append(true).open(path)?;
        self.log = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn defense_k(&self) -> Option<usize> {
        self.defense_k
    }

    fn record(&self, node: NodeId, ok: bool) {
        if let Some(log) = &self.log {
            let mut w = log.lock().expect("query log poisoned");
            if let Err(e) =
                writeln!(w, "{}", json!({ "node": node, "ok": ok })).and_then(|_| w.flush())
            {
                log::warn!("query log write failed: {e}");
            }
        }
    }
}

impl PosteriorOracle for LocalOracle {
    fn meta(&self) -> Result<OracleMeta, OracleError> {
        Ok(OracleMeta {
            num_classes: self.posteriors.cols(),
            node_count: self.posteriors.rows(),
        })
    }

    fn query(&self, node: NodeId) -> Result<Posteriors, OracleError> {
        self.counter.fetch_add(1, Ordering::SeqCst);
        if node >= self.posteriors.rows() {
            self.record(node, false);
            return Err(OracleError::Rejected(codes::UNKNOWN_NODE.into()));
        }
        self.record(node, true);
        let row = self.posteriors.row(node);
        Ok(Posteriors(match self.defense_k {
            Some(k) => topk_truncate(row, k),
            None => row.to_vec(),
        }))
    }

    fn query_count(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }
}

// Responses are formatted by hand so fields keep the documented order.
fn error_line(code: &str) -> String {
    format!(r#"{{"ok":false,"error":{}}}"#, Value::from(code))
}

/// Answers one request line. Never fails: problems become error responses.
pub fn handle_line(oracle: &dyn PosteriorOracle, line: &str) -> String {
    let req: Value = match serde_json::from_str(line.trim()) {
        Ok(v) => v,
        Err(_) => return error_line(codes::PARSE),
    };
    match req.get("op").and_then(Value::as_str) {
        Some("meta") => match oracle.meta() {
            Ok(m) => format!(
                r#"{{"ok":true,"num_classes":{},"node_count":{}}}"#,
                m.num_classes, m.node_count
            ),
            Err(e) => error_line(&e.to_string()),
        },
        Some("query") => {
            let Some(node) = req.get("node").and_then(Value::as_u64) else {
                return error_line(codes::BAD_REQUEST);
            };
            match oracle.query(node as NodeId) {
                Ok(p) => format!(r#"{{"ok":true,"posteriors":{}}}"#, Value::from(p.0)),
                Err(OracleError::Rejected(code)) => error_line(&code),
                Err(e) => error_line(&e.to_string()),
            }
        }
        Some(_) => error_line(codes::UNKNOWN_OP),
        None => error_line(codes::BAD_REQUEST),
    }
}

/// Serves requests from `input` until EOF.
pub fn serve_lines<R: BufRead, W: Write>(
    oracle: &dyn PosteriorOracle,
    input: R,
    mut output: W,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", handle_line(oracle, &line))?;
        output.flush()?;
    }
    Ok(())
}

pub fn serve_stdio(oracle: &dyn PosteriorOracle) -> std::io::Result<()> {
    let stdin = std::io::stdin();
    serve_lines(oracle, stdin.lock(), std::io::stdout().lock())
}

/// Running TCP server. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting new connections and waits for the accept loop.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves each connection on its own thread.
pub fn serve_tcp(
    oracle: Arc<dyn PosteriorOracle>,
    addr: impl ToSocketAddrs,
) -> Result<ServerHandle, OracleError> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let accept_thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let oracle = Arc::clone(&oracle);
            std::thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                let reader = match stream.try_clone() {
                    Ok(s) => BufReader::new(s),
                    Err(e) => {
                        log::warn!("connection setup failed: {e}");
                        return;
                    }
                };
                if let Err(e) = serve_lines(oracle.as_ref(), reader, BufWriter::new(stream)) {
                    log::debug!("connection {peer:?} closed: {e}");
                }
            });
        }
    });
    Ok(ServerHandle {
        addr: local,
        stop,
        accept_thread: Some(accept_thread),
    })
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Client side of the TCP protocol.
pub struct RemoteOracle {
    conn: Mutex<Connection>,
    meta: OracleMeta,
    counter: AtomicU64,
}

impl RemoteOracle {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, OracleError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut conn = Connection {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        };
        let resp = Self::roundtrip(&mut conn, &json!({ "op": "meta" }))?;
        let field = |k: &str| {
            resp.get(k)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| OracleError::Protocol(format!("meta response lacks {k}")))
        };
        let meta = OracleMeta {
            num_classes: field("num_classes")?,
            node_count: field("node_count")?,
        };
        Ok(Self {
            conn: Mutex::new(conn),
            meta,
            counter: AtomicU64::new(0),
        })
    }

    /// Accepts `tcp://host:port` or plain `host:port`.
    pub fn connect_url(url: &str) -> Result<Self, OracleError> {
        Self::connect(url.strip_prefix("tcp://").unwrap_or(url))
    }

    fn roundtrip(conn: &mut Connection, req: &Value) -> Result<Value, OracleError> {
        writeln!(conn.writer, "{req}")?;
        conn.writer.flush()?;
        let mut line = String::new();
        if conn.reader.read_line(&mut line)? == 0 {
            return Err(OracleError::Protocol("connection closed".into()));
        }
        let resp: Value =
            serde_json::from_str(&line).map_err(|e| OracleError::Protocol(e.to_string()))?;
        match resp.get("ok").and_then(Value::as_bool) {
            Some(true) => Ok(resp),
            Some(false) => Err(OracleError::Rejected(
                resp.get("error")
                    .and_then(Value::as_str)
                    .unwrap_or("unspecified")
                    .to_string(),
            )),
            None => Err(OracleError::Protocol("response lacks \"ok\"".into())),
        }
    }
}

impl PosteriorOracle for RemoteOracle {
    fn meta(&self) -> Result<OracleMeta, OracleError> {
        Ok(self.meta)
    }

    fn query(&self, node: NodeId) -> Result<Posteriors, OracleError> {
        self.counter.fetch_add(1, Ordering::SeqCst);
        let mut conn = self.conn.lock().expect("oracle connection poisoned");
        let resp = Self::roundtrip(&mut conn, &json!({ "op": "query", "node": node }))?;
        let probs = resp
            .get("posteriors")
            .and_then(Value::as_array)
            .ok_or_else(|| OracleError::Protocol("response lacks posteriors".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| OracleError::Protocol("non-numeric posterior".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Posteriors(probs))
    }

    fn query_count(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }
}

/// Posterior table for `nodes`, one row per node id of the target graph;
/// rows of nodes never queried stay zero. Each distinct node is queried once.
pub fn collect_posteriors(
    oracle: &dyn PosteriorOracle,
    nodes: impl IntoIterator<Item = NodeId>,
) -> Result<Matrix, OracleError> {
    let meta = oracle.meta()?;
    let mut wanted: Vec<NodeId> = nodes.into_iter().collect();
    wanted.sort_unstable();
    wanted.dedup();
    let mut out = Matrix::zeros(meta.node_count, meta.num_classes);
    for node in wanted {
        if node >= meta.node_count {
            return Err(OracleError::Rejected(codes::UNKNOWN_NODE.into()));
        }
        let p = oracle.query(node)?;
        if p.0.len() != meta.num_classes {
            return Err(OracleError::Protocol(format!(
                "node {node}: {} posteriors, expected {}",
                p.0.len(),
                meta.num_classes
            )));
        }
        out.row_mut(node).copy_from_slice(&p.0);
    }
    Ok(out)
}
