//! Line-delimited JSON protocol (version 1) for external fit/predict
//! adapters running as child processes.
//!
//! Each request and response is one JSON object on one line. Matrices are
//! flat row-major arrays with explicit shapes:
//!
//! ```text
//! -> {"v":1,"op":"handshake","run_id":"r","model_id":"tabpfn"}
//! <- {"v":1,"status":"ok","capabilities":["regression","classification"]}
//! -> {"v":1,"op":"fit_predict","run_id":"r","task":"regression","fixed_params":{...},
//!     "n_rows":2,"n_cols":3,"x":[...],"y":[...],"q_rows":1,"q_cols":3,"q":[...]}
//! <- {"v":1,"status":"ok","predictions":[0.5]}
//! <- {"v":1,"status":"error","error":"message"}
//! -> {"v":1,"op":"shutdown","run_id":"r"}
//! <- {"v":1,"status":"ok"}
//! ```
//!
//! Classification targets and predictions are label ids; `n_classes` is
//! sent alongside them.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{Matrix, Target, Task};
use crate::error::{Error, Result};
use crate::models::Prediction;
use crate::search::ExternalBackend;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Handshake,
    FitPredict,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u64,
    pub op: Op,
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_params: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
}

impl Request {
    fn bare(op: Op, run_id: &str) -> Self {
        Request {
            v: PROTOCOL_VERSION,
            op,
            run_id: run_id.to_string(),
            model_id: None,
            task: None,
            fixed_params: None,
            n_classes: None,
            n_rows: None,
            n_cols: None,
            x: None,
            y: None,
            q_rows: None,
            q_cols: None,
            q: None,
        }
    }

    pub fn handshake(run_id: &str, model_id: &str) -> Self {
        Request {
            model_id: Some(model_id.to_string()),
            ..Self::bare(Op::Handshake, run_id)
        }
    }

    pub fn shutdown(run_id: &str) -> Self {
        Self::bare(Op::Shutdown, run_id)
    }

    pub fn fit_predict(
        run_id: &str,
        task: Task,
        x_cal: &Matrix,
        y_cal: &Target,
        x_query: &Matrix,
        fixed_params: &Value,
    ) -> Result<Self> {
        if x_cal.nrows() != y_cal.len() {
            return Err(Error::LengthMismatch(format!(
                "{} spectra, {} targets",
                x_cal.nrows(),
                y_cal.len()
            )));
        }
        if x_cal.ncols() != x_query.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x_cal.ncols(),
                got: x_query.ncols(),
            });
        }
        if x_cal.iter().chain(x_query.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Bridge("matrices sent to adapters must be finite".into()));
        }
        Ok(Request {
            task: Some(task),
            fixed_params: Some(fixed_params.clone()),
            n_classes: (task == Task::Classification).then(|| y_cal.n_classes()),
            n_rows: Some(x_cal.nrows()),
            n_cols: Some(x_cal.ncols()),
            x: Some(row_major(x_cal)),
            y: Some(y_cal.as_real()),
            q_rows: Some(x_query.nrows()),
            q_cols: Some(x_query.ncols()),
            q: Some(row_major(x_query)),
            ..Self::bare(Op::FitPredict, run_id)
        })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("requests serialize")
    }

    /// Calibration and query matrices rebuilt from the flat arrays.
    pub fn matrices(&self) -> Result<(Matrix, Matrix)> {
        let build = |rows: Option<usize>, cols: Option<usize>, data: &Option<Vec<f64>>, what: &str| {
            let (Some(r), Some(c), Some(d)) = (rows, cols, data) else {
                return Err(Error::Bridge(format!("request lacks {what} matrix")));
            };
            if d.len() != r * c {
                return Err(Error::Bridge(format!("{what}: {} values for shape {r}x{c}", d.len())));
            }
            Ok(Matrix::from_row_slice(r, c, d))
        };
        Ok((
            build(self.n_rows, self.n_cols, &self.x, "x")?,
            build(self.q_rows, self.q_cols, &self.q, "q")?,
        ))
    }
}

pub fn row_major(x: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.nrows() {
        out.extend(x.row(r).iter());
    }
    out
}

/// A parsed adapter response.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ok {
        predictions: Option<Vec<f64>>,
        capabilities: Option<Vec<String>>,
        diagnostics: Option<String>,
    },
    Error(String),
}

fn replace_non_finite_tokens(line: &str) -> String {
    let mut s = line.to_string();
    for tok in ["-Infinity", "Infinity", "NaN", "-inf", "inf", "nan"] {
        s = s.replace(tok, "null");
    }
    s
}

/// Parses one response line. Non-finite numbers (which are not valid JSON)
/// are reported as a protocol error rather than a parse failure.
pub fn parse_response(line: &str) -> Result<Response> {
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            return if serde_json::from_str::<Value>(&replace_non_finite_tokens(line)).is_ok() {
                Err(Error::Bridge("non-finite prediction".into()))
            } else {
                Err(Error::Bridge(format!("malformed response ({e}): {line}")))
            };
        }
    };
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Bridge(format!("response is not an object: {line}")))?;
    match obj.get("v") {
        Some(v) if v.as_u64() == Some(PROTOCOL_VERSION) => {}
        Some(v) => {
            return Err(Error::ProtocolVersion {
                expected: PROTOCOL_VERSION,
                got: v.to_string(),
            })
        }
        None => {
            return Err(Error::ProtocolVersion {
                expected: PROTOCOL_VERSION,
                got: "missing".into(),
            })
        }
    }
    let diagnostics = obj.get("diagnostics").map(|d| match d {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    });
    match obj.get("status").and_then(Value::as_str) {
        Some("ok") => {
            let predictions = match obj.get("predictions") {
                None | Some(Value::Null) => None,
                Some(Value::Array(a)) => Some(
                    a.iter()
                        .map(|v| match v {
                            Value::Number(n) => n.as_f64().filter(|f| f.is_finite()),
                            _ => None,
                        })
                        .collect::<Option<Vec<f64>>>()
                        .ok_or_else(|| Error::Bridge("non-finite prediction".into()))?,
                ),
                Some(_) => return Err(Error::Bridge("predictions must be an array".into())),
            };
            // adapters may name the supported task list either way
            let capabilities = obj
                .get("capabilities")
                .or_else(|| obj.get("tasks"))
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect());
            Ok(Response::Ok {
                predictions,
                capabilities,
                diagnostics,
            })
        }
        Some("error") => Ok(Response::Error(
            obj.get("error")
                .and_then(Value::as_str)
                .unwrap_or("unspecified adapter error")
                .to_string(),
        )),
        other => Err(Error::Bridge(format!("unknown response status {other:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeTimeouts {
    pub handshake: Duration,
    pub call: Duration,
    pub shutdown: Duration,
}

impl Default for BridgeTimeouts {
    fn default() -> Self {
        BridgeTimeouts {
            handshake: Duration::from_secs(60),
            call: Duration::from_secs(900),
            shutdown: Duration::from_secs(5),
        }
    }
}

/// A live adapter process. Calls on one handle are sequential.
pub struct AdapterHandle {
    model_id: String,
    run_id: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    capabilities: Vec<Task>,
    timeouts: BridgeTimeouts,
    closed: bool,
}

impl std::fmt::Debug for AdapterHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterHandle")
            .field("model_id", &self.model_id)
            .field("pid", &self.child.id())
            .field("closed", &self.closed)
            .finish()
    }
}

/// Starts the adapter and exchanges the handshake.
pub fn spawn_external(
    model_id: &str,
    command: &[String],
    run_id: &str,
    timeouts: BridgeTimeouts,
) -> Result<AdapterHandle> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| Error::Bridge(format!("no command configured for {model_id}")))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|source| Error::Spawn {
            command: program.clone(),
            source,
        })?;
    let stdout = child.stdout.take().expect("stdout piped");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let mut handle = AdapterHandle {
        model_id: model_id.to_string(),
        run_id: run_id.to_string(),
        stdin: child.stdin.take(),
        child,
        lines: rx,
        capabilities: Vec::new(),
        timeouts,
        closed: false,
    };
    let reply = handle.round_trip(&Request::handshake(run_id, model_id), timeouts.handshake, "handshake");
    match reply {
        Ok(Response::Ok { capabilities, .. }) => {
            handle.capabilities = capabilities
                .unwrap_or_default()
                .iter()
                .filter_map(|c| match c.as_str() {
                    "regression" => Some(Task::Regression),
                    "classification" => Some(Task::Classification),
                    _ => None,
                })
                .collect();
            Ok(handle)
        }
        Ok(Response::Error(msg)) => {
            handle.kill();
            Err(Error::Adapter(msg))
        }
        Err(e) => {
            handle.kill();
            Err(e)
        }
    }
}

impl AdapterHandle {
    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn capabilities(&self) -> &[Task] {
        &self.capabilities
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn send(&mut self, req: &Request) -> Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Bridge(format!("adapter {} is closed", self.model_id)))?;
        let mut line = req.to_line();
        line.push('\n');
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Bridge(format!("write to adapter {} failed: {e}", self.model_id)))
    }

    fn receive(&mut self, timeout: Duration, op: &str) -> Result<Response> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => parse_response(line.trim()),
            Ok(Err(e)) => Err(Error::Bridge(format!(
                "read from adapter {} failed: {e}",
                self.model_id
            ))),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(Error::Timeout {
                    op: op.to_string(),
                    secs: timeout.as_secs_f64(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.kill();
                Err(Error::Bridge(format!("adapter {} exited during {op}", self.model_id)))
            }
        }
    }

    fn round_trip(&mut self, req: &Request, timeout: Duration, op: &str) -> Result<Response> {
        if self.closed {
            return Err(Error::Bridge(format!("adapter {} is closed", self.model_id)));
        }
        self.send(req)?;
        self.receive(timeout, op)
    }

    pub fn fit_predict(
        &mut self,
        task: Task,
        x_cal: &Matrix,
        y_cal: &Target,
        x_query: &Matrix,
        fixed_params: &Value,
    ) -> Result<Prediction> {
        if !self.capabilities.contains(&task) {
            return Err(Error::Adapter(format!(
                "{} does not support {} tasks",
                self.model_id,
                task.as_str()
            )));
        }
        let req = Request::fit_predict(&self.run_id, task, x_cal, y_cal, x_query, fixed_params)?;
        let call = self.timeouts.call;
        match self.round_trip(&req, call, "fit_predict")? {
            Response::Error(msg) => Err(Error::Adapter(msg)),
            Response::Ok { predictions, .. } => {
                let p = predictions.ok_or_else(|| Error::Bridge("ok response without predictions".into()))?;
                if p.len() != x_query.nrows() {
                    return Err(Error::Bridge(format!(
                        "adapter returned {} predictions for {} query rows",
                        p.len(),
                        x_query.nrows()
                    )));
                }
                match task {
                    Task::Regression => Ok(Prediction::Values(p)),
                    Task::Classification => p
                        .iter()
                        .map(|&v| {
                            (v >= 0.0 && v.fract() == 0.0 && (v as usize) < y_cal.n_classes())
                                .then_some(v as usize)
                                .ok_or_else(|| Error::Bridge(format!("invalid label id {v}")))
                        })
                        .collect::<Result<Vec<usize>>>()
                        .map(Prediction::Labels),
                }
            }
        }
    }

    fn kill(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.closed = true;
    }

    /// Asks the adapter to exit and kills it if it has not done so within
    /// the grace period. Safe to call repeatedly.
    pub fn shutdown(&mut self) {
        if self.closed {
            return;
        }
        let _ = self.send(&Request::shutdown(&self.run_id));
        self.stdin = None;
        let deadline = Instant::now() + self.timeouts.shutdown;
        loop {
            match self.child.try_wait() {
                Ok(Some(_)) => break,
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    break;
                }
            }
        }
        self.closed = true;
    }

    /// Exit status after shutdown, if the process has been reaped.
    pub fn exit_code(&mut self) -> Option<i32> {
        self.child.try_wait().ok().flatten().and_then(|s| s.code())
    }
}

impl Drop for AdapterHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Handles for one external model, shared across worker threads. Each
/// concurrent call checks out its own process; idle processes are reused.
pub struct AdapterPool {
    model_id: String,
    command: Vec<String>,
    run_id: String,
    timeouts: BridgeTimeouts,
    idle: Mutex<Vec<AdapterHandle>>,
}

impl AdapterPool {
    /// Spawns one adapter to confirm that the model is usable.
    pub fn connect(model_id: &str, command: &[String], run_id: &str, timeouts: BridgeTimeouts) -> Result<Self> {
        let first = spawn_external(model_id, command, run_id, timeouts)?;
        Ok(AdapterPool {
            model_id: model_id.to_string(),
            command: command.to_vec(),
            run_id: run_id.to_string(),
            timeouts,
            idle: Mutex::new(vec![first]),
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn capabilities(&self) -> Vec<Task> {
        self.idle
            .lock()
            .expect("pool lock")
            .first()
            .map(|h| h.capabilities().to_vec())
            .unwrap_or_default()
    }

    fn checkout(&self) -> Result<AdapterHandle> {
        if let Some(h) = self.idle.lock().expect("pool lock").pop() {
            return Ok(h);
        }
        spawn_external(&self.model_id, &self.command, &self.run_id, self.timeouts)
    }

    pub fn shutdown(&self) {
        for mut h in self.idle.lock().expect("pool lock").drain(..) {
            h.shutdown();
        }
    }
}

impl ExternalBackend for AdapterPool {
    fn fit_predict(
        &self,
        task: Task,
        x_cal: &Matrix,
        y_cal: &Target,
        x_query: &Matrix,
        params: &Value,
    ) -> Result<Prediction> {
        let mut handle = self.checkout()?;
        let out = handle.fit_predict(task, x_cal, y_cal, x_query, params);
        if !handle.is_closed() {
            self.idle.lock().expect("pool lock").push(handle);
        }
        out
    }
}

impl Drop for AdapterPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip_is_bit_exact() {
        let x = Matrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-300, 1e308]);
        let q = Matrix::from_row_slice(1, 2, &[std::f64::consts::PI, -0.0]);
        let y = Target::Regression(vec![0.7, f64::MIN_POSITIVE]);
        let req = Request::fit_predict(
            "r",
            Task::Regression,
            &x,
            &y,
            &q,
            &serde_json::json!({"n_estimators": 1}),
        )
        .unwrap();
        let line = req.to_line();
        let back: Request = serde_json::from_str(&line).unwrap();
        assert_eq!(back, req);
        assert_eq!(back.to_line(), line);
        let (x2, q2) = back.matrices().unwrap();
        assert_eq!(x2, x);
        assert_eq!(q2[(0, 0)].to_bits(), q[(0, 0)].to_bits());
        assert_eq!(back.x.unwrap()[1], 1.0 / 3.0);
    }

    #[test]
    fn row_major_order() {
        let x = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(row_major(&x), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn response_parsing() {
        let ok = parse_response(r#"{"v":1,"status":"ok","predictions":[1.5,2]}"#).unwrap();
        assert_eq!(
            ok,
            Response::Ok {
                predictions: Some(vec![1.5, 2.0]),
                capabilities: None,
                diagnostics: None
            }
        );
        let err = parse_response(r#"{"v":1,"status":"error","error":"boom"}"#).unwrap();
        assert_eq!(err, Response::Error("boom".into()));
        let nan = parse_response(r#"{"v":1,"status":"ok","predictions":[NaN, 1]}"#).unwrap_err();
        assert!(nan.to_string().contains("non-finite prediction"));
        let null = parse_response(r#"{"v":1,"status":"ok","predictions":[null]}"#).unwrap_err();
        assert!(null.to_string().contains("non-finite prediction"));
        let v2 = parse_response(r#"{"v":2,"status":"ok"}"#).unwrap_err();
        assert!(matches!(v2, Error::ProtocolVersion { expected: 1, .. }));
        assert!(parse_response("garbage").is_err());
        let tasks = parse_response(r#"{"v":1,"status":"ok","tasks":["regression"]}"#).unwrap();
        assert!(matches!(tasks, Response::Ok { capabilities: Some(c), .. } if c == ["regression"]));
    }

    #[test]
    fn missing_program_is_a_spawn_error() {
        let err = spawn_external("m", &["/nonexistent/adapter".into()], "r", BridgeTimeouts::default()).unwrap_err();
        assert!(matches!(err, Error::Spawn { .. }));
        assert!(err.to_string().contains("/nonexistent/adapter"));
    }
}
