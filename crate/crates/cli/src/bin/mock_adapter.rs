//! Minimal bridge adapter for tests and local trials.
//!
//! `mock-adapter [MODE]` where MODE is one of
//! `mean` (default), `nn`, `nan`, `badversion`, `hang`, `crash`.
//! `hang` never answers fit_predict or shutdown.

use std::io::{BufRead, Write};

use serde_json::{json, Value};

fn nums(req: &Value, key: &str) -> Vec<f64> {
    req[key]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default()
}

fn dim(req: &Value, key: &str) -> usize {
    req[key].as_u64().unwrap_or(0) as usize
}

fn mean_predict(req: &Value) -> Vec<f64> {
    let y = nums(req, "y");
    let q_rows = dim(req, "q_rows");
    let value = if req["task"] == "classification" {
        let k = dim(req, "n_classes").max(1);
        let mut counts = vec![0usize; k];
        for &l in &y {
            counts[(l as usize).min(k - 1)] += 1;
        }
        // first class with the largest count
        let best = counts
            .iter()
            .enumerate()
            .fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
        best as f64
    } else {
        y.iter().sum::<f64>() / y.len().max(1) as f64
    };
    vec![value; q_rows]
}

fn nn_predict(req: &Value) -> Vec<f64> {
    let (x, y, q) = (nums(req, "x"), nums(req, "y"), nums(req, "q"));
    let (n, p, m) = (dim(req, "n_rows"), dim(req, "n_cols"), dim(req, "q_rows"));
    (0..m)
        .map(|i| {
            let qi = &q[i * p..(i + 1) * p];
            let mut best = (f64::INFINITY, 0);
            for r in 0..n {
                let d: f64 = x[r * p..(r + 1) * p].iter().zip(qi).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best.0 {
                    best = (d, r);
                }
            }
            y[best.1]
        })
        .collect()
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "mean".into());
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    let version = if mode == "badversion" { 2 } else { 1 };
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                let _ = writeln!(
                    out,
                    "{}",
                    json!({"v": version, "status": "error", "error": e.to_string()})
                );
                let _ = out.flush();
                continue;
            }
        };
        let reply = match req["op"].as_str() {
            Some("handshake") => {
                json!({"v": version, "status": "ok", "capabilities": ["regression", "classification"]}).to_string()
            }
            Some("shutdown") if mode == "hang" => loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            },
            Some("shutdown") => {
                let _ = writeln!(out, "{}", json!({"v": version, "status": "ok"}));
                let _ = out.flush();
                return;
            }
            Some("fit_predict") => match mode.as_str() {
                "hang" => loop {
                    std::thread::sleep(std::time::Duration::from_secs(3600));
                },
                "crash" => std::process::exit(7),
                "nan" => {
                    let m = dim(&req, "q_rows");
                    let preds = vec!["NaN"; m].join(",");
                    format!("{{\"v\":1,\"status\":\"ok\",\"predictions\":[{preds}]}}")
                }
                "nn" => json!({"v": version, "status": "ok", "predictions": nn_predict(&req)}).to_string(),
                _ => json!({"v": version, "status": "ok", "predictions": mean_predict(&req)}).to_string(),
            },
            _ => json!({"v": version, "status": "error", "error": "unknown op"}).to_string(),
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
}
