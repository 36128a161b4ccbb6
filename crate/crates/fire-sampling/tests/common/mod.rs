//! Shared support for the acceptance suite: an independent brute-force
//! reimplementation of the transform pipeline, a deterministic stub model
//! server speaking the completions wire format, and an exact path
//! enumerator for table-defined benchmarks.
//!
//! Nothing in here calls into the library's pipeline internals; agreement
//! between these routes and the library is what the acceptance criteria
//! measure.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpListener;

// ---------------------------------------------------------------------------
// Brute-force transform pipeline
// ---------------------------------------------------------------------------

/// Plain-vector reimplementation of temperature -> top-k -> softmax ->
/// top-p -> min-p, written with index sorting and a naive softmax (no max
/// subtraction; callers keep logits bounded).
pub fn brute_force_distribution(
    scores: &[f64],
    temperature: f64,
    top_k: Option<usize>,
    top_p: Option<f64>,
    min_p: f64,
) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();

    let mut order: Vec<usize> = (0..scaled.len()).collect();
    order.sort_by(|&a, &b| scaled[b].partial_cmp(&scaled[a]).unwrap().then(a.cmp(&b)));
    let kept: Vec<usize> = match top_k {
        Some(k) => order.iter().copied().take(k).collect(),
        None => order,
    };

    let z: f64 = kept.iter().map(|&i| scaled[i].exp()).sum();
    let mut probs = vec![0.0; scores.len()];
    for &i in &kept {
        probs[i] = scaled[i].exp() / z;
    }

    if let Some(p) = top_p {
        let mut by_prob: Vec<usize> = probs
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0.0)
            .map(|(i, _)| i)
            .collect();
        by_prob.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        let mut cumulative = 0.0;
        let mut keep = Vec::new();
        for &i in &by_prob {
            keep.push(i);
            cumulative += probs[i];
            if cumulative >= p {
                break;
            }
        }
        if keep.len() < by_prob.len() {
            let sum: f64 = keep.iter().map(|&i| probs[i]).sum();
            let mut filtered = vec![0.0; probs.len()];
            for &i in &keep {
                filtered[i] = probs[i] / sum;
            }
            probs = filtered;
        }
    }

    if min_p > 0.0 {
        let max = probs.iter().copied().fold(0.0, f64::max);
        let threshold = min_p * max;
        let keep: Vec<usize> = probs
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0.0 && q >= threshold)
            .map(|(i, _)| i)
            .collect();
        let support = probs.iter().filter(|&&q| q > 0.0).count();
        if keep.len() < support {
            let sum: f64 = keep.iter().map(|&i| probs[i]).sum();
            let mut filtered = vec![0.0; probs.len()];
            for &i in &keep {
                filtered[i] = probs[i] / sum;
            }
            probs = filtered;
        }
    }

    probs
}

// ---------------------------------------------------------------------------
// Stub completions server
// ---------------------------------------------------------------------------

/// Spin up a loopback HTTP server answering completions requests from a
/// fixed (context words -> token logprobs) table. Whitespace-tokenized:
/// the stub's token strings carry a trailing space so the client's
/// concatenation round-trips. Returns the endpoint URL; the server thread
/// lives for the rest of the test process.
pub fn spawn_stub_server(
    rows: BTreeMap<Vec<String>, BTreeMap<String, f64>>,
    fallback: BTreeMap<String, f64>,
) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rows = std::sync::Arc::new(rows);
        let fallback = std::sync::Arc::new(fallback);
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let rows = rows.clone();
            let fallback = fallback.clone();
            std::thread::spawn(move || {
                let Some(body) = read_http_request(&mut stream) else {
                    return;
                };
                let request: serde_json::Value = match serde_json::from_str(&body) {
                    Ok(v) => v,
                    Err(_) => return,
                };
                let prompt = request["prompt"].as_str().unwrap_or_default();
                let words: Vec<String> =
                    prompt.split_whitespace().map(str::to_string).collect();
                let top = rows.get(&words).unwrap_or_else(|| fallback.as_ref());
                let best = top
                    .iter()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(t, _)| t.clone())
                    .unwrap_or_default();
                let response = serde_json::json!({
                    "choices": [{"text": best, "logprobs": {"top_logprobs": [top]}}]
                });
                let payload = response.to_string();
                let reply = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    payload.len(),
                    payload
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    format!("http://{addr}")
}

fn read_http_request(stream: &mut std::net::TcpStream) -> Option<String> {
    let mut buf = vec![0u8; 65536];
    let mut read = 0;
    loop {
        let n = stream.read(&mut buf[read..]).ok()?;
        if n == 0 {
            return None;
        }
        read += n;
        let text = String::from_utf8_lossy(&buf[..read]).to_string();
        if let Some(split) = text.find("\r\n\r\n") {
            let headers = &text[..split];
            let length: usize = headers
                .lines()
                .find_map(|l| {
                    l.to_ascii_lowercase()
                        .strip_prefix("content-length:")
                        .map(|v| v.trim().parse().unwrap())
                })
                .unwrap_or(0);
            let body_start = split + 4;
            if read >= body_start + length {
                return Some(text[body_start..body_start + length].to_string());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Exact enumeration of table-defined benchmarks
// ---------------------------------------------------------------------------

/// Raw benchmark table used by the enumeration oracle: full-width logit
/// rows keyed by context token strings, plus a fallback row. Kept separate
/// from the library's `TableModel` on purpose.
pub struct OracleTable {
    pub tokens: Vec<String>,
    pub end_token: usize,
    pub rows: BTreeMap<Vec<String>, Vec<f64>>,
    pub fallback: Vec<f64>,
}

impl OracleTable {
    pub fn row(&self, context: &[usize]) -> &[f64] {
        let key: Vec<String> = context.iter().map(|&i| self.tokens[i].clone()).collect();
        self.rows.get(&key).map(Vec::as_slice).unwrap_or(&self.fallback)
    }

    pub fn id_of(&self, token: &str) -> usize {
        self.tokens.iter().position(|t| t == token).unwrap()
    }
}

/// Sampling parameters in plain form for the oracle.
#[derive(Clone, Copy)]
pub struct OracleConfig {
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub min_p: f64,
}

/// Enumerate every generation path of a first-token-trigger policy over an
/// oracle table, accumulating exact path probabilities per extracted
/// answer bucket (`None` = unparseable). Probabilities below `prune` are
/// still followed; paths longer than `max_tokens` terminate as truncated
/// text, matching the decode loop.
pub fn enumerate_buckets(
    table: &OracleTable,
    prompt: &[usize],
    hot_first_step: Option<OracleConfig>,
    regular: OracleConfig,
    max_tokens: usize,
    extract: &dyn Fn(&str) -> Option<String>,
) -> BTreeMap<Option<String>, f64> {
    let mut buckets = BTreeMap::new();
    let mut context = prompt.to_vec();
    walk(
        table,
        &mut context,
        prompt.len(),
        0,
        1.0,
        hot_first_step,
        regular,
        max_tokens,
        extract,
        &mut buckets,
    );
    buckets
}

#[allow(clippy::too_many_arguments)]
fn walk(
    table: &OracleTable,
    context: &mut Vec<usize>,
    prompt_len: usize,
    step: usize,
    path_prob: f64,
    hot_first_step: Option<OracleConfig>,
    regular: OracleConfig,
    max_tokens: usize,
    extract: &dyn Fn(&str) -> Option<String>,
    buckets: &mut BTreeMap<Option<String>, f64>,
) {
    if step == max_tokens {
        let text = render(table, &context[prompt_len..]);
        *buckets.entry(extract(&text)).or_insert(0.0) += path_prob;
        return;
    }
    let config = match (step, hot_first_step) {
        (0, Some(hot)) => hot,
        _ => regular,
    };
    let probs = brute_force_distribution(
        table.row(context),
        config.temperature,
        config.top_k,
        config.top_p,
        config.min_p,
    );
    for (token, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        if token == table.end_token {
            let text = render(table, &context[prompt_len..]);
            *buckets.entry(extract(&text)).or_insert(0.0) += path_prob * p;
            continue;
        }
        context.push(token);
        walk(
            table,
            context,
            prompt_len,
            step + 1,
            path_prob * p,
            hot_first_step,
            regular,
            max_tokens,
            extract,
            buckets,
        );
        context.pop();
    }
}

fn render(table: &OracleTable, generated: &[usize]) -> String {
    generated
        .iter()
        .filter(|&&t| t != table.end_token)
        .map(|&t| table.tokens[t].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Expected distinct-bucket count among `n` independent draws, plus its
/// variance, from exact bucket probabilities:
/// `E = sum_b 1-(1-p_b)^n`, with indicator covariances
/// `cov(b,c) = (1-p_b-p_c)^n - (1-p_b)^n (1-p_c)^n`.
pub fn distinct_count_moments(bucket_probs: &[f64], n: u32) -> (f64, f64) {
    let present: Vec<f64> = bucket_probs
        .iter()
        .map(|&p| 1.0 - (1.0 - p).powi(n as i32))
        .collect();
    let mean: f64 = present.iter().sum();
    let mut variance: f64 = present.iter().map(|&q| q * (1.0 - q)).sum();
    for i in 0..bucket_probs.len() {
        for j in 0..bucket_probs.len() {
            if i == j {
                continue;
            }
            let both_absent = (1.0 - bucket_probs[i] - bucket_probs[j]).powi(n as i32);
            let absent_i = (1.0 - bucket_probs[i]).powi(n as i32);
            let absent_j = (1.0 - bucket_probs[j]).powi(n as i32);
            variance += both_absent - absent_i * absent_j;
        }
    }
    (mean, variance.max(0.0))
}
