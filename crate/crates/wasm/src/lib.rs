//! Browser demo: the simplex mappings on user logits, an α sweep, and a toy
//! self-attention heatmap over a typed sentence.
//!
//! Every export returns a JSON string; errors come back as `{"error": ...}`.

use rand::Rng;
use salab::data::tokenize;
use salab::rng::seeded;
use salab::simplex::{entmax_bisect, BISECT_ITERS};
use salab::MappingKind;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DIRECTIVES: [&str; 3] = ["dnr", "dni", "cmo"];
const DIM: usize = 8;

fn json<T: Serialize>(r: salab::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}")),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

fn parse_logits(text: &str) -> salab::Result<Vec<f64>> {
    let z = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| salab::Error::InvalidArgument(format!("not a number: {s}")))
        })
        .collect::<salab::Result<Vec<_>>>()?;
    if z.is_empty() {
        return Err(salab::Error::InvalidArgument("no logits given".into()));
    }
    Ok(z)
}

#[derive(Serialize)]
struct Mapped {
    name: String,
    probs: Vec<f64>,
    zeros: usize,
}

fn map_all(z: &[f64], alpha: f64) -> salab::Result<Vec<Mapped>> {
    let kinds = [
        MappingKind::Softmax,
        MappingKind::Entmax15,
        MappingKind::Sparsemax,
        MappingKind::EntmaxAlpha(alpha),
    ];
    kinds
        .iter()
        .map(|k| {
            let p = k.apply(z)?;
            Ok(Mapped {
                name: k.to_string(),
                zeros: p.zero_count(),
                probs: p.into_vec(),
            })
        })
        .collect()
}

/// Comma- or space-separated logits mapped by softmax, 1.5-entmax,
/// sparsemax and α-entmax for the given α.
#[wasm_bindgen]
pub fn map_logits(logits: &str, alpha: f64) -> String {
    json(parse_logits(logits).and_then(|z| map_all(&z, alpha)))
}

#[derive(Serialize)]
struct Sweep {
    alphas: Vec<f64>,
    /// probs[k][i]: coordinate i at alphas[k]
    probs: Vec<Vec<f64>>,
}

/// Every coordinate of α-entmax(z) for α on an even grid over [1, 2].
#[wasm_bindgen]
pub fn alpha_sweep(logits: &str, steps: usize) -> String {
    let sweep = parse_logits(logits).and_then(|z| {
        let steps = steps.clamp(2, 400);
        let alphas: Vec<f64> = (0..steps).map(|k| 1.0 + k as f64 / (steps - 1) as f64).collect();
        let probs = alphas
            .iter()
            .map(|&a| {
                if a == 1.0 {
                    MappingKind::Softmax.apply(&z).map(|p| p.into_vec())
                } else {
                    entmax_bisect(&z, a, BISECT_ITERS).map(|p| p.into_vec())
                }
            })
            .collect::<salab::Result<Vec<_>>>()?;
        Ok(Sweep { alphas, probs })
    });
    json(sweep)
}

#[derive(Serialize)]
struct Heatmap {
    tokens: Vec<String>,
    weights: Vec<Vec<f64>>,
    zeros: usize,
}

/// Stable per-token vector, seeded from the token text.
fn token_vector(token: &str, salt: u64) -> Vec<f64> {
    let h = token
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut rng = seeded(h ^ salt);
    (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Toy one-head self-attention over a sentence: random but stable query and
/// key vectors per token, scaled dot products, and `boost` added to the
/// score of every directive column before the mapping.
#[wasm_bindgen]
pub fn attention_heatmap(sentence: &str, mapping: &str, boost: f64) -> String {
    let heat = (|| {
        let kind: MappingKind = mapping.parse()?;
        let tokens = tokenize(sentence);
        if tokens.is_empty() {
            return Err(salab::Error::InvalidArgument("empty sentence".into()));
        }
        let queries: Vec<Vec<f64>> = tokens.iter().map(|t| token_vector(t, 1)).collect();
        let keys: Vec<Vec<f64>> = tokens.iter().map(|t| token_vector(t, 2)).collect();
        let scale = (DIM as f64).sqrt();
        let mut zeros = 0;
        let weights = queries
            .iter()
            .map(|q| {
                let scores: Vec<f64> = keys
                    .iter()
                    .zip(&tokens)
                    .map(|(k, t)| {
                        let s: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / scale;
                        s + if DIRECTIVES.contains(&t.as_str()) { boost } else { 0.0 }
                    })
                    .collect();
                let p = kind.apply(&scores)?;
                zeros += p.zero_count();
                Ok(p.into_vec())
            })
            .collect::<salab::Result<Vec<_>>>()?;
        Ok(Heatmap { tokens, weights, zeros })
    })();
    json(heat)
}
