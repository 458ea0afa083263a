//! Finite-difference checks over every mapping, layer and model family.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{init_attention_params, init_encoder_params, multi_head_attention, transformer_encoder_layer, AttentionConfig};
use crate::data::{pad_and_batch, EncodedDocument, TruncationPolicy};
use crate::error::Result;
use crate::models::{Model, ModelConfig, ModelFamily};
use crate::nn::gradcheck::{relative_error, DEFAULT_EPS};
use crate::nn::{grad_check, grad_check_params, GradCheckReport, Graph, Params, Tensor};
use crate::rng::{self, LabRng};
use crate::simplex::{MappingKind, ProbabilityVector};

/// Inputs closer than this to a support change are redrawn.
pub const SUPPORT_MARGIN: f64 = 1e-3;

pub const GRAD_TOL: f64 = 1e-4;

pub const MAPPINGS: [MappingKind; 4] = [
    MappingKind::Softmax,
    MappingKind::Sparsemax,
    MappingKind::Entmax15,
    MappingKind::EntmaxAlpha(1.3),
];

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} {:<34} checked={:<6} max_rel={:.3e} worst={}",
            if self.report.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.report.checked,
            self.report.max_rel_error,
            self.report.worst
        )
    }
}

fn normal_vec(n: usize, std: f64, rng: &mut LabRng) -> Vec<f64> {
    let d = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Compares `mapping_backward` with central differences of `⟨u, π(z)⟩`
/// over `instances` random pairs, skipping draws near a support change.
pub fn check_mapping(kind: MappingKind, instances: usize, rng: &mut LabRng) -> Result<GradCheckReport> {
    let mut total = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: String::new(),
        tol: GRAD_TOL,
    };
    let mut done = 0;
    while done < instances {
        let n = rng.random_range(2..=12);
        let z = normal_vec(n, 1.5, rng);
        let u = normal_vec(n, 1.0, rng);
        let (p, support) = kind.apply_with_support(&z)?;
        if let Some(info) = &support {
            if info.margin(&z, kind.alpha()) < SUPPORT_MARGIN {
                continue;
            }
        }
        let analytic = kind.backward(&p, &u)?;
        let objective = |z: &[f64]| -> Result<f64> {
            Ok(kind.apply(z)?.as_slice().iter().zip(&u).map(|(a, b)| a * b).sum())
        };
        let mut report = GradCheckReport {
            checked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: String::new(),
            tol: GRAD_TOL,
        };
        for i in 0..n {
            let mut zp = z.clone();
            zp[i] += DEFAULT_EPS;
            let mut zm = z.clone();
            zm[i] -= DEFAULT_EPS;
            let numeric = (objective(&zp)? - objective(&zm)?) / (2.0 * DEFAULT_EPS);
            let rel = relative_error(analytic[i], numeric);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((analytic[i] - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("instance {done} z[{i}]");
            }
        }
        total.merge(&report);
        done += 1;
    }
    Ok(total)
}

/// Runs a tape-level check, redrawing the seed while any sparse attention
/// row sits within [`SUPPORT_MARGIN`] of a support change.
fn check_with_resample<F>(mut attempt: F, base_seed: u64) -> Result<GradCheckReport>
where
    F: FnMut(&mut LabRng) -> Result<Option<GradCheckReport>>,
{
    for k in 0..100 {
        let mut rng = rng::stream(base_seed, k);
        if let Some(r) = attempt(&mut rng)? {
            return Ok(r);
        }
    }
    Err(crate::Error::EmptyResult("no input far enough from a support boundary".into()))
}

fn margin_ok(g: &Graph) -> bool {
    g.min_support_margin() >= SUPPORT_MARGIN
}

/// Gradient of a random projection of 2-head attention w.r.t. its input and weights.
pub fn check_attention_layer(mapping: MappingKind, seed: u64) -> Result<GradCheckReport> {
    let (n, d) = (5, 4);
    check_with_resample(
        |rng| {
            let cfg = AttentionConfig::new(d, 2, mapping);
            let mut params = Params::new();
            init_attention_params(&mut params, "mha", d, rng);
            let x = Tensor::normal(&[n, d], 1.0, rng);
            let w = normal_vec(n * d, 1.0, rng);
            let mask = [true, true, true, true, false];
            let f = |g: &mut Graph, params: &Params, x| {
                let y = multi_head_attention(g, params, "mha", x, &[0..n], &mask, &cfg, "mha")?;
                g.weighted_sum(y, &w)
            };
            let mut probe = Graph::new();
            let xv = probe.constant(x.clone());
            f(&mut probe, &params, xv)?;
            if !margin_ok(&probe) {
                return Ok(None);
            }
            let mut r = grad_check(|g, xv| f(g, &params, xv), &x, DEFAULT_EPS, GRAD_TOL)?;
            let rp = grad_check_params(
                |g, p| {
                    let xv = g.constant(x.clone());
                    f(g, p, xv)
                },
                &params,
                DEFAULT_EPS,
                GRAD_TOL,
                usize::MAX,
            )?;
            r.merge(&rp);
            Ok(Some(r))
        },
        seed,
    )
}

/// Gradient through one full encoder layer, inputs and parameters.
pub fn check_encoder_layer(mapping: MappingKind, seed: u64) -> Result<GradCheckReport> {
    let (n, d) = (4, 4);
    check_with_resample(
        |rng| {
            let mut params = Params::new();
            init_encoder_params(&mut params, "enc", d, rng);
            // nontrivial norms so their gradients are exercised
            for (name, t) in params.iter_mut() {
                if name.contains(".ln") {
                    t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
                }
            }
            let x = Tensor::normal(&[n, d], 1.0, rng);
            let w = normal_vec(n * d, 1.0, rng);
            let cfg = AttentionConfig::new(d, 2, mapping);
            let f = |g: &mut Graph, params: &Params, x| {
                let mut r = rng::seeded(0);
                let y = transformer_encoder_layer(g, params, "enc", x, &[0..n], &[true; 4], &cfg, false, &mut r, "enc")?;
                g.weighted_sum(y, &w)
            };
            let mut probe = Graph::new();
            let xv = probe.constant(x.clone());
            f(&mut probe, &params, xv)?;
            if !margin_ok(&probe) {
                return Ok(None);
            }
            let mut r = grad_check(|g, xv| f(g, &params, xv), &x, DEFAULT_EPS, GRAD_TOL)?;
            let rp = grad_check_params(
                |g, p| {
                    let xv = g.constant(x.clone());
                    f(g, p, xv)
                },
                &params,
                DEFAULT_EPS,
                GRAD_TOL,
                usize::MAX,
            )?;
            r.merge(&rp);
            Ok(Some(r))
        },
        seed,
    )
}

/// Small random documents over a vocabulary of `vocab` ids.
pub fn micro_docs(n_docs: usize, n_sents: usize, vocab: usize, rng: &mut LabRng) -> Vec<EncodedDocument> {
    (0..n_docs)
        .map(|i| EncodedDocument {
            id: format!("m{i}"),
            label: (i % 2) as u8,
            sentences: (0..n_sents)
                .map(|_| {
                    let len = rng.random_range(2..=4);
                    (0..len).map(|_| rng.random_range(1..vocab)).collect()
                })
                .collect(),
        })
        .collect()
}

/// Full-model check of the BCE loss on a 2-document, 2-sentence micro-batch.
pub fn check_model(family: ModelFamily, mapping: MappingKind, seed: u64) -> Result<GradCheckReport> {
    check_with_resample(
        |rng| {
            let mut cfg = ModelConfig::new(family, 12, mapping);
            cfg.embed_dim = 5;
            cfg.hidden = 4;
            cfg.max_words = 6;
            cfg.max_sents = 3;
            cfg.dropout = 0.0;
            if family == ModelFamily::Tr {
                cfg.word_heads = 2;
            }
            let model = Model::init(cfg, rng)?;
            let docs = micro_docs(2, 2, 12, rng);
            let batch = pad_and_batch(&docs, 6, 3, 2, TruncationPolicy::KeepEarliest).remove(0);
            let f = |g: &mut Graph, p: &Params| {
                let out = model.forward(g, p, &batch, false, &mut rng::seeded(0))?;
                g.bce_with_logits(out.logits, &batch.labels)
            };
            let mut probe = Graph::new();
            f(&mut probe, &model.params)?;
            if !margin_ok(&probe) {
                return Ok(None);
            }
            grad_check_params(f, &model.params, DEFAULT_EPS, GRAD_TOL, usize::MAX).map(Some)
        },
        seed,
    )
}

/// Primitive layer checks: linear into BCE, layer norm, embedding, mean pooling.
pub fn check_primitives(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = rng::seeded(seed);
    let mut out = Vec::new();

    let w = Tensor::normal(&[3, 1], 1.0, &mut rng);
    let x = Tensor::normal(&[4, 3], 1.0, &mut rng);
    let report = grad_check(
        |g, x| {
            let wv = g.constant(w.clone());
            let y = g.linear(x, wv, None)?;
            g.bce_with_logits(y, &[1.0, 0.0, 1.0, 1.0])
        },
        &x,
        DEFAULT_EPS,
        GRAD_TOL,
    )?;
    out.push(CheckResult {
        name: "bce(linear(x))".into(),
        report,
    });

    let gain = Tensor::normal(&[5], 1.0, &mut rng);
    let bias = Tensor::normal(&[5], 1.0, &mut rng);
    let x = Tensor::normal(&[3, 5], 2.0, &mut rng);
    let wsum = normal_vec(15, 1.0, &mut rng);
    let report = grad_check(
        |g, x| {
            let (gv, bv) = (g.constant(gain.clone()), g.constant(bias.clone()));
            let y = g.layer_norm(x, gv, bv, 1e-5)?;
            g.weighted_sum(y, &wsum)
        },
        &x,
        DEFAULT_EPS,
        GRAD_TOL,
    )?;
    out.push(CheckResult {
        name: "layer_norm".into(),
        report,
    });

    let table = Tensor::normal(&[6, 3], 1.0, &mut rng);
    let wsum = normal_vec(12, 1.0, &mut rng);
    let report = grad_check(
        |g, t| {
            let y = g.embedding(t, &[2, 2, 5, 0])?;
            g.weighted_sum(y, &wsum)
        },
        &table,
        DEFAULT_EPS,
        GRAD_TOL,
    )?;
    out.push(CheckResult {
        name: "embedding".into(),
        report,
    });

    let x = Tensor::normal(&[4, 3], 1.0, &mut rng);
    let wsum = normal_vec(3, 1.0, &mut rng);
    let report = grad_check(
        |g, x| {
            let y = g.masked_mean_pool(x, &[true, false, true, true])?;
            g.weighted_sum(y, &wsum)
        },
        &x,
        DEFAULT_EPS,
        GRAD_TOL,
    )?;
    out.push(CheckResult {
        name: "masked_mean_pool".into(),
        report,
    });
    Ok(out)
}

/// Every check the `gradcheck` command runs.
pub fn run_gradcheck_suite(seed: u64, instances_per_mapping: usize) -> Result<Vec<CheckResult>> {
    let mut rng = rng::seeded(seed);
    let mut results = Vec::new();
    for kind in MAPPINGS {
        results.push(CheckResult {
            name: format!("backward[{kind}]"),
            report: check_mapping(kind, instances_per_mapping, &mut rng)?,
        });
    }
    results.extend(check_primitives(seed)?);
    for (i, kind) in MAPPINGS.into_iter().enumerate() {
        results.push(CheckResult {
            name: format!("attention[{kind}]"),
            report: check_attention_layer(kind, seed + i as u64)?,
        });
        results.push(CheckResult {
            name: format!("encoder_layer[{kind}]"),
            report: check_encoder_layer(kind, seed + i as u64)?,
        });
    }
    for family in [ModelFamily::Att, ModelFamily::Tr] {
        for kind in &MAPPINGS[..3] {
            results.push(CheckResult {
                name: format!("model[{family}-{kind}]"),
                report: check_model(family, *kind, seed)?,
            });
        }
    }
    Ok(results)
}

/// Helper for tests: `π(z)` as a plain vector.
pub fn map_vec(kind: MappingKind, z: &[f64]) -> Vec<f64> {
    kind.apply(z).map(ProbabilityVector::into_vec).expect("finite input")
}
