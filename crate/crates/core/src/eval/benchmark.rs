// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multi-method faithfulness benchmark over a dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{resolve_word, ContrastiveSample, Dataset};
use super::metrics::{aopc, sufficiency, Curve, MetricConfig};
use crate::backend::Backend;
use crate::baselines::{attention_rollout, occlusion, random_saliency};
use crate::engine::{tdd_backward, tdd_bidirectional, tdd_forward};
use crate::error::{Error, Result};
use crate::types::{ContrastiveSpec, SaliencyResult, TokenId, TokenSequence, Variant};

/// Saliency for `tokens` by any supported method. `seed` only affects
/// [`Variant::Random`].
pub fn compute_saliency<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
    method: Variant,
    seed: u64,
) -> Result<SaliencyResult> {
    match method {
        Variant::Forward => tdd_forward(backend, tokens, spec),
        Variant::Backward => tdd_backward(backend, tokens, spec),
        Variant::Bidirectional => tdd_bidirectional(backend, tokens, spec),
        Variant::Rollout => attention_rollout(backend, tokens),
        Variant::Occlusion => occlusion(backend, tokens, spec),
        Variant::Random => Ok(random_saliency(tokens, seed)),
    }
}

/// Parses a comma-separated method list such as `tdd-f,tdd-bi,random`.
pub fn parse_methods(list: &str) -> Result<Vec<Variant>> {
    let methods = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Variant>>>()?;
    if methods.is_empty() {
        return Err(Error::Config("no methods given".into()));
    }
    Ok(methods)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub metric: MetricConfig,
    /// Base seed for random saliency; sample `i` uses `seed + i`.
    pub seed: u64,
    /// Worker threads for sample-level parallelism; 0 means rayon's default.
    pub jobs: usize,
    /// Keep per-sample saliency in the report (needed for HTML output).
    pub keep_samples: bool,
}

/// Metric curves of one method, averaged over the evaluated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: Variant,
    pub aopc: Curve,
    pub sufficiency: Curve,
}

/// One evaluated sample, kept for per-token rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub tokens: Vec<String>,
    pub saliency: Vec<(Variant, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    /// Samples that contributed to the averages.
    pub n_samples: usize,
    /// Samples dropped because a word did not resolve or there was no
    /// alternative to contrast with.
    pub skipped: usize,
    /// Evaluated samples where a word split into several subwords.
    pub flagged: usize,
    pub methods: Vec<MethodScores>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn method(&self, m: Variant) -> Option<&MethodScores> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// A sample turned into token ids.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub tokens: TokenSequence,
    pub spec: ContrastiveSpec,
    pub flagged: bool,
}

/// Resolves words to ids. `Ok(None)` means the sample must be skipped.
pub fn prepare_sample<B: Backend + ?Sized>(
    backend: &B,
    sample: &ContrastiveSample,
) -> Result<Option<PreparedSample>> {
    let tokens = match backend.tokenize(&sample.prompt) {
        Ok(t) => t,
        Err(Error::InvalidTokens(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut flagged = false;
    let mut resolve = |words: &[String]| -> Result<Option<Vec<TokenId>>> {
        let mut ids = Vec::with_capacity(words.len());
        for w in words {
            match resolve_word(backend, w)? {
                Some(r) => {
                    flagged |= r.split;
                    ids.push(r.id);
                }
                None => return Ok(None),
            }
        }
        Ok(Some(ids))
    };
    let Some(targets) = resolve(&sample.targets)? else {
        return Ok(None);
    };
    let Some(alternatives) = resolve(&sample.alternatives)? else {
        return Ok(None);
    };
    if alternatives.is_empty() {
        return Ok(None);
    }
    match ContrastiveSpec::new(targets, alternatives) {
        Ok(spec) => Ok(Some(PreparedSample {
            tokens,
            spec,
            flagged,
        })),
        Err(Error::InvalidSpec(msg)) => {
            log::warn!("skipping {:?}: {msg}", sample.prompt);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Per-method metric curves for one prepared sample.
pub fn evaluate_sample<B: Backend + ?Sized>(
    backend: &B,
    sample: &PreparedSample,
    methods: &[Variant],
    metric: &MetricConfig,
    seed: u64,
) -> Result<Vec<(SaliencyResult, Curve, Curve)>> {
    methods
        .iter()
        .map(|&m| {
            let sal = compute_saliency(backend, &sample.tokens, &sample.spec, m, seed)?;
            let a = aopc(backend, &sample.tokens, &sample.spec, &sal.saliency, metric)?;
            let s = sufficiency(backend, &sample.tokens, &sample.spec, &sal.saliency, metric)?;
            Ok((sal, a, s))
        })
        .collect()
}

struct SampleOutcome {
    index: usize,
    flagged: bool,
    tokens: Vec<String>,
    results: Vec<(SaliencyResult, Curve, Curve)>,
}

/// Runs every method on every sample and averages the metric curves.
///
/// Samples are evaluated in parallel and aggregated in dataset order, so
/// the report does not depend on scheduling.
pub fn run_benchmark<B: Backend + ?Sized>(
    backend: &B,
    dataset: &Dataset,
    methods: &[Variant],
    config: &BenchmarkConfig,
) -> Result<EvalReport> {
    config.metric.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("no methods given".into()));
    }
    let work = || -> Result<Vec<Option<SampleOutcome>>> {
        dataset
            .samples
            .par_iter()
            .enumerate()
            .map(|(index, sample)| {
                let Some(prepared) = prepare_sample(backend, sample)? else {
                    return Ok(None);
                };
                let seed = config.seed.wrapping_add(index as u64);
                let results = evaluate_sample(backend, &prepared, methods, &config.metric, seed)?;
                let tokens = (0..prepared.tokens.len())
                    .map(|i| prepared.tokens.text_at(i))
                    .collect();
                Ok(Some(SampleOutcome {
                    index,
                    flagged: prepared.flagged,
                    tokens,
                    results,
                }))
            })
            .collect()
    };
    let outcomes = if config.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)?
    } else {
        work()?
    };

    let skipped = outcomes.iter().filter(|o| o.is_none()).count();
    let evaluated: Vec<SampleOutcome> = outcomes.into_iter().flatten().collect();
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} samples", dataset.name);
    }
    let methods_scores = methods
        .iter()
        .enumerate()
        .filter_map(|(k, &method)| {
            let aopcs: Vec<&Curve> = evaluated.iter().map(|o| &o.results[k].1).collect();
            let suffs: Vec<&Curve> = evaluated.iter().map(|o| &o.results[k].2).collect();
            Some(MethodScores {
                method,
                aopc: Curve::mean(&aopcs)?,
                sufficiency: Curve::mean(&suffs)?,
            })
        })
        .collect();
    let samples = if config.keep_samples {
        evaluated
            .iter()
            .map(|o| SampleRecord {
                index: o.index,
                tokens: o.tokens.clone(),
                saliency: o
                    .results
                    .iter()
                    .map(|(s, _, _)| (s.variant, s.saliency.clone()))
                    .collect(),
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(EvalReport {
        dataset: dataset.name.clone(),
        n_samples: evaluated.len(),
        skipped,
        flagged: evaluated.iter().filter(|o| o.flagged).count(),
        methods: methods_scores,
        samples,
    })
}

/// Combines reports over several datasets two ways: `macro` weights every
/// dataset equally, `micro` weights by sample count.
pub fn aggregate(reports: &[EvalReport]) -> Option<(EvalReport, EvalReport)> {
    let used: Vec<&EvalReport> = reports.iter().filter(|r| r.n_samples > 0).collect();
    let first = used.first()?;
    let total: usize = used.iter().map(|r| r.n_samples).sum();
    let combine = |weighted: bool, name: &str| {
        let methods = first
            .methods
            .iter()
            .map(|ms| {
                let pick = |f: fn(&MethodScores) -> &Curve| {
                    let curves: Vec<(&Curve, f64)> = used
                        .iter()
                        .filter_map(|r| {
                            let w = if weighted {
                                r.n_samples as f64 / total as f64
                            } else {
                                1.0 / used.len() as f64
                            };
                            r.method(ms.method).map(|s| (f(s), w))
                        })
                        .collect();
                    weighted_mean(&curves)
                };
                MethodScores {
                    method: ms.method,
                    aopc: pick(|s| &s.aopc),
                    sufficiency: pick(|s| &s.sufficiency),
                }
            })
            .collect();
        EvalReport {
            dataset: name.to_owned(),
            n_samples: total,
            skipped: reports.iter().map(|r| r.skipped).sum(),
            flagged: reports.iter().map(|r| r.flagged).sum(),
            methods,
            samples: Vec::new(),
        }
    };
    Some((combine(false, "ALL-macro"), combine(true, "ALL-micro")))
}

fn weighted_mean(curves: &[(&Curve, f64)]) -> Curve {
    let len = curves[0].0.values.len();
    let mut values = vec![0.0; len];
    let mut average = 0.0;
    for (c, w) in curves {
        for (v, x) in values.iter_mut().zip(&c.values) {
            *v += w * x;
        }
        average += w * c.average;
    }
    Curve {
        ratios: curves[0].0.ratios.clone(),
        values,
        average,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyBackend, ToyConfig};

    fn sample(prompt: &str, t: &str, a: &[&str]) -> ContrastiveSample {
        ContrastiveSample {
            prompt: prompt.into(),
            targets: vec![t.into()],
            alternatives: a.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn methods_parse() {
        let m = parse_methods("tdd-f,tdd-b,tdd-bi,rollout,occlusion,random").unwrap();
        assert_eq!(m, Variant::ALL.to_vec());
        assert!(parse_methods("tdd-x").is_err());
        assert!(parse_methods("").is_err());
    }

    #[test]
    fn single_sample_report_equals_sample() {
        let toy = ToyBackend::new(ToyConfig::default()).unwrap();
        let ds = Dataset {
            name: "one".into(),
            samples: vec![sample("Joel complains about those", "drivers", &["driver"])],
        };
        let cfg = BenchmarkConfig::default();
        let report = run_benchmark(&toy, &ds, &[Variant::Forward, Variant::Random], &cfg).unwrap();
        assert_eq!(report.n_samples, 1);
        let prepared = prepare_sample(&toy, &ds.samples[0]).unwrap().unwrap();
        let direct = evaluate_sample(
            &toy,
            &prepared,
            &[Variant::Forward, Variant::Random],
            &cfg.metric,
            0,
        )
        .unwrap();
        for (scores, (_, a, s)) in report.methods.iter().zip(&direct) {
            assert_eq!(&scores.aopc, a);
            assert_eq!(&scores.sufficiency, s);
        }
    }

    #[test]
    fn samples_without_contrast_are_skipped() {
        let toy = ToyBackend::new(ToyConfig::default()).unwrap();
        let ds = Dataset {
            name: "mixed".into(),
            samples: vec![
                sample("the dog", "likes", &[]),
                sample("the dog", "likes", &["likes"]),
                sample("the dogs", "like", &["likes"]),
            ],
        };
        let report =
            run_benchmark(&toy, &ds, &[Variant::Forward], &BenchmarkConfig::default()).unwrap();
        assert_eq!(report.n_samples, 1);
        assert_eq!(report.skipped, 2);
    }

    #[test]
    fn aggregation_weights() {
        let curve = |v: f64| Curve::new(vec![1.0], vec![v]);
        let report = |name: &str, n: usize, v: f64| EvalReport {
            dataset: name.into(),
            n_samples: n,
            skipped: 0,
            flagged: 0,
            methods: vec![MethodScores {
                method: Variant::Random,
                aopc: curve(v),
                sufficiency: curve(v),
            }],
            samples: vec![],
        };
        let (macro_, micro) = aggregate(&[report("a", 1, 0.0), report("b", 3, 1.0)]).unwrap();
        assert!((macro_.methods[0].aopc.average - 0.5).abs() < 1e-12);
        assert!((micro.methods[0].aopc.average - 0.75).abs() < 1e-12);
        assert_eq!(micro.n_samples, 4);
    }
}
