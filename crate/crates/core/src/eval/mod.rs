// SPDX-License-Identifier: MIT OR Apache-2.0

//! Faithfulness evaluation: AOPC and Sufficiency metrics, dataset loading,
//! and the multi-method benchmark runner.

mod benchmark;
mod dataset;
mod metrics;

pub use benchmark::{
    aggregate, compute_saliency, evaluate_sample, parse_methods, prepare_sample, run_benchmark,
    BenchmarkConfig, EvalReport, MethodScores, PreparedSample, SampleRecord,
};
pub use dataset::{
    load_dataset, parse_dataset, resolve_word, ContrastiveSample, Dataset, ResolvedWord,
};
pub use metrics::{
    aopc, perturbation_count, relative_probability, relative_probability_from_logits, sufficiency,
    Curve, MetricConfig, DEFAULT_RATIOS,
};
