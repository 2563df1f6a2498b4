// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures shared by the integration suites: the planted-trigger family and
//! brute-force metric oracles.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdd_core::backend::PlantedTrigger;
use tdd_core::{Backend, ContrastiveSpec, TokenId, TokenSequence, ToyBackend, ToyConfig};

pub const PLANT_STRENGTH: f64 = 4.0;

/// One member of the planted family: a small toy model where a single
/// prompt position carries the target/alternative margin.
pub struct Planted {
    pub backend: PlantedTrigger<ToyBackend>,
    pub tokens: TokenSequence,
    pub position: usize,
    pub spec: ContrastiveSpec,
}

pub fn planted(seed: u64, min_len: usize, max_len: usize) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let toy = ToyBackend::new(ToyConfig::small(seed)).unwrap();
    let v = toy.vocab_size() as TokenId;
    let trigger = rng.random_range(1..v);
    let target = rng.random_range(1..v);
    let alternative = loop {
        let a = rng.random_range(1..v);
        if a != target {
            break a;
        }
    };
    let n = rng.random_range(min_len..=max_len);
    let position = rng.random_range(0..n);
    let ids = (0..n)
        .map(|i| {
            if i == position {
                return trigger;
            }
            loop {
                let t = rng.random_range(1..v);
                if t != trigger {
                    break t;
                }
            }
        })
        .collect();
    Planted {
        backend: PlantedTrigger::new(toy, trigger, [target], [alternative], PLANT_STRENGTH)
            .unwrap(),
        tokens: TokenSequence::new(ids).unwrap(),
        position,
        spec: ContrastiveSpec::pair(target, alternative).unwrap(),
    }
}

/// Target share of a two-way softmax over one target and one alternative
/// logit.
pub fn pair_share(logits: &[f64], target: TokenId, alternative: TokenId) -> f64 {
    let t = logits[target as usize];
    let a = logits[alternative as usize];
    if t >= a {
        1.0 / (1.0 + (a - t).exp())
    } else {
        let e = (t - a).exp();
        e / (e + 1.0)
    }
}

/// Relative probability for every keep-set, indexed by bitmask.
pub fn subset_table<B: Backend>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
) -> Vec<f64> {
    let n = tokens.len();
    let t = *spec.targets().iter().next().unwrap();
    let a = *spec.alternatives().iter().next().unwrap();
    (0u32..1 << n)
        .map(|mask| {
            let ids = tokens
                .ids()
                .iter()
                .enumerate()
                .map(|(i, &id)| if mask >> i & 1 == 1 { id } else { 0 })
                .collect();
            let logits = backend.logits(&TokenSequence::new(ids).unwrap()).unwrap();
            pair_share(logits.last().unwrap(), t, a)
        })
        .collect()
}

/// Positions by descending score, lower index first on ties.
pub fn order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    idx
}

pub fn take(ratio: f64, n: usize) -> usize {
    // Smallest k with k >= ratio * n, found by search instead of ceil.
    (0..=n)
        .find(|&k| k as f64 >= ratio * n as f64 - 1e-9)
        .unwrap()
}

fn mask_of(positions: &[usize]) -> usize {
    positions.iter().fold(0, |m, &p| m | 1 << p)
}

pub const RATIOS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// AOPC points read off the subset table, restoring along `ranking`.
pub fn oracle_aopc(table: &[f64], ranking: &[usize]) -> Vec<f64> {
    let n = ranking.len();
    RATIOS
        .iter()
        .map(|&r| table[mask_of(&ranking[..take(r, n)])])
        .collect()
}

/// Sufficiency points (0 included), removing along `ranking`.
pub fn oracle_sufficiency(table: &[f64], ranking: &[usize]) -> Vec<f64> {
    let n = ranking.len();
    let full = (1usize << n) - 1;
    std::iter::once(0.0)
        .chain(RATIOS)
        .map(|r| table[full & !mask_of(&ranking[..take(r, n)])])
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// All permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}
