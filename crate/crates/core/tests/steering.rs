// SPDX-License-Identifier: MIT OR Apache-2.0

use tdd_core::backend::{CountingBackend, PlantedTrigger};
use tdd_core::baselines::occlusion;
use tdd_core::engine::tdd;
use tdd_core::steering::{
    dist_n, sentiment_spec, steer_sentiment, suppress_toxicity, toxicity_spec, Direction,
    SteerConfig, SuppressConfig, WordList,
};
use tdd_core::{Backend, Error, Sampling, ToyBackend, ToyConfig, Variant};

fn toy() -> ToyBackend {
    ToyBackend::new(ToyConfig::default()).unwrap()
}

fn id(toy: &ToyBackend, word: &str) -> u32 {
    toy.vocab_lookup(&format!(" {word}")).unwrap().unwrap()
}

#[test]
fn planted_toxic_trigger_is_blanked() {
    let base = toy();
    let toxic = ["idiot", "stupid", "hate"];
    let boosted: Vec<u32> = toxic.iter().map(|w| id(&base, w)).collect();
    let prompts = [
        ("the man went to the food place and said that", "food"),
        ("my friend thinks the teacher is very", "teacher"),
        ("they know that the dog", "dog"),
        ("joel complains about those drivers every day", "those"),
    ];
    for (prompt, trigger) in prompts {
        let rigged =
            PlantedTrigger::new(base.clone(), id(&base, trigger), boosted.clone(), [], 5.0)
                .unwrap();
        let words = WordList::new(toxic).unwrap().resolve(&rigged).unwrap();
        let w = rigged.tokenize(prompt).unwrap();
        let position = w.ids().iter().position(|&t| t == rigged.trigger()).unwrap();

        // Occlusion over every position confirms which one carries the toxic mass.
        let spec = toxicity_spec(&words, true).unwrap();
        let occ = occlusion(&rigged, &w, &spec).unwrap();
        assert_eq!(occ.ranking()[0], position);

        let out = suppress_toxicity(&rigged, &w, &words, &SuppressConfig::default()).unwrap();
        assert!(out.replaced_positions.contains(&position), "{prompt}");
        assert_eq!(out.modified_prompt.ids()[position], 0);
        assert_eq!(out.continuation.len(), 20);
        assert_eq!(out.original_prompt, w);

        let target_only = SuppressConfig {
            complement_alternatives: false,
            ..SuppressConfig::default()
        };
        let out = suppress_toxicity(&rigged, &w, &words, &target_only).unwrap();
        assert!(out.replaced_positions.contains(&position), "{prompt}");
    }
}

#[test]
fn blanking_the_trigger_lowers_toxic_generation() {
    let base = toy();
    let toxic = ["idiot", "stupid", "hate"];
    let boosted: Vec<u32> = toxic.iter().map(|w| id(&base, w)).collect();
    let rigged =
        PlantedTrigger::new(base.clone(), id(&base, "teacher"), boosted.clone(), [], 5.0).unwrap();
    let words = WordList::new(toxic).unwrap().resolve(&rigged).unwrap();
    let w = rigged
        .tokenize("my friend thinks the teacher is very")
        .unwrap();
    let (mut kept, mut blanked) = (0, 0);
    for seed in 0..20 {
        let sampling = Sampling::seeded(seed);
        let original = rigged.generate(&w, 10, &sampling).unwrap();
        kept += original.ids()[w.len()..]
            .iter()
            .filter(|t| boosted.contains(t))
            .count();
        let config = SuppressConfig {
            max_new: 10,
            sampling,
            ..SuppressConfig::default()
        };
        let out = suppress_toxicity(&rigged, &w, &words, &config).unwrap();
        blanked += out
            .continuation
            .ids()
            .iter()
            .filter(|t| boosted.contains(t))
            .count();
    }
    assert!(
        blanked * 4 < kept,
        "toxic tokens: {kept} before, {blanked} after"
    );
}

#[test]
fn suppression_is_seeded() {
    let t = toy();
    let words = WordList::new(["idiot"]).unwrap().resolve(&t).unwrap();
    let w = t.tokenize("you are a stupid idiot and").unwrap();
    let config = SuppressConfig {
        sampling: Sampling::seeded(9),
        ..SuppressConfig::default()
    };
    let a = suppress_toxicity(&t, &w, &words, &config).unwrap();
    assert_eq!(a, suppress_toxicity(&t, &w, &words, &config).unwrap());
}

#[test]
fn unresolved_toxic_list_fails_before_any_backend_call() {
    let counted = CountingBackend::new(toy());
    let w = counted.tokenize("a b c").unwrap();
    counted.reset();
    let empty = WordList::new(["nothing"]).unwrap();
    let err = suppress_toxicity(&counted, &w, &empty, &SuppressConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(counted.counts().forward(), 0);
    assert_eq!(counted.counts().generate, 0);
}

fn sentiment_lists(t: &ToyBackend) -> (WordList, WordList) {
    (
        WordList::new(["good"]).unwrap().resolve(t).unwrap(),
        WordList::new(["bad"]).unwrap().resolve(t).unwrap(),
    )
}

#[test]
fn steering_directions_mirror_each_other() {
    let t = toy();
    let (pos, neg) = sentiment_lists(&t);
    let w = t.tokenize("the food was terrible and the service").unwrap();
    let up = sentiment_spec(Direction::Positive, &pos, &neg).unwrap();
    let down = sentiment_spec(Direction::Negative, &pos, &neg).unwrap();
    assert_eq!(up.swapped().unwrap(), down);
    for variant in [Variant::Forward, Variant::Backward, Variant::Bidirectional] {
        let a = tdd(&t, &w, &up, variant).unwrap();
        let b = tdd(&t, &w, &down, variant).unwrap();
        for (x, y) in a.saliency.iter().zip(&b.saliency) {
            assert!((x + y).abs() < 1e-15);
        }
    }
}

#[test]
fn steering_replaces_top_trigger_with_key() {
    let t = toy();
    let (pos, neg) = sentiment_lists(&t);
    let rigged = PlantedTrigger::new(
        t.clone(),
        id(&t, "terrible"),
        [id(&t, "bad")],
        [id(&t, "good")],
        5.0,
    )
    .unwrap();
    let w = rigged
        .tokenize("the food was terrible and the service")
        .unwrap();
    let out = steer_sentiment(
        &rigged,
        &w,
        Direction::Positive,
        &pos,
        &neg,
        &SteerConfig::default(),
    )
    .unwrap();
    assert_eq!(out.replaced_positions, vec![3]);
    assert_eq!(out.modified_prompt.ids()[3], id(&t, "positive"));
    assert_eq!(out.modified_prompt.text_at(3), " positive");
    assert!(!out.replacement_split);

    let single = t.tokenize("terrible").unwrap();
    let out = steer_sentiment(
        &t,
        &single,
        Direction::Negative,
        &pos,
        &neg,
        &SteerConfig::default(),
    )
    .unwrap();
    assert_eq!(out.replaced_positions, vec![0]);
    assert_eq!(out.modified_prompt.ids(), &[id(&t, "negative")]);
}

#[test]
fn generated_text_diversity() {
    let t = toy();
    let w = t.tokenize("the man went to the").unwrap();
    let corpus: Vec<Vec<u32>> = (0..10)
        .map(|seed| {
            let g = t.generate(&w, 15, &Sampling::seeded(seed)).unwrap();
            g.ids()[w.len()..].to_vec()
        })
        .collect();
    let (d1, d2, d3) = (
        dist_n(&corpus, 1).unwrap(),
        dist_n(&corpus, 2).unwrap(),
        dist_n(&corpus, 3).unwrap(),
    );
    assert!(
        0.0 < d1 && d1 <= d2 && d2 <= d3 && d3 <= 1.0,
        "{d1} {d2} {d3}"
    );
    let greedy: Vec<Vec<u32>> = vec![t
        .generate(&w, 15, &Sampling::greedy())
        .unwrap()
        .ids()
        .to_vec()];
    assert!(dist_n(&greedy, 1).unwrap() <= 1.0);
}
