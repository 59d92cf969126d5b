//! Walks the stage functions by hand on a synthetic archive, without the
//! pipeline orchestrator.

use std::collections::BTreeMap;

use footprint::classifiers::{train_forest, Classifier, TrainConfig, TrainingSet};
use footprint::corpus::{parse_reader, IngestOptions, Schema};
use footprint::evaluation::{cross_validate, evaluate, forest_trainer};
use footprint::features::{extract_all, normalize, pearson_matrix, FeatureCatalog, FeatureRow, NormalizeAxis};
use footprint::labeling::{seed_labels, SeedSources};
use footprint::propagation::{propagate, PropagationConfig};
use footprint::synthgen::{generate, GeneratorConfig};
use footprint::Category;

fn config() -> GeneratorConfig {
    GeneratorConfig {
        seed: 11,
        accounts_per_category: [40; 4],
        ..GeneratorConfig::default()
    }
}

#[test]
fn stages_compose_on_synthetic_archive() {
    let corpus = generate(&config()).unwrap();
    let mut jsonl = Vec::new();
    corpus.write_jsonl(&mut jsonl).unwrap();
    let (dataset, summary) = parse_reader("synthetic", jsonl.as_slice(), IngestOptions::new(Schema::Jsonl)).unwrap();
    assert_eq!(summary.rows_rejected, 0);
    assert_eq!(dataset.accounts().len(), corpus.accounts.len());

    // Coded labels only, so every hashed account has to come from propagation.
    let coded = corpus.labels();
    let sources = SeedSources {
        coded: Some(&coded),
        rules: None,
        footprints: None,
        min_hits: 2,
    };
    let (seeds, report) = seed_labels(&dataset, &sources).unwrap();
    let hashed = corpus.hashed_accounts().count();
    assert_eq!(report.labeled, corpus.accounts.len() - hashed);

    let (labels, prop) = propagate(&dataset, &seeds, &PropagationConfig::default()).unwrap();
    assert_eq!(prop.labeled_before + prop.propagated, prop.labeled_after);
    let recovered = corpus
        .hashed_accounts()
        .filter(|a| labels.category(&a.account_id) == Some(a.category))
        .count();
    assert!(
        recovered * 10 >= hashed * 9,
        "propagation recovered {recovered}/{hashed}"
    );

    let catalog = FeatureCatalog::default();
    let raw = extract_all(&dataset, &catalog).unwrap();
    let mut correlation = pearson_matrix(&raw).unwrap();
    let selected = correlation.select(catalog.len()).unwrap().selected.clone();
    let projected: Vec<_> = raw.iter().map(|v| v.project(&selected).unwrap()).collect();
    let cats = labels.categories();
    let rows: Vec<FeatureRow> = normalize(&projected, NormalizeAxis::Row)
        .into_iter()
        .map(|vector| FeatureRow {
            category: cats.get(&vector.account_id).copied().filter(|c| c.index().is_some()),
            vector,
        })
        .collect();
    let set = TrainingSet::from_rows(&rows);
    assert!(set.len() >= corpus.accounts.len() - hashed);

    let config = TrainConfig {
        n_trees: 40,
        seed: 3,
        ..TrainConfig::default()
    };
    let cv = cross_validate(&set, &forest_trainer(config.clone()), 5, 3).unwrap();
    assert!(cv.report.accuracy > 0.85, "cv accuracy {}", cv.report.accuracy);

    let model = train_forest(&set, &config).unwrap();
    let predictions: Vec<_> = rows.iter().map(|r| model.predict(&r.vector).unwrap()).collect();
    let truth: BTreeMap<String, Category> = corpus
        .accounts
        .iter()
        .map(|a| (a.account_id.clone(), a.category))
        .collect();
    let scored = evaluate(&truth, &predictions).unwrap();
    assert_eq!(scored.samples as usize, corpus.accounts.len());
    assert!(scored.accuracy > 0.9, "accuracy against truth {}", scored.accuracy);
}

#[test]
fn generation_is_reproducible() {
    let a = generate(&config()).unwrap();
    let b = generate(&config()).unwrap();
    assert_eq!(a, b);
    let other = generate(&GeneratorConfig { seed: 12, ..config() }).unwrap();
    assert_ne!(a.tweets, other.tweets);
}
