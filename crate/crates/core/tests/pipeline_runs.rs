use std::fs;
use std::path::Path;

use clauseforge_core::corpus::write_jsonl;
use clauseforge_core::decoder::{DecoderConfig, TrainConfig};
use clauseforge_core::embedding::EncoderSpec;
use clauseforge_core::pipeline::{ablate_k, run_pipeline, RunConfig, StageStatus, INDEX_FILE, STAGES};
use clauseforge_core::strategy::ContextStrategy;
use clauseforge_core::synthetic::{synthetic_corpus, SynthConfig};
use clauseforge_core::Error;

fn small_config(dir: &Path, strategy: ContextStrategy) -> RunConfig {
    let corpus = dir.join("synthetic.jsonl");
    if !corpus.exists() {
        let contracts = synthetic_corpus(&SynthConfig {
            contracts: 40,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        write_jsonl(&corpus, &contracts).unwrap();
    }
    RunConfig {
        corpus,
        top_types: 3,
        encoder: EncoderSpec::hash(32, 0),
        k: 3,
        strategy,
        decoder: DecoderConfig {
            layers: 1,
            model_dim: 16,
            heads: 2,
            ffn_dim: 32,
            max_len: 128,
            vocab_size: 600,
            context_dim: strategy.out_dim(32),
            dropout: 0.0,
            seed: 2,
        },
        train: TrainConfig {
            epochs: 2,
            peak_lr: 1e-3,
            batch_size: 8,
            grad_accum_steps: 2,
            ..TrainConfig::default()
        },
        out_dir: dir.join("run"),
        ..RunConfig::default()
    }
}

#[test]
fn unchanged_inputs_skip_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), ContextStrategy::ContrTypeClausesim);
    let first = run_pipeline(&cfg).unwrap();
    assert!(STAGES.iter().all(|s| first.status(s) == Some(StageStatus::Ran)));
    let second = run_pipeline(&cfg).unwrap();
    assert!(STAGES.iter().all(|s| second.status(s) == Some(StageStatus::UpToDate)));
    assert_eq!(first.report, second.report);
}

#[test]
fn deleted_index_is_rebuilt_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), ContextStrategy::ContrFullsim);
    run_pipeline(&cfg).unwrap();
    fs::remove_file(cfg.out_dir.join(INDEX_FILE)).unwrap();
    let again = run_pipeline(&cfg).unwrap();
    assert_eq!(again.status("index"), Some(StageStatus::Ran));
    for stage in ["ingest", "embed", "reps", "tokenizer", "train"] {
        assert_eq!(again.status(stage), Some(StageStatus::UpToDate), "{stage}");
    }
    assert!(cfg.out_dir.join(INDEX_FILE).is_file());
}

#[test]
fn changed_decoder_settings_rerun_training_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), ContextStrategy::ContrType);
    run_pipeline(&cfg).unwrap();
    cfg.train.epochs = 3;
    let again = run_pipeline(&cfg).unwrap();
    for stage in ["ingest", "embed", "index", "reps", "tokenizer"] {
        assert_eq!(again.status(stage), Some(StageStatus::UpToDate), "{stage}");
    }
    assert_eq!(again.status("train"), Some(StageStatus::Ran));
}

#[test]
fn context_width_must_match_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), ContextStrategy::ContrTypeFullsim);
    cfg.decoder.context_dim = 32;
    assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
    assert!(!cfg.out_dir.exists());
}

#[test]
fn ablation_writes_one_run_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), ContextStrategy::ContrTypeFullsim);
    let rows = ablate_k(&cfg, &[2, 4, 2]).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![2, 4]);
    assert!(cfg.out_dir.join("k2").is_dir() && cfg.out_dir.join("k4").is_dir());
}
