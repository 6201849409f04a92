use hetfl::checkpoint::{decode, encode, load, CheckpointError, FORMAT_VERSION, MAGIC};
use hetfl::commands::{cmd_train_supernet, prepare_data};
use hetfl::config::parse_config_str;
use hetfl_core::seed::SeedTree;
use hetfl_core::supernet::{SearchIndex, SearchSpace, SupernetWeights};

fn small_theta() -> SupernetWeights {
    let space = SearchSpace::new(3, 2, vec![0, 1, 2], vec![2, 5]).unwrap();
    SupernetWeights::random(space, &mut SeedTree::new(4).rng())
}

#[test]
fn encode_decode_round_trips() {
    let theta = small_theta();
    let bytes = encode(&theta);
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(decode(&bytes).unwrap(), theta);
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = encode(&small_theta());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic)));
    let mut newer = bytes.clone();
    newer[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(decode(&newer), Err(CheckpointError::Version(v)) if v == FORMAT_VERSION + 1));
    assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated(_))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode(&long), Err(CheckpointError::Trailing(1))));
    let mut reshaped = bytes.clone();
    reshaped[12..16].copy_from_slice(&4u32.to_le_bytes());
    assert!(matches!(decode(&reshaped), Err(CheckpointError::Invalid(_))));
}

const CONFIG: &str = "seed = 2
rounds = 1
method = rafl

[dataset]
source = synthetic
n_samples = 600
dims = 6
classes = 3

[partition]
n_clients = 4
dirichlet_alpha = 1.0

[space]
depths = 1, 2
widths = 3, 7

[supernet]
steps = 40

[budgets]
kind = list
values = 500, 500, 500, 500
kn_budget = 100
";

#[test]
fn training_is_bit_reproducible_and_reload_preserves_search() {
    let cfg = parse_config_str(CONFIG).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = cmd_train_supernet(&cfg, Some(a.path())).unwrap();
    let second = cmd_train_supernet(&cfg, Some(b.path())).unwrap();
    assert_eq!(std::fs::read(&first.checkpoint).unwrap(), std::fs::read(&second.checkpoint).unwrap());

    let reloaded = load(&first.checkpoint).unwrap();
    assert_eq!(reloaded, first.theta);
    let val = prepare_data(&cfg).unwrap().val;
    assert_eq!(
        SearchIndex::build(&reloaded, &val).unwrap(),
        SearchIndex::build(&first.theta, &val).unwrap()
    );
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&first.summary).unwrap()).unwrap();
    assert_eq!(summary["search_space"]["architectures"], 6);
    assert_eq!(summary["ranking"].as_array().unwrap().len(), 6);
}

#[test]
fn missing_output_dir_fails_before_training() {
    let cfg = parse_config_str(CONFIG).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let err = cmd_train_supernet(&cfg, Some(&missing)).unwrap_err();
    assert!(err.to_string().contains("does not exist"), "{err}");
    assert!(!missing.exists());
}
