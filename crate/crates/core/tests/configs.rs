use std::path::{Path, PathBuf};

use videdit::Config;

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn desk_config_is_the_default_model() {
    let desk = Config::load(shipped("desk.toml")).unwrap();
    let mut expected = Config::default();
    expected.train.out_dir = desk.train.out_dir.clone();
    expected.train.checkpoint_every = desk.train.checkpoint_every;
    assert_eq!(desk, expected);
    assert_eq!(desk.model_hash(), Config::default().model_hash());
}

#[test]
fn smoke_config_is_valid_and_smaller() {
    let smoke = Config::load(shipped("smoke.toml")).unwrap();
    smoke.validate().unwrap();
    assert!(smoke.data.resolution < Config::default().data.resolution);
    assert_ne!(smoke.model_hash(), Config::default().model_hash());
}
