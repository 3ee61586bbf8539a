//! Short training runs pinned to stored outputs. Regenerate the files with
//! `QFEEDBACK_BLESS=1 cargo test -p qfeedback --test golden`.

use std::fs;
use std::path::PathBuf;

use qfeedback::channels::ChannelConfig;
use qfeedback::evaluation::{decision_regions, GridSpec};
use qfeedback::feedback::FeedbackMode;
use qfeedback::training::{train, write_metrics_csv, TrainingConfig};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn check_or_bless(name: &str, actual: &[u8]) {
    let path = data(name);
    if std::env::var_os("QFEEDBACK_BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}; run with QFEEDBACK_BLESS=1", path.display()));
    assert!(expected == actual, "{name} no longer matches the stored output");
}

#[test]
fn short_quantized_run_is_pinned() {
    let cfg = TrainingConfig {
        outer_iterations: 2,
        feedback: FeedbackMode::QuantizedNoisy { q_bits: 2, flip_prob: 0.1 },
        ..TrainingConfig::default()
    };
    let out = train(cfg, &ChannelConfig::awgn_at_snr(15.0), 5).unwrap();
    let mut metrics = Vec::new();
    write_metrics_csv(&out.metrics, &mut metrics).unwrap();
    check_or_bless("golden_metrics.csv", &metrics);
    check_or_bless("golden_tx.json", out.transmitter.network().to_json().unwrap().as_bytes());
    check_or_bless("golden_rx.json", out.receiver.network().to_json().unwrap().as_bytes());
    let grid = decision_regions(&out.receiver, &GridSpec::square(0.6, 15)).unwrap();
    let mut regions = Vec::new();
    grid.write_csv(&mut regions).unwrap();
    check_or_bless("golden_regions.csv", &regions);
}
