mod common;

use std::path::Path;

use spindot::experiment::{run_reconstruct_sa, run_reconstruct_svd, run_simulate, MEASUREMENTS_FILE};

fn run_all(dir: &Path) {
    let mut c = common::small_config();
    c.output_dir = dir.to_path_buf();
    c.annealing.chains = 3;
    run_simulate(&c).unwrap();
    run_reconstruct_sa(&c, &dir.join(MEASUREMENTS_FILE), false).unwrap();
    run_reconstruct_svd(&c, &dir.join(MEASUREMENTS_FILE)).unwrap();
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(a.path());
    run_all(b.path());
    for f in [
        "measurements.csv",
        "sa_map.csv",
        "sa_trace.csv",
        "sa_map.pgm",
        "svd_k3.csv",
        "svd_k12.csv",
        "manifest.toml",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y || f == "manifest.toml", "{f} differs");
    }
}
