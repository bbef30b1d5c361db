use spindot::config::ExperimentConfig;
use spindot::forward::Disk;
use spindot::model::Point2;

/// Scaled-down geometry that runs in well under a second.
pub fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.roi.nx = 5;
    c.roi.ny = 6;
    c.roi.h = 1.5;
    c.fd.half_width = 30.0;
    c.fd.depth = 30.0;
    c.array.source_start = -12.0;
    c.array.source_step = 8.0;
    c.array.source_count = 4;
    c.array.detector_start = -8.0;
    c.array.detector_step = 8.0;
    c.array.detector_count = 3;
    c.phantom.disks = vec![Disk {
        center: Point2::new(1.0, 4.0),
        radius: 1.5,
        delta_mu_a: 0.1,
    }];
    c.annealing.n_temps = 40;
    c.annealing.sweeps_per_temp = 5;
    c.svd.ranks = vec![3, 12];
    c.diagnostics.triples = 50;
    c.diagnostics.quadrature_pairs = 5;
    c
}
