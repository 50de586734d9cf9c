use equinox_core::config::{default_grid, RunConfig, ScenarioSpec};
use equinox_core::experiment::{run_ablation, run_seeds, summary_table};
use equinox_core::ScenarioName;

#[test]
fn default_grid_on_poisson() {
    let mut cfg = RunConfig::new(ScenarioSpec::preset(ScenarioName::Poisson, 60.0));
    cfg.seeds = (1..=10).collect();
    let ab = run_ablation(&cfg, &default_grid(), 4).unwrap();
    assert_eq!(ab.rows.len(), 5);
    assert_eq!(summary_table(&ab.rows).lines().count(), 6);
    for row in &ab.rows {
        assert_eq!(row.trace_hashes, ab.rows[0].trace_hashes);
        assert_eq!(row.seeds, cfg.seeds);
    }
    let avg = |label: &str| ab.rows.iter().find(|r| r.label == label).unwrap().avg_diff;
    assert!(
        avg("Equinox + Oracle") <= avg("Equinox + MoPE"),
        "oracle {} vs mope {}",
        avg("Equinox + Oracle"),
        avg("Equinox + MoPE")
    );
    // Equinox with either predictor keeps the gap below both baselines.
    assert!(avg("Equinox + MoPE") < avg("VTC"));
    assert!(avg("VTC") < avg("FCFS"));
}

#[test]
fn parallel_seeds_match_serial() {
    let mut cfg = RunConfig::new(ScenarioSpec::preset(ScenarioName::Balanced, 20.0));
    cfg.seeds = vec![4, 5, 6];
    let serial = run_seeds(&cfg, 1).unwrap();
    let parallel = run_seeds(&cfg, 3).unwrap();
    for (a, b) in serial.iter().zip(&parallel) {
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.trace_hash, b.trace_hash);
        assert_eq!(a.output.log, b.output.log);
        assert_eq!(a.report, b.report);
    }
}
