use orthodc_core::decouple::report::suite_json;
use orthodc_core::decouple::{generate_dataset, run_arms, train, Arm, TrainOptions};
use orthodc_core::SyntheticConfig;

fn small() -> SyntheticConfig {
    SyntheticConfig {
        channels: 8,
        positions: 4,
        related: 2,
        samples: 64,
        epochs: 4,
        batch_size: 16,
        ..Default::default()
    }
}

#[test]
fn reports_are_reproducible() {
    let cfg = small();
    let a = run_arms(&cfg, &Arm::ALL, &TrainOptions::default()).unwrap();
    let b = run_arms(&cfg, &Arm::ALL, &TrainOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&suite_json(&cfg, &a)).unwrap(),
        serde_json::to_string(&suite_json(&cfg, &b)).unwrap()
    );
    let other = run_arms(
        &SyntheticConfig { seed: 1, ..cfg },
        &[Arm::Omlp],
        &TrainOptions::default(),
    )
    .unwrap();
    assert_ne!(other[0].offdiag_energy, a[0].offdiag_energy);
}

#[test]
fn report_values_stay_in_range() {
    for r in run_arms(&small(), &Arm::ALL, &TrainOptions::default()).unwrap() {
        assert!((0.0..=1.0).contains(&r.offdiag_energy));
        assert!((0.0..=1.0).contains(&r.dwfc_accuracy));
        assert!(r.heat_mass_ratio > 0.0);
        assert_eq!(r.cosine_sim.shape(), (8, 8));
        assert_eq!(r.loss_trace.len(), 4);
        for i in 0..8 {
            assert!((r.cosine_sim.get(i, i) - 1.0).abs() < 1e-12 || r.cosine_sim.get(i, i) == 0.0);
        }
    }
}

#[test]
fn constrained_head_stays_orthonormal() {
    let r = train(&small()).unwrap();
    assert!(r.orthonormality_residual < 1e-8);
}

#[test]
fn untrained_report_matches_initialization() {
    let r = train(&SyntheticConfig { epochs: 0, ..small() }).unwrap();
    assert_eq!(r.offdiag_energy, r.initial_offdiag_energy);
}

#[test]
fn dataset_is_seeded() {
    let a = generate_dataset(&small()).unwrap();
    let b = generate_dataset(&small()).unwrap();
    assert_eq!(a.hazy, b.hazy);
    assert_eq!(a.clear, b.clear);
}
