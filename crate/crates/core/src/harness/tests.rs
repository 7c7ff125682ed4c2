use super::*;

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
        let j = serde_json::to_string(&m).unwrap();
        assert_eq!(j, format!("\"{}\"", m.name()));
    }
    assert!("sdma".parse::<Method>().is_err());
}

#[test]
fn config_round_trips_and_rejects_unknown_fields() {
    let cfg = ExperimentConfig::default();
    let j = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentConfig>(&j).unwrap(), cfg);
    let partial: ExperimentConfig =
        serde_json::from_str(r#"{"seed": 4, "method": "fixed_gnn"}"#).unwrap();
    assert_eq!(partial.seed, 4);
    assert_eq!(partial.method, Method::FixedGnn);
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sead": 4}"#).is_err());
}

#[test]
fn overrides_follow_dotted_paths() {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_override("net.snr_db=15").unwrap();
    cfg.apply_override("train.epochs = 3").unwrap();
    cfg.apply_override("method=admm_centralized").unwrap();
    cfg.apply_override("sweep_corr=[0.5,0.6]").unwrap();
    cfg.apply_override("frozen_pattern=[0,0,0,1]").unwrap();
    assert_eq!(cfg.net.snr_db, 15.0);
    assert_eq!(cfg.train.epochs, 3);
    assert_eq!(cfg.method, Method::AdmmCentralized);
    assert_eq!(cfg.sweep_corr, vec![0.5, 0.6]);
    assert_eq!(cfg.frozen_pattern, Some(vec![0.0, 0.0, 0.0, 1.0]));
    assert!(cfg.apply_override("net.snr=15").is_err());
    assert!(cfg.apply_override("net.snr_db").is_err());
    assert!(cfg.apply_override("train.epochs=many").is_err());
}

#[test]
fn hash_ignores_the_output_directory() {
    let a = ExperimentConfig::default();
    let mut b = a.clone();
    b.out_dir = "elsewhere".into();
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    b.seed = 1;
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
}

#[test]
fn pattern_checks() {
    assert!(check_pattern(&[0.0, 1.0, 0.0, 0.0], 2).is_ok());
    for bad in [
        vec![0.0, 1.0, 1.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.5, 0.0, 0.0],
        vec![0.0; 3],
    ] {
        assert!(
            matches!(check_pattern(&bad, 2), Err(Error::InvalidPattern(_))),
            "{bad:?}"
        );
    }
}

#[test]
fn paired_clusters_are_valid_two_user_clusters() {
    for k in 1..=7 {
        let p = paired_cluster_pattern(k);
        check_pattern(&p, k).unwrap();
        assert_eq!(p.iter().sum::<f64>(), (k / 2) as f64);
        for i in 0..k {
            let involved = (0..k)
                .filter(|&j| p[i * k + j] + p[j * k + i] > 0.0)
                .count();
            assert!(involved <= 1);
        }
    }
    // Strongest decodes weakest.
    assert_eq!(paired_cluster_pattern(4)[3 * 4], 1.0);
}

#[test]
fn validation_is_method_specific() {
    let mut cfg = ExperimentConfig {
        methods: vec![Method::AdmmDistributed],
        method: Method::AdmmDistributed,
        ..ExperimentConfig::default()
    };
    cfg.gnn.layers = 0;
    assert!(cfg.validate().is_ok());
    cfg.methods.push(Method::FixedGnn);
    assert!(cfg.validate().is_err());
    cfg.methods = vec![Method::BetaFrozenOracle];
    cfg.frozen_pattern = Some(vec![0.0; 4]);
    assert!(matches!(cfg.validate(), Err(Error::InvalidPattern(_))));
}

fn record(rate: f64, bits: u64) -> SampleRecord {
    SampleRecord {
        sum_rate: rate,
        sic_complexity: 1.0,
        bits,
        steps: 3.0,
        runtime_s: 0.5,
        feasible: rate > 1.0,
    }
}

#[test]
fn aggregates_are_means_of_the_samples() {
    let cfg = ExperimentConfig::default();
    let r = RunResult::from_samples(
        Method::FixedGnn,
        vec![record(1.0, 1000), record(4.0, 3000)],
        &cfg,
    )
    .unwrap();
    assert_eq!(r.sum_rate, 2.5);
    assert_eq!(r.overhead_kbit, 2.0);
    assert_eq!(r.feasible_fraction, 0.5);
    assert_eq!(r.steps, 3.0);
    assert!(r.provenance.contains("fixed_gnn"));
    assert!(RunResult::from_samples(Method::FixedGnn, vec![], &cfg).is_err());
}

#[test]
fn kbit_is_a_thousand_bits() {
    assert_eq!(kbit(36864), 36.864);
}

#[test]
fn table_has_one_row_per_result() {
    let cfg = ExperimentConfig::default();
    let a = RunResult::from_samples(Method::AutoGnn, vec![record(2.0, 100)], &cfg).unwrap();
    let b = RunResult::from_samples(Method::AdmmDistributed, vec![record(3.0, 200)], &cfg).unwrap();
    let csv = table_csv(&[&a, &b]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], TABLE_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("AutoGNN,2,0.5,3,0.1"));
    assert!(lines[2].starts_with("Distributed ADMM,3,"));
}
