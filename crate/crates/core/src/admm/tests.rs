use super::*;
use crate::channel::sample_channels;
use crate::rates::{intf_decode, valid_binary_patterns};

fn channels(m: usize, k: usize, nt: usize, seed: u64) -> (NetworkConfig, ChannelSet) {
    let cfg = NetworkConfig::new(m, k, nt);
    let ch = sample_channels(&cfg, &mut sample_rng(seed, 0)).unwrap();
    (cfg, ch)
}

fn unit_channel() -> (NetworkConfig, ChannelSet) {
    let cfg = NetworkConfig {
        snr_db: 0.0,
        ..NetworkConfig::new(1, 1, 1)
    };
    let mut ch = ChannelSet::zeros(1, 1, 1);
    ch.h_mut(0, 0, 0)[0] = Complex64::new(1.0, 0.0);
    (cfg, ch)
}

fn quick() -> AdmmConfig {
    AdmmConfig {
        inner_steps: 300,
        inner_tol: 1e-7,
        ..AdmmConfig::default()
    }
}

#[test]
fn mmse_weight_is_two_at_unit_sinr() {
    let (_, ch) = unit_channel();
    let w = vec![Complex64::new(1.0, 0.0)];
    let (a, c) = mmse_update(&ch, &w, &[1.0], &[0.0], 1.0, 0);
    assert!((a[0] - 2.0).abs() < 1e-12);
    assert!((c[0] - Complex64::new(0.5, 0.0)).norm() < 1e-12);
}

#[test]
fn mmse_with_silent_beam_is_trivial() {
    let (_, ch) = unit_channel();
    let w = vec![Complex64::new(0.0, 0.0)];
    let (a, c) = mmse_update(&ch, &w, &[1.0], &[0.0], 1.0, 0);
    assert_eq!(a[0], 1.0);
    assert_eq!(c[0].norm(), 0.0);
}

#[test]
fn mmse_bound_is_tight_at_the_mmse_point() {
    let (cfg, ch) = channels(2, 3, 2, 5);
    let w = matched_filters(&ch, cfg.p_max());
    let bt = complement(&valid_binary_patterns(3)[7], 3);
    for m in 0..2 {
        let ici: Vec<f64> = (0..3).map(|i| exact_ici(&ch, &w, m, i)).collect();
        let (a, c) = mmse_update(&ch, &w[m], &bt, &ici, cfg.sigma2, m);
        for i in 0..3 {
            for k in 0..3 {
                let z = dot(ch.h(m, m, i), beam(&w[m], k, 2));
                let intf = convex_intf(&ch, &w[m], &bt, m, i, k, ici[i]);
                let exact = (1.0 + z.norm_sqr() / (intf + cfg.sigma2)).log2();
                let bound = mmse_bound(a[i * 3 + k], c[i * 3 + k], z, intf, cfg.sigma2);
                assert!((bound - exact).abs() < 1e-9, "{bound} vs {exact}");
                // Any other receiver gives a lower value.
                let off = mmse_bound(a[i * 3 + k], c[i * 3 + k] * 0.9, z, intf, cfg.sigma2);
                assert!(off <= exact + 1e-12);
            }
        }
    }
}

#[test]
fn convexified_interference_is_exact_on_binary_patterns() {
    for kk in 1..=3 {
        let (cfg, ch) = channels(2, kk, 2, 11 + kk as u64);
        let w = matched_filters(&ch, cfg.p_max());
        for pattern in valid_binary_patterns(kk) {
            let mut d = SchedulingDecision::zeros(2, kk, 2);
            for m in 0..2 {
                for k in 0..kk {
                    d.w_mut(m, k).copy_from_slice(beam(&w[m], k, 2));
                    for i in (0..kk).filter(|&i| i != k) {
                        d.set_beta(m, i, k, pattern[i * kk + k]);
                    }
                }
            }
            let bt = complement(&pattern, kk);
            for m in 0..2 {
                for i in 0..kk {
                    let ici = exact_ici(&ch, &w, m, i);
                    for k in 0..kk {
                        let exact = intf_decode(&d, &ch, m, i, k).unwrap();
                        let convex = convex_intf(&ch, &w[m], &bt, m, i, k, ici);
                        assert!(
                            (exact - convex).abs() <= 1e-9 * (1.0 + exact),
                            "{pattern:?} {i} {k}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn convex_coefficient_is_convex_in_the_complement() {
    let kk = 3;
    let mut rng = sample_rng(3, 0);
    for _ in 0..200 {
        let x: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        for i in 0..kk {
            for k in 0..kk {
                for u in (0..kk).filter(|&u| u != k) {
                    let f = |b: &[f64]| convex_coef(b, kk, i, k, u);
                    assert!(f(&mid) <= 0.5 * (f(&x) + f(&y)) + 1e-15);
                }
            }
        }
    }
}

#[test]
fn global_update_examples() {
    let v = [0.3, 1.7];
    assert_eq!(update_global(&v, &v, &[0.0; 2], &[0.0; 2], 1.0), v.to_vec());
    assert_eq!(
        update_global(&[0.0], &[2.0], &[0.0], &[0.0], 1.0),
        vec![1.0]
    );
    let x = update_global(&[1.0], &[3.0], &[5.0], &[5.0], 0.1);
    assert!((x[0] - 2.5).abs() < 1e-12);
}

#[test]
fn dual_update_examples() {
    // One off-diagonal pair with β + β̃ − 1 = 0.2 at ρ = 2.
    let beta = [0.0, 0.7, 0.0, 0.0];
    let bt = [1.0, 0.5, 1.0, 1.0];
    let (mut l, mut lt, mut nu) = (vec![0.0; 4], vec![0.0; 4], vec![0.0; 1]);
    update_duals(2, &beta, &bt, &[2.0], &[1.0], 2.0, &mut l, &mut lt, &mut nu);
    assert!((l[1] - 0.1).abs() < 1e-12);
    assert!((lt[1] - 0.175).abs() < 1e-12);
    assert!((nu[0] - 0.5).abs() < 1e-12);
    assert_eq!(l[0], 0.0);
    assert_eq!(l[2], 0.0);

    // Binary, complementary and in consensus: nothing moves.
    let beta = [0.0, 1.0, 0.0, 0.0];
    let bt = [1.0, 0.0, 1.0, 1.0];
    let (mut l, mut lt, mut nu) = (vec![0.4; 4], vec![-0.2; 4], vec![0.3]);
    update_duals(2, &beta, &bt, &[1.5], &[1.5], 2.0, &mut l, &mut lt, &mut nu);
    assert_eq!(l, vec![0.4; 4]);
    assert_eq!(lt, vec![-0.2; 4]);
    assert_eq!(nu, vec![0.3]);
}

#[test]
fn rounding_repairs_mutual_sic() {
    let (b, n) = round_beta(&[0.0, 0.9, 0.7, 0.0], 2);
    assert_eq!((b, n), (vec![0.0, 1.0, 0.0, 0.0], 1));
    let (b, n) = round_beta(&[0.0, 0.6, 0.8, 0.0], 2);
    assert_eq!((b, n), (vec![0.0, 0.0, 1.0, 0.0], 1));
    let (b, n) = round_beta(&[0.0, 0.8, 0.8, 0.0], 2);
    assert_eq!((b, n), (vec![0.0, 1.0, 0.0, 0.0], 1));
    // 0.5 rounds down.
    let (b, n) = round_beta(&[0.0, 0.5, 0.2, 0.0], 2);
    assert_eq!((b, n), (vec![0.0; 4], 0));
}

#[test]
fn exchange_volume() {
    assert_eq!(distributed_bits_per_iteration(3, 6), 2304);
    assert_eq!(distributed_bits_per_iteration(1, 6), 0);
    let kbit: f64 = 2304.0 * 12.63 / 1000.0;
    assert_eq!((kbit * 100.0).floor() / 100.0, 29.09);
    // M·(M K N_T)·64 + M·(N_T K·64 + 2K²·32).
    assert_eq!(
        centralized_bits(3, 6, 4),
        3 * 72 * 64 + 3 * (24 * 64 + 72 * 32)
    );
}

#[test]
fn cluster_patterns_are_valid_and_counted_by_bell_numbers() {
    for (k, bell) in [(1, 1), (2, 2), (3, 5), (4, 15)] {
        let all = valid_binary_patterns(k);
        let cl = cluster_patterns(k);
        assert_eq!(cl.len(), bell);
        for p in &cl {
            assert!(all.contains(p));
        }
    }
}

#[test]
fn joint_patterns_enumerate_the_product() {
    let per = cluster_patterns(3);
    let joint = joint_patterns(&per, 2);
    assert_eq!(joint.len(), 25);
    assert_eq!(joint[6], vec![per[1].clone(), per[1].clone()]);
}

/// All candidate optima of a 2-D weighted projection: the target, its
/// projection onto every constraint line and every pairwise vertex.
fn projection_by_enumeration(t: &[f64], w: &[f64], hs: &[Halfspace]) -> Vec<f64> {
    let dense: Vec<([f64; 2], f64)> = hs
        .iter()
        .map(|h| {
            let mut a = [0.0; 2];
            for &(j, c) in &h.coef {
                a[j] += c;
            }
            (a, h.rhs)
        })
        .collect();
    let mut cand = vec![[t[0], t[1]]];
    for (a, b) in &dense {
        // argmin Σ w (x − t)² subject to a·x = b.
        let s = (a[0] * t[0] + a[1] * t[1] - b) / (a[0] * a[0] / w[0] + a[1] * a[1] / w[1]);
        cand.push([t[0] - s * a[0] / w[0], t[1] - s * a[1] / w[1]]);
    }
    for p in 0..dense.len() {
        for q in (p + 1)..dense.len() {
            let ((a, b), (c, d)) = (dense[p], dense[q]);
            let det = a[0] * c[1] - a[1] * c[0];
            if det.abs() > 1e-12 {
                cand.push([(b * c[1] - a[1] * d) / det, (a[0] * d - b * c[0]) / det]);
            }
        }
    }
    let feasible = |x: &[f64; 2]| {
        dense
            .iter()
            .all(|(a, b)| a[0] * x[0] + a[1] * x[1] <= b + 1e-9)
    };
    let cost = |x: &[f64; 2]| w[0] * (x[0] - t[0]).powi(2) + w[1] * (x[1] - t[1]).powi(2);
    let best = cand
        .into_iter()
        .filter(feasible)
        .min_by(|x, y| cost(x).total_cmp(&cost(y)))
        .unwrap();
    best.to_vec()
}

#[test]
fn weighted_projection_matches_enumeration() {
    let mut rng = sample_rng(9, 0);
    for _ in 0..100 {
        let t: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..2.0)).collect();
        let w: Vec<f64> = (0..2).map(|_| rng.random_range(0.2..5.0)).collect();
        let mut hs = vec![
            Halfspace {
                coef: vec![(0, 1.0)],
                rhs: 1.0,
            },
            Halfspace {
                coef: vec![(0, -1.0)],
                rhs: 0.0,
            },
            Halfspace {
                coef: vec![(1, 1.0)],
                rhs: 1.0,
            },
            Halfspace {
                coef: vec![(1, -1.0)],
                rhs: 0.0,
            },
            Halfspace {
                coef: vec![(0, 1.0), (1, 1.0)],
                rhs: 1.0,
            },
        ];
        let g = rng.random_range(0.5..4.0);
        hs.push(Halfspace {
            coef: vec![(0, g)],
            rhs: rng.random_range(0.1..3.0),
        });
        let x = weighted_projection(&t, &w, &hs, 20000, 1e-14);
        let y = projection_by_enumeration(&t, &w, &hs);
        for j in 0..2 {
            assert!(
                (x[j] - y[j]).abs() < 1e-6,
                "{x:?} vs {y:?} (t {t:?}, w {w:?})"
            );
        }
    }
}

#[test]
fn beamforming_block_never_decreases_its_objective() {
    let (cfg, ch) = channels(2, 3, 2, 21);
    let acfg = quick();
    for topo in [Topology::Distributed, Topology::Centralized] {
        let runner = Runner {
            ch: &ch,
            cfg: &cfg,
            acfg: &acfg,
            topo,
        };
        let mut st = runner.init(runner.start_pattern(1));
        runner.refresh_mmse(&mut st);
        let targets_out: Vec<Vec<f64>> = st.xi_hat.clone();
        let targets_in: Vec<Vec<f64>> = (0..2).map(|m| runner.xi_hat_in(&st, m)).collect();
        let bss = match topo {
            Topology::Distributed => vec![0],
            Topology::Centralized => vec![0, 1],
        };
        let b = runner.block2(&st, &targets_in, &targets_out, bss, true);
        let mut w = st.w.clone();
        let mut real: Vec<Vec<f64>> = st
            .bt
            .iter()
            .zip(&st.xi_in)
            .map(|(b, x)| b.iter().chain(x).copied().collect())
            .collect();
        let r = maximize(&b, &mut w, &mut real, 200, 1e-9);
        assert!(r.eval.value >= r.start_value - 1e-12, "{topo:?}");
        for m in 0..2 {
            let p: f64 = w[m].iter().map(|x| x.norm_sqr()).sum();
            assert!(p <= cfg.p_max() * (1.0 + 1e-9));
            assert!(real[m].iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn beta_block_respects_its_constraints() {
    let (cfg, ch) = channels(2, 3, 2, 4);
    let acfg = quick();
    let runner = Runner {
        ch: &ch,
        cfg: &cfg,
        acfg: &acfg,
        topo: Topology::Distributed,
    };
    let mut st = runner.init(runner.start_pattern(1));
    runner.refresh_mmse(&mut st);
    let ici = runner.ici_view(&st);
    for m in 0..2 {
        runner.solve_block1(&mut st, m, &ici[m]);
        let b = &st.beta[m];
        for i in 0..3 {
            for k in 0..3 {
                if i == k {
                    continue;
                }
                let j = i * 3 + k;
                assert!((0.0..=1.0).contains(&b[j]));
                assert!(b[j] + b[k * 3 + i] <= 1.0 + 1e-6);
                let z = dot(ch.h(m, m, i), beam(&st.w[m], k, 2));
                let intf = convex_intf(&ch, &st.w[m], &st.bt[m], m, i, k, ici[m][i]);
                let f = mmse_bound(st.a[m][j], st.c[m][j], z, intf, cfg.sigma2);
                assert!(b[j] * st.gamma[m][k] <= f + 1e-6);
            }
        }
    }
}

#[test]
fn single_user_reaches_the_matched_filter_rate() {
    let (cfg, ch) = channels(1, 1, 3, 8);
    let (d, rep) = run_centralized(&ch, &cfg, &quick()).unwrap();
    let g: f64 = ch.h(0, 0, 0).iter().map(|x| x.norm_sqr()).sum();
    let best = (1.0 + cfg.p_max() * g / cfg.sigma2).log2();
    assert!(
        (rep.sum_rate - best).abs() < 1e-6 * best,
        "{} vs {best}",
        rep.sum_rate
    );
    assert!(d.power(0) <= cfg.p_max() * (1.0 + 1e-9));
}

#[test]
fn one_cell_distributed_equals_centralized() {
    let (cfg, ch) = channels(1, 3, 2, 2);
    let acfg = AdmmConfig {
        restarts: 2,
        ..quick()
    };
    let (dd, rd) = run_distributed(&ch, &cfg, &acfg).unwrap();
    let (dc, rc) = run_centralized(&ch, &cfg, &acfg).unwrap();
    assert!((rd.sum_rate - rc.sum_rate).abs() < 1e-9);
    assert_eq!(dd.beta_matrix(0), dc.beta_matrix(0));
    assert_eq!(rd.bits, 0);
}

#[test]
fn distributed_run_converges_on_a_small_network() {
    let (cfg, ch) = channels(2, 2, 2, 0);
    let acfg = AdmmConfig {
        restarts: 1,
        ..AdmmConfig::default()
    };
    let (d, rep) = run_distributed(&ch, &cfg, &acfg).unwrap();
    assert!(rep.converged, "{} iterations", rep.iterations);
    assert!(*rep.consensus_residual.last().unwrap() <= acfg.tol_consensus);
    assert!(rep.feasibility.structural_ok());
    assert_eq!(rep.total_iterations, rep.iterations);
    assert_eq!(
        rep.bits,
        rep.iterations as u64 * distributed_bits_per_iteration(2, 2)
    );
    assert!(rep.sum_rate > 0.0);
    assert_eq!(rep.rho.len(), rep.iterations);
    for m in 0..2 {
        assert!(d.power(m) <= cfg.p_max() * (1.0 + 1e-9));
    }
}

#[test]
fn clustered_search_never_beats_the_full_search() {
    let (cfg, ch) = channels(1, 3, 2, 6);
    let acfg = quick();
    let full = brute_force(&ch, &cfg, &acfg, None).unwrap();
    let cl = brute_force(&ch, &cfg, &acfg, Some(&cluster_patterns(3))).unwrap();
    assert_eq!(full.sum_rates.len(), 27);
    assert_eq!(cl.sum_rates.len(), 5);
    assert!(cl.best_sum_rate <= full.best_sum_rate + 1e-9);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        AdmmConfig {
            rho: 0.0,
            ..AdmmConfig::default()
        },
        AdmmConfig {
            rho_decay: 1.5,
            ..AdmmConfig::default()
        },
        AdmmConfig {
            restarts: 0,
            ..AdmmConfig::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err());
    }
    let (cfg, ch) = channels(1, 2, 2, 0);
    assert!(optimize_beamformers(&ch, &cfg, &quick(), &[vec![0.0; 3]]).is_err());
}
