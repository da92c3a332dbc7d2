use metapop::engine::{RngSeed, Runner};
use metapop::lattice::Boundary;
use metapop::models::ModelSpec;
use metapop::percolation::*;

fn serial() -> Runner {
    Runner::new(Some(1)).unwrap()
}

/// exp(Q t) p0 by Taylor series with scaling and squaring, on a dense
/// row-major generator.
fn transient_oracle(q: &[Vec<f64>], p0: &[f64], t: f64) -> Vec<f64> {
    let n = q.len();
    let norm = q.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max) * t;
    let squarings = (norm.max(1.0).log2().ceil() as u32) + 4;
    let h = t / 2f64.powi(squarings as i32);
    let mul = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
    };
    let a: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|x| x * h).collect()).collect();
    let mut e: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    let mut term = e.clone();
    for k in 1..30 {
        term = mul(&term, &a).into_iter().map(|r| r.into_iter().map(|x| x / k as f64).collect()).collect();
        for i in 0..n {
            for j in 0..n {
                e[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        e = mul(&e, &e);
    }
    (0..n).map(|j| (0..n).map(|i| p0[i] * e[i][j]).sum()).collect()
}

/// P(dominator holds at most one individual at time s | start at N), from a
/// generator built straight from the dominator's rates.
fn dominator_oracle(n: usize, lambda: f64, phi: f64, phi_a: f64, na: usize, s: f64) -> f64 {
    let mut q = vec![vec![0.0; n + 1]; n + 1];
    for l in 0..=n {
        if l < n {
            q[l][l + 1] = l as f64 + lambda;
        }
        if l > 0 {
            q[l][l - 1] = l as f64 * if l <= na { phi_a } else { phi };
        }
        q[l][l] = -q[l].iter().sum::<f64>();
    }
    let mut p0 = vec![0.0; n + 1];
    p0[n] = 1.0;
    let p = transient_oracle(&q, &p0, s);
    p[0] + p[1]
}

#[test]
fn dominator_hit_matches_transient_oracle() {
    let model = ModelSpec::model_ii(0.5, 10.0, 1.0, 4, 2).unwrap();
    let hit = estimate_dominator_hit(&model, 5.0, 4000, 11, &serial()).unwrap();
    let oracle = dominator_oracle(4, 1.0, 0.5, 10.0, 2, 5.0);
    assert!((hit.exact - oracle).abs() < 1e-9, "{} vs {oracle}", hit.exact);
    assert!(hit.interval.contains(oracle), "{hit:?} vs {oracle}");
}

#[test]
fn dominator_hit_grows_with_allee_death_rate() {
    let exact: Vec<f64> = [2.0, 5.0, 10.0, 50.0]
        .iter()
        .map(|&pa| {
            let model = ModelSpec::model_ii(0.5, pa, 1.0, 4, 2).unwrap();
            estimate_dominator_hit(&model, 5.0, 10, 1, &serial()).unwrap().exact
        })
        .collect();
    assert!(exact.windows(2).all(|w| w[0] < w[1]), "{exact:?}");
}

#[test]
fn dominator_hit_at_time_zero_is_zero() {
    let model = ModelSpec::model_ii(0.5, 10.0, 1.0, 4, 2).unwrap();
    let hit = estimate_dominator_hit(&model, 0.0, 200, 1, &serial()).unwrap();
    assert_eq!(hit.hits, 0);
    assert!(hit.exact.abs() < 1e-12);
}

#[test]
fn supercritical_oriented_percolation_usually_percolates() {
    let hits = (0..200)
        .filter(|&r| simulate_oriented_percolation(200, 200, 0.8, 0, RngSeed::new(5, r)).unwrap().percolates)
        .count();
    assert!(hits as f64 / 200.0 >= 0.9, "{hits}/200");
}

#[test]
fn shared_uniforms_keep_groups_together() {
    let run = simulate_oriented_percolation(30, 10, 0.6, 2, RngSeed::new(9, 0)).unwrap();
    // With a shared uniform per group and row, reached sites never contradict
    // an open/closed decision within a group: a closed group has no reached
    // site in that row.
    let open = simulate_oriented_percolation(30, 10, 1.0, 2, RngSeed::new(9, 0)).unwrap();
    for (n, row) in run.reached.iter().enumerate() {
        for (m, &r) in row.iter().enumerate() {
            assert!(!r || open.reached[n][m]);
            assert!(!r || (m + n) % 2 == 0);
        }
    }
}

#[test]
fn edge_event_does_not_decrease_with_capacity() {
    let estimates: Vec<EdgeEventEstimate> = [10, 20, 40]
        .iter()
        .map(|&n| {
            let model = ModelSpec::model_iii(0.3, 1000.0, 1.0, n, 2, 3).unwrap();
            estimate_edge_event(&model, 2, 200.0, 400, 17, &serial()).unwrap()
        })
        .collect();
    for w in estimates.windows(2) {
        assert!(w[1].interval.hi >= w[0].interval.lo, "{estimates:#?}");
    }
    assert!(estimates.iter().all(|e| e.undecided == 0), "{estimates:#?}");
}

#[test]
fn wet_probability_with_deaths_respects_the_death_free_bound() {
    let (phi, n, l, t, reps) = (0.0005, 3u32, 1u32, 15.0, 400u64);
    let model = ModelSpec::model_i(phi, 1.0, n).unwrap();
    let without = estimate_wet_probability(&model, l, t, reps, 21, true, &serial()).unwrap();
    let with = estimate_wet_probability(&model, l, t, reps, 22, false, &serial()).unwrap();
    let factor = (-phi * n as f64 * (8.0 * l as f64).powi(2) * t).exp();
    let se = |p: f64| (p * (1.0 - p) / reps as f64).sqrt();
    let bound = without.frequency * factor;
    assert!(without.frequency > 0.2, "{without:?}");
    assert!(with.frequency >= bound - 3.0 * se(with.frequency).max(se(bound)), "{} < {bound}", with.frequency);
}

#[test]
fn block_windows_have_the_documented_boundaries() {
    for l in 1..4 {
        let wet = BlockSpec { kind: BlockKind::SurvivalBlock, l, t: 1.0 };
        let dry = BlockSpec { kind: BlockKind::ExtinctionBlock, l, t: 1.0 };
        let (ww, dw) = (wet.window().unwrap(), dry.window().unwrap());
        assert_eq!(ww.sides(), &[8 * l as usize - 1; 2]);
        assert_eq!(dw.sides(), &[4 * l as usize - 1; 2]);
        assert_eq!(ww.boundary(), Boundary::ZeroOutside);
        assert_eq!(dw.boundary(), Boundary::FrozenFullOutside);
    }
}

#[test]
fn dry_block_needs_an_allee_model() {
    let model = ModelSpec::model_i(0.5, 1.0, 4).unwrap();
    assert!(estimate_dry_probability(&model, 1, 1.0, 10, 1, &serial()).is_err());
    let model = ModelSpec::model_ii(0.5, 5.0, 1.0, 4, 2).unwrap();
    let est = estimate_dry_probability(&model, 1, 0.0, 10, 1, &serial()).unwrap();
    // Starting full, the inner box cannot be empty at time 0.
    assert_eq!(est.successes, 0);
}

#[test]
fn visit_counts_agree_with_ruin_formula() {
    for n in [10u32, 20, 30] {
        let model = ModelSpec::model_iii(0.3, 50.0, 1.0, n, 2, 3).unwrap();
        let target = 300;
        let est = estimate_visit_count(&model, target, 2000, RngSeed::new(31, n as u64)).unwrap();
        // Gambler's ruin with ratio q/p = phi: from top - 1, reach top before 2.
        let (phi, top) = (0.3f64, (n - 3 + 1) as i32);
        let ret = (1.0 - phi.powi(top - 1 - 2)) / (1.0 - phi.powi(top - 2));
        let exact = ret.powi(target as i32);
        assert!((est.exact - exact).abs() < 1e-12);
        assert!(exact >= est.bound - 1e-12, "N = {n}: {exact} < {}", est.bound);
        assert!((est.estimate - exact).abs() <= 3.0 * est.se + 2e-3, "N = {n}: {est:?}");
    }
}
