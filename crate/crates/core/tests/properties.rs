#![allow(clippy::needless_range_loop)]

mod common;

use advimmune::certifier::{class_pairs, margin};
use advimmune::immunizer::greedy_immunize;
use advimmune::{AttackConfig, ImmuneMask, ImmunizeOptions};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ppr_rows_are_distributions(seed in any::<u64>(), n in 2usize..30, alpha in 0.01f64..0.99) {
        let g = random_connected(&mut rng(seed), n, 0.1);
        let pi = advimmune::ppr::ppr_full(g.adjacency(), alpha).unwrap();
        for i in 0..n {
            let row = pi.matrix().row(i);
            prop_assert!((row.sum() - 1.0).abs() < 1e-8);
            prop_assert!(row.iter().all(|&x| x >= -1e-15));
            // the walk returns to its start at least with the teleport mass
            prop_assert!(row[i] >= 1.0 - alpha - 1e-12);
        }
    }

    #[test]
    fn ppr_row_agrees_with_full(seed in any::<u64>(), n in 2usize..25, alpha in 0.05f64..0.95) {
        let g = random_connected(&mut rng(seed), n, 0.2);
        let pi = advimmune::ppr::ppr_full(g.adjacency(), alpha).unwrap();
        let t = (seed as usize) % n;
        let row = advimmune::ppr::ppr_row(g.adjacency(), alpha, t).unwrap();
        for j in 0..n {
            prop_assert!((row[j] - pi.matrix()[(t, j)]).abs() < 1e-10);
        }
    }

    #[test]
    fn clean_margins_are_antisymmetric(seed in any::<u64>(), n in 2usize..20) {
        let mut r = rng(seed);
        let g = random_connected(&mut r, n, 0.2);
        let h = random_logits(&mut r, n, 3);
        for t in 0..n {
            let a = margin(t, 0, 2, g.adjacency(), &h, 0.85).unwrap();
            let b = margin(t, 2, 0, g.adjacency(), &h, 0.85).unwrap();
            prop_assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn worst_case_never_exceeds_clean(seed in any::<u64>()) {
        let inst = random_instance(&mut rng(seed), 15);
        let base = inst.graph.adjacency();
        for (&(y, k), margins) in &inst.certificate.pair_margins {
            for (t, &m) in margins.iter().enumerate() {
                let clean = margin(t, y, k, base, &inst.logits, inst.alpha).unwrap();
                prop_assert!(m <= clean + 1e-10, "pair ({y}, {k}) node {t}: {m} > {clean}");
            }
        }
    }

    #[test]
    fn greedy_respects_budgets(seed in any::<u64>(), budget in 0usize..12) {
        let inst = random_instance(&mut rng(seed), 12);
        let n = inst.graph.num_nodes();
        let local: Vec<Option<usize>> = inst.graph.degrees().into_iter().map(Some).collect();
        let mask = ImmuneMask::new(n, budget, local.clone()).unwrap();
        let out = greedy_immunize(
            inst.graph.adjacency(), &inst.logits, inst.alpha, &inst.certificate.predictions,
            &inst.certificate.deltas, mask, ImmunizeOptions::default(),
        ).unwrap();
        prop_assert!(out.mask.num_immunized() <= budget);
        out.mask.check_feasible().unwrap();
        for t in 0..n {
            prop_assert!(out.mask.incident(t) <= local[t].unwrap());
        }
    }
}

#[test]
fn smaller_budget_runs_are_prefixes() {
    for seed in 0..20 {
        let inst = random_instance(&mut rng(seed), 12);
        let n = inst.graph.num_nodes();
        let run = |c| {
            greedy_immunize(
                inst.graph.adjacency(),
                &inst.logits,
                inst.alpha,
                &inst.certificate.predictions,
                &inst.certificate.deltas,
                ImmuneMask::new(n, c, vec![None; n]).unwrap(),
                ImmunizeOptions::default(),
            )
            .unwrap()
            .mask
        };
        let big = run(8);
        for c in 0..8 {
            assert_eq!(run(c).trace(), big.prefix(c).trace(), "seed {seed} budget {c}");
        }
    }
}

#[test]
fn robust_count_grows_along_the_greedy_path() {
    for seed in 0..20 {
        let inst = random_instance(&mut rng(seed), 12);
        let n = inst.graph.num_nodes();
        let config = AttackConfig {
            alpha: inst.alpha,
            max_iterations: 200,
        };
        let full = greedy_immunize(
            inst.graph.adjacency(),
            &inst.logits,
            inst.alpha,
            &inst.certificate.predictions,
            &inst.certificate.deltas,
            ImmuneMask::unconstrained(n),
            ImmunizeOptions::default(),
        )
        .unwrap();
        let mut last = inst.certificate.num_robust();
        for c in 1..=full.mask.num_immunized() {
            let eval = advimmune::evaluate_immunization(
                inst.graph.adjacency(),
                &inst.logits,
                &inst.spec,
                &full.mask.prefix(c),
                &config,
            )
            .unwrap();
            let now = eval.certificate.num_robust();
            assert!(now >= last, "seed {seed}: {last} -> {now} at budget {c}");
            last = now;
        }
    }
}

/// Greedy against the best mask of the same size on tiny graphs; the gap is logged, not asserted.
#[test]
fn greedy_gap_to_exhaustive_search() {
    let mut gaps = Vec::new();
    for seed in 0..15 {
        let inst = random_instance(&mut rng(1000 + seed), 7);
        let n = inst.graph.num_nodes();
        let config = AttackConfig {
            alpha: inst.alpha,
            max_iterations: 200,
        };
        let support: Vec<(usize, usize)> = mask_values(&inst.certificate.deltas, &ImmuneMask::unconstrained(n))
            .into_keys()
            .collect();
        let robust = |entries: &[(usize, usize)]| {
            let mask = ImmuneMask::from_entries(n, entries).unwrap();
            advimmune::evaluate_immunization(inst.graph.adjacency(), &inst.logits, &inst.spec, &mask, &config)
                .unwrap()
                .certificate
                .num_robust()
        };
        for c in 1..=2.min(support.len()) {
            let greedy = greedy_immunize(
                inst.graph.adjacency(),
                &inst.logits,
                inst.alpha,
                &inst.certificate.predictions,
                &inst.certificate.deltas,
                ImmuneMask::new(n, c, vec![None; n]).unwrap(),
                ImmunizeOptions::default(),
            )
            .unwrap();
            let greedy_entries: Vec<_> = greedy.mask.entries().collect();
            let g = robust(&greedy_entries);
            let best = if c == 1 {
                support.iter().map(|&e| robust(&[e])).max().unwrap()
            } else {
                let mut best = 0;
                for a in 0..support.len() {
                    for b in (a + 1)..support.len() {
                        best = best.max(robust(&[support[a], support[b]]));
                    }
                }
                best
            };
            assert!(best >= g);
            gaps.push(best - g);
        }
    }
    let total: usize = gaps.iter().sum();
    println!(
        "greedy gap to exhaustive: {total} nodes over {} cases, max {}",
        gaps.len(),
        gaps.iter().max().unwrap_or(&0)
    );
}

#[test]
fn pair_list_is_complete() {
    assert_eq!(class_pairs(3).len(), 6);
}
