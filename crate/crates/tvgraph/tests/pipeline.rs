//! Cross-module checks: a clique-detection spot check on planted structure
//! and randomized invariants of the graph and kernel layers.

use nalgebra::DMatrix;
use proptest::prelude::*;

use tvgraph::data::{self, PrecisionPath};
use tvgraph::graph::{self, from_mask, GraphProperty};
use tvgraph::kernel::{kernel_weights, KernelSpec};
use tvgraph::stepdown::{self, LambdaRule, TestConfig};

#[test]
fn planted_triangle_rejects_clique_bound() {
    let d = 8;
    let mut theta = DMatrix::<f64>::identity(d, d);
    for &(j, k) in &[(0usize, 1usize), (1, 2), (0, 2)] {
        theta[(j, k)] = 0.45;
        theta[(k, j)] = 0.45;
    }
    let anchors = vec![(0.0, theta.clone()), (0.2, theta.clone()), (0.5, theta)];
    let path = PrecisionPath::from_anchors(anchors, 2).unwrap();
    let lx = data::generate_nuisance(d, 91).unwrap();
    let ly = data::generate_nuisance(d, 92).unwrap();
    let ds = data::sample_dataset(&path, &lx, &ly, 700, 0.05, 93).unwrap();
    let cfg = TestConfig {
        b_boot: 150,
        grid_size: 15,
        seed: 94,
        lambda: LambdaRule::Scaled(0.9),
        ..Default::default()
    };
    let out = stepdown::stepdown_test(&ds, &GraphProperty::CliqueGreater(2), &cfg).unwrap();
    assert!(out.reject, "a strong planted triangle should exceed the clique bound");
}

fn arb_property() -> impl Strategy<Value = GraphProperty> {
    prop_oneof![
        Just(GraphProperty::Connected),
        (0usize..4).prop_map(GraphProperty::ComponentsAtMost),
        (0usize..4).prop_map(GraphProperty::MaxDegreeGreater),
        (0usize..4).prop_map(GraphProperty::IsolatedAtMost),
        (1usize..4).prop_map(GraphProperty::CliqueGreater),
    ]
}

proptest! {
    #[test]
    fn critical_edges_are_absent_edges(mask in 0u32..(1 << 15), p in arb_property()) {
        let g = from_mask(mask, 6);
        let crit = graph::critical_set(&g, &p);
        for (j, k) in crit.iter() {
            prop_assert!(!g.contains(j, k), "critical edge ({j},{k}) already present");
        }
        if graph::eval_property(&p, &g) {
            prop_assert!(crit.is_empty(), "no edge is critical once the property holds");
        }
    }

    #[test]
    fn relabeling_round_trips(mask in 0u32..(1 << 15), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let g = from_mask(mask, 6);
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut tvgraph::seeding::rng_for(seed, "perm", 0));
        let mut inverse = vec![0usize; 6];
        for (i, &v) in perm.iter().enumerate() {
            inverse[v] = i;
        }
        prop_assert_eq!(g.relabeled(&perm).relabeled(&inverse), g);
    }

    #[test]
    fn kernel_weights_form_a_distribution(
        z in prop::collection::vec(0.0f64..1.0, 10..40),
        q in 0.0f64..1.0,
        h in 0.05f64..0.8,
    ) {
        let zv = nalgebra::DVector::from_vec(z);
        let spec = KernelSpec::epanechnikov(h);
        match kernel_weights(&zv, q, &spec) {
            Ok(w) => {
                prop_assert!(w.w.iter().all(|&v| v >= 0.0));
                // raw weights; kernel_mass is their mean, so this normalizes
                let total: f64 = w.w.iter().sum();
                prop_assert!((total / (w.kernel_mass * w.w.len() as f64) - 1.0).abs() < 1e-12);
                prop_assert!(w.support_fraction > 0.0 && w.support_fraction <= 1.0);
            }
            Err(tvgraph::error::Error::NoSupport { .. }) => {} // legitimately empty window
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
        }
    }

    #[test]
    fn rank_auc_stays_in_unit_interval(
        scores in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..60)
    ) {
        let a = stepdown::auc(&scores);
        if !a.is_nan() {
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
