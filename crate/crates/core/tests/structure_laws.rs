mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use rvt_core::dtcore::{Bitmap, DepthRelation, DepthStats};
use rvt_core::perception::{compute_depth_stats, derive_spatial_description, DepthMap, PerceptionConfig, SpatialInput};
use rvt_core::treegen::extract_level_subtree;

fn dag_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..14).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..30)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn level_subtrees_nest_and_match_frontier_expansion((n, pairs) in dag_strategy()) {
        let tree = dag(n, &pairs);
        let edge_pairs: Vec<(String, String)> = tree.edges.iter().map(|e| (e.from.clone(), e.to.clone())).collect();
        let mut prev: Option<BTreeSet<String>> = None;
        for level in 1..=4u8 {
            let sub = extract_level_subtree(&tree, level);
            prop_assert_eq!(&sub.root_id, &tree.root_id);
            let nodes: BTreeSet<String> = sub.nodes.iter().map(|n| n.node_id.clone()).collect();
            prop_assert_eq!(&nodes, &reachable_within("n0", &edge_pairs, level as u32));
            let edges: BTreeSet<(String, String)> = sub.edges.iter().map(|e| (e.from.clone(), e.to.clone())).collect();
            let want: BTreeSet<(String, String)> =
                edge_pairs.iter().filter(|(f, t)| nodes.contains(f) && nodes.contains(t)).cloned().collect();
            prop_assert_eq!(edges, want);
            if let Some(p) = &prev {
                prop_assert!(p.is_subset(&nodes));
            }
            prev = Some(nodes);
        }
    }

    #[test]
    fn depth_stats_equal_exact_accumulation(
        (h, w, values, mask) in (1usize..12, 1usize..12).prop_flat_map(|(h, w)| (
            Just(h), Just(w),
            prop::collection::vec(0u32..=255, h * w),
            prop::collection::vec(any::<bool>(), h * w),
        ))
    ) {
        prop_assume!(mask.iter().any(|m| *m));
        let map = DepthMap::new(h, w, values.iter().map(|v| *v as f32).collect()).unwrap();
        let bm = Bitmap::from_rows(h, w, mask.clone()).unwrap();
        let got = compute_depth_stats(&map, &bm).unwrap();
        let inside: Vec<u32> = values.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
        let (mean, std) = exact_mean_std(&inside);
        prop_assert_eq!(got.mean, mean);
        prop_assert!((got.std - std).abs() <= 1e-9);
    }

    #[test]
    fn same_distance_iff_within_threshold(a in 0.0f64..255.0, b in 0.0f64..255.0) {
        let config = PerceptionConfig::default();
        let input = |id: &str, mean: f64, x: f64| SpatialInput {
            instance_id: id.into(),
            label: None,
            centroid: [x, 10.0],
            depth: Some(DepthStats { mean, std: 0.0 }),
        };
        let (_, rels) = derive_spatial_description(&[input("a", a, 5.0), input("b", b, 40.0)], [64, 64], &config).unwrap();
        prop_assert_eq!(rels.len(), 1);
        prop_assert_eq!(rels[0].depth == DepthRelation::SameDistance, (a - b).abs() <= 10.0);
    }
}
