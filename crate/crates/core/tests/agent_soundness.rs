mod common;

use common::agent_scene;
use rvt_core::agent::{Executor, NodeValue};
use rvt_core::benchgen::extract_ground_truth_masks;
use rvt_core::dtcore::GroundTruth;
use rvt_core::metrics::jaccard;

fn selected(trace: &[(String, NodeValue)], node: &str) -> Vec<String> {
    match &trace.iter().find(|(id, _)| id == node).unwrap().1 {
        NodeValue::Instances(s) => agent_scene::ids(s).into_iter().map(String::from).collect(),
        other => panic!("{other:?}"),
    }
}

#[test]
fn three_node_plan_reproduces_the_target_masks() {
    let twin = agent_scene::twin();
    let run = Executor::new(None, None).execute(&agent_scene::three_node(), &twin, "q").unwrap();
    let GroundTruth::MaskSequence(pred) = &run.output else { panic!() };
    let gt = extract_ground_truth_masks(&twin, "obj_001").unwrap();
    assert_eq!(jaccard(&gt, pred).unwrap(), 1.0);
    assert_eq!(&gt, pred);
}

#[test]
fn spatial_filter_keeps_the_bear_in_front() {
    let twin = agent_scene::twin();
    let run = Executor::new(None, None).execute(&agent_scene::spatial(), &twin, "q").unwrap();
    assert_eq!(selected(&run.trace, "bears"), ["obj_001", "obj_003"]);
    assert_eq!(selected(&run.trace, "front"), ["obj_001"]);
}

#[test]
fn temporal_filter_keeps_the_late_cub() {
    let twin = agent_scene::twin();
    let run = Executor::new(None, None).execute(&agent_scene::temporal(), &twin, "q").unwrap();
    assert_eq!(selected(&run.trace, "late"), ["obj_003"]);
    let GroundTruth::MaskSequence(pred) = &run.output else { panic!() };
    let gt = extract_ground_truth_masks(&twin, "obj_003").unwrap();
    assert_eq!(jaccard(&gt, pred).unwrap(), 1.0);
}

#[test]
fn execution_is_deterministic() {
    let twin = agent_scene::twin();
    let a = Executor::new(None, None).execute(&agent_scene::spatial(), &twin, "q").unwrap();
    let b = Executor::new(None, None).execute(&agent_scene::spatial(), &twin, "q").unwrap();
    assert_eq!(a.output, b.output);
}
