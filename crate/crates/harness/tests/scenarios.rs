use std::path::PathBuf;

use reactor_harness::scenario::{run_scenario_blocking, Scenario};

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn shipped_scenarios_pass() {
    let mut paths: Vec<_> = std::fs::read_dir(scenario_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    assert!(paths.len() >= 5);
    for path in paths {
        let scenario = Scenario::from_file(&path).unwrap();
        let result = run_scenario_blocking(&scenario).unwrap();
        assert!(result.passed, "{}:\n{}\n{:#?}", path.display(), result.to_table(), result.transcripts);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let scenario = Scenario::from_file(scenario_dir().join("robustness.scenario")).unwrap().with_seed(7);
    let a = run_scenario_blocking(&scenario).unwrap().to_json();
    let b = run_scenario_blocking(&scenario).unwrap().to_json();
    assert_eq!(a, b);
    let fanout = Scenario::from_file(scenario_dir().join("fanout.scenario")).unwrap();
    let a = run_scenario_blocking(&fanout).unwrap();
    let b = run_scenario_blocking(&fanout).unwrap();
    assert_eq!(a.transcripts, b.transcripts);
    assert_eq!(a.to_json(), b.to_json());
}
