use fcvp_core::clothsim::{ClothParams, GarmentSpec};
use fcvp_core::controllers::{rollout_recording, ProposerController, RolloutMeta};
use fcvp_core::env::{EnvSettings, EpisodeConfig, Trajectory};
use fcvp_core::force::samples_from_rollout;
use fcvp_core::geometry::ArmPoseSpec;
use fcvp_core::policy::ScriptedPolicy;
use fcvp_harness::io::{load_dataset, load_trajectory, read_trajectory, save_dataset, save_trajectory, DatasetMeta};
use fcvp_harness::HarnessError;

fn recorded_episode() -> (Trajectory, Vec<fcvp_core::force::TransitionSample>) {
    let cfg = EpisodeConfig {
        horizon: 12,
        force_threshold: 200.0,
        arm_spec: ArmPoseSpec::default(),
        cloth_params: ClothParams::sim_b(),
        garment: GarmentSpec::default(),
        seed: 17,
        settings: EnvSettings::default(),
    };
    let scripted = ScriptedPolicy::default();
    let controller = ProposerController::mixture("scripted", &scripted, 0.5, 0);
    let meta = RolloutMeta {
        method: "scripted".into(),
        pose_region: "desk".into(),
        garment_id: "sleeve".into(),
    };
    let (traj, obs) = rollout_recording(&cfg, &controller, meta, 17).unwrap();
    let samples = samples_from_rollout(0, &obs, &traj, 3);
    (traj, samples)
}

#[test]
fn trajectories_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, _) = recorded_episode();
    let path = dir.path().join("t.jsonl");
    save_trajectory(&path, &traj).unwrap();
    let back = load_trajectory(&path).unwrap();
    assert_eq!(back, traj);
    for (a, b) in back.steps.iter().zip(&traj.steps) {
        assert_eq!(a.force.magnitude.to_bits(), b.force.magnitude.to_bits());
    }
}

#[test]
fn datasets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, samples) = recorded_episode();
    let meta = DatasetMeta {
        target: "force".into(),
        stored_history: 3,
        kept_episodes: 1,
        dropped_episodes: vec![(4, "diverged".into())],
    };
    let path = dir.path().join("d.jsonl");
    save_dataset(&path, &meta, &samples).unwrap();
    let (m, s) = load_dataset(&path).unwrap();
    assert_eq!(m, meta);
    assert_eq!(s, samples);
}

#[test]
fn a_truncated_final_line_reports_its_line_number() {
    let (traj, _) = recorded_episode();
    let mut buf = Vec::new();
    fcvp_harness::io::write_trajectory(&mut buf, &traj).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines = text.lines().count();
    let cut = &text[..text.len() - 40];
    match read_trajectory(cut.as_bytes(), "cut.jsonl") {
        Err(HarnessError::Parse { path, line, .. }) => {
            assert_eq!(path, "cut.jsonl");
            assert_eq!(line, lines);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn a_foreign_schema_version_on_a_step_is_rejected() {
    let (traj, _) = recorded_episode();
    let mut buf = Vec::new();
    fcvp_harness::io::write_trajectory(&mut buf, &traj).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let edited: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 4 {
                l.replace("\"schema_version\":1", "\"schema_version\":9")
            } else {
                l.to_string()
            }
        })
        .collect();
    let err = read_trajectory(edited.join("\n").as_bytes(), "v.jsonl").unwrap_err();
    assert!(matches!(err, HarnessError::Schema { line: 5, found: 9, expected: 1, .. }), "{err}");
    assert!(err.to_string().contains("v.jsonl:5"));
}
