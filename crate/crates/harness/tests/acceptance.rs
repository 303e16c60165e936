//! Acceptance suite: one line per criterion, printed before any assertion
//! so a failing criterion never hides the others. Run with
//! `cargo test -p fcvp-harness --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fcvp_core::clothsim::{
    build_sleeve, internal_forces, ClothParams, ClothState, GarmentSpec, GripperState, RigidDelta, SleeveTopology,
    Spring, SpringKind,
};
use fcvp_core::controllers::{
    fcvp_select, force_only_cost, sample_candidates, select_index, ForceOnlyConfig, StepContext,
};
use fcvp_core::env::{average_force_violation, compute_reward, Action, DressingEnv};
use fcvp_core::force::{ForceHistory, ForceModel};
use fcvp_core::geometry::{ArmModel, ArmPoseSpec};
use fcvp_core::neural::{Activation, MlpModel, ModelSpec, PointFeature, POINT_DIM};
use fcvp_core::policy::{AnyPolicy, GaussianPolicy};
use fcvp_core::rng::rng_for;
use fcvp_core::Vec3;
use fcvp_harness::config::{ExperimentConfig, Method};
use fcvp_harness::io::ResultRow;
use fcvp_harness::pipeline::{self, Models};
use fcvp_harness::{cli, grid};
use rand::Rng;

/// Minimum relative sim A / sim B gap in mean episode force.
const SIM_GAP_MIN: f64 = 0.20;
const SIM_GAP_BUDGET: Duration = Duration::from_secs(120);
/// FCVP violation must be at most this fraction of Vision Only's.
const VIOLATION_RATIO_MAX: f64 = 0.50;
/// Allowed dressed-ratio loss of FCVP against Vision Only.
const DRESSED_SLACK: f64 = 0.15;
const MIN_CELLS: usize = 8;
const EXPERIMENT_BUDGET: Duration = Duration::from_secs(20 * 60);
/// Relative slack on each step of the history-length ordering.
const ABLATION_SLACK: f64 = 0.05;
const ABLATION_REGION: &str = "desk";
const SELECTION_TRIALS: usize = 1000;
const GRAD_DRAWS: usize = 10;
const GRAD_EPS: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const FORMULA_TOL: f64 = 1e-12;
const OSCILLATOR_TOL: f64 = 1e-3;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.toml")
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn rows_for<'a>(rows: &'a [ResultRow], method: &str) -> Vec<&'a ResultRow> {
    rows.iter().filter(|r| r.method == method).collect()
}

fn sim_gap(cfg: &ExperimentConfig) -> Verdict {
    let start = Instant::now();
    let episode_force = |params: &ClothParams| {
        mean(grid::eval_cells_in(cfg, params).iter().map(|cell| {
            let traj = pipeline::run_cell(cfg, &Models::default(), Method::Scripted, cell).unwrap();
            mean(traj.forces())
        }))
    };
    let a = episode_force(&cfg.sim_a);
    let b = episode_force(&cfg.sim_b);
    let gap = (b - a).abs() / a;
    let took = start.elapsed();
    Verdict {
        id: 1,
        name: "sim2sim force gap",
        pass: gap >= SIM_GAP_MIN && took <= SIM_GAP_BUDGET,
        detail: format!(
            "mean force A {a:.2}, B {b:.2}, gap {:.1}% (need >= {:.0}%), {:.1}s",
            100.0 * gap,
            100.0 * SIM_GAP_MIN,
            took.as_secs_f64()
        ),
    }
}

fn brute_force(forces: &[f64], log_probs: &[f64], tau: f64) -> usize {
    let feasible: Vec<usize> = (0..forces.len()).filter(|&i| forces[i] <= tau).collect();
    if feasible.is_empty() {
        (0..forces.len()).fold(0, |b, i| if forces[i] < forces[b] { i } else { b })
    } else {
        feasible
            .iter()
            .copied()
            .fold(feasible[0], |b, i| if log_probs[i] > log_probs[b] { i } else { b })
    }
}

fn selection_oracle(cfg: &ExperimentConfig, policy: &GaussianPolicy, model: &ForceModel) -> Verdict {
    let cell = &grid::eval_cells(cfg)[0];
    let (env, obs) = DressingEnv::reset(cell.episode.clone()).unwrap();
    let features = obs.features();
    let mut rng = rng_for(99, &[]);
    let mut mismatches = 0;
    let mut infeasible = 0;
    for trial in 0..SELECTION_TRIALS {
        let window = (0..model.history_len())
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 150.0)
            .collect();
        let history = ForceHistory::from_window(window);
        let ctx = StepContext {
            observation: &obs,
            features: &features,
            history: &history,
            arm: env.arm(),
            dressed_distance: env.dressed_distance(),
            step: trial % cfg.experiment.horizon,
        };
        let k = rng.random_range(1..=cfg.experiment.k);
        let p = rng.random::<f64>();
        let seed = rng.random();
        let set = sample_candidates(policy, model, &ctx, k, p, seed);
        let mut sorted = set.predicted_forces.clone();
        sorted.sort_by(f64::total_cmp);
        let tau = match trial % 3 {
            0 => (sorted[0] - 1.0).max(1e-3),
            1 => sorted[rng.random_range(0..k)].max(1e-3),
            _ => (sorted[0] + rng.random::<f64>() * (sorted[k - 1] - sorted[0] + 1.0)).max(1e-3),
        };
        let fcfg = fcvp_core::controllers::FcvpConfig {
            k,
            tau,
            p,
            resample_budget: 0,
        };
        let want = brute_force(&set.predicted_forces, &set.log_probs, tau);
        let (action, diag) = fcvp_select(policy, model, &ctx, &fcfg, seed);
        let (idx, _) = select_index(&set.predicted_forces, &set.log_probs, tau);
        if idx != want || action != set.actions[want] || diag.chosen_predicted_force != set.predicted_forces[want] {
            mismatches += 1;
        }
        if diag.feasible_count == 0 {
            infeasible += 1;
        }
    }
    Verdict {
        id: 6,
        name: "selection matches enumeration",
        pass: mismatches == 0,
        detail: format!("{mismatches}/{SELECTION_TRIALS} mismatches ({infeasible} all-infeasible sets)"),
    }
}

fn gradient_suite() -> Verdict {
    let mut worst: f64 = 0.0;
    for draw in 0..GRAD_DRAWS {
        let mut rng = rng_for(4242, &[draw as u64]);
        let n_enc = rng.random_range(0..3);
        let mut widths = |n: usize| (0..n).map(|_| rng.random_range(2..7)).collect::<Vec<usize>>();
        let encoder = widths(n_enc);
        let head_hidden = widths(draw % 3);
        let spec = ModelSpec {
            encoder,
            head_hidden,
            output_dim: 1 + draw % 3,
            extra_dim: 1 + draw % 4,
            hidden_activation: [Activation::Relu, Activation::Tanh][draw % 2],
            output_activation: [Activation::Tanh, Activation::Identity][draw % 2],
        };
        let mut model = MlpModel::from_spec(&spec, 100 + draw as u64).unwrap();
        let n_points = if spec.encoder.is_empty() { 0 } else { 1 + draw % 6 };
        let points: Vec<PointFeature> = (0..n_points)
            .map(|_| std::array::from_fn::<f64, POINT_DIM, _>(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let extras: Vec<f64> = (0..spec.extra_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..spec.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = model.forward(&points, &extras).unwrap();
        let analytic = model.backward(&cache, &w);
        let params = model.params();
        let objective = |model: &mut MlpModel, p: &[f64]| {
            model.set_params(p).unwrap();
            let out = model.predict(&points, &extras).unwrap();
            out.iter().zip(&w).map(|(o, w)| o * w).sum::<f64>()
        };
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += GRAD_EPS;
            let up = objective(&mut model, &p);
            p[i] = params[i] - GRAD_EPS;
            let down = objective(&mut model, &p);
            let numeric = (up - down) / (2.0 * GRAD_EPS);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(GRAD_EPS);
            worst = worst.max(err);
        }
    }
    Verdict {
        id: 7,
        name: "gradients match finite differences",
        pass: worst < GRAD_TOL,
        detail: format!("worst relative error {worst:.2e} over {GRAD_DRAWS} draws (limit {GRAD_TOL:.0e})"),
    }
}

fn formula_suite() -> Verdict {
    let mut failures = Vec::new();
    let mut check = |label: &str, got: f64, want: f64| {
        if (got - want).abs() > FORMULA_TOL {
            failures.push(format!("{label}: {got} != {want}"));
        }
    };
    // d_e, d_g chosen to isolate each term
    check("r_d near", compute_reward(0.0, 0.5, 0.02, 0.0).r_d, 0.02);
    check("r_d far", compute_reward(0.0, 0.5, 0.08, 0.0).r_d, -0.05);
    check("r_d mid", compute_reward(0.0, 0.5, 0.05, 0.0).r_d, 0.0);
    check("r_c inside", compute_reward(0.0, 0.009, 0.05, 0.0).r_c, -0.01);
    check("r_c at d_min", compute_reward(0.0, 0.01, 0.05, 0.0).r_c, 0.0);
    check("r_p below", compute_reward(999.0, 0.5, 0.05, 0.0).r_p, 0.0);
    check("r_p above", compute_reward(1500.0, 0.5, 0.05, 0.0).r_p, -0.5);
    let r = compute_reward(1200.0, 0.005, 0.02, 0.01);
    check("total", r.total, r.r_m - 0.2 - 0.01 + 0.02);
    let a = Action {
        translation: [0.5, 0.0, 0.0],
        rotation: [0.0; 3],
    };
    check(
        "J",
        force_only_cost(10.0, &Vec3::x(), &a, &ForceOnlyConfig::default()),
        -0.465,
    );
    let mut forces = vec![1e6; 25];
    forces.extend([50.0, 150.0, 250.0]);
    check("violation skip 25", average_force_violation(&forces, 100.0, 25).unwrap(), 200.0 / 3.0);
    Verdict {
        id: 8,
        name: "reward, cost and metric formulas",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("all cases exact to {FORMULA_TOL:.0e}")
        } else {
            failures.join("; ")
        },
    }
}

fn default_arm() -> ArmModel {
    ArmModel::from_pose(&ArmPoseSpec::default()).unwrap()
}

fn oscillator_error() -> f64 {
    let (m, k, c, dt, rest, amp) = (0.05, 5.0, 0.02, 1e-3, 0.1, 0.05);
    let params = ClothParams {
        stretch_stiffness: k,
        damping: c,
        drag: 0.0,
        particle_mass: m,
        dt,
        substeps: 1,
        gravity: [0.0; 3],
        ..ClothParams::sim_a()
    };
    let anchor = Vec3::new(5.0, 5.0, 5.0);
    let spring = Spring {
        a: 0,
        b: 1,
        rest,
        kind: SpringKind::Stretch,
    };
    let topo = SleeveTopology::network(2, vec![spring]).unwrap();
    let gripper = GripperState {
        position: anchor,
        orientation: Vec3::zeros(),
        attached: true,
    };
    let x0 = vec![anchor, anchor + Vec3::x() * (rest + amp)];
    let mut state = ClothState::from_parts(x0, vec![Vec3::zeros(); 2], vec![0], gripper).unwrap();
    let w0 = (k / m).sqrt();
    let zeta = c / (2.0 * (k * m).sqrt());
    let wd = w0 * (1.0 - zeta * zeta).sqrt();
    let arm = default_arm();
    (1..=100)
        .map(|i| {
            state.step(&topo, &params, &RigidDelta::default(), &arm).unwrap();
            let t = i as f64 * dt;
            let exact = (-zeta * w0 * t).exp() * amp * ((wd * t).cos() + zeta * w0 / wd * (wd * t).sin());
            (state.positions[1].x - anchor.x - rest - exact).abs()
        })
        .fold(0.0, f64::max)
}

fn distant_sleeve() -> (SleeveTopology, ClothState) {
    let topo = SleeveTopology::tube(&GarmentSpec::default()).unwrap();
    let arm = default_arm();
    let g = GripperState::initial(&arm, &topo);
    let s = build_sleeve(&topo, &arm, &g).unwrap();
    let shift = Vec3::new(10.0, 0.0, 0.0);
    let gripper = GripperState {
        position: g.position + shift,
        ..g
    };
    let positions = s.positions.iter().map(|p| p + shift).collect();
    let state = ClothState::from_parts(positions, s.velocities.clone(), s.grasped.clone(), gripper).unwrap();
    (topo, state)
}

fn physics_suite() -> Verdict {
    let mut rng = rng_for(77, &[]);
    let mut worst_momentum: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..12);
        let links = (0..rng.random_range(1..30))
            .map(|_| {
                let a = rng.random_range(0..n);
                Spring {
                    a,
                    b: (a + rng.random_range(1..n)) % n,
                    rest: rng.random_range(0.01..0.2),
                    kind: SpringKind::Shear,
                }
            })
            .collect();
        let topo = SleeveTopology::network(n, links).unwrap();
        let mut v = |s: f64| Vec3::new(rng.random(), rng.random(), rng.random()) * s;
        let x: Vec<Vec3> = (0..n).map(|_| v(0.3)).collect();
        let u: Vec<Vec3> = (0..n).map(|_| v(1.0)).collect();
        let gripper = GripperState {
            position: x[0],
            orientation: Vec3::zeros(),
            attached: true,
        };
        let state = ClothState::from_parts(x, u, vec![0], gripper).unwrap();
        let f = internal_forces(&state, &topo, &ClothParams::sim_b());
        let scale = f.iter().map(|f| f.norm()).sum::<f64>().max(1.0);
        worst_momentum = worst_momentum.max(f.iter().sum::<Vec3>().norm() / scale);
    }

    let (topo, mut state) = distant_sleeve();
    let arm = default_arm();
    let mut contact_free = 0.0f64;
    for _ in 0..20 {
        let delta = RigidDelta {
            translation: Vec3::new(rng.random(), rng.random(), rng.random()) * 0.01,
            rotation: Vec3::zeros(),
        };
        contact_free = contact_free.max(state.step(&topo, &ClothParams::sim_b(), &delta, &arm).unwrap().magnitude);
    }

    let params = ClothParams {
        gravity: [0.0; 3],
        ..ClothParams::sim_b()
    };
    let (topo, mut state) = distant_sleeve();
    for (i, v) in state.velocities.iter_mut().enumerate() {
        if !state.grasped.contains(&i) {
            *v = Vec3::new(rng.random(), rng.random(), rng.random()) - Vec3::repeat(0.5);
        }
    }
    let mut prev = state.mechanical_energy(&topo, &params);
    let mut energy_rises = 0;
    for _ in 0..60 {
        state.step(&topo, &params, &RigidDelta::default(), &arm).unwrap();
        let e = state.mechanical_energy(&topo, &params);
        if e > prev * (1.0 + 1e-9) {
            energy_rises += 1;
        }
        prev = e;
    }

    let osc = oscillator_error();
    Verdict {
        id: 9,
        name: "physics invariants",
        pass: worst_momentum <= 1e-12 && contact_free == 0.0 && energy_rises == 0 && osc < OSCILLATOR_TOL,
        detail: format!(
            "net force {worst_momentum:.1e}, contact-free f {contact_free}, energy rises {energy_rises}, \
             oscillator error {osc:.1e} (limit {OSCILLATOR_TOL:.0e})"
        ),
    }
}

fn deterministic_eval(policy: &GaussianPolicy, model: &ForceModel) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let pol = dir.path().join("policy.ckpt");
    let fm = dir.path().join("force_model.ckpt");
    cli::save_policy(&pol, &AnyPolicy::Gaussian(policy.clone())).unwrap();
    cli::save_force_model(&fm, model).unwrap();
    let cfg = config_path();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = [
            "fcvp".to_string(),
            "eval".into(),
            "--config".into(),
            cfg.display().to_string(),
            "--out".into(),
            out.display().to_string(),
            "--checkpoint".into(),
            format!("policy={}", pol.display()),
            "--checkpoint".into(),
            format!("force_model={}", fm.display()),
        ];
        let code = cli::main_with_args(args);
        (code, std::fs::read(out.join(cli::RESULTS_CSV)).unwrap_or_default())
    };
    let (c1, a) = run("first");
    let (c2, b) = run("second");
    Verdict {
        id: 10,
        name: "eval is bit-reproducible",
        pass: c1 == 0 && c2 == 0 && !a.is_empty() && a == b,
        detail: format!("exit codes {c1}/{c2}, results.csv {} vs {} bytes, identical: {}", a.len(), b.len(), a == b),
    }
}

#[test]
fn acceptance_criteria() {
    let cfg = ExperimentConfig::load(&config_path()).unwrap();
    let seed = cfg.experiment.base_seed;
    let mut verdicts = vec![sim_gap(&cfg)];

    let start = Instant::now();
    let (policy, _) = pipeline::train_policy(&cfg, seed).unwrap();
    let (data, _) = pipeline::collect(&cfg, &policy, seed).unwrap();
    let mut ablation = Vec::new();
    let mut main = None;
    for &n in &cfg.ablation.history_lens {
        let (model, report) = pipeline::train_force(&cfg, &data, n, seed).unwrap();
        let models = Models {
            policy: Some(policy.clone()),
            force_model: Some(model.clone()),
            ..Models::default()
        };
        let rows: Vec<ResultRow> = pipeline::run_eval(&cfg, &models, &[Method::Fcvp])
            .unwrap()
            .into_iter()
            .map(|(r, _)| r)
            .collect();
        if n == cfg.experiment.history_len {
            main = Some((model.clone(), rows.clone()));
        }
        ablation.push((n, report, rows));
    }
    let (model, fcvp_rows) = main.expect("the main history length is part of the ablation");
    let models = Models {
        policy: Some(policy.clone()),
        force_model: Some(model.clone()),
        ..Models::default()
    };
    let baseline_rows: Vec<ResultRow> = pipeline::run_eval(&cfg, &models, &[Method::VisionOnly, Method::ForceOnly])
        .unwrap()
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    let took = start.elapsed();

    let fcvp = fcvp_rows.iter().collect::<Vec<_>>();
    let vision = rows_for(&baseline_rows, "vision_only");
    let force_only = rows_for(&baseline_rows, "force_only");
    let viol = |rs: &[&ResultRow]| mean(rs.iter().map(|r| r.avg_violation));
    let dressed = |rs: &[&ResultRow]| mean(rs.iter().map(|r| r.dressed_ratio));
    let (fv, fd) = (viol(&fcvp), dressed(&fcvp));
    let (vv, vd) = (viol(&vision), dressed(&vision));
    verdicts.push(Verdict {
        id: 2,
        name: "FCVP vs Vision Only",
        pass: fcvp.len() >= MIN_CELLS
            && fv <= VIOLATION_RATIO_MAX * vv
            && fd >= vd - DRESSED_SLACK
            && took <= EXPERIMENT_BUDGET,
        detail: format!(
            "{} cells; violation {fv:.3} vs {vv:.3} (ratio {:.3}, need <= {VIOLATION_RATIO_MAX}); \
             dressed {fd:.3} vs {vd:.3} (slack {DRESSED_SLACK}); {:.0}s",
            fcvp.len(),
            fv / vv,
            took.as_secs_f64()
        ),
    });

    let od = dressed(&force_only);
    verdicts.push(Verdict {
        id: 3,
        name: "Force Only dresses less than FCVP",
        pass: od < fd,
        detail: format!("dressed {od:.3} vs FCVP {fd:.3}, Force Only violation {:.3}", viol(&force_only)),
    });

    let region: Vec<(usize, f64, f64)> = ablation
        .iter()
        .map(|(n, _, rows)| {
            let rs: Vec<&ResultRow> = rows.iter().filter(|r| r.pose_region == ABLATION_REGION).collect();
            (*n, viol(&rs), dressed(&rs))
        })
        .collect();
    let ordered = region.windows(2).all(|w| {
        let (_, v0, d0) = w[0];
        let (_, v1, d1) = w[1];
        v1 <= v0 * (1.0 + ABLATION_SLACK) && d1 <= d0 * (1.0 + ABLATION_SLACK)
    });
    verdicts.push(Verdict {
        id: 4,
        name: "history-length ablation trend",
        pass: ordered,
        detail: region
            .iter()
            .map(|(n, v, d)| format!("N={n}: violation {v:.3}, dressed {d:.3}"))
            .collect::<Vec<_>>()
            .join("; "),
    });

    verdicts.push(Verdict {
        id: 5,
        name: "force model beats persistence",
        pass: ablation.iter().all(|(_, r, _)| r.heldout_mse < r.persistence_mse),
        detail: ablation
            .iter()
            .map(|(n, r, _)| format!("N={n}: {:.1} vs {:.1}", r.heldout_mse, r.persistence_mse))
            .collect::<Vec<_>>()
            .join("; "),
    });

    verdicts.push(selection_oracle(&cfg, &policy, &model));
    verdicts.push(gradient_suite());
    verdicts.push(formula_suite());
    verdicts.push(physics_suite());
    verdicts.push(deterministic_eval(&policy, &model));

    verdicts.sort_by_key(|v| v.id);
    for v in &verdicts {
        println!(
            "criterion {:>2} {} {}: {}",
            v.id,
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.detail
        );
    }
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
