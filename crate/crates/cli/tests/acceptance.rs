//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::fs;
use std::path::Path;
use std::time::Instant;

use datasync::closedloop::{
    error_system_matrix, model_zeta_reference, run_heterogeneous, run_homogeneous,
    HeterogeneousStart,
};
use datasync::datarep::{stacked_rank_check, AgentData};
use datasync::hetero::{solve_regulator, verify_regulator_model, DynamicController, LeaderData};
use datasync::linalg;
use datasync::lmi::{
    design_distributed_sync, design_single_stabilizer, verify_hurwitz, DesignOptions,
};
use datasync::lti::{
    default_holds, simulate, ConstantInput, DataMatrixSet, LtiSystem, DEFAULT_PERIOD, DEFAULT_STEP,
};
use datasync::oracle::{are_residual, model_sync_gain, shared_gain_error_matrix, solve_are};
use datasync::scenario::{self, random_rooted_graph, random_system, FOLLOWER_CONSTANTS};
use datasync::topology::Topology;
use datasync_cli::commands::{cmd_repro, OutputDirs};
use datasync_cli::config::{reference_config, Scenario};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: usize, title: &str, pass: bool, detail: &str) {
    println!(
        "{} criterion {criterion} ({title}): {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn random_model(rng: &mut ChaCha8Rng) -> LtiSystem {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    random_system(rng, n, m)
}

fn collect(sys: &LtiSystem, seed: u64) -> AgentData {
    AgentData::collect(
        sys,
        DEFAULT_PERIOD,
        default_holds(sys.n(), sys.m()),
        DEFAULT_STEP,
        seed,
    )
    .unwrap()
}

fn repro(seed: u64, root: &Path) -> datasync_cli::commands::ReproSummary {
    let sc = Scenario::new(reference_config(seed)).unwrap();
    cmd_repro(&sc, &OutputDirs::new(root), true).unwrap()
}

#[test]
fn criterion_1_reference_reproduction() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut all = true;
    for seed in 0..5 {
        let s = repro(seed, &tmp.path().join(format!("seed{seed}")));
        assert_eq!(s.metrics.check_from, 30.0);
        worst = worst.max(s.metrics.window_error);
        all &= s.passed() && s.metrics.window_error <= 1e-2;
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        "reference reproduction",
        all && elapsed < 30.0,
        &format!("max_i |y_i - y0| over t in [30, 40] s, worst of 5 seeds = {worst:.3e} (<= 1e-2), {elapsed:.1} s"),
    );
}

#[test]
fn criterion_2_regulator_correctness() {
    let leader = scenario::leader();
    let ld = LeaderData::collect(
        &leader,
        DEFAULT_PERIOD,
        LeaderData::default_holds(2),
        DEFAULT_STEP,
        11,
    )
    .unwrap();
    let mut worst_residual: f64 = 0.0;
    let mut worst_closed_form: f64 = 0.0;
    for (i, sys) in scenario::followers().iter().enumerate() {
        let sol = solve_regulator(&collect(sys, 100 + i as u64), &ld).unwrap();
        let (state, output) = verify_regulator_model(&sol, sys, &leader);
        worst_residual = worst_residual.max(state).max(output);
        if i >= 2 {
            let k = FOLLOWER_CONSTANTS[i];
            let pi = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
            let gamma = DMatrix::from_row_slice(1, 2, &[0.0, k[1] / k[3]]);
            worst_closed_form = worst_closed_form
                .max((&sol.pi - pi).amax())
                .max((&sol.gamma - gamma).amax());
        }
    }
    report(
        2,
        "regulator correctness",
        worst_residual <= 1e-6 && worst_closed_form <= 1e-6,
        &format!(
            "model residual {worst_residual:.1e} (<= 1e-6), agents 3-4 closed-form deviation {worst_closed_form:.1e} (<= 1e-6)"
        ),
    );
}

#[test]
fn criterion_3_distributed_design() {
    let top = scenario::graph();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let (mut min_margin, mut max_abscissa, mut max_ratio, mut max_offdiag) =
        (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for trial in 0..10 {
        let sys = random_model(&mut rng);
        let (n, m) = (sys.n(), sys.m());
        let d =
            design_distributed_sync(&collect(&sys, 500 + trial), &top, &DesignOptions::default())
                .unwrap();
        min_margin = min_margin.min(d.certificate.margin);
        let k = d.global_gain();
        for i in 0..4 {
            for j in (0..4).filter(|&j| j != i) {
                max_offdiag = max_offdiag.max(k.view((i * m, j * n), (m, n)).amax());
            }
        }
        let (_, abscissa) = verify_hurwitz(&error_system_matrix(&sys, &top, &d.gains));
        max_abscissa = max_abscissa.max(abscissa);
        let x0: Vec<_> = (0..4)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0)))
            .collect();
        let l0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let run = run_homogeneous(&sys, &top, &d.gains, &x0, &l0, 50.0, DEFAULT_STEP).unwrap();
        max_ratio = max_ratio.max(run.metrics.final_error / run.metrics.initial_error);
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        3,
        "distributed LMI design",
        min_margin >= 1e-6 && max_offdiag <= 1e-10 && max_abscissa < 0.0 && max_ratio <= 1e-3 && elapsed < 60.0,
        &format!(
            "10 models: min margin {min_margin:.2e}, off-diagonal gain {max_offdiag:.0e}, max abscissa {max_abscissa:.3}, max |d(50)|/|d(0)| {max_ratio:.1e}, {elapsed:.1} s"
        ),
    );
}

#[test]
fn criterion_4_rank_conditions() {
    let top = scenario::graph();
    let cut = Topology::parse(4, "1 -> 2 : 1\n1 -> 3 : 1\n2 -> 3 : 1\npin 1 : 1\n").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (mut excited, mut stacked, mut zero_rejected, mut cut_rejected) = (0, 0, 0, 0);
    for trial in 0..10 {
        let sys = random_model(&mut rng);
        let data = collect(&sys, 700 + trial);
        excited += data.pe_rank_check() as usize;
        stacked += stacked_rank_check(&data, &top) as usize;
        cut_rejected += !stacked_rank_check(&data, &cut) as usize;
        let holds = default_holds(sys.n(), sys.m());
        let x0 = DVector::from_fn(sys.n(), |_, _| rng.random_range(-1.0..=1.0));
        let traj = simulate(
            &sys,
            &x0,
            &ConstantInput::zeros(sys.m()),
            DEFAULT_PERIOD * holds as f64,
            DEFAULT_STEP,
        )
        .unwrap();
        let idle =
            AgentData::new(DataMatrixSet::from_trajectory(&traj, DEFAULT_PERIOD, holds).unwrap());
        zero_rejected += !idle.pe_rank_check() as usize;
    }
    report(
        4,
        "rank conditions",
        excited == 10 && stacked == 10 && zero_rejected == 10 && cut_rejected == 10,
        &format!(
            "PCPE rank m+n {excited}/10, network rank {stacked}/10, zero input rejected {zero_rejected}/10, disconnected graph rejected {cut_rejected}/10"
        ),
    );
}

#[test]
fn criterion_5_representation_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let sys = random_model(&mut rng);
        let data = collect(&sys, 900 + trial);
        let x0 = DVector::from_fn(sys.n(), |_, _| rng.random_range(-1.0..=1.0));
        let path = data.unforced_trajectory(&x0).unwrap();
        let direct = simulate(
            &sys,
            &x0,
            &ConstantInput::zeros(sys.m()),
            DEFAULT_PERIOD,
            DEFAULT_STEP,
        )
        .unwrap();
        let scale = (0..path.x.len())
            .map(|k| direct.state(k).norm())
            .fold(0.0, f64::max);
        let err = path
            .x
            .iter()
            .enumerate()
            .map(|(k, x)| (x - direct.state(k)).norm())
            .fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    report(
        5,
        "representation fidelity",
        worst <= 1e-6,
        &format!("10 systems: max relative deviation over [0, T) {worst:.1e} (<= 1e-6)"),
    );
}

struct ZetaRun {
    deviation: f64,
    max_jump: f64,
    boundaries: usize,
}

fn zeta_run(top: &Topology, zeta0: &[DVector<f64>], leader0: &DVector<f64>) -> ZetaRun {
    let leader = scenario::leader();
    let ld = LeaderData::collect(
        &leader,
        DEFAULT_PERIOD,
        LeaderData::default_holds(2),
        DEFAULT_STEP,
        66,
    )
    .unwrap();
    let followers = scenario::followers();
    let mut ctrls = Vec::new();
    let mut xs = Vec::new();
    for (i, sys) in followers.iter().enumerate() {
        let data = collect(sys, 660 + i as u64);
        let sol = solve_regulator(&data, &ld).unwrap();
        let k = design_single_stabilizer(&data, &DesignOptions::default())
            .unwrap()
            .gain;
        xs.push(DVector::from_fn(3, |r, _| {
            0.1 * (r as f64 + 1.0) * (i as f64 - 1.5)
        }));
        ctrls.push(DynamicController::init(&sol, k, zeta0[i].clone(), &ld).unwrap());
    }
    let start = HeterogeneousStart {
        agents: xs,
        leader: leader0.clone(),
    };
    let (duration, h) = (3.0 * DEFAULT_PERIOD, 2.0 * DEFAULT_STEP);
    let run = run_heterogeneous(
        &followers, &leader, &ld, top, &mut ctrls, &start, duration, h,
    )
    .unwrap();
    let reference = model_zeta_reference(&leader, top, zeta0, leader0, duration, h).unwrap();
    let deviation = run
        .zeta
        .iter()
        .zip(&reference[1..])
        .map(|(z, r)| (z - r).amax())
        .fold(0.0, f64::max);
    ZetaRun {
        deviation,
        max_jump: run.boundary_jumps.iter().copied().fold(0.0, f64::max),
        boundaries: run.boundary_jumps.len(),
    }
}

#[test]
fn criterion_6_zeta_equivalence() {
    let isolated = Topology::new(DMatrix::zeros(4, 4), DVector::zeros(4)).unwrap();
    let spread: Vec<_> = (0..4)
        .map(|i| DVector::from_vec(vec![0.3 * i as f64 - 0.5, 0.2 - 0.1 * i as f64]))
        .collect();
    let leader0 = DVector::from_vec(vec![0.4, -0.7]);
    let a = zeta_run(&isolated, &spread, &leader0);
    let b = zeta_run(&scenario::graph(), &vec![leader0.clone(); 4], &leader0);
    let coupled = zeta_run(&scenario::graph(), &spread, &leader0);
    println!(
        "info: coupled start off the leader, deviation {:.1e}, boundary jump {:.1e}",
        coupled.deviation, coupled.max_jump
    );
    let deviation = a.deviation.max(b.deviation);
    let jump = a.max_jump.max(b.max_jump);
    report(
        6,
        "zeta-dynamics equivalence",
        a.boundaries >= 2 && b.boundaries >= 2 && deviation <= 1e-6 && jump <= 1e-8,
        &format!(
            "isolated and consensus runs over [0, 3T]: deviation {deviation:.1e} (<= 1e-6), boundary jump {jump:.1e} (<= 1e-8), {} boundaries",
            a.boundaries.min(b.boundaries)
        ),
    );
}

#[test]
fn criterion_7_oracle_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_are: f64 = 0.0;
    let mut worst_lyap = f64::NEG_INFINITY;
    let mut worst_offdiag: f64 = 0.0;
    let mut instances = 0;
    for n in 1..=4 {
        for agents in 1..=5 {
            let m = rng.random_range(1..=2);
            let sys = loop {
                let s = LtiSystem::new(
                    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0)),
                    DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..=1.0)),
                    DMatrix::identity(n, n),
                )
                .unwrap();
                if scenario::is_controllable(&s) {
                    break s;
                }
            };
            let (q, r) = (DMatrix::identity(n, n), DMatrix::identity(m, m));
            let are = solve_are(sys.a(), sys.b(), &q, &r).unwrap();
            worst_are = worst_are.max(
                are_residual(sys.a(), sys.b(), &q, &r, &are.p)
                    .unwrap()
                    .amax(),
            );
            let top = random_rooted_graph(&mut rng, agents);
            let g = model_sync_gain(&sys, &top, &q, &r).unwrap();
            let ac = shared_gain_error_matrix(&sys, &top, &g.gain);
            let p = &g.certificate;
            worst_lyap =
                worst_lyap.max(linalg::max_sym_eigenvalue(&(p * &ac + ac.transpose() * p)));
            for i in 0..agents {
                for j in (0..agents).filter(|&j| j != i) {
                    worst_offdiag = worst_offdiag.max(p.view((i * n, j * n), (n, n)).amax());
                }
            }
            instances += 1;
        }
    }
    report(
        7,
        "model-based oracle",
        worst_are <= 1e-8 && worst_lyap <= -1e-9 && worst_offdiag == 0.0,
        &format!(
            "{instances} instances: ARE residual {worst_are:.1e} (<= 1e-8), max eig(P Ac + Ac' P) {worst_lyap:.2e} (<= -1e-9), off-diagonal certificate {worst_offdiag:.0e}"
        ),
    );
}

fn csv_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["data", "run"] {
        let mut names: Vec<_> = fs::read_dir(root.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        names.sort();
        for p in names {
            out.push((
                format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                fs::read(&p).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    repro(3, &a);
    repro(3, &b);
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    let identical = !fa.is_empty() && fa == fb;
    report(
        8,
        "determinism",
        identical,
        &format!(
            "{} CSV files compared byte for byte, identical = {identical}",
            fa.len()
        ),
    );
}
