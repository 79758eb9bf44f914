use datasync::closedloop::{model_zeta_reference, run_heterogeneous, HeterogeneousStart};
use datasync::datarep::AgentData;
use datasync::hetero::{
    regulator_data_residuals, solve_regulator, verify_regulator_model, DynamicController,
    LeaderData,
};
use datasync::linalg::{self, RANK_TOL};
use datasync::lmi::{design_single_stabilizer, DesignOptions};
use datasync::lti::{default_holds, LtiSystem, DEFAULT_PERIOD, DEFAULT_STEP};
use datasync::scenario::{self, FOLLOWER_CONSTANTS};
use datasync::topology::Topology;
use nalgebra::{DMatrix, DVector};

fn leader_data(seed: u64) -> LeaderData {
    LeaderData::collect(
        &scenario::leader(),
        DEFAULT_PERIOD,
        LeaderData::default_holds(2),
        DEFAULT_STEP,
        seed,
    )
    .unwrap()
}

fn follower_data(sys: &LtiSystem, seed: u64) -> AgentData {
    AgentData::collect(sys, DEFAULT_PERIOD, default_holds(3, 1), DEFAULT_STEP, seed).unwrap()
}

/// `Π = [[1, 0], [0, 1], [0, 0]]`, `Γ = [0, b/d]` for the vehicle models.
fn closed_form(k: &[f64; 4]) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 2, &[0.0, k[1] / k[3]]),
    )
}

#[test]
fn data_regulator_solutions_solve_the_model_equations() {
    let leader = scenario::leader();
    for seed in 0..3 {
        let ld = leader_data(seed);
        for (i, sys) in scenario::followers().iter().enumerate() {
            let sol = solve_regulator(&follower_data(sys, 10 * seed + i as u64), &ld).unwrap();
            let (state, output) = verify_regulator_model(&sol, sys, &leader);
            assert!(
                state <= 1e-6 && output <= 1e-6,
                "agent {}: {state:e} {output:e}",
                i + 1
            );
            let (pi, gamma) = closed_form(&FOLLOWER_CONSTANTS[i]);
            assert!((&sol.pi - pi).amax() <= 1e-6);
            assert!((&sol.gamma - gamma).amax() <= 1e-6);
        }
    }
}

#[test]
fn model_regulator_solutions_map_to_data_solutions() {
    let ld = leader_data(7);
    for (i, sys) in scenario::followers().iter().enumerate() {
        let data = follower_data(sys, 70 + i as u64);
        let (pi, gamma) = closed_form(&FOLLOWER_CONSTANTS[i]);
        let stacked = linalg::vstack(&[data.hu(), data.hx0()]);
        let s = linalg::min_norm_solve(&stacked, &linalg::vstack(&[&gamma, &pi]), RANK_TOL);
        assert!((&stacked * &s - linalg::vstack(&[&gamma, &pi])).amax() <= 1e-9);
        let (state, output) = regulator_data_residuals(&data, &ld, &s);
        assert!(
            state <= 1e-6 && output <= 1e-6,
            "agent {}: {state:e} {output:e}",
            i + 1
        );
    }
}

#[test]
fn unsolvable_output_is_rejected() {
    let ld = leader_data(0);
    // Output blind to position cannot follow a ramp.
    let sys = LtiSystem::new(
        scenario::vehicle(1.0, 0.0, 1.0, 1.0).a().clone(),
        DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
        DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0]),
    )
    .unwrap();
    assert!(solve_regulator(&follower_data(&sys, 1), &ld).is_err());
}

#[test]
fn tracking_feedforward_of_third_follower() {
    let ld = leader_data(2);
    let sys = &scenario::followers()[2];
    let sol = solve_regulator(&follower_data(sys, 5), &ld).unwrap();
    let zeta = DVector::from_vec(vec![0.0, 1.0]);
    let ctrl = DynamicController::init(
        &sol,
        DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]),
        zeta.clone(),
        &ld,
    )
    .unwrap();
    let u = ctrl.control_input(&(&sol.pi * &zeta));
    assert!((u[0] - 10.0).abs() <= 1e-6, "u = {}", u[0]);
}

struct ZetaComparison {
    deviation: f64,
    max_jump: f64,
    boundaries: usize,
}

/// Runs the data-driven controllers over `[0, 3T]` and compares `ζ` with the
/// model-based reference.
fn compare_zeta(top: &Topology, zeta0: &[DVector<f64>], leader0: &DVector<f64>) -> ZetaComparison {
    let leader = scenario::leader();
    let ld = leader_data(3);
    let followers = scenario::followers();
    let mut ctrls = Vec::new();
    let mut xs = Vec::new();
    for (i, sys) in followers.iter().enumerate() {
        let data = follower_data(sys, 30 + i as u64);
        let sol = solve_regulator(&data, &ld).unwrap();
        let k = design_single_stabilizer(&data, &DesignOptions::default())
            .unwrap()
            .gain;
        xs.push(&sol.pi * &zeta0[i]);
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
    let mut deviation: f64 = (&run.leader - &reference[0]).amax();
    for (i, z) in run.zeta.iter().enumerate() {
        deviation = deviation.max((z - &reference[i + 1]).amax());
    }
    ZetaComparison {
        deviation,
        max_jump: run.boundary_jumps.iter().copied().fold(0.0, f64::max),
        boundaries: run.boundary_jumps.len(),
    }
}

#[test]
fn isolated_controllers_replay_the_leader_model() {
    let top = Topology::new(DMatrix::zeros(4, 4), DVector::zeros(4)).unwrap();
    let zeta0: Vec<_> = (0..4)
        .map(|i| DVector::from_vec(vec![0.3 * i as f64 - 0.5, 0.2 - 0.1 * i as f64]))
        .collect();
    let c = compare_zeta(&top, &zeta0, &DVector::from_vec(vec![0.4, -0.7]));
    assert!(c.boundaries >= 2);
    assert!(c.deviation <= 1e-6, "deviation {:e}", c.deviation);
    assert!(c.max_jump <= 1e-8, "jump {:e}", c.max_jump);
}

#[test]
fn consensus_controllers_stay_on_the_leader() {
    let leader0 = DVector::from_vec(vec![-0.2, 0.9]);
    let zeta0 = vec![leader0.clone(); 4];
    let c = compare_zeta(&scenario::graph(), &zeta0, &leader0);
    assert!(c.boundaries >= 2);
    assert!(c.deviation <= 1e-6, "deviation {:e}", c.deviation);
    assert!(c.max_jump <= 1e-8, "jump {:e}", c.max_jump);
}

#[test]
fn invariant_manifold_start_keeps_outputs_synchronized() {
    let leader = scenario::leader();
    let ld = leader_data(4);
    let followers = scenario::followers();
    let leader0 = DVector::from_vec(vec![0.5, -0.3]);
    let mut ctrls = Vec::new();
    let mut xs = Vec::new();
    for (i, sys) in followers.iter().enumerate() {
        let data = follower_data(sys, 40 + i as u64);
        let sol = solve_regulator(&data, &ld).unwrap();
        let k = design_single_stabilizer(&data, &DesignOptions::default())
            .unwrap()
            .gain;
        xs.push(&sol.pi * &leader0);
        ctrls.push(DynamicController::init(&sol, k, leader0.clone(), &ld).unwrap());
    }
    let start = HeterogeneousStart {
        agents: xs,
        leader: leader0,
    };
    let run = run_heterogeneous(
        &followers,
        &leader,
        &ld,
        &scenario::graph(),
        &mut ctrls,
        &start,
        10.0,
        2e-3,
    )
    .unwrap();
    let worst = run.error_norms.iter().copied().fold(0.0, f64::max);
    assert!(worst <= 1e-6, "max output error {worst:e}");
}
