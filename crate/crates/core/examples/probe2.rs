//! LP-level reproduction of the extraction failure.
use powersplit_core::ecm::Mode;
use powersplit_core::inverter::InverterLossModel;
use powersplit_core::model::{
    build_horizon_model, BigM, FrozenCoefficients, HorizonInput, MathProgram, ModelTolerances,
    ObjectiveWeights, Priorities, StringInit, StringModelParams,
};
use powersplit_core::solver::{bnb_solve, lp_solve, BnbConfig, LpStatus};

fn main() {
    let n_strings = 2;
    let n_steps = 8;
    let demand: Vec<f64> = vec![-120.0; n_steps];
    let electrical = powersplit_core::ecm::StringElectricalParams::default();
    let resistance = powersplit_core::ecm::CellResistanceModel::default();
    let ocv = electrical.ocv(0.5, Mode::Discharge).unwrap();
    let r = powersplit_core::ecm::total_resistance_hard(&resistance, 192, 2, 0.5, 25.0).unwrap();
    println!("frozen ocv {ocv:.15}, r {r:.15}");
    let frozen = FrozenCoefficients {
        r_ohm: vec![vec![r; n_steps]; n_strings],
        ocv_v: vec![vec![ocv; n_steps]; n_strings],
        k_derate: vec![vec![1.0; n_steps]; n_strings],
    };
    let input = HorizonInput {
        n_strings,
        n_steps,
        dt_s: 900.0,
        demand_kw: demand,
        init: vec![
            StringInit {
                soc: 0.5,
                temp_c: 25.0
            };
            2
        ],
        strings: vec![
            StringModelParams {
                p_nominal_kw: 100.0,
                q_nominal_ah: 156.0,
                inverter: InverterLossModel::default(),
                k1: 1.0 / 4.0e6,
                k2: 200.0 / 4.0e6,
                t_air_c: 25.0,
            };
            2
        ],
        frozen,
        weights: ObjectiveWeights::default(),
        priorities: Priorities::default(),
        big_m: BigM::for_nominal_power(100.0),
        tol: ModelTolerances::for_nominal_power(100.0),
        slack_penalty: 1e3,
    };
    let model = build_horizon_model(&input).unwrap();
    let _ = Mode::Charge;
    for (si, stage) in model.program.stages.iter().enumerate() {
        let sol = lp_solve(&model.program, &stage.terms);
        println!("stage {si} ({}): status {:?}, obj {}", stage.label, sol.status, sol.objective);
        if sol.status == LpStatus::Optimal {
            match model.program.check_assignment(&sol.values, 1e-6) {
                Ok(()) => println!("  relaxation assignment feasible"),
                Err(e) => println!("  RELAXATION INFEASIBLE RETURN: {e}"),
            }
        }
        let out = bnb_solve(&model.program, &stage.terms, &BnbConfig::default());
        println!(
            "  bnb: nodes {}, status {:?}, obj {:?}",
            out.nodes,
            out.status,
            out.solution.as_ref().map(|s| s.objective)
        );
        if let Some(s) = out.solution {
            match model.program.check_assignment(&s.values, 1e-6) {
                Ok(()) => println!("  bnb assignment feasible"),
                Err(e) => println!("  BNB ASSIGNMENT BAD: {e}"),
            }
        }
    }
    let _ = MathProgram::default();

    let lex = powersplit_core::solver::solve_lexicographic(
        &model.program,
        input.tol.eps_lex,
        &BnbConfig::default(),
    );
    match lex {
        Ok(out) => {
            println!("lex nodes {}", out.nodes);
            for st in &out.stages {
                println!(
                    "  stage p{} {}: optimum {}, final {}",
                    st.priority, st.label, st.optimum, st.final_value
                );
            }
            match model.program.check_assignment(&out.solution.values, 1e-6) {
                Ok(()) => println!("  lex assignment feasible"),
                Err(e) => println!("  LEX ASSIGNMENT BAD: {e}"),
            }
        }
        Err(e) => println!("lex failed: {e}"),
    }

    // manual stage-2 after guard
    let stage0 = model.program.stages[0].clone();
    let out0 = bnb_solve(&model.program, &stage0.terms, &BnbConfig::default());
    let f1 = out0.solution.as_ref().unwrap().objective;
    let mut guarded = model.program.clone();
    guarded.add_row(
        "lex_guard_manual",
        stage0.terms.clone(),
        powersplit_core::model::RowSense::Le,
        f1 + 1e-6,
    );
    let stage1 = guarded.stages[1].clone();
    let relax = lp_solve(&guarded, &stage1.terms);
    println!("guarded stage-2 relaxation: {:?} obj {}", relax.status, relax.objective);
    let out1 = bnb_solve(&guarded, &stage1.terms, &BnbConfig::default());
    println!(
        "guarded stage-2 bnb: {:?} nodes {} obj {:?} gap {}",
        out1.status, out1.nodes, out1.solution.as_ref().map(|s| s.objective), out1.gap
    );

    // fix binaries to the stage-1 incumbent: must stay feasible
    let inc = out0.solution.as_ref().unwrap();
    let solver = powersplit_core::solver::SimplexSolver::new(&guarded);
    let cost = solver.dense_objective(&stage1.terms);
    let mut bounds = solver.default_bounds();
    for b in guarded.binary_indices() {
        let v = inc.values[b].round();
        bounds.0[b] = v;
        bounds.1[b] = v;
    }
    let fixed = solver.solve(&cost, &bounds);
    println!("stage-2 with stage-1 incumbent binaries: {:?} obj {}", fixed.status, fixed.objective);
}
