//! Timing probe for one representative horizon solve.
use std::time::Instant;

use powersplit_core::cosim::{run_cosim, DemandSource, Scenario, ScenarioString};
use powersplit_core::ecm::{CellResistanceModel, StringElectricalParams};
use powersplit_core::inverter::InverterLossModel;
use powersplit_core::model::{ObjectiveWeights, Priorities, StringInit};
use powersplit_core::piecewise::PwlTable;
use powersplit_core::solver::{BnbConfig, SlpConfig};
use powersplit_core::thermal::{PiDerateController, StringPlant, ThermalParams};

fn main() {
    let string = ScenarioString {
        plant: StringPlant {
            electrical: StringElectricalParams::default(),
            resistance: CellResistanceModel::default(),
            thermal: ThermalParams::default(),
            derate: PiDerateController::default(),
            inverter: InverterLossModel::default(),
        },
        derate_lut: PwlTable::new(&[(45.0, 1.0), (60.0, 0.0)]).unwrap(),
    };
    let scenario = Scenario {
        strings: vec![string.clone(), string],
        demand: DemandSource::Power(vec![-120.0; 8]),
        dt_s: 900.0,
        horizon_steps: 8,
        apply_steps: 8,
        sim_steps: 8,
        initial: vec![
            StringInit {
                soc: 0.5,
                temp_c: 25.0,
            },
            StringInit {
                soc: 0.5,
                temp_c: 25.0,
            },
        ],
        weights: ObjectiveWeights::default(),
        priorities: Priorities::default(),
        slack_penalty: 1e3,
        slp: SlpConfig::default(),
        bnb: BnbConfig::default(),
    };
    let t = Instant::now();
    let trace = run_cosim(&scenario).unwrap();
    println!(
        "one 8-step horizon: {:.2} s, horizons {}, slp iters {}, nodes {}",
        t.elapsed().as_secs_f64(),
        trace.horizons.len(),
        trace.horizons[0].iterations,
        trace.horizons[0].nodes,
    );
}
