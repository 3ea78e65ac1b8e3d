//! Path simulation of the closed-form normal model in any of the three modes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::output::OutputDir;
use crate::error::{Result, StageExt};
use crate::gaussian::{self, GaussianInputs};
use crate::sim::{self, GaussianModel, SimConfig, SimMode, SimSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationRunConfig {
    pub model: GaussianInputs,
    pub sim: SimConfig,
    /// Standard errors allowed by the moment checks.
    pub z_limit: f64,
    /// Largest |Y_T − ζ| accepted for bridge paths.
    pub bridge_gap_limit: f64,
}

impl Default for SimulationRunConfig {
    fn default() -> Self {
        Self {
            model: GaussianInputs::univariate(0.0, 1.0, 1.0, 0.2, 1.0, 1.0),
            sim: SimConfig::default(),
            z_limit: 3.0,
            bridge_gap_limit: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationRunReport {
    pub summary: SimSummary,
    /// Target of E[P_T]: P_0 = m risk-neutrally and under the bridge with
    /// risk-neutral values, m̂ physically.
    pub expected_terminal_mean: Vec<f64>,
    pub terminal_mean_z: Vec<f64>,
    pub pass: bool,
}

pub fn run_simulation(cfg: &SimulationRunConfig, out: Option<&OutputDir>) -> Result<SimulationRunReport> {
    let eq = gaussian::calibrate(&cfg.model).stage("normal equilibrium")?;
    let model = GaussianModel::new(&eq)?;
    let batch = sim::simulate(&model, &cfg.model.beta, &cfg.sim).stage("simulation")?;
    let summary = batch.summary();
    let physical = match cfg.sim.mode {
        SimMode::Physical => true,
        SimMode::Bridge => matches!(cfg.sim.bridge_value, Some(sim::BridgeValue::Physical)),
        SimMode::RiskNeutral => false,
    };
    let fixed = match (&cfg.sim.mode, &cfg.sim.bridge_value) {
        (SimMode::Bridge, Some(sim::BridgeValue::Fixed(v))) => Some(v.clone()),
        _ => None,
    };
    let expected: Vec<f64> = match fixed {
        Some(v) => v,
        None if physical => eq.m_hat().iter().cloned().collect(),
        None if cfg.sim.start.is_some() => summary.mean_p_start.clone(),
        None => eq.m().iter().cloned().collect(),
    };
    let z: Vec<f64> = summary
        .mean_p_end
        .iter()
        .zip(&expected)
        .map(|(e, m)| if e.se > 0.0 { e.z(*m) } else { (e.mean - m).abs() / 1e-12 })
        .collect();
    let gap_ok = summary.max_terminal_gap.is_none_or(|g| g <= cfg.bridge_gap_limit);
    let pass = gap_ok && z.iter().all(|z| z.abs() <= cfg.z_limit);

    if let Some(out) = out {
        let mut w = out.csv("paths", "paths.csv")?;
        batch.write_csv(&mut w)?;
        w.flush()?;
        let mut w = out.csv("paths", "terminal.csv")?;
        let d = batch.dim;
        let head: Vec<String> = (0..d)
            .map(|c| format!("y{c}_T"))
            .chain((0..d).map(|c| format!("p{c}_T")))
            .chain((0..d).map(|c| format!("v{c}")))
            .collect();
        writeln!(w, "path,{},bracket,dealer_wealth,informed_profit,noise_profit", head.join(","))?;
        for (id, p) in batch.paths.iter().enumerate() {
            let cols: Vec<String> = p
                .y_end(d)
                .iter()
                .chain(p.p_end(d))
                .chain(&p.v)
                .map(|x| x.to_string())
                .collect();
            let opt = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{id},{},{},{},{},{}",
                cols.join(","),
                p.bracket,
                p.dealer_wealth,
                opt(p.informed_profit),
                opt(p.noise_profit)
            )?;
        }
        w.flush()?;
    }

    Ok(SimulationRunReport {
        summary,
        expected_terminal_mean: expected,
        terminal_mean_z: z,
        pass,
    })
}
