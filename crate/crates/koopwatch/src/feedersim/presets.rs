//! Built-in desk-scale scenarios.
//!
//! All three share one 8-bus feeder (two asymmetric laterals off bus 1)
//! with batteries at the lateral ends, PMU channels at both battery
//! buses, 0.25 s sampling, 0.5% per-step load fluctuation, and
//! measurement noise of 0.01% on magnitudes / 0.01 degrees on angles.
//!
//! * `case1`   - dispatch change: the idle fleet starts discharging at
//!   50% of rating at t = 300 s (600 s total).
//! * `case2`   - controller change: the Volt/VAR deadband lower edge
//!   moves 0.95 -> 0.98 -> 0.99 pu at t = 200 s and t = 400 s, upper
//!   saturation shifting right accordingly (900 s total).
//! * `baseline` - no events (600 s), for false-alarm calibration.

use super::{Bess, BessAction, Bus, FeederModel, Line, ScenarioScript, ScriptedEvent, VoltVarCurve};
use crate::error::{Error, Result};

pub const DEFAULT_DT: f64 = 0.25;
pub const DEFAULT_LOAD_FLUCTUATION: f64 = 0.005;
pub const DEFAULT_NOISE_VM_REL: f64 = 1e-4;
pub const DEFAULT_NOISE_VA_DEG: f64 = 0.01;

/// A ready-to-run scenario plus the hyperparameters its case study uses.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub feeder: FeederModel,
    pub bess: Vec<Bess>,
    pub script: ScenarioScript,
    pub alpha: f64,
    pub beta: f64,
    pub cluster_k: usize,
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "case1" => Ok(case1()),
        "case2" => Ok(case2()),
        "baseline" => Ok(baseline()),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (expected case1, case2, or baseline)"
        ))),
    }
}

/// 8-bus radial feeder: source 0, trunk to 1, lateral A = 1-2-3-4
/// (heavier), lateral B = 1-5-6-7 (lighter).
fn feeder_8bus() -> FeederModel {
    let buses = vec![
        Bus { p_load: 0.0, q_load: 0.0 },   // source
        Bus { p_load: 0.15, q_load: 0.06 },
        Bus { p_load: 0.12, q_load: 0.05 },
        Bus { p_load: 0.10, q_load: 0.04 },
        Bus { p_load: 0.08, q_load: 0.03 },
        Bus { p_load: 0.14, q_load: 0.06 },
        Bus { p_load: 0.10, q_load: 0.04 },
        Bus { p_load: 0.08, q_load: 0.03 },
    ];
    let lines = vec![
        Line { from: 0, to: 1, resistance: 0.010, reactance: 0.025 },
        Line { from: 1, to: 2, resistance: 0.010, reactance: 0.025 },
        Line { from: 2, to: 3, resistance: 0.010, reactance: 0.025 },
        Line { from: 3, to: 4, resistance: 0.010, reactance: 0.025 },
        Line { from: 1, to: 5, resistance: 0.006, reactance: 0.014 },
        Line { from: 5, to: 6, resistance: 0.006, reactance: 0.014 },
        Line { from: 6, to: 7, resistance: 0.006, reactance: 0.014 },
    ];
    FeederModel::new(buses, lines, 1.0).expect("preset feeder is valid")
}

/// Wide curve that never acts: keeps Volt/VAR out of the dispatch case.
fn inactive_curve() -> VoltVarCurve {
    VoltVarCurve::new(0.50, 0.70, 1.30, 1.50, 0.0).expect("valid curve")
}

/// Initial case-2 curve: deadband [0.95, 1.05], saturation 0.90 / 1.10.
fn droop_curve(q_max: f64) -> VoltVarCurve {
    VoltVarCurve::new(0.90, 0.95, 1.05, 1.10, q_max).expect("valid curve")
}

fn script_defaults(duration: f64, events: Vec<ScriptedEvent>) -> ScenarioScript {
    ScenarioScript {
        duration,
        dt: DEFAULT_DT,
        load_fluctuation: DEFAULT_LOAD_FLUCTUATION,
        noise_vm_rel: DEFAULT_NOISE_VM_REL,
        noise_va_deg: DEFAULT_NOISE_VA_DEG,
        events,
    }
}

fn case1() -> Preset {
    let feeder = feeder_8bus();
    let bess = vec![
        Bess {
            bus: 4,
            p_rated: 0.35,
            q_rated: 0.40,
            rate_fraction: 0.0,
            curve: inactive_curve(),
            measured: true,
        },
        Bess {
            bus: 7,
            p_rated: 0.18,
            q_rated: 0.25,
            rate_fraction: 0.0,
            curve: inactive_curve(),
            measured: true,
        },
    ];
    let events = vec![ScriptedEvent {
        time: 300.0,
        label: "discharge_50".into(),
        description: "battery fleet starts discharging at 50% of rating".into(),
        actions: vec![
            BessAction::SetRateFraction { bess: 0, value: 0.5 },
            BessAction::SetRateFraction { bess: 1, value: 0.5 },
        ],
    }];
    Preset {
        name: "case1",
        feeder,
        bess,
        script: script_defaults(600.0, events),
        alpha: 0.1,
        beta: 0.4,
        cluster_k: 2,
    }
}

fn case2() -> Preset {
    let feeder = feeder_8bus();
    let q_max = 0.30;
    let bess = vec![
        Bess {
            bus: 4,
            p_rated: 0.35,
            q_rated: 0.40,
            rate_fraction: 0.0,
            curve: droop_curve(q_max),
            measured: true,
        },
        Bess {
            bus: 7,
            p_rated: 0.18,
            q_rated: 0.35,
            rate_fraction: 0.0,
            curve: droop_curve(q_max),
            measured: true,
        },
    ];
    let events = vec![
        ScriptedEvent {
            time: 200.0,
            label: "deadband_098".into(),
            description: "deadband lower edge raised to 0.98 pu".into(),
            actions: vec![
                BessAction::SetDeadband { bess: 0, v_db_low: 0.98, v_db_high: 1.05, v_sat_high: 1.12 },
                BessAction::SetDeadband { bess: 1, v_db_low: 0.98, v_db_high: 1.05, v_sat_high: 1.12 },
            ],
        },
        ScriptedEvent {
            time: 400.0,
            label: "deadband_099".into(),
            description: "deadband lower edge raised to 0.99 pu".into(),
            actions: vec![
                BessAction::SetDeadband { bess: 0, v_db_low: 0.99, v_db_high: 1.05, v_sat_high: 1.13 },
                BessAction::SetDeadband { bess: 1, v_db_low: 0.99, v_db_high: 1.05, v_sat_high: 1.13 },
            ],
        },
    ];
    Preset {
        name: "case2",
        feeder,
        bess,
        script: script_defaults(900.0, events),
        alpha: 0.1,
        beta: 0.0,
        cluster_k: 3,
    }
}

fn baseline() -> Preset {
    let mut p = case1();
    p.name = "baseline";
    p.script.events.clear();
    p.cluster_k = 1;
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedersim::run_scenario;

    #[test]
    fn presets_validate_and_run() {
        for name in ["case1", "case2", "baseline"] {
            let p = preset(name).unwrap();
            p.script.validate(p.bess.len()).unwrap();
            for b in &p.bess {
                b.validate(&p.feeder).unwrap();
            }
            // Short smoke run at reduced duration.
            let mut script = p.script.clone();
            script.duration = 5.0;
            script.events.clear();
            let (ds, _) = run_scenario(&p.feeder, &p.bess, &script, 1).unwrap();
            assert_eq!(ds.num_channels(), 4);
            assert_eq!(ds.num_samples(), 20);
        }
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(preset("case9").is_err());
    }

    #[test]
    fn case1_event_produces_voltage_step() {
        let p = preset("case1").unwrap();
        let mut script = p.script.clone();
        script.load_fluctuation = 0.0;
        script.noise_vm_rel = 0.0;
        script.noise_va_deg = 0.0;
        let (ds, log) = run_scenario(&p.feeder, &p.bess, &script, 2).unwrap();
        assert_eq!(log.events().len(), 1);
        let vm4 = ds.values().column(0);
        let pre = vm4[1100]; // t = 275 s
        let post = vm4[1300]; // t = 325 s
        assert!(
            post - pre > 5e-3,
            "discharge should raise the lateral-end voltage: {pre} -> {post}"
        );
    }

    #[test]
    fn case2_events_produce_two_steps() {
        let p = preset("case2").unwrap();
        let mut script = p.script.clone();
        script.load_fluctuation = 0.0;
        script.noise_vm_rel = 0.0;
        script.noise_va_deg = 0.0;
        let (ds, log) = run_scenario(&p.feeder, &p.bess, &script, 2).unwrap();
        assert_eq!(log.events().len(), 2);
        let vm4 = ds.values().column(0);
        let s0 = vm4[700]; // t = 175 s
        let s1 = vm4[1500]; // t = 375 s
        let s2 = vm4[2300]; // t = 575 s
        assert!(s1 - s0 > 1e-3, "first deadband raise should lift voltage: {s0} -> {s1}");
        assert!(s2 - s1 > 1e-3, "second deadband raise should lift it again: {s1} -> {s2}");
    }
}
