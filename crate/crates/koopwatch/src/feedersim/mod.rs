//! Desk-scale radial feeder surrogate.
//!
//! A balanced single-phase LinDistFlow model: squared voltage drops are
//! linear in the branch active/reactive flows, flows aggregate the net
//! downstream load. Batteries inject dispatched active power and run a
//! local Volt/VAR droop on their bus voltage; a scenario script perturbs
//! loads, fires timed events, and records PMU-style voltage magnitude and
//! angle channels at the measured buses.
//!
//! All electrical quantities are per-unit on a common base; angles are
//! reported in degrees.

pub mod presets;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{Dataset, Event, EventLog, NoiseSpec};

/// Damping of the power-flow / controller relaxation.
const VV_DAMPING: f64 = 0.5;
/// Convergence threshold on the per-unit reactive-power update.
const VV_TOLERANCE: f64 = 1e-8;
const VV_MAX_ITERATIONS: usize = 100;

/// One bus with its base load (per-unit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub p_load: f64,
    pub q_load: f64,
}

/// Directed line from the parent side to the child side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub reactance: f64,
}

/// Radial feeder rooted at bus 0 (the source).
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    source_voltage: f64,
    /// parent[b] and the line reaching b, None for the source.
    parent: Vec<Option<(usize, Line)>>,
    /// Bus order with each parent before its children.
    topo: Vec<usize>,
}

impl FeederModel {
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, source_voltage: f64) -> Result<Self> {
        let n = buses.len();
        if n < 1 {
            return Err(Error::Argument("feeder needs at least the source bus".into()));
        }
        if !(source_voltage > 0.0 && source_voltage < 2.0) {
            return Err(Error::Argument(format!(
                "source voltage must be in (0, 2) per-unit, got {source_voltage}"
            )));
        }
        if lines.len() != n - 1 {
            return Err(Error::Argument(format!(
                "a radial feeder over {n} buses needs exactly {} lines, got {}",
                n - 1,
                lines.len()
            )));
        }
        let mut parent: Vec<Option<(usize, Line)>> = vec![None; n];
        let mut adjacency: Vec<Vec<(usize, Line)>> = vec![Vec::new(); n];
        for line in &lines {
            if line.from >= n || line.to >= n || line.from == line.to {
                return Err(Error::Argument(format!(
                    "line ({}, {}) references invalid buses",
                    line.from, line.to
                )));
            }
            if !(line.resistance > 0.0) || !(line.reactance > 0.0) {
                return Err(Error::Argument(format!(
                    "line ({}, {}) must have positive impedance",
                    line.from, line.to
                )));
            }
            adjacency[line.from].push((line.to, *line));
            adjacency[line.to].push((line.from, *line));
        }
        // BFS from the source; a tree is connected with no revisits.
        let mut topo = vec![0usize];
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut head = 0;
        while head < topo.len() {
            let b = topo[head];
            head += 1;
            for &(other, line) in &adjacency[b] {
                if seen[other] {
                    if parent[b].map(|(p, _)| p) != Some(other) {
                        return Err(Error::Argument(format!(
                            "feeder graph has a cycle through buses {b} and {other}"
                        )));
                    }
                    continue;
                }
                seen[other] = true;
                parent[other] = Some((b, line));
                topo.push(other);
            }
        }
        if topo.len() != n {
            return Err(Error::Argument("feeder graph is not connected to the source".into()));
        }
        Ok(FeederModel { buses, lines, source_voltage, parent, topo })
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn source_voltage(&self) -> f64 {
        self.source_voltage
    }
}

/// Voltage magnitudes and angle proxies of one solved operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// Per-bus voltage magnitude, per-unit.
    pub v: Vec<f64>,
    /// Per-bus linearized angle, degrees (0 at the source).
    pub theta_deg: Vec<f64>,
}

/// LinDistFlow solve: per-bus voltage magnitudes for the given net
/// injections (generation positive; loads come from the feeder model).
pub fn lindistflow_solve(feeder: &FeederModel, injections: &[(f64, f64)]) -> Result<Vec<f64>> {
    solve_flow(feeder, injections).map(|s| s.v)
}

/// Full solve including the linearized angle accumulation
/// `theta_child = theta_parent - (x P - r Q) / v_parent^2`.
pub fn solve_flow(feeder: &FeederModel, injections: &[(f64, f64)]) -> Result<FlowSolution> {
    let n = feeder.num_buses();
    if injections.len() != n {
        return Err(Error::Argument(format!(
            "injection list length {} != bus count {n}",
            injections.len()
        )));
    }

    // Net consumption per bus, then subtree aggregation in reverse
    // topological order.
    let mut sub_p: Vec<f64> = Vec::with_capacity(n);
    let mut sub_q: Vec<f64> = Vec::with_capacity(n);
    for (bus, inj) in feeder.buses.iter().zip(injections) {
        sub_p.push(bus.p_load - inj.0);
        sub_q.push(bus.q_load - inj.1);
    }
    for &b in feeder.topo.iter().rev() {
        if let Some((p, _)) = feeder.parent[b] {
            sub_p[p] += sub_p[b];
            sub_q[p] += sub_q[b];
        }
    }

    let mut v2 = vec![0.0; n];
    let mut theta = vec![0.0; n];
    v2[0] = feeder.source_voltage * feeder.source_voltage;
    for &b in &feeder.topo {
        let Some((parent, line)) = feeder.parent[b] else {
            continue;
        };
        let drop = 2.0 * (line.resistance * sub_p[b] + line.reactance * sub_q[b]);
        v2[b] = v2[parent] - drop;
        if v2[b] <= 0.0 {
            return Err(Error::InfeasibleOperatingPoint { bus: b, v2: v2[b] });
        }
        theta[b] = theta[parent]
            - (line.reactance * sub_p[b] - line.resistance * sub_q[b]) / v2[parent];
    }

    let v = v2.iter().map(|x| x.sqrt()).collect();
    let theta_deg = theta.iter().map(|t| t.to_degrees()).collect();
    Ok(FlowSolution { v, theta_deg })
}

/// Piecewise-linear reactive-power droop with a deadband, saturation
/// limits, and a translation offset applied to all four breakpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltVarCurve {
    pub v_db_low: f64,
    pub v_db_high: f64,
    pub v_sat_low: f64,
    pub v_sat_high: f64,
    pub q_max: f64,
    pub shift: f64,
}

impl VoltVarCurve {
    pub fn new(
        v_sat_low: f64,
        v_db_low: f64,
        v_db_high: f64,
        v_sat_high: f64,
        q_max: f64,
    ) -> Result<Self> {
        let curve = VoltVarCurve { v_db_low, v_db_high, v_sat_low, v_sat_high, q_max, shift: 0.0 };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_sat_low < self.v_db_low
            && self.v_db_low < self.v_db_high
            && self.v_db_high < self.v_sat_high)
        {
            return Err(Error::Argument(format!(
                "curve breakpoints must satisfy sat_low < db_low < db_high < sat_high, got \
                 {} {} {} {}",
                self.v_sat_low, self.v_db_low, self.v_db_high, self.v_sat_high
            )));
        }
        if !(self.q_max >= 0.0) {
            return Err(Error::Argument(format!("q_max must be >= 0, got {}", self.q_max)));
        }
        Ok(())
    }

    /// Reactive output at voltage `v`: positive injects (raises voltage),
    /// negative absorbs. Zero inside the deadband, saturated outside the
    /// droop regions, linear in between.
    pub fn response(&self, v: f64) -> f64 {
        let sat_low = self.v_sat_low + self.shift;
        let db_low = self.v_db_low + self.shift;
        let db_high = self.v_db_high + self.shift;
        let sat_high = self.v_sat_high + self.shift;
        if v <= sat_low {
            self.q_max
        } else if v < db_low {
            self.q_max * (db_low - v) / (db_low - sat_low)
        } else if v <= db_high {
            0.0
        } else if v < sat_high {
            -self.q_max * (v - db_high) / (sat_high - db_high)
        } else {
            -self.q_max
        }
    }

    /// Translate all four breakpoints by `delta`. A left shift
    /// (`delta < 0`) increases absorption at any fixed voltage.
    pub fn shifted(&self, delta: f64) -> Result<VoltVarCurve> {
        if !delta.is_finite() {
            return Err(Error::InvalidShift(format!("shift delta must be finite, got {delta}")));
        }
        let shifted = VoltVarCurve { shift: self.shift + delta, ..*self };
        shifted
            .validate()
            .map_err(|e| Error::InvalidShift(e.to_string()))?;
        Ok(shifted)
    }
}

/// Battery energy storage system attached to a bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bess {
    pub bus: usize,
    pub p_rated: f64,
    pub q_rated: f64,
    /// Dispatched fraction of `p_rated` in [-1, 1]; positive discharges
    /// into the grid.
    pub rate_fraction: f64,
    pub curve: VoltVarCurve,
    /// Whether a PMU records this bus.
    pub measured: bool,
}

impl Bess {
    pub fn validate(&self, feeder: &FeederModel) -> Result<()> {
        if self.bus >= feeder.num_buses() {
            return Err(Error::Argument(format!("BESS bus {} not in feeder", self.bus)));
        }
        if self.rate_fraction.abs() > 1.0 {
            return Err(Error::Argument(format!(
                "rate fraction must be in [-1, 1], got {}",
                self.rate_fraction
            )));
        }
        if !(self.p_rated >= 0.0) || !(self.q_rated >= 0.0) {
            return Err(Error::Argument("BESS ratings must be >= 0".into()));
        }
        if self.curve.q_max > self.q_rated {
            return Err(Error::Argument(format!(
                "curve q_max {} exceeds q_rated {}",
                self.curve.q_max, self.q_rated
            )));
        }
        self.curve.validate()
    }
}

/// A scripted change applied to one BESS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BessAction {
    SetRateFraction { bess: usize, value: f64 },
    SetDeadband { bess: usize, v_db_low: f64, v_db_high: f64, v_sat_high: f64 },
}

/// A timed scenario event: one label, possibly several device actions
/// applied atomically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEvent {
    pub time: f64,
    pub label: String,
    pub description: String,
    pub actions: Vec<BessAction>,
}

/// Everything that drives one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub duration: f64,
    pub dt: f64,
    /// Relative standard deviation of the multiplicative load draw per
    /// step.
    pub load_fluctuation: f64,
    /// Relative noise on voltage-magnitude channels.
    pub noise_vm_rel: f64,
    /// Absolute noise on angle channels, degrees.
    pub noise_va_deg: f64,
    pub events: Vec<ScriptedEvent>,
}

impl ScenarioScript {
    pub fn validate(&self, num_bess: usize) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Argument(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.duration >= self.dt) {
            return Err(Error::Argument("duration must cover at least one step".into()));
        }
        if self.load_fluctuation < 0.0 || self.noise_vm_rel < 0.0 || self.noise_va_deg < 0.0 {
            return Err(Error::Argument("fluctuation and noise magnitudes must be >= 0".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for ev in &self.events {
            if ev.time < 0.0 || ev.time > self.duration {
                return Err(Error::Argument(format!(
                    "event `{}` at t={} outside [0, {}]",
                    ev.label, ev.time, self.duration
                )));
            }
            if ev.time <= prev {
                return Err(Error::Argument("event times must be strictly increasing".into()));
            }
            prev = ev.time;
            if ev.label.is_empty() {
                return Err(Error::Argument(format!("event at t={} has empty label", ev.time)));
            }
            for action in &ev.actions {
                let bess = match action {
                    BessAction::SetRateFraction { bess, .. } => *bess,
                    BessAction::SetDeadband { bess, .. } => *bess,
                };
                if bess >= num_bess {
                    return Err(Error::Argument(format!(
                        "event `{}` references BESS {bess}, only {num_bess} defined",
                        ev.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Run one scenario: per step, perturb loads, apply due events, relax the
/// power-flow/controller loop to its fixed point, record measured buses,
/// then overlay measurement noise.
///
/// Channels are named `vm_<bus>` then `va_<bus>` over the measured buses
/// in ascending bus order. Deterministic for a fixed seed.
pub fn run_scenario(
    feeder: &FeederModel,
    bess_list: &[Bess],
    script: &ScenarioScript,
    seed: u64,
) -> Result<(Dataset, EventLog)> {
    script.validate(bess_list.len())?;
    for bess in bess_list {
        bess.validate(feeder)?;
    }
    let mut measured: Vec<usize> = bess_list.iter().filter(|b| b.measured).map(|b| b.bus).collect();
    measured.sort_unstable();
    measured.dedup();
    if measured.is_empty() {
        return Err(Error::Argument("no measured BESS bus: dataset would be empty".into()));
    }

    let n_buses = feeder.num_buses();
    let steps = script.num_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut rate: Vec<f64> = bess_list.iter().map(|b| b.rate_fraction).collect();
    let mut curves: Vec<VoltVarCurve> = bess_list.iter().map(|b| b.curve).collect();
    let mut q_vv: Vec<f64> = vec![0.0; bess_list.len()];
    let mut next_event = 0usize;
    let mut applied: Vec<Event> = Vec::new();

    let mut values = Array2::zeros((steps, 2 * measured.len()));
    for step in 0..steps {
        let t = step as f64 * script.dt;

        // Multiplicative load perturbation; draws are always two per bus
        // so the stream layout does not depend on the load values.
        let mut injections: Vec<(f64, f64)> = Vec::with_capacity(n_buses);
        for bus in feeder.buses() {
            let zp: f64 = unit.sample(&mut rng);
            let zq: f64 = unit.sample(&mut rng);
            let dev_p = bus.p_load * script.load_fluctuation * zp;
            let dev_q = bus.q_load * script.load_fluctuation * zq;
            // Folding the deviation into the injection keeps the feeder
            // model immutable across steps.
            injections.push((-dev_p, -dev_q));
        }

        // Apply events due at or before this step time.
        while next_event < script.events.len() && script.events[next_event].time <= t {
            let ev = &script.events[next_event];
            for action in &ev.actions {
                match *action {
                    BessAction::SetRateFraction { bess, value } => {
                        if value.abs() > 1.0 {
                            return Err(Error::Argument(format!(
                                "event `{}` sets rate fraction {value} outside [-1, 1]",
                                ev.label
                            )));
                        }
                        rate[bess] = value;
                    }
                    BessAction::SetDeadband { bess, v_db_low, v_db_high, v_sat_high } => {
                        let mut curve = curves[bess];
                        curve.v_db_low = v_db_low;
                        curve.v_db_high = v_db_high;
                        curve.v_sat_high = v_sat_high;
                        curve.validate()?;
                        curves[bess] = curve;
                    }
                }
            }
            applied.push(Event {
                time: ev.time,
                label: ev.label.clone(),
                description: ev.description.clone(),
            });
            next_event += 1;
        }

        // Damped Gauss-Seidel between power flow and the droop curves.
        let mut solution = None;
        let mut converged = false;
        for _ in 0..VV_MAX_ITERATIONS {
            let mut inj = injections.clone();
            for (i, bess) in bess_list.iter().enumerate() {
                inj[bess.bus].0 += rate[i] * bess.p_rated;
                inj[bess.bus].1 += q_vv[i];
            }
            let flow = solve_flow(feeder, &inj)?;
            let mut residual = 0.0f64;
            for (i, bess) in bess_list.iter().enumerate() {
                let target = curves[i].response(flow.v[bess.bus]);
                let update = VV_DAMPING * (target - q_vv[i]);
                residual = residual.max(update.abs());
                q_vv[i] += update;
            }
            solution = Some(flow);
            if residual <= VV_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged && !bess_list.is_empty() {
            // Re-derive the worst residual for the error report.
            let mut inj = injections.clone();
            for (i, bess) in bess_list.iter().enumerate() {
                inj[bess.bus].0 += rate[i] * bess.p_rated;
                inj[bess.bus].1 += q_vv[i];
            }
            let flow = solve_flow(feeder, &inj)?;
            let (worst, residual) = bess_list
                .iter()
                .enumerate()
                .map(|(i, b)| (b.bus, (curves[i].response(flow.v[b.bus]) - q_vv[i]).abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("bess list non-empty");
            if residual > VV_TOLERANCE {
                return Err(Error::Convergence { bus: worst, step, residual });
            }
        }
        let flow = solution.expect("at least one relaxation pass");

        for (c, &bus) in measured.iter().enumerate() {
            values[[step, c]] = flow.v[bus];
            values[[step, measured.len() + c]] = flow.theta_deg[bus];
        }
    }

    let mut channels = Vec::with_capacity(2 * measured.len());
    for &bus in &measured {
        channels.push(format!("vm_{bus}"));
    }
    for &bus in &measured {
        channels.push(format!("va_{bus}"));
    }
    let clean = Dataset::new(channels, script.dt, 0.0, values)?;

    let mut specs = vec![NoiseSpec::Relative(script.noise_vm_rel); measured.len()];
    specs.extend(vec![NoiseSpec::Absolute(script.noise_va_deg); measured.len()]);
    let noise_seed = seed ^ 0x9E37_79B9_7F4A_7C15;
    let noisy = clean.add_noise(&specs, noise_seed)?;

    Ok((noisy, EventLog::new(applied)?))
}
