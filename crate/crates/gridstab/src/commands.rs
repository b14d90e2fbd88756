//! The five subcommands. Each writes its files under an output directory
//! and returns a [`RunReport`] plus the process exit code.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use gridstab_core::dynsim::{simulate as run_simulation, synthesize_and_track, SimTrace};
use gridstab_core::epll::{run_epll, EpllSample, EpllState};
use gridstab_core::smallsignal::{analyze, dominant_modes, find_max_kp, sweep_droop, KpSearch, SweepGrid};

use crate::checks::{self, settling_time, Check};
use crate::config::ScenarioConfig;
use crate::output::{ensure_dir, sha256_hex, write_json, CsvTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
/// Instability, failed checks, or an aborted simulation.
pub const EXIT_FLAGGED: i32 = 2;

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub inputs_digest: String,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    pub exit_code: i32,
}

struct Run {
    command: &'static str,
    digest: String,
    started: Instant,
    outputs: Vec<String>,
    warnings: Vec<String>,
}

impl Run {
    fn new(command: &'static str, cfg: &ScenarioConfig, flags: &str) -> Self {
        Self {
            command,
            digest: sha256_hex(&[command, &cfg.to_json(), flags]),
            started: Instant::now(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn wrote(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn finish(self, summary: serde_json::Value, exit_code: i32) -> Outcome {
        Outcome {
            report: RunReport {
                command: self.command.to_string(),
                inputs_digest: self.digest,
                outputs: self.outputs,
                wall_time_s: self.started.elapsed().as_secs_f64(),
                warnings: self.warnings,
                summary,
            },
            exit_code,
        }
    }
}

fn pairs(ev: &[gridstab_core::Complex<f64>]) -> Vec<[f64; 2]> {
    ev.iter().map(|z| [z.re, z.im]).collect()
}

/// JSON number, or `null` when not finite.
fn num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

pub fn eigs(cfg: &ScenarioConfig, out: &Path) -> anyhow::Result<Outcome> {
    let mut run = Run::new("eigs", cfg, "");
    ensure_dir(out)?;
    let system = cfg.system()?;
    let (report, _model, resolved) = analyze(&system)?;
    if let Some(r) = resolved.power_flow_residual {
        if r > 1e-9 {
            run.warnings.push(format!(
                "power injections are not exactly consistent with the network; least-squares relative residual {r:.3e}"
            ));
        }
    }
    let dominant = dominant_modes(&report.eigenvalues, report.zero_tol, 6);
    let buses: Vec<_> = resolved
        .op
        .buses
        .iter()
        .map(|b| {
            json!({
                "e_mag_v_ln": b.magnitude(),
                "angle_rad": b.angle(),
                "p_w": 3.0 * b.p,
                "q_var": 3.0 * b.q,
            })
        })
        .collect();
    let doc = json!({
        "eigenvalues": pairs(&report.eigenvalues),
        "margin": num(report.margin),
        "zero_mode_present": report.zero_mode_present,
        "zero_mode_vector": report.zero_mode_vector.iter().copied().collect::<Vec<f64>>(),
        "complex_pairs": report.complex_pairs,
        "zero_tol": report.zero_tol,
        "dominant_modes": pairs(&dominant),
        "q_convention": format!("{:?}", system.q_convention),
        "operating_point": {
            "omega_rad_s": resolved.op.omega,
            "buses": buses,
            "power_flow_relative_residual": resolved.power_flow_residual,
        },
    });
    let path = out.join("eigs.json");
    write_json(&path, &doc)?;
    run.wrote(&path);
    let summary = json!({
        "margin": num(report.margin),
        "zero_mode_present": report.zero_mode_present,
        "complex_pairs": report.complex_pairs,
        "dominant_complex_pairs": dominant.iter().filter(|z| z.im > 0.0).count(),
    });
    let code = if report.margin >= 0.0 || report.margin.is_nan() { EXIT_FLAGGED } else { EXIT_OK };
    Ok(run.finish(summary, code))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl GridAxis {
    /// Evenly spaced values including both ends; one step yields `min`.
    pub fn values(&self) -> Vec<f64> {
        match self.steps {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n).map(|k| self.min + (self.max - self.min) * k as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepArgs {
    pub kp: GridAxis,
    pub kv: GridAxis,
    pub omega_f: Vec<f64>,
    pub freeze: bool,
    /// Also search for the largest `kp` meeting this margin at the
    /// configured `kv`.
    pub target_margin: Option<f64>,
}

pub const SWEEP_HEADER: [&str; 6] = ["kp", "kv", "omega_f", "margin", "zero_mode", "complex_pairs"];

pub fn sweep(cfg: &ScenarioConfig, args: &SweepArgs, out: &Path) -> anyhow::Result<Outcome> {
    let flags = format!("{args:?}");
    let mut run = Run::new("sweep", cfg, &flags);
    ensure_dir(out)?;
    let system = cfg.system()?;
    let grid = SweepGrid {
        kp: args.kp.values(),
        kv: args.kv.values(),
        omega_f: args.omega_f.clone(),
        freeze_operating_point: args.freeze,
    };
    let cells = sweep_droop(&system, &grid)?;
    let mut table = CsvTable::new(SWEEP_HEADER);
    let mut failed = 0;
    for c in &cells {
        match &c.outcome {
            Ok(s) => table.push_fields(&[
                crate::output::fmt_float(c.kp),
                crate::output::fmt_float(c.kv),
                crate::output::fmt_float(c.omega_f),
                crate::output::fmt_float(s.margin),
                s.zero_mode.to_string(),
                s.complex_pairs.to_string(),
            ]),
            Err(msg) => {
                failed += 1;
                run.warnings.push(format!("cell kp={} kv={} omega_f={}: {msg}", c.kp, c.kv, c.omega_f));
                table.push_fields(&[
                    crate::output::fmt_float(c.kp),
                    crate::output::fmt_float(c.kv),
                    crate::output::fmt_float(c.omega_f),
                    "NaN".into(),
                    "error".into(),
                    String::new(),
                ]);
            }
        }
    }
    let path = out.join("sweep.csv");
    table.write(&path)?;
    run.wrote(&path);

    let mut summary = json!({ "cells": cells.len(), "failed_cells": failed });
    if let Some(target) = args.target_margin {
        let kv = system.inverters[0].kv;
        let (lo, hi) = (args.kp.min, args.kp.max.max(args.kp.min * (1.0 + 1e-9) + 1e-12));
        let found = find_max_kp(&system, kv, target, lo, hi, args.kp.steps.max(8))?;
        summary["kp_search"] = match found {
            KpSearch::Found { kp_max, margin, non_monotonic } => {
                if non_monotonic {
                    run.warnings.push("margin crosses the target more than once over the kp range".into());
                }
                json!({ "target_margin": target, "kv": kv, "kp_max": kp_max, "margin": margin, "non_monotonic": non_monotonic })
            }
            KpSearch::NotFound => json!({ "target_margin": target, "kv": kv, "kp_max": null }),
        };
    }
    let code = if !cells.is_empty() && failed == cells.len() { EXIT_FLAGGED } else { EXIT_OK };
    Ok(run.finish(summary, code))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulateArgs {
    pub epll_bus: Option<usize>,
}

fn trace_table(trace: &SimTrace<f64>) -> CsvTable {
    let n = trace.buses.len();
    let mut header = vec!["t".to_string()];
    for i in 1..=n {
        header.extend([format!("omega_hz_{i}"), format!("e_mag_peak_{i}"), format!("p_w_{i}"), format!("q_var_{i}")]);
    }
    let mut table = CsvTable::new(header);
    let mut row = vec![0.0; 1 + 4 * n];
    for k in 0..trace.len() {
        row[0] = trace.t[k];
        for (i, b) in trace.buses.iter().enumerate() {
            row[1 + 4 * i] = b.omega[k] / (2.0 * PI);
            row[2 + 4 * i] = SQRT_2 * b.e_mag[k];
            row[3 + 4 * i] = 3.0 * b.p[k];
            row[4 + 4 * i] = 3.0 * b.q[k];
        }
        table.push_floats(&row);
    }
    table
}

fn epll_table(samples: &[EpllSample<f64>]) -> CsvTable {
    let mut table = CsvTable::new(["t", "x", "a_hat", "omega_hat_hz", "phi_hat", "e"]);
    for s in samples {
        table.push_floats(&[s.t, s.x, s.a_hat, s.omega_hat / (2.0 * PI), s.phi_hat, s.e]);
    }
    table
}

pub fn simulate(cfg: &ScenarioConfig, args: &SimulateArgs, out: &Path) -> anyhow::Result<Outcome> {
    let mut run = Run::new("simulate", cfg, &format!("{args:?}"));
    ensure_dir(out)?;
    let mut cfg = cfg.clone();
    let horizon = cfg.scenario.duration;
    cfg.scenario.events.retain(|e| {
        let keep = e.time() <= horizon;
        if !keep {
            run.warnings.push(format!("event at t = {} s lies beyond the {horizon} s horizon and was dropped", e.time()));
        }
        keep
    });
    let cfg = &cfg;
    let system = cfg.system()?;
    let resolved = system.resolve()?;
    let scenario = cfg.scenario(&system, &resolved)?;
    let (trace, abort) = match run_simulation(&scenario) {
        Ok(t) => (t, None),
        Err(a) => {
            run.warnings.push(a.to_string());
            let reason = a.to_string();
            (a.trace, Some(reason))
        }
    };

    let path = out.join("trace.csv");
    trace_table(&trace).write(&path)?;
    run.wrote(&path);

    let events: Vec<_> = trace
        .events
        .iter()
        .map(|e| json!({ "time": e.time, "applied_at": e.applied_at, "step": e.step, "event": e.kind.to_string() }))
        .collect();
    let meta = json!({
        "buses": system.n(),
        "dt": scenario.dt(),
        "duration": scenario.duration(),
        "samples": trace.len(),
        "omega_frame_rad_s": scenario.omega_frame(),
        "q_convention": format!("{:?}", scenario.q_convention()),
        "requested_events": scenario.events().iter().map(|e| json!({"time": e.time, "event": e.kind.to_string()})).collect::<Vec<_>>(),
        "events": events,
        "aborted": abort,
        "units": { "t": "s", "omega_hz": "Hz", "e_mag_peak": "V phase-to-neutral peak", "p_w": "W three-phase", "q_var": "VAR three-phase" },
    });
    let path = out.join("trace_meta.json");
    write_json(&path, &meta)?;
    run.wrote(&path);

    let mut summary = json!({ "samples": trace.len(), "aborted": abort.is_some() });
    if let (Some(first), None) = (trace.events.first(), &abort) {
        let t_step = first.applied_at;
        let settle: Vec<_> = trace
            .buses
            .iter()
            .map(|b| {
                json!({
                    "omega_s": settling_time(&trace.t, &b.omega, t_step, 0.05),
                    "e_mag_s": settling_time(&trace.t, &b.e_mag, t_step, 0.05),
                })
            })
            .collect();
        summary["settling_5pct_of_step"] = json!(settle);
    }

    if let Some(bus) = args.epll_bus {
        if abort.is_none() {
            let params = cfg.epll_params()?;
            let (_, est) = synthesize_and_track(&trace, bus, params.sample_rate, &params)?;
            let path = out.join(format!("epll_bus{bus}.csv"));
            epll_table(&est).write(&path)?;
            run.wrote(&path);
        } else {
            run.warnings.push("E-PLL trace skipped because the simulation aborted".into());
        }
    }
    let code = if abort.is_some() { EXIT_FLAGGED } else { EXIT_OK };
    Ok(run.finish(summary, code))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpllArgs {
    pub duration: f64,
    pub step_time: f64,
    pub freq_step_hz: f64,
    /// Relative amplitude change at `step_time`.
    pub amp_step: f64,
    /// Initial frequency estimate error.
    pub initial_offset_hz: f64,
}

impl Default for EpllArgs {
    fn default() -> Self {
        Self { duration: 1.0, step_time: 0.5, freq_step_hz: 0.5, amp_step: 0.0, initial_offset_hz: 0.0 }
    }
}

/// Sinusoid `√2·A(t)·cos θ(t)` with amplitude `a0` and frequency `f0`,
/// both stepping at `step_time` with continuous phase.
pub fn step_signal(a0: f64, f0: f64, fs: f64, args: &EpllArgs) -> Vec<f64> {
    let count = (args.duration * fs * (1.0 + 1e-12)).floor() as usize + 1;
    (0..count)
        .map(|k| {
            let t = k as f64 / fs;
            let (amp, theta) = if t < args.step_time {
                (a0, 2.0 * PI * f0 * t)
            } else {
                let f1 = f0 + args.freq_step_hz;
                (a0 * (1.0 + args.amp_step), 2.0 * PI * (f0 * args.step_time + f1 * (t - args.step_time)))
            };
            SQRT_2 * amp * theta.cos()
        })
        .collect()
}

/// Time after `t_step` at which `v` last lies outside `rel·|target|` of
/// `target`, and the peak excursion beyond `target` as a fraction of the
/// change from `before`.
pub fn tracking_metrics(samples: &[EpllSample<f64>], value: impl Fn(&EpllSample<f64>) -> f64, t_step: f64, before: f64, target: f64, rel: f64) -> (f64, f64) {
    let mut last = t_step;
    let mut overshoot: f64 = 0.0;
    let dir = (target - before).signum();
    for s in samples.iter().filter(|s| s.t >= t_step) {
        let v = value(s);
        if (v - target).abs() > rel * target.abs() {
            last = s.t;
        }
        if (target - before).abs() > 0.0 {
            overshoot = overshoot.max(dir * (v - target) / (target - before).abs());
        }
    }
    (last - t_step, overshoot)
}

pub fn epll(cfg: &ScenarioConfig, args: &EpllArgs, out: &Path) -> anyhow::Result<Outcome> {
    let mut run = Run::new("epll", cfg, &format!("{args:?}"));
    ensure_dir(out)?;
    let params = cfg.epll_params()?;
    let fs = params.sample_rate;
    let f0 = cfg.network.nominal_frequency_hz;
    let a0 = params.a0;
    let signal = step_signal(a0, f0, fs, args);
    let init = EpllState::new(a0, 2.0 * PI * (f0 + args.initial_offset_hz), 0.0);
    let est = run_epll(&signal, fs, &params, init)?;
    let path = out.join("epll_trace.csv");
    epll_table(&est).write(&path)?;
    run.wrote(&path);

    let w1 = 2.0 * PI * (f0 + args.freq_step_hz);
    let a1 = a0 * (1.0 + args.amp_step);
    let (w_settle, w_over) = tracking_metrics(&est, |s| s.omega_hat, args.step_time, 2.0 * PI * f0, w1, 1e-3);
    let (a_settle, a_over) = tracking_metrics(&est, |s| s.a_hat, args.step_time, a0, a1, 1e-3);
    let summary = json!({
        "k2": params.k2,
        "k3": params.k3,
        "omega_settle_0p1pct_s": w_settle,
        "omega_overshoot": w_over,
        "amplitude_settle_0p1pct_s": a_settle,
        "amplitude_overshoot": a_over,
    });
    Ok(run.finish(summary, EXIT_OK))
}

pub fn verify(cfg: &ScenarioConfig, flip_convention: bool, out: &Path) -> anyhow::Result<Outcome> {
    let mut run = Run::new("verify", cfg, &format!("flip={flip_convention}"));
    ensure_dir(out)?;
    let system = cfg.system()?;
    let results: Vec<Check> = checks::run_all(&system, flip_convention)?;
    let all = results.iter().all(|c| c.passed);
    for c in results.iter().filter(|c| !c.passed) {
        run.warnings.push(format!("{} failed: measured {:.3e}, tolerance {:.3e}", c.name, c.measured, c.tolerance));
    }
    let path = out.join("verify.json");
    write_json(&path, &json!({ "flip_convention": flip_convention, "passed": all, "checks": results }))?;
    run.wrote(&path);
    let summary = json!({
        "passed": all,
        "checks": results.iter().map(|c| json!({ "name": c.name, "passed": c.passed })).collect::<Vec<_>>(),
    });
    Ok(run.finish(summary, if all { EXIT_OK } else { EXIT_FLAGGED }))
}
