use std::sync::OnceLock;

use reach_core::belief::BetaPreset;
use reach_core::brs::{BrsGrid, SolveStats, ValueTable};
use reach_core::config::RunConfig;
use reach_core::framework::{Evaluator, EventResult, FrameworkConfig, Gate, Variant};
use reach_core::frs::FrsEngine;
use reach_core::predictor::Maneuver;
use reach_core::scenario::{simulate, ScenarioConfig, SimTrace};

fn engine() -> &'static FrsEngine {
    static E: OnceLock<FrsEngine> = OnceLock::new();
    E.get_or_init(|| RunConfig::default().engine(1).unwrap())
}

/// Table holding one value everywhere.
fn constant_table(v: f32) -> ValueTable {
    let axes = BrsGrid::desk().axes();
    let n = axes.iter().map(|a| a.count()).product();
    ValueTable::new(axes, 2.0, vec![v; n], SolveStats::default()).unwrap()
}

fn run(trace: &SimTrace, table: &ValueTable, config: FrameworkConfig, variant: Variant) -> EventResult {
    let cfg = RunConfig::default();
    let sc = ScenarioConfig {
        v_ego: trace.samples[0].ego.v1,
        v_sur: trace.samples[0].sur.v1,
        ..cfg.scenario.clone()
    };
    let predictor = cfg.predictor(variant, &sc).unwrap();
    Evaluator {
        engine: engine(),
        table,
        config,
        window: 2,
    }
    .evaluate(trace, predictor.as_ref(), variant.preset())
    .unwrap()
}

#[test]
fn safe_gate_skips_forward_set() {
    let trace = simulate(&ScenarioConfig::with_speeds(30.0, 25.0)).unwrap();
    let r = run(&trace, &constant_table(5.0), FrameworkConfig::default(), Variant::Psrs5);
    assert!(!r.records.is_empty());
    for rec in &r.records {
        assert_eq!(rec.gate, Gate::SafeByBrs);
        assert_eq!(rec.p_col, 0.0);
        assert!(rec.step_sums.is_empty());
        assert!(!rec.alert);
    }
}

#[test]
fn warm_up_and_tick_cadence() {
    let trace = simulate(&ScenarioConfig::with_speeds(30.0, 28.0)).unwrap();
    let r = run(&trace, &constant_table(5.0), FrameworkConfig::default(), Variant::Hsrs);
    assert!((r.records[0].t - 2.0).abs() < 1e-9);
    for w in r.records.windows(2) {
        assert!((w[1].t - w[0].t - 0.4).abs() < 1e-9);
    }
}

#[test]
fn alerts_respect_threshold() {
    let trace = simulate(&ScenarioConfig::with_speeds(30.0, 25.0)).unwrap();
    let table = constant_table(-1.0);
    let mut counts = Vec::new();
    for threshold in [0.01, 0.05, 0.2, 0.6] {
        let cfg = FrameworkConfig {
            threshold,
            ..FrameworkConfig::default()
        };
        let r = run(&trace, &table, cfg, Variant::Psrs3);
        for rec in &r.records {
            assert_eq!(rec.gate, Gate::Escalated);
            assert_eq!(rec.alert, rec.p_col >= threshold);
            assert!((0.0..=1.0).contains(&rec.p_col));
            assert_eq!(rec.step_sums.len(), 5);
        }
        counts.push(r.alerts);
    }
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    assert!(counts[0] > 0);
}

#[test]
fn crash_free_straight_trace_has_no_alerts() {
    let sc = ScenarioConfig {
        maneuver: Maneuver::Keep,
        ..ScenarioConfig::with_speeds(30.0, 30.0)
    };
    let trace = simulate(&sc).unwrap();
    assert!(trace.crash_time.is_none());
    let r = run(
        &trace,
        &constant_table(-1.0),
        FrameworkConfig::default(),
        Variant::Psrs5,
    );
    assert_eq!(r.alerts, 0);
    assert!(!r.false_positive);
}

#[test]
fn disabling_gate_matches_escalated_run() {
    let trace = simulate(&ScenarioConfig::with_speeds(30.0, 26.0)).unwrap();
    let ungated = FrameworkConfig {
        gate: false,
        ..FrameworkConfig::default()
    };
    let a = run(&trace, &constant_table(5.0), ungated, Variant::Psrs);
    let b = run(&trace, &constant_table(-1.0), FrameworkConfig::default(), Variant::Psrs);
    let pa: Vec<f64> = a.records.iter().map(|r| r.p_col).collect();
    let pb: Vec<f64> = b.records.iter().map(|r| r.p_col).collect();
    assert_eq!(pa, pb);
}

#[test]
fn short_trace_is_rejected() {
    let mut trace = simulate(&ScenarioConfig::with_speeds(30.0, 28.0)).unwrap();
    trace.samples.truncate(10);
    let cfg = RunConfig::default();
    let predictor = cfg.predictor(Variant::Hsrs, &cfg.scenario).unwrap();
    let table = constant_table(1.0);
    let ev = Evaluator {
        engine: engine(),
        table: &table,
        config: FrameworkConfig::default(),
        window: 2,
    };
    assert!(ev.evaluate(&trace, predictor.as_ref(), BetaPreset::Single).is_err());
}
