use std::sync::Arc;

use reach_core::dynamics::PointMassState;
use reach_core::predictor::{
    propagate_mean_trajectory, GenerativeParams, GenerativePredictor, Horizon, Maneuver, Observation, Predictor,
};
use reach_core::scenario::{simulate, ScenarioConfig, SimTrace};

fn observations(trace: &SimTrace, t: f64) -> Vec<Observation> {
    (0..=10)
        .map(|j| {
            let s = trace.at(t - (10 - j) as f64 * 0.2).unwrap();
            Observation {
                t: s.t,
                state: s.sur,
                accel: s.sur_accel,
            }
        })
        .collect()
}

fn setup(v_sur: f64) -> (SimTrace, GenerativePredictor) {
    let sc = ScenarioConfig::with_speeds(30.0, v_sur);
    let trace = simulate(&sc).unwrap();
    let p = GenerativePredictor::new(Arc::new(sc), GenerativeParams::default(), Horizon::default()).unwrap();
    (trace, p)
}

#[test]
fn mode_probabilities_follow_onset() {
    let sc = ScenarioConfig::with_speeds(30.0, 25.0);
    let (trace, p) = setup(25.0);
    let early = p
        .forecast(&[Observation {
            t: 0.4,
            state: trace.at(0.4).unwrap().sur,
            accel: [0.0, 0.0],
        }])
        .unwrap();
    for step in &early.steps {
        assert!(step.probs.iter().all(|q| (q - 1.0 / 3.0).abs() < 1e-15));
    }
    let after = p.forecast(&observations(&trace, 2.4)).unwrap();
    for step in &after.steps {
        assert_eq!(step.probs[sc.maneuver as usize], 1.0);
        assert!((step.probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
    after.validate().unwrap();
}

#[test]
fn mean_velocities_match_simulation() {
    for v_sur in [25.0, 28.0, 33.0] {
        let (trace, p) = setup(v_sur);
        for t in [2.0, 2.4, 3.6] {
            let f = p.forecast(&observations(&trace, t)).unwrap();
            let now = trace.at(t).unwrap().sur;
            let mean = propagate_mean_trajectory(now, &f, Maneuver::Left);
            for (k, s) in mean.iter().enumerate() {
                // Crash traces stop at contact.
                let Some(truth) = trace.at(t + (k + 1) as f64 * 0.4).map(|x| x.sur) else {
                    break;
                };
                assert!(
                    (s.v1 - truth.v1).abs() < 1e-9,
                    "v1 at t={t} step {k}: {} vs {}",
                    s.v1,
                    truth.v1
                );
                assert!(
                    (s.v2 - truth.v2).abs() < 1e-9,
                    "v2 at t={t} step {k}: {} vs {}",
                    s.v2,
                    truth.v2
                );
            }
        }
    }
}

#[test]
fn mirrored_mode_mirrors_lateral_mean() {
    let (trace, p) = setup(25.0);
    let f = p.forecast(&observations(&trace, 2.4)).unwrap();
    for step in &f.steps {
        let [keep, left, right] = step.modes;
        assert_eq!(left.mu2, -right.mu2);
        assert_eq!(keep.mu2, 0.0);
        assert_eq!(left.mu1, keep.mu1);
    }
}

#[test]
fn rejects_bad_inputs() {
    let (_, p) = setup(25.0);
    assert!(p.forecast(&[]).is_err());
    let late = Observation {
        t: 1e3,
        state: PointMassState::new(0.0, 0.0, 25.0, 0.0),
        accel: [0.0, 0.0],
    };
    assert!(p.forecast(&[late]).is_err());
    let sc = Arc::new(ScenarioConfig::default());
    let odd = Horizon { steps: 5, dt: 0.45 };
    assert!(GenerativePredictor::new(sc, GenerativeParams::default(), odd).is_err());
}
