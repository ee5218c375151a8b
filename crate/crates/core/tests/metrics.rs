use proptest::prelude::*;
use rollsim_core::engine::{CollisionEvent, PlannerKind, RolloutReport};
use rollsim_core::metrics::{collision_rate, ego_min_ade, min_scene_ade, min_scene_fde, miss_rate, scene_ade, MetricReport};
use rollsim_core::tensor::StateTensor;
use rollsim_core::world::{AgentDims, MapPolylines, Scenario};
use rollsim_core::Error;

fn scene(agents: usize, frames: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Scenario {
    let mut tracks = StateTensor::zeros(agents, frames);
    for a in 0..agents {
        for t in 0..frames {
            tracks.set(a, t, f(a, t));
        }
    }
    Scenario {
        id: "m".into(),
        location: "l".into(),
        track_ids: (0..agents as u64).collect(),
        agent_types: vec!["vehicle".into(); agents],
        dims: vec![AgentDims::new(4.0, 2.0); agents],
        tracks,
        valid: vec![true; agents * frames],
        map: MapPolylines::empty(4),
    }
}

fn gt() -> Scenario {
    scene(3, 5, |a, t| [t as f64 * 1.5, a as f64 * 4.0, 0.1])
}

fn shifted(dx: f64, dy: f64) -> Scenario {
    let g = gt();
    scene(3, 5, |a, t| {
        let s = g.tracks.get(a, t);
        [s[0] + dx, s[1] + dy, s[2]]
    })
}

#[test]
fn ade_examples() {
    assert_eq!(min_scene_ade(&[gt()], &gt()).unwrap(), 0.0);
    assert!((min_scene_ade(&[shifted(1.0, 0.0)], &gt()).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(min_scene_ade(&[shifted(1.0, 0.0), gt()], &gt()).unwrap(), 0.0);
}

#[test]
fn fde_examples() {
    assert_eq!(min_scene_fde(&[gt()], &gt()).unwrap(), 0.0);
    let g = gt();
    let final_off = scene(3, 5, |a, t| {
        let s = g.tracks.get(a, t);
        if t == 4 { [s[0], s[1] + 2.0, s[2]] } else { s }
    });
    assert!((min_scene_fde(&[final_off.clone()], &g).unwrap() - 2.0).abs() < 1e-12);
    assert!((min_scene_fde(&[shifted(3.0, 0.0), final_off], &g).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn validity_masks_are_respected() {
    let mut g = gt();
    let mut s = shifted(1.0, 0.0);
    // agent 2 is far off but invalid in the ground truth
    for t in 0..5 {
        s.tracks.set(2, t, [1e3, 1e3, 0.0]);
        g.valid[2 * 5 + t] = false;
    }
    assert!((scene_ade(&s, &g).unwrap() - 1.0).abs() < 1e-12);
    g.valid.iter_mut().for_each(|v| *v = false);
    assert!(matches!(scene_ade(&s, &g), Err(Error::UndefinedMetric(_))));
    assert!(matches!(min_scene_ade(&[], &gt()), Err(Error::Input(_))));
    assert!(min_scene_ade(&[scene(2, 5, |_, _| [0.0; 3])], &gt()).is_err());
}

#[test]
fn miss_rate_examples() {
    let far = vec![shifted(3.0, 0.0); 6];
    assert_eq!(miss_rate(&far, &gt()).unwrap(), 1.0);
    let mut one_close = far.clone();
    one_close[4] = shifted(1.9, 0.0);
    assert_eq!(miss_rate(&one_close, &gt()).unwrap(), 0.0);
    let boundary = vec![shifted(2.0, 0.0); 6];
    assert_eq!(miss_rate(&boundary, &gt()).unwrap(), 1.0);
    assert!(matches!(miss_rate(&far[..5], &gt()), Err(Error::Input(_))));
}

fn report(collisions: Vec<CollisionEvent>) -> RolloutReport {
    RolloutReport {
        planner: PlannerKind::OneShot,
        realized: gt(),
        ego: Some(0),
        step_nfe: vec![79],
        total_nfe: 79,
        collisions,
        wall_time_s: None,
    }
}

#[test]
fn collision_rate_counts_scenarios_once() {
    let quiet: Vec<_> = (0..100).map(|_| report(vec![])).collect();
    assert_eq!(collision_rate(&quiet, &[0; 100]).unwrap(), 0.0);
    let mut some = quiet.clone();
    for r in some.iter_mut().take(3) {
        r.collisions = vec![CollisionEvent { step: 2, a: 0, b: 1 }, CollisionEvent { step: 3, a: 0, b: 1 }];
    }
    // a collision not involving the adversary does not count
    some[50].collisions = vec![CollisionEvent { step: 1, a: 1, b: 2 }];
    assert!((collision_rate(&some, &[0; 100]).unwrap() - 0.03).abs() < 1e-15);
    assert!(collision_rate(&[], &[]).is_err());
}

#[test]
fn ego_examples() {
    assert_eq!(ego_min_ade(&[gt()], &gt(), 1).unwrap(), 0.0);
    assert!((ego_min_ade(&[shifted(0.3, 0.4)], &gt(), 1).unwrap() - 0.5).abs() < 1e-12);
    assert!((ego_min_ade(&[shifted(0.5, 0.0), shifted(0.0, 0.2)], &gt(), 1).unwrap() - 0.2).abs() < 1e-12);
    assert!(matches!(ego_min_ade(&[gt()], &gt(), 3), Err(Error::Input(_))));
}

#[test]
fn report_bundles_everything() {
    let samples: Vec<_> = (0..6).map(|k| shifted(k as f64, 0.0)).collect();
    let r = MetricReport::from_samples(&samples, &gt(), Some(0), 0.25).unwrap();
    assert_eq!((r.min_scene_ade, r.min_scene_fde, r.miss_rate, r.sample_count), (0.0, 0.0, Some(0.0), 6));
    assert_eq!(r.ego_min_ade, Some(0.0));
    assert_eq!(MetricReport::from_samples(&samples[..3], &gt(), None, 0.0).unwrap().miss_rate, None);
}

fn rigid(s: &Scenario, th: f64, tx: f64, ty: f64) -> Scenario {
    let (c, si) = (th.cos(), th.sin());
    scene(s.agents(), s.frames(), |a, t| {
        let p = s.tracks.get(a, t);
        [c * p[0] - si * p[1] + tx, si * p[0] + c * p[1] + ty, p[2] + th]
    })
}

proptest! {
    #[test]
    fn displacement_metrics_are_rigid_invariant(th in -3.0..3.0f64, tx in -100.0..100.0f64, ty in -100.0..100.0f64, dx in -3.0..3.0f64, dy in -3.0..3.0f64) {
        let s = shifted(dx, dy);
        let g = gt();
        let (s2, g2) = (rigid(&s, th, tx, ty), rigid(&g, th, tx, ty));
        prop_assert!((scene_ade(&s, &g).unwrap() - scene_ade(&s2, &g2).unwrap()).abs() < 1e-9);
        prop_assert!((min_scene_fde(&[s.clone()], &g).unwrap() - min_scene_fde(&[s2], &g2).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn adding_samples_never_raises_the_minimum(offsets in proptest::collection::vec((-4.0..4.0f64, -4.0..4.0f64), 1..8)) {
        let samples: Vec<_> = offsets.iter().map(|(x, y)| shifted(*x, *y)).collect();
        let g = gt();
        let all = min_scene_ade(&samples, &g).unwrap();
        for s in &samples {
            prop_assert!(all <= scene_ade(s, &g).unwrap());
        }
        if samples.len() > 1 {
            prop_assert!(min_scene_ade(&samples[..samples.len() - 1], &g).unwrap() >= all);
        }
    }

    #[test]
    fn miss_rate_ignores_candidate_order(offsets in proptest::collection::vec(0.0..4.0f64, 6), rot in 0usize..6) {
        let mut samples: Vec<_> = offsets.iter().map(|x| shifted(*x, 0.0)).collect();
        let g = gt();
        let a = miss_rate(&samples, &g).unwrap();
        samples.rotate_left(rot);
        prop_assert_eq!(a, miss_rate(&samples, &g).unwrap());
    }
}
