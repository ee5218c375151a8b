use rollsim::config::{parse_planner, RunConfig};
use rollsim::Error;
use rollsim_core::diffusion::TaskKind;
use rollsim_core::engine::PlannerKind;

fn load(text: &str) -> rollsim::Result<RunConfig> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, text).unwrap();
    RunConfig::load(&path)
}

#[test]
fn empty_file_gives_the_defaults() {
    let cfg = load("").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!((cfg.schedule.window, cfg.schedule.obs_count, cfg.schedule.task_ratio), (15, 10, 0.1));
    assert_eq!(cfg.training.augment.p_ca, 0.5);
    assert_eq!((cfg.planner.horizon, cfg.planner.samples, cfg.planner.adversary_time_scale), (40, 3, 0.5));
    assert_eq!(cfg.sampler.warmup_steps, 40);
}

#[test]
fn sections_override_defaults() {
    let cfg = load("seed = 9\n[schedule]\nwindow = 20\n[planner]\nkind = \"mpc-5\"\n[training.augment]\np_ca = 0.2\n").unwrap();
    assert_eq!((cfg.seed, cfg.schedule.window, cfg.training.augment.p_ca), (9, 20, 0.2));
    assert_eq!(cfg.planner().unwrap(), PlannerKind::Mpc { replan: 5 });
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    assert!(matches!(load("[planner]\nhorizn = 3\n"), Err(Error::Schema { .. })));
    assert!(matches!(load("[training.augment]\np_ca = 1.5\n"), Err(Error::Config(_))));
    assert!(matches!(load("[planner]\nkind = \"mpc-0\"\n"), Err(Error::Config(_))));
    assert!(load("[schedule]\nwindow = 10\n").is_err());
}

#[test]
fn referenced_files_must_exist() {
    let err = load("[world]\ncheckpoint = \"/nonexistent/checkpoint.json\"\n").unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn planner_names() {
    assert_eq!(parse_planner("rolling", 20, 10).unwrap(), PlannerKind::Rolling { window: 20, obs_count: 10 });
    assert_eq!(parse_planner("ar", 20, 10).unwrap(), PlannerKind::Autoregressive);
    assert_eq!(parse_planner("autoregressive", 20, 10).unwrap(), PlannerKind::Autoregressive);
    assert_eq!(parse_planner("one-shot", 20, 10).unwrap(), PlannerKind::OneShot);
    assert_eq!(parse_planner("mpc-12", 20, 10).unwrap(), PlannerKind::Mpc { replan: 12 });
    assert!(parse_planner("mpc", 20, 10).is_err());
    assert!(parse_planner("beam", 20, 10).is_err());
}

#[test]
fn model_windows_follow_the_planner() {
    let cfg = RunConfig::default();
    let w = |p| cfg.model_schedule(p).window;
    assert_eq!(w(PlannerKind::Rolling { window: 20, obs_count: 10 }), 20);
    assert_eq!(w(PlannerKind::Autoregressive), 11);
    assert_eq!(w(PlannerKind::OneShot), 50);
    assert_eq!(w(PlannerKind::Mpc { replan: 5 }), 20);
    assert_eq!(w(PlannerKind::Mpc { replan: 12 }), 22);
    assert_eq!(cfg.batch_config(PlannerKind::Rolling { window: 15, obs_count: 10 }).task, TaskKind::RollingWindow);
    assert_eq!(cfg.batch_config(PlannerKind::OneShot).task, TaskKind::Joint);
}

#[test]
fn shipped_config_loads() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.planner().unwrap(), PlannerKind::Rolling { window: 20, obs_count: 10 });
    assert_eq!((cfg.training.model.width, cfg.sampler.warmup_steps), (16, 10));
}
