use predguide::data::{generate, GeneratorConfig};
use predguide::losses::ActiveTerms;
use predguide::trainer::{Mode, RunConfig, ScheduleConfig, Trainer};

fn toy() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.generator = GeneratorConfig {
        num_classes: 3,
        source_per_class: 40,
        target_per_class: 30,
        ..GeneratorConfig::default()
    };
    cfg.iterations = 200;
    cfg.recompute_every = 20;
    cfg.schedule = ScheduleConfig {
        eval_every: 5,
        patience: 3,
        target_eval_every: 50,
        ..ScheduleConfig::default()
    };
    cfg
}

fn pinned(mode: Mode, t1: usize, t2: usize) -> RunConfig {
    let mut cfg = toy();
    cfg.mode = mode;
    cfg.schedule.t1 = Some(t1);
    cfg.schedule.t2 = Some(t2);
    cfg
}

#[test]
fn s_plus_t_uses_only_source_and_labeled_target() {
    let cfg = RunConfig { mode: Mode::SPlusT, ..toy() };
    let bundle = cfg.dataset().unwrap();
    let res = Trainer::new(cfg, &bundle).unwrap().run(|_| Ok(())).unwrap();
    let want = ActiveTerms {
        source: true,
        labeled_target: true,
        ..ActiveTerms::default()
    };
    assert!(res.history.iter().all(|r| r.active == want && r.l_p == 0.0 && r.l_ult == 0.0));
    assert!(res.history.iter().all(|r| r.weight_min == 1.0 && r.weight_max == 1.0));
    assert!(res.recompute_iterations.is_empty());
}

#[test]
fn uda_only_never_reads_labeled_target_labels() {
    let cfg = RunConfig { mode: Mode::UdaOnly, ..toy() };
    let bundle = cfg.dataset().unwrap();
    let res = Trainer::new(cfg, &bundle).unwrap().run(|_| Ok(())).unwrap();
    assert_eq!(bundle.lt_label_reads(), 0);
    assert!(res.history.iter().all(|r| !r.active.labeled_target && !r.active.source_weighted));
    assert!(res.t1.is_none() && res.t2.is_none());

    // the counter does work
    let cfg = RunConfig { mode: Mode::Predguide, ..toy() };
    let bundle = cfg.dataset().unwrap();
    Trainer::new(cfg, &bundle).unwrap();
    assert!(bundle.lt_label_reads() > 0);
}

#[test]
fn gate_flips_at_t1_and_t2() {
    let cfg = pinned(Mode::Predguide, 40, 90);
    let bundle = cfg.dataset().unwrap();
    let mut tr = Trainer::new(cfg, &bundle).unwrap();
    let recs: Vec<_> = (0..100).map(|_| tr.step().unwrap()).collect();
    assert!(recs[39].active.source && !recs[39].active.source_weighted);
    assert!(!recs[40].active.source && recs[40].active.source_weighted);
    assert!(!recs[90].active.labeled_target && recs[91].active.labeled_target);
    let recomputed: Vec<usize> = recs.iter().filter(|r| r.recomputed).map(|r| r.t).collect();
    assert_eq!(recomputed, vec![40, 60, 80]);
    assert_eq!(tr.weights().created_at, Some(80));
}

#[test]
fn identical_state_gives_identical_step() {
    let cfg = pinned(Mode::Predguide, 10, 20);
    let bundle = cfg.dataset().unwrap();
    let mut a = Trainer::new(cfg, &bundle).unwrap();
    for _ in 0..25 {
        a.step().unwrap();
    }
    let mut b = a.clone();
    let ra = a.step().unwrap();
    let rb = b.step().unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.params().to_flat(), b.params().to_flat());
}

#[test]
fn phi_zero_matches_no_weights() {
    let base = RunConfig { phi: 0.0, ..pinned(Mode::Predguide, 30, 60) };
    let bundle = base.dataset().unwrap();
    let a = Trainer::new(base.clone(), &bundle).unwrap().run(|_| Ok(())).unwrap();
    let b = Trainer::new(RunConfig { mode: Mode::NoWeights, ..base }, &bundle)
        .unwrap()
        .run(|_| Ok(()))
        .unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
}

#[test]
fn ablation_modes_run_and_respect_their_tables() {
    for mode in [Mode::FixedWeights, Mode::NearOnly, Mode::FarOnly, Mode::Focal] {
        let cfg = pinned(mode, 30, 60);
        let bundle = cfg.dataset().unwrap();
        let res = Trainer::new(cfg, &bundle).unwrap().run(|_| Ok(())).unwrap();
        let w = res.final_weights.weights();
        match mode {
            Mode::FixedWeights => assert!(w.iter().all(|&x| x == 0.5 || x == 1.5)),
            Mode::NearOnly => assert!(w.iter().all(|&x| x >= 1.0)),
            Mode::FarOnly => assert!(w.iter().all(|&x| x <= 1.0)),
            _ => assert!(res.recompute_iterations.is_empty()),
        }
        assert!(res.final_target_accuracy() > 0.0);
    }
}

#[test]
fn smoke_run_detects_both_phases() {
    let mut detected = 0;
    for seed in 0..5 {
        let cfg = RunConfig { seed, ..toy() };
        let bundle = cfg.dataset().unwrap();
        let res = Trainer::new(cfg, &bundle).unwrap().run(|_| Ok(())).unwrap();
        assert!(res.final_target_accuracy() > 1.0 / 3.0, "seed {seed}: {}", res.final_target_accuracy());
        if let (Some(t1), Some(t2)) = (res.t1, res.t2) {
            assert!(t1 < t2 && t2 <= 200);
            detected += 1;
        }
    }
    assert!(detected >= 4, "T1 < T2 detected in only {detected} of 5 runs");
}

#[test]
fn steps_descend_on_their_own_batch() {
    let cfg = pinned(Mode::Predguide, 50, 100);
    let bundle = cfg.dataset().unwrap();
    let mut tr = Trainer::new(cfg, &bundle).unwrap();
    let mut total = 0.0;
    for _ in 0..200 {
        let (_, p) = tr.step_probe().unwrap();
        total += p.after - p.before;
    }
    assert!(total < 0.0, "mean change {}", total / 200.0);
}

#[test]
fn exhausted_trainer_refuses_to_step() {
    let cfg = RunConfig { iterations: 3, ..toy() };
    let bundle = generate(&cfg.data.generator).unwrap();
    let mut tr = Trainer::new(cfg, &bundle).unwrap();
    for _ in 0..3 {
        tr.step().unwrap();
    }
    assert!(tr.is_done());
    assert!(tr.step().is_err());
}
