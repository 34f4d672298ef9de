use std::collections::BTreeMap;

use teardown_core::batch::{compare_arms, compare_modes, run_batch, RunConfig};
use teardown_core::model::{Capability, Category, Layer};
use teardown_core::ActionKind;
use teardown_core::scenario::Scenario;
use teardown_core::sim::{read_csv, run_loop, ArmSetup, FaultKind, Mode, Outcome, Phase, SimConfig, SimError, Task};

fn samsung() -> Scenario {
    Scenario::bundled("samsung").unwrap()
}

fn clean() -> SimConfig {
    SimConfig {
        faults: false,
        ..SimConfig::default()
    }
}

/// Only the lid layer: seven screws and the lid.
fn lid_only() -> Scenario {
    let mut sc = samsung();
    sc.parts.retain(|p| p.layer == Layer::L1);
    sc
}

#[test]
fn empty_scenario_completes_with_empty_timeline() {
    let mut sc = samsung();
    sc.parts.clear();
    let out = run_loop(&sc, &clean(), 3).unwrap();
    assert!(out.timeline.is_empty());
    assert!(out.metrics.completed);
    assert_eq!(out.metrics.makespan_s, 0.0);
}

#[test]
fn fault_free_fine_runs_clear_every_layer() {
    for name in ["samsung", "seagate", "western_digital"] {
        let sc = Scenario::bundled(name).unwrap();
        for seed in 0..100 {
            let m = run_loop(&sc, &clean(), seed).unwrap().metrics;
            assert!(m.completed, "{name} seed {seed}");
            assert_eq!(m.clearance_rate, [1.0; 3], "{name} seed {seed}");
            let total: f64 = m.layer_times_s.iter().sum();
            assert!((total - m.makespan_s).abs() < 1e-6);
        }
    }
}

#[test]
fn node_counts_are_conserved() {
    let sc = Scenario::bundled("western_digital").unwrap();
    for seed in 0..300 {
        let m = run_loop(&sc, &SimConfig::default(), seed).unwrap().metrics;
        assert!(m.nodes.conserved(), "seed {seed}: {:?}", m.nodes);
    }
    for seed in 0..100 {
        let cfg = SimConfig {
            mode: Mode::Coarse,
            ..SimConfig::default()
        };
        let m = run_loop(&sc, &cfg, seed).unwrap().metrics;
        assert!(m.nodes.conserved(), "coarse seed {seed}: {:?}", m.nodes);
    }
}

#[test]
fn per_arm_events_never_overlap() {
    let sc = samsung();
    for seed in 0..50 {
        for arms in [ArmSetup::Dual, ArmSetup::Single] {
            let cfg = SimConfig { arms, ..SimConfig::default() };
            let tl = run_loop(&sc, &cfg, seed).unwrap().timeline;
            let mut by_arm: BTreeMap<&str, Vec<(u64, u64)>> = BTreeMap::new();
            for w in tl.events.windows(2) {
                assert!(w[0].t_start <= w[1].t_start);
            }
            for e in &tl.events {
                assert!(e.t_end >= e.t_start);
                by_arm.entry(&e.arm).or_default().push((e.t_start, e.t_end));
            }
            for spans in by_arm.values() {
                for w in spans.windows(2) {
                    assert!(w[0].1 <= w[1].0, "seed {seed}: {:?} then {:?}", w[0], w[1]);
                }
            }
        }
    }
}

#[test]
fn hosts_come_off_after_their_fasteners() {
    for name in ["samsung", "western_digital"] {
        let sc = Scenario::bundled(name).unwrap();
        let edges: Vec<(u32, u32)> = sc.full_graph().unwrap().edges().map(|e| (e.from.0, e.to.0)).collect();
        for seed in 0..200 {
            let out = run_loop(&sc, &SimConfig::default(), seed).unwrap();
            let at: BTreeMap<u32, u64> = out.extractions.iter().map(|e| (e.spec_id, e.t)).collect();
            for (from, to) in &edges {
                if let Some(t_to) = at.get(to) {
                    let t_from = at.get(from).unwrap_or_else(|| panic!("{name} seed {seed}: {to} out before {from}"));
                    assert!(t_from <= t_to);
                }
            }
        }
    }
}

#[test]
fn device_flip_is_an_l3_event() {
    let out = run_loop(&samsung(), &clean(), 1).unwrap();
    let flips: Vec<_> = out.timeline.events.iter().filter(|e| e.task == Task::Flip).collect();
    assert_eq!(flips.len(), 1);
    assert_eq!(flips[0].arm, "device");
    assert_eq!(flips[0].layer, Layer::L3);
    assert_eq!(flips[0].t_end - flips[0].t_start, 300);
    let last_l2 = out.timeline.events.iter().filter(|e| e.layer == Layer::L2).map(|e| e.t_end).max().unwrap();
    assert!(flips[0].t_start >= last_l2);
}

#[test]
fn timeline_csv_round_trips() {
    let out = run_loop(&samsung(), &SimConfig::default(), 8).unwrap();
    let text = out.timeline.to_csv_string();
    let records = read_csv(text.as_bytes()).unwrap();
    assert_eq!(records.len(), out.timeline.events.len());
    for (i, (r, e)) in records.iter().zip(&out.timeline.events).enumerate() {
        assert_eq!(r, &e.record(&out.timeline.clock));
        let parsed = r.parse(&out.timeline.clock, i).unwrap();
        assert_eq!(parsed.t_start, e.t_start);
        assert_eq!(parsed.t_end, e.t_end);
    }
}

#[test]
fn exhausted_retries_abandon_the_screw() {
    let mut sc = lid_only();
    sc.engagement.p_success_fine = 0.0;
    let out = run_loop(&sc, &clean(), 2).unwrap();
    assert!(!out.metrics.completed);
    assert_eq!(out.metrics.clearance(Layer::L1), 0.0);
    let abandoned = out.timeline.events.iter().filter(|e| e.outcome == Outcome::Abandoned).count();
    assert_eq!(abandoned, 7);
    // six attempts per screw with the default policy
    assert_eq!(out.metrics.engage_failures, 7 * 6);
    assert!(out.metrics.nodes.conserved());
}

#[test]
fn coarse_mode_is_single_attempt() {
    let mut sc = lid_only();
    sc.engagement.p_success_coarse = 0.0;
    let cfg = SimConfig {
        mode: Mode::Coarse,
        ..clean()
    };
    let out = run_loop(&sc, &cfg, 2).unwrap();
    assert_eq!(out.metrics.engage_failures, 7);
    assert!(out.timeline.events.iter().all(|e| e.phase != Phase::Align));
}

#[test]
fn seal_leak_aborts_the_trial() {
    let mut sc = samsung();
    sc.faults.vacuum_seal_leak.probability = 1.0;
    let out = run_loop(&sc, &SimConfig::default(), 4).unwrap();
    assert_eq!(out.metrics.aborted_by, Some(FaultKind::VacuumSealLeak));
    assert!(!out.metrics.completed);
    let last = out.timeline.events.iter().map(|e| e.t_end).max().unwrap();
    let fault = out
        .timeline
        .events
        .iter()
        .find(|e| e.outcome == Outcome::Fault(FaultKind::VacuumSealLeak))
        .unwrap();
    assert_eq!(fault.t_end, last);
    assert_eq!(out.metrics.clearance(Layer::L3), 0.0);
}

#[test]
fn recoverable_illumination_loss_costs_time_only() {
    let mut sc = samsung();
    sc.faults.illumination_loss.probability = 1.0;
    sc.faults.illumination_loss.safe_abort = false;
    let base = run_loop(&sc, &clean(), 6).unwrap();
    let out = run_loop(&sc, &SimConfig::default(), 6).unwrap();
    assert!(out.metrics.completed);
    assert_eq!(out.metrics.faults, vec![FaultKind::IlluminationLoss]);
    assert!(out.metrics.makespan_s > base.metrics.makespan_s);
}

#[test]
fn loose_lid_screw_is_unscrewed_again() {
    let mut sc = samsung();
    sc.faults.incomplete_disengage.probability = 1.0;
    let out = run_loop(&sc, &SimConfig::default(), 11).unwrap();
    assert!(out.metrics.completed);
    assert_eq!(out.metrics.faults, vec![FaultKind::IncompleteDisengage]);
    let turns = out
        .timeline
        .events
        .iter()
        .filter(|e| e.layer == Layer::L1 && e.phase == Phase::Operate && e.task == Task::Action(ActionKind::Unscrew))
        .count();
    assert_eq!(turns, 8);
    let lid_screws = out.extractions.iter().filter(|e| e.category == Category::new("lid_screw")).count();
    assert_eq!(lid_screws, 7);
}

#[test]
fn hold_partner_runs_alongside_unscrewing() {
    let mut sc = samsung();
    for c in &mut sc.categories {
        if c.name == Category::new("platter_holder") {
            c.requires_hold = true;
        }
    }
    let out = run_loop(&sc, &clean(), 5).unwrap();
    assert!(out.metrics.completed);
    let holds: Vec<_> = out.timeline.events.iter().filter(|e| e.phase == Phase::Hold).collect();
    assert!(holds.len() >= 8);
    for h in &holds {
        assert_eq!(h.arm, "manipulation");
        let covered = out.timeline.events.iter().any(|e| {
            e.arm == "tooling" && e.t_start >= h.t_start && e.t_end <= h.t_end
        });
        assert!(covered, "hold {h:?} does not cover the tooling arm");
    }
    let paired = out.dispatches.iter().filter(|d| d.paired_with.is_some()).count();
    assert_eq!(paired, 2 * holds.len());

    let single = SimConfig {
        arms: ArmSetup::Single,
        ..clean()
    };
    assert!(matches!(run_loop(&sc, &single, 5), Err(SimError::Scenario(_))));
}

#[test]
fn hold_on_the_operating_arm_deadlocks() {
    let mut sc = samsung();
    for c in &mut sc.categories {
        if c.name == Category::new("lid") {
            c.requires_hold = true;
        }
    }
    sc.arms[1].capabilities.retain(|c| c != &Capability::new("hold"));
    sc.arms[0].capabilities.push(Capability::new("hold"));
    match run_loop(&sc, &clean(), 0) {
        Err(SimError::Scenario(msg)) => assert!(msg.contains("deadlock"), "{msg}"),
        other => panic!("expected deadlock, got {:?}", other.map(|o| o.metrics)),
    }
}

#[test]
fn fine_alignment_costs_time_when_it_always_works() {
    let mut sc = lid_only();
    sc.engagement.p_success_fine = 1.0;
    sc.engagement.p_success_coarse = 1.0;
    let cmp = compare_modes(&sc, 3, 0, false).unwrap();
    assert_eq!(cmp.coarse.mean_clearance[0], 1.0);
    assert!(cmp.fine.mean_layer_time_s[0] > cmp.coarse.mean_layer_time_s[0]);
    assert_eq!(cmp.fine.trials, 3);
}

#[test]
fn single_trial_comparison_is_not_averaged() {
    let sc = samsung();
    let cmp = compare_modes(&sc, 1, 9, false).unwrap();
    let direct = run_loop(
        &sc,
        &SimConfig {
            mode: Mode::Coarse,
            ..clean()
        },
        9,
    )
    .unwrap();
    assert_eq!(cmp.coarse.mean_layer_time_s, direct.metrics.layer_times_s);
}

#[test]
fn no_parallel_work_means_equal_makespans() {
    // one screw then the lid: nothing can overlap, and the manipulation arm
    // starts where the tooling arm leaves off
    let mut sc = lid_only();
    sc.parts.retain(|p| p.id == 1 || p.category == Category::new("lid"));
    sc.arms[1].home_mm = sc.arms[0].drop_pose_mm;
    sc.arms[1].drop_pose_mm = sc.arms[0].drop_pose_mm;
    let cmp = compare_arms(&sc, 5, 0, Mode::Fine, false).unwrap();
    for (seed, single, dual) in &cmp.makespans {
        assert_eq!(single, dual, "seed {seed}");
    }
    assert!(cmp.dual_never_slower());
}

#[test]
fn batch_outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = |dir: &std::path::Path| RunConfig {
        scenario_path: "seagate".into(),
        trials: 4,
        seed: 77,
        mode: Mode::Fine,
        arms: ArmSetup::Dual,
        faults: true,
        output_dir: Some(dir.to_path_buf()),
    };
    let ra = run_batch(&cfg(a.path())).unwrap();
    let rb = run_batch(&cfg(b.path())).unwrap();
    assert_eq!(ra.report, rb.report);
    for name in ["report.csv", "summary.txt", "trials.csv", "timeline_0000.csv", "timeline_0003.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn fault_free_batch_reports_full_success() {
    let out = run_batch(&RunConfig {
        scenario_path: "samsung".into(),
        trials: 10,
        seed: 0,
        mode: Mode::Fine,
        arms: ArmSetup::Dual,
        faults: false,
        output_dir: None,
    })
    .unwrap();
    assert_eq!(out.report.successes, 10);
    assert_eq!(out.report.success_rate, 1.0);
    assert_eq!(out.report.mean_clearance, [1.0; 3]);
}
