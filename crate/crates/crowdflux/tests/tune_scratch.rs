// scratch calibration harness - delete before finalizing
use crowdflux::config::PipelineConfig;
use crowdflux::pipeline::{run_detect, run_train, DetectOptions};
use crowdflux::synth::{simulate_scenario, Preset, ScenarioConfig};

#[test]
#[ignore]
fn tune_benchmark() {
    let scenario_cfg = ScenarioConfig {
        preset: Preset::Panic,
        width: 320,
        height: 240,
        frames: 1001,
        agents: 40,
        v_walk: 1.2,
        agent_radius: 4.0,
        t_anomaly: 750,
        intruder_speed: None,
        seed: 2024,
    };
    for scen_seed in [2024u64, 1, 99, 7777] {
    let sc = simulate_scenario(&scenario_cfg, scen_seed).unwrap();

    for cap in ["0.1"] {
        for lambda in ["0.03", "0.05"] {
            for d in [("1.0"), ("2.0"), ("4.0")] {
            let mut cfg = PipelineConfig::default();
            for (k, v) in [("tau_min", "1.0"), ("seed", "7"), ("lambda", lambda), ("force_cap", cap), ("d", "5"), ("radius", "10"), ("fps", "10"), ("tau0", d)] {
                cfg.set(k, v).unwrap();
            }
            let t0 = std::time::Instant::now();
            let train = run_train(sc.flow_fields().take(500).map(Ok), &cfg).unwrap();
            let run = run_detect(
                sc.flow_fields().skip(500).map(Ok),
                &train.model,
                &DetectOptions { start_frame: 500, ..Default::default() },
            )
            .unwrap();
            let truth: Vec<bool> = run.frame_scores.iter().map(|&(f, _)| f >= 750).collect();
            let scores: Vec<f64> = run.frame_scores.iter().map(|&(_, s)| s).collect();
            let report = crowdflux::eval::frame_level_eval(&scores, &truth).unwrap();
            let far = run
                .frame_scores
                .iter()
                .filter(|&&(f, s)| f < 750 && s >= report.eer_threshold)
                .count() as f64
                / run.frame_scores.iter().filter(|&&(f, _)| f < 750).count() as f64;
            let globals = run.events.iter().filter(|e| e.global).count();
            println!(
                "seed={scen_seed} cap={cap:>4} lambda={lambda:>5} tau0x10={d}: s={:<3} unc={:<4} auc={:.4} eer={:.4} far={:.4} thr={:.3} glob={} ({:.1?})",
                train.model.group.s(),
                train.uncovered,
                report.auc,
                report.eer,
                far,
                report.eer_threshold,
                globals,
                t0.elapsed()
            );
            }
        }
    }
    }
}

#[test]
#[ignore]
fn tune_intruder() {
    let scenario_cfg = ScenarioConfig {
        preset: Preset::Intruder,
        width: 320,
        height: 240,
        frames: 1001,
        agents: 240,
        v_walk: 1.2,
        agent_radius: 4.0,
        t_anomaly: 700,
        intruder_speed: Some(4.0),
        seed: 515,
    };
    let sc = simulate_scenario(&scenario_cfg, scenario_cfg.seed).unwrap();
    for cap in ["0.1"] {
        let mut cfg = PipelineConfig::default();
        for (k, v) in [("tau_min", "1.0"), ("seed", "7"), ("lambda", "0.05"), ("force_cap", cap), ("d", "5"), ("radius", "10"), ("fps", "10"), ("tau0", "2.0")] {
            cfg.set(k, v).unwrap();
        }
        let train = run_train(sc.flow_fields().take(500).map(Ok), &cfg).unwrap();
        let run = run_detect(
            sc.flow_fields().skip(500).map(Ok),
            &train.model,
            &DetectOptions { start_frame: 500, ..Default::default() },
        )
        .unwrap();

        let grid = run.grid;
        let truth: std::collections::BTreeMap<usize, Vec<u8>> =
            (500..980).map(|f| (f, sc.gt_mask(f))).collect();
        let frames = crowdflux::pipeline::assemble_pixel_frames(&run.records, 30, &grid, &truth);
        let pos = frames.iter().filter(|f| f.truth_pixels > 0).count();
        let report = crowdflux::eval::pixel_level_eval(&frames, 0.40).unwrap();
        println!(
            "cap={cap}: s={} pos_frames={pos} pixel auc={:.4} eer={:.4} rd={:?}",
            train.model.group.s(),
            report.auc,
            report.eer,
            report.rd
        );
    }
}
