//! Scratch calibration runs for the desk profile (not part of the test
//! suite; run with `cargo run --release -p attune-core --example calibrate`).

use std::time::Instant;

use attune_core::config::RunConfig;
use attune_core::evalsuite::{accuracy_percent, exact_percent, ifr_rates};
use attune_core::model::{ScalingMode, SpeechLm};
use attune_core::taskforge::{TaskForge, TaskKind};
use attune_core::params::Binder;
use attune_core::tensor::Graph;
use attune_core::trainer::{train_stage, TrainData, TrainJob};

/// Teacher-forced next-token accuracy over masked positions.
fn tf_accuracy(model: &SpeechLm, samples: &[attune_core::taskforge::InstructionSample]) -> f64 {
    let mut hit = 0usize;
    let mut tot = 0usize;
    for s in samples {
        let input = model.prepare(s).unwrap();
        let g = Graph::new();
        let mut b = Binder::inference(&g);
        let out = model.forward_loss(&mut b, &input, ScalingMode::Plain).unwrap();
        let logits = g.value(out.logits);
        let r = &input.rendered;
        for i in 1..r.tokens.len() {
            if r.mask[i] == 1.0 {
                let pred = attune_core::model::argmax(logits.row(i - 1));
                hit += usize::from(pred == r.labels[i]);
                tot += 1;
            }
        }
    }
    100.0 * hit as f64 / tot as f64
}

fn main() {
    let mut cfg = RunConfig::desk();
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let s2_steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    if let Some(r) = args.get(4).and_then(|s| s.parse().ok()) {
        cfg.model.lora_rank = r;
    }
    if let Some(b) = args.get(5).and_then(|s| s.parse().ok()) {
        cfg.stage1.batch_size = b;
        cfg.stage2.batch_size = b;
    }
    cfg.stage1.steps = steps;
    cfg.stage1.peak_lr = lr;
    cfg.stage2.steps = s2_steps;
    cfg.stage2.peak_lr = lr / 2.0;
    println!("steps={steps} lr={lr} r={} batch={}", cfg.model.lora_rank, cfg.stage1.batch_size);

    let mut model = SpeechLm::new(&cfg).unwrap();
    match std::env::var("UNFREEZE").as_deref() {
        Ok("attn") => {
            model.for_each_param_mut(&mut |p| {
                if p.name.contains(".attn.") && p.name.ends_with(".w0") {
                    p.frozen = false;
                }
            });
            println!("DIAGNOSTIC: attention bases unfrozen");
        }
        Ok("all") => {
            model.for_each_param_mut(&mut |p| {
                if p.name.starts_with("backbone") {
                    p.frozen = false;
                }
            });
            println!("DIAGNOSTIC: whole backbone unfrozen");
        }
        _ => {}
    }
    let forge = TaskForge::new(&cfg.data, cfg.encoders.feat_dim).unwrap();
    println!("vocab = {}", model.vocab.len());

    let mut singles = forge.stage1_pool(cfg.data.train_single_per_kind, 0);
    if let Ok(filter) = std::env::var("KINDS") {
        singles.retain(|s| s.tags.iter().any(|t| t.contains(&filter)));
        println!("filtered to kind {filter}");
    }
    println!("stage1 pool = {} samples", singles.len());
    let data = TrainData::singles_only(singles);

    let t0 = Instant::now();
    let run = train_stage(&mut model, &data, TrainJob::stage1(&cfg.stage1)).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "stage1: {} steps in {:.1}s ({:.0} ms/step); loss {:.4} -> {:.4}",
        run.records.len(),
        dt,
        1000.0 * dt / run.records.len().max(1) as f64,
        run.records.first().map(|r| r.loss).unwrap_or(0.0),
        run.records.last().map(|r| r.loss).unwrap_or(0.0),
    );
    for chunk in run.records.chunks(run.records.len().max(10) / 10) {
        let mean: f64 = chunk.iter().map(|r| r.loss).sum::<f64>() / chunk.len() as f64;
        println!("  steps {:5}..{:5}: mean loss {:.4}", chunk[0].step, chunk.last().unwrap().step, mean);
    }

    let t_eval = Instant::now();
    for kind in [TaskKind::Transcribe, TaskKind::Classify, TaskKind::Sqa, TaskKind::Translate, TaskKind::TextIt, TaskKind::Summarize] {
        let eval = forge.eval_single_pool(kind, 30, 0);
        let acc = accuracy_percent(&model, &eval, ScalingMode::Plain).unwrap();
        let em = exact_percent(&model, &eval, ScalingMode::Plain).unwrap();
        let train_probe: Vec<_> = (0..30).map(|i| forge.synth_single(kind, i, attune_core::taskforge::Split::Train)).collect();
        let tacc = accuracy_percent(&model, &train_probe, ScalingMode::Plain).unwrap();
        let tf = tf_accuracy(&model, &eval);
        println!("stage1 {kind:?}: eval token acc {acc:.1}%, exact {em:.1}%, TRAIN acc {tacc:.1}%, TF acc {tf:.1}%");
    }
    println!("eval took {:.1}s", t_eval.elapsed().as_secs_f64());
    // qualitative dump
    for seed in [0u64, 1] {
        let s = forge.synth_single(TaskKind::Transcribe, seed, attune_core::taskforge::Split::Train);
        let gen = model.generate(&s.speech, &s.prompt, ScalingMode::Plain, 12).unwrap();
        println!("  sample {seed}: target {:?} | gen {:?}", s.target, model.vocab.detokenize(model.strip_eos(&gen)));
    }

    if s2_steps > 0 {
        let multi = forge.stage2_multi_pool(cfg.data.train_multi, 1_000_000).unwrap();
        let data2 = TrainData {
            single: data.single.clone(),
            multi,
        };
        let t2 = Instant::now();
        let mut job = TrainJob::stage2(&cfg.stage2);
        job.init_from_stage = Some(1);
        let run2 = train_stage(&mut model, &data2, job).unwrap();
        let dt2 = t2.elapsed().as_secs_f64();
        println!(
            "stage2: {} steps in {:.1}s ({:.0} ms/step); final loss {:.4}",
            run2.records.len(),
            dt2,
            1000.0 * dt2 / run2.records.len().max(1) as f64,
            run2.records.last().map(|r| r.loss).unwrap_or(0.0),
        );
        let eval_multi = forge.eval_multi_pool(30, 0).unwrap();
        let (followed, correct) = ifr_rates(&model, &eval_multi, ScalingMode::Adaptive).unwrap();
        println!("stage2 multi: IFR followed {followed:.1}%, correct {correct:.1}%");
        for kind in [TaskKind::Transcribe, TaskKind::Classify] {
            let eval = forge.eval_single_pool(kind, 30, 0);
            let acc = accuracy_percent(&model, &eval, ScalingMode::Adaptive).unwrap();
            println!("stage2 {kind:?}: token acc {acc:.1}%");
        }
    }
}
