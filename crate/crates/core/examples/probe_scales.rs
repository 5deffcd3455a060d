//! Scratch probe: relative magnitudes of speech rows, token embeddings,
//! and position rows at init.

use attune_core::config::RunConfig;
use attune_core::model::SpeechLm;
use attune_core::params::Binder;
use attune_core::taskforge::{Split, TaskForge, TaskKind};
use attune_core::tensor::Graph;

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn main() {
    let cfg = RunConfig::desk();
    let model = SpeechLm::new(&cfg).unwrap();
    let forge = TaskForge::new(&cfg.data, cfg.encoders.feat_dim).unwrap();
    let s = forge.synth_single(TaskKind::Transcribe, 0, Split::Train);

    let g = Graph::new();
    let mut b = Binder::inference(&g);
    let rows = model.speech_rows(&mut b, &s.speech).unwrap();
    let rows = g.value(rows);
    println!("fused speech rows rms: {:.4}", rms(rows.data()));

    let mut emb_rms = 0.0;
    let mut pos_rms = 0.0;
    model.for_each_param(&mut |p| {
        if p.name == "backbone.emb" {
            emb_rms = rms(p.value.data());
        }
        if p.name == "backbone.pos" {
            pos_rms = rms(p.value.data());
        }
    });
    println!("token emb rms: {:.4}", emb_rms);
    println!("pos rms: {:.4}", pos_rms);

    // encoder output magnitude for reference
    let enc = model.semantic.encode_last(&s.speech).unwrap();
    println!("semantic encoder out rms: {:.4}", rms(enc.features.data()));
}
