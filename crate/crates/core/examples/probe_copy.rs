//! Scratch probe: can the backbone alone learn a plain text copy task?

use attune_core::backbone::{Backbone, LoraMode};
use attune_core::config::ModelConfig;
use attune_core::model::argmax;
use attune_core::params::Binder;
use attune_core::rng::Rng;
use attune_core::tensor::Graph;
use attune_core::trainer::{adam_step, AdamSlot, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

const V: usize = 32;
const BOS: usize = 0;
const SEP: usize = 1;
const EOS: usize = 2;

fn sample(rng: &mut Rng, len: usize) -> (Vec<usize>, Vec<f64>) {
    let mut pool: Vec<usize> = (3..V).collect();
    rng.shuffle(&mut pool);
    let words = &pool[..len];
    let mut toks = vec![BOS];
    toks.extend_from_slice(words);
    toks.push(SEP);
    toks.extend_from_slice(words);
    toks.push(EOS);
    let mut mask = vec![0.0; toks.len()];
    let start = 2 + len;
    for m in mask.iter_mut().skip(start) {
        *m = 1.0;
    }
    (toks, mask)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let mode: String = args.get(3).cloned().unwrap_or_else(|| "full".into());

    let cfg = ModelConfig {
        dim: 64,
        depth: 4,
        heads: 4,
        ffn_dim: 128,
        lora_rank: 4,
        prompt_bottleneck: 16,
        max_seq: 64,
        init_seed: 7,
    };
    let mut bb = Backbone::new(&cfg, V, 3);
    for p in bb.params_mut() {
        match mode.as_str() {
            "full" => {
                if p.name.starts_with("backbone") {
                    p.frozen = false;
                }
            }
            "lora" => {}
            _ => panic!("mode full|lora"),
        }
    }
    let mut slots: std::collections::BTreeMap<String, AdamSlot> = Default::default();
    let mut n_train = 0;
    for p in bb.params_mut() {
        if !p.frozen {
            n_train += 1;
            slots.insert(
                p.name.clone(),
                AdamSlot {
                    m: attune_core::tensor::Array::zeros(p.value.shape()),
                    v: attune_core::tensor::Array::zeros(p.value.shape()),
                },
            );
        }
    }
    println!("trainables: {n_train} tensors");

    let lora_mode = if mode == "lora" { LoraMode::Plain } else { LoraMode::Disabled };
    let mut t = 0u64;
    for step in 0..steps {
        let g = Graph::new();
        let mut binder = Binder::training(&g);
        let mut total = None;
        let mut rng = Rng::new(1).derive(step as u64);
        for _ in 0..8 {
            let len = 2 + rng.below(4);
            let (toks, mask) = sample(&mut rng, len);
            let rows = bb.embed_tokens(&mut binder, &toks).unwrap();
            let rows = bb.add_positions(&mut binder, rows).unwrap();
            let h = bb.hidden_states(&mut binder, rows, lora_mode).unwrap();
            let logits = bb.logits(&mut binder, h).unwrap();
            let s = toks.len();
            let pred = g.slice_rows(logits, 0, s - 1).unwrap();
            let loss = g.masked_cross_entropy(pred, &toks[1..], &mask[1..]).unwrap();
            total = Some(match total {
                None => loss,
                Some(tl) => g.add(tl, loss).unwrap(),
            });
        }
        let loss = g.scale(total.unwrap(), 1.0 / 8.0).unwrap();
        let lv = g.value(loss).item();
        let grads = g.backward(loss).unwrap();
        t += 1;
        for p in bb.params_mut() {
            if let Some(slot) = slots.get_mut(&p.name) {
                if let Some(var) = binder.bound_var(&p.name) {
                    if let Some(grad) = grads.get(var) {
                        adam_step(&p.name, &mut p.value, grad, slot, t, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
                            .unwrap();
                    }
                }
            }
        }
        if step % (steps / 10).max(1) == 0 {
            println!("step {step}: loss {lv:.4}");
        }
    }

    // teacher-forced accuracy
    let mut hit = 0;
    let mut tot = 0;
    let mut rng = Rng::new(777);
    for _ in 0..50 {
        let len = 2 + rng.below(4);
        let (toks, mask) = sample(&mut rng, len);
        let g = Graph::new();
        let mut binder = Binder::inference(&g);
        let rows = bb.embed_tokens(&mut binder, &toks).unwrap();
        let rows = bb.add_positions(&mut binder, rows).unwrap();
        let h = bb.hidden_states(&mut binder, rows, lora_mode).unwrap();
        let logits = g.value(bb.logits(&mut binder, h).unwrap());
        for i in 1..toks.len() {
            if mask[i] == 1.0 {
                hit += usize::from(argmax(logits.row(i - 1)) == toks[i]);
                tot += 1;
            }
        }
    }
    println!("teacher-forced copy accuracy: {:.1}%", 100.0 * hit as f64 / tot as f64);
}
