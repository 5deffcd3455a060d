//! Scratch probe: symbol separability through the frozen encoders.

use attune_core::config::RunConfig;
use attune_core::encoders::{build_encoders, FeatureSequence};
use attune_core::taskforge::{TaskForge, FRAMES_PER_SYMBOL};
use attune_core::tensor::Array;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn stats(label: &str, rows: &[Vec<f64>]) {
    let n = rows.len();
    let mut acc = 0.0;
    let mut max: f64 = -1.0;
    let mut cnt = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let c = cos(&rows[i], &rows[j]);
            acc += c;
            max = max.max(c);
            cnt += 1;
        }
    }
    println!("{label}: mean pairwise cos {:.3}, max {:.3}", acc / cnt as f64, max);
}

fn main() {
    let cfg = RunConfig::desk();
    let forge = TaskForge::new(&cfg.data, cfg.encoders.feat_dim).unwrap();
    let (semantic, _acoustic, _w) = build_encoders(&cfg.encoders);

    // raw per-symbol features (category 0, no noise): one frame per symbol
    let mut raw: Vec<Vec<f64>> = Vec::new();
    for s in 0..cfg.data.symbols as u8 {
        let sample = forge.synth_single(attune_core::taskforge::TaskKind::Transcribe, 1000 + s as u64, attune_core::taskforge::Split::Train);
        let _ = sample;
        // feature of symbol s alone: synth a 1-symbol clip via the public path
        // (use the symbol table through a single-symbol speech)
        let speech = forge_speech(&forge, s);
        raw.push(speech.features.row(0).to_vec());
        let enc = semantic.encode_last(&speech).unwrap();
        let mut v = vec![0.0; enc.features.cols()];
        v.copy_from_slice(enc.features.row(0));
        ENCODED.with(|e| e.borrow_mut().push(v));
    }
    stats("raw symbol features", &raw);
    ENCODED.with(|e| stats("semantic-encoded features", &e.borrow()));
}

thread_local! {
    static ENCODED: std::cell::RefCell<Vec<Vec<f64>>> = const { std::cell::RefCell::new(Vec::new()) };
}

fn forge_speech(forge: &TaskForge, s: u8) -> FeatureSequence {
    // single-symbol clip, category 0, without noise: regenerate via a
    // transcribe sample is noisy, so rebuild from the tables through the
    // public sampler by averaging many noisy draws of the same symbol
    let mut acc: Option<Array> = None;
    let mut count = 0.0;
    for seed in 0..4000u64 {
        let sample = forge.synth_single(
            attune_core::taskforge::TaskKind::Transcribe,
            seed,
            attune_core::taskforge::Split::Train,
        );
        if sample.category != 0 {
            continue;
        }
        for (i, &sym) in sample.symbols.iter().enumerate() {
            if sym == s {
                let row = sample.speech.features.row(i * FRAMES_PER_SYMBOL);
                match &mut acc {
                    None => {
                        acc = Some(Array::from_vec(&[1, row.len()], row.to_vec()).unwrap())
                    }
                    Some(a) => {
                        for (x, y) in a.data_mut().iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                }
                count += 1.0;
                break;
            }
        }
        if count >= 12.0 {
            break;
        }
    }
    let mut a = acc.expect("symbol seen");
    for v in a.data_mut() {
        *v /= count;
    }
    FeatureSequence::new(a, 1)
}
