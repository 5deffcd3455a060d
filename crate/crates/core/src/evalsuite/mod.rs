//! Metrics and evaluation harnesses: WER, BLEU, ROUGE-1/2/L, token
//! accuracy, the rule-based instruction-following parser, seen/unseen
//! prompt robustness, chain-vs-direct comparison, and scaling-vector
//! export with a 2-D PCA projection.
//!
//! All metrics are pure functions of their inputs; per-sample records in
//! an [`EvalReport`] always suffice to recompute the aggregates.

mod pca;

pub use pca::pca2;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::{ScalingMode, SpeechLm};
use crate::taskforge::{banks_disjoint, InstructionSample, Split, TaskForge, TaskKind, Vocab, SEED_ROBUST_BASE};

// ---- token metrics ------------------------------------------------------

/// Word error rate: unit-cost edit distance over the reference length.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyInput { what: "wer reference" });
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m] as f64 / n as f64)
}

fn ngram_counts<T: Ord + Clone>(tokens: &[T], n: usize) -> BTreeMap<Vec<T>, usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// BLEU with clipped n-gram precisions up to `max_n` and a brevity
/// penalty. Orders longer than the hypothesis are skipped (otherwise
/// short outputs always score zero); an empty hypothesis scores 0.
pub fn bleu<T: Ord + Clone>(reference: &[T], hypothesis: &[T], max_n: usize) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyInput { what: "bleu reference" });
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=max_n {
        if hypothesis.len() < n {
            break;
        }
        let ref_counts = ngram_counts(reference, n);
        let hyp_counts = ngram_counts(hypothesis, n);
        let total: usize = hyp_counts.values().sum();
        let clipped: usize = hyp_counts
            .iter()
            .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return Ok(0.0);
        }
        log_sum += math::ln(clipped as f64 / total as f64);
        orders += 1;
    }
    let geo = math::exp(log_sum / orders as f64);
    let bp = if hypothesis.len() >= reference.len() {
        1.0
    } else {
        math::exp(1.0 - reference.len() as f64 / hypothesis.len() as f64)
    };
    Ok(geo * bp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScores {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

fn overlap_f1<T: Ord + Clone>(reference: &[T], hypothesis: &[T], n: usize) -> f64 {
    let rc = ngram_counts(reference, n);
    let hc = ngram_counts(hypothesis, n);
    let ref_total: usize = rc.values().sum();
    let hyp_total: usize = hc.values().sum();
    // both sides too short for this order: vacuously perfect, so that
    // identical inputs always score 1
    if ref_total == 0 && hyp_total == 0 {
        return 1.0;
    }
    if ref_total == 0 || hyp_total == 0 {
        return 0.0;
    }
    let overlap: usize = hc
        .iter()
        .map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1-based ROUGE-1 / ROUGE-2 / ROUGE-L.
pub fn rouge<T: Ord + Clone>(reference: &[T], hypothesis: &[T]) -> Result<RougeScores> {
    if reference.is_empty() {
        return Err(Error::EmptyInput {
            what: "rouge reference",
        });
    }
    let r1 = overlap_f1(reference, hypothesis, 1);
    let r2 = overlap_f1(reference, hypothesis, 2);
    let l = lcs_len(reference, hypothesis);
    let rl = if l == 0 || hypothesis.is_empty() {
        0.0
    } else {
        let p = l as f64 / hypothesis.len() as f64;
        let r = l as f64 / reference.len() as f64;
        2.0 * p * r / (p + r)
    };
    Ok(RougeScores { r1, r2, rl })
}

/// Positional match rate against the reference; length mismatches count
/// as errors (denominator is the longer of the two).
pub fn token_accuracy<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> f64 {
    if reference.is_empty() && hypothesis.is_empty() {
        return 1.0;
    }
    let denom = reference.len().max(hypothesis.len());
    let matches = reference
        .iter()
        .zip(hypothesis.iter())
        .filter(|(a, b)| a == b)
        .count();
    matches as f64 / denom as f64
}

// ---- instruction-following parser ----------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IfrCounts {
    pub followed: usize,
    pub correct: usize,
    pub total: usize,
}

struct Section {
    index: usize,
    answer: Vec<usize>,
}

/// Parses `### task <i> : <echo> => <answer>` sections from a token
/// stream. Malformed regions are skipped.
fn parse_sections(vocab: &Vocab, output: &[usize]) -> Vec<Section> {
    let mut sections = Vec::new();
    let mut i = 0;
    while i < output.len() {
        if output[i] != vocab.section_mark() {
            i += 1;
            continue;
        }
        // "### task <digit> :"
        let header_ok = output.get(i + 1) == Some(&vocab.task_word())
            && output
                .get(i + 2)
                .and_then(|&t| vocab.digit_value(t))
                .is_some()
            && output.get(i + 3) == Some(&vocab.colon());
        if !header_ok {
            i += 1;
            continue;
        }
        let index = vocab.digit_value(output[i + 2]).unwrap();
        let mut j = i + 4;
        let echo_start = j;
        while j < output.len()
            && output[j] != vocab.arrow()
            && output[j] != vocab.newline()
            && output[j] != vocab.section_mark()
        {
            j += 1;
        }
        if j >= output.len() || output[j] != vocab.arrow() || j == echo_start {
            i = j;
            continue;
        }
        let mut k = j + 1;
        let answer_start = k;
        while k < output.len()
            && output[k] != vocab.newline()
            && output[k] != vocab.section_mark()
            && output[k] != vocab.eos()
        {
            k += 1;
        }
        if k == answer_start {
            i = k;
            continue;
        }
        sections.push(Section {
            index,
            answer: output[answer_start..k].to_vec(),
        });
        i = k;
    }
    sections
}

fn answer_matches(vocab: &Vocab, sub: &crate::taskforge::SubTask, answer: &[usize]) -> bool {
    let truth = match vocab.tokenize(&sub.answer) {
        Ok(t) => t,
        Err(_) => return false,
    };
    match sub.kind {
        // transcription scored by word error rate (zero means identical)
        TaskKind::Transcribe => wer(&truth, answer).map(|w| w == 0.0).unwrap_or(false),
        _ => truth == answer,
    }
}

/// Counts followed and correctly answered sub-instructions in a model
/// output. Sections count as followed only when well-formed and in
/// sequential order from task 1; unparsable output scores zero.
pub fn ifr(vocab: &Vocab, sample: &InstructionSample, output: &[usize]) -> IfrCounts {
    let k = sample.sub_tasks.len();
    let sections = parse_sections(vocab, output);
    let mut followed = 0;
    let mut correct = 0;
    let mut expected = 1;
    for s in sections {
        if s.index == expected && s.index <= k {
            followed += 1;
            if answer_matches(vocab, &sample.sub_tasks[s.index - 1], &s.answer) {
                correct += 1;
            }
            expected += 1;
        }
    }
    IfrCounts {
        followed,
        correct,
        total: k,
    }
}

// ---- model-level evaluations ----------------------------------------------

fn generation_budget(vocab: &Vocab, sample: &InstructionSample) -> usize {
    let target_len = vocab.tokenize(&sample.target).map(|t| t.len()).unwrap_or(16);
    target_len + 8
}

/// Per-sample outcome retained in reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub seed: u64,
    pub tags: Vec<String>,
    pub prompt: String,
    pub target: String,
    pub output: String,
    pub metrics: Vec<(String, f64)>,
}

/// Mean of a named metric over outcomes that carry it.
pub fn mean_metric(samples: &[SampleOutcome], name: &str) -> Option<f64> {
    let values: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.metrics.iter())
        .filter(|(n, _)| n == name)
        .map(|(_, v)| *v)
        .collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Greedy-decodes one sample and scores it with the metrics appropriate
/// to its kind(s).
pub fn evaluate_sample(
    model: &SpeechLm,
    sample: &InstructionSample,
    mode: ScalingMode,
) -> Result<SampleOutcome> {
    let vocab = &model.vocab;
    let budget = generation_budget(vocab, sample);
    let raw = model.generate(&sample.speech, &sample.prompt, mode, budget)?;
    let out = model.strip_eos(&raw).to_vec();
    let truth = vocab.tokenize(&sample.target)?;
    let mut metrics: Vec<(String, f64)> = Vec::new();
    metrics.push(("token_acc".into(), token_accuracy(&truth, &out)));
    metrics.push(("exact".into(), if truth == out { 1.0 } else { 0.0 }));
    if sample.is_multi() {
        let counts = ifr(vocab, sample, &out);
        metrics.push(("ifr_followed".into(), counts.followed as f64 / counts.total as f64));
        metrics.push(("ifr_correct".into(), counts.correct as f64 / counts.total as f64));
    } else {
        let kind = sample.sub_tasks[0].kind;
        match kind {
            TaskKind::Transcribe => {
                metrics.push(("wer".into(), wer(&truth, &out)?));
            }
            TaskKind::Translate => {
                metrics.push(("bleu".into(), bleu(&truth, &out, 4)?));
            }
            TaskKind::Summarize => {
                let r = rouge(&truth, &out)?;
                metrics.push(("rouge1".into(), r.r1));
                metrics.push(("rouge2".into(), r.r2));
                metrics.push(("rougeL".into(), r.rl));
            }
            _ => {}
        }
    }
    Ok(SampleOutcome {
        seed: sample.seed,
        tags: sample.tags.clone(),
        prompt: sample.prompt.clone(),
        target: sample.target.clone(),
        output: vocab.detokenize(&out),
        metrics,
    })
}

pub fn evaluate_set(
    model: &SpeechLm,
    samples: &[InstructionSample],
    mode: ScalingMode,
) -> Result<Vec<SampleOutcome>> {
    samples
        .iter()
        .map(|s| evaluate_sample(model, s, mode))
        .collect()
}

/// Multi-task aggregate rates in percent: (followed, correct).
pub fn ifr_rates(model: &SpeechLm, samples: &[InstructionSample], mode: ScalingMode) -> Result<(f64, f64)> {
    let mut followed = 0usize;
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in samples {
        let raw = model.generate(&s.speech, &s.prompt, mode, generation_budget(&model.vocab, s))?;
        let out = model.strip_eos(&raw);
        let c = ifr(&model.vocab, s, out);
        followed += c.followed;
        correct += c.correct;
        total += c.total;
    }
    if total == 0 {
        return Err(Error::EmptyInput { what: "ifr_rates" });
    }
    Ok((
        100.0 * followed as f64 / total as f64,
        100.0 * correct as f64 / total as f64,
    ))
}

/// Mean generation token accuracy (percent) over a sample set.
pub fn accuracy_percent(model: &SpeechLm, samples: &[InstructionSample], mode: ScalingMode) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples {
        let raw = model.generate(&s.speech, &s.prompt, mode, generation_budget(&model.vocab, s))?;
        let out = model.strip_eos(&raw);
        let truth = model.vocab.tokenize(&s.target)?;
        acc += token_accuracy(&truth, out);
    }
    Ok(100.0 * acc / samples.len() as f64)
}

/// Mean exact-match rate (percent).
pub fn exact_percent(model: &SpeechLm, samples: &[InstructionSample], mode: ScalingMode) -> Result<f64> {
    let mut hits = 0usize;
    for s in samples {
        let raw = model.generate(&s.speech, &s.prompt, mode, generation_budget(&model.vocab, s))?;
        let out = model.strip_eos(&raw);
        let truth = model.vocab.tokenize(&s.target)?;
        hits += usize::from(truth == out);
    }
    Ok(100.0 * hits as f64 / samples.len() as f64)
}

/// Evaluates the same underlying samples under seen (train-bank) and
/// unseen (held-out-bank) prompts; returns token-accuracy percentages.
/// Fails if the banks are not disjoint.
pub fn robustness_eval(
    model: &SpeechLm,
    forge: &TaskForge,
    kind: TaskKind,
    count: usize,
    seed0: u64,
    mode: ScalingMode,
) -> Result<(f64, f64)> {
    if !banks_disjoint(kind) {
        return Err(Error::invalid(format!(
            "robustness_eval: prompt banks for {:?} are not disjoint",
            kind
        )));
    }
    if count == 0 {
        return Err(Error::EmptyInput {
            what: "robustness_eval",
        });
    }
    let seen: Vec<InstructionSample> = (0..count)
        .map(|i| forge.synth_single(kind, SEED_ROBUST_BASE + seed0 + i as u64, Split::Train))
        .collect();
    let unseen: Vec<InstructionSample> = seen
        .iter()
        .map(|s| forge.reprompt(s, Split::Heldout))
        .collect::<Result<_>>()?;
    Ok((
        accuracy_percent(model, &seen, mode)?,
        accuracy_percent(model, &unseen, mode)?,
    ))
}

/// Chain (CoT) vs direct one-shot comparison: exact-match percentages of
/// the final answer under each prompting style, over shared clips.
pub fn cot_comparison(
    model: &SpeechLm,
    pairs: &[(InstructionSample, InstructionSample)],
    mode: ScalingMode,
) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput { what: "cot_comparison" });
    }
    let vocab = &model.vocab;
    let mut cot_hits = 0usize;
    let mut direct_hits = 0usize;
    for (cot, direct) in pairs {
        let truth = vocab.tokenize(&direct.target)?;

        let raw = model.generate(&cot.speech, &cot.prompt, mode, generation_budget(vocab, cot))?;
        let out = model.strip_eos(&raw);
        let k = cot.sub_tasks.len();
        let last = parse_sections(vocab, out)
            .into_iter()
            .filter(|s| s.index == k)
            .map(|s| s.answer)
            .next_back();
        if last.as_deref() == Some(truth.as_slice()) {
            cot_hits += 1;
        }

        let raw = model.generate(
            &direct.speech,
            &direct.prompt,
            mode,
            generation_budget(vocab, direct),
        )?;
        let out = model.strip_eos(&raw);
        if out == truth.as_slice() {
            direct_hits += 1;
        }
    }
    Ok((
        100.0 * cot_hits as f64 / pairs.len() as f64,
        100.0 * direct_hits as f64 / pairs.len() as f64,
    ))
}

// ---- scaling-vector export -------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub tag: String,
    pub prompt: String,
    pub r: Vec<f64>,
    pub pc: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingExport {
    pub dim: usize,
    pub records: Vec<ScalingRecord>,
}

/// r per prompt plus top-2 principal-component coordinates. Requires at
/// least 3 prompts.
pub fn export_scalings(model: &SpeechLm, prompts: &[(String, String)]) -> Result<ScalingExport> {
    if prompts.len() < 3 {
        return Err(Error::invalid(format!(
            "export_scalings: need at least 3 prompts, got {}",
            prompts.len()
        )));
    }
    let mut rs: Vec<Vec<f64>> = Vec::with_capacity(prompts.len());
    for (_, prompt) in prompts {
        let ids = model.vocab.tokenize(prompt)?;
        let sv = model.scaling_vector(&ids)?;
        rs.push(sv.r.data().to_vec());
    }
    let (coords, _, _) = pca2(&rs)?;
    let records = prompts
        .iter()
        .zip(rs.into_iter().zip(coords))
        .map(|((tag, prompt), (r, pc))| ScalingRecord {
            tag: tag.clone(),
            prompt: prompt.clone(),
            r,
            pc,
        })
        .collect();
    Ok(ScalingExport {
        dim: model.config.model.dim,
        records,
    })
}

// ---- reports ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub count: usize,
}

/// Evaluation report: aggregates plus the per-sample records they are
/// computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_fingerprint: String,
    pub checkpoint_id: String,
    pub rows: Vec<MetricRow>,
    pub samples: Vec<SampleOutcome>,
}

impl EvalReport {
    /// Groups outcomes by their first tag and averages each metric.
    pub fn from_samples(
        config_fingerprint: String,
        checkpoint_id: String,
        samples: Vec<SampleOutcome>,
    ) -> EvalReport {
        let mut groups: BTreeMap<String, Vec<&SampleOutcome>> = BTreeMap::new();
        for s in &samples {
            let tag = s.tags.first().cloned().unwrap_or_else(|| "untagged".to_string());
            groups.entry(tag).or_default().push(s);
        }
        let mut rows = Vec::new();
        for (task, members) in groups {
            let mut metric_names: Vec<String> = members
                .iter()
                .flat_map(|s| s.metrics.iter().map(|(n, _)| n.clone()))
                .collect();
            metric_names.sort();
            metric_names.dedup();
            for name in metric_names {
                let values: Vec<f64> = members
                    .iter()
                    .flat_map(|s| s.metrics.iter())
                    .filter(|(n, _)| *n == name)
                    .map(|(_, v)| *v)
                    .collect();
                rows.push(MetricRow {
                    task: task.clone(),
                    metric: name,
                    value: values.iter().sum::<f64>() / values.len() as f64,
                    count: values.len(),
                });
            }
        }
        EvalReport {
            config_fingerprint,
            checkpoint_id,
            rows,
            samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn ids(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn wer_fixtures() {
        assert_eq!(wer(&ids("a b c"), &ids("a b c")).unwrap(), 0.0);
        assert!((wer(&ids("a b c"), &ids("a x c")).unwrap() - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(wer(&ids("a b"), &ids("")).unwrap(), 1.0);
        assert!(wer::<u32>(&[], &[1]).is_err());
    }

    #[test]
    fn bleu_fixtures() {
        assert!((bleu(&ids("x y z w"), &ids("x y z w"), 4).unwrap() - 1.0).abs() < 1e-9);
        // ref "a b c d", hyp "a b c d e": precisions 4/5, 3/4, 2/3, 1/2 with BP 1
        let got = bleu(&ids("a b c d"), &ids("a b c d e"), 4).unwrap();
        let want = math::powf(0.8 * 0.75 * (2.0 / 3.0) * 0.5, 0.25);
        assert!((got - want).abs() < 1e-9);
        assert!((want - 0.669).abs() < 1e-3);
        assert_eq!(bleu(&ids("a b"), &ids("z w"), 4).unwrap(), 0.0);
        assert_eq!(bleu(&ids("a b"), &ids(""), 4).unwrap(), 0.0);
    }

    #[test]
    fn bleu_skips_orders_longer_than_hypothesis() {
        // hyp has only 2 tokens: orders 3 and 4 are skipped, not zeroed
        let got = bleu(&ids("a b c d"), &ids("a b"), 4).unwrap();
        assert!(got > 0.0);
        // p1 = 1, p2 = 1, BP = exp(1 - 4/2)
        let want = math::exp(1.0 - 2.0);
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn rouge_fixtures() {
        let r = rouge(&ids("a b c"), &ids("a b c")).unwrap();
        assert_eq!((r.r1, r.r2, r.rl), (1.0, 1.0, 1.0));
        // reversed: unigram F1 = 1, LCS length 1 -> R-L = 1/3
        let r = rouge(&ids("a b c"), &ids("c b a")).unwrap();
        assert!((r.r1 - 1.0).abs() < 1e-12);
        assert!((r.rl - 1.0 / 3.0).abs() < 1e-12);
        let r = rouge(&ids("a b"), &ids("x y")).unwrap();
        assert_eq!((r.r1, r.r2, r.rl), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metrics_are_identity_on_equal_inputs() {
        for text in ["q", "a b", "x y z q r"] {
            let t = ids(text);
            assert_eq!(wer(&t, &t).unwrap(), 0.0);
            assert!((bleu(&t, &t, 4).unwrap() - 1.0).abs() < 1e-12);
            let r = rouge(&t, &t).unwrap();
            assert_eq!((r.r1, r.r2, r.rl), (1.0, 1.0, 1.0));
            assert_eq!(token_accuracy(&t, &t), 1.0);
        }
    }

    fn forge() -> TaskForge {
        let cfg = RunConfig::desk();
        TaskForge::new(&cfg.data, cfg.encoders.feat_dim).unwrap()
    }

    #[test]
    fn ifr_round_trips_generated_targets() {
        let f = forge();
        for seed in 0..20 {
            let mut rng = crate::rng::Rng::new(seed);
            let specs = f.multi_specs(&mut rng);
            let m = f.synth_multi(&specs, seed, Split::Train).unwrap();
            let target_ids = f.vocab().tokenize(&m.target).unwrap();
            let counts = ifr(f.vocab(), &m, &target_ids);
            assert_eq!(counts.followed, m.k(), "target must parse fully");
            assert_eq!(counts.correct, m.k());
        }
    }

    #[test]
    fn ifr_scores_unparsable_output_zero() {
        let f = forge();
        let m = f.synth_multi(
            &[
                crate::taskforge::TaskSpec::plain(TaskKind::Transcribe),
                crate::taskforge::TaskSpec::plain(TaskKind::TextIt),
            ],
            3,
            Split::Train,
        )
        .unwrap();
        let garbage = f.vocab().tokenize("a b c").unwrap();
        let counts = ifr(f.vocab(), &m, &garbage);
        assert_eq!((counts.followed, counts.correct), (0, 0));
    }

    #[test]
    fn ifr_ignores_out_of_order_sections() {
        let f = forge();
        let m = f.synth_multi(
            &[
                crate::taskforge::TaskSpec::plain(TaskKind::Transcribe),
                crate::taskforge::TaskSpec::plain(TaskKind::Classify),
            ],
            4,
            Split::Train,
        )
        .unwrap();
        // swap the two sections
        let swapped = format!(
            "### task 2 : {} => {}\n### task 1 : {} => {}",
            m.sub_tasks[1].echo, m.sub_tasks[1].answer, m.sub_tasks[0].echo, m.sub_tasks[0].answer
        );
        let out = f.vocab().tokenize(&swapped).unwrap();
        let counts = ifr(f.vocab(), &m, &out);
        // only task 1 counts; task 2 appeared before it
        assert_eq!(counts.followed, 1);
        assert_eq!(counts.correct, 1);
    }

    #[test]
    fn ifr_counts_wrong_answers_as_followed_not_correct() {
        let f = forge();
        let m = f
            .synth_multi(
                &[
                    crate::taskforge::TaskSpec::plain(TaskKind::Transcribe),
                    crate::taskforge::TaskSpec::plain(TaskKind::Classify),
                    crate::taskforge::TaskSpec::plain(TaskKind::TextIt),
                ],
                5,
                Split::Train,
            )
            .unwrap();
        // 3 sub-tasks: sections 1 and 2 present, answer 2 wrong -> (2, 1)
        let partial = format!(
            "### task 1 : {} => {}\n### task 2 : {} => q",
            m.sub_tasks[0].echo, m.sub_tasks[0].answer, m.sub_tasks[1].echo
        );
        let out = f.vocab().tokenize(&partial).unwrap();
        let counts = ifr(f.vocab(), &m, &out);
        assert_eq!(counts.followed, 2);
        assert_eq!(counts.correct, 1);
        assert!(counts.correct <= counts.followed && counts.followed <= counts.total);
    }

    #[test]
    fn report_aggregates_are_recomputable_from_samples() {
        let mk = |tag: &str, v: f64| SampleOutcome {
            seed: 0,
            tags: vec![tag.to_string()],
            prompt: String::new(),
            target: String::new(),
            output: String::new(),
            metrics: vec![("token_acc".to_string(), v)],
        };
        let report = EvalReport::from_samples(
            "fp".into(),
            "ck".into(),
            vec![mk("single:transcribe", 1.0), mk("single:transcribe", 0.5), mk("multi", 0.25)],
        );
        for row in &report.rows {
            let mut values = Vec::new();
            for s in &report.samples {
                if s.tags.first().map(String::as_str) == Some(row.task.as_str()) {
                    for (n, v) in &s.metrics {
                        if *n == row.metric {
                            values.push(*v);
                        }
                    }
                }
            }
            let recomputed = values.iter().sum::<f64>() / values.len() as f64;
            assert!((row.value - recomputed).abs() < 1e-15);
            assert_eq!(row.count, values.len());
        }
    }
}
