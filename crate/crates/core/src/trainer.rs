//! Two-stage curriculum training: parameter freezing, loss masking, Adam
//! with warmup/decay, and deterministic batch order.
//!
//! Stage 1 (mixed single-task) trains the modality adapters, the fusion
//! projector, the acoustic layer weights, and the LoRA factors with plain
//! (all-ones) scaling. Stage 2 (advanced multi-task) adds the prompt
//! adapter and computes r per prompt. The trainable set of stage 2 is a
//! strict superset of stage 1's. A one-stage ablation unions both data
//! mixtures and both trainable sets from scratch.
//!
//! Every batch is resampled statelessly from (seed, step), so resuming
//! from a mid-run checkpoint reproduces the uninterrupted trajectory bit
//! for bit.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::config::StageParams;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{ModelInput, ScalingMode, SpeechLm};
use crate::params::Binder;
use crate::rng::Rng;
use crate::taskforge::InstructionSample;
use crate::tensor::{Array, Graph, Var};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear 0->peak ramp over the warmup fraction of steps, then linear
/// decay to 0 at the final step.
pub fn lr_at(step: usize, cfg: &StageParams) -> Result<f64> {
    if step > cfg.steps {
        return Err(Error::invalid(format!(
            "lr_at: step {step} out of range 0..={}",
            cfg.steps
        )));
    }
    let total = cfg.steps as f64;
    let warmup = libm::round(total * cfg.warmup_frac);
    let s = step as f64;
    if warmup > 0.0 && s <= warmup {
        Ok(cfg.peak_lr * s / warmup)
    } else if total > warmup {
        Ok(cfg.peak_lr * (total - s) / (total - warmup))
    } else {
        Ok(cfg.peak_lr)
    }
}

/// First/second moment accumulators for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub m: Array,
    pub v: Array,
}

/// Optimizer state across the trainable set; `step` counts completed
/// updates and is shared by all parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub slots: BTreeMap<String, AdamSlot>,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState {
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            slots: BTreeMap::new(),
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One Adam update with bias correction. `t` is the 1-based update count.
pub fn adam_step(
    name: &str,
    value: &mut Array,
    grad: &Array,
    slot: &mut AdamSlot,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if !grad.all_finite() {
        return Err(Error::NonFinite {
            what: format!("gradient of {name}"),
        });
    }
    let bc1 = 1.0 - math::powf(beta1, t as f64);
    let bc2 = 1.0 - math::powf(beta2, t as f64);
    for i in 0..value.len() {
        let g = grad.data()[i];
        let m = &mut slot.m.data_mut()[i];
        *m = beta1 * *m + (1.0 - beta1) * g;
        let v = &mut slot.v.data_mut()[i];
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let mh = *m / bc1;
        let vh = *v / bc2;
        value.data_mut()[i] -= lr * mh / (math::sqrt(vh) + eps);
    }
    if !value.all_finite() {
        return Err(Error::NonFinite {
            what: format!("updated value of {name}"),
        });
    }
    Ok(())
}

/// Per-step log line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Data pools for one stage; the trainer draws each batch element from
/// `multi` with probability `multi_frac`, else from `single`.
pub struct TrainData {
    pub single: Vec<InstructionSample>,
    pub multi: Vec<InstructionSample>,
}

impl TrainData {
    pub fn singles_only(single: Vec<InstructionSample>) -> TrainData {
        TrainData {
            single,
            multi: Vec::new(),
        }
    }
}

/// One training job over a model.
pub struct TrainJob<'a> {
    /// 1 = mixed single-task, 2 = advanced multi-task.
    pub stage: u8,
    /// Union-mixture ablation trained from scratch (no init required).
    pub one_stage: bool,
    /// Stage id of the checkpoint the model was initialized from.
    pub init_from_stage: Option<u8>,
    /// Train with the prompt adapter (stage 2 default); false gives the
    /// LoRA-only stage-2 ablation.
    pub use_prompt_adapter: bool,
    pub params: &'a StageParams,
    /// Scrambles masked-out labels (masking-contract self check).
    pub label_fuzz: Option<u64>,
    /// Resume point: completed steps and optimizer state.
    pub resume: Option<(usize, AdamState)>,
    /// Stop before `params.steps` while keeping the full-run schedule;
    /// the run can then be resumed from the emitted state.
    pub stop_after: Option<usize>,
}

impl<'a> TrainJob<'a> {
    pub fn stage1(params: &'a StageParams) -> TrainJob<'a> {
        TrainJob {
            stage: 1,
            one_stage: false,
            init_from_stage: None,
            use_prompt_adapter: false,
            params,
            label_fuzz: None,
            resume: None,
            stop_after: None,
        }
    }

    pub fn stage2(params: &'a StageParams) -> TrainJob<'a> {
        TrainJob {
            stage: 2,
            one_stage: false,
            init_from_stage: Some(1),
            use_prompt_adapter: true,
            params,
            label_fuzz: None,
            resume: None,
            stop_after: None,
        }
    }

    pub fn one_stage(params: &'a StageParams) -> TrainJob<'a> {
        TrainJob {
            stage: 2,
            one_stage: true,
            init_from_stage: None,
            use_prompt_adapter: true,
            params,
            label_fuzz: None,
            resume: None,
            stop_after: None,
        }
    }
}

/// Completed (or partially completed) run.
pub struct TrainRun {
    pub records: Vec<StepRecord>,
    pub optimizer: AdamState,
    pub trainable: Vec<String>,
    pub completed_steps: usize,
}

/// Names the given stage trains. Stage 2 adds exactly the prompt adapter.
pub fn trainable_names(model: &SpeechLm, stage: u8, use_prompt_adapter: bool) -> Vec<String> {
    let mut names = Vec::new();
    model.for_each_param(&mut |p| {
        if p.frozen {
            return;
        }
        let is_pa = p.name.starts_with("prompt_adapter");
        if is_pa && (stage < 2 || !use_prompt_adapter) {
            return;
        }
        names.push(p.name.clone());
    });
    names
}

fn scaling_mode(job: &TrainJob<'_>) -> ScalingMode {
    if job.stage >= 2 && job.use_prompt_adapter {
        ScalingMode::Adaptive
    } else {
        ScalingMode::Plain
    }
}

/// Deterministic batch of sample indices for a step: (pool, index) pairs
/// where pool 1 is the multi-task pool.
fn batch_for_step(seed: u64, step: usize, data: &TrainData, batch: usize, multi_frac: f64) -> Vec<(bool, usize)> {
    let mut rng = Rng::new(seed).derive(0xb000 + step as u64);
    (0..batch)
        .map(|_| {
            let use_multi = !data.multi.is_empty() && rng.unit() < multi_frac;
            if use_multi {
                (true, rng.below(data.multi.len()))
            } else {
                (false, rng.below(data.single.len()))
            }
        })
        .collect()
}

/// Runs one curriculum stage. Only selector-marked parameters change; the
/// loss trajectory is a pure function of (model state, data, config, seed).
pub fn train_stage(model: &mut SpeechLm, data: &TrainData, job: TrainJob<'_>) -> Result<TrainRun> {
    if job.stage != 1 && job.stage != 2 {
        return Err(Error::invalid(format!("unknown stage {}", job.stage)));
    }
    if job.stage == 2 && !job.one_stage && job.init_from_stage != Some(1) {
        return Err(Error::invalid(
            "stage 2 requires a stage-1 checkpoint (pass the one-stage flag to train from scratch)",
        ));
    }
    if job.stage == 1 {
        if !data.multi.is_empty() {
            return Err(Error::invalid(
                "stage 1 mixture must not contain multi-task samples",
            ));
        }
        if job.params.multi_frac != 0.0 {
            return Err(Error::invalid("stage 1 multi_frac must be 0"));
        }
    }
    if data.single.is_empty() {
        return Err(Error::EmptyInput {
            what: "train_stage single-task pool",
        });
    }
    if job.stage == 2 && job.params.multi_frac > 0.0 && data.multi.is_empty() {
        return Err(Error::EmptyInput {
            what: "train_stage multi-task pool",
        });
    }

    let trainable = trainable_names(model, job.stage, job.use_prompt_adapter);
    let mode = scaling_mode(&job);

    let (start_step, mut optim) = match job.resume {
        Some((start, state)) => (start, state),
        None => (0, AdamState::new()),
    };
    for name in &trainable {
        if !optim.slots.contains_key(name) {
            let mut shape = Vec::new();
            model.for_each_param(&mut |p| {
                if &p.name == name {
                    shape = p.value.shape().to_vec();
                }
            });
            optim.slots.insert(
                name.clone(),
                AdamSlot {
                    m: Array::zeros(&shape),
                    v: Array::zeros(&shape),
                },
            );
        }
    }

    let end_step = job.stop_after.unwrap_or(job.params.steps).min(job.params.steps);
    let mut records = Vec::with_capacity(end_step.saturating_sub(start_step));
    for step in start_step..end_step {
        let lr = lr_at(step, job.params)?;
        let picks = batch_for_step(
            job.params.seed,
            step,
            data,
            job.params.batch_size,
            job.params.multi_frac,
        );

        let g = Graph::new();
        let mut binder = Binder::training(&g);
        let mut total: Option<Var> = None;
        for (from_multi, idx) in picks {
            let sample = if from_multi {
                &data.multi[idx]
            } else {
                &data.single[idx]
            };
            let mut input: ModelInput = model.prepare(sample)?;
            if let Some(fuzz) = job.label_fuzz {
                let mut rng = Rng::new(fuzz).derive(step as u64).derive(sample.seed);
                input.perturb_masked_labels(&mut rng, model.vocab.len());
            }
            let out = model.forward_loss(&mut binder, &input, mode)?;
            total = Some(match total {
                None => out.loss,
                Some(t) => g.add(t, out.loss)?,
            });
        }
        let loss = g.scale(total.expect("non-empty batch"), 1.0 / job.params.batch_size as f64)?;
        let loss_value = g.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("training loss at step {step}"),
            });
        }
        let grads = g.backward(loss)?;

        optim.step += 1;
        let t = optim.step;
        let (beta1, beta2, eps) = (optim.beta1, optim.beta2, optim.eps);
        let mut failure: Option<Error> = None;
        model.for_each_param_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            let Some(slot) = optim.slots.get_mut(&p.name) else {
                return;
            };
            let grad = match binder.bound_var(&p.name).and_then(|v| grads.get(v)) {
                Some(gr) => gr.clone(),
                None => Array::zeros(p.value.shape()),
            };
            if let Err(e) = adam_step(&p.name, &mut p.value, &grad, slot, t, lr, beta1, beta2, eps)
            {
                failure = Some(e);
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        records.push(StepRecord {
            step,
            lr,
            loss: loss_value,
        });
    }

    Ok(TrainRun {
        records,
        optimizer: optim,
        trainable,
        completed_steps: end_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::taskforge::{TaskForge, TaskKind};

    fn tiny_setup(steps: usize) -> (SpeechLm, TaskForge, RunConfig) {
        let mut cfg = RunConfig::desk();
        cfg.model.dim = 16;
        cfg.model.depth = 2;
        cfg.model.heads = 2;
        cfg.model.ffn_dim = 24;
        cfg.model.lora_rank = 2;
        cfg.model.prompt_bottleneck = 4;
        cfg.encoders.layers = 2;
        cfg.encoders.feat_dim = 8;
        cfg.encoders.sem_dim = 10;
        cfg.encoders.ac_dim = 6;
        cfg.adapters.out_dim = 8;
        cfg.adapters.bottleneck = 4;
        cfg.stage1.steps = steps;
        cfg.stage1.batch_size = 2;
        cfg.stage2.steps = steps;
        cfg.stage2.batch_size = 2;
        let model = SpeechLm::new(&cfg).unwrap();
        let forge = TaskForge::new(&cfg.data, cfg.encoders.feat_dim).unwrap();
        (model, forge, cfg)
    }

    fn tiny_data(forge: &TaskForge) -> TrainData {
        TrainData::singles_only(forge.stage1_pool(4, 0))
    }

    #[test]
    fn lr_schedule_matches_hand_values() {
        let cfg = StageParams {
            steps: 1000,
            peak_lr: 1e-4,
            warmup_frac: 0.1,
            batch_size: 8,
            seed: 0,
            multi_frac: 0.0,
        };
        assert_eq!(lr_at(0, &cfg).unwrap(), 0.0);
        assert!((lr_at(100, &cfg).unwrap() - 1e-4).abs() < 1e-18);
        assert!((lr_at(550, &cfg).unwrap() - 5e-5).abs() < 1e-18);
        assert_eq!(lr_at(1000, &cfg).unwrap(), 0.0);
        assert!(lr_at(1001, &cfg).is_err());
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // scalar parameter, constant gradient 1, one step, lr 0.1
        let mut value = Array::scalar(2.0);
        let grad = Array::scalar(1.0);
        let mut slot = AdamSlot {
            m: Array::scalar(0.0),
            v: Array::scalar(0.0),
        };
        adam_step("p", &mut value, &grad, &mut slot, 1, 0.1, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
            .unwrap();
        assert!((value.item() - 1.9).abs() < 1e-7, "got {}", value.item());
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut value = Array::scalar(2.0);
        let grad = Array::scalar(0.0);
        let mut slot = AdamSlot {
            m: Array::scalar(0.0),
            v: Array::scalar(0.0),
        };
        adam_step("p", &mut value, &grad, &mut slot, 1, 0.1, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
            .unwrap();
        assert_eq!(value.item(), 2.0);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut value = Array::scalar(2.0);
        let grad = Array::scalar(f64::NAN);
        let mut slot = AdamSlot {
            m: Array::scalar(0.0),
            v: Array::scalar(0.0),
        };
        let err = adam_step(
            "adapters.semantic.conv1.w",
            &mut value,
            &grad,
            &mut slot,
            1,
            0.1,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("adapters.semantic.conv1.w"));
    }

    #[test]
    fn zero_steps_is_a_bitwise_noop() {
        let (mut model, forge, mut cfg) = tiny_setup(0);
        cfg.stage1.steps = 0;
        let before = model.snapshot();
        let run = train_stage(&mut model, &tiny_data(&forge), TrainJob::stage1(&cfg.stage1)).unwrap();
        assert!(run.records.is_empty());
        for ((_, b, _), (_, a, _)) in before.iter().zip(model.snapshot().iter()) {
            assert!(b.bit_eq(a));
        }
    }

    #[test]
    fn frozen_parameters_are_bit_invariant_across_training() {
        let (mut model, forge, cfg) = tiny_setup(3);
        let before = model.snapshot();
        train_stage(&mut model, &tiny_data(&forge), TrainJob::stage1(&cfg.stage1)).unwrap();
        let after = model.snapshot();
        let mut trained = 0;
        for ((name, b, frozen), (_, a, _)) in before.iter().zip(after.iter()) {
            if *frozen {
                assert!(b.bit_eq(a), "frozen {name} changed");
            } else if !b.bit_eq(a) {
                trained += 1;
            }
        }
        assert!(trained > 0, "no trainable parameter moved");
    }

    #[test]
    fn same_seed_gives_bit_identical_trajectories() {
        let (mut m1, forge, cfg) = tiny_setup(4);
        let (mut m2, _, _) = tiny_setup(4);
        let r1 = train_stage(&mut m1, &tiny_data(&forge), TrainJob::stage1(&cfg.stage1)).unwrap();
        let r2 = train_stage(&mut m2, &tiny_data(&forge), TrainJob::stage1(&cfg.stage1)).unwrap();
        for (a, b) in r1.records.iter().zip(r2.records.iter()) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
        for ((_, a, _), (_, b, _)) in m1.snapshot().iter().zip(m2.snapshot().iter()) {
            assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let (mut full, forge, cfg) = tiny_setup(6);
        let data = tiny_data(&forge);
        let run_full = train_stage(&mut full, &data, TrainJob::stage1(&cfg.stage1)).unwrap();

        let (mut half, _, _) = tiny_setup(6);
        let mut job_a = TrainJob::stage1(&cfg.stage1);
        job_a.stop_after = Some(3);
        let run_a = train_stage(&mut half, &data, job_a).unwrap();
        assert_eq!(run_a.completed_steps, 3);
        let mut job_b = TrainJob::stage1(&cfg.stage1);
        job_b.resume = Some((run_a.completed_steps, run_a.optimizer));
        let run_b = train_stage(&mut half, &data, job_b).unwrap();

        let merged: Vec<u64> = run_a
            .records
            .iter()
            .chain(run_b.records.iter())
            .map(|r| r.loss.to_bits())
            .collect();
        let whole: Vec<u64> = run_full.records.iter().map(|r| r.loss.to_bits()).collect();
        assert_eq!(merged, whole);
        for ((_, a, _), (_, b, _)) in full.snapshot().iter().zip(half.snapshot().iter()) {
            assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn masked_label_fuzz_leaves_losses_bit_identical() {
        let (mut m1, forge, cfg) = tiny_setup(3);
        let (mut m2, _, _) = tiny_setup(3);
        let data = tiny_data(&forge);
        let clean = train_stage(&mut m1, &data, TrainJob::stage1(&cfg.stage1)).unwrap();
        let mut fuzzed_job = TrainJob::stage1(&cfg.stage1);
        fuzzed_job.label_fuzz = Some(1234);
        let fuzzed = train_stage(&mut m2, &data, fuzzed_job).unwrap();
        for (a, b) in clean.records.iter().zip(fuzzed.records.iter()) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
    }

    #[test]
    fn stage_two_requires_an_init_checkpoint() {
        let (mut model, forge, cfg) = tiny_setup(1);
        let mut data = tiny_data(&forge);
        data.multi = alloc::vec![forge
            .synth_multi(
                &[
                    crate::taskforge::TaskSpec::plain(TaskKind::Transcribe),
                    crate::taskforge::TaskSpec::plain(TaskKind::TextIt)
                ],
                0,
                crate::taskforge::Split::Train
            )
            .unwrap()];
        let mut job = TrainJob::stage2(&cfg.stage2);
        job.init_from_stage = None;
        assert!(train_stage(&mut model, &data, job).is_err());
        // the explicit one-stage override trains from scratch
        let job = TrainJob::one_stage(&cfg.stage2);
        assert!(train_stage(&mut model, &data, job).is_ok());
    }

    #[test]
    fn stage_one_rejects_multitask_data() {
        let (mut model, forge, cfg) = tiny_setup(1);
        let mut data = tiny_data(&forge);
        data.multi = alloc::vec![forge
            .synth_multi(
                &[
                    crate::taskforge::TaskSpec::plain(TaskKind::Transcribe),
                    crate::taskforge::TaskSpec::plain(TaskKind::TextIt)
                ],
                0,
                crate::taskforge::Split::Train
            )
            .unwrap()];
        assert!(train_stage(&mut model, &data, TrainJob::stage1(&cfg.stage1)).is_err());
    }

    #[test]
    fn stage_two_trainables_add_exactly_the_prompt_adapter() {
        let (model, _, _) = tiny_setup(1);
        let s1 = trainable_names(&model, 1, false);
        let s2 = trainable_names(&model, 2, true);
        assert!(s1.iter().all(|n| s2.contains(n)));
        let extra: Vec<&String> = s2.iter().filter(|n| !s1.contains(n)).collect();
        assert!(!extra.is_empty());
        assert!(extra.iter().all(|n| n.starts_with("prompt_adapter")));
    }
}
