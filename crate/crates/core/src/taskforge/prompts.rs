//! Paraphrase banks and connectives.
//!
//! Every task kind has a train bank and a disjoint held-out bank; both draw
//! on the same word inventory so unseen prompts contain no unseen words,
//! and every paraphrase contains its kind's canonical echo keyword.

use super::{Split, TaskKind};

/// A prompt paraphrase: `{p}` is replaced by a position digit, `{phrase}`
/// by the repeat-phrase payload. `echo` is the key part of the prompt a
/// multi-task response repeats (with the same slot substitution).
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub text: &'static str,
    pub echo: &'static str,
}

const fn t(text: &'static str, echo: &'static str) -> PromptTemplate {
    PromptTemplate { text, echo }
}

const TRANSCRIBE_TRAIN: &[PromptTemplate] = &[
    t("write down the transcript of the audio", "transcript"),
    t("give me the transcript of this clip", "transcript"),
    t("provide the transcript of the spoken words", "transcript"),
    t("listen and write the transcript", "transcript"),
    t("the transcript of this recording please", "transcript"),
    t("turn the audio into the transcript", "transcript"),
    t("the transcript of the speech please", "transcript"),
    t("produce the transcript of the sound", "transcript"),
];

const TRANSCRIBE_HELDOUT: &[PromptTemplate] = &[
    t("write the transcript of the spoken sound", "transcript"),
    t("transcript please of this audio clip", "transcript"),
    t("give the transcript of the recording now", "transcript"),
    t("read out the transcript of this speech", "transcript"),
];

const TRANSLATE_TRAIN: &[PromptTemplate] = &[
    t("give the translation of the audio into code", "translation"),
    t("write the translation of the spoken words", "translation"),
    t("the translation of this clip please", "translation"),
    t("convert the audio into its translation", "translation"),
    t("provide the translation of the speech", "translation"),
    t("turn the recording into the translation", "translation"),
    t("the translation of the sound please", "translation"),
    t("listen then write the translation", "translation"),
];

const TRANSLATE_HELDOUT: &[PromptTemplate] = &[
    t("produce the translation of this audio", "translation"),
    t("translation please of the spoken sound", "translation"),
    t("write down the translation of the clip", "translation"),
    t("give me the translation of this recording", "translation"),
];

const CLASSIFY_TRAIN: &[PromptTemplate] = &[
    t("name the category of the speaker", "category"),
    t("which category is this audio", "category"),
    t("give the category of the recording", "category"),
    t("decide the category of this clip", "category"),
    t("the category of the speech please", "category"),
    t("tell me the category of the sound", "category"),
    t("identify the category of the speaker", "category"),
    t("what category is the spoken clip", "category"),
];

const CLASSIFY_HELDOUT: &[PromptTemplate] = &[
    t("write the category of this audio", "category"),
    t("category of the recording please", "category"),
    t("which category fits this sound", "category"),
    t("give me the category of the clip", "category"),
];

const SQA_TRAIN: &[PromptTemplate] = &[
    t("what symbol is at position {p}", "position {p}"),
    t("which symbol sits at position {p}", "position {p}"),
    t("tell me the symbol at position {p}", "position {p}"),
    t("give the symbol at position {p}", "position {p}"),
    t("at position {p} which symbol is heard", "position {p}"),
    t("name the symbol at position {p}", "position {p}"),
    t("the symbol at position {p} please", "position {p}"),
    t("answer with the symbol at position {p}", "position {p}"),
];

const SQA_HELDOUT: &[PromptTemplate] = &[
    t("which symbol is at position {p}", "position {p}"),
    t("say the symbol at position {p}", "position {p}"),
    t("position {p} holds which symbol", "position {p}"),
    t("what is heard at position {p}", "position {p}"),
];

const TEXT_IT_TRAIN: &[PromptTemplate] = &[
    t("ignore the audio and repeat : {phrase}", "repeat"),
    t("ignoring the sound repeat : {phrase}", "repeat"),
    t("aside from the clip repeat : {phrase}", "repeat"),
    t("skip the audio and repeat : {phrase}", "repeat"),
    t("repeat after me : {phrase}", "repeat"),
    t("disregard the recording and repeat : {phrase}", "repeat"),
    t("repeat these words : {phrase}", "repeat"),
    t("repeat the following : {phrase}", "repeat"),
];

const TEXT_IT_HELDOUT: &[PromptTemplate] = &[
    t("ignore the clip and repeat : {phrase}", "repeat"),
    t("disregard the audio then repeat : {phrase}", "repeat"),
    t("repeat this : {phrase}", "repeat"),
    t("skip the sound and repeat : {phrase}", "repeat"),
];

const SUMMARIZE_TRAIN: &[PromptTemplate] = &[
    t("give the summary of the audio", "summary"),
    t("write the summary of this clip", "summary"),
    t("the summary of the recording please", "summary"),
    t("provide the summary of the speech", "summary"),
    t("condense the audio into its summary", "summary"),
    t("tell me the summary of the sound", "summary"),
    t("produce the summary of this recording", "summary"),
    t("summary of the spoken words please", "summary"),
];

const SUMMARIZE_HELDOUT: &[PromptTemplate] = &[
    t("write down the summary of the audio", "summary"),
    t("summary please of this clip", "summary"),
    t("give me the summary of the speech", "summary"),
    t("condense this recording into the summary", "summary"),
];

/// Final step of the chain composition: translate the summary produced by
/// the previous step, not the whole transcript.
pub const CHAIN_TRANSLATE_TRAIN: &[PromptTemplate] = &[
    t("now give the translation of that summary", "translation"),
    t("then write the translation of the summary", "translation"),
    t("turn that summary into its translation", "translation"),
    t("provide the translation of the summary", "translation"),
];

pub const CHAIN_TRANSLATE_HELDOUT: &[PromptTemplate] = &[
    t("give the translation of that summary", "translation"),
    t("write down the translation of the summary", "translation"),
];

/// One-shot prompts asking for the translated summary directly. Never used
/// in training; the non-chain side of the chain-vs-direct comparison.
pub const DIRECT_XSUM_BANK: &[PromptTemplate] = &[
    t("give the translation of the summary of the audio", "translation"),
    t("write the translation of the summary of this clip", "translation"),
    t("produce the translation of the summary of the recording", "translation"),
    t("the translation of the summary of the sound please", "translation"),
];

pub const CONNECTIVES_FIRST: &[&str] = &["first ,", "initially ,", "to begin ,"];
pub const CONNECTIVES_MIDDLE: &[&str] = &["then ,", "next ,", "also ,", "moreover ,"];
pub const CONNECTIVES_LAST: &[&str] = &["lastly ,", "finally ,"];

/// Bank of paraphrases for a kind and prompt split.
pub fn bank(kind: TaskKind, split: Split) -> &'static [PromptTemplate] {
    match (kind, split) {
        (TaskKind::Transcribe, Split::Train) => TRANSCRIBE_TRAIN,
        (TaskKind::Transcribe, Split::Heldout) => TRANSCRIBE_HELDOUT,
        (TaskKind::Translate, Split::Train) => TRANSLATE_TRAIN,
        (TaskKind::Translate, Split::Heldout) => TRANSLATE_HELDOUT,
        (TaskKind::Classify, Split::Train) => CLASSIFY_TRAIN,
        (TaskKind::Classify, Split::Heldout) => CLASSIFY_HELDOUT,
        (TaskKind::Sqa, Split::Train) => SQA_TRAIN,
        (TaskKind::Sqa, Split::Heldout) => SQA_HELDOUT,
        (TaskKind::TextIt, Split::Train) => TEXT_IT_TRAIN,
        (TaskKind::TextIt, Split::Heldout) => TEXT_IT_HELDOUT,
        (TaskKind::Summarize, Split::Train) => SUMMARIZE_TRAIN,
        (TaskKind::Summarize, Split::Heldout) => SUMMARIZE_HELDOUT,
    }
}

/// Chain-final translate-the-summary bank.
pub fn chain_bank(split: Split) -> &'static [PromptTemplate] {
    match split {
        Split::Train => CHAIN_TRANSLATE_TRAIN,
        Split::Heldout => CHAIN_TRANSLATE_HELDOUT,
    }
}

/// True when the train and held-out banks for a kind share no paraphrase.
pub fn banks_disjoint(kind: TaskKind) -> bool {
    let train = bank(kind, Split::Train);
    let held = bank(kind, Split::Heldout);
    train
        .iter()
        .all(|a| held.iter().all(|b| a.text != b.text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bank_has_the_contracted_sizes() {
        for kind in TaskKind::ALL {
            assert!(bank(kind, Split::Train).len() >= 8, "{kind:?} train bank");
            assert!(bank(kind, Split::Heldout).len() >= 4, "{kind:?} held-out bank");
        }
    }

    #[test]
    fn train_and_heldout_banks_are_disjoint() {
        for kind in TaskKind::ALL {
            assert!(banks_disjoint(kind), "{kind:?} banks overlap");
        }
    }

    #[test]
    fn every_paraphrase_contains_its_echo_keyword() {
        for kind in TaskKind::ALL {
            for split in [Split::Train, Split::Heldout] {
                for p in bank(kind, split) {
                    let key = p.echo.split(' ').next().unwrap();
                    assert!(
                        p.text.contains(key),
                        "{kind:?} paraphrase {:?} lacks echo keyword {key:?}",
                        p.text
                    );
                }
            }
        }
    }
}
