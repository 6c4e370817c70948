//! Shared inputs for the benchmarks under `benches/`.

use vmtlab_core::model::{generate_toy_corpus, Example, ModelConfig, SynthConfig, TextSpec, VmtModel};
use vmtlab_core::Split;

/// Reference/hypothesis token pairs of roughly `len` tokens. Hypotheses are
/// the reference with a block moved and every seventh token replaced, so
/// both the shift search and the edit distance have work to do.
pub fn sentence_pairs(count: usize, len: usize) -> Vec<(Vec<String>, Vec<String>)> {
    (0..count)
        .map(|i| {
            let reference: Vec<String> = (0..len).map(|j| format!("w{}", (i * 31 + j * 17) % 97)).collect();
            let mut hyp = reference.clone();
            let cut = len / 3;
            hyp.rotate_left(cut.max(1) % len.max(1));
            for (j, t) in hyp.iter_mut().enumerate() {
                if j % 7 == 3 {
                    *t = format!("x{j}");
                }
            }
            (hyp, reference)
        })
        .collect()
}

/// A freshly initialised desk-size model and the training examples of the
/// default synthetic corpus.
pub fn toy_model() -> (VmtModel, Vec<Example>) {
    let toy = generate_toy_corpus(&SynthConfig::default()).expect("default synth config is valid");
    let text = TextSpec::default();
    let (sv, tv) = toy.vocabs(text);
    let examples = toy.examples(text, &sv, &tv, Split::Train).expect("toy corpus encodes");
    let model = VmtModel::new(ModelConfig::desk(sv.len(), tv.len())).expect("desk config is valid");
    (model, examples)
}
