use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use modswap::pipeline::pair_corpus;
use modswap::pairing::Dedup;
use modswap::synth::{gen_attention_corpus, SynthSpec, GROUND_TRUTH_FILE};
use modswap::Error;

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn identical_spec_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { seed: 19, pages: 3, participants: 2, ..SynthSpec::default() };
    gen_attention_corpus(&spec, &dir.path().join("a")).unwrap();
    gen_attention_corpus(&spec, &dir.path().join("b")).unwrap();
    let a = tree_bytes(&dir.path().join("a"));
    assert!(a.contains_key(GROUND_TRUTH_FILE));
    assert_eq!(a, tree_bytes(&dir.path().join("b")));
    gen_attention_corpus(&SynthSpec { seed: 20, ..spec }, &dir.path().join("c")).unwrap();
    assert_ne!(a, tree_bytes(&dir.path().join("c")));
}

#[test]
fn three_texts_two_images_make_two_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { pages: 1, participants: 1, texts_per_page: 3, images_per_page: 2, ..SynthSpec::default() };
    let (corpus, gt) = gen_attention_corpus(&spec, dir.path()).unwrap();
    let (pairs, _) = pair_corpus(&corpus, 100, Dedup::FirstFixation).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs.rows, gt.pairs);
    assert_eq!(pairs.fixation_indices(), vec![1, 2]);
}

#[test]
fn noisy_sessions_still_recover_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        short_fixation_rate: 0.5,
        miss_rate: 0.5,
        refixation_rate: 0.5,
        seed: 4,
        ..SynthSpec::default()
    };
    let (corpus, gt) = gen_attention_corpus(&spec, dir.path()).unwrap();
    let (pairs, diag) = pair_corpus(&corpus, 100, Dedup::FirstFixation).unwrap();
    assert_eq!(pairs.rows, gt.pairs);
    assert!(diag.misses > 0);
    assert!(corpus.fixations.len() > diag.fixations);
}

#[test]
fn bad_corpus_specs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for spec in [
        SynthSpec { pages: 0, ..SynthSpec::default() },
        SynthSpec { texts_per_page: 8, ..SynthSpec::default() },
        SynthSpec { miss_rate: 1.5, ..SynthSpec::default() },
        SynthSpec { noise_sigma: -1.0, ..SynthSpec::default() },
    ] {
        assert!(matches!(gen_attention_corpus(&spec, dir.path()), Err(Error::InvalidSpec(_))));
    }
}
