#![allow(dead_code)]

use gazefuse::corpus::{Corpus, Split, TargetVector, TokenRecord};
use gazefuse::features::{featurize_corpus, FeatureVector};
use gazefuse::store::EmbeddingStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const ALPHABETS: [&[char]; 3] = [
    &['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'k', 'm', 'n', 'o', 'r', 's', 't'],
    &['м', 'и', 'р', 'д', 'о', 'к'],
    &['你', '好', '世', '界'],
];

pub fn random_word<R: Rng>(rng: &mut R, max_chars: usize) -> String {
    let alphabet = ALPHABETS[rng.gen_range(0..ALPHABETS.len())];
    let n = rng.gen_range(1..=max_chars);
    (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

/// ASCII-only word with 2..=8 bytes, so rel_len stays in [0.25, 4].
pub fn ascii_word<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(2..=8);
    (0..n).map(|_| (b'a' + rng.gen_range(0..26u8)) as char).collect()
}

/// Unlabeled sentences over a fixed dataset/language pair.
pub fn sentences<R: Rng>(
    rng: &mut R,
    dataset: &str,
    language: &str,
    first_sentence: u32,
    n_tokens: usize,
    mut word: impl FnMut(&mut R) -> String,
) -> Vec<TokenRecord> {
    let mut out = Vec::with_capacity(n_tokens);
    let mut sid = first_sentence;
    while out.len() < n_tokens {
        let len = rng.gen_range(3..=12).min(n_tokens - out.len());
        for w in 0..len {
            out.push(TokenRecord {
                dataset: dataset.into(),
                language: language.into(),
                sentence_id: sid,
                word_id: w as u32,
                word: word(rng),
                targets: None,
            });
        }
        sid += 1;
    }
    out
}

/// Fills targets from each token's features.
pub fn label_with(
    records: Vec<TokenRecord>,
    store: &EmbeddingStore,
    split: Split,
    f: impl Fn(&FeatureVector) -> [f64; 4],
) -> Corpus {
    let unlabeled = Corpus::new(records.clone(), Split::Test).unwrap();
    let feats = featurize_corpus(&unlabeled, store).unwrap();
    let labeled = records
        .into_iter()
        .zip(&feats)
        .map(|(r, fv)| TokenRecord {
            targets: Some(TargetVector::new(f(fv)).unwrap()),
            ..r
        })
        .collect();
    Corpus::new(labeled, split).unwrap()
}

/// Store with random tok_len in 1..=4 and gaussian-ish vectors.
pub fn random_store<R: Rng>(rng: &mut R, corpora: &[&Corpus], dim: usize) -> EmbeddingStore {
    let mut names: Vec<String> = Vec::new();
    for c in corpora {
        for n in c.dataset_names() {
            if !names.contains(&n) {
                names.push(n);
            }
        }
    }
    let mut store = EmbeddingStore::new(dim, names).unwrap();
    for c in corpora {
        for r in c.records() {
            let key = store.key_for(&r.dataset, r.sentence_id, r.word_id).unwrap();
            let v = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            store.insert(key, rng.gen_range(1..=4), v).unwrap();
        }
    }
    store
}

/// Synthetic train/dev pair where every target equals `10 · rel_len`.
pub fn rel_len_task(seed: u64, n_train: usize, n_dev: usize) -> (Corpus, Corpus) {
    let mut r = rng(seed);
    let train = sentences(&mut r, "SYN", "en", 0, n_train, ascii_word);
    let dev = sentences(&mut r, "SYN", "en", 10_000, n_dev, ascii_word);
    let all = Corpus::new(train.iter().chain(&dev).cloned().collect(), Split::Test).unwrap();
    let store = gazefuse::store::zero_store(&all, 1).unwrap();
    let target = |f: &FeatureVector| [10.0 * f.rel_len; 4];
    (
        label_with(train, &store, Split::Train, target),
        label_with(dev, &store, Split::Dev, target),
    )
}

pub fn write_corpus_file(dir: &std::path::Path, name: &str, corpus: &Corpus) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    gazefuse::corpus::write_corpus(&mut f, corpus).unwrap();
    path
}
