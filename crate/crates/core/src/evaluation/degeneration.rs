use serde::{Deserialize, Serialize};

use crate::data::{TokenClass, Vocabulary};

/// Share of selected tokens falling in each token class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionRates {
    pub informative: f64,
    pub filler: f64,
    pub marker: f64,
    pub punctuation: f64,
    pub selected: usize,
}

impl SelectionRates {
    pub fn rate(&self, class: TokenClass) -> f64 {
        match class {
            TokenClass::Informative => self.informative,
            TokenClass::Filler => self.filler,
            TokenClass::Marker => self.marker,
            TokenClass::Punctuation => self.punctuation,
        }
    }

    fn from_counts(counts: [usize; 4]) -> Self {
        let total: usize = counts.iter().sum();
        let share = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
        Self {
            informative: share(counts[0]),
            filler: share(counts[1]),
            marker: share(counts[2]),
            punctuation: share(counts[3]),
            selected: total,
        }
    }
}

fn class_index(c: TokenClass) -> usize {
    TokenClass::ALL.iter().position(|&x| x == c).expect("listed")
}

/// Class shares among the selected tokens. `classes` is indexed by token id.
pub fn selection_rates(token_ids: &[Vec<usize>], masks: &[Vec<u8>], classes: &[TokenClass]) -> SelectionRates {
    let mut counts = [0usize; 4];
    for (ids, mask) in token_ids.iter().zip(masks) {
        for (&id, &m) in ids.iter().zip(mask) {
            if m == 1 {
                counts[class_index(classes[id])] += 1;
            }
        }
    }
    SelectionRates::from_counts(counts)
}

/// Class shares among all tokens: what a uniformly random selector picks.
pub fn base_rates(token_ids: &[Vec<usize>], classes: &[TokenClass]) -> SelectionRates {
    let masks: Vec<Vec<u8>> = token_ids.iter().map(|ids| vec![1; ids.len()]).collect();
    selection_rates(token_ids, &masks, classes)
}

pub const PUNCTUATION: &[&str] = &[
    ".", ",", "!", "?", ";", ":", "-", "--", "(", ")", "'", "\"", "...", "/", "&", "*",
];

/// Token classes for natural text: punctuation by list, everything else
/// counted as informative.
pub fn text_token_classes(vocab: &Vocabulary) -> Vec<TokenClass> {
    vocab
        .tokens()
        .iter()
        .map(|t| if PUNCTUATION.contains(&t.as_str()) { TokenClass::Punctuation } else { TokenClass::Informative })
        .collect()
}

/// Per-epoch selection rates, as recorded in a training history.
pub fn degeneration_report(per_epoch: &[Option<SelectionRates>]) -> Vec<(usize, SelectionRates)> {
    per_epoch.iter().enumerate().filter_map(|(e, r)| r.map(|r| (e, r))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, synth_generate, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus() -> (Vec<Vec<usize>>, Vec<Vec<u8>>, Vec<TokenClass>, Vocabulary) {
        let c = synth_generate(&SynthConfig { marker_correlation: 1.0, n_train: 200, n_dev: 50, n_annotation: 400, ..Default::default() })
            .unwrap();
        let vocab = build_vocab(&[&c.annotation], 1).unwrap();
        let ids: Vec<Vec<usize>> = c.annotation.examples.iter().map(|e| vocab.encode(&e.tokens)).collect();
        let gold = c.annotation.examples.iter().map(|e| e.gold_mask.clone().unwrap()).collect();
        let classes = c.partition.id_classes(&vocab);
        (ids, gold, classes, vocab)
    }

    #[test]
    fn perfect_selector_is_all_informative() {
        let (ids, gold, classes, _) = corpus();
        let r = selection_rates(&ids, &gold, &classes);
        assert_eq!(r.informative, 1.0);
    }

    #[test]
    fn marker_selector_is_all_marker() {
        let (ids, _, classes, _) = corpus();
        let masks: Vec<Vec<u8>> =
            ids.iter().map(|s| s.iter().map(|&i| (classes[i] == TokenClass::Marker) as u8).collect()).collect();
        let r = selection_rates(&ids, &masks, &classes);
        assert_eq!(r.marker, 1.0);
        let total = r.informative + r.filler + r.marker + r.punctuation;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_selector_tracks_base_rates() {
        let (ids, _, classes, _) = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let masks: Vec<Vec<u8>> = ids.iter().map(|s| s.iter().map(|_| rng.gen_bool(0.15) as u8).collect()).collect();
        let r = selection_rates(&ids, &masks, &classes);
        let base = base_rates(&ids, &classes);
        for c in TokenClass::ALL {
            assert!((r.rate(c) - base.rate(c)).abs() < 0.05, "{c:?}");
        }
    }

    #[test]
    fn nothing_selected_gives_zero_rates() {
        let r = selection_rates(&[vec![2, 3]], &[vec![0, 0]], &[TokenClass::Filler; 4]);
        assert_eq!(r.selected, 0);
        assert_eq!(r.filler, 0.0);
    }

    #[test]
    fn punctuation_classes() {
        let v = Vocabulary::from_tokens(["good", ".", ","]);
        let c = text_token_classes(&v);
        assert_eq!(c[v.id(".").unwrap()], TokenClass::Punctuation);
        assert_eq!(c[v.id("good").unwrap()], TokenClass::Informative);
    }
}
