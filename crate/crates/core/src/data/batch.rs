use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Vocabulary, PAD_ID};

/// A padded mini-batch, batch-major (`B x T`).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Array2<usize>,
    /// 1.0 at real tokens, 0.0 at padding.
    pub pad_mask: Array2<f64>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    /// Gold masks truncated like the tokens, when the examples carry them.
    pub gold: Vec<Option<Vec<u8>>>,
    /// Index of each row in the source dataset.
    pub indices: Vec<usize>,
}

impl Batch {
    /// Builds a batch from id sequences. Any `PAD_ID` position, wherever it
    /// occurs, is treated as padding.
    pub fn from_sequences(seqs: &[Vec<usize>], labels: &[usize]) -> Self {
        assert_eq!(seqs.len(), labels.len(), "one label per sequence");
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Array2::from_elem((seqs.len(), width), PAD_ID);
        for (b, seq) in seqs.iter().enumerate() {
            for (t, &id) in seq.iter().enumerate() {
                ids[[b, t]] = id;
            }
        }
        let pad_mask = ids.mapv(|id| if id == PAD_ID { 0.0 } else { 1.0 });
        let lengths = seqs.iter().map(|s| s.iter().filter(|&&id| id != PAD_ID).count()).collect();
        Self {
            ids,
            pad_mask,
            lengths,
            labels: labels.to_vec(),
            gold: vec![None; seqs.len()],
            indices: (0..seqs.len()).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.ids.nrows()
    }

    pub fn width(&self) -> usize {
        self.ids.ncols()
    }
}

/// Splits `dataset` into padded batches of at most `batch_size` examples.
///
/// Examples longer than `max_len` are truncated, gold masks with them. With
/// `shuffle`, the example order is a seeded permutation.
pub fn make_batches(
    dataset: &Dataset,
    vocab: &Vocabulary,
    batch_size: usize,
    max_len: usize,
    seed: u64,
    shuffle: bool,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let seqs: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| {
                    let toks = &dataset.examples[i].tokens;
                    vocab.encode(&toks[..toks.len().min(max_len)])
                })
                .collect();
            let labels: Vec<usize> =
                chunk.iter().map(|&i| dataset.examples[i].label as usize).collect();
            let mut batch = Batch::from_sequences(&seqs, &labels);
            batch.gold = chunk
                .iter()
                .map(|&i| {
                    dataset.examples[i]
                        .gold_mask
                        .as_ref()
                        .map(|m| m[..m.len().min(max_len)].to_vec())
                })
                .collect();
            batch.indices = chunk.to_vec();
            batch
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, Split};

    fn dataset(lengths: &[usize]) -> (Dataset, Vocabulary) {
        let vocab = Vocabulary::from_tokens(["w"]);
        let examples = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| Example::new(i.to_string(), vec!["w".to_string(); l], (i % 2) as u8, None).unwrap())
            .collect();
        (Dataset::new(Split::Train, "x", examples), vocab)
    }

    #[test]
    fn batch_sizes() {
        let (ds, v) = dataset(&[1, 2, 3, 4, 5]);
        let sizes: Vec<usize> = make_batches(&ds, &v, 2, 10, 0, false).iter().map(Batch::size).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn truncation_and_padding() {
        let (ds, v) = dataset(&[3, 5]);
        let b = &make_batches(&ds, &v, 2, 4, 0, false)[0];
        assert_eq!(b.lengths, vec![3, 4]);
        assert_eq!(b.pad_mask.row(0).to_vec(), vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(b.pad_mask.row(1).to_vec(), vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(b.ids[[0, 3]], PAD_ID);
    }

    #[test]
    fn shuffle_is_seeded() {
        let (ds, v) = dataset(&[1; 20]);
        let a: Vec<Vec<usize>> = make_batches(&ds, &v, 3, 5, 42, true).into_iter().map(|b| b.indices).collect();
        let b: Vec<Vec<usize>> = make_batches(&ds, &v, 3, 5, 42, true).into_iter().map(|b| b.indices).collect();
        let c: Vec<Vec<usize>> = make_batches(&ds, &v, 3, 5, 43, true).into_iter().map(|b| b.indices).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn interior_pad_is_padding() {
        let b = Batch::from_sequences(&[vec![2, PAD_ID, 3]], &[0]);
        assert_eq!(b.pad_mask.row(0).to_vec(), vec![1.0, 0.0, 1.0]);
        assert_eq!(b.lengths, vec![2]);
    }
}
