use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Vocabulary, MASK_ID, PAD_ID};
use crate::error::{io_err, Error, Result};

/// Symmetric bound of the uniform init used for rows missing from a vector file.
pub const OOV_INIT_RANGE: f64 = 0.05;

/// `|V| x d` word-vector matrix aligned with a [`Vocabulary`]. PAD and MASK rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
}

impl EmbeddingTable {
    /// Uniform `[-range, range]` rows from `seed`, reserved rows zeroed.
    pub fn random(vocab_len: usize, dim: usize, range: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = Array2::from_shape_fn((vocab_len, dim), |_| rng.gen_range(-range..=range));
        let mut table = Self { matrix };
        table.zero_reserved();
        table
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn zero_reserved(&mut self) {
        for id in [PAD_ID, MASK_ID] {
            if id < self.matrix.nrows() {
                self.matrix.row_mut(id).fill(0.0);
            }
        }
    }
}

/// Reads a `word f1 ... fd` text file into a table aligned with `vocab`.
///
/// Rows for vocabulary tokens absent from the file are drawn uniformly from
/// `[-OOV_INIT_RANGE, OOV_INIT_RANGE]` using `seed`. Every line must carry
/// exactly `dim` values, even for tokens outside the vocabulary.
pub fn load_embeddings(path: &Path, dim: usize, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab.len(), dim, OOV_INIT_RANGE, seed);
    let file = File::open(path).map_err(io_err(path))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<f64> = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("token {word:?}: {e}"),
            })?;
        if values.len() != dim {
            return Err(Error::EmbeddingDimension {
                token: word.to_string(),
                expected: dim,
                found: values.len(),
            });
        }
        if let Some(id) = vocab.id(word) {
            table.matrix.row_mut(id).iter_mut().zip(&values).for_each(|(d, &v)| *d = v);
        }
    }
    table.zero_reserved();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MASK_TOKEN, PAD_TOKEN};
    use std::io::Write;

    #[test]
    fn loads_rows_and_zeroes_reserved() {
        let vocab = Vocabulary::from_tokens(["good", "bad"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "good 0.1 0.2 0.3").unwrap();
        writeln!(f, "{MASK_TOKEN} 9 9 9").unwrap();
        writeln!(f, "{PAD_TOKEN} 9 9 9").unwrap();
        writeln!(f, "unused 1 2 3").unwrap();
        let t = load_embeddings(f.path(), 3, &vocab, 1).unwrap();
        assert_eq!(t.matrix.row(2).to_vec(), vec![0.1, 0.2, 0.3]);
        assert!(t.matrix.row(MASK_ID).iter().all(|&v| v == 0.0));
        assert!(t.matrix.row(PAD_ID).iter().all(|&v| v == 0.0));
        assert!(t.matrix.row(3).iter().all(|v| v.abs() <= OOV_INIT_RANGE));
    }

    #[test]
    fn dimension_mismatch_names_token() {
        let vocab = Vocabulary::from_tokens(["good"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "good 0.1 0.2 0.3").unwrap();
        writeln!(f, "short 0.1").unwrap();
        match load_embeddings(f.path(), 3, &vocab, 1) {
            Err(Error::EmbeddingDimension { token, found, .. }) => {
                assert_eq!(token, "short");
                assert_eq!(found, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn oov_rows_within_bounds_over_many_draws() {
        for seed in 0..1000 {
            let t = EmbeddingTable::random(4, 5, OOV_INIT_RANGE, seed);
            assert!(t.matrix.iter().all(|v| v.abs() <= OOV_INIT_RANGE));
            assert!(t.matrix.row(MASK_ID).iter().all(|&v| v == 0.0));
        }
    }
}
