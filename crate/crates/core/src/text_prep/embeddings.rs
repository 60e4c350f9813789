use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Vocabulary, PAD};
use crate::error::{Error, Result};

/// Out-of-file rows are drawn from U(-0.25, 0.25).
pub const OOV_INIT_RANGE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingFormat {
    /// GloVe / fastText style text: optional `V d` header, then `token f1 .. fd`.
    TextVec,
    /// Original word2vec binary: `V d\n`, then `token<space>` + d little-endian f32.
    Word2vecBinary,
}

/// Vectors found in a pretrained file for the tokens of one vocabulary.
///
/// Kept separate from [`EmbeddingTable`] so a large file is scanned once and
/// each training run fills the missing rows with its own seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedRows {
    dim: usize,
    rows: Vec<Option<Vec<f64>>>,
}

impl PretrainedRows {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    /// Number of non-reserved vocabulary tokens with a pretrained vector.
    pub fn found(&self) -> usize {
        self.rows.iter().skip(2).filter(|r| r.is_some()).count()
    }

    /// Fraction of non-reserved tokens found in the file; 0 when there are none.
    pub fn coverage(&self) -> f64 {
        let candidates = self.rows.len().saturating_sub(2);
        if candidates == 0 {
            0.0
        } else {
            self.found() as f64 / candidates as f64
        }
    }

    pub fn materialize<R: Rng + ?Sized>(&self, rng: &mut R) -> EmbeddingTable {
        let mut matrix = Array2::zeros((self.rows.len(), self.dim));
        for (i, row) in self.rows.iter().enumerate() {
            if i == PAD {
                continue;
            }
            let mut target = matrix.row_mut(i);
            match row {
                Some(v) => target.iter_mut().zip(v).for_each(|(t, x)| *t = *x),
                None => target
                    .iter_mut()
                    .for_each(|t| *t = rng.random_range(-OOV_INIT_RANGE..OOV_INIT_RANGE)),
            }
        }
        EmbeddingTable {
            matrix,
            coverage: self.coverage(),
        }
    }
}

/// A `V x d` embedding matrix aligned with a vocabulary. Row `PAD` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
    pub coverage: f64,
}

impl EmbeddingTable {
    /// A table with every non-PAD row drawn from the OOV distribution.
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        PretrainedRows {
            dim,
            rows: vec![None; vocab_size],
        }
        .materialize(rng)
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn load_pretrained<R: Rng + ?Sized>(
    path: &Path,
    format: EmbeddingFormat,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    Ok(read_pretrained(path, format, vocab)?.materialize(rng))
}

/// Collects vectors for vocabulary tokens. An exact token match wins over a
/// case-insensitive one; among case-insensitive matches the first in the file wins.
pub fn read_pretrained(
    path: &Path,
    format: EmbeddingFormat,
    vocab: &Vocabulary,
) -> Result<PretrainedRows> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut collector = Collector::new(vocab);
    match format {
        EmbeddingFormat::TextVec => read_text(path, &mut reader, &mut collector)?,
        EmbeddingFormat::Word2vecBinary => read_binary(path, &mut reader, &mut collector)?,
    }
    let dim = collector.dim.unwrap_or(0);
    let rows = collector.rows.into_iter().map(|r| r.map(|(v, _)| v)).collect();
    Ok(PretrainedRows { dim, rows })
}

struct Collector<'v> {
    vocab: &'v Vocabulary,
    dim: Option<usize>,
    /// (vector, exact match)
    rows: Vec<Option<(Vec<f64>, bool)>>,
}

impl<'v> Collector<'v> {
    fn new(vocab: &'v Vocabulary) -> Self {
        Self {
            vocab,
            dim: None,
            rows: vec![None; vocab.len()],
        }
    }

    fn wants(&self, token: &str) -> Option<(usize, bool)> {
        if let Some(i) = self.vocab.get(token) {
            if i > super::UNK && !matches!(self.rows[i], Some((_, true))) {
                return Some((i, true));
            }
            return None;
        }
        let lower = token.to_lowercase();
        match self.vocab.get(&lower) {
            Some(i) if i > super::UNK && self.rows[i].is_none() => Some((i, false)),
            _ => None,
        }
    }
}

fn read_text(path: &Path, reader: &mut impl BufRead, out: &mut Collector) -> Result<()> {
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let mut fields = line.split_ascii_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values: Vec<&str> = fields.collect();
        if line_no == 1 && values.len() == 1 {
            if let (Ok(_), Ok(d)) = (token.parse::<usize>(), values[0].parse::<usize>()) {
                out.dim = Some(d);
                continue;
            }
        }
        let dim = *out.dim.get_or_insert(values.len());
        if values.len() != dim {
            return Err(Error::format(
                path,
                format!("line {line_no}: expected {dim} values, found {}", values.len()),
            ));
        }
        if let Some((idx, exact)) = out.wants(token) {
            let vector = values
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| {
                            Error::format(path, format!("line {line_no}: bad value {v:?}"))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            out.rows[idx] = Some((vector, exact));
        }
    }
    Ok(())
}

fn read_binary(path: &Path, reader: &mut impl BufRead, out: &mut Collector) -> Result<()> {
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::format(path, format!("unreadable header: {e}")))?;
    let parsed: Vec<usize> = header
        .split_ascii_whitespace()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, format!("unreadable header {:?}", header.trim())))?;
    let [count, dim] = parsed[..] else {
        return Err(Error::format(
            path,
            format!("header must be `V d`, found {:?}", header.trim()),
        ));
    };
    out.dim = Some(dim);
    let mut buf = vec![0u8; dim * 4];
    let mut token = Vec::new();
    for entry in 0..count {
        token.clear();
        loop {
            let mut byte = [0u8; 1];
            match reader.read(&mut byte) {
                Ok(0) => {
                    return Err(Error::format(
                        path,
                        format!("file ends at entry {entry} of {count}"),
                    ))
                }
                Ok(_) => {}
                Err(e) => return Err(Error::io(path, e)),
            }
            match byte[0] {
                b' ' if !token.is_empty() => break,
                b'\n' | b' ' if token.is_empty() => continue,
                b => token.push(b),
            }
        }
        reader.read_exact(&mut buf).map_err(|_| {
            Error::format(path, format!("truncated vector at entry {entry} of {count}"))
        })?;
        let token = String::from_utf8_lossy(&token);
        if let Some((idx, exact)) = out.wants(&token) {
            let vector: Vec<f64> = buf
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::format(
                    path,
                    format!("non-finite value at entry {entry}"),
                ));
            }
            out.rows[idx] = Some((vector, exact));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn vocab(words: &[&str]) -> Vocabulary {
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.extend(words.iter().map(|w| w.to_string()));
        Vocabulary::from_tokens(tokens).unwrap()
    }

    fn write_tmp(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    #[test]
    fn text_file_half_coverage() {
        let f = write_tmp(b"poor 0.1 0.2 0.3\nhomeless -1 0 1\n");
        let v = vocab(&["poor", "homeless", "kid", "dog"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = load_pretrained(f.path(), EmbeddingFormat::TextVec, &v, &mut rng).unwrap();
        assert_eq!(table.coverage, 0.5);
        assert_eq!(table.matrix.dim(), (6, 3));
        assert_eq!(table.matrix.row(2).to_vec(), vec![0.1, 0.2, 0.3]);
        assert!(table.matrix.row(0).iter().all(|&x| x == 0.0));
        assert!(table
            .matrix
            .row(4)
            .iter()
            .all(|x| x.abs() <= OOV_INIT_RANGE));
    }

    #[test]
    fn reserved_only_vocab_has_zero_coverage() {
        let f = write_tmp(b"2 3\npoor 0.1 0.2 0.3\nkid 1 1 1\n");
        let v = vocab(&[]);
        let rows = read_pretrained(f.path(), EmbeddingFormat::TextVec, &v).unwrap();
        assert_eq!(rows.coverage(), 0.0);
        let table = rows.materialize(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(table.matrix.dim(), (2, 3));
        assert!(table.matrix.row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn short_row_is_a_format_error() {
        let f = write_tmp(b"2 3\npoor 0.1 0.2 0.3\nkid 1 1\n");
        let err = read_pretrained(f.path(), EmbeddingFormat::TextVec, &vocab(&["kid"]))
            .unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn exact_case_wins_over_lowercased_match() {
        let f = write_tmp(b"Poor 1 1\npoor 2 2\nPOOR 3 3\nKid 4 4\n");
        let v = vocab(&["poor", "kid"]);
        let rows = read_pretrained(f.path(), EmbeddingFormat::TextVec, &v).unwrap();
        let t = rows.materialize(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.matrix.row(2).to_vec(), vec![2.0, 2.0]);
        assert_eq!(t.matrix.row(3).to_vec(), vec![4.0, 4.0]);
    }

    #[test]
    fn word2vec_binary_roundtrip() {
        let mut bytes = b"3 2\n".to_vec();
        for (tok, vals) in [("poor", [0.5f32, -1.0]), ("Kid", [2.0, 3.0]), ("x", [9.0, 9.0])] {
            bytes.extend_from_slice(tok.as_bytes());
            bytes.push(b' ');
            for v in vals {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.push(b'\n');
        }
        let f = write_tmp(&bytes);
        let v = vocab(&["poor", "kid", "dog", "cat"]);
        let rows = read_pretrained(f.path(), EmbeddingFormat::Word2vecBinary, &v).unwrap();
        assert_eq!(rows.dim(), 2);
        assert_eq!(rows.coverage(), 0.5);
        let t = rows.materialize(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.matrix.row(2).to_vec(), vec![0.5, -1.0]);
        assert_eq!(t.matrix.row(3).to_vec(), vec![2.0, 3.0]);
    }

    #[test]
    fn word2vec_binary_errors() {
        let f = write_tmp(b"not a header\n");
        assert!(matches!(
            read_pretrained(f.path(), EmbeddingFormat::Word2vecBinary, &vocab(&[])),
            Err(Error::Format { .. })
        ));
        let mut bytes = b"2 2\npoor ".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        let f = write_tmp(&bytes);
        assert!(matches!(
            read_pretrained(f.path(), EmbeddingFormat::Word2vecBinary, &vocab(&[])),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn oov_rows_depend_on_seed() {
        let a = EmbeddingTable::random(5, 3, &mut ChaCha8Rng::seed_from_u64(7));
        let b = EmbeddingTable::random(5, 3, &mut ChaCha8Rng::seed_from_u64(7));
        let c = EmbeddingTable::random(5, 3, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a, b);
        assert_ne!(a.matrix, c.matrix);
    }
}
