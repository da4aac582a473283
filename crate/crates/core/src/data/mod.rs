//! Corpus loading, vocabularies, embedding files and the synthetic suite.

mod synth;

pub use synth::{synth_suite, synth_tasks, SynthConfig, SynthSuite, TaskTriggers};

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::task::{Example, Label};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Longest classification input kept; the tail is dropped.
pub const MAX_TOKENS: usize = 400;

pub fn normalize(token: &str) -> String {
    token.to_lowercase()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// Vocabulary holding only the reserved entries.
    pub fn new() -> Self {
        let mut v = Vocab {
            index: HashMap::new(),
            tokens: Vec::new(),
        };
        v.push(PAD_TOKEN);
        v.push(UNK_TOKEN);
        v
    }

    /// Adds tokens in order, skipping repeats and reserved names.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::new();
        for t in tokens {
            v.push(t.as_ref());
        }
        v
    }

    /// Counts tokens and keeps those seen at least `min_count` times,
    /// most frequent first, ties broken alphabetically.
    pub fn build<'a, I>(sequences: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for t in seq {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Vocab::from_tokens(entries.into_iter().map(|(t, _)| t))
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Index of `token`, or [`UNK`].
    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t.as_ref())).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// Hex SHA-256 of the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tokens.join("\n").as_bytes());
        hex::encode(h.finalize())
    }

    /// One token per line, in index order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        for (line, want) in [PAD_TOKEN, UNK_TOKEN].iter().enumerate() {
            if lines.next() != Some(want) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line + 1,
                    msg: format!("expected reserved token {want}"),
                });
            }
        }
        Ok(Vocab::from_tokens(lines))
    }
}

/// A tokenised classification line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextRecord {
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Splits<T> {
    pub fn map<U>(self, mut f: impl FnMut(Vec<T>) -> Result<Vec<U>>) -> Result<Splits<U>> {
        Ok(Splits {
            train: f(self.train)?,
            dev: f(self.dev)?,
            test: f(self.test)?,
        })
    }
}

/// Shuffles with `seed` and cuts 70/10/20; the test split takes the remainder.
pub fn split_random<T>(mut items: Vec<T>, seed: u64) -> Splits<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let n = items.len();
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_dev = ((n as f64 * 0.1).round() as usize).min(n - n_train);
    let test = items.split_off(n_train + n_dev);
    let dev = items.split_off(n_train);
    Splits {
        train: items,
        dev,
        test,
    }
}

/// Reads `label<TAB>text` lines. Blank lines are skipped.
pub fn read_classification(path: &Path) -> Result<Vec<TextRecord>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `label<TAB>text`"))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err("label is not a non-negative integer"))?;
        let tokens: Vec<String> = text
            .split_whitespace()
            .take(MAX_TOKENS)
            .map(normalize)
            .collect();
        if tokens.is_empty() {
            return Err(parse_err("no tokens"));
        }
        out.push(TextRecord { tokens, label });
    }
    Ok(out)
}

/// Reads a classification file and splits it 70/10/20 with a seeded shuffle.
pub fn load_classification(path: &Path, seed: u64) -> Result<Splits<TextRecord>> {
    Ok(split_random(read_classification(path)?, seed))
}

pub fn write_classification(path: &Path, records: &[TextRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{}\t{}\n", r.label, r.tokens.join(" ")));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `token v1 v2 ...` lines for every non-reserved vocabulary entry,
/// readable by [`load_embeddings`].
pub fn write_embeddings(path: &Path, vocab: &Vocab, table: &Matrix) -> Result<()> {
    if table.rows() != vocab.len() {
        return Err(Error::shape(
            "write_embeddings",
            format!("{} rows for {} vocabulary entries", table.rows(), vocab.len()),
        ));
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for (i, token) in vocab.tokens().iter().enumerate().skip(2) {
        write!(f, "{token}")?;
        for v in table.row(i) {
            write!(f, " {v:e}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads CoNLL columns: word first, tag last, blank line between sentences.
pub fn load_conll(path: &Path) -> Result<Vec<TaggedSentence>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    let mut current = TaggedSentence {
        tokens: Vec::new(),
        tags: Vec::new(),
    };
    let mut width: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            if !current.tokens.is_empty() {
                out.push(std::mem::replace(
                    &mut current,
                    TaggedSentence {
                        tokens: Vec::new(),
                        tags: Vec::new(),
                    },
                ));
            }
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if cols.len() < 2 {
            return Err(err("expected at least a word and a tag".into()));
        }
        match width {
            None => width = Some(cols.len()),
            Some(w) if w != cols.len() => {
                return Err(err(format!("{} columns where earlier lines have {w}", cols.len())))
            }
            _ => {}
        }
        current.tokens.push(cols[0].to_string());
        current.tags.push(cols[cols.len() - 1].to_string());
    }
    if !current.tokens.is_empty() {
        out.push(current);
    }
    Ok(out)
}

/// Two columns per line, a blank line after each sentence.
pub fn write_conll(path: &Path, sentences: &[TaggedSentence]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in sentences {
        for (t, g) in s.tokens.iter().zip(&s.tags) {
            writeln!(f, "{t} {g}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Distinct tags, sorted, with `O` first when present.
pub fn tagset(sentences: &[TaggedSentence]) -> Vec<String> {
    let mut tags: Vec<String> = sentences
        .iter()
        .flat_map(|s| s.tags.iter().cloned())
        .collect();
    tags.sort();
    tags.dedup();
    if let Some(pos) = tags.iter().position(|t| t == "O") {
        let o = tags.remove(pos);
        tags.insert(0, o);
    }
    tags
}

pub fn encode_classification(records: &[TextRecord], vocab: &Vocab) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example {
            tokens: vocab.encode(&r.tokens),
            label: Label::Class(r.label),
        })
        .collect()
}

/// Tokens are looked up lowercased; tags must belong to `tags`.
pub fn encode_tagging(
    sentences: &[TaggedSentence],
    vocab: &Vocab,
    tags: &[String],
) -> Result<Vec<Example>> {
    let tag_index: HashMap<&str, usize> = tags
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    sentences
        .iter()
        .map(|s| {
            let tokens = s.tokens.iter().map(|t| vocab.get(&normalize(t))).collect();
            let labels = s
                .tags
                .iter()
                .map(|t| {
                    tag_index
                        .get(t.as_str())
                        .copied()
                        .ok_or_else(|| Error::Structural(format!("tag `{t}` not in the tagset")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Example {
                tokens,
                label: Label::Tags(labels),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub matrix: Matrix,
    /// Vocabulary entries (reserved ones excluded) found in the file.
    pub found: usize,
    /// Vocabulary entries (reserved ones excluded) that got random rows.
    pub random_rows: usize,
}

/// Fills a `vocab x d` table from a whitespace-separated vector file.
/// Rows without a vector are uniform in (-0.1, 0.1) from `seed`; the padding
/// row is zero. A two-field first line is read as a count header and skipped.
pub fn load_embeddings(path: &Path, vocab: &Vocab, d: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = Matrix::uniform(vocab.len(), d, 0.1, &mut rng);
    matrix.row_mut(PAD).fill(0.0);
    let mut seen = vec![false; vocab.len()];
    let file = fs::File::open(path)?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if i == 0 && values.len() == 1 && d != 1 {
            continue;
        }
        if values.len() != d {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("vector for `{token}` has {} values, expected {d}", values.len()),
            });
        }
        let Some(&idx) = vocab.index.get(token) else { continue };
        if idx < 2 || seen[idx] {
            continue;
        }
        let row = matrix.row_mut(idx);
        for (slot, v) in row.iter_mut().zip(&values) {
            *slot = v.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad number `{v}` in vector for `{token}`"),
            })?;
        }
        seen[idx] = true;
    }
    let found = seen.iter().filter(|&&s| s).count();
    Ok(EmbeddingTable {
        matrix,
        found,
        random_rows: vocab.len().saturating_sub(2) - found,
    })
}

/// Shuffled mini-batches of indices `0..n`.
pub fn batches<R: rand::Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests;
