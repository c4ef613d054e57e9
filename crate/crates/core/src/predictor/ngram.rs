//! Additively smoothed n-gram model with backoff to shorter contexts.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::tokenizer::Vocab;

use super::{PredictorError, TokenPredictor};

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_ALPHA: f64 = 0.01;

const MAGIC: &[u8; 4] = b"TFNG";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NGramError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("model was trained for vocabulary {found}, current vocabulary is {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("invalid parameters: {0}")]
    Params(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Counts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    vocab_hash: String,
    /// `tables[k]` maps a context of length `k` to successor counts.
    tables: Vec<HashMap<Vec<u32>, Counts>>,
}

impl NGramModel {
    pub fn train(vocab: &Vocab, examples: &[Vec<u32>], order: usize, alpha: f64) -> Result<Self, NGramError> {
        if order == 0 {
            return Err(NGramError::Params("order must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(NGramError::Params(format!("alpha must be positive, got {alpha}")));
        }
        if examples.is_empty() {
            return Err(NGramError::Params("no training examples".into()));
        }
        let mut tables = vec![HashMap::<Vec<u32>, Counts>::new(); order];
        for seq in examples {
            for i in 0..seq.len() {
                for (k, table) in tables.iter_mut().enumerate().take(i.min(order - 1) + 1) {
                    let c = table.entry(seq[i - k..i].to_vec()).or_default();
                    c.total += 1;
                    *c.next.entry(seq[i]).or_default() += 1;
                }
            }
        }
        Ok(NGramModel { order, alpha, vocab_size: vocab.size(), vocab_hash: vocab.hash(), tables })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    /// Longest seen context ending at the prefix end.
    fn context<'a>(&'a self, prefix: &[u32]) -> Option<&'a Counts> {
        let longest = prefix.len().min(self.order - 1);
        (0..=longest).rev().find_map(|k| self.tables[k].get(&prefix[prefix.len() - k..])).filter(|c| c.total > 0)
    }

    pub fn save(&self, mut w: impl Write) -> Result<(), NGramError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_bytes(&mut w, self.vocab_hash.as_bytes())?;
        w.write_all(&(self.vocab_size as u32).to_le_bytes())?;
        w.write_all(&(self.order as u32).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        for table in &self.tables {
            let mut contexts: Vec<_> = table.iter().collect();
            contexts.sort_by(|a, b| a.0.cmp(b.0));
            let mut buf = Vec::new();
            buf.extend((contexts.len() as u64).to_le_bytes());
            for (ctx, counts) in contexts {
                for id in ctx {
                    buf.extend(id.to_le_bytes());
                }
                buf.extend(counts.total.to_le_bytes());
                let mut next: Vec<_> = counts.next.iter().collect();
                next.sort();
                buf.extend((next.len() as u32).to_le_bytes());
                for (id, n) in next {
                    buf.extend(id.to_le_bytes());
                    buf.extend(n.to_le_bytes());
                }
            }
            write_bytes(&mut w, &buf)?;
        }
        Ok(())
    }

    /// Loads a model, refusing one trained for a different vocabulary.
    pub fn load(mut r: impl Read, vocab: &Vocab) -> Result<Self, NGramError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NGramError::Format("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(NGramError::Format(format!("unsupported version {version}")));
        }
        let hash =
            String::from_utf8(read_bytes(&mut r)?).map_err(|_| NGramError::Format("vocab hash is not utf-8".into()))?;
        if hash != vocab.hash() {
            return Err(NGramError::VocabMismatch { expected: vocab.hash(), found: hash });
        }
        let vocab_size = read_u32(&mut r)? as usize;
        let order = read_u32(&mut r)? as usize;
        let mut f = [0u8; 8];
        r.read_exact(&mut f)?;
        let alpha = f64::from_le_bytes(f);
        if order == 0 || order > 64 || vocab_size != vocab.size() {
            return Err(NGramError::Format("inconsistent header".into()));
        }
        let mut tables = Vec::with_capacity(order);
        for k in 0..order {
            let buf = read_bytes(&mut r)?;
            tables.push(parse_table(&buf, k)?);
        }
        Ok(NGramModel { order, alpha, vocab_size, vocab_hash: hash, tables })
    }
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> io::Result<()> {
    w.write_all(&(b.len() as u64).to_le_bytes())?;
    w.write_all(b)
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>, NGramError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let len = u64::from_le_bytes(b);
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf)?;
    if buf.len() as u64 != len {
        return Err(NGramError::Format("truncated section".into()));
    }
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], NGramError> {
        let s = self.buf.get(self.pos..self.pos + N).ok_or_else(|| NGramError::Format("table ends early".into()))?;
        self.pos += N;
        Ok(s.try_into().expect("slice length"))
    }
}

fn parse_table(buf: &[u8], k: usize) -> Result<HashMap<Vec<u32>, Counts>, NGramError> {
    let mut c = Cursor { buf, pos: 0 };
    let n = u64::from_le_bytes(c.take()?);
    let mut table = HashMap::new();
    for _ in 0..n {
        let ctx = (0..k).map(|_| c.take().map(u32::from_le_bytes)).collect::<Result<Vec<_>, _>>()?;
        let total = u64::from_le_bytes(c.take()?);
        let m = u32::from_le_bytes(c.take()?);
        let mut next = HashMap::new();
        for _ in 0..m {
            let id = u32::from_le_bytes(c.take()?);
            next.insert(id, u64::from_le_bytes(c.take()?));
        }
        table.insert(ctx, Counts { total, next });
    }
    if c.pos != buf.len() {
        return Err(NGramError::Format("trailing bytes in table".into()));
    }
    Ok(table)
}

impl TokenPredictor for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, prefix: &[u32]) -> Result<Vec<f64>, PredictorError> {
        let v = self.vocab_size as f64;
        let Some(counts) = self.context(prefix) else {
            return Ok(vec![1.0 / v; self.vocab_size]);
        };
        let denom = counts.total as f64 + self.alpha * v;
        let mut d = vec![self.alpha / denom; self.vocab_size];
        for (&id, &n) in &counts.next {
            if let Some(p) = d.get_mut(id as usize) {
                *p = (n as f64 + self.alpha) / denom;
            }
        }
        Ok(d)
    }
}
