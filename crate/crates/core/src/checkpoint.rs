//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "ABRKCKPT" | u32 format | u8 kind | u8 dtype
//! u32 |V| | u32 width | u32 positions | u32 max_prompt_len | f64 recency | f64 weight_decay
//! |V| - 4 user tokens as (u32 len, utf-8 bytes)
//! u32 buffer count, then per buffer: u64 len, values in the dtype
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::retriever::{Retriever, RetrieverParams};
use crate::scalar::Scalar;
use crate::scorer::{ReferenceScorer, ScorerParams, ScorerShape};
use crate::vocab::Vocabulary;

const MAGIC: &[u8; 8] = b"ABRKCKPT";
const FORMAT: u32 = 1;
const KIND_SCORER: u8 = 1;
const KIND_RETRIEVER: u8 = 2;

struct Header {
    kind: u8,
    vocab: usize,
    width: usize,
    positions: usize,
    max_prompt_len: usize,
    recency: f64,
    weight_decay: f64,
}

fn write_file(path: &Path, header: &Header, vocab: &Vocabulary, buffers: [&[impl Scalar]; 3], dtype: u8) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT)?;
        w.write_u8(header.kind)?;
        w.write_u8(dtype)?;
        w.write_u32::<LE>(header.vocab as u32)?;
        w.write_u32::<LE>(header.width as u32)?;
        w.write_u32::<LE>(header.positions as u32)?;
        w.write_u32::<LE>(header.max_prompt_len as u32)?;
        w.write_f64::<LE>(header.recency)?;
        w.write_f64::<LE>(header.weight_decay)?;
        for tok in vocab.user_tokens() {
            w.write_u32::<LE>(tok.len() as u32)?;
            w.write_all(tok.as_bytes())?;
        }
        w.write_u32::<LE>(buffers.len() as u32)?;
        for buf in buffers {
            w.write_u64::<LE>(buf.len() as u64)?;
            for &v in buf {
                if dtype == 4 {
                    w.write_f32::<LE>(v.to_f32().unwrap_or(f32::NAN))?;
                } else {
                    w.write_f64::<LE>(v.as_f64())?;
                }
            }
        }
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn read_file<T: Scalar>(path: &Path, kind: u8) -> Result<(Header, Vocabulary, Vec<Vec<T>>)> {
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint".into()));
    }
    let format = r.read_u32::<LE>()?;
    if format != FORMAT {
        return Err(bad(format!("unsupported format version {format}")));
    }
    let found = r.read_u8()?;
    if found != kind {
        return Err(bad(format!("expected kind {kind}, found {found}")));
    }
    let dtype = r.read_u8()?;
    if dtype != T::DTYPE {
        return Err(bad(format!("stored dtype f{} does not match f{}", dtype * 8, T::DTYPE * 8)));
    }
    let header = Header {
        kind,
        vocab: r.read_u32::<LE>()? as usize,
        width: r.read_u32::<LE>()? as usize,
        positions: r.read_u32::<LE>()? as usize,
        max_prompt_len: r.read_u32::<LE>()? as usize,
        recency: r.read_f64::<LE>()?,
        weight_decay: r.read_f64::<LE>()?,
    };
    let mut tokens = Vec::with_capacity(header.vocab.saturating_sub(4));
    for _ in 4..header.vocab {
        let len = r.read_u32::<LE>()? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        tokens.push(String::from_utf8(bytes).map_err(|e| bad(e.to_string()))?);
    }
    let vocab = Vocabulary::from_tokens(tokens);
    let n = r.read_u32::<LE>()? as usize;
    let mut buffers = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.read_u64::<LE>()? as usize;
        let mut buf = Vec::with_capacity(len);
        for _ in 0..len {
            let v = if dtype == 4 { r.read_f32::<LE>()? as f64 } else { r.read_f64::<LE>()? };
            buf.push(T::lit(v));
        }
        buffers.push(buf);
    }
    if buffers.len() != 3 {
        return Err(bad(format!("expected 3 buffers, found {}", buffers.len())));
    }
    Ok((header, vocab, buffers))
}

pub fn save_scorer<T: Scalar>(path: &Path, scorer: &ReferenceScorer<T>) -> Result<()> {
    let shape = scorer.shape();
    let header = Header {
        kind: KIND_SCORER,
        vocab: scorer.vocab_arc().len(),
        width: shape.width,
        positions: shape.positions,
        max_prompt_len: shape.max_prompt_len,
        recency: shape.recency,
        weight_decay: scorer.weight_decay(),
    };
    write_file(path, &header, scorer.vocab_arc(), scorer.params().buffers(), T::DTYPE)
}

pub fn load_scorer<T: Scalar>(path: &Path) -> Result<ReferenceScorer<T>> {
    let (h, vocab, mut b) = read_file::<T>(path, KIND_SCORER)?;
    let shape = ScorerShape {
        width: h.width,
        positions: h.positions,
        max_prompt_len: h.max_prompt_len,
        recency: h.recency,
    };
    let params = ScorerParams {
        bias: b.pop().unwrap(),
        output: b.pop().unwrap(),
        embedding: b.pop().unwrap(),
    };
    let expected = ScorerParams::<T>::zeros(h.vocab, shape);
    if params.buffers().map(<[T]>::len) != expected.buffers().map(<[T]>::len) {
        return Err(Error::Checkpoint(format!("{}: buffer sizes disagree with header", path.display())));
    }
    Ok(ReferenceScorer::from_params(Arc::new(vocab), shape, params, h.weight_decay))
}

pub fn save_retriever<T: Scalar>(path: &Path, retriever: &Retriever<T>) -> Result<()> {
    let header = Header {
        kind: KIND_RETRIEVER,
        vocab: retriever.vocab().len(),
        width: retriever.width(),
        positions: 0,
        max_prompt_len: 0,
        recency: 0.0,
        weight_decay: retriever.weight_decay(),
    };
    write_file(path, &header, retriever.vocab(), retriever.params().buffers(), T::DTYPE)
}

pub fn load_retriever<T: Scalar>(path: &Path) -> Result<Retriever<T>> {
    let (h, vocab, mut b) = read_file::<T>(path, KIND_RETRIEVER)?;
    let params = RetrieverParams {
        bias: b.pop().unwrap(),
        projection: b.pop().unwrap(),
        embedding: b.pop().unwrap(),
    };
    let expected = RetrieverParams::<T>::zeros(h.vocab, h.width);
    if params.buffers().map(<[T]>::len) != expected.buffers().map(<[T]>::len) {
        return Err(Error::Checkpoint(format!("{}: buffer sizes disagree with header", path.display())));
    }
    Ok(Retriever::from_params(Arc::new(vocab), h.width, params, h.weight_decay))
}
