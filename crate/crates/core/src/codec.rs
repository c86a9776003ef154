//! Word-level lossless codecs and compression-ratio estimation.
//!
//! Ratios are encoded bits over raw bits, so values below one mean the data
//! shrinks. Huffman tables travel out of band and are not counted.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer_models::{CostTable, ResourceVector};

/// Bits of the run-length field in an RLE token.
pub const RLE_RUN_BITS: u32 = 8;
const RLE_MAX_RUN: u64 = (1 << RLE_RUN_BITS) - 1;
const MAX_CODE_LEN: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordStream {
    pub words: Vec<u64>,
    pub word_length: u32,
}

impl WordStream {
    pub fn new(words: Vec<u64>, word_length: u32) -> Result<Self> {
        if word_length == 0 || word_length > 32 {
            return Err(Error::Codec(format!("word length {word_length} out of range")));
        }
        if let Some(w) = words.iter().find(|w| **w >> word_length != 0) {
            return Err(Error::Codec(format!("word {w} does not fit in {word_length} bits")));
        }
        Ok(Self { words, word_length })
    }

    pub fn raw_bits(&self) -> u64 {
        self.words.len() as u64 * self.word_length as u64
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn histogram(&self) -> BTreeMap<u64, u64> {
        let mut h = BTreeMap::new();
        for w in &self.words {
            *h.entry(*w).or_insert(0) += 1;
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    None,
    Rle,
    Huffman,
}

impl Scheme {
    pub fn all() -> [Scheme; 3] {
        [Scheme::None, Scheme::Rle, Scheme::Huffman]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::None => "none",
            Scheme::Rle => "rle",
            Scheme::Huffman => "huffman",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Scheme::None),
            "rle" => Ok(Scheme::Rle),
            "huffman" => Ok(Scheme::Huffman),
            other => Err(Error::Config(format!("unknown codec `{other}`"))),
        }
    }
}

/// MSB-first bit string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bits {
    bytes: Vec<u8>,
    len: u64,
}

impl Bits {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: Vec<u8>, len: u64) -> Result<Self> {
        if len > bytes.len() as u64 * 8 {
            return Err(Error::Codec(format!("{len} bits claimed but only {} bytes given", bytes.len())));
        }
        Ok(Self { bytes, len })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Append the low `n` bits of `value`.
    pub fn push(&mut self, value: u64, n: u32) {
        for i in (0..n).rev() {
            let bit = (value >> i) & 1;
            let byte = (self.len / 8) as usize;
            if byte == self.bytes.len() {
                self.bytes.push(0);
            }
            if bit == 1 {
                self.bytes[byte] |= 0x80 >> (self.len % 8);
            }
            self.len += 1;
        }
    }

    pub fn bit(&self, i: u64) -> bool {
        self.bytes[(i / 8) as usize] & (0x80 >> (i % 8)) != 0
    }
}

struct BitReader<'a> {
    bits: &'a Bits,
    pos: u64,
}

impl BitReader<'_> {
    fn remaining(&self) -> u64 {
        self.bits.len - self.pos
    }

    fn read(&mut self, n: u32) -> Option<u64> {
        if self.remaining() < n as u64 {
            return None;
        }
        let mut v = 0;
        for _ in 0..n {
            v = (v << 1) | self.bits.bit(self.pos) as u64;
            self.pos += 1;
        }
        Some(v)
    }
}

// ---------------------------------------------------------------------------
// RLE

/// Bits of one RLE token.
pub fn rle_token_bits(word_length: u32) -> u64 {
    (word_length + RLE_RUN_BITS) as u64
}

/// Number of tokens the encoder emits, without building the bitstream.
pub fn rle_token_count(s: &WordStream) -> u64 {
    let mut tokens = 0;
    let mut i = 0;
    while i < s.words.len() {
        let mut run = 1;
        while i + run < s.words.len() && s.words[i + run] == s.words[i] {
            run += 1;
        }
        tokens += (run as u64).div_ceil(RLE_MAX_RUN);
        i += run;
    }
    tokens
}

/// Sequence of `(literal, run)` tokens; runs longer than the field allows
/// are split.
pub fn rle_encode(s: &WordStream) -> Bits {
    let mut out = Bits::new();
    let mut i = 0;
    while i < s.words.len() {
        let w = s.words[i];
        let mut run = 1;
        while i + run < s.words.len() && s.words[i + run] == w {
            run += 1;
        }
        i += run;
        let mut left = run as u64;
        while left > 0 {
            let take = left.min(RLE_MAX_RUN);
            out.push(w, s.word_length);
            out.push(take, RLE_RUN_BITS);
            left -= take;
        }
    }
    out
}

pub fn rle_decode(bits: &Bits, word_length: u32) -> Result<WordStream> {
    let token = rle_token_bits(word_length);
    if bits.len() % token != 0 {
        return Err(Error::Codec(format!("RLE stream of {} bits is not a whole number of {token}-bit tokens", bits.len())));
    }
    let mut r = BitReader { bits, pos: 0 };
    let mut words = Vec::new();
    while r.remaining() > 0 {
        let w = r.read(word_length).ok_or_else(|| Error::Codec("truncated RLE literal".into()))?;
        let run = r.read(RLE_RUN_BITS).ok_or_else(|| Error::Codec("truncated RLE run".into()))?;
        if run == 0 {
            return Err(Error::Codec(format!("zero-length run at bit {}", r.pos - RLE_RUN_BITS as u64)));
        }
        words.extend(std::iter::repeat(w).take(run as usize));
    }
    WordStream::new(words, word_length)
}

pub fn rle_ratio(s: &WordStream) -> f64 {
    if s.is_empty() {
        return 1.0;
    }
    (rle_token_count(s) * rle_token_bits(s.word_length)) as f64 / s.raw_bits() as f64
}

// ---------------------------------------------------------------------------
// Huffman

/// Canonical Huffman code for one word length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecTable {
    pub scheme: Scheme,
    pub word_length: u32,
    /// Code length of every symbol (Huffman only).
    #[serde(default)]
    pub lengths: BTreeMap<u64, u32>,
}

impl CodecTable {
    pub fn plain(scheme: Scheme, word_length: u32) -> Self {
        Self { scheme, word_length, lengths: BTreeMap::new() }
    }

    /// `(symbol, code, length)` in canonical order.
    pub fn codes(&self) -> Vec<(u64, u64, u32)> {
        let mut order: Vec<(u32, u64)> = self.lengths.iter().map(|(s, l)| (*l, *s)).collect();
        order.sort_unstable();
        let mut out = Vec::with_capacity(order.len());
        let mut code = 0u64;
        let mut prev = order.first().map_or(0, |x| x.0);
        for (i, (len, sym)) in order.into_iter().enumerate() {
            if i > 0 {
                code = (code + 1) << (len - prev);
            }
            prev = len;
            out.push((sym, code, len));
        }
        out
    }

    /// Encoded size of a histogram in bits.
    pub fn encoded_bits(&self, hist: &BTreeMap<u64, u64>) -> Result<u64> {
        hist.iter()
            .map(|(s, n)| {
                self.lengths
                    .get(s)
                    .map(|l| *l as u64 * n)
                    .ok_or_else(|| Error::Codec(format!("symbol {s} has no code")))
            })
            .sum()
    }
}

/// Optimal code lengths for `hist`; a lone symbol gets a one-bit code.
pub fn huffman_build(hist: &BTreeMap<u64, u64>, word_length: u32) -> Result<CodecTable> {
    let live: Vec<(u64, u64)> = hist.iter().filter(|(_, n)| **n > 0).map(|(s, n)| (*s, *n)).collect();
    if live.is_empty() {
        return Err(Error::Codec("empty histogram".into()));
    }
    let mut lengths = BTreeMap::new();
    if live.len() == 1 {
        lengths.insert(live[0].0, 1);
        return Ok(CodecTable { scheme: Scheme::Huffman, word_length, lengths });
    }
    // nodes: leaves first, then internal; ties resolve by node index
    let mut parent = vec![usize::MAX; 2 * live.len() - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = live.iter().enumerate().map(|(i, (_, n))| Reverse((*n, i))).collect();
    let mut next = live.len();
    while heap.len() > 1 {
        let Reverse((a, ia)) = heap.pop().unwrap_or(Reverse((0, 0)));
        let Reverse((b, ib)) = heap.pop().unwrap_or(Reverse((0, 0)));
        parent[ia] = next;
        parent[ib] = next;
        heap.push(Reverse((a + b, next)));
        next += 1;
    }
    let root = next - 1;
    let mut depth = vec![0u32; parent.len()];
    for i in (0..root).rev() {
        depth[i] = depth[parent[i]] + 1;
    }
    for (i, (s, _)) in live.iter().enumerate() {
        if depth[i] > MAX_CODE_LEN {
            return Err(Error::Codec(format!("code length {} exceeds {MAX_CODE_LEN}", depth[i])));
        }
        lengths.insert(*s, depth[i]);
    }
    Ok(CodecTable { scheme: Scheme::Huffman, word_length, lengths })
}

pub fn huffman_encode(s: &WordStream, table: &CodecTable) -> Result<Bits> {
    let codes: BTreeMap<u64, (u64, u32)> = table.codes().into_iter().map(|(s, c, l)| (s, (c, l))).collect();
    let mut out = Bits::new();
    for w in &s.words {
        let (c, l) = codes.get(w).ok_or_else(|| Error::Codec(format!("symbol {w} has no code")))?;
        out.push(*c, *l);
    }
    Ok(out)
}

pub fn huffman_decode(bits: &Bits, table: &CodecTable) -> Result<WordStream> {
    let codes = table.codes();
    if codes.is_empty() {
        return Err(Error::Codec("empty code table".into()));
    }
    let max_len = codes.iter().map(|c| c.2).max().unwrap_or(0) as usize;
    // canonical decoding: per length, first code and offset into the symbol list
    let mut count = vec![0u64; max_len + 1];
    let mut first = vec![u64::MAX; max_len + 1];
    let mut offset = vec![0usize; max_len + 1];
    for (i, (_, c, l)) in codes.iter().enumerate() {
        let l = *l as usize;
        if count[l] == 0 {
            first[l] = *c;
            offset[l] = i;
        }
        count[l] += 1;
    }
    let mut r = BitReader { bits, pos: 0 };
    let mut words = Vec::new();
    while r.remaining() > 0 {
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            let b = r.read(1).ok_or_else(|| Error::Codec(format!("truncated Huffman code at bit {}", r.pos)))?;
            code = (code << 1) | b;
            len += 1;
            if len > max_len {
                return Err(Error::Codec(format!("invalid Huffman code ending at bit {}", r.pos)));
            }
            if count[len] > 0 && code >= first[len] && code - first[len] < count[len] {
                words.push(codes[offset[len] + (code - first[len]) as usize].0);
                break;
            }
        }
    }
    WordStream::new(words, table.word_length)
}

/// Encoded/raw ratio of `s` under `table`.
pub fn huffman_ratio(s: &WordStream, table: &CodecTable) -> Result<f64> {
    if s.is_empty() {
        return Ok(1.0);
    }
    Ok(table.encoded_bits(&s.histogram())? as f64 / s.raw_bits() as f64)
}

/// Shannon entropy in bits per symbol.
pub fn entropy(hist: &BTreeMap<u64, u64>) -> f64 {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return 0.0;
    }
    hist.values()
        .filter(|n| **n > 0)
        .map(|n| {
            let p = *n as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// Mean code length in bits per symbol.
pub fn mean_code_length(hist: &BTreeMap<u64, u64>, table: &CodecTable) -> Result<f64> {
    let total: u64 = hist.values().sum();
    Ok(table.encoded_bits(hist)? as f64 / total.max(1) as f64)
}

// ---------------------------------------------------------------------------
// Ratio estimation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub scheme: Scheme,
    pub c_bar: f64,
    pub min: f64,
    pub max: f64,
    pub samples: Vec<f64>,
}

fn pooled_table(samples: &[WordStream]) -> Result<CodecTable> {
    let mut hist = BTreeMap::new();
    for s in samples {
        for (w, n) in s.histogram() {
            *hist.entry(w).or_insert(0) += n;
        }
    }
    huffman_build(&hist, samples[0].word_length)
}

/// Ratio of one stream; Huffman uses `table` or, if absent, one built from
/// the stream itself.
pub fn stream_ratio(s: &WordStream, scheme: Scheme, table: Option<&CodecTable>) -> Result<f64> {
    match scheme {
        Scheme::None => Ok(1.0),
        Scheme::Rle => Ok(rle_ratio(s)),
        Scheme::Huffman => match table {
            Some(t) => huffman_ratio(s, t),
            None if s.is_empty() => Ok(1.0),
            None => huffman_ratio(s, &huffman_build(&s.histogram(), s.word_length)?),
        },
    }
}

/// Mean per-sample ratio. For Huffman one table is built from the pooled
/// calibration set and applied to every sample.
pub fn estimate_ratio(samples: &[WordStream], scheme: Scheme) -> Result<RatioEstimate> {
    if samples.is_empty() {
        return Err(Error::Empty("calibration set is empty".into()));
    }
    let table = match scheme {
        Scheme::Huffman => Some(pooled_table(samples)?),
        _ => None,
    };
    let ratios = samples
        .iter()
        .map(|s| stream_ratio(s, scheme, table.as_ref()))
        .collect::<Result<Vec<f64>>>()?;
    let c_bar = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RatioEstimate { scheme, c_bar, min, max, samples: ratios })
}

/// Encoder/decoder logic for `streams` parallel data streams.
pub fn codec_overhead(scheme: Scheme, streams: u64, costs: &CostTable) -> ResourceVector {
    let per = match scheme {
        Scheme::None => return ResourceVector::default(),
        Scheme::Rle => costs.codec.rle,
        Scheme::Huffman => costs.codec.huffman,
    };
    ResourceVector { lut: per.lut * streams, ff: per.ff * streams, ..Default::default() }
}

// ---------------------------------------------------------------------------
// Calibration data

pub const RAW_MAGIC: [u8; 4] = *b"WSTR";

/// Write `s` as a raw tensor: 16-byte header (magic, u32 word length, u64
/// count) followed by little-endian words of `L/8` bytes.
pub fn write_raw(path: impl AsRef<Path>, s: &WordStream) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_raw_to(&mut f, s)?;
    f.flush()?;
    Ok(())
}

pub fn write_raw_to(w: &mut impl Write, s: &WordStream) -> Result<()> {
    if s.word_length % 8 != 0 {
        return Err(Error::Codec(format!("raw tensors need a byte-aligned word length, got {}", s.word_length)));
    }
    let bytes = (s.word_length / 8) as usize;
    w.write_all(&RAW_MAGIC)?;
    w.write_all(&s.word_length.to_le_bytes())?;
    w.write_all(&(s.words.len() as u64).to_le_bytes())?;
    for word in &s.words {
        w.write_all(&word.to_le_bytes()[..bytes])?;
    }
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<WordStream> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_raw_from(&mut f)
}

pub fn read_raw_from(r: &mut impl Read) -> Result<WordStream> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| Error::Codec("raw tensor shorter than its header".into()))?;
    if header[..4] != RAW_MAGIC {
        return Err(Error::Codec("bad raw tensor magic".into()));
    }
    let word_length = u32::from_le_bytes(header[4..8].try_into().unwrap_or_default());
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap_or_default());
    if !matches!(word_length, 8 | 16 | 32) {
        return Err(Error::Codec(format!("unsupported word length {word_length}")));
    }
    let bytes = (word_length / 8) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() as u64 != count * bytes as u64 {
        return Err(Error::Codec(format!("raw tensor declares {count} words but holds {} bytes", body.len())));
    }
    let words = body
        .chunks_exact(bytes)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..bytes].copy_from_slice(c);
            u64::from_le_bytes(b)
        })
        .collect();
    WordStream::new(words, word_length)
}

/// Shape of synthetic post-ReLU activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Long-run fraction of zero words.
    pub zero_fraction: f64,
    /// Mean length of a zero run.
    pub mean_zero_run: f64,
    /// Mean magnitude of non-zero words.
    pub mean_value: f64,
    pub words: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { zero_fraction: 0.6, mean_zero_run: 6.0, mean_value: 12.0, words: 4096 }
    }
}

fn geometric_run(rng: &mut ChaCha8Rng, mean: f64) -> Result<usize> {
    let p = (1.0 / mean.max(1.0)).clamp(1e-9, 1.0);
    let g = Geometric::new(p).map_err(|e| Error::Config(format!("run length: {e}")))?;
    Ok(g.sample(rng) as usize + 1)
}

/// One activation map: alternating zero and non-zero runs with geometric
/// lengths, non-zero magnitudes exponentially distributed.
pub fn synthetic_activation(cfg: &SyntheticConfig, word_length: u32, rng: &mut ChaCha8Rng) -> Result<WordStream> {
    if !(0.0..1.0).contains(&cfg.zero_fraction) {
        return Err(Error::Config(format!("zero fraction {} must be in [0,1)", cfg.zero_fraction)));
    }
    let top = (1u64 << word_length) - 1;
    let mean_nonzero_run = cfg.mean_zero_run * (1.0 - cfg.zero_fraction) / cfg.zero_fraction.max(1e-9);
    let mag = Exp::new(1.0 / cfg.mean_value.max(1.0)).map_err(|e| Error::Config(format!("value distribution: {e}")))?;
    let mut words = Vec::with_capacity(cfg.words);
    let mut zero = rng.gen_bool(cfg.zero_fraction);
    while words.len() < cfg.words {
        let run = if zero && cfg.zero_fraction > 0.0 {
            geometric_run(rng, cfg.mean_zero_run)?
        } else {
            geometric_run(rng, mean_nonzero_run)?
        };
        for _ in 0..run.min(cfg.words - words.len()) {
            let w = if zero && cfg.zero_fraction > 0.0 { 0 } else { (mag.sample(rng) as u64 + 1).min(top) };
            words.push(w);
        }
        zero = !zero;
    }
    WordStream::new(words, word_length)
}

/// Calibration set of `n` activation maps from a fixed seed.
pub fn synthetic_calibration(n: usize, cfg: &SyntheticConfig, word_length: u32, seed: u64) -> Result<Vec<WordStream>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synthetic_activation(cfg, word_length, &mut rng)).collect()
}

/// Quantised weights: a two-sided exponential around zero, stored as
/// two's-complement words.
pub fn synthetic_weights(count: usize, word_length: u32, spread: f64, seed: u64) -> Result<WordStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mag = Exp::new(1.0 / spread.max(1e-3)).map_err(|e| Error::Config(format!("weight distribution: {e}")))?;
    let half = 1i64 << (word_length - 1);
    let mask = (1u64 << word_length) - 1;
    let words = (0..count)
        .map(|_| {
            let m = (mag.sample(&mut rng).round() as i64).min(half - 1);
            let v = if rng.gen_bool(0.5) { m } else { -m };
            (v as u64) & mask
        })
        .collect();
    WordStream::new(words, word_length)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws(words: &[u64], l: u32) -> WordStream {
        WordStream::new(words.to_vec(), l).unwrap()
    }

    #[test]
    fn rle_examples() {
        let s = ws(&[0, 0, 0, 0], 8);
        let b = rle_encode(&s);
        assert_eq!(b.len(), 16);
        assert_eq!(rle_ratio(&s), 16.0 / 32.0);
        assert_eq!(rle_decode(&b, 8).unwrap(), s);

        let s = ws(&[1, 2, 3, 4], 8);
        assert_eq!(rle_token_count(&s), 4);
        assert!(rle_ratio(&s) > 1.0);
        assert_eq!(rle_decode(&rle_encode(&s), 8).unwrap(), s);
    }

    #[test]
    fn rle_splits_long_runs() {
        let s = ws(&vec![7; 600], 16);
        assert_eq!(rle_token_count(&s), 3);
        assert_eq!(rle_decode(&rle_encode(&s), 16).unwrap(), s);
    }

    #[test]
    fn rle_rejects_truncated() {
        let mut b = rle_encode(&ws(&[1, 1, 2], 8));
        b.push(1, 3);
        assert!(rle_decode(&b, 8).is_err());
        let mut z = Bits::new();
        z.push(5, 8);
        z.push(0, 8);
        assert!(rle_decode(&z, 8).is_err());
    }

    #[test]
    fn huffman_examples() {
        let hist: BTreeMap<u64, u64> = [(10, 3), (20, 1)].into();
        let t = huffman_build(&hist, 8).unwrap();
        assert_eq!(t.lengths.values().copied().collect::<Vec<_>>(), vec![1, 1]);
        let s = ws(&[10, 10, 20, 10], 8);
        assert_eq!(huffman_ratio(&s, &t).unwrap(), 1.0 / 8.0);

        let uniform: BTreeMap<u64, u64> = (0..256).map(|s| (s, 5)).collect();
        let t = huffman_build(&uniform, 8).unwrap();
        assert!(t.lengths.values().all(|l| *l == 8));

        let single: BTreeMap<u64, u64> = [(3, 9)].into();
        let t = huffman_build(&single, 8).unwrap();
        let s = ws(&[3, 3, 3], 8);
        let b = huffman_encode(&s, &t).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(huffman_decode(&b, &t).unwrap(), s);

        assert!(huffman_build(&BTreeMap::new(), 8).is_err());
    }

    #[test]
    fn huffman_canonical_prefix_free() {
        let hist: BTreeMap<u64, u64> = [(1, 40), (2, 30), (3, 15), (4, 10), (5, 5)].into();
        let t = huffman_build(&hist, 8).unwrap();
        let codes = t.codes();
        for (i, a) in codes.iter().enumerate() {
            for b in codes.iter().skip(i + 1) {
                let (short, long) = if a.2 <= b.2 { (a, b) } else { (b, a) };
                assert_ne!(long.1 >> (long.2 - short.2), short.1, "{a:?} prefixes {b:?}");
            }
        }
        let kraft: f64 = t.lengths.values().map(|l| 0.5f64.powi(*l as i32)).sum();
        assert!((kraft - 1.0).abs() < 1e-12);
    }

    #[test]
    fn huffman_invalid_bits() {
        let hist: BTreeMap<u64, u64> = [(1, 1)].into();
        let t = huffman_build(&hist, 8).unwrap();
        let mut b = Bits::new();
        b.push(1, 1);
        assert!(huffman_decode(&b, &t).is_err());
    }

    #[test]
    fn estimate_examples() {
        let one = estimate_ratio(&[ws(&[0, 0, 0, 0], 8)], Scheme::Rle).unwrap();
        assert_eq!(one.c_bar, 0.5);
        assert_eq!(one.min, one.max);
        assert!(estimate_ratio(&[], Scheme::Rle).is_err());
        let none = estimate_ratio(&[ws(&[1, 2], 8)], Scheme::None).unwrap();
        assert_eq!(none.c_bar, 1.0);
    }

    #[test]
    fn overhead_is_linear() {
        let c = CostTable::default();
        assert_eq!(codec_overhead(Scheme::Rle, 0, &c), ResourceVector::default());
        assert_eq!(codec_overhead(Scheme::Huffman, 2, &c), codec_overhead(Scheme::Huffman, 1, &c).scale(2));
        assert_eq!(codec_overhead(Scheme::None, 7, &c), ResourceVector::default());
    }

    #[test]
    fn raw_roundtrip() {
        let s = ws(&[1, 65535, 0, 300], 16);
        let mut buf = Vec::new();
        write_raw_to(&mut buf, &s).unwrap();
        assert_eq!(buf.len(), 16 + 8);
        assert_eq!(read_raw_from(&mut buf.as_slice()).unwrap(), s);
        buf[0] = b'X';
        assert!(read_raw_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn synthetic_is_seeded_and_sparse() {
        let cfg = SyntheticConfig { words: 20000, ..Default::default() };
        let a = synthetic_calibration(2, &cfg, 8, 7).unwrap();
        let b = synthetic_calibration(2, &cfg, 8, 7).unwrap();
        assert_eq!(a, b);
        let zeros = a[0].words.iter().filter(|w| **w == 0).count() as f64 / 20000.0;
        assert!((zeros - 0.6).abs() < 0.05, "zero fraction {zeros}");
        let w = synthetic_weights(1000, 8, 6.0, 1).unwrap();
        assert!(w.words.iter().all(|x| *x < 256));
    }
}
