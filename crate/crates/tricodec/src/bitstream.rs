//! The `.tri` serialization format: a fixed 9-byte raw header followed by a
//! single rANS payload holding, in decode order, the color-table channel
//! deltas, the entry frequencies, the grid occupancy map, and the per-vertex
//! color indices. See FORMAT.md for the byte-level layout.

use crate::entropy::{
    binomial_truncated, geometric_delta_table, occupancy_model, EntropyError, FreqTable,
    MessageDecoder, MessageEncoder,
};
use crate::model::{ColorEntry, ColorTable, GridSpec, ModelError, TriModel, VertexSet};
use num_bigint::BigUint;
use thiserror::Error;

pub const FORMAT_VERSION: u8 = 1;

/// Fixed raw header size in bytes (69 bits padded).
pub const HEADER_BYTES: usize = 9;

#[derive(Debug, Error)]
pub enum BitstreamError {
    #[error("invalid model: {0}")]
    InvalidModel(#[from] ModelError),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("file too short: {0} bytes")]
    TooShort(usize),
    #[error("inconsistent header: {0}")]
    BadHeader(String),
    #[error("corrupt payload: {0}")]
    Corrupt(#[from] EntropyError),
    #[error("corrupt payload: {0}")]
    Inconsistent(String),
}

struct BitWriter {
    bytes: Vec<u8>,
    bitpos: usize,
}

impl BitWriter {
    fn new() -> BitWriter {
        BitWriter { bytes: Vec::new(), bitpos: 0 }
    }

    fn put(&mut self, value: u32, bits: u32) {
        for i in (0..bits).rev() {
            if self.bitpos % 8 == 0 {
                self.bytes.push(0);
            }
            let bit = (value >> i) & 1;
            let byte = self.bytes.last_mut().unwrap();
            *byte |= (bit as u8) << (7 - (self.bitpos % 8));
            self.bitpos += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bitpos: usize,
}

impl<'a> BitReader<'a> {
    fn get(&mut self, bits: u32) -> u32 {
        let mut v = 0u32;
        for _ in 0..bits {
            let byte = self.bytes[self.bitpos / 8];
            let bit = (byte >> (7 - (self.bitpos % 8))) & 1;
            v = (v << 1) | bit as u32;
            self.bitpos += 1;
        }
        v
    }
}

/// Decoded raw header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u8,
    pub g: u32,
    pub width: u32,
    pub height: u32,
    pub colors: usize,
    pub vertex_count: usize,
    pub delta_params: [u8; 3],
}

fn write_header(h: &Header) -> [u8; HEADER_BYTES] {
    let mut w = BitWriter::new();
    w.put(h.version as u32, 4);
    w.put(h.g, 8);
    w.put(h.width, 12);
    w.put(h.height, 12);
    w.put(h.colors as u32 - 1, 5);
    w.put(h.vertex_count as u32, 16);
    for p in h.delta_params {
        w.put(p as u32, 4);
    }
    let mut out = [0u8; HEADER_BYTES];
    out[..w.bytes.len()].copy_from_slice(&w.bytes);
    out
}

fn read_header(bytes: &[u8]) -> Result<Header, BitstreamError> {
    if bytes.len() < HEADER_BYTES {
        return Err(BitstreamError::TooShort(bytes.len()));
    }
    let mut r = BitReader { bytes, bitpos: 0 };
    let version = r.get(4) as u8;
    if version != FORMAT_VERSION {
        return Err(BitstreamError::UnsupportedVersion(version));
    }
    let g = r.get(8);
    let width = r.get(12);
    let height = r.get(12);
    let colors = r.get(5) as usize + 1;
    let vertex_count = r.get(16) as usize;
    let delta_params = [r.get(4) as u8, r.get(4) as u8, r.get(4) as u8];
    if !(2..=255).contains(&g) {
        return Err(BitstreamError::BadHeader(format!("grid dimension {g}")));
    }
    if width < 2 || height < 2 {
        return Err(BitstreamError::BadHeader(format!("image size {width}x{height}")));
    }
    let n_g = g as usize * g as usize;
    if vertex_count < 4 || vertex_count > n_g {
        return Err(BitstreamError::BadHeader(format!(
            "vertex count {vertex_count} outside 4..={n_g}"
        )));
    }
    Ok(Header { version, g, width, height, colors, vertex_count, delta_params })
}

/// Prediction for the next channel value: mid-gray for the first entry, then
/// the rounded (half-up) mean of the previously transmitted values.
fn predict(prev: &[u8]) -> i32 {
    if prev.is_empty() {
        32
    } else {
        let sum: u32 = prev.iter().map(|&v| v as u32).sum();
        let n = prev.len() as u32;
        ((2 * sum + n) / (2 * n)) as i32
    }
}

/// Per-channel delta symbols (value - prediction, offset by 63).
fn delta_symbols(values: &[u8]) -> Vec<u16> {
    let mut prev: Vec<u8> = Vec::new();
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let d = v as i32 - predict(&prev);
        out.push((d + 63) as u16);
        prev.push(v);
    }
    out
}

/// Choose the 4-bit geometric sharpness parameter that minimizes the coded
/// cost of the symbols. Cost comparison is exact: the parameter maximizing
/// the product of quantized counts wins, ties to the smaller parameter.
fn best_delta_param(symbols: &[u16]) -> u8 {
    let mut best = 0u8;
    let mut best_score: Option<BigUint> = None;
    for p in 0..16u8 {
        let table = geometric_delta_table(p);
        let mut score = BigUint::from(1u32);
        for &s in symbols {
            score *= BigUint::from(table.count(s as usize));
        }
        if best_score.as_ref().map_or(true, |b| score > *b) {
            best_score = Some(score);
            best = p;
        }
    }
    best
}

/// Truncated-binomial support bounds for frequency entry `k`, given the
/// remaining vertex count, remaining entry count and the previous frequency.
fn freq_support(v_rem: u64, c_rem: u64, prev_freq: Option<u64>) -> (u64, u64) {
    let lo = v_rem.div_ceil(c_rem);
    let hi = prev_freq.map_or(v_rem, |p| p.min(v_rem));
    (lo, hi)
}

/// Model for a frequency value over [lo, hi]. Supports wider than the coder
/// precision (only reachable at extreme vertex counts) fall back to a
/// two-part uniform code; `None` marks that escape.
fn freq_table(v_rem: u64, c_rem: u64, lo: u64, hi: u64) -> Result<Option<FreqTable>, EntropyError> {
    if hi - lo + 1 > 4096 {
        return Ok(None);
    }
    Ok(Some(binomial_truncated(v_rem, 1, c_rem, lo, hi)?))
}

const ESCAPE_CHUNK: u64 = 64;

/// The candidate-chain context for color index coding; shared verbatim by
/// encoder and decoder so the model sequences match.
struct ChainContext {
    rem: Vec<u64>,
    /// grid (col, row) coordinates of earlier vertices, per color
    positions: Vec<Vec<(i64, i64)>>,
}

impl ChainContext {
    fn new(table: &ColorTable) -> ChainContext {
        ChainContext {
            rem: table.entries.iter().map(|e| e.freq as u64).collect(),
            positions: vec![Vec::new(); table.entries.len()],
        }
    }

    /// Candidate color order for a vertex at grid coordinate (i, j):
    /// previously-seen colors by ascending minimum Manhattan distance, then
    /// unseen colors; ties broken by higher remaining count, then lower
    /// table index. Colors with no remaining uses are excluded.
    fn candidates(&self, i: i64, j: i64) -> Vec<usize> {
        let mut seen: Vec<(i64, u64, usize)> = Vec::new();
        let mut unseen: Vec<(u64, usize)> = Vec::new();
        for (c, &r) in self.rem.iter().enumerate() {
            if r == 0 {
                continue;
            }
            if self.positions[c].is_empty() {
                unseen.push((r, c));
            } else {
                let d = self.positions[c]
                    .iter()
                    .map(|&(pi, pj)| (pi - i).abs() + (pj - j).abs())
                    .min()
                    .unwrap();
                seen.push((d, r, c));
            }
        }
        seen.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        unseen.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        seen.iter().map(|&(_, _, c)| c).chain(unseen.iter().map(|&(_, c)| c)).collect()
    }

    fn commit(&mut self, color: usize, i: i64, j: i64) {
        self.rem[color] -= 1;
        self.positions[color].push((i, j));
    }

    fn total_rem(&self) -> u64 {
        self.rem.iter().sum()
    }
}

/// Encode a model to bytes. Deterministic; the reported length is the exact
/// file size used by the search objective.
pub fn encode(model: &TriModel) -> Result<Vec<u8>, BitstreamError> {
    model.validate()?;
    let table = &model.colors;
    let grid = &model.grid;
    let n_colors = table.len();
    let v_t = model.vertex_count();

    let ys: Vec<u8> = table.entries.iter().map(|e| e.y).collect();
    let cos: Vec<u8> = table.entries.iter().map(|e| e.co).collect();
    let cgs: Vec<u8> = table.entries.iter().map(|e| e.cg).collect();
    let syms = [delta_symbols(&ys), delta_symbols(&cos), delta_symbols(&cgs)];
    let params = [
        best_delta_param(&syms[0]),
        best_delta_param(&syms[1]),
        best_delta_param(&syms[2]),
    ];

    let header = Header {
        version: FORMAT_VERSION,
        g: grid.g(),
        width: grid.width(),
        height: grid.height(),
        colors: n_colors,
        vertex_count: v_t,
        delta_params: params,
    };

    let mut enc = MessageEncoder::new();

    // 1. color channel deltas, entry-major: (y, co, cg) per entry
    let delta_tables: Vec<FreqTable> =
        params.iter().map(|&p| geometric_delta_table(p).clone()).collect();
    for k in 0..n_colors {
        for ch in 0..3 {
            enc.put(syms[ch][k], delta_tables[ch].clone())?;
        }
    }

    // 2. entry frequencies, all but the last (implied)
    let mut v_rem = v_t as u64;
    for k in 0..n_colors.saturating_sub(1) {
        let c_rem = (n_colors - k) as u64;
        let prev = if k == 0 { None } else { Some(table.entries[k - 1].freq as u64) };
        let (lo, hi) = freq_support(v_rem, c_rem, prev);
        let f = table.entries[k].freq as u64;
        debug_assert!((lo..=hi).contains(&f), "sorted table frequency outside support");
        match freq_table(v_rem, c_rem, lo, hi)? {
            Some(t) => enc.put((f - lo) as u16, t)?,
            None => {
                let span = hi - lo + 1;
                let q = f - lo;
                let coarse = span.div_ceil(ESCAPE_CHUNK) as usize;
                enc.put((q / ESCAPE_CHUNK) as u16, FreqTable::uniform(coarse)?)?;
                enc.put((q % ESCAPE_CHUNK) as u16, FreqTable::uniform(ESCAPE_CHUNK as usize)?)?;
            }
        }
        v_rem -= f;
    }

    // 3. occupancy, row-major, corners skipped (known occupied)
    let corners = grid.corner_indices();
    let mut v_r = (v_t - 4) as u64;
    let mut n_r = (grid.point_count() - 4) as u64;
    for (idx, &occ) in model.vertices.occupancy.iter().enumerate() {
        if corners.contains(&idx) {
            continue;
        }
        enc.put(occ as u16, occupancy_model(v_r, n_r)?)?;
        n_r -= 1;
        if occ {
            v_r -= 1;
        }
    }

    // 4. color indices as boolean chains, vertices in row-major order
    let mut ctx = ChainContext::new(table);
    let g = grid.g() as i64;
    let mut vpos = 0usize;
    for (idx, &occ) in model.vertices.occupancy.iter().enumerate() {
        if !occ {
            continue;
        }
        let (i, j) = (idx as i64 % g, idx as i64 / g);
        let color = model.vertices.color_index[vpos] as usize;
        vpos += 1;
        let cands = ctx.candidates(i, j);
        let mut denom = ctx.total_rem();
        for (k, &c) in cands.iter().enumerate() {
            if k + 1 == cands.len() {
                debug_assert_eq!(c, color, "last candidate is implied");
                break;
            }
            let hit = c == color;
            enc.put(hit as u16, FreqTable::boolean(ctx.rem[c], denom)?)?;
            if hit {
                break;
            }
            denom -= ctx.rem[c];
        }
        ctx.commit(color, i, j);
    }

    let mut out = Vec::with_capacity(HEADER_BYTES + 64);
    out.extend_from_slice(&write_header(&header));
    out.extend_from_slice(&enc.finish());
    Ok(out)
}

/// Exact encoded size in bytes; the budget and objective both use this.
pub fn encoded_size(model: &TriModel) -> Result<usize, BitstreamError> {
    Ok(encode(model)?.len())
}

/// Decode bytes back into a model. Adversarial input yields a structured
/// error, never a panic or unbounded read.
pub fn decode(bytes: &[u8]) -> Result<TriModel, BitstreamError> {
    let header = read_header(bytes)?;
    let grid = GridSpec::new(header.g, header.width, header.height)
        .map_err(|e| BitstreamError::BadHeader(e.to_string()))?;
    let n_colors = header.colors;
    let v_t = header.vertex_count;
    let mut dec = MessageDecoder::new(&bytes[HEADER_BYTES..])?;

    // 1. color channel deltas
    let delta_tables: Vec<FreqTable> = header
        .delta_params
        .iter()
        .map(|&p| geometric_delta_table(p).clone())
        .collect();
    let mut channels: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..n_colors {
        for ch in 0..3 {
            let sym = dec.decode(&delta_tables[ch])? as i32;
            let v = predict(&channels[ch]) + (sym - 63);
            if !(0..=63).contains(&v) {
                return Err(BitstreamError::Inconsistent(format!(
                    "channel value {v} outside 0..=63"
                )));
            }
            channels[ch].push(v as u8);
        }
    }

    // 2. entry frequencies
    let mut freqs: Vec<u64> = Vec::with_capacity(n_colors);
    let mut v_rem = v_t as u64;
    for k in 0..n_colors.saturating_sub(1) {
        let c_rem = (n_colors - k) as u64;
        let prev = if k == 0 { None } else { Some(freqs[k - 1]) };
        let (lo, hi) = freq_support(v_rem, c_rem, prev);
        if lo > hi {
            return Err(BitstreamError::Inconsistent(format!(
                "empty frequency support at entry {k}"
            )));
        }
        let f = match freq_table(v_rem, c_rem, lo, hi)? {
            Some(t) => lo + dec.decode(&t)? as u64,
            None => {
                let span = hi - lo + 1;
                let coarse = span.div_ceil(ESCAPE_CHUNK) as usize;
                let q_hi = dec.decode(&FreqTable::uniform(coarse)?)? as u64;
                let q_lo = dec.decode(&FreqTable::uniform(ESCAPE_CHUNK as usize)?)? as u64;
                let q = q_hi * ESCAPE_CHUNK + q_lo;
                if q >= span {
                    return Err(BitstreamError::Inconsistent(format!(
                        "escaped frequency {q} outside span {span}"
                    )));
                }
                lo + q
            }
        };
        freqs.push(f);
        v_rem -= f;
    }
    freqs.push(v_rem); // last frequency implied
    for w in freqs.windows(2) {
        if w[0] < w[1] {
            return Err(BitstreamError::Inconsistent(
                "decoded frequencies not sorted".into(),
            ));
        }
    }

    let entries: Vec<ColorEntry> = (0..n_colors)
        .map(|k| ColorEntry {
            y: channels[0][k],
            co: channels[1][k],
            cg: channels[2][k],
            freq: freqs[k] as u32,
        })
        .collect();
    let table = ColorTable { entries };

    // 3. occupancy
    let corners = grid.corner_indices();
    let n_g = grid.point_count();
    let mut occupancy = vec![false; n_g];
    let mut v_r = (v_t - 4) as u64;
    let mut n_r = (n_g - 4) as u64;
    for (idx, slot) in occupancy.iter_mut().enumerate() {
        if corners.contains(&idx) {
            *slot = true;
            continue;
        }
        let occ = dec.decode(&occupancy_model(v_r, n_r)?)? == 1;
        *slot = occ;
        n_r -= 1;
        if occ {
            v_r -= 1;
        }
    }
    debug_assert_eq!(v_r, 0);

    // 4. color indices
    let mut ctx = ChainContext::new(&table);
    let g = grid.g() as i64;
    let mut color_index = Vec::with_capacity(v_t);
    for (idx, &occ) in occupancy.iter().enumerate() {
        if !occ {
            continue;
        }
        let (i, j) = (idx as i64 % g, idx as i64 / g);
        let cands = ctx.candidates(i, j);
        if cands.is_empty() {
            return Err(BitstreamError::Inconsistent("no color candidates left".into()));
        }
        let mut denom = ctx.total_rem();
        let mut chosen = *cands.last().unwrap();
        for (k, &c) in cands.iter().enumerate() {
            if k + 1 == cands.len() {
                break;
            }
            if dec.decode(&FreqTable::boolean(ctx.rem[c], denom)?)? == 1 {
                chosen = c;
                break;
            }
            denom -= ctx.rem[c];
        }
        ctx.commit(chosen, i, j);
        color_index.push(chosen as u8);
    }

    dec.finish()?;

    let model = TriModel {
        grid,
        vertices: VertexSet { occupancy, color_index },
        colors: table,
    };
    model.validate()?;
    Ok(model)
}
