//! Frame token stacks, pooled per-frame descriptors, and their binary files.
//!
//! Two little-endian formats are supported:
//!
//! ```text
//! SVGT: "SVGT" | u32 version=1 | u32 N | u32 P | u32 C | u8 dtype=0 | N*P*C f32
//! SVGD: "SVGD" | u32 version=1 | u32 N | u32 C         | u8 dtype=0 | N*C f32
//! ```
//!
//! Token payloads are frame-major, token-major, channel-minor. Descriptor
//! payloads are row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TOKENS_MAGIC: [u8; 4] = *b"SVGT";
pub const DESCRIPTORS_MAGIC: [u8; 4] = *b"SVGD";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

/// Upper bound on the element count a header may declare.
pub const MAX_ELEMENTS: u64 = 1 << 40;

const TOKENS_HEADER_LEN: usize = 4 + 4 * 4 + 1;
const DESCRIPTORS_HEADER_LEN: usize = 4 + 3 * 4 + 1;

/// Patch tokens for every frame of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStack {
    num_frames: usize,
    tokens_per_frame: usize,
    channels: usize,
    data: Vec<f32>,
}

impl TokenStack {
    pub fn new(
        num_frames: usize,
        tokens_per_frame: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        check_dim("num_frames", num_frames)?;
        check_dim("tokens_per_frame", tokens_per_frame)?;
        check_dim("channels", channels)?;
        let expected = element_count(&[num_frames, tokens_per_frame, channels])?;
        if data.len() != expected {
            return Err(Error::format(
                "payload",
                format!("expected {expected} values, got {}", data.len()),
            ));
        }
        check_finite(&data, tokens_per_frame * channels)?;
        Ok(Self {
            num_frames,
            tokens_per_frame,
            channels,
            data,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// All tokens of one frame, `tokens_per_frame * channels` values.
    pub fn frame(&self, s: usize) -> &[f32] {
        let w = self.tokens_per_frame * self.channels;
        &self.data[s * w..(s + 1) * w]
    }
}

/// One pooled C-dimensional descriptor per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    num_frames: usize,
    channels: usize,
    data: Vec<f32>,
}

impl DescriptorSet {
    pub fn new(num_frames: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dim("num_frames", num_frames)?;
        check_dim("channels", channels)?;
        let expected = element_count(&[num_frames, channels])?;
        if data.len() != expected {
            return Err(Error::format(
                "payload",
                format!("expected {expected} values, got {}", data.len()),
            ));
        }
        check_finite(&data, channels)?;
        Ok(Self {
            num_frames,
            channels,
            data,
        })
    }

    /// Builds a set from equal-length rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::format("channels", "rows have differing lengths"));
        }
        Self::new(rows.len(), channels, rows.concat())
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, s: usize) -> &[f32] {
        &self.data[s * self.channels..(s + 1) * self.channels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.channels)
    }
}

/// Averages each frame's patch tokens into a single descriptor.
///
/// Sums accumulate in f64; the result is stored as f32.
pub fn pool_descriptors(stack: &TokenStack) -> Result<DescriptorSet> {
    let (p, c) = (stack.tokens_per_frame, stack.channels);
    let mut out = Vec::with_capacity(stack.num_frames * c);
    let mut acc = vec![0.0f64; c];
    for s in 0..stack.num_frames {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for token in stack.frame(s).chunks_exact(c) {
            for (a, &x) in acc.iter_mut().zip(token) {
                *a += f64::from(x);
            }
        }
        out.extend(acc.iter().map(|&a| (a / p as f64) as f32));
    }
    DescriptorSet::new(stack.num_frames, c, out)
}

pub fn encode_tokens(stack: &TokenStack) -> Vec<u8> {
    let mut buf = Vec::with_capacity(TOKENS_HEADER_LEN + stack.data.len() * 4);
    buf.extend_from_slice(&TOKENS_MAGIC);
    for v in [
        FORMAT_VERSION,
        stack.num_frames as u32,
        stack.tokens_per_frame as u32,
        stack.channels as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(DTYPE_F32);
    write_payload(&mut buf, &stack.data);
    buf
}

pub fn decode_tokens(bytes: &[u8]) -> Result<TokenStack> {
    let mut r = HeaderReader::new(bytes);
    r.magic(&TOKENS_MAGIC, TOKENS_HEADER_LEN)?;
    r.version()?;
    let n = r.dim("num_frames")?;
    let p = r.dim("tokens_per_frame")?;
    let c = r.dim("channels")?;
    r.dtype()?;
    let count = element_count(&[n, p, c])?;
    let data = read_payload(&bytes[TOKENS_HEADER_LEN..], count)?;
    TokenStack::new(n, p, c, data)
}

pub fn encode_descriptors(set: &DescriptorSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(DESCRIPTORS_HEADER_LEN + set.data.len() * 4);
    buf.extend_from_slice(&DESCRIPTORS_MAGIC);
    for v in [FORMAT_VERSION, set.num_frames as u32, set.channels as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(DTYPE_F32);
    write_payload(&mut buf, &set.data);
    buf
}

pub fn decode_descriptors(bytes: &[u8]) -> Result<DescriptorSet> {
    let mut r = HeaderReader::new(bytes);
    r.magic(&DESCRIPTORS_MAGIC, DESCRIPTORS_HEADER_LEN)?;
    r.version()?;
    let n = r.dim("num_frames")?;
    let c = r.dim("channels")?;
    r.dtype()?;
    let count = element_count(&[n, c])?;
    let data = read_payload(&bytes[DESCRIPTORS_HEADER_LEN..], count)?;
    DescriptorSet::new(n, c, data)
}

pub fn save_tokens(stack: &TokenStack, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_tokens(stack))?;
    Ok(())
}

pub fn load_tokens(path: impl AsRef<Path>) -> Result<TokenStack> {
    decode_tokens(&fs::read(path)?)
}

pub fn save_descriptors(set: &DescriptorSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_descriptors(set))?;
    Ok(())
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    decode_descriptors(&fs::read(path)?)
}

/// Loads an SVGD file directly, or an SVGT file followed by pooling.
pub fn load_frame_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    let bytes = fs::read(path)?;
    match bytes.get(..4) {
        Some(m) if m == TOKENS_MAGIC => pool_descriptors(&decode_tokens(&bytes)?),
        Some(m) if m == DESCRIPTORS_MAGIC => decode_descriptors(&bytes),
        _ => Err(Error::format("magic", "expected SVGT or SVGD")),
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Checks the magic, then that the full header is present.
    fn magic(&mut self, expected: &[u8; 4], header_len: usize) -> Result<()> {
        let got = self.bytes.get(..4).unwrap_or(self.bytes);
        if got != expected {
            return Err(Error::format(
                "magic",
                format!(
                    "expected {:?}, got {:02x?}",
                    String::from_utf8_lossy(expected),
                    got
                ),
            ));
        }
        if self.bytes.len() < header_len {
            return Err(Error::format(
                "header",
                format!("need {header_len} bytes, got {}", self.bytes.len()),
            ));
        }
        self.pos = 4;
        Ok(())
    }

    fn u32(&mut self) -> u32 {
        let b: [u8; 4] = self.bytes[self.pos..self.pos + 4].try_into().unwrap();
        self.pos += 4;
        u32::from_le_bytes(b)
    }

    fn version(&mut self) -> Result<()> {
        match self.u32() {
            FORMAT_VERSION => Ok(()),
            v => Err(Error::format("version", format!("unsupported version {v}"))),
        }
    }

    fn dim(&mut self, field: &'static str) -> Result<usize> {
        let v = self.u32() as usize;
        check_dim(field, v)?;
        Ok(v)
    }

    fn dtype(&mut self) -> Result<()> {
        let d = self.bytes[self.pos];
        self.pos += 1;
        if d != DTYPE_F32 {
            return Err(Error::format("dtype", format!("unsupported dtype {d}")));
        }
        Ok(())
    }
}

fn check_dim(field: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::format(field, "must be at least 1"));
    }
    if v > u32::MAX as usize {
        return Err(Error::format(field, "exceeds u32 range"));
    }
    Ok(())
}

fn element_count(dims: &[usize]) -> Result<usize> {
    let total = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .filter(|&t| t <= MAX_ELEMENTS)
        .ok_or_else(|| {
            Error::format(
                "dimensions",
                format!("element count {dims:?} exceeds 2^40 guard"),
            )
        })?;
    usize::try_from(total).map_err(|_| Error::format("dimensions", "exceeds address space"))
}

fn check_finite(data: &[f32], row_width: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            frame: i / row_width,
            index: i % row_width,
        }),
        None => Ok(()),
    }
}

fn write_payload(buf: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_payload(bytes: &[u8], count: usize) -> Result<Vec<f32>> {
    let need = count as u64 * 4;
    if (bytes.len() as u64) < need {
        return Err(Error::format(
            "payload",
            format!(
                "truncated: expected {count} f32 values, found {} bytes",
                bytes.len()
            ),
        ));
    }
    if bytes.len() as u64 > need {
        return Err(Error::format(
            "payload",
            format!("{} trailing bytes after payload", bytes.len() as u64 - need),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}
