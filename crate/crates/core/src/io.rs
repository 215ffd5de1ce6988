//! On-disk formats: feature matrices, labels, pairs, code files and model
//! checkpoints.
//!
//! Binary containers are little-endian. Every writer is a pure function of
//! its input, so writing the same value twice gives identical bytes and
//! `write(read(bytes)) == bytes` for any valid file.
//!
//! ```text
//! features    b"SPHF" u32 version, u64 rows, u64 cols, rows*cols f32 row-major
//! codes       b"SPHK" u32 version, u32 m, u64 n, n * ceil(m/4) packed bytes
//! checkpoint  b"SPHC" u32 version, u8 method, 3 zero bytes,
//!             u64 n, u64 m, u64 T, f64 beta, then row-major f64 blocks:
//!               sparsehash  W (m x n), S (m x m), tau (m)
//!               nnhash,     P (m x n), a (m)          (T is 0)
//!               diffhash
//! ```

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::LinearHashParams;
use crate::codes::TernaryCode;
use crate::data::{FeatureMatrix, Labels, PairSample, Similarity};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::multimodal::{MultimodalPair, PairKind};

const FEATURES_MAGIC: &[u8; 4] = b"SPHF";
const CODES_MAGIC: &[u8; 4] = b"SPHK";
const CHECKPOINT_MAGIC: &[u8; 4] = b"SPHC";
const VERSION: u32 = 1;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, what }
    }

    pub(crate) fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < k {
            return Err(Error::Format(format!("unexpected end of {}", self.what)));
        }
        let (head, tail) = self.bytes.split_at(k);
        self.bytes = tail;
        Ok(head)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len()
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("trailing bytes after {}", self.what)))
        }
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("not a {} file", self.what)));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported {} version {version}", self.what)));
        }
        Ok(())
    }

    /// Reads a `u64` count that must fit `width`-byte items in what remains.
    fn count(&mut self, width: usize) -> Result<usize> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::Format("count overflows".into()))?;
        if n.checked_mul(width).is_none_or(|b| b > self.remaining()) {
            return Err(Error::Format(format!("truncated {}", self.what)));
        }
        Ok(n)
    }
}

/// Binary feature container. Values are stored as `f32`.
pub fn write_features(data: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + data.as_slice().len() * 4);
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(data.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(data.cols() as u64).to_le_bytes());
    for &v in data.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut rd = Reader::new(bytes, "feature file");
    rd.header(FEATURES_MAGIC)?;
    let rows = usize::try_from(rd.u64()?).map_err(|_| Error::Format("row count overflows".into()))?;
    let cols = usize::try_from(rd.u64()?).map_err(|_| Error::Format("column count overflows".into()))?;
    let len = rows
        .checked_mul(cols)
        .filter(|l| l.checked_mul(4).is_some_and(|b| b == rd.remaining()))
        .ok_or_else(|| Error::Format("feature payload does not match its header".into()))?;
    let data: Vec<f64> = rd
        .take(len * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("feature file holds a non-finite value".into()));
    }
    FeatureMatrix::new(rows, cols, data)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses comma- or whitespace-separated rows of numbers.
pub fn features_from_csv(text: &str) -> Result<FeatureMatrix> {
    let mut rows = Vec::new();
    for (no, line) in content_lines(text) {
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Format(format!("line {no}: bad number {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("feature rows"));
    }
    FeatureMatrix::from_rows(&rows)
}

/// One line per item holding its labels separated by whitespace.
pub fn parse_labels(text: &str) -> Result<Labels> {
    let mut labels = Vec::new();
    for (no, line) in content_lines(text) {
        let l = line
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| Error::Format(format!("line {no}: bad label {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        labels.push(l);
    }
    Ok(Labels::new(labels))
}

pub fn format_labels(labels: &Labels) -> String {
    let mut out = String::new();
    for i in 0..labels.len() {
        let strs: Vec<String> = labels.of(i).iter().map(u32::to_string).collect();
        out.push_str(&strs.join(" "));
        out.push('\n');
    }
    out
}

fn parse_index(t: &str, no: usize) -> Result<usize> {
    t.parse().map_err(|_| Error::Format(format!("line {no}: bad index {t:?}")))
}

fn parse_similarity(t: &str, no: usize) -> Result<Similarity> {
    t.parse::<i64>()
        .map_err(|_| Error::Format(format!("line {no}: bad label {t:?}")))
        .and_then(|v| Similarity::from_label(v).map_err(|e| Error::Format(format!("line {no}: {e}"))))
}

/// `a b s` per line; `s` is 1 for similar and 0 or -1 for dissimilar.
pub fn parse_pairs(text: &str) -> Result<Vec<PairSample>> {
    content_lines(text)
        .map(|(no, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Format(format!("line {no}: expected `a b s`")));
            }
            PairSample::new(parse_index(f[0], no)?, parse_index(f[1], no)?, parse_similarity(f[2], no)?)
                .map_err(|e| Error::Format(format!("line {no}: {e}")))
        })
        .collect()
}

pub fn format_pairs(pairs: &[PairSample]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{} {} {}", p.a, p.b, u8::from(p.s.is_similar()));
    }
    out
}

/// `kind a b s` per line with `kind` one of `xx`, `yy`, `xy`.
pub fn parse_multimodal_pairs(text: &str) -> Result<Vec<MultimodalPair>> {
    content_lines(text)
        .map(|(no, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Format(format!("line {no}: expected `kind a b s`")));
            }
            let kind: PairKind = f[0].parse().map_err(|e| Error::Format(format!("line {no}: {e}")))?;
            let (a, b) = (parse_index(f[1], no)?, parse_index(f[2], no)?);
            if kind != PairKind::XY && a == b {
                return Err(Error::Format(format!("line {no}: pair joins item {a} with itself")));
            }
            Ok(MultimodalPair::new(kind, a, b, parse_similarity(f[3], no)?))
        })
        .collect()
}

pub fn format_multimodal_pairs(pairs: &[MultimodalPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{} {} {} {}", p.kind, p.a, p.b, u8::from(p.s.is_similar()));
    }
    out
}

pub fn write_codes(codes: &[TernaryCode]) -> Result<Vec<u8>> {
    let m = codes.first().map_or(0, TernaryCode::len);
    let mut out = Vec::with_capacity(20 + codes.len() * m.div_ceil(4));
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(codes.len() as u64).to_le_bytes());
    for c in codes {
        crate::error::check_len(m, c.len())?;
        out.extend_from_slice(&c.to_packed_bytes());
    }
    Ok(out)
}

pub fn read_codes(bytes: &[u8]) -> Result<Vec<TernaryCode>> {
    let mut rd = Reader::new(bytes, "code file");
    rd.header(CODES_MAGIC)?;
    let m = rd.u32()? as usize;
    let width = m.div_ceil(4);
    let n = rd.count(width.max(1))?;
    if m == 0 && n > 0 {
        return Err(Error::Format("zero-length codes".into()));
    }
    let codes = (0..n)
        .map(|_| TernaryCode::from_packed_bytes(rd.take(width)?, m))
        .collect::<Result<Vec<_>>>()?;
    rd.finish()?;
    Ok(codes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodTag {
    SparseHash,
    NnHash,
    DiffHash,
}

impl MethodTag {
    fn byte(self) -> u8 {
        match self {
            MethodTag::SparseHash => 0,
            MethodTag::NnHash => 1,
            MethodTag::DiffHash => 2,
        }
    }
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MethodTag::SparseHash => "sparsehash",
            MethodTag::NnHash => "nnhash",
            MethodTag::DiffHash => "diffhash",
        })
    }
}

/// A trained hash function of any method.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Encoder(EncoderParams),
    Linear(MethodTag, LinearHashParams),
}

impl Model {
    pub fn method(&self) -> MethodTag {
        match self {
            Model::Encoder(_) => MethodTag::SparseHash,
            Model::Linear(tag, _) => *tag,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Encoder(p) => p.input_dim(),
            Model::Linear(_, p) => p.input_dim(),
        }
    }

    pub fn code_len(&self) -> usize {
        match self {
            Model::Encoder(p) => p.code_len(),
            Model::Linear(_, p) => p.code_len(),
        }
    }

    pub fn encode_all(&self, data: &FeatureMatrix, threshold: f64) -> Result<Vec<TernaryCode>> {
        match self {
            Model::Encoder(p) => p.encode_all(data, threshold),
            Model::Linear(_, p) => p.encode_all(data, threshold),
        }
    }
}

fn push_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in m.row_iter() {
        for v in r.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_matrix(rd: &mut Reader<'_>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let vals = (0..rows * cols).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

fn read_vector(rd: &mut Reader<'_>, len: usize) -> Result<DVector<f64>> {
    Ok(DVector::from_vec((0..len).map(|_| rd.f64()).collect::<Result<_>>()?))
}

pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let (n, m) = (model.input_dim(), model.code_len());
    let (iterations, beta) = match model {
        Model::Encoder(p) => (p.iterations, p.beta),
        Model::Linear(_, p) => (0, p.beta),
    };
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.method().byte());
    out.extend_from_slice(&[0; 3]);
    for v in [n, m, iterations] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&beta.to_le_bytes());
    match model {
        Model::Encoder(p) => {
            push_matrix(&mut out, &p.w);
            push_matrix(&mut out, &p.s);
            p.tau.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        Model::Linear(_, p) => {
            push_matrix(&mut out, &p.p);
            p.a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut rd = Reader::new(bytes, "checkpoint");
    rd.header(CHECKPOINT_MAGIC)?;
    let tag = match rd.take(4)?[0] {
        0 => MethodTag::SparseHash,
        1 => MethodTag::NnHash,
        2 => MethodTag::DiffHash,
        other => return Err(Error::Format(format!("unknown method tag {other}"))),
    };
    let dim = |v: u64| usize::try_from(v).map_err(|_| Error::Format("dimension overflows".into()));
    let n = dim(rd.u64()?)?;
    let m = dim(rd.u64()?)?;
    let iterations = dim(rd.u64()?)?;
    let beta = rd.f64()?;
    let floats = match tag {
        MethodTag::SparseHash => m.checked_mul(n).and_then(|a| m.checked_mul(m + 1).and_then(|b| a.checked_add(b))),
        _ => m.checked_mul(n + 1),
    };
    if floats.and_then(|f| f.checked_mul(8)) != Some(rd.remaining()) {
        return Err(Error::Format("checkpoint payload does not match its header".into()));
    }
    let invalid = |e: Error| Error::Format(format!("invalid checkpoint parameters: {e}"));
    let model = match tag {
        MethodTag::SparseHash => {
            let w = read_matrix(&mut rd, m, n)?;
            let s = read_matrix(&mut rd, m, m)?;
            let tau = read_vector(&mut rd, m)?;
            Model::Encoder(EncoderParams::new(w, s, tau, beta, iterations).map_err(invalid)?)
        }
        _ => {
            if iterations != 0 {
                return Err(Error::Format("linear checkpoint with nonzero T".into()));
            }
            let p = read_matrix(&mut rd, m, n)?;
            let a = read_vector(&mut rd, m)?;
            Model::Linear(tag, LinearHashParams::new(p, a, beta).map_err(invalid)?)
        }
    };
    rd.finish()?;
    Ok(model)
}

/// Plain-text sidecar stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub method: MethodTag,
    pub input_dim: usize,
    pub code_len: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl CheckpointMeta {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityEntry {
    pub name: String,
    pub checkpoint: String,
    pub input_dim: usize,
}

/// Ties the two encoder checkpoints of a multimodal run together.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultimodalManifest {
    pub modalities: Vec<ModalityEntry>,
    pub code_len: usize,
    pub config_hash: String,
}

impl MultimodalManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("multimodal manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn sample() -> FeatureMatrix {
        FeatureMatrix::from_rows(&[vec![0.5, -1.25, 3.0], vec![0.0, 2.5, -0.75]]).unwrap()
    }

    #[test]
    fn features_round_trip() {
        let f = sample();
        let bytes = write_features(&f);
        let back = read_features(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(write_features(&back), bytes);
        assert!(read_features(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn csv_import() {
        let f = features_from_csv("# header\n0.5, -1.25, 3\n\n0 2.5 -0.75\n").unwrap();
        assert_eq!(f, sample());
        assert!(features_from_csv("1,2\n3\n").is_err());
        assert!(features_from_csv("1,x\n").is_err());
    }

    #[test]
    fn labels_and_pairs_round_trip() {
        let labels = parse_labels("3\n1 2\n0\n").unwrap();
        assert_eq!(labels.of(1), &[1, 2]);
        assert_eq!(parse_labels(&format_labels(&labels)).unwrap(), labels);

        let pairs = parse_pairs("0 1 1\n2 3 0\n4 5 -1\n").unwrap();
        assert_eq!(pairs[2].s, Similarity::Dissimilar);
        assert_eq!(format_pairs(&pairs), "0 1 1\n2 3 0\n4 5 0\n");
        assert!(parse_pairs("1 1 1\n").is_err());
        assert!(parse_pairs("0 1 2\n").is_err());

        let mm = parse_multimodal_pairs("xy 0 0 1\nxx 1 2 0\n").unwrap();
        assert_eq!(parse_multimodal_pairs(&format_multimodal_pairs(&mm)).unwrap(), mm);
        assert!(parse_multimodal_pairs("yy 3 3 1\n").is_err());
    }

    #[test]
    fn codes_round_trip() {
        let codes: Vec<TernaryCode> = ["+-0+0", "00000", "-++-0"].iter().map(|s| s.parse().unwrap()).collect();
        let bytes = write_codes(&codes).unwrap();
        assert_eq!(read_codes(&bytes).unwrap(), codes);
        assert!(read_codes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_codes(&extra).is_err());
    }

    #[test]
    fn checkpoints_round_trip() {
        let enc = init_params(&sample(), 2, 1, 3.0, 4).unwrap();
        for model in [
            Model::Encoder(enc.clone()),
            Model::Linear(MethodTag::DiffHash, LinearHashParams::from_encoder(&enc).unwrap()),
        ] {
            let bytes = write_checkpoint(&model);
            let back = read_checkpoint(&bytes).unwrap();
            assert_eq!(back, model);
            assert_eq!(write_checkpoint(&back), bytes);
            assert!(read_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        }
    }

    #[test]
    fn metadata_round_trip() {
        let meta = CheckpointMeta {
            method: MethodTag::NnHash,
            input_dim: 3,
            code_len: 8,
            seed: 11,
            config_hash: "abc".into(),
        };
        assert_eq!(CheckpointMeta::from_json(&meta.to_json()).unwrap(), meta);
        assert!(CheckpointMeta::from_json("{\"method\":\"nnhash\"}").is_err());
    }
}
