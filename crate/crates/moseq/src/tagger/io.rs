//! Versioned binary bundle format.
//!
//! Layout: magic, format version, token vocabulary, per-model block (order,
//! label vocabulary, training metadata, parameter tensors as little-endian
//! f64), and a trailing checksum over everything before it. Loading verifies
//! the checksum before parsing, so a flipped byte anywhere surfaces as a
//! corruption error rather than garbage parameters.

use std::io::Write;
use std::path::Path;

use crate::corpus::TokenVocab;
use crate::error::{Error, Result};
use crate::labelspace::LabelVocab;
use crate::nn::linalg::Matrix;
use crate::nn::{LstmParams, TaggerParams};

use super::{ModelBundle, SingleOrderModel, TrainMeta};

const MAGIC: &[u8; 4] = b"MOSQ";
const VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn string_list(&mut self, items: &[String]) {
        self.u32(items.len() as u32);
        for item in items {
            self.string(item);
        }
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for &v in m.data() {
            self.f64(v);
        }
    }

    fn vector(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        for &x in v {
            self.f64(x);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Bundle(format!(
                "bundle truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Bundle("invalid utf-8 string in bundle".into()))
    }

    fn string_list(&mut self) -> Result<Vec<String>> {
        let count = self.u32()? as usize;
        (0..count).map(|_| self.string()).collect()
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }

    fn vector(&mut self) -> Result<Vec<f64>> {
        let len = self.u32()? as usize;
        (0..len).map(|_| self.f64()).collect()
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Serializes a bundle to its canonical byte form.
pub fn bundle_to_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.string_list(bundle.vocab.tokens());
    w.string_list(bundle.vocab.features());
    w.u32(bundle.models.len() as u32);
    for m in &bundle.models {
        w.u32(m.order as u32);
        w.string_list(m.labels.labels());
        w.u64(m.meta.seed);
        w.u64(m.meta.dataset_hash);
        w.u32(m.meta.epochs);
        w.u32(m.meta.best_epoch);
        w.f64(m.meta.dev_f1);
        let p = &m.params;
        w.matrix(&p.token_emb);
        w.matrix(&p.feat_emb);
        for dir in [&p.fwd, &p.bwd] {
            w.matrix(&dir.w);
            w.matrix(&dir.u);
            w.vector(&dir.b);
        }
        w.matrix(&p.w_out);
        w.vector(&p.b_out);
    }
    let checksum = fnv1a(&w.buf);
    w.u64(checksum);
    w.buf
}

fn check_params(p: &TaggerParams, vocab: &TokenVocab) -> Result<()> {
    let d_emb = p.d_emb();
    let d_hidden = p.d_hidden();
    let ok = p.token_emb.rows() == vocab.token_count()
        && p.feat_emb.rows() == vocab.feature_count()
        && p.feat_emb.cols() == d_emb
        && [&p.fwd, &p.bwd].iter().all(|dir| {
            dir.w.rows() == 4 * d_hidden
                && dir.w.cols() == 2 * d_emb
                && dir.u.rows() == 4 * d_hidden
                && dir.u.cols() == d_hidden
                && dir.b.len() == 4 * d_hidden
        })
        && p.w_out.cols() == 2 * d_hidden
        && p.b_out.len() == p.w_out.rows();
    if !ok {
        return Err(Error::Bundle("inconsistent tensor shapes in bundle".into()));
    }
    if (0..crate::nn::TENSOR_COUNT).any(|i| p.tensor(i).iter().any(|v| !v.is_finite())) {
        return Err(Error::Bundle("non-finite parameter value in bundle".into()));
    }
    Ok(())
}

/// Parses bundle bytes, verifying magic, version and checksum.
pub fn bundle_from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(Error::Bundle(format!(
            "bundle too short ({} bytes): missing magic/version header",
            bytes.len()
        )));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a(payload) != stored {
        return Err(Error::Bundle("checksum mismatch: bundle is corrupt".into()));
    }
    let mut r = ByteReader::new(payload);
    if r.take(4)? != MAGIC {
        return Err(Error::Bundle("not a model bundle (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Bundle(format!(
            "unsupported bundle version {version} (expected {VERSION})"
        )));
    }
    let tokens = r.string_list()?;
    let features = r.string_list()?;
    let vocab = TokenVocab::from_parts(tokens, features)?;
    let model_count = r.u32()? as usize;
    let mut models = Vec::with_capacity(model_count);
    for _ in 0..model_count {
        let order = r.u32()? as usize;
        let labels = LabelVocab::from_labels(order, r.string_list()?)?;
        let meta = TrainMeta {
            seed: r.u64()?,
            dataset_hash: r.u64()?,
            epochs: r.u32()?,
            best_epoch: r.u32()?,
            dev_f1: r.f64()?,
        };
        let token_emb = r.matrix()?;
        let feat_emb = r.matrix()?;
        let mut dirs = Vec::with_capacity(2);
        for _ in 0..2 {
            dirs.push(LstmParams {
                w: r.matrix()?,
                u: r.matrix()?,
                b: r.vector()?,
            });
        }
        let bwd = dirs.pop().unwrap();
        let fwd = dirs.pop().unwrap();
        let params = TaggerParams {
            token_emb,
            feat_emb,
            fwd,
            bwd,
            w_out: r.matrix()?,
            b_out: r.vector()?,
        };
        check_params(&params, &vocab)?;
        models.push(SingleOrderModel { order, labels, params, meta });
    }
    if !r.done() {
        return Err(Error::Bundle("trailing bytes after bundle payload".into()));
    }
    ModelBundle::new(vocab, models)
}

/// Writes the bundle via a temp file and an atomic rename, so a failed run
/// never leaves a partial bundle behind.
pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let bytes = bundle_to_bytes(bundle);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .map_err(|e| Error::Data(format!("creating temp file near {}: {e}", path.display())))?;
    tmp.write_all(&bytes)
        .map_err(|e| Error::Data(format!("writing bundle: {e}")))?;
    tmp.persist(path)
        .map_err(|e| Error::Data(format!("persisting bundle to {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("reading bundle {}: {e}", path.display())))?;
    bundle_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_token_vocab, Sentence, Token};
    use crate::tagger::{make_lattice, train_single_order, Hyperparams};

    fn tiny_bundle() -> (ModelBundle, Sentence) {
        let sent = |pairs: &[(&str, &str)]| {
            Sentence::new(
                pairs.iter().map(|(w, _)| Token::new(*w)).collect(),
                pairs.iter().map(|(_, t)| t.to_string()).collect(),
            )
            .unwrap()
        };
        let train = vec![
            sent(&[("a", "B-X"), ("b", "I-X"), ("c", "O")]),
            sent(&[("c", "O"), ("a", "B-X")]),
        ];
        let vocab = build_token_vocab(&train, 1).unwrap();
        let hp = Hyperparams {
            d_emb: 4,
            d_hidden: 4,
            dropout: 0.0,
            lr: 0.01,
            epochs: 2,
        };
        let m1 = train_single_order(&train, &[], &vocab, 1, &hp, 9).unwrap();
        let m2 = train_single_order(&train, &[], &vocab, 2, &hp, 9).unwrap();
        let probe = train[0].clone();
        (ModelBundle::new(vocab, vec![m1, m2]).unwrap(), probe)
    }

    #[test]
    fn round_trip_preserves_bundle_exactly() {
        let (bundle, probe) = tiny_bundle();
        let bytes = bundle_to_bytes(&bundle);
        let loaded = bundle_from_bytes(&bytes).unwrap();
        assert_eq!(bundle, loaded);
        // lattices on a fixed sentence are identical pre/post
        for (a, b) in bundle.models.iter().zip(&loaded.models) {
            let la = make_lattice(&bundle.vocab, a, &probe).unwrap();
            let lb = make_lattice(&loaded.vocab, b, &probe).unwrap();
            assert_eq!(la, lb);
        }
        // serialization itself is stable
        assert_eq!(bytes, bundle_to_bytes(&loaded));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let (bundle, _) = tiny_bundle();
        let mut bytes = bundle_to_bytes(&bundle);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = bundle_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("corrupt"), "{err}");
    }

    #[test]
    fn empty_file_is_a_version_header_error() {
        let err = bundle_from_bytes(&[]).unwrap_err();
        assert!(err.to_string().contains("magic/version"), "{err}");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let (bundle, _) = tiny_bundle();
        let mut bytes = bundle_to_bytes(&bundle);
        bytes[4] = 99; // version field follows the magic
        let without_checksum = bytes.len() - 8;
        let checksum = fnv1a(&bytes[..without_checksum]);
        bytes[without_checksum..].copy_from_slice(&checksum.to_le_bytes());
        let err = bundle_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn save_and_load_through_the_filesystem() {
        let (bundle, _) = tiny_bundle();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.moseq");
        save_bundle(&bundle, &path).unwrap();
        let loaded = load_bundle(&path).unwrap();
        assert_eq!(bundle, loaded);
    }
}
