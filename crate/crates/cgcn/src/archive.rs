//! Versioned, checksummed binary model persistence.
//!
//! Layout: an 8-byte magic, a little-endian u32 format version, the
//! payload, and a trailing SHA-256 digest of everything before it. All
//! integers are little-endian u64 unless noted, all floats are f64 bits,
//! and matrices are stored as (rows, cols, row-major entries). The
//! training feature matrix Q is not persisted: inference rebuilds features
//! from the landmarks and the pseudo-inverse payload, so restored kernels
//! carry an empty Q.
//!
//! The version is checked before the checksum, so an archive from a newer
//! format fails with a version error rather than a checksum mismatch.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factor::{FactorizedKernel, PinvMap};
use crate::graph::ShiftKind;
use crate::kernel::KernelSpec;
use crate::model::{CgcnLayer, CgcnModel};

pub const ARCHIVE_MAGIC: [u8; 8] = *b"CGCNMDL\0";
pub const ARCHIVE_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// A decoded model file: the format version it was stored with, the
/// configuration echo recorded at save time, and the model itself.
#[derive(Debug)]
pub struct ModelArchive {
    pub version: u32,
    pub config_echo: String,
    pub model: CgcnModel,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    put_u64(out, m.nrows() as u64);
    put_u64(out, m.ncols() as u64);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            put_f64(out, m[(r, c)]);
        }
    }
}

fn put_vector(out: &mut Vec<u8>, v: &DVector<f64>) {
    put_u64(out, v.len() as u64);
    for &x in v.iter() {
        put_f64(out, x);
    }
}

fn put_kernel_spec(out: &mut Vec<u8>, spec: &KernelSpec) {
    match spec {
        KernelSpec::InversePolynomial => out.push(0),
        KernelSpec::GaussianRbf { gamma } => {
            out.push(1);
            put_f64(out, *gamma);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Archive(format!(
                "payload truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Archive(format!("length {v} overflows usize")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.usize()?;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Archive("string field is not valid UTF-8".into()))
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        if rows.checked_mul(cols).is_none_or(|n| n * 8 > self.data.len()) {
            return Err(Error::Archive(format!(
                "matrix of {rows}x{cols} entries exceeds the archive size"
            )));
        }
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.f64()?;
            }
        }
        Ok(m)
    }

    fn vector(&mut self) -> Result<DVector<f64>> {
        let len = self.usize()?;
        if len * 8 > self.data.len() {
            return Err(Error::Archive(format!(
                "vector of {len} entries exceeds the archive size"
            )));
        }
        let mut v = DVector::zeros(len);
        for i in 0..len {
            v[i] = self.f64()?;
        }
        Ok(v)
    }

    fn kernel_spec(&mut self) -> Result<KernelSpec> {
        match self.u8()? {
            0 => Ok(KernelSpec::InversePolynomial),
            1 => KernelSpec::rbf(self.f64()?),
            tag => Err(Error::Archive(format!("unknown kernel tag {tag}"))),
        }
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

/// Serializes a model and its configuration echo to archive bytes.
pub fn encode_model(model: &CgcnModel, config_echo: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    put_string(&mut out, config_echo);
    put_string(&mut out, &model.shift_kind().to_string());
    put_u64(&mut out, model.layers().len() as u64);
    for layer in model.layers() {
        put_u64(&mut out, layer.hops() as u64);
        put_f64(&mut out, layer.budget());
        for (kernel, filter) in layer.kernels().iter().zip(layer.filters()) {
            put_kernel_spec(&mut out, kernel.spec());
            put_u64(&mut out, kernel.landmark_indices().len() as u64);
            for &idx in kernel.landmark_indices() {
                put_u64(&mut out, idx as u64);
            }
            put_matrix(&mut out, kernel.landmarks());
            put_matrix(&mut out, kernel.pinv().u());
            put_vector(&mut out, kernel.pinv().sigma());
            put_matrix(&mut out, kernel.pinv().vt());
            put_f64(&mut out, kernel.pinv().cutoff());
            put_matrix(&mut out, filter);
        }
    }
    put_u64(&mut out, model.hidden_readouts().len() as u64);
    for readout in model.hidden_readouts() {
        put_matrix(&mut out, readout);
    }
    put_matrix(&mut out, model.final_readout());
    put_vector(&mut out, model.final_bias());
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Decodes archive bytes, validating magic, version, and checksum in that
/// order before touching the payload.
pub fn decode_model(bytes: &[u8]) -> Result<ModelArchive> {
    if bytes.len() < ARCHIVE_MAGIC.len() + 4 + CHECKSUM_LEN {
        return Err(Error::Archive(format!(
            "file is {} bytes, smaller than the fixed framing",
            bytes.len()
        )));
    }
    if bytes[..ARCHIVE_MAGIC.len()] != ARCHIVE_MAGIC {
        return Err(Error::Archive("bad magic, not a model archive".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != ARCHIVE_VERSION {
        return Err(Error::ArchiveVersion {
            found: version,
            supported: ARCHIVE_VERSION,
        });
    }
    let (body, stored_digest) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored_digest {
        return Err(Error::ArchiveChecksum);
    }

    let mut r = Reader::new(&body[12..]);
    let config_echo = r.string()?;
    let shift_kind: ShiftKind = r
        .string()?
        .parse()
        .map_err(|e: Error| Error::Archive(e.to_string()))?;
    let num_layers = r.usize()?;
    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let hops = r.usize()?;
        let budget = r.f64()?;
        let mut kernels = Vec::with_capacity(hops + 1);
        let mut filters = Vec::with_capacity(hops + 1);
        for hop in 0..=hops {
            let spec = r.kernel_spec()?;
            let index_count = r.usize()?;
            let mut landmark_indices = Vec::with_capacity(index_count);
            for _ in 0..index_count {
                landmark_indices.push(r.usize()?);
            }
            let landmarks = r.matrix()?;
            let u = r.matrix()?;
            let sigma = r.vector()?;
            let vt = r.matrix()?;
            let cutoff = r.f64()?;
            let filter = r.matrix()?;
            let width = vt.ncols();
            let pinv = PinvMap::new(u, sigma, vt, cutoff);
            kernels.push(FactorizedKernel::from_parts(
                spec,
                hop,
                DMatrix::zeros(0, width),
                landmark_indices,
                landmarks,
                pinv,
            ));
            filters.push(filter);
        }
        layers.push(CgcnLayer::new(kernels, filters, budget)?);
    }
    let readout_count = r.usize()?;
    let mut hidden_readouts = Vec::with_capacity(readout_count);
    for _ in 0..readout_count {
        hidden_readouts.push(r.matrix()?);
    }
    let final_readout = r.matrix()?;
    let final_bias = r.vector()?;
    if !r.done() {
        return Err(Error::Archive(format!(
            "{} trailing bytes after the payload",
            body.len() - 12 - r.pos
        )));
    }
    let model = CgcnModel::new(
        shift_kind,
        layers,
        hidden_readouts,
        final_readout,
        final_bias,
    )?;
    Ok(ModelArchive {
        version,
        config_echo,
        model,
    })
}

/// Writes a model archive to disk.
pub fn save_model(model: &CgcnModel, config_echo: &str, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model, config_echo))?;
    Ok(())
}

/// Reads a model archive from disk.
pub fn load_model(path: &Path) -> Result<ModelArchive> {
    let bytes = std::fs::read(path)?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::model_forward;
    use crate::train::{
        sample_synthetic_dataset, train_layerwise, FilterInit, OptimizerChoice, SyntheticTask,
        TrainConfig,
    };

    fn trained_toy_model() -> (CgcnModel, crate::train::Dataset) {
        let ds = sample_synthetic_dataset(&SyntheticTask::default(), 10, 3).unwrap();
        let config = TrainConfig {
            shift_kind: ShiftKind::NormalizedLaplacian,
            kernels: vec![
                KernelSpec::InversePolynomial,
                KernelSpec::rbf(0.5).unwrap(),
            ],
            hops: 1,
            num_layers: 2,
            hidden_widths: vec![3],
            landmarks: 5,
            epochs: 8,
            optimizer: OptimizerChoice::ProjectedAdam,
            learning_rate: 0.05,
            batch_size: None,
            radius: 1.0,
            budgets: None,
            split: (0.8, 0.1, 0.1),
            filter_init: FilterInit::Random,
            seed: 11,
            init_seed: None,
        };
        (train_layerwise(&ds, &config).unwrap().model, ds)
    }

    #[test]
    fn round_trip_preserves_predictions_and_echo() {
        let (model, ds) = trained_toy_model();
        let bytes = encode_model(&model, "epochs = 8\n");
        let archive = decode_model(&bytes).unwrap();
        assert_eq!(archive.version, ARCHIVE_VERSION);
        assert_eq!(archive.config_echo, "epochs = 8\n");
        assert_eq!(archive.model.shift_kind(), model.shift_kind());
        for sample in ds.samples() {
            let a = model_forward(&model, &sample.graph, &sample.signal).unwrap();
            let b = model_forward(&archive.model, &sample.graph, &sample.signal).unwrap();
            assert!((a - b).amax() <= 1e-12);
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let (model, _) = trained_toy_model();
        assert_eq!(encode_model(&model, "x"), encode_model(&model, "x"));
    }

    #[test]
    fn file_round_trip_works() {
        let (model, _) = trained_toy_model();
        let dir = std::env::temp_dir().join(format!("cgcn-archive-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.cgcn");
        save_model(&model, "echo", &path).unwrap();
        let archive = load_model(&path).unwrap();
        assert_eq!(archive.config_echo, "echo");
        assert_eq!(archive.model.layers().len(), model.layers().len());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn truncation_fails_the_checksum() {
        let (model, _) = trained_toy_model();
        let bytes = encode_model(&model, "");
        let truncated = &bytes[..bytes.len() - 10];
        assert!(matches!(
            decode_model(truncated),
            Err(Error::ArchiveChecksum)
        ));
    }

    #[test]
    fn corruption_fails_the_checksum() {
        let (model, _) = trained_toy_model();
        let mut bytes = encode_model(&model, "");
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_model(&bytes), Err(Error::ArchiveChecksum)));
    }

    #[test]
    fn future_version_fails_before_checksum() {
        let (model, _) = trained_toy_model();
        let mut bytes = encode_model(&model, "");
        bytes[8] = 99;
        match decode_model(&bytes) {
            Err(Error::ArchiveVersion { found, supported }) => {
                assert_eq!(found, 99);
                assert_eq!(supported, ARCHIVE_VERSION);
            }
            other => panic!("unexpected result {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let (model, _) = trained_toy_model();
        let mut bytes = encode_model(&model, "");
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(Error::Archive(_))));
    }

    #[test]
    fn restored_kernels_have_empty_q() {
        let (model, _) = trained_toy_model();
        let archive = decode_model(&encode_model(&model, "")).unwrap();
        for layer in archive.model.layers() {
            for kernel in layer.kernels() {
                assert_eq!(kernel.q().nrows(), 0);
                assert!(kernel.width() > 0);
            }
        }
    }
}
