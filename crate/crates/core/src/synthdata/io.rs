//! Binary dataset files and their key-value sidecar.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic        8 bytes  "TUPLDATA"
//! version      u32      = 1
//! k            u32      number of modalities
//! n            u64      number of samples
//! seed         u64
//! flags        u32      bit 0: labels present
//! k times:     kind u32, dim u32, alphabet u32, snr f64, name_len u32, name (utf-8)
//! generator    len u32, utf-8
//! params       count u32, then count times: key_len u32, key, val_len u32, val
//! n records:   for each modality k: dim_k f64; then label u64 if flagged
//! ```
//!
//! The sidecar `<file>.cfg` repeats the header as `key = value` lines.

use super::types::{ModalitySpec, MultiModalDataset, Provenance, ViewKind};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const DATASET_MAGIC: &[u8; 8] = b"TUPLDATA";
pub const DATASET_VERSION: u32 = 1;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_dataset(ds: &MultiModalDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, DATASET_VERSION);
    put_u32(&mut out, ds.num_modalities() as u32);
    put_u64(&mut out, ds.len() as u64);
    put_u64(&mut out, ds.provenance().seed);
    put_u32(&mut out, u32::from(ds.labels().is_some()));
    for s in ds.specs() {
        put_u32(&mut out, s.kind.code());
        put_u32(&mut out, s.dim as u32);
        put_u32(&mut out, s.alphabet_size as u32);
        out.extend_from_slice(&s.snr.to_le_bytes());
        put_str(&mut out, &s.name);
    }
    put_str(&mut out, &ds.provenance().generator);
    put_u32(&mut out, ds.provenance().params.len() as u32);
    for (k, v) in &ds.provenance().params {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    for i in 0..ds.len() {
        for m in 0..ds.num_modalities() {
            for v in ds.view(m, i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(labels) = ds.labels() {
            put_u64(&mut out, labels[i] as u64);
        }
    }
    out
}

pub fn sidecar_text(ds: &MultiModalDataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# tuplelab dataset sidecar");
    let _ = writeln!(s, "format.version = {DATASET_VERSION}");
    let _ = writeln!(s, "dataset.k = {}", ds.num_modalities());
    let _ = writeln!(s, "dataset.n = {}", ds.len());
    let _ = writeln!(s, "dataset.seed = {}", ds.provenance().seed);
    let _ = writeln!(s, "dataset.labels = {}", ds.labels().is_some());
    let _ = writeln!(s, "generator.name = {:?}", ds.provenance().generator);
    for (k, v) in &ds.provenance().params {
        let _ = writeln!(s, "generator.{k} = {v:?}");
    }
    for (i, spec) in ds.specs().iter().enumerate() {
        let _ = writeln!(s, "modality.{i}.name = {:?}", spec.name);
        let _ = writeln!(s, "modality.{i}.kind = {:?}", spec.kind.name());
        let _ = writeln!(s, "modality.{i}.dim = {}", spec.dim);
        let _ = writeln!(s, "modality.{i}.snr = {:?}", spec.snr);
        let _ = writeln!(s, "modality.{i}.alphabet_size = {}", spec.alphabet_size);
    }
    s
}

pub fn save_dataset(ds: &MultiModalDataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(ds))?;
    write_atomic(&sidecar_path(path), sidecar_text(ds).as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<MultiModalDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, path)
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<MultiModalDataset> {
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 || &bytes[..8] != DATASET_MAGIC {
        return Err(format("missing TUPLDATA magic".into()));
    }
    let mut r = Reader {
        bytes,
        pos: 8,
        path,
    };
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(format(format!(
            "unsupported version {version}, expected {DATASET_VERSION}"
        )));
    }
    let k = r.u32()? as usize;
    let n = r.u64()? as usize;
    let seed = r.u64()?;
    let flags = r.u32()?;
    if k == 0 || k > super::types::MAX_MODALITIES {
        return Err(format(format!("invalid modality count {k}")));
    }
    let mut specs = Vec::with_capacity(k);
    for _ in 0..k {
        let code = r.u32()?;
        let kind = ViewKind::from_code(code).ok_or_else(|| format(format!("unknown view kind {code}")))?;
        let dim = r.u32()? as usize;
        let alphabet_size = r.u32()? as usize;
        let snr = r.f64()?;
        let name = r.string()?;
        specs.push(ModalitySpec {
            name,
            dim,
            kind,
            snr,
            alphabet_size,
        });
    }
    let generator = r.string()?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let key = r.string()?;
        let val = r.string()?;
        params.push((key, val));
    }
    let has_labels = flags & 1 == 1;
    let record_len = specs.iter().map(|s| s.dim).sum::<usize>() * 8 + if has_labels { 8 } else { 0 };
    let remaining = bytes.len() - r.pos;
    let expected = n.checked_mul(record_len).ok_or_else(|| format("record count overflows".into()))?;
    if remaining != expected {
        let whole = if record_len == 0 { 0 } else { remaining / record_len };
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            reason: format!(
                "header declares {n} records ({expected} bytes) but {remaining} bytes follow ({whole} whole records)"
            ),
        });
    }
    let mut data: Vec<Vec<f64>> = specs.iter().map(|s| Vec::with_capacity(n * s.dim)).collect();
    let mut labels = has_labels.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        for (col, s) in data.iter_mut().zip(&specs) {
            for _ in 0..s.dim {
                col.push(r.f64()?);
            }
        }
        if let Some(l) = labels.as_mut() {
            l.push(r.u64()? as usize);
        }
    }
    let views = data
        .into_iter()
        .zip(&specs)
        .map(|(d, s)| Matrix::from_vec(n, s.dim, d))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Corruption {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    MultiModalDataset::new(specs, views, labels, Provenance { generator, seed, params }).map_err(|e| {
        Error::Corruption {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
    pub(crate) path: &'a Path,
}

impl Reader<'_> {
    pub(crate) fn take(&mut self, len: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Corruption {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {} (wanted {len} more)", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
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

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let path = self.path.to_path_buf();
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Corruption {
            path,
            reason: format!("invalid utf-8: {e}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{gen_latent_factor, LatentFactorConfig};

    fn sample() -> MultiModalDataset {
        let specs = vec![
            ModalitySpec::gaussian("rgb", 3, 2.0),
            ModalitySpec::coords2d("pts", 2, 1.0),
        ];
        gen_latent_factor(&LatentFactorConfig::new(specs, 2, 3), 100, 17).unwrap()
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = sample();
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
        let side = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(side.contains("dataset.n = 100"));
        assert!(side.contains("modality.1.kind = \"coords2d\""));
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = encode_dataset(&sample());
        bytes[0] = b'X';
        assert!(matches!(
            decode_dataset(&bytes, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn wrong_version_is_a_format_error() {
        let mut bytes = encode_dataset(&sample());
        bytes[8] = 9;
        assert!(matches!(
            decode_dataset(&bytes, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn missing_record_is_corruption() {
        let ds = sample();
        let bytes = encode_dataset(&ds);
        let record = (3 + 4) * 8 + 8;
        let cut = &bytes[..bytes.len() - record];
        let err = decode_dataset(cut, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Corruption { .. }), "{err}");
        assert!(err.to_string().contains("99 whole records"), "{err}");
        let err = decode_dataset(&bytes[..20], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Corruption { .. }), "{err}");
    }
}
