//! Parameter checkpoints.
//!
//! Binary layout (all integers little-endian):
//!   magic "CXMT", version u32, param count u32, then per parameter:
//!   name length u32, name bytes (UTF-8), rank u32, each dim u32,
//!   values as f64 bits. A human-readable manifest is written alongside at
//!   `<path>.manifest` with one `name shape numel` line per parameter.

use std::collections::HashMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CXMT";
const VERSION: u32 = 1;

fn ckpt_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Write all parameters. Every tensor must carry a unique name.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &[&Tensor]) -> Result<()> {
    let path = path.as_ref();
    let mut seen = HashMap::new();
    for (i, p) in params.iter().enumerate() {
        let name = p.name();
        if name == "<unnamed>" {
            return Err(ckpt_err(path, format!("parameter {i} has no name")));
        }
        if seen.insert(name.clone(), i).is_some() {
            return Err(ckpt_err(path, format!("duplicate parameter name `{name}`")));
        }
    }

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut manifest = String::new();
    for p in params {
        let name = p.name();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &d in p.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.values().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        manifest.push_str(&format!("{name} {:?} {}\n", p.shape(), p.numel()));
    }

    let write = |p: &Path, bytes: &[u8]| -> Result<()> {
        let mut f = std::fs::File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?;
        f.write_all(bytes)
            .map_err(|e| Error::io(p.display().to_string(), e))
    };
    write(path, &buf)?;
    let mut manifest_path = path.as_os_str().to_owned();
    manifest_path.push(".manifest");
    write(Path::new(&manifest_path), manifest.as_bytes())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| ckpt_err(self.path, "file truncated"))?;
        self.pos += n;
        Ok(slice)
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Load a checkpoint into existing tensors, matched by name. The checkpoint
/// and the parameter list must agree exactly on names and shapes.
pub fn load_checkpoint_into(path: impl AsRef<Path>, params: &[&Tensor]) -> Result<()> {
    let path = path.as_ref();
    let mut file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };
    if cur.take(4)? != MAGIC {
        return Err(ckpt_err(path, "bad magic; not a checkpoint file"));
    }
    let version = cur.take_u32()?;
    if version != VERSION {
        return Err(ckpt_err(
            path,
            format!("version {version} unsupported (expected {VERSION})"),
        ));
    }
    let count = cur.take_u32()? as usize;
    if count != params.len() {
        return Err(ckpt_err(
            path,
            format!(
                "{count} stored parameters but the model has {}",
                params.len()
            ),
        ));
    }

    let mut stored: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.take_u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| ckpt_err(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = cur.take_u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.take_u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
        }
        if stored.insert(name.clone(), (shape, values)).is_some() {
            return Err(ckpt_err(path, format!("duplicate stored name `{name}`")));
        }
    }
    if cur.pos != buf.len() {
        return Err(ckpt_err(path, "trailing bytes after last parameter"));
    }

    for p in params {
        let name = p.name();
        let (shape, values) = stored
            .get(&name)
            .ok_or_else(|| ckpt_err(path, format!("checkpoint lacks parameter `{name}`")))?;
        if shape != p.shape() {
            return Err(ckpt_err(
                path,
                format!(
                    "parameter `{name}` has shape {:?} in the checkpoint but {:?} in the model",
                    shape,
                    p.shape()
                ),
            ));
        }
        p.set_values(values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_mlp, MlpSpec, Model};
    use crate::seeds::{self, Stream};

    #[test]
    fn round_trips_exactly() {
        let spec = MlpSpec::new(5, vec![7, 3], 0.1).unwrap();
        let mut rng = seeds::rng(21, Stream::ModelInit);
        let a = init_mlp(&spec, &mut rng).unwrap();
        let b = init_mlp(&spec, &mut rng).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &a.params()).unwrap();
        load_checkpoint_into(&path, &b.params()).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            let (va, vb) = (pa.value_vec(), pb.value_vec());
            assert_eq!(va.len(), vb.len());
            for (x, y) in va.iter().zip(&vb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let manifest = std::fs::read_to_string(dir.path().join("model.ckpt.manifest")).unwrap();
        assert!(manifest.contains("layer0.w [5, 7] 35"));
    }

    #[test]
    fn rejects_shape_and_name_mismatches() {
        let mut rng = seeds::rng(22, Stream::ModelInit);
        let a = init_mlp(&MlpSpec::new(4, vec![6], 0.0).unwrap(), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &a.params()).unwrap();

        let wrong_shape = init_mlp(&MlpSpec::new(4, vec![5], 0.0).unwrap(), &mut rng).unwrap();
        assert!(load_checkpoint_into(&path, &wrong_shape.params()).is_err());

        let wrong_count = init_mlp(&MlpSpec::new(4, vec![], 0.0).unwrap(), &mut rng).unwrap();
        assert!(load_checkpoint_into(&path, &wrong_count.params()).is_err());
    }

    #[test]
    fn rejects_corrupt_files() {
        let mut rng = seeds::rng(23, Stream::ModelInit);
        let a = init_mlp(&MlpSpec::new(3, vec![], 0.0).unwrap(), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &a.params()).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.ckpt");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(load_checkpoint_into(&bad, &a.params()).is_err());

        let truncated = dir.path().join("trunc.ckpt");
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&truncated, &full[..full.len() - 4]).unwrap();
        assert!(load_checkpoint_into(&truncated, &a.params()).is_err());
    }

    #[test]
    fn refuses_unnamed_parameters() {
        let t = crate::autodiff::Tensor::from_vec(vec![2], vec![1.0, 2.0]);
        let dir = tempfile::tempdir().unwrap();
        assert!(save_checkpoint(dir.path().join("x.ckpt"), &[&t]).is_err());
    }
}
