//! Weight files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "BCNN" | u16 version | u16 n_classes
//! n_classes x (u16 byte length | utf-8 name)
//! 3 x u32 filters | 3 x u32 kernels | f64 bn_momentum | f64 bn_eps
//! u32 tensor count | per tensor: u32 length | length x f32
//! ```
//!
//! Tensors follow the model's state order: trainable parameters with each
//! batch norm's running statistics after its beta.

use super::{Model, ModelConfig, NnError, Real};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"BCNN";
pub const FORMAT_VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> NnError {
    NnError::IoFailure(std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into()))
}

pub fn write_model<R: Real, W: Write>(model: &Model<R>, mut w: W) -> Result<(), NnError> {
    let cfg = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let n = u16::try_from(cfg.n_classes).map_err(|_| bad("too many classes"))?;
    buf.extend_from_slice(&n.to_le_bytes());
    for name in &model.class_names {
        let len = u16::try_from(name.len()).map_err(|_| bad("class name too long"))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    for v in cfg.filters.iter().chain(&cfg.kernels) {
        let v = u32::try_from(*v).map_err(|_| bad("layer size overflow"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&cfg.bn_momentum.to_le_bytes());
    buf.extend_from_slice(&cfg.bn_eps.to_le_bytes());
    let tensors = model.state_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for v in t {
            buf.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| bad("truncated model file"))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a whole model. Nothing is returned unless every check passes.
pub fn read_model<R: Real, Rd: Read>(mut r: Rd) -> Result<Model<R>, NnError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(4).map_err(|_| NnError::BadMagic)? != MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n_classes = c.u16()? as usize;
    let mut class_names = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| bad("class name is not utf-8"))?;
        class_names.push(name.to_owned());
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = c.u32()? as usize;
    }
    let config = ModelConfig {
        filters: [dims[0], dims[1], dims[2]],
        kernels: [dims[3], dims[4], dims[5]],
        n_classes,
        bn_momentum: c.f64()?,
        bn_eps: c.f64()?,
    };
    let mut model = Model::<R>::new(config, class_names, 0)?;
    let count = c.u32()? as usize;
    let mut slots = model.state_tensors_mut();
    if count != slots.len() {
        return Err(bad(format!("{count} tensors, architecture needs {}", slots.len())));
    }
    for slot in slots.iter_mut() {
        let len = c.u32()? as usize;
        if len != slot.len() {
            return Err(bad(format!("tensor of {len} values, expected {}", slot.len())));
        }
        for (dst, raw) in slot.iter_mut().zip(c.take(4 * len)?.chunks_exact(4)) {
            *dst = R::from_f32(f32::from_le_bytes(raw.try_into().unwrap())).unwrap();
        }
    }
    if c.pos != data.len() {
        return Err(bad("trailing bytes after model"));
    }
    Ok(model)
}

pub fn save_model<R: Real>(model: &Model<R>, path: impl AsRef<Path>) -> Result<(), NnError> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model<R: Real>(path: impl AsRef<Path>) -> Result<Model<R>, NnError> {
    read_model(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model<f32> {
        let names = vec!["a".into(), "bb".into(), "ccc".into()];
        Model::new(ModelConfig::with_filters([4, 8, 8], 3), names, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = small();
        m.blocks[1].bn2.running_var[3] = 1.2345;
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back: Model<f32> = read_model(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut buf = Vec::new();
        write_model(&small(), &mut buf).unwrap();
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(read_model::<f32, _>(&wrong[..]), Err(NnError::BadMagic)));
        assert!(matches!(read_model::<f32, _>(&buf[..2]), Err(NnError::BadMagic)));
        let mut wrong = buf.clone();
        wrong[4] = 9;
        assert!(matches!(
            read_model::<f32, _>(&wrong[..]),
            Err(NnError::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let mut buf = Vec::new();
        write_model(&small(), &mut buf).unwrap();
        for cut in [10, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(read_model::<f32, _>(&buf[..cut]), Err(NnError::IoFailure(_))));
        }
        buf.push(0);
        assert!(read_model::<f32, _>(&buf[..]).is_err());
    }
}
