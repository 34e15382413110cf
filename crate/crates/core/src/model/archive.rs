use std::io::{Read, Write};
use std::path::Path;

use sawt_tensor::Tensor;

use super::ModelError;

const MAGIC: &[u8; 4] = b"SWAR";
pub const ARCHIVE_VERSION: u32 = 1;

/// JSON metadata plus named arrays. Used for checkpoints and mel dumps.
///
/// Layout (little-endian): magic `SWAR`, u32 version, u64 metadata length,
/// metadata JSON, u32 array count, then per array: u32 name length, name,
/// dtype tag (`f64` or `f32` as 3 ASCII bytes), u32 rank, u64 dims, and the
/// row-major data.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Tensor)>,
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::BadCheckpoint(msg.into())
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, t: Tensor) {
        self.arrays.push((name.to_string(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, t) in &self.arrays {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(b"f64")?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not an archive"));
        }
        let version = read_u32(&mut r)?;
        if version != ARCHIVE_VERSION {
            return Err(bad(format!("unsupported archive version {version}")));
        }
        let meta_len = read_u64(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta = serde_json::from_slice(&meta).map_err(|e| bad(e.to_string()))?;
        let n = read_u32(&mut r)?;
        let mut arrays = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("array name is not UTF-8"))?;
            let mut dtype = [0u8; 3];
            r.read_exact(&mut dtype)?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let count: usize = shape.iter().product();
            let data: Vec<f64> = match &dtype {
                b"f64" => (0..count).map(|_| read_u64(&mut r).map(f64::from_bits)).collect::<Result<_, _>>()?,
                b"f32" => (0..count)
                    .map(|_| read_u32(&mut r).map(|b| f64::from(f32::from_bits(b))))
                    .collect::<Result<_, _>>()?,
                other => return Err(bad(format!("unknown dtype {:?}", String::from_utf8_lossy(other)))),
            };
            arrays.push((name, Tensor::new(shape, data)));
        }
        Ok(Self { meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let mut a = Archive::new(serde_json::json!({"kind": "test", "n": 3}));
        a.push("x", Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0]));
        a.push("empty", Tensor::zeros(&[0, 4]));
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        let b = Archive::read_from(&buf[..]).unwrap();
        assert_eq!(a.meta, b.meta);
        for ((n0, t0), (n1, t1)) in a.arrays.iter().zip(&b.arrays) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            assert!(t0.data().iter().zip(t1.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn rejects_garbage_and_versions() {
        assert!(Archive::read_from(&b"nope"[..]).is_err());
        let mut buf = Vec::new();
        Archive::new(serde_json::Value::Null).write_to(&mut buf).unwrap();
        buf[4] = 9;
        assert!(matches!(Archive::read_from(&buf[..]), Err(ModelError::BadCheckpoint(_))));
    }
}
