//! Versioned binary container for parameters, optimizer state and string metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "DGCKPT\0\0" | version u32
//! n_meta u32   { key str, value str }*
//! n_params u32 { name str, rank u32, dims u64*, data f64* }*
//! has_adam u8  [ lr f64, beta1 f64, beta2 f64, eps f64, step u64, { m f64*, v f64* } per param ]
//! ```
//!
//! Strings are a `u32` byte length followed by UTF-8 bytes. Floats are stored as raw bits so
//! the round trip is exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{AdamState, ParamStore, Tensor, TensorError};

const MAGIC: &[u8; 8] = b"DGCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything persisted for a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

fn err(detail: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(detail.into())
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_bits().to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], TensorError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| err(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, TensorError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, TensorError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self) -> Result<String, TensorError> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| err(format!("truncated string: {e}")))?;
        String::from_utf8(buf).map_err(|_| err("invalid UTF-8 in checkpoint string"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, TensorError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<(), TensorError> {
        let io = |e: std::io::Error| err(e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        write_u32(&mut w, CHECKPOINT_VERSION).map_err(io)?;
        write_u32(&mut w, self.metadata.len() as u32).map_err(io)?;
        for (k, v) in &self.metadata {
            write_str(&mut w, k).map_err(io)?;
            write_str(&mut w, v).map_err(io)?;
        }
        write_u32(&mut w, self.params.len() as u32).map_err(io)?;
        for (_, p) in self.params.iter() {
            write_str(&mut w, p.name()).map_err(io)?;
            let shape = p.value().shape();
            write_u32(&mut w, shape.len() as u32).map_err(io)?;
            for &d in shape {
                write_u64(&mut w, d as u64).map_err(io)?;
            }
            write_f64s(&mut w, p.value().data()).map_err(io)?;
        }
        match &self.adam {
            None => w.write_all(&[0]).map_err(io)?,
            Some(adam) => {
                w.write_all(&[1]).map_err(io)?;
                write_f64s(&mut w, &[adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon]).map_err(io)?;
                write_u64(&mut w, adam.step_count()).map_err(io)?;
                for (m, v) in adam.first_moments().iter().zip(adam.second_moments()) {
                    write_f64s(&mut w, m.data()).map_err(io)?;
                    write_f64s(&mut w, v.data()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_from(r: impl Read) -> Result<Self, TensorError> {
        let mut r = Reader { inner: r };
        if &r.bytes::<8>()? != MAGIC {
            return Err(err("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let mut params = ParamStore::new();
        let mut shapes = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
            let n = shape.iter().product();
            let data = r.f64s(n)?;
            shapes.push(shape.clone());
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let lr = r.f64()?;
                let b1 = r.f64()?;
                let b2 = r.f64()?;
                let eps = r.f64()?;
                let step = r.u64()?;
                let mut first = Vec::with_capacity(shapes.len());
                let mut second = Vec::with_capacity(shapes.len());
                for shape in &shapes {
                    let n = shape.iter().product();
                    first.push(Tensor::new(shape.clone(), r.f64s(n)?)?);
                    second.push(Tensor::new(shape.clone(), r.f64s(n)?)?);
                }
                Some(AdamState::from_parts(lr, b1, b2, eps, step, first, second))
            }
            other => return Err(err(format!("bad optimizer flag {other}"))),
        };
        Ok(Self { metadata, params, adam })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TensorError> {
        let file = std::fs::File::create(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TensorError> {
        let file = std::fs::File::open(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(values: Vec<f64>, step_grad: Option<f64>) -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("a", Tensor::vector(values.clone())).unwrap();
        params
            .insert("b.w", Tensor::new(vec![1, values.len()], values).unwrap())
            .unwrap();
        let adam = step_grad.map(|g| {
            let mut adam = AdamState::new(&params, 0.001);
            let mut trained = params.clone();
            for p in trained.params_mut().iter_mut() {
                let (_, grad) = p.parts_mut();
                grad.fill(g);
            }
            adam.step(&mut trained).unwrap();
            adam
        });
        let mut metadata = BTreeMap::new();
        metadata.insert("vocab".into(), "a\nb\tc".into());
        Checkpoint { metadata, params, adam }
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(values in prop::collection::vec(-1e6f64..1e6, 1..20), g in prop::option::of(-5.0f64..5.0)) {
            let ckpt = sample(values, g);
            let mut buf = Vec::new();
            ckpt.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn rejects_other_versions() {
        let mut buf = Vec::new();
        sample(vec![1.0], None).write_to(&mut buf).unwrap();
        buf[8] = 9;
        assert!(matches!(
            Checkpoint::read_from(buf.as_slice()),
            Err(TensorError::CheckpointVersion { found: 9, .. })
        ));
        assert!(Checkpoint::read_from(&b"garbage!"[..]).is_err());
    }
}
