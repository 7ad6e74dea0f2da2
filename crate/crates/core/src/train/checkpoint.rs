use std::fs;
use std::path::Path;

use super::AdaMax;
use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::tensor::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BRUCKPT1";

/// Named tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerRecords {
    pub t: u64,
    pub lr: f64,
    /// `m/<param>` and `u/<param>` for every trainable parameter.
    pub moments: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Every parameter including batch-norm running statistics.
    pub params: Vec<Record>,
    pub optimizer: OptimizerRecords,
    pub best_epoch: u32,
    pub best_val: f64,
}

fn to_f32<T: Scalar>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.to_f64_lossy() as f32).collect()
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        params: &ParamStore<T>,
        opt: &AdaMax<T>,
        lr: f64,
        best_epoch: u32,
        best_val: f64,
    ) -> Self {
        let params_rec = params
            .iter()
            .map(|(_, p)| Record {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                data: to_f32(p.tensor.data()),
            })
            .collect();
        let mut moments = Vec::new();
        for (k, (_, p)) in params.iter().enumerate().filter(|(_, (_, p))| p.trainable) {
            let shape = p.tensor.shape().to_vec();
            moments.push(Record { name: format!("m/{}", p.name), shape: shape.clone(), data: to_f32(&opt.m[k]) });
            moments.push(Record { name: format!("u/{}", p.name), shape, data: to_f32(&opt.u[k]) });
        }
        Self { params: params_rec, optimizer: OptimizerRecords { t: opt.t, lr, moments }, best_epoch, best_val }
    }

    /// Copies the stored parameters into `params`, checking names and shapes.
    pub fn apply<T: Scalar>(&self, params: &mut ParamStore<T>) -> Result<()> {
        if self.params.len() != params.len() {
            return Err(Error::config(format!(
                "checkpoint holds {} tensors, network has {}",
                self.params.len(),
                params.len()
            )));
        }
        for rec in &self.params {
            let id = params
                .id(&rec.name)
                .ok_or_else(|| Error::config(format!("checkpoint tensor {} is not in the network", rec.name)))?;
            let p = params.get_mut(id);
            if p.tensor.shape() != rec.shape.as_slice() {
                return Err(Error::config(format!(
                    "tensor {} has shape {:?} in the checkpoint but {:?} in the network",
                    rec.name,
                    rec.shape,
                    p.tensor.shape()
                )));
            }
            for (d, s) in p.tensor.data_mut().iter_mut().zip(&rec.data) {
                *d = T::from_f64_lossy(*s as f64);
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        write_records(&mut out, &self.params);
        write_records(&mut out, &self.optimizer.moments);
        out.extend_from_slice(&self.optimizer.t.to_le_bytes());
        out.extend_from_slice(&self.optimizer.lr.to_le_bytes());
        out.extend_from_slice(&self.best_epoch.to_le_bytes());
        out.extend_from_slice(&self.best_val.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let params = read_records(&mut r)?;
        let moments = read_records(&mut r)?;
        let t = r.u64()?;
        let lr = r.f64()?;
        let best_epoch = r.u32()?;
        let best_val = r.f64()?;
        r.finish()?;
        Ok(Self { params, optimizer: OptimizerRecords { t, lr, moments }, best_epoch, best_val })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

fn write_records(out: &mut Vec<u8>, recs: &[Record]) {
    out.extend_from_slice(&(recs.len() as u32).to_le_bytes());
    for rec in recs {
        out.extend_from_slice(&(rec.name.len() as u32).to_le_bytes());
        out.extend_from_slice(rec.name.as_bytes());
        out.extend_from_slice(&(rec.shape.len() as u32).to_le_bytes());
        for &e in &rec.shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in &rec.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_records(r: &mut Reader) -> Result<Vec<Record>> {
    let n = r.u32()? as usize;
    let mut recs = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name =
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::Format(format!("{name}: extents overflow")))?;
        let bytes = r.take(count.checked_mul(4).ok_or_else(|| Error::Format(format!("{name}: too large")))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        recs.push(Record { name, shape, data });
    }
    Ok(recs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::default();
        s.add("a.weight", Tensor::from_fn(&[2, 3], |i| i as f32 - 1.5), true).unwrap();
        s.add("a.running_var", Tensor::full(&[3], 2.0), false).unwrap();
        s
    }

    #[test]
    fn round_trip_and_layout() {
        let s = store();
        let mut opt = AdaMax::new(&s);
        opt.t = 7;
        opt.m[0][1] = 0.25;
        let ck = Checkpoint::capture(&s, &opt, 5e-4, 3, 0.125);
        let bytes = ck.encode();
        assert_eq!(&bytes[..8], b"BRUCKPT1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
        assert_eq!(&bytes[16..24], b"a.weight");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.optimizer.moments[0].name, "m/a.weight");
        assert_eq!(back.optimizer.moments.len(), 2);
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn apply_checks_shapes() {
        let s = store();
        let ck = Checkpoint::capture(&s, &AdaMax::new(&s), 1e-3, 1, 1.0);
        let mut other = ParamStore::default();
        other.add("a.weight", Tensor::<f32>::zeros(&[3, 2]), true).unwrap();
        other.add("a.running_var", Tensor::zeros(&[3]), false).unwrap();
        let err = ck.apply(&mut other).unwrap_err().to_string();
        assert!(err.contains("a.weight"), "{err}");
        let mut same = store();
        same.get_mut(same.id("a.weight").unwrap()).tensor.data_mut()[0] = 9.0;
        ck.apply(&mut same).unwrap();
        assert_eq!(same.get(same.id("a.weight").unwrap()).tensor.data()[0], -1.5);
    }
}
