//! Binary checkpoint: `"SQLD"`, u32 version, u32 tensor count, then per
//! tensor u16 name length, UTF-8 name, u8 dtype, u8 ndim, u32 dims, u64 byte
//! length and the raw payload; trailing u64 step and 32-byte RNG state. All
//! integers and floats are little-endian.

use std::path::Path;

use crate::diffcore::{DType, Real, Tensor};
use crate::error::{Error, Result};
use crate::io::write_file;
use crate::networks::{ModelConfig, ParamSet};
use crate::rng::Xoshiro256;
use crate::sql::{BinMode, CombineMode, QueryMode};

use super::adam::AdamState;

pub const MAGIC: &[u8; 4] = b"SQLD";
pub const VERSION: u32 = 1;
pub const MODEL_CONFIG_TENSOR: &str = "meta.model_config";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// A stored tensor of either supported dtype.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            StoredTensor::F32(t) => t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
            StoredTensor::F64(t) => t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            StoredTensor::F32(t) => t.clone(),
            StoredTensor::F64(t) => t.cast(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.clone(),
        }
    }
}

/// Raw checkpoint contents in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, StoredTensor)>,
    pub step: u64,
    pub rng: [u8; 32],
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Lookup(format!("checkpoint tensor {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len()).map_err(|_| Error::Validation("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len()).map_err(|_| Error::Validation(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.dtype().code());
            let shape = t.shape();
            let ndim = u8::try_from(shape.len()).map_err(|_| Error::Validation(format!("{name} has too many dims")))?;
            out.push(ndim);
            for &d in shape {
                let d = u32::try_from(d).map_err(|_| Error::Validation(format!("{name} dimension too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            let payload = t.payload();
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format { field: "magic", detail: "not an SQLD checkpoint".into() });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: VERSION });
        }
        let count = r.u32("tensor_count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u16("name_length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Format { field: "name", detail: "not UTF-8".into() })?
                .to_string();
            let code = r.take(1, "dtype")?[0];
            let dtype = DType::from_code(code)
                .ok_or_else(|| Error::Format { field: "dtype", detail: format!("unknown code {code} for {name}") })?;
            let ndim = r.take(1, "ndim")?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dims")? as usize);
            }
            let byte_len = r.u64("byte_length")?;
            let numel: usize = shape.iter().product();
            if byte_len != (numel * dtype.size()) as u64 {
                return Err(Error::Format {
                    field: "byte_length",
                    detail: format!("{name}: {byte_len} bytes for shape {shape:?}"),
                });
            }
            let payload = r.take(byte_len as usize, "payload")?;
            let t = match dtype {
                DType::F32 => StoredTensor::F32(Tensor::new(
                    shape,
                    payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                )?),
                DType::F64 => StoredTensor::F64(Tensor::new(
                    shape,
                    payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                )?),
            };
            tensors.push((name, t));
        }
        let step = r.u64("step")?;
        let rng: [u8; 32] = r.take(32, "rng_state")?.try_into().unwrap();
        if r.pos != bytes.len() {
            return Err(Error::Format { field: "trailing", detail: format!("{} unexpected bytes", bytes.len() - r.pos) });
        }
        Ok(Self { tensors, step, rng })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                field,
                detail: format!("truncated: need {n} bytes at offset {}, {} left", self.pos, self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// `ModelConfig` as a flat f64 vector; enums are stored by index.
pub fn encode_model_config(cfg: &ModelConfig) -> Tensor<f64> {
    let v = vec![
        cfg.height as f64,
        cfg.width as f64,
        cfg.channels as f64,
        cfg.patch as f64,
        cfg.fine_patch as f64,
        cfg.queries as f64,
        cfg.bins as f64,
        cfg.d_min,
        cfg.d_max,
        cfg.query_mode.index() as f64,
        cfg.bin_mode.index() as f64,
        cfg.combine_mode.index() as f64,
        cfg.transformer_layers as f64,
        cfg.heads as f64,
        cfg.mlp_ratio as f64,
        cfg.bins_hidden as f64,
        cfg.pose_width as f64,
        cfg.seed as f64,
    ];
    Tensor::from_fn(&[v.len()], |i| v[i])
}

pub fn decode_model_config(t: &Tensor<f64>) -> Result<ModelConfig> {
    let v = t.data();
    if t.shape() != [18] {
        return Err(Error::Format { field: MODEL_CONFIG_TENSOR, detail: format!("shape {:?}", t.shape()) });
    }
    let int = |i: usize| -> Result<usize> {
        let x = v[i];
        if x >= 0.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(Error::Format { field: MODEL_CONFIG_TENSOR, detail: format!("entry {i} = {x} is not a count") })
        }
    };
    let bad_enum = |i: usize| Error::Format { field: MODEL_CONFIG_TENSOR, detail: format!("entry {i} is not a valid mode") };
    let cfg = ModelConfig {
        height: int(0)?,
        width: int(1)?,
        channels: int(2)?,
        patch: int(3)?,
        fine_patch: int(4)?,
        queries: int(5)?,
        bins: int(6)?,
        d_min: v[7],
        d_max: v[8],
        query_mode: QueryMode::from_index(int(9)?).ok_or_else(|| bad_enum(9))?,
        bin_mode: BinMode::from_index(int(10)?).ok_or_else(|| bad_enum(10))?,
        combine_mode: CombineMode::from_index(int(11)?).ok_or_else(|| bad_enum(11))?,
        transformer_layers: int(12)?,
        heads: int(13)?,
        mlp_ratio: int(14)?,
        bins_hidden: int(15)?,
        pose_width: int(16)?,
        seed: int(17)? as u64,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Typed view of a training checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Real> {
    pub model: ModelConfig,
    pub params: ParamSet<T>,
    pub adam: AdamState<T>,
    pub rng: Xoshiro256,
}

fn stored<T: Real>(t: &Tensor<T>) -> StoredTensor {
    match T::DTYPE {
        DType::F32 => StoredTensor::F32(t.cast()),
        DType::F64 => StoredTensor::F64(t.cast()),
    }
}

fn typed<T: Real>(t: &StoredTensor) -> Tensor<T> {
    match t {
        StoredTensor::F32(t) => t.cast(),
        StoredTensor::F64(t) => t.cast(),
    }
}

impl<T: Real> TrainState<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = vec![(MODEL_CONFIG_TENSOR.to_string(), StoredTensor::F64(encode_model_config(&self.model)))];
        for (n, t) in self.params.iter() {
            tensors.push((n.clone(), stored(t)));
        }
        for (n, t) in self.adam.m.iter() {
            tensors.push((format!("{ADAM_M}{n}"), stored(t)));
        }
        for (n, t) in self.adam.v.iter() {
            tensors.push((format!("{ADAM_V}{n}"), stored(t)));
        }
        Checkpoint { tensors, step: self.adam.step, rng: self.rng.to_bytes() }
    }

    /// Splits a checkpoint into model config, parameters and moments, and
    /// checks the parameter set against the architecture.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = decode_model_config(&ckpt.get(MODEL_CONFIG_TENSOR)?.to_f64())?;
        let mut params = ParamSet::new();
        let mut m = ParamSet::new();
        let mut v = ParamSet::new();
        for (name, t) in &ckpt.tensors {
            if name == MODEL_CONFIG_TENSOR {
                continue;
            }
            if let Some(rest) = name.strip_prefix(ADAM_M) {
                m.insert(rest.to_string(), typed(t))?;
            } else if let Some(rest) = name.strip_prefix(ADAM_V) {
                v.insert(rest.to_string(), typed(t))?;
            } else {
                params.insert(name.clone(), typed(t))?;
            }
        }
        let specs = crate::networks::param_specs(&model);
        params.check_specs(&specs)?;
        let adam = if m.is_empty() && v.is_empty() {
            AdamState::new(&params)
        } else {
            m.check_specs(&specs)?;
            v.check_specs(&specs)?;
            AdamState { m, v, step: ckpt.step }
        };
        Ok(Self { model, params, adam: AdamState { step: ckpt.step, ..adam }, rng: Xoshiro256::from_bytes(ckpt.rng) })
    }
}

/// Parameters and model config from a checkpoint file, for inference.
pub fn load_model<T: Real>(path: &Path) -> Result<(ModelConfig, ParamSet<T>)> {
    let state = TrainState::<T>::from_checkpoint(&load_checkpoint(path)?)?;
    Ok((state.model, state.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::init_params;
    use crate::sql::toy_config;

    fn state() -> TrainState<f32> {
        let model = toy_config();
        let params = init_params(&model, 5).unwrap();
        let adam = AdamState::new(&params);
        TrainState { model, params, adam, rng: Xoshiro256::seed_from(9) }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = state();
        let bytes = s.to_checkpoint().to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck.to_bytes().unwrap(), bytes);
        assert_eq!(TrainState::<f32>::from_checkpoint(&ck).unwrap(), s);
    }

    #[test]
    fn mixed_dtypes_round_trip() {
        let ck = Checkpoint {
            tensors: vec![
                ("a".into(), StoredTensor::F32(Tensor::from_fn(&[2, 3], |i| i as f32 * 0.1))),
                ("b".into(), StoredTensor::F64(Tensor::from_fn(&[4], |i| (i as f64).sqrt()))),
                ("c".into(), StoredTensor::F64(Tensor::scalar(f64::MIN_POSITIVE))),
            ],
            step: 77,
            rng: [3; 32],
        };
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap(), ck);
    }

    #[test]
    fn header_layout() {
        let ck = Checkpoint { tensors: vec![("w".into(), StoredTensor::F32(Tensor::ones(&[2])))], step: 5, rng: [0; 32] };
        let b = ck.to_bytes().unwrap();
        assert_eq!(&b[..4], b"SQLD");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..14], &1u16.to_le_bytes());
        assert_eq!(b[14], b'w');
        assert_eq!((b[15], b[16]), (0, 1));
        assert_eq!(&b[17..21], &2u32.to_le_bytes());
        assert_eq!(&b[21..29], &8u64.to_le_bytes());
        assert_eq!(b.len(), 29 + 8 + 8 + 32);
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = state().to_checkpoint().to_bytes().unwrap();
        for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = state().to_checkpoint().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::UnsupportedVersion { found: 2, expected: 1 })));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format { field: "magic", .. })));
    }

    #[test]
    fn byte_length_mismatch_is_named() {
        let ck = Checkpoint { tensors: vec![("w".into(), StoredTensor::F32(Tensor::ones(&[2])))], step: 0, rng: [0; 32] };
        let mut b = ck.to_bytes().unwrap();
        b[21] = 12;
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Format { field: "byte_length", .. })));
    }

    #[test]
    fn model_config_round_trip() {
        let cfg = ModelConfig { query_mode: QueryMode::Fine, bin_mode: BinMode::Regression, d_min: 0.25, ..Default::default() };
        assert_eq!(decode_model_config(&encode_model_config(&cfg)).unwrap(), cfg);
    }
}
