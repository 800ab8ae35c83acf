//! `NSM1` checkpoints, all little-endian:
//!
//! ```text
//! "NSM1"
//! u32 D, K, C, channels, kernel, blocks, n_dilations, dilations[n_dilations]
//! f32 input mean[D], f32 input inverse std[D]
//! f32 tensors in ParamSet::names() order, each row-major:
//!     bottleneck.weight (channels × D), bottleneck.bias (channels),
//!     block{b}.layer{l}.weight (channels × kernel·channels), .bias (channels),
//!     out.weight (K × channels), out.bias (K), theta (C × K)
//! u64 byte length of the embedded dictionary, then the NSD1 file verbatim
//! ```

use std::fs;
use std::path::Path;

use super::{Architecture, InputNorm, ModelError, ParamSet, SegModel};
use crate::nmf::{decode_dictionary, encode_dictionary};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"NSM1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Format(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s<T: Scalar>(out: &mut Vec<u8>, values: impl IntoIterator<Item = T>) {
    for v in values {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
}

pub fn encode_model<T: Scalar>(model: &SegModel<T>) -> Result<Vec<u8>, ModelError> {
    let a = &model.arch;
    let mut out = Vec::with_capacity(64 + 4 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    for v in [a.input_dim, a.components, a.classes, a.channels, a.kernel, a.blocks, a.dilations.len()] {
        put_u32(&mut out, v)?;
    }
    for &d in &a.dilations {
        put_u32(&mut out, d)?;
    }
    put_f32s(&mut out, model.input_norm.mean.iter().copied());
    put_f32s(&mut out, model.input_norm.inv_std.iter().copied());
    for tensor in model.params.tensors() {
        put_f32s(&mut out, tensor.iter().copied());
    }
    let dict = encode_dictionary(&model.dictionary, model.dictionary_meta)?;
    out.extend_from_slice(&(dict.len() as u64).to_le_bytes());
    out.extend_from_slice(&dict);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s<T: Scalar>(&mut self, dst: &mut [T]) -> Result<(), ModelError> {
        let n = dst
            .len()
            .checked_mul(4)
            .ok_or_else(|| ModelError::Format("tensor size overflow".into()))?;
        let raw = self.take(n)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = T::lit(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        Ok(())
    }
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<SegModel<T>, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let (d, k, c, channels, kernel, blocks, n_dil) =
        (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    if n_dil > 64 || blocks > 1024 {
        return Err(ModelError::Format(format!(
            "implausible architecture: {blocks} blocks, {n_dil} dilations"
        )));
    }
    let dilations = (0..n_dil).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let arch = Architecture {
        input_dim: d,
        components: k,
        classes: c,
        channels,
        kernel,
        blocks,
        dilations,
    };
    arch.validate()
        .map_err(|e| ModelError::Format(format!("invalid architecture header: {e}")))?;
    let declared = arch.parameter_count();
    if declared.saturating_mul(4) > bytes.len() {
        return Err(ModelError::Format(format!(
            "header declares {declared} parameters but file has {} bytes",
            bytes.len()
        )));
    }

    let mut norm = InputNorm::<T>::identity(d);
    r.f32s(norm.mean.as_slice_mut().unwrap())?;
    r.f32s(norm.inv_std.as_slice_mut().unwrap())?;
    let mut params = ParamSet::<T>::zeros(&arch);
    for tensor in params.tensors_mut() {
        r.f32s(tensor)?;
    }
    let dict_len = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let dict_len = usize::try_from(dict_len)
        .map_err(|_| ModelError::Format("dictionary length overflow".into()))?;
    let blob = r.take(dict_len)?;
    let (dictionary, dictionary_meta, used) = decode_dictionary::<T>(blob)?;
    if used != blob.len() {
        return Err(ModelError::Format("dictionary blob length mismatch".into()));
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if dictionary.components() != k {
        return Err(ModelError::Format(format!(
            "embedded dictionary has K={}, header says K={k}",
            dictionary.components()
        )));
    }
    Ok(SegModel {
        arch,
        input_norm: norm,
        params,
        dictionary,
        dictionary_meta,
    })
}

pub fn write_model<T: Scalar>(model: &SegModel<T>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn read_model<T: Scalar>(path: impl AsRef<Path>) -> Result<SegModel<T>, ModelError> {
    decode_model(&fs::read(path)?)
}
