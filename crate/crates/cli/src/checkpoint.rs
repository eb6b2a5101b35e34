//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `AJLK`, `u32` format version, `u32`
//! network count, then per network: `u32` name length and UTF-8 name,
//! `u32` layer count and `u64` layer widths, then the `f64` parameter
//! arrays in declaration order (`w0, b0, w1, b1, …, skip`). Activations
//! and the skip connection follow from the network's role name.

use std::fmt::Write as _;
use std::path::Path;

use aj_core::nets::{Activation, MlpParams};
use aj_core::tensor::Tensor;

use crate::CliError;

pub const MAGIC: &[u8; 4] = b"AJLK";
pub const VERSION: u32 = 1;

fn role_architecture(name: &str) -> Result<(Activation, Activation, bool), CliError> {
    match name {
        "compressor" => Ok((Activation::Relu, Activation::Identity, false)),
        "reconstructor" => Ok((Activation::Relu, Activation::Sigmoid, false)),
        "transmitter" | "receiver" => Ok((Activation::Relu, Activation::Identity, true)),
        other => Err(CliError::Checkpoint(format!("unknown network role `{other}`"))),
    }
}

pub fn encode(networks: &[(&str, &MlpParams)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(networks.len() as u32).to_le_bytes());
    for (name, net) in networks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(net.layer_dims.len() as u32).to_le_bytes());
        for &d in &net.layer_dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for t in net.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CliError::Checkpoint(format!(
                "truncated checkpoint: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| CliError::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, MlpParams)>, CliError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CliError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::Checkpoint(format!(
            "checkpoint format version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32()?;
    let mut nets = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| CliError::Checkpoint("network name is not UTF-8".into()))?;
        let (hidden, output, skip) = role_architecture(&name)?;
        let layers = r.u32()? as usize;
        if !(2..=64).contains(&layers) {
            return Err(CliError::Checkpoint(format!("`{name}` has {layers} layer widths")));
        }
        let dims = (0..layers)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if dims.iter().any(|&d| d == 0 || d > 1 << 24) {
            return Err(CliError::Checkpoint(format!("`{name}` has invalid layer widths {dims:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let tensor = |shape: Vec<usize>, data: Vec<f64>| {
            Tensor::new(shape, data).map_err(|e| CliError::Checkpoint(format!("`{name}`: {e}")))
        };
        for w in dims.windows(2) {
            weights.push(tensor(vec![w[1], w[0]], r.f64s(w[0] * w[1])?)?);
            biases.push(tensor(vec![w[1]], r.f64s(w[1])?)?);
        }
        let skip = if skip {
            let (i, o) = (dims[0], dims[dims.len() - 1]);
            Some(tensor(vec![o, i], r.f64s(i * o)?)?)
        } else {
            None
        };
        let net = MlpParams {
            layer_dims: dims,
            weights,
            biases,
            hidden_activation: hidden,
            output_activation: output,
            skip,
        };
        net.validate().map_err(|e| CliError::Checkpoint(format!("`{name}`: {e}")))?;
        nets.push((name, net));
    }
    if r.pos != bytes.len() {
        return Err(CliError::Checkpoint(format!(
            "{} trailing bytes after the last network",
            bytes.len() - r.pos
        )));
    }
    Ok(nets)
}

/// Human-readable listing of a checkpoint's networks and shapes.
pub fn sidecar(networks: &[(&str, &MlpParams)]) -> String {
    let mut s = format!("format AJLK version {VERSION}\n");
    for (name, net) in networks {
        let _ = writeln!(
            s,
            "{name}: dims {:?}, hidden {}, output {}",
            net.layer_dims,
            net.hidden_activation.name(),
            net.output_activation.name()
        );
        for (i, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
            let _ = writeln!(s, "  w{i} {:?}  b{i} {:?}", w.shape(), b.shape());
        }
        if let Some(k) = &net.skip {
            let _ = writeln!(s, "  skip {:?}", k.shape());
        }
    }
    s
}

pub fn save(path: &Path, networks: &[(&str, &MlpParams)]) -> Result<(), CliError> {
    std::fs::write(path, encode(networks)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    std::fs::write(path.with_extension("txt"), sidecar(networks))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Vec<(String, MlpParams)>, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
