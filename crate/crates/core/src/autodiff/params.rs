use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use super::{Tape, Tensor, TensorError};

/// Named learnable tensors. Iteration is sorted by name, which keeps
/// initialisation, regularisation and updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    rng_seed: u64,
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), TensorError> {
        if self.params.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        self.params.insert(name.to_string(), tensor.with_requires_grad(true));
        Ok(())
    }

    /// Glorot-uniform matrix of shape `rows x cols`.
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        self.insert(name, glorot(rows, cols, rng))
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<(), TensorError> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// `sum ||theta||^2` over every parameter.
    pub fn squared_norm(&self) -> f64 {
        self.params.values().map(Tensor::sum_squares).sum()
    }

    /// Adds the gradients of every parameter bound on `tape` into the
    /// stored gradient buffers. Parameters absent from the tape receive a
    /// zero gradient so that an optimiser step sees a complete set.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (name, var) in tape.params() {
            if let (Some(t), Some(g)) = (self.params.get_mut(name), tape.grad(var)) {
                t.grad_mut().iter_mut().zip(g).for_each(|(s, x)| *s += x);
            }
        }
        for t in self.params.values_mut() {
            t.grad_mut();
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    /// Writes the container: magic, seed, step, then `(name, shape, values)`
    /// triples in name order. Values are stored as raw little-endian bits so
    /// a round trip is exact.
    pub fn write_checkpoint<W: Write>(&self, mut out: W, step: u64, metadata: &str) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&self.rng_seed.to_le_bytes())?;
        out.write_all(&step.to_le_bytes())?;
        write_bytes(&mut out, metadata.as_bytes())?;
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, t) in &self.params {
            write_bytes(&mut out, name.as_bytes())?;
            out.write_all(&(t.shape().len() as u64).to_le_bytes())?;
            for &d in t.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.values() {
                out.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a container written by [`ParameterStore::write_checkpoint`],
    /// returning the store, the step counter and the metadata blob.
    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(Self, u64, String), TensorError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io_err)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let seed = read_u64(&mut input)?;
        let step = read_u64(&mut input)?;
        let metadata = String::from_utf8(read_bytes(&mut input)?)
            .map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let count = read_u64(&mut input)?;
        let mut store = Self::new(seed);
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut input)?)
                .map_err(|e| TensorError::Checkpoint(e.to_string()))?;
            let rank = read_u64(&mut input)? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(&mut input).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let values = (0..n)
                .map(|_| read_u64(&mut input).map(f64::from_bits))
                .collect::<Result<Vec<_>, _>>()?;
            store.insert(&name, Tensor::new(shape, values)?)?;
        }
        Ok((store, step, metadata))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TGPARAM1";

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Checkpoint(e.to_string())
}

fn write_bytes<W: Write>(out: &mut W, bytes: &[u8]) -> std::io::Result<()> {
    out.write_all(&(bytes.len() as u64).to_le_bytes())?;
    out.write_all(bytes)
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, TensorError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf).map_err(io_err)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_bytes<R: Read>(input: &mut R) -> Result<Vec<u8>, TensorError> {
    let len = read_u64(input)? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf)
}

/// Uniform in `[-a, a]` with `a = sqrt(6 / (rows + cols))`.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::new(vec![rows, cols], values).expect("sized by construction")
}
