//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic    b"TSPM"
//! version  u32
//! n_nets   u32
//! per network:
//!   arch u8, activation u8, in_dim u32, hidden u32, depth u32, out_dim u32
//!   vocab_len u32, vocab [u32; vocab_len]
//!   n_tensors u32
//!   per tensor: rows u32, cols u32, data [f64; rows * cols]
//! ```
//!
//! Tensors appear in declaration order (see [`MlpParams`]).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Arch, MlpParams, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSPM";
pub const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("dimension exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

pub fn write_networks<W: Write>(w: &mut W, nets: &[&MlpParams]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_u32(w, nets.len())?;
    for net in nets {
        w.write_all(&[net.arch.tag(), net.activation.tag()])?;
        for d in [net.in_dim, net.hidden, net.depth, net.out_dim] {
            put_u32(w, d)?;
        }
        put_u32(w, net.vocab.len())?;
        for &c in &net.vocab {
            w.write_all(&c.to_le_bytes())?;
        }
        put_u32(w, net.tensors.len())?;
        for t in &net.tensors {
            put_u32(w, t.rows)?;
            put_u32(w, t.cols)?;
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_networks<R: Read>(r: R) -> Result<Vec<MlpParams>> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a TSPM checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.usize()?;
    let mut nets = Vec::with_capacity(n.min(16));
    for _ in 0..n {
        let arch = Arch::from_tag(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown arch tag".into()))?;
        let activation =
            Activation::from_tag(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown activation tag".into()))?;
        let (in_dim, hidden, depth, out_dim) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
        let vocab_len = r.usize()?;
        let vocab = (0..vocab_len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n_tensors = r.usize()?;
        let mut tensors = Vec::with_capacity(n_tensors.min(64));
        for _ in 0..n_tensors {
            let (rows, cols) = (r.usize()?, r.usize()?);
            let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor { rows, cols, data });
        }
        let net = MlpParams {
            arch,
            activation,
            in_dim,
            hidden,
            depth,
            out_dim,
            vocab,
            tensors,
        };
        validate_layout(&net)?;
        nets.push(net);
    }
    Ok(nets)
}

/// Checks that the stored tensors chain from `in_dim` to `out_dim`.
fn validate_layout(net: &MlpParams) -> Result<()> {
    let bad = |msg: &str| Err(Error::Checkpoint(format!("{} network: {msg}", net.arch)));
    if net.arch == Arch::Table {
        if net.tensors.len() != 1 || net.tensors[0].shape() != (net.vocab.len() + 1, net.out_dim) {
            return bad("table shape does not match vocabulary");
        }
        return Ok(());
    }
    if net.tensors.len() % 2 != 0 || net.tensors.is_empty() {
        return bad("expected weight/bias pairs");
    }
    let mut fan_in = net.in_dim;
    for pair in net.tensors.chunks(2) {
        let (w, b) = (&pair[0], &pair[1]);
        if w.cols != fan_in || b.shape() != (1, w.rows) {
            return bad("layer shapes do not chain");
        }
        fan_in = w.rows;
    }
    if fan_in != net.out_dim {
        return bad("last layer does not produce out_dim");
    }
    Ok(())
}

pub fn save(path: &Path, nets: &[&MlpParams]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_networks(&mut w, nets)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<MlpParams>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_networks(BufReader::new(f))
}
