//! Binary checkpoint format.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic      8 bytes  "IOVSIMQN"
//! version    u32      1
//! obs_dim    u32
//! n_dims     u32      number of entries that follow
//! dims       u32 * n_dims   hidden widths..., action count
//! params     f64 * N  trunk layers, value head, advantage head;
//!                     per layer the inputs x outputs weight matrix
//!                     row-major, then the bias vector
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::net::QNetwork;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

pub const MAGIC: &[u8; 8] = b"IOVSIMQN";
pub const VERSION: u32 = 1;

pub fn to_bytes(net: &QNetwork) -> Vec<u8> {
    let mut dims = net.hidden_dims();
    dims.push(net.num_actions());
    let mut out = Vec::with_capacity(20 + 4 * dims.len() + 8 * net.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in net.params_flat() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<QNetwork> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version.to_string(),
            supported: VERSION.to_string(),
        });
    }
    let obs_dim = r.u32("obs_dim")? as usize;
    let n_dims = r.u32("layer count")? as usize;
    if obs_dim == 0 || !(2..=64).contains(&n_dims) {
        return Err(Error::Format(format!(
            "implausible header: obs_dim {obs_dim}, {n_dims} dims"
        )));
    }
    let dims: Vec<usize> = (0..n_dims)
        .map(|_| r.u32("layer dims").map(|d| d as usize))
        .collect::<Result<_>>()?;
    if dims.contains(&0) {
        return Err(Error::Format("zero-width layer".into()));
    }
    let (hidden, actions) = dims.split_at(n_dims - 1);
    // shapes only; every parameter is overwritten below
    let mut net = QNetwork::new(obs_dim, hidden, actions[0], &mut stream(0, Stream::Init, 0));
    let n = net.num_params();
    let raw = r.take(8 * n, "parameters")?;
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameters",
            buf.len() - r.pos
        )));
    }
    net.set_params_flat(&params)?;
    Ok(net)
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_checkpoint(net: &QNetwork, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&to_bytes(net))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<QNetwork> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> QNetwork {
        QNetwork::new(6, &[5, 4], 3, &mut stream(1, Stream::Init, 0))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let a = net();
        save_checkpoint(&a, &path).unwrap();
        let b = load_checkpoint(&path).unwrap();
        assert_eq!(a, b);
        let x = [0.1, 0.7, 0.3, 0.0, 1.0, 0.5];
        let qa: Vec<u64> = a.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
        let qb: Vec<u64> = b.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(qa, qb);
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let bytes = to_bytes(&net());
        for cut in [0, 7, 12, 24, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn other_versions_are_unsupported() {
        let mut bytes = to_bytes(&net());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(from_bytes(&bytes), Err(Error::UnsupportedVersion { .. })));
    }
}
