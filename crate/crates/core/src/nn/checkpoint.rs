//! Binary checkpoint: magic `VGOS`, format version `u32`, five `u32` layer
//! sizes (input, hidden, feature, classes, head hidden), then every
//! parameter as a little-endian `f64` in storage order. The activation and
//! run configuration travel in a JSON sidecar written by the caller.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, NetDims, TinyNet};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VGOS";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 5 * 4;

pub fn write_checkpoint<T: Real, W: Write>(net: &TinyNet<T>, mut w: W) -> Result<()> {
    let d = net.dims();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * net.num_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for size in [d.input, d.hidden, d.feature, d.classes, d.head_hidden] {
        let size = u32::try_from(size).map_err(|_| Error::Format("layer size exceeds u32".into()))?;
        buf.extend_from_slice(&size.to_le_bytes());
    }
    for v in net.params() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R, activation: Activation) -> Result<TinyNet<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing VGOS magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { needed: HEADER_LEN, found: bytes.len() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let version = word(0);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let dims = NetDims {
        input: word(1) as usize,
        hidden: word(2) as usize,
        feature: word(3) as usize,
        classes: word(4) as usize,
        head_hidden: word(5) as usize,
    };
    dims.validate()?;
    let needed = HEADER_LEN + 8 * dims.num_params();
    if bytes.len() < needed {
        return Err(Error::Truncated { needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let params = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    TinyNet::from_params(dims, activation, params)
}

pub fn save_checkpoint<T: Real>(net: &TinyNet<T>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_checkpoint(net, &mut f)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path, activation: Activation) -> Result<TinyNet<T>> {
    read_checkpoint(fs::File::open(path)?, activation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn round_trip() {
        let dims = NetDims { input: 3, hidden: 4, feature: 5, classes: 2, head_hidden: 16 };
        let net = TinyNet::<f64>::new(dims, Activation::Relu, &mut RandomSource::new(1)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"VGOS");
        assert_eq!(buf.len(), HEADER_LEN + 8 * net.num_params());
        let back: TinyNet<f64> = read_checkpoint(&buf[..], Activation::Relu).unwrap();
        assert_eq!(back, net);
        assert!(matches!(
            read_checkpoint::<f64, _>(&buf[..buf.len() - 1], Activation::Relu),
            Err(Error::Truncated { .. })
        ));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_checkpoint::<f64, _>(&bad[..], Activation::Relu), Err(Error::Version { .. })));
    }
}
