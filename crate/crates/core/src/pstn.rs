//! The `PSTN` binary tensor format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "PSTN"
//! version  1 byte   = 1
//! order    1 byte   m (1..=255)
//! dims     m x u64
//! flags    1 byte   bit 0: mask block present
//! values   prod(dims) x f64, row-major
//! mask     prod(dims) x u8 (0/1), only when flagged
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

const MAGIC: [u8; 4] = *b"PSTN";
const VERSION: u8 = 1;
const FLAG_MASK: u8 = 0b0000_0001;

pub fn write_tensor<W: Write>(w: &mut W, t: &DenseTensor) -> Result<()> {
    if t.order() > u8::MAX as usize {
        return Err(Error::Format(format!(
            "order {} exceeds the format limit of 255",
            t.order()
        )));
    }
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, t.order() as u8])?;
    for &d in t.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let flags = if t.mask().is_some() { FLAG_MASK } else { 0 };
    w.write_all(&[flags])?;
    for &v in t.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(mask) = t.mask() {
        let bytes: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<DenseTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format("bad magic, not a PSTN file".into()));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    if head[0] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[0])));
    }
    let order = head[1] as usize;
    if order == 0 {
        return Err(Error::Format("zero tensor order".into()));
    }
    let mut dims = Vec::with_capacity(order);
    let mut buf8 = [0u8; 8];
    for _ in 0..order {
        r.read_exact(&mut buf8)?;
        let d = u64::from_le_bytes(buf8);
        if d == 0 {
            return Err(Error::Format("zero dimension".into()));
        }
        dims.push(usize::try_from(d).map_err(|_| Error::Format("dimension overflow".into()))?);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("entry count overflow".into()))?;
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags)?;
    if flags[0] & !FLAG_MASK != 0 {
        return Err(Error::Format(format!("unknown flags {:#x}", flags[0])));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf8)?;
        values.push(f64::from_le_bytes(buf8));
    }
    if flags[0] & FLAG_MASK != 0 {
        let mut bytes = vec![0u8; n];
        r.read_exact(&mut bytes)?;
        let mask = bytes
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("bad mask byte {other}"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        DenseTensor::with_mask(dims, values, mask)
    } else {
        DenseTensor::new(dims, values)
    }
}

pub fn write_tensor_file<P: AsRef<Path>>(path: P, t: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor_file<P: AsRef<Path>>(path: P) -> Result<DenseTensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_with_mask() {
        let t = DenseTensor::with_mask(
            vec![2, 3],
            vec![1.0, -2.5, 3.25, 0.0, 5.5, -6.125],
            vec![true, false, true, true, false, true],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn header_layout_is_stable() {
        let t = DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[0..4], b"PSTN");
        assert_eq!(buf[4], 1); // version
        assert_eq!(buf[5], 1); // order
        assert_eq!(&buf[6..14], &2u64.to_le_bytes());
        assert_eq!(buf[14], 0); // no mask
        assert_eq!(&buf[15..23], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 15 + 16);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_tensor(&mut &b"XXXX"[..]).is_err());
        let t = DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf[4] = 9; // bad version
        assert!(read_tensor(&mut buf.as_slice()).is_err());
        let mut buf2 = Vec::new();
        write_tensor(&mut buf2, &t).unwrap();
        buf2.truncate(buf2.len() - 3); // short read
        assert!(read_tensor(&mut buf2.as_slice()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_roundtrip_bit_exact(
            dims in proptest::collection::vec(1usize..4, 1..4),
            seed in 0u64..1000,
            masked in proptest::bool::ANY,
        ) {
            use rand::Rng;
            let mut rng = crate::rng::derive_rng(seed, &[9]);
            let n: usize = dims.iter().product();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e6..1e6)).collect();
            let t = if masked {
                let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
                DenseTensor::with_mask(dims, values, mask).unwrap()
            } else {
                DenseTensor::new(dims, values).unwrap()
            };
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
