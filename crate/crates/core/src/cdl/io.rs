//! Binary dictionary and code files plus key:value metadata sidecars.
//!
//! Dictionary: `"CDL1"`, then K, filter_h, filter_w as little-endian u32, then
//! K·D little-endian f64 in row-major order. Codes: `"CDZ1"`, then L, K,
//! padded_h, padded_w as u32, then L·K·Ñ f64.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::model::{CodeTensor, Dictionary};
use crate::error::{Error, Result};

const DICT_MAGIC: &[u8; 4] = b"CDL1";
const CODES_MAGIC: &[u8; 4] = b"CDZ1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format("file is truncated".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.bytes.len())))
        }
    }
}

pub fn encode_dictionary(dict: &Dictionary) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * dict.coeffs().len());
    out.extend_from_slice(DICT_MAGIC);
    put_u32(&mut out, dict.num_filters())?;
    put_u32(&mut out, dict.filter_h())?;
    put_u32(&mut out, dict.filter_w())?;
    put_f64s(&mut out, dict.coeffs());
    Ok(out)
}

pub fn decode_dictionary(bytes: &[u8]) -> Result<Dictionary> {
    let mut r = Reader { bytes };
    if r.take(4)? != DICT_MAGIC {
        return Err(Error::Format("not a dictionary file".into()));
    }
    let (k, h, w) = (r.u32()?, r.u32()?, r.u32()?);
    let coeffs = r.f64s(k * h * w)?;
    r.finish()?;
    Dictionary::new(k, h, w, coeffs)
}

pub fn encode_codes(codes: &CodeTensor, padded_h: usize, padded_w: usize) -> Result<Vec<u8>> {
    if padded_h * padded_w != codes.padded_len() {
        return Err(Error::DimensionMismatch {
            what: "padded grid",
            expected: codes.padded_len(),
            actual: padded_h * padded_w,
        });
    }
    let mut out = Vec::with_capacity(20 + 8 * codes.values().len());
    out.extend_from_slice(CODES_MAGIC);
    put_u32(&mut out, codes.num_images())?;
    put_u32(&mut out, codes.num_filters())?;
    put_u32(&mut out, padded_h)?;
    put_u32(&mut out, padded_w)?;
    put_f64s(&mut out, codes.values());
    Ok(out)
}

/// Returns the tensor with its padded grid shape.
pub fn decode_codes(bytes: &[u8]) -> Result<(CodeTensor, usize, usize)> {
    let mut r = Reader { bytes };
    if r.take(4)? != CODES_MAGIC {
        return Err(Error::Format("not a code file".into()));
    }
    let (l, k, ph, pw) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let values = r.f64s(l * k * ph * pw)?;
    r.finish()?;
    Ok((CodeTensor::new(l, k, ph * pw, values)?, ph, pw))
}

pub fn write_dictionary(path: &Path, dict: &Dictionary) -> Result<()> {
    fs::write(path, encode_dictionary(dict)?)?;
    Ok(())
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dictionary(&bytes)
}

pub fn write_codes(path: &Path, codes: &CodeTensor, padded_h: usize, padded_w: usize) -> Result<()> {
    fs::write(path, encode_codes(codes, padded_h, padded_w)?)?;
    Ok(())
}

pub fn read_codes(path: &Path) -> Result<(CodeTensor, usize, usize)> {
    decode_codes(&fs::read(path)?)
}

/// `key: value` lines in key order.
pub fn write_metadata(path: &Path, entries: &BTreeMap<String, String>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for (k, v) in entries {
        writeln!(f, "{k}: {v}")?;
    }
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            line.split_once(':')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Format(format!("bad metadata line: {line}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dictionary_round_trip() {
        let d = Dictionary::new(2, 1, 3, vec![0.1, -0.2, 0.3, 1.0, f64::MIN_POSITIVE, -0.0]).unwrap();
        let bytes = encode_dictionary(&d).unwrap();
        assert_eq!(&bytes[..4], b"CDL1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 6 * 8);
        assert_eq!(decode_dictionary(&bytes).unwrap(), d);
    }

    #[test]
    fn codes_round_trip() {
        let c = CodeTensor::new(2, 1, 6, (0..12).map(|i| i as f64 - 5.5).collect()).unwrap();
        let bytes = encode_codes(&c, 2, 3).unwrap();
        let (back, h, w) = decode_codes(&bytes).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back, c);
        assert!(encode_codes(&c, 3, 3).is_err());
    }

    #[test]
    fn corrupt_files_rejected() {
        let d = Dictionary::new(1, 2, 2, vec![0.5; 4]).unwrap();
        let bytes = encode_dictionary(&d).unwrap();
        assert!(decode_dictionary(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_dictionary(&extra).is_err());
        assert!(decode_dictionary(b"XXXX").is_err());
    }

    #[test]
    fn metadata_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.txt");
        let mut m = BTreeMap::new();
        m.insert("alpha".to_string(), "0.1".to_string());
        m.insert("scheme".to_string(), "multi-block".to_string());
        write_metadata(&path, &m).unwrap();
        assert_eq!(read_metadata(&path).unwrap(), m);
    }
}
