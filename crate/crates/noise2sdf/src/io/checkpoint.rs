//! Network checkpoints: magic, format version, architecture header,
//! little-endian f64 parameters, trailing CRC-32 over everything after the
//! magic.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{Activation, DenseLayer, SdfNetwork};

const MAGIC: &[u8; 4] = b"NSDF";
const VERSION: u32 = 1;

/// CRC-32 (IEEE 802.3, reflected).
fn crc32(bytes: &[u8]) -> u32 {
    const TABLE: [u32; 256] = crc_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        let idx = ((crc ^ b as u32) & 0xFF) as usize;
        crc = (crc >> 8) ^ TABLE[idx];
    }
    !crc
}

const fn crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

pub fn save_network(path: &Path, net: &SdfNetwork) -> Result<()> {
    let widths = net.widths();
    let mut body = Vec::new();
    body.extend_from_slice(&VERSION.to_le_bytes());
    body.push(net.hidden_activation.tag());
    body.push(net.output_activation.tag());
    body.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        body.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    for layer in &net.layers {
        for v in layer.w.iter().chain(&layer.b) {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&body);

    let mut out = Vec::with_capacity(4 + body.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CorruptFile("checkpoint truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_network(path: &Path) -> Result<SdfNetwork> {
    let data = fs::read(path)?;
    if data.len() < 8 || &data[..4] != MAGIC {
        return Err(Error::CorruptFile(format!(
            "{path:?} does not start with a checkpoint magic"
        )));
    }
    let mut r = Reader {
        data: &data,
        pos: 4,
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let hidden_tag = r.u8()?;
    let output_tag = r.u8()?;
    let n_widths = r.u32()? as usize;
    if !(2..=1024).contains(&n_widths) {
        return Err(Error::CorruptFile(format!(
            "implausible layer count {n_widths}"
        )));
    }
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(r.u32()? as usize);
    }
    if widths[0] != 3 || *widths.last().unwrap() != 1 || widths.iter().any(|&w| w == 0) {
        return Err(Error::CorruptFile(format!(
            "bad layer widths {widths:?}"
        )));
    }

    let hidden_activation = Activation::from_tag(hidden_tag)
        .ok_or_else(|| Error::CorruptFile(format!("unknown activation tag {hidden_tag}")))?;
    let output_activation = Activation::from_tag(output_tag)
        .ok_or_else(|| Error::CorruptFile(format!("unknown activation tag {output_tag}")))?;

    let mut layers = Vec::with_capacity(n_widths - 1);
    for pair in widths.windows(2) {
        let (in_dim, out_dim) = (pair[0], pair[1]);
        let mut w = Vec::with_capacity(out_dim * in_dim);
        for _ in 0..out_dim * in_dim {
            w.push(r.f64()?);
        }
        let mut b = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            b.push(r.f64()?);
        }
        layers.push(DenseLayer {
            w,
            b,
            in_dim,
            out_dim,
        });
    }

    let body_end = r.pos;
    let crc_stored = r.u32()?;
    if r.pos != data.len() {
        return Err(Error::CorruptFile("trailing bytes after checksum".into()));
    }
    let crc_actual = crc32(&data[4..body_end]);
    if crc_stored != crc_actual {
        return Err(Error::CorruptFile(format!(
            "checksum mismatch: stored {crc_stored:08x}, computed {crc_actual:08x}"
        )));
    }

    Ok(SdfNetwork {
        layers,
        hidden_activation,
        output_activation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc_known_vector() {
        // CRC-32 of "123456789" is 0xCBF43926.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }
}
