//! Binary archive of filtered documents.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "MMCA" | version u32 = 1 | count u64
//! per record: payload_len u32 | crc32(payload) u32 | payload
//! payload:    segment_count u32, then per segment
//!             0u8 | len u32 | utf-8 bytes            (text)
//!             1u8 | height u32 | width u32 | f32 × h·w·3  (image)
//! ```

use crate::error::{CorpusError, Result};
use mmlm_core::image::{ImageTensor, CHANNELS};
use mmlm_core::stream::{MultimodalDocument, Segment};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"MMCA";
pub const VERSION: u32 = 1;

fn encode(doc: &MultimodalDocument) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(doc.segments().len() as u32).to_le_bytes());
    for s in doc.segments() {
        match s {
            Segment::Text(t) => {
                out.push(0);
                out.extend_from_slice(&(t.len() as u32).to_le_bytes());
                out.extend_from_slice(t.as_bytes());
            }
            Segment::Image(img) => {
                out.push(1);
                out.extend_from_slice(&(img.height() as u32).to_le_bytes());
                out.extend_from_slice(&(img.width() as u32).to_le_bytes());
                for v in img.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn write_archive(mut w: impl Write, docs: &[MultimodalDocument]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(docs.len() as u64).to_le_bytes())?;
    for d in docs {
        let payload = encode(d);
        w.write_all(&(payload.len() as u32).to_le_bytes())?;
        w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
        w.write_all(&payload)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    record: u64,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(self.malformed("payload ends early"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn malformed(&self, msg: &str) -> CorpusError {
        CorpusError::Malformed {
            record: self.record,
            msg: msg.into(),
        }
    }
}

fn decode(payload: &[u8], record: u64) -> Result<MultimodalDocument> {
    let mut c = Cursor { buf: payload, record };
    let n = c.u32()?;
    let mut segs = Vec::new();
    for _ in 0..n {
        let tag = c.take(1)?[0];
        match tag {
            0 => {
                let len = c.u32()? as usize;
                let bytes = c.take(len)?;
                let text = std::str::from_utf8(bytes).map_err(|_| c.malformed("text is not utf-8"))?;
                segs.push(Segment::Text(text.to_string()));
            }
            1 => {
                let h = c.u32()? as usize;
                let w = c.u32()? as usize;
                let n = h
                    .checked_mul(w)
                    .and_then(|p| p.checked_mul(CHANNELS * 4))
                    .ok_or_else(|| c.malformed("image too large"))?;
                let data = c.take(n)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                let img = ImageTensor::new(h, w, data).map_err(|e| c.malformed(&e.to_string()))?;
                segs.push(Segment::Image(img));
            }
            t => return Err(c.malformed(&format!("unknown segment tag {t}"))),
        }
    }
    if !c.buf.is_empty() {
        return Err(c.malformed("bytes after the last segment"));
    }
    let doc = MultimodalDocument::new(segs).map_err(|e| c.malformed(&e.to_string()))?;
    // A canonical document re-encodes to the same payload; anything else
    // (adjacent or empty text) was not written by this module.
    if encode(&doc) != payload {
        return Err(c.malformed("segments are not in canonical form"));
    }
    Ok(doc)
}

pub fn read_archive(mut r: impl Read) -> Result<Vec<MultimodalDocument>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(CorpusError::BadMagic);
    }
    if buf.len() < 16 {
        return Err(CorpusError::TruncatedHeader);
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CorpusError::UnknownVersion(version));
    }
    let count = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let mut rest = &buf[16..];
    let mut docs = Vec::new();
    for record in 0..count {
        if rest.len() < 8 {
            return Err(CorpusError::Truncated { record });
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let stored = u32::from_le_bytes(rest[4..8].try_into().unwrap());
        rest = &rest[8..];
        if rest.len() < len {
            return Err(CorpusError::Truncated { record });
        }
        let (payload, tail) = rest.split_at(len);
        rest = tail;
        let computed = crc32fast::hash(payload);
        if computed != stored {
            return Err(CorpusError::Checksum { record, stored, computed });
        }
        docs.push(decode(payload, record)?);
    }
    if !rest.is_empty() {
        return Err(CorpusError::Trailing(count));
    }
    Ok(docs)
}

pub fn save(path: &Path, docs: &[MultimodalDocument]) -> Result<()> {
    let mut buf = Vec::new();
    write_archive(&mut buf, docs)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<MultimodalDocument>> {
    read_archive(fs::File::open(path)?)
}
