//! Binary file of packed sequences.
//!
//! Layout, all integers little-endian: magic `MMSQ`, `u32` version, `u64`
//! record count, then per record a header `L, slots, pad, images` (`u32`
//! each), `L` ids as `u32`, the target mask as an LSB-first bitset of
//! `ceil(L / 8)` bytes, the slot table (`start, len, image_index` as
//! `u32`), and the images (`height, width` as `u32`, then `h·w·3` `f32`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::image::{ImageTensor, CHANNELS};
use crate::stream::{ImageSlot, PackedSequence};

const MAGIC: &[u8; 4] = b"MMSQ";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| CoreError::Format(format!("value {x} does not fit in u32")))?;
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn truncated(e: std::io::Error) -> CoreError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        CoreError::Format("file ends inside a record".into())
    } else {
        CoreError::Io(e)
    }
}

pub fn write_sequences(w: &mut impl Write, seqs: &[PackedSequence]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(seqs.len() as u64).to_le_bytes())?;
    for s in seqs {
        put_u32(w, s.ids.len())?;
        put_u32(w, s.image_slots.len())?;
        put_u32(w, s.pad)?;
        put_u32(w, s.images.len())?;
        for &id in &s.ids {
            w.write_all(&id.to_le_bytes())?;
        }
        let mut bits = vec![0u8; s.ids.len().div_ceil(8)];
        for (i, _) in s.target_mask.iter().enumerate().filter(|(_, &m)| m) {
            bits[i / 8] |= 1 << (i % 8);
        }
        w.write_all(&bits)?;
        for slot in &s.image_slots {
            put_u32(w, slot.start)?;
            put_u32(w, slot.len)?;
            put_u32(w, slot.image_index)?;
        }
        for img in &s.images {
            put_u32(w, img.height())?;
            put_u32(w, img.width())?;
            for v in img.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_sequences(r: &mut impl Read) -> Result<Vec<PackedSequence>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(CoreError::Format("not a sequence file".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION as usize {
        return Err(CoreError::Format(format!("unsupported version {version}")));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(truncated)?;
    let count = u64::from_le_bytes(count);
    let mut out = Vec::new();
    for _ in 0..count {
        let len = get_u32(r)?;
        let n_slots = get_u32(r)?;
        let pad = get_u32(r)?;
        let n_images = get_u32(r)?;
        if pad > len {
            return Err(CoreError::Format(format!("pad {pad} exceeds length {len}")));
        }
        let ids = (0..len).map(|_| get_u32(r).map(|x| x as u32)).collect::<Result<Vec<_>>>()?;
        let mut bits = vec![0u8; len.div_ceil(8)];
        r.read_exact(&mut bits).map_err(truncated)?;
        let target_mask = (0..len).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        let mut image_slots = Vec::with_capacity(n_slots);
        for _ in 0..n_slots {
            let slot = ImageSlot {
                start: get_u32(r)?,
                len: get_u32(r)?,
                image_index: get_u32(r)?,
            };
            if slot.end() > len || slot.image_index >= n_images {
                return Err(CoreError::Format(format!("slot {slot:?} out of range")));
            }
            image_slots.push(slot);
        }
        let mut images = Vec::with_capacity(n_images);
        for _ in 0..n_images {
            let h = get_u32(r)?;
            let w = get_u32(r)?;
            let mut raw = vec![0u8; h * w * CHANNELS * 4];
            r.read_exact(&mut raw).map_err(truncated)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            images.push(ImageTensor::new(h, w, data)?);
        }
        out.push(PackedSequence {
            ids,
            image_slots,
            images,
            target_mask,
            pad,
        });
    }
    Ok(out)
}

pub fn save(path: &Path, seqs: &[PackedSequence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sequences(&mut w, seqs)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<PackedSequence>> {
    read_sequences(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{encode_document, pack_full_sentences, MultimodalDocument, Segment};

    fn sample() -> Vec<PackedSequence> {
        let img = ImageTensor::from_fn(3, 5, |y, x| [y as f32 / 3.0, x as f32 / 7.0, 0.123_456_7]).unwrap();
        let docs = [
            MultimodalDocument::new([Segment::Text("one".into()), Segment::Image(img.clone())]).unwrap(),
            MultimodalDocument::text("two words").unwrap(),
            MultimodalDocument::new([Segment::Image(img), Segment::Text("end".into())]).unwrap(),
        ];
        let units = docs.iter().map(|d| encode_document(d, 3).unwrap());
        pack_full_sentences(units, 13).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let seqs = sample();
        let mut buf = Vec::new();
        write_sequences(&mut buf, &seqs).unwrap();
        let back = read_sequences(&mut buf.as_slice()).unwrap();
        assert_eq!(back, seqs);
        let mut again = Vec::new();
        write_sequences(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn truncation_and_bad_magic() {
        let mut buf = Vec::new();
        write_sequences(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_sequences(&mut buf.as_slice()), Err(CoreError::Format(_))));
        assert!(matches!(read_sequences(&mut &b"NOPE"[..]), Err(CoreError::Format(_))));
    }
}
