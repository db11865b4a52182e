//! Binary epoch cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "MSDNEPOC"
//! version  u32      1
//! count    u64      number of epochs
//! count x { label u8 (stage code), 3000 x f32 samples }
//! ```

use std::io::{Read, Write};

use super::{IngestError, LabeledEpoch, Result};
use crate::StageLabel;

pub const CACHE_MAGIC: &[u8; 8] = b"MSDNEPOC";
pub const CACHE_VERSION: u32 = 1;
const EPOCH_SAMPLES: usize = 3000;

pub fn write_epoch_cache<W: Write>(mut w: W, epochs: &[LabeledEpoch]) -> Result<()> {
    if let Some(e) = epochs.iter().find(|e| e.samples.len() != EPOCH_SAMPLES) {
        return Err(IngestError::BadCache(format!(
            "epoch {} of {} has {} samples, cache holds {EPOCH_SAMPLES}",
            e.epoch_index,
            e.subject_id,
            e.samples.len()
        )));
    }
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(epochs.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(1 + 4 * EPOCH_SAMPLES);
    for e in epochs {
        buf.clear();
        buf.push(e.label.code());
        for v in &e.samples {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_epoch_cache<R: Read>(mut r: R) -> Result<Vec<(StageLabel, Vec<f32>)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(IngestError::BadCache("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CACHE_VERSION {
        return Err(IngestError::BadCache(format!("unsupported version {version}")));
    }
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let count = u64::from_le_bytes(long) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![0u8; 1 + 4 * EPOCH_SAMPLES];
    for i in 0..count {
        r.read_exact(&mut buf)
            .map_err(|e| IngestError::BadCache(format!("epoch {i} of {count}: {e}")))?;
        let label = StageLabel::from_code(buf[0])
            .ok_or_else(|| IngestError::BadCache(format!("epoch {i}: label byte {}", buf[0])))?;
        let samples = buf[1..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((label, samples));
    }
    Ok(out)
}
