use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Sample, NUM_CLASSES};
use crate::bytes::Reader;
use crate::error::{Error, Result};

pub const SAMPLE_MAGIC: &[u8; 7] = b"BRUSMP1";

/// Layout: magic, height and width (u32), image (f32), labels (u8),
/// patient id (u32), seed (u64). Little-endian throughout.
pub fn encode_sample(s: &Sample) -> Vec<u8> {
    let mut out = Vec::with_capacity(27 + s.image.len() * 5);
    out.extend_from_slice(SAMPLE_MAGIC);
    out.extend_from_slice(&(s.height as u32).to_le_bytes());
    out.extend_from_slice(&(s.width as u32).to_le_bytes());
    for v in &s.image {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&s.labels);
    out.extend_from_slice(&s.patient.to_le_bytes());
    out.extend_from_slice(&s.seed.to_le_bytes());
    out
}

pub fn decode_sample(bytes: &[u8]) -> Result<Sample> {
    let mut r = Reader::new(bytes);
    if r.take(SAMPLE_MAGIC.len())? != SAMPLE_MAGIC {
        return Err(Error::Format("not a sample file (bad magic)".into()));
    }
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let n = height.checked_mul(width).ok_or_else(|| Error::Format("sample extents overflow".into()))?;
    let image: Vec<f32> = r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let labels = r.take(n)?.to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::Format(format!("label {bad} out of range")));
    }
    let patient = r.u32()?;
    let seed = r.u64()?;
    r.finish()?;
    Ok(Sample { height, width, image, labels, patient, seed })
}

pub fn sample_file_name(patient: u32, index: usize) -> String {
    format!("p{patient:03}_s{index:03}.brusmp")
}

pub fn write_sample(path: &Path, s: &Sample) -> Result<()> {
    fs::write(path, encode_sample(s))?;
    Ok(())
}

pub fn read_sample(path: &Path) -> Result<Sample> {
    decode_sample(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Sample files of a dataset directory, sorted by name.
pub fn list_samples(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "brusmp"))
        .collect();
    files.sort();
    Ok(files)
}

/// Binary graymap of 8-bit values.
pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != height * width {
        return Err(Error::config(format!("{} pixels for a {height}x{width} image", pixels.len())));
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenParams};

    #[test]
    fn round_trip() {
        let mut s = generate(&GenParams { seed: 4, ..GenParams::desk() }).unwrap();
        s.patient = 7;
        let bytes = encode_sample(&s);
        assert_eq!(&bytes[..7], b"BRUSMP1");
        assert_eq!(bytes.len(), 7 + 8 + 128 * 128 * 5 + 12);
        assert_eq!(decode_sample(&bytes).unwrap(), s);
        assert!(decode_sample(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_sample(&bad).is_err());
    }

    #[test]
    fn names() {
        assert_eq!(sample_file_name(3, 12), "p003_s012.brusmp");
    }
}
