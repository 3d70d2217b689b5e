//! `FAF1` binary dataset container and its JSON manifest.
//!
//! Layout (little-endian): `b"FAF1"`, version `u16`, record count `u64`, then per
//! record `rows u16`, `cols u16`, image `u8[rows·cols·3]`, depth `f32[rows·cols]`,
//! force `f32[3]`, pose `f32[6]`, indenter `u16`, profile `u16`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::sample::{Dataset, TactileSample};
use crate::error::{FafError, Result};
use crate::sensor::IndenterId;

pub const MAGIC: &[u8; 4] = b"FAF1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

pub fn encode(samples: &[TactileSample]) -> Vec<u8> {
    let body: usize = samples.iter().map(|s| 4 + s.pixels() * 7 + 36 + 4).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.rows.to_le_bytes());
        out.extend_from_slice(&s.cols.to_le_bytes());
        out.extend_from_slice(&s.image);
        for v in s.depth.iter().chain(&s.force).chain(&s.pose) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&s.indenter.to_le_bytes());
        out.extend_from_slice(&s.profile.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos..self.pos.saturating_add(n)) {
            Some(s) if self.pos.checked_add(n).is_some() => {
                self.pos += n;
                Ok(s)
            }
            _ => Err(FafError::Format {
                offset: self.pos as u64,
                reason: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            }),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).unwrap_or(usize::MAX), what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<TactileSample>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(FafError::Format {
            offset: 0,
            reason: "bad magic, expected FAF1".into(),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(FafError::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = u64::from_le_bytes(r.take(8, "record count")?.try_into().unwrap());
    let mut samples = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let rows = r.u16("rows")?;
        let cols = r.u16("cols")?;
        let px = rows as usize * cols as usize;
        let image = r.take(px * 3, "image")?.to_vec();
        let depth = r.f32s(px, "depth")?;
        let force: [f32; 3] = r.f32s(3, "force")?.try_into().unwrap();
        let pose: [f32; 6] = r.f32s(6, "pose")?.try_into().unwrap();
        let indenter = r.u16("indenter id")?;
        let profile = r.u16("profile id")?;
        samples.push(TactileSample {
            rows,
            cols,
            image,
            depth,
            force,
            pose,
            indenter,
            profile,
        });
    }
    if r.pos != bytes.len() {
        return Err(FafError::Format {
            offset: r.pos as u64,
            reason: format!("{} trailing bytes after {count} records", bytes.len() - r.pos),
        });
    }
    Ok(samples)
}

/// Sidecar summary written next to every container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u16,
    pub count: usize,
    pub profiles: Vec<String>,
    pub per_indenter: BTreeMap<String, usize>,
    pub per_profile: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn describe(data: &Dataset) -> Self {
        let mut per_indenter = BTreeMap::new();
        let mut per_profile = BTreeMap::new();
        for s in &data.samples {
            let ind = s.indenter_id().map_or_else(|| format!("#{}", s.indenter), |i| i.name().to_string());
            *per_indenter.entry(ind).or_default() += 1;
            let prof = data.profile_name(s).map_or_else(|| format!("#{}", s.profile), str::to_string);
            *per_profile.entry(prof).or_default() += 1;
        }
        Self {
            format: "FAF1".into(),
            version: VERSION,
            count: data.len(),
            profiles: data.profiles.clone(),
            per_indenter,
            per_profile,
        }
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Write the container and its manifest.
pub fn store(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode(&data.samples))?;
    let manifest = serde_json::to_string_pretty(&Manifest::describe(data)).expect("manifest serializes");
    std::fs::write(manifest_path(path), manifest + "\n")?;
    Ok(())
}

/// Read a container; profile names come from the manifest when present.
pub fn load(path: &Path) -> Result<Dataset> {
    let samples = decode(&std::fs::read(path)?)?;
    let mpath = manifest_path(path);
    let profiles = if mpath.exists() {
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&mpath)?)
            .map_err(|e| FafError::Config(format!("{}: {e}", mpath.display())))?;
        if m.count != samples.len() {
            return Err(FafError::Config(format!(
                "manifest lists {} records, container has {}",
                m.count,
                samples.len()
            )));
        }
        m.profiles
    } else {
        crate::sensor::builtin_names()
    };
    Ok(Dataset { profiles, samples })
}

/// Per-indenter name lookup used by reports.
pub fn indenter_name(code: u16) -> String {
    IndenterId::from_code(code).map_or_else(|| format!("#{code}"), |i| i.name().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TactileSample {
        TactileSample {
            rows: 2,
            cols: 3,
            image: (0..18).collect(),
            depth: vec![0.0, -0.0, 1.5, f32::MIN_POSITIVE, 2.25, 0.125],
            force: [0.04, -0.08, 3.2],
            pose: [1.0, -2.0, 0.0, 5.0, -7.5, 170.0],
            indenter: 6,
            profile: 2,
        }
    }

    #[test]
    fn empty_is_header_only() {
        let bytes = encode(&[]);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_record_round_trip_is_byte_identical() {
        let bytes = encode(&[sample()]);
        let back = decode(&bytes).unwrap();
        assert!(back[0].bit_eq(&sample()));
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let mut bytes = encode(&[sample()]);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(FafError::Format { offset: 0, .. })));
        let mut bytes = encode(&[sample()]);
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(FafError::Format { offset: 4, .. })));
        let bytes = encode(&[sample()]);
        let cut = &bytes[..bytes.len() - 3];
        match decode(cut) {
            Err(FafError::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 4),
            other => panic!("{other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(FafError::Format { .. })));
    }
}
