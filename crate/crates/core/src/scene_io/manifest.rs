use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version stamped into every JSON artifact written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Inclusive frame interval `[start, end]`, serialized as a 2-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct FrameRange {
    pub start: u32,
    pub end: u32,
}

impl From<[u32; 2]> for FrameRange {
    fn from([start, end]: [u32; 2]) -> Self {
        Self { start, end }
    }
}

impl From<FrameRange> for [u32; 2] {
    fn from(r: FrameRange) -> Self {
        [r.start, r.end]
    }
}

impl FrameRange {
    pub fn new(start: u32, end: u32) -> Result<Self> {
        if start > end {
            return Err(Error::arg(format!("frame range start {start} > end {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: u32) -> bool {
        (self.start..=self.end).contains(&frame)
    }

    pub fn contains_range(&self, other: &FrameRange) -> bool {
        self.contains(other.start) && self.contains(other.end)
    }

    pub fn intersect(&self, other: &FrameRange) -> Option<FrameRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(FrameRange { start, end })
    }
}

/// One block of a partitioned flight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockManifest {
    pub block_id: u32,
    pub flight_id: u32,
    pub frame_range: FrameRange,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_prev: Option<FrameRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_next: Option<FrameRange>,
}

impl BlockManifest {
    pub fn validate(&self) -> Result<()> {
        if self.frame_range.start > self.frame_range.end {
            return Err(Error::data(format!("block {}: inverted frame range", self.block_id)));
        }
        for (label, ov) in [("prev", &self.overlap_prev), ("next", &self.overlap_next)] {
            if let Some(ov) = ov {
                if ov.start > ov.end || !self.frame_range.contains_range(ov) {
                    return Err(Error::data(format!(
                        "block {}: overlap_{label} {:?} outside frame range {:?}",
                        self.block_id, ov, self.frame_range
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pretty JSON with a trailing newline; output is byte-stable for equal values.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}
