//! `mSnB` block partitioning: `m` flights split into `n` blocks in total,
//! each flight cut into equal-length blocks that overlap their neighbours.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::{BlockManifest, FrameRange, SCHEMA_VERSION};

pub const DEFAULT_OVERLAP: f64 = 0.25;

/// Splits one flight of `total_frames` into `blocks` equal-length blocks.
///
/// Block length `L = ceil(N / (k − (k−1)ρ))`, stride `L − floor(ρL)`; the
/// last block is shifted left to end on the final frame. Block ids start
/// at `first_block_id`.
pub fn partition_flight(
    total_frames: u32,
    blocks: u32,
    overlap: f64,
    flight_id: u32,
    first_block_id: u32,
) -> Result<Vec<BlockManifest>> {
    if blocks == 0 {
        return Err(Error::arg("a flight needs at least one block"));
    }
    if blocks > total_frames {
        return Err(Error::arg(format!(
            "{blocks} blocks requested for only {total_frames} frames"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::arg(format!("overlap fraction must be in [0, 1), got {overlap}")));
    }
    let n = total_frames as f64;
    let k = blocks as f64;
    // The epsilon keeps exact quotients such as 175 / 1.75 from rounding up.
    let len = ((n / (k - (k - 1.0) * overlap)) - 1e-9).ceil().clamp(1.0, n) as u32;
    let shared = (overlap * len as f64 + 1e-9).floor() as u32;
    let stride = len - shared;

    let starts: Vec<u32> = (0..blocks)
        .map(|i| {
            if i + 1 == blocks {
                total_frames - len
            } else {
                (i * stride).min(total_frames - len)
            }
        })
        .collect();
    let ranges: Vec<FrameRange> = starts
        .iter()
        .map(|&s| FrameRange { start: s, end: s + len - 1 })
        .collect();
    let manifests = ranges
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let prev = i.checked_sub(1).and_then(|p| r.intersect(&ranges[p]));
            let next = ranges.get(i + 1).and_then(|n| r.intersect(n));
            BlockManifest {
                block_id: first_block_id + i as u32,
                flight_id,
                frame_range: *r,
                overlap_prev: prev,
                overlap_next: next,
            }
        })
        .collect();
    Ok(manifests)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightInfo {
    pub flight_id: u32,
    pub total_frames: u32,
    pub blocks: u32,
}

/// Contents of `blocks.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub schema_version: u32,
    pub overlap_fraction: f64,
    pub flights: Vec<FlightInfo>,
    pub blocks: Vec<BlockManifest>,
}

impl PartitionPlan {
    /// Number of flights `m`.
    pub fn flight_count(&self) -> usize {
        self.flights.len()
    }

    /// Number of blocks `n`.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// `"<m>S<n>B"`, e.g. `1S4B`.
    pub fn label(&self) -> String {
        format!("{}S{}B", self.flight_count(), self.block_count())
    }

    pub fn block(&self, block_id: u32) -> Option<&BlockManifest> {
        self.blocks.iter().find(|b| b.block_id == block_id)
    }

    /// Consecutive block pairs in id order; `true` when both share a flight.
    pub fn adjacent_pairs(&self) -> Vec<(&BlockManifest, &BlockManifest, bool)> {
        self.blocks
            .windows(2)
            .map(|w| (&w[0], &w[1], w[0].flight_id == w[1].flight_id))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::data(format!(
                "unsupported blocks.json schema version {}",
                self.schema_version
            )));
        }
        if self.flights.is_empty() || self.blocks.len() < self.flights.len() {
            return Err(Error::data("plan needs n >= m >= 1"));
        }
        for b in &self.blocks {
            b.validate()?;
        }
        for w in self.blocks.windows(2) {
            if w[1].block_id <= w[0].block_id {
                return Err(Error::data("block ids must be strictly increasing"));
            }
            if w[0].flight_id == w[1].flight_id && w[0].overlap_next != w[1].overlap_prev {
                return Err(Error::data(format!(
                    "blocks {} and {} disagree on their shared frames",
                    w[0].block_id, w[1].block_id
                )));
            }
        }
        Ok(())
    }
}

/// Partitions several flights. `blocks_per_flight` has one entry per flight.
///
/// Blocks from different flights never record an overlap: flights only
/// overlap in space, which the similarity search has to discover.
pub fn plan_multi_flight(
    frame_counts: &[u32],
    blocks_per_flight: &[u32],
    overlap: f64,
) -> Result<PartitionPlan> {
    if frame_counts.is_empty() {
        return Err(Error::arg("at least one flight is required"));
    }
    if frame_counts.len() != blocks_per_flight.len() {
        return Err(Error::arg(format!(
            "{} flights but {} block counts",
            frame_counts.len(),
            blocks_per_flight.len()
        )));
    }
    let mut blocks = Vec::new();
    let mut flights = Vec::new();
    for (flight_id, (&frames, &k)) in frame_counts.iter().zip(blocks_per_flight).enumerate() {
        let flight_id = flight_id as u32;
        blocks.extend(partition_flight(frames, k, overlap, flight_id, blocks.len() as u32)?);
        flights.push(FlightInfo {
            flight_id,
            total_frames: frames,
            blocks: k,
        });
    }
    Ok(PartitionPlan {
        schema_version: SCHEMA_VERSION,
        overlap_fraction: overlap,
        flights,
        blocks,
    })
}

/// `m` flights of `frames` each, `n` blocks in total spread as evenly as
/// possible (earlier flights take the remainder).
pub fn plan_msnb(frames: u32, flights: u32, total_blocks: u32, overlap: f64) -> Result<PartitionPlan> {
    if flights == 0 || total_blocks < flights {
        return Err(Error::arg(format!(
            "need n >= m >= 1, got m = {flights}, n = {total_blocks}"
        )));
    }
    let base = total_blocks / flights;
    let extra = total_blocks % flights;
    let per_flight: Vec<u32> = (0..flights).map(|i| base + u32::from(i < extra)).collect();
    plan_multi_flight(&vec![frames; flights as usize], &per_flight, overlap)
}
