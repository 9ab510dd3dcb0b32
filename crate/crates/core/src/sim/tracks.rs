//! Ingestion of drone-recorded highway tracks in the HighD CSV schema.
//!
//! Only the columns below are read; extra columns are ignored. Rows of one
//! vehicle must have contiguous frame numbers, rows of different vehicles
//! may interleave.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CommonState, Vehicle, VehicleParams};

/// Columns that must be present in the header.
pub const REQUIRED_COLUMNS: [&str; 11] =
    ["frame", "id", "x", "y", "xVelocity", "yVelocity", "xAcceleration", "yAcceleration", "laneId", "width", "height"];

/// One CSV row. In HighD, `width` is the extent along the road (the
/// vehicle length) and `height` the extent across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: u32,
    pub id: u32,
    pub x: f64,
    pub y: f64,
    #[serde(rename = "xVelocity")]
    pub x_velocity: f64,
    #[serde(rename = "yVelocity")]
    pub y_velocity: f64,
    #[serde(rename = "xAcceleration")]
    pub x_acceleration: f64,
    #[serde(rename = "yAcceleration")]
    pub y_acceleration: f64,
    #[serde(rename = "laneId")]
    pub lane_id: i32,
    pub width: f64,
    pub height: f64,
}

/// Which point of the bounding box `x, y` refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// The geometric centre.
    #[default]
    Center,
    /// The upper-left corner in image coordinates (HighD convention).
    TopLeft,
}

/// Affine map from dataset coordinates into the road frame:
/// `p_lon = lon_offset + lon_scale·x_c`, `p_lat = lat_offset + lat_scale·y_c`
/// with `(x_c, y_c)` the box centre. Derivatives scale by the same factors.
/// HighD's `y` grows downward, so `lat_scale = −1` flips it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxisTransform {
    pub lon_scale: f64,
    pub lon_offset: f64,
    pub lat_scale: f64,
    pub lat_offset: f64,
    pub anchor: Anchor,
}

impl Default for AxisTransform {
    fn default() -> Self {
        Self { lon_scale: 1.0, lon_offset: 0.0, lat_scale: 1.0, lat_offset: 0.0, anchor: Anchor::Center }
    }
}

impl AxisTransform {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lon_scale, self.lon_offset, self.lat_scale, self.lat_offset].iter().all(|v| v.is_finite());
        if !finite || self.lon_scale == 0.0 || self.lat_scale == 0.0 {
            return Err(Error::Config("axis transform needs finite offsets and non-zero scales".into()));
        }
        Ok(())
    }

    /// Road-frame state of one record.
    pub fn state(&self, r: &TrackRecord) -> CommonState {
        let (xc, yc) = match self.anchor {
            Anchor::Center => (r.x, r.y),
            Anchor::TopLeft => (r.x + 0.5 * r.width, r.y + 0.5 * r.height),
        };
        CommonState::new(
            self.lon_offset + self.lon_scale * xc,
            self.lon_scale * r.x_velocity,
            self.lon_scale * r.x_acceleration,
            self.lat_offset + self.lat_scale * yc,
            self.lat_scale * r.y_velocity,
            self.lat_scale * r.y_acceleration,
        )
    }
}

/// Time series of one vehicle, one entry per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u32,
    pub length: f64,
    pub width: f64,
    pub first_frame: u32,
    pub records: Vec<TrackRecord>,
    /// Road-frame states, parallel to `records`.
    pub states: Vec<CommonState>,
}

impl Track {
    pub fn last_frame(&self) -> u32 {
        self.first_frame + self.records.len() as u32 - 1
    }

    pub fn state_at(&self, frame: u32) -> Option<CommonState> {
        frame.checked_sub(self.first_frame).and_then(|i| self.states.get(i as usize)).copied()
    }

    pub fn vehicle_at(&self, frame: u32) -> Option<Vehicle> {
        let state = self.state_at(frame)?;
        Some(Vehicle { params: VehicleParams { id: self.id, length: self.length, width: self.width }, state })
    }
}

/// All tracks of one recording, keyed by vehicle id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackStore {
    pub tracks: BTreeMap<u32, Track>,
}

impl TrackStore {
    pub fn get(&self, id: u32) -> Option<&Track> {
        self.tracks.get(&id)
    }

    /// Ids with a record at `frame`, ascending.
    pub fn ids_at(&self, frame: u32) -> Vec<u32> {
        self.tracks.values().filter(|t| t.first_frame <= frame && frame <= t.last_frame()).map(|t| t.id).collect()
    }
}

/// Reads and validates a track file.
pub fn ingest_tracks(path: impl AsRef<Path>, transform: &AxisTransform) -> Result<TrackStore> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_tracks_from_reader(file, transform)
}

/// As [`ingest_tracks`] over any reader.
pub fn ingest_tracks_from_reader<R: Read>(reader: R, transform: &AxisTransform) -> Result<TrackStore> {
    transform.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in REQUIRED_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Parse { line: 1, msg: format!("missing column `{col}`") });
        }
    }
    let mut tracks: BTreeMap<u32, Track> = BTreeMap::new();
    // The header is line 1; every record is one line.
    let mut line = 1;
    for row in rdr.deserialize::<TrackRecord>() {
        line += 1;
        let rec = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(line, |p| p.line() as usize);
                return Err(Error::Parse { line, msg: e.to_string() });
            }
        };
        if !(rec.width > 0.0 && rec.height > 0.0) {
            return Err(Error::Parse { line, msg: format!("vehicle {} has a non-positive footprint", rec.id) });
        }
        let state = transform.state(&rec);
        match tracks.get_mut(&rec.id) {
            None => {
                tracks.insert(
                    rec.id,
                    Track { id: rec.id, length: rec.width, width: rec.height, first_frame: rec.frame, records: vec![rec], states: vec![state] },
                );
            }
            Some(t) => {
                let last = t.last_frame();
                if rec.frame <= last {
                    return Err(Error::Parse {
                        line,
                        msg: format!("vehicle {}: frame {} does not follow frame {last} (frames must increase)", rec.id, rec.frame),
                    });
                }
                if rec.frame != last + 1 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("vehicle {}: frame gap between {last} and {} (frames must be contiguous)", rec.id, rec.frame),
                    });
                }
                t.records.push(rec);
                t.states.push(state);
            }
        }
    }
    Ok(TrackStore { tracks })
}

/// Writes records in the documented column order.
pub fn write_tracks<W: std::io::Write>(writer: W, records: &[TrackRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
