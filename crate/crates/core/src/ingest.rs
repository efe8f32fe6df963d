//! NDJSON trajectory corpora: one `{"id": ..., "points": [[ts, x, y], ...]}`
//! record per line.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Point, Trajectory};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: GeometryError,
    },
    #[error("line {line}: duplicate trajectory id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    points: Vec<[f64; 3]>,
}

/// Equirectangular projection of longitude/latitude degrees to planar meters
/// around a fixed reference latitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equirectangular {
    pub ref_lat_deg: f64,
}

impl Equirectangular {
    const EARTH_RADIUS_M: f64 = 6_371_008.8;

    pub fn project(&self, lon_deg: f64, lat_deg: f64) -> (f64, f64) {
        let k = self.ref_lat_deg.to_radians().cos();
        (
            Self::EARTH_RADIUS_M * lon_deg.to_radians() * k,
            Self::EARTH_RADIUS_M * lat_deg.to_radians(),
        )
    }
}

/// Reads a corpus. Blank lines are skipped; ids must be unique.
///
/// With `projection` set, the second and third point fields are read as
/// longitude and latitude in degrees.
pub fn read_ndjson<R: BufRead>(
    reader: R,
    projection: Option<Equirectangular>,
) -> Result<Vec<Trajectory>, IngestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|source| IngestError::Json {
            line: line_no,
            source,
        })?;
        let points = rec
            .points
            .iter()
            .map(|&[ts, a, b]| {
                let (x, y) = match projection {
                    Some(p) => p.project(a, b),
                    None => (a, b),
                };
                Point::new(ts, x, y)
            })
            .collect();
        let t = Trajectory::new(rec.id, points).map_err(|source| IngestError::Invalid {
            line: line_no,
            source,
        })?;
        if !seen.insert(t.id.clone()) {
            return Err(IngestError::DuplicateId {
                line: line_no,
                id: t.id,
            });
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_ndjson<W: Write>(mut w: W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for t in trajectories {
        let rec = Record {
            id: t.id.clone(),
            points: t.points.iter().map(|p| [p.ts, p.loc.x, p.loc.y]).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
