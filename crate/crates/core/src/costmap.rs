//! Rasterized planning-affordance maps and their binary grid format.
//!
//! Grid file layout, all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `PLANITCM` |
//! | 8 | resolution, f64 meters per cell |
//! | 16 | origin x, origin y, f64 meters (lower-left corner of cell (0, 0)) |
//! | 8 | width, height, u32 cells |
//! | 8·w·h | cell values, f64, row-major from row 0 (lowest y) |
//! | w·h | obstacle mask, one byte per cell (0 free, 1 blocked) |

use crate::affordance::{AffordanceError, EnvironmentCost, ModelParameters};
use crate::env::Environment;
use crate::geometry::{Bounds, Vec2};
use rayon::prelude::*;
use thiserror::Error;

pub const DEFAULT_RESOLUTION: f64 = 0.05;
/// Clearance added around obstacles, meters.
pub const OBSTACLE_INFLATION: f64 = 0.2;
pub const MIN_CELLS_PER_SIDE: usize = 10;
pub const GRID_MAGIC: &[u8; 8] = b"PLANITCM";
pub const GRID_HEADER_LEN: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostMapError {
    #[error("resolution {resolution} m gives fewer than {MIN_CELLS_PER_SIDE} cells on a side")]
    ResolutionTooCoarse { resolution: f64 },
    #[error("resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error(transparent)]
    Cost(#[from] AffordanceError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridDecodeError {
    #[error("grid file shorter than its header")]
    Truncated,
    #[error("bad magic bytes")]
    BadMagic,
    #[error("invalid header: {0}")]
    InvalidHeader(&'static str),
    #[error("expected {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("cell {0} holds a non-positive or non-finite value")]
    InvalidValue(usize),
    #[error("cell {0} has an obstacle byte other than 0 or 1")]
    InvalidMask(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major, `values[row * width + col]`.
    pub values: Vec<f64>,
    pub obstacles: Vec<bool>,
}

impl CostMap {
    /// Constant-valued map with no obstacles, mostly for tests and tools.
    pub fn uniform(origin: Vec2, resolution: f64, width: usize, height: usize, value: f64) -> Self {
        CostMap {
            origin,
            resolution,
            width,
            height,
            values: vec![value; width * height],
            obstacles: vec![false; width * height],
        }
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::new(
            self.origin,
            self.origin + Vec2::new(self.width as f64 * self.resolution, self.height as f64 * self.resolution),
        )
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Vec2 {
        self.origin + Vec2::new((col as f64 + 0.5) * self.resolution, (row as f64 + 0.5) * self.resolution)
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin.x) / self.resolution).floor();
        let r = ((p.y - self.origin.y) / self.resolution).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height {
            Some((c as usize, r as usize))
        } else {
            None
        }
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn value_at(&self, p: Vec2) -> Option<f64> {
        self.cell_of(p).map(|(c, r)| self.values[self.index(c, r)])
    }

    /// Points outside the grid count as blocked.
    pub fn is_blocked(&self, p: Vec2) -> bool {
        self.cell_of(p).is_none_or(|(c, r)| self.obstacles[self.index(c, r)])
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(GRID_HEADER_LEN + 9 * n);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&self.resolution.to_le_bytes());
        out.extend_from_slice(&self.origin.x.to_le_bytes());
        out.extend_from_slice(&self.origin.y.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.obstacles.iter().map(|&b| b as u8));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, GridDecodeError> {
        if bytes.len() < GRID_HEADER_LEN {
            return Err(GridDecodeError::Truncated);
        }
        if &bytes[..8] != GRID_MAGIC {
            return Err(GridDecodeError::BadMagic);
        }
        let f = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"));
        let u = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as usize;
        let resolution = f(8);
        let origin = Vec2::new(f(16), f(24));
        let (width, height) = (u(32), u(36));
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(GridDecodeError::InvalidHeader("resolution"));
        }
        if !origin.is_finite() {
            return Err(GridDecodeError::InvalidHeader("origin"));
        }
        if width == 0 || height == 0 {
            return Err(GridDecodeError::InvalidHeader("empty grid"));
        }
        let n = width.checked_mul(height).ok_or(GridDecodeError::InvalidHeader("dimensions overflow"))?;
        let expected = n
            .checked_mul(9)
            .and_then(|b| b.checked_add(GRID_HEADER_LEN))
            .ok_or(GridDecodeError::InvalidHeader("dimensions overflow"))?;
        if bytes.len() != expected {
            return Err(GridDecodeError::LengthMismatch { expected, found: bytes.len() });
        }
        let body = &bytes[GRID_HEADER_LEN..];
        let mut values = Vec::with_capacity(n);
        for (i, chunk) in body[..8 * n].chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if !(v > 0.0 && v.is_finite()) {
                return Err(GridDecodeError::InvalidValue(i));
            }
            values.push(v);
        }
        let mut obstacles = Vec::with_capacity(n);
        for (i, &b) in body[8 * n..].iter().enumerate() {
            match b {
                0 => obstacles.push(false),
                1 => obstacles.push(true),
                _ => return Err(GridDecodeError::InvalidMask(i)),
            }
        }
        Ok(CostMap { origin, resolution, width, height, values, obstacles })
    }
}

/// True when `p` lies inside the bounds, at least [`OBSTACLE_INFLATION`] from
/// every obstacle.
pub fn is_free_inflated(env: &Environment, p: Vec2) -> bool {
    env.bounds.contains(p) && env.obstacles.iter().all(|o| o.distance(p) > OBSTACLE_INFLATION)
}

/// Evaluates the learned marginal waypoint cost at every cell center.
pub fn rasterize(env: &Environment, params: &ModelParameters, resolution: f64) -> Result<CostMap, CostMapError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(CostMapError::InvalidResolution(resolution));
    }
    let width = (env.bounds.width() / resolution).ceil() as usize;
    let height = (env.bounds.height() / resolution).ceil() as usize;
    if width < MIN_CELLS_PER_SIDE || height < MIN_CELLS_PER_SIDE {
        return Err(CostMapError::ResolutionTooCoarse { resolution });
    }
    let cost = EnvironmentCost::new(env, params)?;
    let mut map = CostMap::uniform(env.bounds.min, resolution, width, height, 1.0);
    let cells: Vec<(f64, bool)> = (0..width * height)
        .into_par_iter()
        .map(|i| {
            let p = map.cell_center(i % width, i / width);
            (cost.cost(p), !is_free_inflated(env, p))
        })
        .collect();
    for (i, (v, blocked)) in cells.into_iter().enumerate() {
        map.values[i] = v;
        map.obstacles[i] = blocked;
    }
    Ok(map)
}
