//! Piecewise-linear sloped terrain.
//!
//! A terrain is a chain of straight segments. Each segment has a horizontal
//! extent and a slope in degrees; its rise is `length * tan(slope)`. The
//! height function is continuous and starts at `origin_height` at x = 0.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Slopes a generated segment may take, in degrees.
pub const SLOPES_DEG: [f64; 5] = [-10.0, -5.0, 0.0, 5.0, 10.0];
pub const MIN_SEGMENT: f64 = 0.5;
pub const MAX_SEGMENT: f64 = 1.0;
/// Length of the level run-up every generated terrain starts with.
pub const FLAT_PREFIX: f64 = 1.0;
pub const DEFAULT_EXTENT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainSegment {
    /// Horizontal extent in meters.
    pub length: f64,
    /// Slope in degrees, positive uphill in +x.
    pub slope: f64,
}

impl TerrainSegment {
    pub fn rise(&self) -> f64 {
        self.length * self.slope.to_radians().tan()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    segments: Vec<TerrainSegment>,
    origin_height: f64,
    seed: u64,
    // start x and start height of every segment, plus one trailing entry
    // for the far end
    knots_x: Vec<f64>,
    knots_y: Vec<f64>,
    tangents: Vec<f64>,
}

impl Terrain {
    pub fn from_segments(segments: Vec<TerrainSegment>, origin_height: f64, seed: u64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument(
                "terrain needs at least one segment".into(),
            ));
        }
        for s in &segments {
            if !(s.length.is_finite() && s.length > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "segment length must be positive, got {}",
                    s.length
                )));
            }
            if !(s.slope.is_finite() && s.slope.abs() < 90.0) {
                return Err(Error::InvalidArgument(format!(
                    "segment slope must lie in (-90, 90) degrees, got {}",
                    s.slope
                )));
            }
        }
        let mut knots_x = Vec::with_capacity(segments.len() + 1);
        let mut knots_y = Vec::with_capacity(segments.len() + 1);
        let (mut x, mut y) = (0.0, origin_height);
        for s in &segments {
            knots_x.push(x);
            knots_y.push(y);
            x += s.length;
            y += s.rise();
        }
        knots_x.push(x);
        knots_y.push(y);
        let tangents = segments.iter().map(|s| s.slope.to_radians().tan()).collect();
        Ok(Self {
            segments,
            origin_height,
            seed,
            knots_x,
            knots_y,
            tangents,
        })
    }

    /// Level terrain of the given length.
    pub fn flat(extent: f64) -> Self {
        Self::from_segments(
            vec![TerrainSegment {
                length: extent,
                slope: 0.0,
            }],
            0.0,
            0,
        )
        .expect("flat terrain is valid")
    }

    /// Random terrain: a level prefix followed by segments with lengths
    /// uniform in [0.5, 1.0] m and slopes drawn uniformly from
    /// [`SLOPES_DEG`], until the random part spans at least `min_extent`.
    pub fn generate(seed: u64, min_extent: f64) -> Result<Self> {
        if !(min_extent.is_finite() && min_extent > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "min_extent must be positive, got {min_extent}"
            )));
        }
        let mut rng = rng::rng(seed);
        let mut segments = vec![TerrainSegment {
            length: FLAT_PREFIX,
            slope: 0.0,
        }];
        let mut extent = 0.0;
        while extent < min_extent {
            let length = rng.random_range(MIN_SEGMENT..=MAX_SEGMENT);
            let slope = SLOPES_DEG[rng.random_range(0..SLOPES_DEG.len())];
            segments.push(TerrainSegment { length, slope });
            extent += length;
        }
        Self::from_segments(segments, 0.0, seed)
    }

    pub fn segments(&self) -> &[TerrainSegment] {
        &self.segments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn origin_height(&self) -> f64 {
        self.origin_height
    }

    /// Total horizontal extent.
    pub fn extent(&self) -> f64 {
        *self.knots_x.last().unwrap()
    }

    // Index of the segment containing x; boundaries belong to the segment
    // on their right, except the far end which belongs to the last one.
    fn locate(&self, x: f64) -> Result<usize> {
        let extent = self.extent();
        if !(x >= 0.0 && x <= extent) {
            return Err(Error::OffTerrain { x, extent });
        }
        let i = self.knots_x.partition_point(|&k| k <= x);
        Ok(i.saturating_sub(1).min(self.segments.len() - 1))
    }

    pub fn height_at(&self, x: f64) -> Result<f64> {
        let i = self.locate(x)?;
        Ok(self.knots_y[i] + (x - self.knots_x[i]) * self.tangents[i])
    }

    /// Slope in radians of the segment containing x (right-continuous).
    pub fn slope_at(&self, x: f64) -> Result<f64> {
        let i = self.locate(x)?;
        Ok(self.segments[i].slope.to_radians())
    }

    /// Height and dh/dx together.
    pub fn height_and_gradient(&self, x: f64) -> Result<(f64, f64)> {
        let i = self.locate(x)?;
        Ok((
            self.knots_y[i] + (x - self.knots_x[i]) * self.tangents[i],
            self.tangents[i],
        ))
    }

    /// Height and dh/dx with the end segments extended indefinitely. Used
    /// for foot contact, so a leg swinging behind the origin or past the far
    /// end still meets ground; the trunk position alone decides whether a
    /// rollout has left the map.
    pub fn extended_height_and_gradient(&self, x: f64) -> (f64, f64) {
        let last = self.segments.len() - 1;
        let i = if x < 0.0 {
            0
        } else if x > self.extent() {
            last
        } else {
            self.knots_x
                .partition_point(|&k| k <= x)
                .saturating_sub(1)
                .min(last)
        };
        (
            self.knots_y[i] + (x - self.knots_x[i]) * self.tangents[i],
            self.tangents[i],
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("terrain v1 seed={}\n", self.seed);
        for s in &self.segments {
            writeln!(out, "{} {}", s.length, s.slope).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse("terrain", 1, "empty file"))?;
        let seed = header
            .strip_prefix("terrain v1 seed=")
            .ok_or_else(|| Error::parse("terrain", 1, format!("bad header {header:?}")))?
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::parse("terrain", 1, e.to_string()))?;
        let mut segments = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let mut field = |name: &str| -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| Error::parse("terrain", i + 1, format!("missing {name}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::parse("terrain", i + 1, e.to_string()))
            };
            let length = field("length")?;
            let slope = field("slope")?;
            if fields.next().is_some() {
                return Err(Error::parse("terrain", i + 1, "trailing fields"));
            }
            segments.push(TerrainSegment { length, slope });
        }
        Self::from_segments(segments, 0.0, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
