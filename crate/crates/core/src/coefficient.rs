//! Cell-wise permeability fields: raster I/O and a synthetic
//! channel-and-inclusion generator.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("failed to read raster {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("raster header must be `nx ny` with positive integers, found {0:?}")]
    Header(String),
    #[error("raster row {row}: expected {expected} values, found {found}")]
    RowLength { row: usize, expected: usize, found: usize },
    #[error("raster declares {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("raster row {row}, column {col}: unparsable value {token:?}")]
    Parse { row: usize, col: usize, token: String },
    #[error("non-positive permeability {value} at row {row}, column {col}")]
    NonPositive { row: usize, col: usize, value: f64 },
    #[error("field is {found_x}x{found_y} cells but the mesh has {nx}x{ny}")]
    Dimension { nx: usize, ny: usize, found_x: usize, found_y: usize },
    #[error("generator values must be positive (background {background}, channel {channel})")]
    GeneratorInput { background: f64, channel: f64 },
}

/// Positive piecewise-constant coefficient, one value per fine cell, stored
/// row-major with row `y = 0` first.
#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilityField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
    gamma: f64,
    beta: f64,
}

impl PermeabilityField {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != nx * ny {
            return Err(FieldError::Dimension { nx, ny, found_x: values.len(), found_y: 1 });
        }
        let mut gamma = f64::INFINITY;
        let mut beta = 0.0f64;
        for (k, &v) in values.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(FieldError::NonPositive { row: k / nx, col: k % nx, value: v });
            }
            gamma = gamma.min(v);
            beta = beta.max(v);
        }
        Ok(Self { nx, ny, values, gamma, beta })
    }

    pub fn homogeneous(nx: usize, ny: usize, value: f64) -> Result<Self, FieldError> {
        Self::new(nx, ny, vec![value; nx * ny])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, cx: usize, cy: usize) -> f64 {
        self.values[cy * self.nx + cx]
    }

    /// Essential infimum γ.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Essential supremum β.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn contrast(&self) -> f64 {
        self.beta / self.gamma
    }

    pub fn check_mesh(&self, nx: usize, ny: usize) -> Result<(), FieldError> {
        if (self.nx, self.ny) != (nx, ny) {
            return Err(FieldError::Dimension { nx, ny, found_x: self.nx, found_y: self.ny });
        }
        Ok(())
    }

    /// Short content hash used to key cached runs and tag reports.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.nx as u64).to_le_bytes());
        h.update((self.ny as u64).to_le_bytes());
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Plain-text raster: `nx ny` header, then `ny` rows of 17-digit values.
    pub fn to_raster_string(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 24 + 16);
        let _ = writeln!(s, "{} {}", self.nx, self.ny);
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn parse_raster(text: &str) -> Result<Self, FieldError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| FieldError::Header(String::new()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| FieldError::Header(header.to_string()))?;
        let (nx, ny) = match dims.as_slice() {
            [nx, ny] if *nx > 0 && *ny > 0 => (*nx, *ny),
            _ => return Err(FieldError::Header(header.to_string())),
        };
        let mut values = Vec::with_capacity(nx * ny);
        let mut rows = 0;
        for (row, line) in lines.enumerate() {
            if row >= ny {
                return Err(FieldError::RowCount { expected: ny, found: row + 1 });
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != nx {
                return Err(FieldError::RowLength { row, expected: nx, found: tokens.len() });
            }
            for (col, tok) in tokens.into_iter().enumerate() {
                let v: f64 = tok.parse().map_err(|_| FieldError::Parse { row, col, token: tok.to_string() })?;
                if !(v > 0.0) || !v.is_finite() {
                    return Err(FieldError::NonPositive { row, col, value: v });
                }
                values.push(v);
            }
            rows += 1;
        }
        if rows != ny {
            return Err(FieldError::RowCount { expected: ny, found: rows });
        }
        Self::new(nx, ny, values)
    }

    pub fn load_raster(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|source| FieldError::Io { path: path.display().to_string(), source })?;
        Self::parse_raster(&text)
    }

    pub fn save_raster(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_raster_string())
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<PermeabilityField, FieldError> {
    PermeabilityField::load_raster(path)
}

/// Shape parameters for [`generate_channels`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelLayout {
    pub seed: u64,
    pub channels: usize,
    pub inclusions: usize,
}

impl Default for ChannelLayout {
    fn default() -> Self {
        Self { seed: 20_200_803, channels: 5, inclusions: 24 }
    }
}

struct Channel {
    y0: f64,
    amplitude: f64,
    wavenumber: f64,
    phase: f64,
    half_width: f64,
}

impl Channel {
    fn center(&self, x: f64) -> f64 {
        self.y0 + self.amplitude * (std::f64::consts::TAU * self.wavenumber * x + self.phase).sin()
    }
}

/// Deterministic high-contrast field: meandering horizontal channels plus
/// rectangular inclusions of value `channel_value` on a `background` matrix.
/// Geometry is defined in unit-square coordinates and sampled at cell
/// centres, so different resolutions see the same morphology.
pub fn generate_channels(
    nx: usize,
    ny: usize,
    background: f64,
    channel_value: f64,
    layout: ChannelLayout,
) -> Result<PermeabilityField, FieldError> {
    if !(background > 0.0) || !(channel_value > 0.0) || !background.is_finite() || !channel_value.is_finite() {
        return Err(FieldError::GeneratorInput { background, channel: channel_value });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(layout.seed);
    let n = layout.channels;
    let channels: Vec<Channel> = (0..n)
        .map(|k| Channel {
            y0: (k as f64 + 0.5) / n as f64 + rng.random_range(-0.25..0.25) / n as f64,
            amplitude: rng.random_range(0.01..0.05),
            wavenumber: rng.random_range(0.5..2.0),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            half_width: rng.random_range(0.012..0.03),
        })
        .collect();
    let inclusions: Vec<(f64, f64, f64, f64)> = (0..layout.inclusions)
        .map(|_| {
            let (cx, cy) = (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
            let (wx, wy) = (rng.random_range(0.01..0.04), rng.random_range(0.01..0.04));
            (cx - wx, cx + wx, cy - wy, cy + wy)
        })
        .collect();

    let (hx, hy) = (1.0 / nx as f64, 1.0 / ny as f64);
    let mut values = vec![background; nx * ny];
    for cx in 0..nx {
        let x = (cx as f64 + 0.5) * hx;
        for ch in &channels {
            let yc = ch.center(x).clamp(0.0, 1.0 - 1e-12);
            // the cell holding the centreline is always marked, so coarse
            // rasters keep every channel
            let nearest = ((yc / hy) as usize).min(ny - 1);
            values[nearest * nx + cx] = channel_value;
            for cy in 0..ny {
                let y = (cy as f64 + 0.5) * hy;
                if (y - yc).abs() <= ch.half_width {
                    values[cy * nx + cx] = channel_value;
                }
            }
        }
    }
    for cy in 0..ny {
        let y = (cy as f64 + 0.5) * hy;
        for cx in 0..nx {
            let x = (cx as f64 + 0.5) * hx;
            if inclusions.iter().any(|&(x0, x1, y0, y1)| x >= x0 && x <= x1 && y >= y0 && y <= y1) {
                values[cy * nx + cx] = channel_value;
            }
        }
    }
    PermeabilityField::new(nx, ny, values)
}
