//! Single-channel rasters, ground-truth masks and attribution maps.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `h x w` single-channel raster stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} image cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }
}

/// Binary foreground mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} mask cannot hold {} cells",
                cells.len()
            )));
        }
        Ok(Self { height, width, cells })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    /// Number of foreground pixels.
    pub fn positive_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Attribution method that produced a map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pcim,
    Saliency,
    Rise,
    GradCam,
    GradCamPp,
    IntGrads,
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Pcim,
        Method::Saliency,
        Method::Rise,
        Method::GradCam,
        Method::GradCamPp,
        Method::IntGrads,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pcim => "pcim",
            Method::Saliency => "saliency",
            Method::Rise => "rise",
            Method::GradCam => "gradcam",
            Method::GradCamPp => "gradcampp",
            Method::IntGrads => "intgrads",
            Method::Random => "random",
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Pcim => "PCIM",
            Method::Saliency => "Saliency",
            Method::Rise => "Rise",
            Method::GradCam => "Grad-CAM",
            Method::GradCamPp => "Grad-CAM++",
            Method::IntGrads => "Int. Grads",
            Method::Random => "Random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown attribution method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueRange {
    Raw,
    Normalized,
}

/// Per-pixel importance raster.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    method: Method,
    range: ValueRange,
}

impl AttributionMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>, method: Method) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} map cannot hold {} values",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            method,
            range: ValueRange::Raw,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Linear min-max rescale to `[0, 1]`. A constant map becomes all zeros.
    pub fn normalized(&self) -> Self {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let values = if span > 0.0 && span.is_finite() {
            self.values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        Self {
            values,
            range: ValueRange::Normalized,
            ..self.clone()
        }
    }

    /// `h` lines of `w` comma-separated values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, method: Method) -> Result<Self> {
        let mut values = Vec::new();
        let mut width = None;
        let mut height = 0;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::data(format!("map line {}: {e}", lineno + 1)))?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::data(format!(
                        "map line {} has {} values, expected {w}",
                        lineno + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            values.extend(row);
            height += 1;
        }
        let width = width.ok_or_else(|| Error::data("empty map file"))?;
        Self::new(height, width, values, method)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Binary 16-bit graymap of the normalized map.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let norm = self.normalized();
        let levels: Vec<u16> = norm.values.iter().map(|&v| (v * 65535.0).round() as u16).collect();
        write_pgm16(path, self.height, self.width, &levels)
    }
}

/// Write a binary (P5) graymap with maxval 65535, samples big-endian.
pub fn write_pgm16(path: &Path, height: usize, width: usize, levels: &[u16]) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + levels.len() * 2);
    write!(buf, "P5\n{width} {height}\n65535\n").expect("in-memory write");
    for v in levels {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Write a binary (P5) graymap with maxval 255.
pub fn write_pgm8(path: &Path, height: usize, width: usize, levels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + levels.len());
    write!(buf, "P5\n{width} {height}\n255\n").expect("in-memory write");
    buf.extend_from_slice(levels);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
