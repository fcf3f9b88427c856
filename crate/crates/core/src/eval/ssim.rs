//! Structural similarity between attribution maps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::median;
use crate::error::{Error, Result};
use crate::image::AttributionMap;

/// Side of the Gaussian window. Smaller than the customary 11 because maps
/// can be as small as 32x32.
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
/// `(K1 L)^2` with `K1 = 0.01` and unit dynamic range.
pub const SSIM_C1: f64 = 0.01 * 0.01;
/// `(K2 L)^2` with `K2 = 0.03` and unit dynamic range.
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Local SSIM at every position where the window fits, row-major.
pub fn ssim_values(a: &[f32], b: &[f32], h: usize, w: usize) -> Result<Vec<f64>> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::dim("SSIM inputs must both be h x w"));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::data(format!(
            "{h}x{w} maps are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let win = gaussian_window();
    let mut out = Vec::with_capacity((h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1));
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb) = (0.0f64, 0.0f64);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let k = win[dy * SSIM_WINDOW + dx];
                    let i = (y + dy) * w + x + dx;
                    ma += k * a[i] as f64;
                    mb += k * b[i] as f64;
                }
            }
            let (mut va, mut vb, mut cov) = (0.0f64, 0.0f64, 0.0f64);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let k = win[dy * SSIM_WINDOW + dx];
                    let i = (y + dy) * w + x + dx;
                    let (da, db) = (a[i] as f64 - ma, b[i] as f64 - mb);
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            out.push(num / den);
        }
    }
    Ok(out)
}

/// Mean local SSIM of two equally sized maps, taken on their values as given.
pub fn ssim(a: &AttributionMap, b: &AttributionMap) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!("SSIM of {:?} and {:?} maps", a.dims(), b.dims())));
    }
    let (h, w) = a.dims();
    let v = ssim_values(a.values(), b.values(), h, w)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Method x method median SSIM of normalized maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub methods: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = format!("method,{}\n", self.methods.join(","));
        for (m, row) in self.methods.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&format!("{m},{}\n", cells.join(",")));
        }
        out
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == a)?;
        let j = self.methods.iter().position(|m| m == b)?;
        Some(self.values[i][j])
    }
}

/// `maps[method][image]`; every method must cover the same images.
pub fn similarity_matrix(maps: &BTreeMap<String, BTreeMap<String, AttributionMap>>) -> Result<SimilarityMatrix> {
    let methods: Vec<String> = maps.keys().cloned().collect();
    if methods.is_empty() {
        return Err(Error::data("no attribution maps to compare"));
    }
    let images: std::collections::BTreeSet<&String> = maps.values().flat_map(|m| m.keys()).collect();
    for (method, per_image) in maps {
        if let Some(missing) = images.iter().find(|id| !per_image.contains_key(**id)) {
            return Err(Error::data(format!("method '{method}' has no map for image '{missing}'")));
        }
    }
    let normalized: Vec<Vec<AttributionMap>> = methods
        .iter()
        .map(|m| images.iter().map(|id| maps[m][*id].normalized()).collect())
        .collect();
    let n = methods.len();
    let mut values = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let scores = normalized[i]
                .iter()
                .zip(&normalized[j])
                .map(|(a, b)| ssim(a, b))
                .collect::<Result<Vec<_>>>()?;
            let med = median(&scores).ok_or_else(|| Error::data("no images to compare"))?;
            values[i][j] = med;
            values[j][i] = med;
        }
    }
    Ok(SimilarityMatrix { methods, values })
}
