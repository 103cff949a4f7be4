//! Heatmap export: one pixel per node, `y` up, with a JSON sidecar holding the
//! color scale.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use shg_core::RealField;

/// Color of non-finite (masked) nodes.
pub const NAN_COLOR: [u8; 3] = [255, 0, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    Gray,
    #[default]
    Viridis,
}

// Samples of viridis at 0, 1/4, 1/2, 3/4, 1.
const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

impl Colormap {
    /// Color of `t` in `[0, 1]`.
    pub fn color(self, t: f64) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0);
        match self {
            Colormap::Gray => {
                let v = (255.0 * t).round() as u8;
                [v, v, v]
            }
            Colormap::Viridis => {
                let s = t * (VIRIDIS.len() - 1) as f64;
                let i = (s.floor() as usize).min(VIRIDIS.len() - 2);
                let f = s - i as f64;
                let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
                [0, 1, 2].map(|c| (a[c] + f * (b[c] - a[c])).round() as u8)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub min: f64,
    pub max: f64,
    pub colormap: Colormap,
    pub nan_color: [u8; 3],
    pub masked_nodes: usize,
}

pub fn render(field: &RealField, cmap: Colormap) -> (RgbImage, Sidecar) {
    let g = field.grid();
    let finite = field.values().iter().copied().filter(|v| v.is_finite());
    let (min, max) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = max - min;
    let mut img = RgbImage::new(g.nx as u32, g.ny as u32);
    let mut masked = 0;
    for (p, &v) in field.values().iter().enumerate() {
        let (i, j) = g.ij(p);
        let c = if v.is_finite() {
            cmap.color(if span > 0.0 { (v - min) / span } else { 0.5 })
        } else {
            masked += 1;
            NAN_COLOR
        };
        img.put_pixel(i as u32, (g.ny - 1 - j) as u32, Rgb(c));
    }
    let side = Sidecar {
        min: if min.is_finite() { min } else { f64::NAN },
        max: if max.is_finite() { max } else { f64::NAN },
        colormap: cmap,
        nan_color: NAN_COLOR,
        masked_nodes: masked,
    };
    (img, side)
}

#[derive(Debug, thiserror::Error)]
pub enum PngError {
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("sidecar: {0}")]
    Json(#[from] serde_json::Error),
}

/// Write `path` and `path` with extension `.json`; returns both paths.
pub fn export_png(field: &RealField, cmap: Colormap, path: &Path) -> Result<[PathBuf; 2], PngError> {
    let (img, side) = render(field, cmap);
    img.save_with_format(path, image::ImageFormat::Png)?;
    let sidecar = path.with_extension("json");
    std::fs::write(&sidecar, serde_json::to_string_pretty(&side)? + "\n")?;
    Ok([path.to_path_buf(), sidecar])
}
