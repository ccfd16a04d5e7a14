//! Color and intensity statistics of RGB rasters.

use std::path::Path;

use crate::error::{Error, Result};

pub const HIST_BINS: usize = 8;
pub const INTRINSIC_COUNT: usize = 43;

/// Row-major 8-bit RGB pixel matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Raster { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Raster { width, height, data }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: &[[u8; 3]]) -> Result<Self> {
        Raster::new(width, height, pixels.iter().flatten().copied().collect())
    }

    /// Decode any supported portable raster (PNG, PNM) to RGB8.
    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::UnreadableRaster {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Raster::new(w, h, rgb.into_raw())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }
}

/// Eight uniform bins over 0–255 (bin `b` holds `32b..=32b+31`), normalized
/// by pixel count.
pub fn histogram8(channel: &[u8]) -> Result<[f64; HIST_BINS]> {
    if channel.is_empty() {
        return Err(Error::EmptyInput("histogram channel"));
    }
    let mut counts = [0u64; HIST_BINS];
    for &v in channel {
        counts[usize::from(v >> 5)] += 1;
    }
    let n = channel.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

pub fn luminance(px: [u8; 3]) -> f64 {
    0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2])
}

/// HSV hue in degrees, `None` for achromatic pixels.
fn hue_deg(px: [u8; 3]) -> Option<f64> {
    let [r, g, b] = px.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return None;
    }
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    Some(h.rem_euclid(360.0))
}

/// The 43 order-free statistics of a raster:
///
/// * `0..32`  – histograms of R, G, B and gray (rounded luminance)
/// * `32..37` – brightness, luminance, mean hue, mean saturation, mean value
/// * `37..43` – mean R, G, B then population variance R, G, B
///
/// Hue is the circular mean over chromatic pixels, in `[0, 360)`, and 0 when
/// no pixel has a defined hue.
pub fn intrinsic_image_features(raster: &Raster) -> Result<Vec<f64>> {
    if raster.is_empty() {
        return Err(Error::EmptyInput("raster"));
    }
    let n = raster.pixel_count();
    let mut chans: [Vec<u8>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    let mut sum = [0.0f64; 3];
    let (mut bright, mut lum, mut sat, mut val) = (0.0, 0.0, 0.0, 0.0);
    let (mut hue_sin, mut hue_cos, mut chromatic) = (0.0, 0.0, 0usize);

    for px in raster.pixels() {
        for c in 0..3 {
            chans[c].push(px[c]);
            sum[c] += f64::from(px[c]);
        }
        let y = luminance(px);
        chans[3].push(y.round().clamp(0.0, 255.0) as u8);
        lum += y;
        bright += (f64::from(px[0]) + f64::from(px[1]) + f64::from(px[2])) / 3.0;
        let max = f64::from(px[0].max(px[1]).max(px[2]));
        let min = f64::from(px[0].min(px[1]).min(px[2]));
        val += max;
        if max > 0.0 {
            sat += (max - min) / max;
        }
        if let Some(h) = hue_deg(px) {
            let rad = h.to_radians();
            hue_sin += rad.sin();
            hue_cos += rad.cos();
            chromatic += 1;
        }
    }

    let nf = n as f64;
    let mut out = Vec::with_capacity(INTRINSIC_COUNT);
    for ch in &chans {
        out.extend_from_slice(&histogram8(ch)?);
    }
    let resultant = hue_sin.hypot(hue_cos);
    let mean_hue = if chromatic == 0 || resultant <= 1e-12 * chromatic as f64 {
        0.0
    } else {
        let h = hue_sin.atan2(hue_cos).to_degrees().rem_euclid(360.0);
        // rem_euclid can return exactly 360.0 for tiny negative inputs
        if h >= 360.0 { 0.0 } else { h }
    };
    out.extend_from_slice(&[bright / nf, lum / nf, mean_hue, sat / nf, val / nf]);

    let means = sum.map(|s| s / nf);
    let mut var = [0.0f64; 3];
    for px in raster.pixels() {
        for c in 0..3 {
            let d = f64::from(px[c]) - means[c];
            var[c] += d * d;
        }
    }
    out.extend_from_slice(&means);
    out.extend(var.iter().map(|v| v / nf));
    debug_assert_eq!(out.len(), INTRINSIC_COUNT);
    Ok(out)
}

/// Feature names for the intrinsic block, in output order.
pub fn intrinsic_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(INTRINSIC_COUNT);
    for ch in ["r", "g", "b", "gray"] {
        for b in 0..HIST_BINS {
            names.push(format!("hist_{ch}_{b}"));
        }
    }
    for s in ["brightness", "luminance", "mean_hue", "mean_saturation", "mean_value"] {
        names.push(s.to_string());
    }
    for s in ["mean_r", "mean_g", "mean_b", "var_r", "var_g", "var_b"] {
        names.push(s.to_string());
    }
    names
}
