//! Byte-cost and transfer-time arithmetic for replacing images with text.
//!
//! Sizes are kept in bytes internally and reported in kB (1024 bytes);
//! bandwidths are in kilobits per second.

use std::collections::BTreeSet;
use std::fs;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Corpus, Modality, Viewport};

pub const KILO: f64 = 1024.0;

/// Reference bandwidths in kbps.
pub const LDC_KBPS: f64 = 6.0;
pub const DEVELOPING_KBPS: f64 = 53.0;
pub const DEVELOPED_KBPS: f64 = 140.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub viewport: Viewport,
    pub font_px: u32,
    pub bytes_per_char: u32,
    pub formatting_bytes_per_char: u32,
    pub bandwidth_kbps: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            viewport: Viewport::default(),
            font_px: 16,
            bytes_per_char: 4,
            formatting_bytes_per_char: 1,
            bandwidth_kbps: DEVELOPING_KBPS,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if self.viewport.width_px == 0 || self.viewport.height_px == 0 || self.font_px == 0 || self.bytes_per_char == 0 {
            return Err(Error::InvalidArgument("cost parameters must be positive".into()));
        }
        if !(self.bandwidth_kbps > 0.0) {
            return Err(Error::ZeroBandwidth);
        }
        Ok(())
    }

    /// Characters of `font_px` square glyphs that fit on one screen.
    pub fn screen_chars(&self) -> u64 {
        let area = u64::from(self.viewport.width_px) * u64::from(self.viewport.height_px);
        area / (u64::from(self.font_px) * u64::from(self.font_px))
    }

    pub fn screen_text_bytes(&self) -> u64 {
        self.screen_chars() * u64::from(self.bytes_per_char + self.formatting_bytes_per_char)
    }
}

/// Cost in kB of a screen filled with text.
pub fn screen_text_cost_kb(params: &CostParams) -> f64 {
    params.screen_text_bytes() as f64 / KILO
}

/// Percentage saved by replacing content costing `replaced_cost_kb` with text.
pub fn saving_pct(replaced_cost_kb: f64, text_cost_kb: f64) -> Result<f64> {
    if !(text_cost_kb > 0.0) {
        return Err(Error::ZeroTextCost);
    }
    Ok((replaced_cost_kb - text_cost_kb) * 100.0 / text_cost_kb)
}

/// Saving when only a `micro_f1` fraction of the page's image cost is replaced.
pub fn achieved_saving_pct(avg_page_image_cost_kb: f64, micro_f1: f64, text_cost_kb: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&micro_f1) {
        return Err(Error::InvalidArgument(format!("micro_f1 must be in [0, 1], got {micro_f1}")));
    }
    saving_pct(avg_page_image_cost_kb * micro_f1, text_cost_kb)
}

/// Seconds to transfer `cost_kb` kilobytes at `bandwidth_kbps` kilobits/s.
pub fn render_time_s(cost_kb: f64, bandwidth_kbps: f64) -> Result<f64> {
    if !(bandwidth_kbps > 0.0) {
        return Err(Error::ZeroBandwidth);
    }
    Ok(cost_kb * 8.0 / bandwidth_kbps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageCosts {
    pub total_kb: f64,
    pub mean_per_image_kb: f64,
    pub mean_per_page_kb: f64,
    pub image_count: usize,
    pub page_count: usize,
}

/// On-disk size of every image element's raster, summarized per image and per page.
pub fn corpus_image_costs(corpus: &Corpus) -> Result<ImageCosts> {
    let mut total_bytes = 0u64;
    let mut count = 0usize;
    let mut pages = BTreeSet::new();
    for e in corpus.elements.iter().filter(|e| e.modality == Modality::Image) {
        let rel = e.raster_ref.as_ref().ok_or_else(|| Error::UnreadableRaster {
            path: e.element_id.clone().into(),
            reason: "no raster_ref".into(),
        })?;
        let path = corpus.resolve(rel);
        let meta = fs::metadata(&path).map_err(|err| Error::UnreadableRaster {
            path: path.clone(),
            reason: err.to_string(),
        })?;
        total_bytes += meta.len();
        count += 1;
        pages.insert(e.page_id.as_str());
    }
    let page_count = corpus.pages.len().max(pages.len());
    let total_kb = total_bytes as f64 / KILO;
    Ok(ImageCosts {
        total_kb,
        mean_per_image_kb: if count == 0 { 0.0 } else { total_kb / count as f64 },
        mean_per_page_kb: if page_count == 0 { 0.0 } else { total_kb / page_count as f64 },
        image_count: count,
        page_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderTime {
    pub bandwidth_kbps: f64,
    pub before_s: f64,
    pub after_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: CostParams,
    pub micro_f1: f64,
    pub screen_chars: u64,
    pub text_cost_kb: f64,
    pub image_cost_kb_per_image: f64,
    pub image_cost_kb_per_page: f64,
    pub min_saving_pct: f64,
    pub max_saving_pct: f64,
    pub achieved_saving_pct: f64,
    /// Transfer time of the replaceable image share (`per_page × micro_f1`).
    pub render_time_before_s: f64,
    /// Transfer time of the replacing text.
    pub render_time_after_s: f64,
    pub render_times: Vec<RenderTime>,
}

/// Assemble the full report from per-image and per-page image costs.
pub fn cost_report(params: &CostParams, per_image_kb: f64, per_page_kb: f64, micro_f1: f64) -> Result<CostReport> {
    params.validate()?;
    let text = screen_text_cost_kb(params);
    let replaced = per_page_kb * micro_f1;
    let mut bandwidths = vec![LDC_KBPS, DEVELOPING_KBPS, DEVELOPED_KBPS];
    if !bandwidths.contains(&params.bandwidth_kbps) {
        bandwidths.push(params.bandwidth_kbps);
    }
    let render_times = bandwidths
        .into_iter()
        .map(|bw| {
            Ok(RenderTime {
                bandwidth_kbps: bw,
                before_s: render_time_s(replaced, bw)?,
                after_s: render_time_s(text, bw)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CostReport {
        params: *params,
        micro_f1,
        screen_chars: params.screen_chars(),
        text_cost_kb: text,
        image_cost_kb_per_image: per_image_kb,
        image_cost_kb_per_page: per_page_kb,
        min_saving_pct: saving_pct(per_image_kb, text)?,
        max_saving_pct: saving_pct(per_page_kb, text)?,
        achieved_saving_pct: achieved_saving_pct(per_page_kb, micro_f1, text)?,
        render_time_before_s: render_time_s(replaced, params.bandwidth_kbps)?,
        render_time_after_s: render_time_s(text, params.bandwidth_kbps)?,
        render_times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn screen_capacity() {
        let p = CostParams::default();
        assert_eq!(p.screen_chars(), 6890);
        assert_eq!(p.screen_text_bytes(), 34450);
        assert!(close(screen_text_cost_kb(&p), 33.64, 0.01));
        let tiny = CostParams {
            viewport: Viewport { width_px: 16, height_px: 16 },
            ..p
        };
        assert_eq!(tiny.screen_chars(), 1);
        assert_eq!(tiny.screen_text_bytes(), 5);
        let small = CostParams {
            viewport: Viewport { width_px: 256, height_px: 256 },
            ..p
        };
        assert_eq!(small.screen_chars(), 256);
        assert_eq!(screen_text_cost_kb(&small), 1.25);
    }

    #[test]
    fn savings() {
        assert!(close(saving_pct(61.68, 33.64).unwrap(), 83.35, 0.01));
        assert!(close(saving_pct(389.8, 33.64).unwrap(), 1058.74, 0.01));
        assert_eq!(saving_pct(33.64, 33.64).unwrap(), 0.0);
        assert!(matches!(saving_pct(1.0, 0.0), Err(Error::ZeroTextCost)));
        assert!(close(achieved_saving_pct(389.8, 0.52, 33.64).unwrap(), 502.54, 0.01));
        assert_eq!(achieved_saving_pct(389.8, 0.0, 33.64).unwrap(), -100.0);
        assert_eq!(achieved_saving_pct(389.8, 1.0, 33.64).unwrap(), saving_pct(389.8, 33.64).unwrap());
        assert!(achieved_saving_pct(389.8, 1.5, 33.64).is_err());
    }

    #[test]
    fn render_times() {
        assert!(close(render_time_s(202.696, 53.0).unwrap(), 30.60, 0.01));
        assert!(close(render_time_s(33.64, 53.0).unwrap(), 5.078, 0.01));
        assert_eq!(render_time_s(7.5, 6.0).unwrap(), 10.0);
        assert!(matches!(render_time_s(1.0, 0.0), Err(Error::ZeroBandwidth)));
    }

    #[test]
    fn report_composes() {
        let r = cost_report(&CostParams::default(), 61.68, 389.8, 0.52).unwrap();
        let text = r.text_cost_kb;
        assert_eq!(r.min_saving_pct, saving_pct(61.68, text).unwrap());
        assert_eq!(r.max_saving_pct, saving_pct(389.8, text).unwrap());
        assert_eq!(r.achieved_saving_pct, achieved_saving_pct(389.8, 0.52, text).unwrap());
        // the unrounded text cost (33.6426 kB) shifts the percentages by ~0.01
        assert!(close(r.min_saving_pct, 83.35, 0.02));
        assert!(close(r.render_time_before_s, 30.6, 0.01));
        assert_eq!(r.render_times.len(), 3);
    }
}
