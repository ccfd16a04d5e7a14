//! Synthetic data with known ground truth, and a brute-force CCA oracle.
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`), a
//! counter-based stream generator, seeded with `seed_from_u64(seed)`. Normal
//! deviates use `rand_distr::StandardNormal`. Draw order is fixed and
//! documented per generator, so a seed fully determines every output byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{IMAGE_FEATURE_COUNT, TEXT_FEATURE_COUNT};
use crate::ingest::{self, BBox, Corpus, Element, Fixation, Modality, Page, Viewport};
use crate::pairing::PairRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Rows produced by [`gen_correlated_pairs`].
    pub n_pairs: usize,
    pub latent_dim: usize,
    /// Population canonical correlations of the latent columns, descending.
    pub target_rhos: Vec<f64>,
    /// Per-feature noise added to the salience signal of corpus elements.
    pub noise_sigma: f64,
    /// How strongly element appearance encodes its fixation rank (0 = not at all).
    pub fi_signal_strength: f64,
    pub seed: u64,
    pub text_dim: usize,
    pub image_dim: usize,
    pub pages: usize,
    pub participants: usize,
    pub texts_per_page: usize,
    pub images_per_page: usize,
    /// Probability of an extra sub-threshold fixation after each visit.
    pub short_fixation_rate: f64,
    /// Probability of an extra fixation on blank space after each visit.
    pub miss_rate: f64,
    /// Probability of refixating an already visited element after each visit.
    pub refixation_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_pairs: 5000,
            latent_dim: 3,
            target_rhos: vec![0.95, 0.80, 0.50],
            noise_sigma: 0.1,
            fi_signal_strength: 1.0,
            seed: 0,
            text_dim: TEXT_FEATURE_COUNT,
            image_dim: IMAGE_FEATURE_COUNT,
            pages: 12,
            participants: 6,
            texts_per_page: 6,
            images_per_page: 6,
            short_fixation_rate: 0.15,
            miss_rate: 0.1,
            refixation_rate: 0.1,
        }
    }
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    fn validate_pairs(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_pairs < 2 {
            return bad("n_pairs must be at least 2".into());
        }
        if self.target_rhos.len() != self.latent_dim {
            return bad(format!(
                "target_rhos has {} entries but latent_dim is {}",
                self.target_rhos.len(),
                self.latent_dim
            ));
        }
        if self.latent_dim > self.text_dim.min(self.image_dim) {
            return bad("latent_dim exceeds the feature dimensions".into());
        }
        if self.target_rhos.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return bad("target_rhos must lie in (0, 1]".into());
        }
        if self.target_rhos.windows(2).any(|w| w[0] < w[1]) {
            return bad("target_rhos must be descending".into());
        }
        Ok(())
    }

    fn validate_corpus(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.pages == 0 || self.participants == 0 {
            return bad("pages and participants must be positive");
        }
        if self.texts_per_page.max(self.images_per_page) > MAX_ROWS {
            return bad("at most 7 elements per modality fit on a page");
        }
        if !(self.noise_sigma >= 0.0 && self.fi_signal_strength >= 0.0) {
            return bad("noise_sigma and fi_signal_strength must be nonnegative");
        }
        for r in [self.short_fixation_rate, self.miss_rate, self.refixation_rate] {
            if !(0.0..=1.0).contains(&r) {
                return bad("rates must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedPairs {
    pub text: DMatrix<f64>,
    pub image: DMatrix<f64>,
    pub true_rhos: Vec<f64>,
}

/// Latent-plus-noise pairs: column `k < latent_dim` of each side is
/// `z_k + σ_k ε` with `σ_k² = (1 − ρ_k)/ρ_k`, giving population correlation
/// `ρ_k`; remaining columns are independent unit normals.
///
/// Draw order per row: `z_0..z_{L-1}`, then the text row, then the image row.
pub fn gen_correlated_pairs(spec: &SynthSpec) -> Result<CorrelatedPairs> {
    spec.validate_pairs()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let sigmas: Vec<f64> = spec.target_rhos.iter().map(|r| ((1.0 - r) / r).sqrt()).collect();
    let (n, pt, pi, l) = (spec.n_pairs, spec.text_dim, spec.image_dim, spec.latent_dim);
    let mut text = DMatrix::zeros(n, pt);
    let mut image = DMatrix::zeros(n, pi);
    let mut z = vec![0.0; l];
    for row in 0..n {
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        for j in 0..pt {
            let e: f64 = rng.sample(StandardNormal);
            text[(row, j)] = if j < l { z[j] + sigmas[j] * e } else { e };
        }
        for j in 0..pi {
            let e: f64 = rng.sample(StandardNormal);
            image[(row, j)] = if j < l { z[j] + sigmas[j] * e } else { e };
        }
    }
    Ok(CorrelatedPairs {
        text,
        image,
        true_rhos: spec.target_rhos.clone(),
    })
}

/// Exhaustive search over unit directions `u(θ_t)`, `v(θ_i)`, θ ∈ [0°, 180°).
///
/// Returns the largest absolute sample Pearson correlation of `T u` and
/// `I v` (a direction and its negation are the same axis) and the angles
/// attaining it, smallest angles first on ties.
pub fn brute_force_cca_2d(t: &DMatrix<f64>, i: &DMatrix<f64>, step_deg: f64) -> Result<(f64, f64, f64)> {
    if t.ncols() != 2 || i.ncols() != 2 {
        return Err(Error::InvalidArgument("brute force oracle needs two columns per side".into()));
    }
    let n = t.nrows();
    if i.nrows() != n {
        return Err(Error::RowCountMismatch { left: n, right: i.nrows() });
    }
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    if !(step_deg > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    // Raw second moments around the column means.
    let nf = n as f64;
    let mean = |m: &DMatrix<f64>, c: usize| m.column(c).iter().sum::<f64>() / nf;
    let (mt, mi) = ([mean(t, 0), mean(t, 1)], [mean(i, 0), mean(i, 1)]);
    let mut ctt = [[0.0; 2]; 2];
    let mut cii = [[0.0; 2]; 2];
    let mut cti = [[0.0; 2]; 2];
    for r in 0..n {
        let a = [t[(r, 0)] - mt[0], t[(r, 1)] - mt[1]];
        let b = [i[(r, 0)] - mi[0], i[(r, 1)] - mi[1]];
        for p in 0..2 {
            for q in 0..2 {
                ctt[p][q] += a[p] * a[q];
                cii[p][q] += b[p] * b[q];
                cti[p][q] += a[p] * b[q];
            }
        }
    }
    let steps = (180.0 / step_deg).ceil() as usize;
    let angle = |k: usize| k as f64 * step_deg;
    let dir = |k: usize| {
        let r = angle(k).to_radians();
        [r.cos(), r.sin()]
    };
    let quad = |m: &[[f64; 2]; 2], u: [f64; 2], v: [f64; 2]| {
        u[0] * (m[0][0] * v[0] + m[0][1] * v[1]) + u[1] * (m[1][0] * v[0] + m[1][1] * v[1])
    };
    let best_per_row: Vec<(f64, usize, usize)> = (0..steps)
        .into_par_iter()
        .map(|kt| {
            let u = dir(kt);
            let vt = quad(&ctt, u, u);
            let mut best = (f64::NEG_INFINITY, kt, 0);
            for ki in 0..steps {
                let v = dir(ki);
                let vi = quad(&cii, v, v);
                let c = quad(&cti, u, v) / (vt * vi).sqrt();
                let c = if c.is_finite() { c.abs() } else { 0.0 };
                if c > best.0 {
                    best = (c, kt, ki);
                }
            }
            best
        })
        .collect();
    let mut best = best_per_row[0];
    for cand in &best_per_row[1..] {
        if cand.0 > best.0 {
            best = *cand;
        }
    }
    Ok((best.0, angle(best.1), angle(best.2)))
}

/// Ground truth emitted with a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Expected pairing output, sorted like `build_pairs` output.
    pub pairs: Vec<PairRow>,
    /// Salience rank of each element within its page and modality.
    pub ranks: BTreeMap<String, u32>,
    pub spec: SynthSpec,
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
const MAX_ROWS: usize = 7;
const ELEMENT_RASTER: u32 = 8;
const SHOT_W: u32 = 48;
const SHOT_H: u32 = 30;

fn clamp_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

struct SynthElement {
    element: Element,
    raster: Option<(PathBuf, Vec<u8>)>,
}

/// Write a synthetic corpus under `root` and return it loaded, with its
/// ground truth. Element appearance encodes each element's salience rank
/// with strength `fi_signal_strength` plus `noise_sigma` noise; every
/// participant visits each modality in rank order, so rank equals
/// fixation index.
pub fn gen_attention_corpus(spec: &SynthSpec, root: &Path) -> Result<(Corpus, GroundTruth)> {
    spec.validate_corpus()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let viewport = Viewport::default();
    fs::create_dir_all(root.join("rasters")).map_err(|e| Error::io(root, e))?;

    let mut pages = Vec::new();
    let mut elements = Vec::new();
    let mut rasters: Vec<(PathBuf, u32, u32, Vec<u8>)> = Vec::new();
    let mut fixations = Vec::new();
    let mut truth = Vec::new();
    let mut ranks = BTreeMap::new();

    for w in 0..spec.pages {
        let page_id = format!("page{w:03}");
        let shot_ref = PathBuf::from(format!("rasters/{page_id}.png"));
        let bg = 215.0 + 25.0 * rng.random::<f64>();
        let shot: Vec<u8> = (0..SHOT_W * SHOT_H)
            .flat_map(|_| {
                let j: f64 = rng.random_range(-6.0..6.0);
                [clamp_u8(bg + j), clamp_u8(bg + j), clamp_u8(bg - 8.0 + j)]
            })
            .collect();
        rasters.push((shot_ref.clone(), SHOT_W, SHOT_H, shot));
        pages.push(Page {
            page_id: page_id.clone(),
            viewport,
            screenshot_ref: shot_ref,
        });

        let page_elements = gen_page_elements(spec, &page_id, &mut rng);
        let mut by_modality: BTreeMap<Modality, Vec<&Element>> = BTreeMap::new();
        for se in &page_elements {
            by_modality.entry(se.element.modality).or_default().push(&se.element);
        }
        for list in by_modality.values() {
            for (r, e) in list.iter().enumerate() {
                ranks.insert(e.element_id.clone(), r as u32 + 1);
            }
        }
        let texts = by_modality.remove(&Modality::Text).unwrap_or_default();
        let images = by_modality.remove(&Modality::Image).unwrap_or_default();

        for p in 0..spec.participants {
            let participant = format!("p{p:02}");
            let (fixes, pairs) = gen_session(spec, &participant, &page_id, &texts, &images, &mut rng);
            fixations.extend(fixes);
            truth.extend(pairs);
        }
        for se in page_elements {
            if let Some((path, data)) = se.raster {
                rasters.push((path, ELEMENT_RASTER, ELEMENT_RASTER, data));
            }
            elements.push(se.element);
        }
    }

    rasters
        .par_iter()
        .map(|(rel, w, h, data)| {
            let path = root.join(rel);
            image::save_buffer(&path, data, *w, *h, image::ExtendedColorType::Rgb8).map_err(|e| {
                Error::UnreadableRaster {
                    path: path.clone(),
                    reason: e.to_string(),
                }
            })
        })
        .collect::<Result<Vec<()>>>()?;

    truth.sort();
    let gt = GroundTruth {
        pairs: truth,
        ranks,
        spec: spec.clone(),
    };
    write_json(&root.join(ingest::PAGES_FILE), &pages)?;
    write_json(&root.join(ingest::ELEMENTS_FILE), &elements)?;
    write_json(&root.join(ingest::FIXATIONS_FILE), &fixations)?;
    write_json(&root.join(GROUND_TRUTH_FILE), &gt)?;
    let corpus = ingest::load_corpus(root)?;
    Ok((corpus, gt))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Slots form a grid of two columns separated by a blank gutter.
fn slot_bbox(slot: usize, rows: usize) -> BBox {
    let col = slot % 2;
    let row = slot / 2;
    let row_h = 1000.0 / rows as f64;
    BBox::new(40.0 + col as f64 * 840.0, 25.0 + row as f64 * row_h, 760.0, row_h * 0.8)
}

/// Blank gutter between the two columns.
fn gutter_point(rng: &mut ChaCha20Rng) -> (f64, f64) {
    (rng.random_range(805.0..875.0), rng.random_range(30.0..1000.0))
}

fn gen_page_elements(spec: &SynthSpec, page_id: &str, rng: &mut ChaCha20Rng) -> Vec<SynthElement> {
    let nt = spec.texts_per_page;
    let ni = spec.images_per_page;
    let rows = nt.max(ni).max(1);
    let mut slots: Vec<usize> = (0..2 * rows).collect();
    slots.shuffle(rng);
    let mut out = Vec::with_capacity(nt + ni);
    let noise = |rng: &mut ChaCha20Rng| -> f64 { spec.noise_sigma * rng.sample::<f64, _>(StandardNormal) };

    for (r, &slot) in slots.iter().take(nt).enumerate() {
        let a = spec.fi_signal_strength * (r as f64 - (nt as f64 - 1.0) / 2.0);
        let mut style = BTreeMap::new();
        style.insert("font-size".into(), format!("{:.3}px", 18.0 + 2.0 * (a + noise(rng))));
        style.insert("font-weight".into(), format!("{:.2}", 500.0 + 60.0 * (a + noise(rng))));
        style.insert("line-height".into(), format!("{:.3}px", 24.0 + 3.0 * (a + noise(rng))));
        style.insert("letter-spacing".into(), format!("{:.4}px", 0.5 + 0.4 * (a + noise(rng))));
        let red = clamp_u8(128.0 + 35.0 * (a + noise(rng)));
        let green = clamp_u8(128.0 - 35.0 * (a + noise(rng)));
        style.insert("color".into(), format!("rgb({red}, {green}, 90)"));
        style.insert("text-align".into(), "left".into());
        out.push(SynthElement {
            element: Element {
                element_id: format!("{page_id}-t{r}"),
                page_id: page_id.to_string(),
                modality: Modality::Text,
                bbox: slot_bbox(slot, rows),
                style_attrs: Some(style),
                raster_ref: None,
                z_order: 0,
            },
            raster: None,
        });
    }
    for r in 0..ni {
        let a = spec.fi_signal_strength * (r as f64 - (ni as f64 - 1.0) / 2.0);
        let base_r = 128.0 + 35.0 * (a + noise(rng));
        let base_g = 128.0 - 35.0 * (a + noise(rng));
        let base_b = 100.0 + 20.0 * (a + noise(rng));
        let data: Vec<u8> = (0..ELEMENT_RASTER * ELEMENT_RASTER)
            .flat_map(|_| {
                let j: f64 = rng.random_range(-3.0..3.0);
                [clamp_u8(base_r + j), clamp_u8(base_g + j), clamp_u8(base_b + j)]
            })
            .collect();
        let id = format!("{page_id}-i{r}");
        let rel = PathBuf::from(format!("rasters/{id}.png"));
        out.push(SynthElement {
            element: Element {
                element_id: id,
                page_id: page_id.to_string(),
                modality: Modality::Image,
                bbox: slot_bbox(slots[nt + r], rows),
                style_attrs: None,
                raster_ref: Some(rel.clone()),
                z_order: 0,
            },
            raster: Some((rel, data)),
        });
    }
    out
}

fn point_in(b: &BBox, rng: &mut ChaCha20Rng) -> (f64, f64) {
    let cx = b.x + b.w / 2.0;
    let cy = b.y + b.h / 2.0;
    (
        cx + rng.random_range(-0.3..0.3) * b.w,
        cy + rng.random_range(-0.3..0.3) * b.h,
    )
}

fn gen_session(
    spec: &SynthSpec,
    participant: &str,
    page_id: &str,
    texts: &[&Element],
    images: &[&Element],
    rng: &mut ChaCha20Rng,
) -> (Vec<Fixation>, Vec<PairRow>) {
    // Interleave the two rank-ordered streams at random.
    let mut order: Vec<Modality> = std::iter::repeat_n(Modality::Text, texts.len())
        .chain(std::iter::repeat_n(Modality::Image, images.len()))
        .collect();
    order.shuffle(rng);
    let (mut ti, mut ii) = (0usize, 0usize);
    let mut clock: i64 = rng.random_range(0..200);
    let mut fixes = Vec::new();
    let mut visited: Vec<&Element> = Vec::new();
    let push = |x: f64, y: f64, dur: i64, clock: &mut i64, fixes: &mut Vec<Fixation>| {
        fixes.push(Fixation {
            participant_id: participant.to_string(),
            page_id: page_id.to_string(),
            x,
            y,
            onset_ms: *clock,
            duration_ms: dur,
        });
        *clock += dur + 30;
    };
    for m in order {
        let e = match m {
            Modality::Text => {
                ti += 1;
                texts[ti - 1]
            }
            Modality::Image => {
                ii += 1;
                images[ii - 1]
            }
        };
        let (x, y) = point_in(&e.bbox, rng);
        let dur = rng.random_range(120..600);
        push(x, y, dur, &mut clock, &mut fixes);
        visited.push(e);

        if rng.random::<f64>() < spec.short_fixation_rate {
            let all: Vec<&Element> = texts.iter().chain(images.iter()).copied().collect();
            let target = all[rng.random_range(0..all.len())];
            let (x, y) = point_in(&target.bbox, rng);
            let dur = rng.random_range(20..100);
            push(x, y, dur, &mut clock, &mut fixes);
        }
        if rng.random::<f64>() < spec.miss_rate {
            let (x, y) = gutter_point(rng);
            let dur = rng.random_range(120..400);
            push(x, y, dur, &mut clock, &mut fixes);
        }
        if rng.random::<f64>() < spec.refixation_rate {
            let target = visited[rng.random_range(0..visited.len())];
            let (x, y) = point_in(&target.bbox, rng);
            let dur = rng.random_range(120..400);
            push(x, y, dur, &mut clock, &mut fixes);
        }
    }
    let pairs = texts
        .iter()
        .zip(images.iter())
        .enumerate()
        .map(|(k, (t, i))| PairRow {
            participant_id: participant.to_string(),
            page_id: page_id.to_string(),
            fixation_index: k as u32 + 1,
            text_element: t.element_id.clone(),
            image_element: i.element_id.clone(),
        })
        .collect();
    (fixes, pairs)
}
