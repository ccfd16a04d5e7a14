//! Fixed-length visual feature vectors for text (70) and image (91) elements.

pub mod css;
pub mod image;
pub mod manifest;

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BBox, Corpus, Element, Modality, Viewport};
use crate::pairing::PairedDataset;

pub use self::image::{histogram8, intrinsic_image_features, Raster, INTRINSIC_COUNT};
pub use self::manifest::{ExtractorKind, FeatureManifest, ManifestEntry, TEXT_FEATURE_COUNT};

pub const IMAGE_FEATURE_COUNT: usize = 5 + 2 * INTRINSIC_COUNT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextFeatureVector(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatureVector(pub Vec<f64>);

impl ImageFeatureVector {
    pub fn positional(&self) -> &[f64] {
        &self.0[..5]
    }

    pub fn intrinsic(&self) -> &[f64] {
        &self.0[5..5 + INTRINSIC_COUNT]
    }

    pub fn contrast(&self) -> &[f64] {
        &self.0[5 + INTRINSIC_COUNT..]
    }
}

/// `(top, left, right, bottom, area)` of the box clipped to the viewport.
pub fn positional_features(bbox: &BBox, viewport: &Viewport) -> [f64; 5] {
    let b = bbox.clip_to(viewport);
    [
        b.y,
        b.x,
        f64::from(viewport.width_px) - (b.x + b.w),
        f64::from(viewport.height_px) - (b.y + b.h),
        b.area(),
    ]
}

fn attr<'a>(element: &'a Element, name: &str) -> Option<&'a str> {
    element
        .style_attrs
        .as_ref()
        .and_then(|m| m.get(name))
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
}

fn unparsable(attr: &str, value: &str) -> Error {
    Error::UnparsableAttribute {
        attr: attr.to_string(),
        value: value.to_string(),
    }
}

fn side_index(side: &str) -> Option<usize> {
    ["top", "left", "right", "bottom"].iter().position(|s| *s == side)
}

fn scalar_value(entry: &ManifestEntry, raw: &str, viewport: &Viewport) -> Result<f64> {
    let key = raw.to_ascii_lowercase();
    if let Some(v) = entry.keywords.get(&key) {
        return Ok(*v);
    }
    if entry.kind != ExtractorKind::Ordinal && css::is_defaulting_keyword(raw) {
        return Ok(entry.default_value);
    }
    let parsed = match entry.kind {
        ExtractorKind::Length => raw
            .split_whitespace()
            .next()
            .and_then(|first| css::parse_length(first, viewport)),
        ExtractorKind::Number => css::parse_number(raw),
        ExtractorKind::Ordinal => entry.levels.iter().position(|l| *l == key).map(|i| i as f64),
        _ => None,
    };
    parsed.ok_or_else(|| unparsable(&entry.source_attr, raw))
}

fn entry_value(entry: &ManifestEntry, element: &Element, viewport: &Viewport, pos: &[f64; 5]) -> Result<f64> {
    match entry.kind {
        ExtractorKind::Position => {
            let i = match entry.source_attr.as_str() {
                "area" => 4,
                s => side_index(s).ok_or_else(|| Error::schema("manifest", format!("unknown edge {s:?}")))?,
            };
            Ok(pos[i])
        }
        ExtractorKind::Color => {
            let Some(raw) = attr(element, &entry.source_attr) else {
                return Ok(entry.default_value);
            };
            if css::is_defaulting_keyword(raw) {
                return Ok(entry.default_value);
            }
            // Multi-valued shorthands (border-color) use their first color.
            let first = if raw.contains('(') { raw } else { raw.split_whitespace().next().unwrap_or(raw) };
            let rgba = css::parse_color(first).ok_or_else(|| unparsable(&entry.source_attr, raw))?;
            let idx = match entry.component.as_deref() {
                Some("r") => 0,
                Some("g") => 1,
                Some("b") => 2,
                _ => 3,
            };
            Ok(rgba[idx])
        }
        ExtractorKind::Space => {
            let side = entry.component.as_deref().unwrap_or("top");
            let longhand = format!("{}-{}", entry.source_attr, side);
            if let Some(raw) = attr(element, &longhand) {
                return scalar_value(&length_entry(entry, &longhand), raw, viewport);
            }
            let Some(raw) = attr(element, &entry.source_attr) else {
                return Ok(entry.default_value);
            };
            let sides = css::parse_box_shorthand(raw, viewport)
                .map_err(|_| unparsable(&entry.source_attr, raw))?;
            let i = side_index(side).ok_or_else(|| Error::schema("manifest", format!("unknown side {side:?}")))?;
            Ok(sides[i].unwrap_or(entry.default_value))
        }
        ExtractorKind::Length | ExtractorKind::Number | ExtractorKind::Ordinal => {
            match attr(element, &entry.source_attr) {
                Some(raw) => scalar_value(entry, raw, viewport),
                None => Ok(entry.default_value),
            }
        }
    }
}

fn length_entry(entry: &ManifestEntry, attr: &str) -> ManifestEntry {
    ManifestEntry {
        kind: ExtractorKind::Length,
        source_attr: attr.to_string(),
        ..entry.clone()
    }
}

/// Assemble a text element's features in manifest order; absent attributes
/// take the manifest defaults.
pub fn extract_text_features(
    element: &Element,
    viewport: &Viewport,
    manifest: &FeatureManifest,
) -> Result<TextFeatureVector> {
    if element.modality != Modality::Text {
        return Err(Error::InvalidArgument(format!(
            "element {:?} is not a text element",
            element.element_id
        )));
    }
    let pos = positional_features(&element.bbox, viewport);
    let values = manifest
        .entries
        .iter()
        .map(|e| entry_value(e, element, viewport, &pos))
        .collect::<Result<Vec<_>>>()?;
    Ok(TextFeatureVector(values))
}

/// `positional(5) ++ intrinsic(element)(43) ++ intrinsic(element) − intrinsic(page)(43)`.
pub fn extract_image_features(
    element_raster: &Raster,
    page_raster: &Raster,
    bbox: &BBox,
    viewport: &Viewport,
) -> Result<ImageFeatureVector> {
    let page = intrinsic_image_features(page_raster)?;
    image_features_against(element_raster, &page, bbox, viewport)
}

fn image_features_against(
    element_raster: &Raster,
    page_intrinsic: &[f64],
    bbox: &BBox,
    viewport: &Viewport,
) -> Result<ImageFeatureVector> {
    let own = intrinsic_image_features(element_raster)?;
    let mut v = Vec::with_capacity(IMAGE_FEATURE_COUNT);
    v.extend_from_slice(&positional_features(bbox, viewport));
    v.extend_from_slice(&own);
    v.extend(own.iter().zip(page_intrinsic).map(|(e, p)| e - p));
    Ok(ImageFeatureVector(v))
}

pub fn image_feature_names() -> Vec<String> {
    let intrinsic = image::intrinsic_feature_names();
    let mut names: Vec<String> = ["dist_top", "dist_left", "dist_right", "dist_bottom", "area"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(intrinsic.iter().cloned());
    names.extend(intrinsic.iter().map(|n| format!("contrast_{n}")));
    names
}

/// Per-element feature vectors for a whole corpus, keyed by element id.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    pub text: BTreeMap<String, Vec<f64>>,
    pub image: BTreeMap<String, Vec<f64>>,
}

pub fn extract_corpus_features(corpus: &Corpus, manifest: &FeatureManifest) -> Result<FeatureTable> {
    let page_stats: HashMap<&str, (Viewport, Vec<f64>)> = corpus
        .pages
        .par_iter()
        .map(|p| {
            let shot = Raster::open(&corpus.resolve(&p.screenshot_ref))?;
            Ok((p.page_id.as_str(), (p.viewport, intrinsic_image_features(&shot)?)))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<(Modality, String, Vec<f64>)> = corpus
        .elements
        .par_iter()
        .map(|e| {
            let (viewport, page_intrinsic) = page_stats
                .get(e.page_id.as_str())
                .ok_or_else(|| Error::DanglingReference(format!("page {:?}", e.page_id)))?;
            let values = match e.modality {
                Modality::Text => extract_text_features(e, viewport, manifest)?.0,
                Modality::Image => {
                    let rel = e.raster_ref.as_ref().ok_or_else(|| {
                        Error::schema("elements.json", format!("{:?} has no raster", e.element_id))
                    })?;
                    let raster = Raster::open(&corpus.resolve(rel))?;
                    image_features_against(&raster, page_intrinsic, &e.bbox, viewport)?.0
                }
            };
            Ok((e.modality, e.element_id.clone(), values))
        })
        .collect::<Result<_>>()?;

    let mut table = FeatureTable::default();
    for (m, id, v) in rows {
        match m {
            Modality::Text => table.text.insert(id, v),
            Modality::Image => table.image.insert(id, v),
        };
    }
    Ok(table)
}

/// Join pair rows with element features into aligned `T` and `I` matrices.
pub fn paired_matrices(pairs: &PairedDataset, table: &FeatureTable) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let lookup = |map: &BTreeMap<String, Vec<f64>>, id: &str| -> Result<Vec<f64>> {
        map.get(id)
            .cloned()
            .ok_or_else(|| Error::DanglingReference(format!("no features for element {id:?}")))
    };
    let t_rows = pairs
        .rows
        .iter()
        .map(|r| lookup(&table.text, &r.text_element))
        .collect::<Result<Vec<_>>>()?;
    let i_rows = pairs
        .rows
        .iter()
        .map(|r| lookup(&table.image, &r.image_element))
        .collect::<Result<Vec<_>>>()?;
    Ok((rows_to_matrix(&t_rows, TEXT_FEATURE_COUNT)?, rows_to_matrix(&i_rows, IMAGE_FEATURE_COUNT)?))
}

pub fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::LengthMismatch {
            expected: cols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

/// Per-column centering and scaling learned from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; 0 marks a constant column.
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    fn scale(&self, j: usize) -> f64 {
        if self.stds[j] > 0.0 {
            self.stds[j]
        } else {
            1.0
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .enumerate()
            .map(|(j, x)| (x - self.means[j]) / self.scale(j))
            .collect())
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.means[j]) / self.scale(j)))
    }
}

/// Relative threshold below which a column counts as constant.
const CONSTANT_REL_TOL: f64 = 1e-12;

/// Center every column and scale non-constant columns to unit population std.
pub fn standardize(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Standardizer)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let nf = n as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let mean = col.iter().sum::<f64>() / nf;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
        let std = var.sqrt();
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        means.push(mean);
        stds.push(if std <= CONSTANT_REL_TOL * scale.max(1.0) { 0.0 } else { std });
    }
    let st = Standardizer { means, stds };
    let z = st.apply_matrix(x)?;
    Ok((z, st))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text_el(attrs: &[(&str, &str)]) -> Element {
        Element {
            element_id: "t".into(),
            page_id: "w".into(),
            modality: Modality::Text,
            bbox: BBox::new(100., 50., 200., 100.),
            style_attrs: Some(attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()),
            raster_ref: None,
            z_order: 0,
        }
    }

    fn value(v: &TextFeatureVector, m: &FeatureManifest, name: &str) -> f64 {
        v.0[m.names().iter().position(|n| *n == name).unwrap()]
    }

    #[test]
    fn positional_examples() {
        let vp = Viewport::default();
        assert_eq!(positional_features(&BBox::new(0., 0., 1680., 1050.), &vp), [0., 0., 0., 0., 1_764_000.]);
        assert_eq!(positional_features(&BBox::new(100., 50., 200., 100.), &vp), [50., 100., 1380., 900., 20000.]);
        assert_eq!(positional_features(&BBox::new(0., 0., 1., 1.), &vp), [0., 0., 1679., 1049., 1.]);
    }

    #[test]
    fn text_color_and_margin() {
        let m = FeatureManifest::default();
        let vp = Viewport::default();
        let v = extract_text_features(
            &text_el(&[("color", "rgba(255,0,0,0.5)"), ("margin", "1px 2px 3px 4px")]),
            &vp,
            &m,
        )
        .unwrap();
        assert_eq!(v.0.len(), 70);
        let block: Vec<f64> = ["color_r", "color_g", "color_b", "color_a"].iter().map(|n| value(&v, &m, n)).collect();
        assert_eq!(block, vec![255., 0., 0., 0.5]);
        let margin: Vec<f64> = ["margin_top", "margin_left", "margin_right", "margin_bottom"]
            .iter()
            .map(|n| value(&v, &m, n))
            .collect();
        assert_eq!(margin, vec![1., 4., 2., 3.]);
    }

    #[test]
    fn longhand_overrides_shorthand() {
        let m = FeatureManifest::default();
        let v = extract_text_features(
            &text_el(&[("padding", "5px"), ("padding-left", "9px")]),
            &Viewport::default(),
            &m,
        )
        .unwrap();
        assert_eq!(value(&v, &m, "padding_left"), 9.0);
        assert_eq!(value(&v, &m, "padding_top"), 5.0);
    }

    #[test]
    fn all_defaults() {
        let m = FeatureManifest::default();
        let v = extract_text_features(&text_el(&[]), &Viewport::default(), &m).unwrap();
        assert_eq!(v.0.len(), 70);
        assert_eq!(&v.0[..5], &[50., 100., 1380., 900., 20000.]);
        for (x, e) in v.0[5..].iter().zip(&m.entries[5..]) {
            assert_eq!(*x, e.default_value, "{}", e.name);
        }
    }

    #[test]
    fn keywords_and_ordinals() {
        let m = FeatureManifest::default();
        let v = extract_text_features(
            &text_el(&[("font-weight", "bold"), ("text-align", "center"), ("line-height", "normal")]),
            &Viewport::default(),
            &m,
        )
        .unwrap();
        assert_eq!(value(&v, &m, "font-weight"), 700.0);
        assert_eq!(value(&v, &m, "text-align"), 2.0);
        assert_eq!(value(&v, &m, "line-height"), 19.2);
    }

    #[test]
    fn malformed_attribute_errors() {
        let m = FeatureManifest::default();
        for (k, v) in [("color", "rgba(oops)"), ("font-size", "huge-ish"), ("text-align", "sideways")] {
            let err = extract_text_features(&text_el(&[(k, v)]), &Viewport::default(), &m).unwrap_err();
            assert!(matches!(err, Error::UnparsableAttribute { .. }), "{k}: {err}");
        }
    }

    #[test]
    fn image_vector_layout() {
        let page = Raster::filled(6, 4, [40, 40, 40]);
        let el = Raster::filled(2, 2, [50, 50, 50]);
        let v = extract_image_features(&el, &page, &BBox::new(0., 0., 10., 10.), &Viewport::default()).unwrap();
        assert_eq!(v.0.len(), 91);
        // mean R/G/B contrast equals the constant shift
        assert_eq!(&v.contrast()[37..40], &[10., 10., 10.]);
        let same = extract_image_features(&page, &page, &BBox::new(0., 0., 10., 10.), &Viewport::default()).unwrap();
        assert!(same.contrast().iter().all(|x| *x == 0.0));
        assert_eq!(image_feature_names().len(), 91);
    }

    #[test]
    fn standardize_examples() {
        let x = DMatrix::from_column_slice(3, 2, &[1., 2., 3., 5., 5., 5.]);
        let (z, st) = standardize(&x).unwrap();
        let k = (1.5f64).sqrt();
        assert!((z[(0, 0)] + k).abs() < 1e-12 && z[(1, 0)].abs() < 1e-12 && (z[(2, 0)] - k).abs() < 1e-12);
        assert_eq!(z.column(1).iter().copied().collect::<Vec<_>>(), vec![0., 0., 0.]);
        assert_eq!(st.stds[1], 0.0);
        let (z2, _) = standardize(&z).unwrap();
        assert!((z2 - &z).abs().max() < 1e-9);
        assert!(matches!(standardize(&DMatrix::zeros(1, 2)), Err(Error::TooFewRows { .. })));
    }
}
