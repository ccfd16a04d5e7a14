//! Corpus loading, fixation filtering and fixation-to-element hit-testing.
//!
//! A corpus directory holds `pages.json`, `elements.json` and
//! `fixations.json`; raster paths inside them are relative to the directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAGES_FILE: &str = "pages.json";
pub const ELEMENTS_FILE: &str = "elements.json";
pub const FIXATIONS_FILE: &str = "fixations.json";

/// Default fixation duration threshold in milliseconds.
pub const DEFAULT_MIN_FIXATION_MS: i64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Viewport {
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for Viewport {
    fn default() -> Self {
        Viewport {
            width_px: 1680,
            height_px: 1050,
        }
    }
}

impl Viewport {
    pub fn area(&self) -> f64 {
        f64::from(self.width_px) * f64::from(self.height_px)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

/// Axis-aligned box in viewport pixels. Treated as the half-open rectangle
/// `[x, x + w) × [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    pub fn intersects_viewport(&self, viewport: &Viewport) -> bool {
        self.x < f64::from(viewport.width_px)
            && self.y < f64::from(viewport.height_px)
            && self.x + self.w > 0.0
            && self.y + self.h > 0.0
    }

    /// Intersection with the viewport rectangle; zero-sized when disjoint.
    pub fn clip_to(&self, viewport: &Viewport) -> BBox {
        let vw = f64::from(viewport.width_px);
        let vh = f64::from(viewport.height_px);
        let x0 = self.x.clamp(0.0, vw);
        let y0 = self.y.clamp(0.0, vh);
        let x1 = (self.x + self.w).clamp(0.0, vw);
        let y1 = (self.y + self.h).clamp(0.0, vh);
        BBox::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub page_id: String,
    #[serde(default)]
    pub viewport: Viewport,
    pub screenshot_ref: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub element_id: String,
    pub page_id: String,
    pub modality: Modality,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_attrs: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster_ref: Option<PathBuf>,
    #[serde(default)]
    pub z_order: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub participant_id: String,
    pub page_id: String,
    pub x: f64,
    pub y: f64,
    pub onset_ms: i64,
    pub duration_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttendedEvent {
    pub participant_id: String,
    pub page_id: String,
    pub element_id: String,
    pub modality: Modality,
    pub onset_ms: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitDiagnostics {
    pub fixations: usize,
    pub hits: usize,
    pub misses: usize,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub pages: Vec<Page>,
    pub elements: Vec<Element>,
    pub fixations: Vec<Fixation>,
}

impl Corpus {
    pub fn page(&self, page_id: &str) -> Option<&Page> {
        self.pages.iter().find(|p| p.page_id == page_id)
    }

    pub fn element(&self, element_id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.element_id == element_id)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn count(&self, modality: Modality) -> usize {
        self.elements
            .iter()
            .filter(|e| e.modality == modality)
            .count()
    }

    /// Filter fixations by duration and hit-test them against each page's elements.
    pub fn attended_events(&self, min_duration_ms: i64) -> (Vec<AttendedEvent>, HitDiagnostics) {
        let mut by_page: HashMap<&str, (Viewport, Vec<&Element>)> = self
            .pages
            .iter()
            .map(|p| (p.page_id.as_str(), (p.viewport, Vec::new())))
            .collect();
        for e in &self.elements {
            if let Some((_, list)) = by_page.get_mut(e.page_id.as_str()) {
                list.push(e);
            }
        }
        let mut diag = HitDiagnostics::default();
        let mut events = Vec::new();
        for f in filter_fixations(&self.fixations, min_duration_ms) {
            diag.fixations += 1;
            let hit = by_page
                .get(f.page_id.as_str())
                .and_then(|(vp, els)| hit_test(f.x, f.y, els, vp));
            match hit {
                Some(e) => {
                    diag.hits += 1;
                    events.push(event_for(&f, e));
                }
                None => diag.misses += 1,
            }
        }
        (events, diag)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(root: &Path, name: &str) -> Result<T> {
    let path = root.join(name);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::schema(name, e.to_string()))
}

/// Load and validate a corpus directory.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus> {
    let root = root.as_ref();
    let pages: Vec<Page> = read_json(root, PAGES_FILE)?;
    let elements: Vec<Element> = read_json(root, ELEMENTS_FILE)?;
    let fixations: Vec<Fixation> = read_json(root, FIXATIONS_FILE)?;
    let corpus = Corpus {
        root: root.to_path_buf(),
        pages,
        elements,
        fixations,
    };
    validate(&corpus)?;
    Ok(corpus)
}

fn validate(corpus: &Corpus) -> Result<()> {
    let mut page_ids = HashMap::new();
    for (i, p) in corpus.pages.iter().enumerate() {
        if p.viewport.width_px == 0 || p.viewport.height_px == 0 {
            return Err(Error::schema(
                PAGES_FILE,
                format!("pages[{i}].viewport: width_px and height_px must be positive"),
            ));
        }
        if page_ids.insert(p.page_id.as_str(), p).is_some() {
            return Err(Error::schema(
                PAGES_FILE,
                format!("pages[{i}].page_id: duplicate id {:?}", p.page_id),
            ));
        }
        let shot = corpus.resolve(&p.screenshot_ref);
        if !shot.is_file() {
            return Err(Error::DanglingReference(format!(
                "page {:?} screenshot_ref {} does not exist",
                p.page_id,
                shot.display()
            )));
        }
    }

    let mut element_ids = HashSet::new();
    for (i, e) in corpus.elements.iter().enumerate() {
        let at = |field: &str| format!("elements[{i}].{field}");
        if !element_ids.insert(e.element_id.as_str()) {
            return Err(Error::schema(
                ELEMENTS_FILE,
                format!("{}: duplicate id {:?}", at("element_id"), e.element_id),
            ));
        }
        let Some(page) = page_ids.get(e.page_id.as_str()) else {
            return Err(Error::DanglingReference(format!(
                "element {:?} references unknown page {:?}",
                e.element_id, e.page_id
            )));
        };
        let b = &e.bbox;
        if !(b.w > 0.0 && b.h > 0.0) || !b.x.is_finite() || !b.y.is_finite() {
            return Err(Error::schema(
                ELEMENTS_FILE,
                format!("{}: w and h must be positive and finite", at("bbox")),
            ));
        }
        if !b.intersects_viewport(&page.viewport) {
            return Err(Error::schema(
                ELEMENTS_FILE,
                format!("{}: lies entirely outside the viewport", at("bbox")),
            ));
        }
        match e.modality {
            Modality::Text => {
                if e.raster_ref.is_some() {
                    return Err(Error::schema(
                        ELEMENTS_FILE,
                        format!("{}: text elements cannot carry a raster", at("raster_ref")),
                    ));
                }
            }
            Modality::Image => {
                if e.style_attrs.is_some() {
                    return Err(Error::schema(
                        ELEMENTS_FILE,
                        format!("{}: image elements cannot carry style attributes", at("style_attrs")),
                    ));
                }
                let Some(raster) = &e.raster_ref else {
                    return Err(Error::schema(
                        ELEMENTS_FILE,
                        format!("{}: image elements require a raster", at("raster_ref")),
                    ));
                };
                let path = corpus.resolve(raster);
                if !path.is_file() {
                    return Err(Error::DanglingReference(format!(
                        "element {:?} raster_ref {} does not exist",
                        e.element_id,
                        path.display()
                    )));
                }
            }
        }
    }

    let mut last_onset: HashMap<(&str, &str), i64> = HashMap::new();
    for (i, f) in corpus.fixations.iter().enumerate() {
        if !page_ids.contains_key(f.page_id.as_str()) {
            return Err(Error::DanglingReference(format!(
                "fixations[{i}] references unknown page {:?}",
                f.page_id
            )));
        }
        if f.duration_ms < 0 {
            return Err(Error::schema(
                FIXATIONS_FILE,
                format!("fixations[{i}].duration_ms: must be >= 0"),
            ));
        }
        let key = (f.participant_id.as_str(), f.page_id.as_str());
        if let Some(prev) = last_onset.insert(key, f.onset_ms) {
            if f.onset_ms <= prev {
                return Err(Error::schema(
                    FIXATIONS_FILE,
                    format!("fixations[{i}].onset_ms: must increase within a session"),
                ));
            }
        }
    }
    Ok(())
}

/// Keep fixations lasting at least `min_duration_ms`, preserving order.
pub fn filter_fixations(samples: &[Fixation], min_duration_ms: i64) -> Vec<Fixation> {
    samples
        .iter()
        .filter(|f| f.duration_ms >= min_duration_ms)
        .cloned()
        .collect()
}

/// Pick the element under `(x, y)`: smallest area, then highest z-order,
/// then lexicographically smallest id.
pub fn hit_test<'a>(x: f64, y: f64, elements: &[&'a Element], viewport: &Viewport) -> Option<&'a Element> {
    let vw = f64::from(viewport.width_px);
    let vh = f64::from(viewport.height_px);
    if !(x >= 0.0 && x < vw && y >= 0.0 && y < vh) {
        return None;
    }
    elements
        .iter()
        .copied()
        .filter(|e| e.bbox.contains(x, y))
        .min_by(|a, b| {
            a.bbox
                .area()
                .total_cmp(&b.bbox.area())
                .then(b.z_order.cmp(&a.z_order))
                .then(a.element_id.cmp(&b.element_id))
        })
}

fn event_for(f: &Fixation, e: &Element) -> AttendedEvent {
    AttendedEvent {
        participant_id: f.participant_id.clone(),
        page_id: f.page_id.clone(),
        element_id: e.element_id.clone(),
        modality: e.modality,
        onset_ms: f.onset_ms,
    }
}

/// Hit-test each fixation against the elements on its own page. Fixations
/// that land on no element are dropped.
pub fn map_fixations_to_elements(
    fixations: &[Fixation],
    elements: &[Element],
    viewport: &Viewport,
) -> Vec<AttendedEvent> {
    let mut by_page: HashMap<&str, Vec<&Element>> = HashMap::new();
    for e in elements {
        by_page.entry(e.page_id.as_str()).or_default().push(e);
    }
    fixations
        .iter()
        .filter_map(|f| {
            let candidates = by_page.get(f.page_id.as_str())?;
            hit_test(f.x, f.y, candidates, viewport).map(|e| event_for(f, e))
        })
        .collect()
}
