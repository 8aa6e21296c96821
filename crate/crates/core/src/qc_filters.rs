//! Foreground quality-control cascade: four rule filters followed by the
//! learned-scorer gate, with cumulative reserved-percentage reporting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{mask_bbox, BinaryMask, MaskCandidate, RasterImage};
use crate::error::{Error, Result};
use crate::mask_ops::{connected_components, masked_color_std};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterName {
    RelativeSize,
    AspectRatio,
    ComponentCount,
    ColorStd,
    ClassifierScore,
}

impl FilterName {
    /// Fixed cascade order.
    pub const CASCADE: [FilterName; 5] = [
        FilterName::RelativeSize,
        FilterName::AspectRatio,
        FilterName::ComponentCount,
        FilterName::ColorStd,
        FilterName::ClassifierScore,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FilterName::RelativeSize => "Relative Size",
            FilterName::AspectRatio => "Aspect Ratio",
            FilterName::ComponentCount => "Components Num.",
            FilterName::ColorStd => "Color Std.",
            FilterName::ClassifierScore => "Classifier Score",
        }
    }
}

/// The keep-side condition a filter applies. All bounds are inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    Within { lo: f64, hi: f64 },
    AtMost { max: f64 },
    AtLeast { min: f64 },
}

impl Bound {
    pub fn admits(&self, v: f64) -> bool {
        match *self {
            Bound::Within { lo, hi } => lo <= v && v <= hi,
            Bound::AtMost { max } => v <= max,
            Bound::AtLeast { min } => v >= min,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Within { lo, hi } => write!(f, "[{lo}, {hi}]"),
            Bound::AtMost { max } => write!(f, "<= {max}"),
            Bound::AtLeast { min } => write!(f, ">= {min}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub filter: FilterName,
    pub passed: bool,
    /// The exact statistic compared against `bound`.
    pub measured: f64,
    pub bound: Bound,
}

impl FilterVerdict {
    fn new(filter: FilterName, measured: f64, bound: Bound) -> Self {
        Self { filter, passed: bound.admits(measured), measured, bound }
    }

    /// Short human-readable reason, e.g. `aspect 4.0 > 3`.
    pub fn describe(&self) -> String {
        let name = match self.filter {
            FilterName::RelativeSize => "size",
            FilterName::AspectRatio => "aspect",
            FilterName::ComponentCount => "components",
            FilterName::ColorStd => "color-std",
            FilterName::ClassifierScore => "score",
        };
        let v = self.measured;
        match (self.bound, self.passed) {
            (Bound::Within { lo, hi }, true) => format!("{name} {v:.3} in [{lo}, {hi}]"),
            (Bound::Within { lo, .. }, false) if v < lo => format!("{name} {v:.3} < {lo}"),
            (Bound::Within { hi, .. }, false) => format!("{name} {v:.3} > {hi}"),
            (Bound::AtMost { max }, true) => format!("{name} {v:.1} <= {max}"),
            (Bound::AtMost { max }, false) => format!("{name} {v:.1} > {max}"),
            (Bound::AtLeast { min }, true) => format!("{name} {v:.2} >= {min}"),
            (Bound::AtLeast { min }, false) => format!("{name} {v:.2} < {min}"),
        }
    }
}

pub fn filter_relative_size(mask: &BinaryMask, image_area: u64, lo: f64, hi: f64) -> Result<FilterVerdict> {
    if image_area == 0 {
        return Err(Error::InvalidRange("image area must be positive".into()));
    }
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidRange(format!("size bounds [{lo}, {hi}]")));
    }
    let ratio = mask.area() as f64 / image_area as f64;
    Ok(FilterVerdict::new(FilterName::RelativeSize, ratio, Bound::Within { lo, hi }))
}

pub fn filter_aspect_ratio(mask: &BinaryMask, max_ratio: f64) -> Result<FilterVerdict> {
    let b = mask_bbox(mask)?;
    let (w, h) = (b.width() as f64, b.height() as f64);
    let ratio = w.max(h) / w.min(h);
    Ok(FilterVerdict::new(FilterName::AspectRatio, ratio, Bound::AtMost { max: max_ratio }))
}

pub fn filter_components(mask: &BinaryMask, max_components: u32) -> FilterVerdict {
    let n = connected_components(mask) as f64;
    FilterVerdict::new(FilterName::ComponentCount, n, Bound::AtMost { max: max_components as f64 })
}

pub fn filter_color_std(image: &RasterImage, mask: &BinaryMask, min_std: f64) -> Result<FilterVerdict> {
    let std = masked_color_std(image, mask)?;
    Ok(FilterVerdict::new(FilterName::ColorStd, std, Bound::AtLeast { min: min_std }))
}

pub fn filter_classifier(score: f64, min_score: f64) -> Result<FilterVerdict> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::InvalidRange(format!("classifier score {score} outside [0,1]")));
    }
    Ok(FilterVerdict::new(FilterName::ClassifierScore, score, Bound::AtLeast { min: min_score }))
}

/// Thresholds for the cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcConfig {
    pub size_min: f64,
    pub size_max: f64,
    pub max_aspect: f64,
    pub max_components: u32,
    pub min_color_std: f64,
    pub min_classifier_score: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            size_min: 0.1,
            size_max: 0.75,
            max_aspect: 3.0,
            max_components: 4,
            min_color_std: 45.0,
            min_classifier_score: 0.7,
        }
    }
}

impl QcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.size_min && self.size_min < self.size_max && self.size_max <= 1.0) {
            return Err(Error::InvalidRange(format!("size bounds [{}, {}]", self.size_min, self.size_max)));
        }
        if self.max_aspect < 1.0 {
            return Err(Error::InvalidRange(format!("max aspect {}", self.max_aspect)));
        }
        if !(0.0..=127.5).contains(&self.min_color_std) {
            return Err(Error::InvalidRange(format!("min color std {}", self.min_color_std)));
        }
        if !(0.0..=1.0).contains(&self.min_classifier_score) {
            return Err(Error::InvalidRange(format!("min classifier score {}", self.min_classifier_score)));
        }
        Ok(())
    }

    pub fn bound(&self, filter: FilterName) -> Bound {
        match filter {
            FilterName::RelativeSize => Bound::Within { lo: self.size_min, hi: self.size_max },
            FilterName::AspectRatio => Bound::AtMost { max: self.max_aspect },
            FilterName::ComponentCount => Bound::AtMost { max: self.max_components as f64 },
            FilterName::ColorStd => Bound::AtLeast { min: self.min_color_std },
            FilterName::ClassifierScore => Bound::AtLeast { min: self.min_classifier_score },
        }
    }
}

/// Evaluate every filter on one candidate. Verdicts are independent of
/// cascade position. An empty mask fails every geometric filter.
pub fn evaluate_candidate(
    image: &RasterImage,
    mask: &BinaryMask,
    score: f64,
    config: &QcConfig,
) -> Result<Vec<FilterVerdict>> {
    mask.check_image_dims(image)?;
    let image_area = image.pixel_count() as u64;
    let size = filter_relative_size(mask, image_area, config.size_min, config.size_max)?;
    let (aspect, color) = if mask.is_empty() {
        (
            FilterVerdict { passed: false, ..FilterVerdict::new(FilterName::AspectRatio, f64::INFINITY, config.bound(FilterName::AspectRatio)) },
            FilterVerdict { passed: false, ..FilterVerdict::new(FilterName::ColorStd, 0.0, config.bound(FilterName::ColorStd)) },
        )
    } else {
        (
            filter_aspect_ratio(mask, config.max_aspect)?,
            filter_color_std(image, mask, config.min_color_std)?,
        )
    };
    let components = filter_components(mask, config.max_components);
    let classifier = filter_classifier(score, config.min_classifier_score)?;
    Ok(vec![size, aspect, components, color, classifier])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCount {
    pub filter: FilterName,
    pub bound: Bound,
    pub survivors: u64,
}

/// Cumulative survivor counts along the cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total_in: u64,
    pub stages: Vec<StageCount>,
}

impl FilterReport {
    pub fn empty(config: &QcConfig) -> Self {
        Self {
            total_in: 0,
            stages: FilterName::CASCADE
                .iter()
                .map(|&f| StageCount { filter: f, bound: config.bound(f), survivors: 0 })
                .collect(),
        }
    }

    /// Survivors over `total_in`; zero when nothing entered the cascade.
    pub fn reserved_pct(&self, stage: usize) -> f64 {
        if self.total_in == 0 {
            0.0
        } else {
            self.stages[stage].survivors as f64 / self.total_in as f64
        }
    }

    /// Sum counts from another report over the same cascade.
    pub fn merge(&mut self, other: &FilterReport) {
        self.total_in += other.total_in;
        for (a, b) in self.stages.iter_mut().zip(&other.stages) {
            debug_assert_eq!(a.filter, b.filter);
            a.survivors += b.survivors;
        }
    }

    pub fn is_monotone(&self) -> bool {
        let mut prev = self.total_in;
        self.stages.iter().all(|s| {
            let ok = s.survivors <= prev;
            prev = s.survivors;
            ok
        })
    }

    /// Plain-text table with filter, threshold and reserved percentage columns.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<18} {:>14} {:>10} {:>12}\n", "Filter", "Threshold", "Kept", "Reserved %"));
        out.push_str(&format!("{:<18} {:>14} {:>10} {:>12}\n", "(input)", "-", self.total_in, "100.00%"));
        for (i, s) in self.stages.iter().enumerate() {
            out.push_str(&format!(
                "{:<18} {:>14} {:>10} {:>11.2}%\n",
                s.filter.label(),
                s.bound.to_string(),
                s.survivors,
                100.0 * self.reserved_pct(i)
            ));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct CascadeOutcome {
    pub survivors: Vec<MaskCandidate>,
    /// Input indices of the survivors.
    pub survivor_indices: Vec<usize>,
    /// Per-candidate verdicts in cascade order.
    pub verdicts: Vec<Vec<FilterVerdict>>,
    pub report: FilterReport,
}

/// Run the cascade over NMS-deduplicated candidates. `scores` are the
/// classifier scores for each candidate, in the same order.
pub fn run_cascade(
    image: &RasterImage,
    candidates: &[MaskCandidate],
    scores: &[f64],
    config: &QcConfig,
) -> Result<CascadeOutcome> {
    config.validate()?;
    if scores.len() != candidates.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} candidates",
            scores.len(),
            candidates.len()
        )));
    }
    let verdicts = candidates
        .iter()
        .zip(scores)
        .map(|(c, &s)| evaluate_candidate(image, &c.mask, s, config))
        .collect::<Result<Vec<_>>>()?;

    let mut report = FilterReport::empty(config);
    report.total_in = candidates.len() as u64;
    for v in &verdicts {
        for (stage, count) in report.stages.iter_mut().enumerate() {
            if v[..=stage].iter().all(|x| x.passed) {
                count.survivors += 1;
            } else {
                break;
            }
        }
    }
    let survivor_indices: Vec<usize> = verdicts
        .iter()
        .enumerate()
        .filter(|(_, v)| v.iter().all(|x| x.passed))
        .map(|(i, _)| i)
        .collect();
    let survivors = survivor_indices.iter().map(|&i| candidates[i].clone()).collect();
    Ok(CascadeOutcome { survivors, survivor_indices, verdicts, report })
}
