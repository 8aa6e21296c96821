//! Flat key/value run configuration.

use std::path::{Path, PathBuf};

use forge_core::augment::ForegroundAugConfig;
use forge_core::mask_ops::NmsConfig;
use forge_core::prompt::PromptAugConfig;
use forge_core::qc_filters::QcConfig;
use forge_gateway::HttpGatewayConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IoContext, PipelineError, Result};

/// Where a point prompt comes from before jitter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSource {
    /// Mask pixel nearest the centroid.
    #[default]
    Centroid,
    /// Uniform over mask pixels, drawn from the record's RNG.
    Interior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Required; every random draw derives from it.
    pub seed: Option<u64>,
    pub workers: usize,
    pub mock: bool,

    pub gateway_url: Option<String>,
    pub gateway_token: Option<String>,
    pub gateway_attempts: u32,
    pub gateway_backoff_ms: u64,
    pub gateway_timeout_ms: u64,
    pub gateway_max_in_flight: usize,

    pub nms_iou: f64,
    pub nms_containment: Option<f64>,
    pub size_min: f64,
    pub size_max: f64,
    pub max_aspect: f64,
    pub max_components: u32,
    pub min_color_std: f64,
    pub min_classifier_score: f64,
    pub ssim_threshold: f64,
    pub dilate_frac: f64,

    pub p_iso_scale: f64,
    pub p_rotate: f64,
    pub p_aniso_scale: f64,
    pub p_cutout: f64,
    pub p_brightness: f64,
    pub p_contrast: f64,
    pub p_saturation: f64,
    pub p_filter: f64,
    pub p_noise: f64,

    pub point_prompt: PointSource,
    pub point_jitter_frac: f64,
    pub box_enlarge_max: f64,
    pub mask_dilate_max: f64,
    pub mask_feather_max: f64,

    pub test_fraction: f64,
    pub write_candidate_crops: bool,
    pub record_timestamps: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let qc = QcConfig::default();
        let fg = ForegroundAugConfig::default();
        let pr = PromptAugConfig::default();
        let gw = HttpGatewayConfig::default();
        Self {
            input_dir: PathBuf::from("input"),
            output_dir: PathBuf::from("out"),
            seed: None,
            workers: 1,
            mock: false,
            gateway_url: None,
            gateway_token: None,
            gateway_attempts: gw.attempts,
            gateway_backoff_ms: gw.backoff_start_ms,
            gateway_timeout_ms: gw.timeout_ms,
            gateway_max_in_flight: gw.max_in_flight,
            nms_iou: NmsConfig::default().iou_threshold,
            nms_containment: None,
            size_min: qc.size_min,
            size_max: qc.size_max,
            max_aspect: qc.max_aspect,
            max_components: qc.max_components,
            min_color_std: qc.min_color_std,
            min_classifier_score: qc.min_classifier_score,
            ssim_threshold: 0.8,
            dilate_frac: 0.03,
            p_iso_scale: fg.p_iso_scale,
            p_rotate: fg.p_rotate,
            p_aniso_scale: fg.p_aniso_scale,
            p_cutout: fg.p_cutout,
            p_brightness: fg.p_brightness,
            p_contrast: fg.p_contrast,
            p_saturation: fg.p_saturation,
            p_filter: fg.p_filter,
            p_noise: fg.p_noise,
            point_prompt: PointSource::Centroid,
            point_jitter_frac: pr.point_jitter_frac,
            box_enlarge_max: pr.box_enlarge_max,
            mask_dilate_max: pr.mask_dilate_max,
            mask_feather_max: pr.mask_feather_max,
            test_fraction: 0.1,
            write_candidate_crops: true,
            record_timestamps: false,
        }
    }
}

/// The subset of the configuration that determines output bytes.
#[derive(Serialize)]
struct Fingerprinted {
    seed: Option<u64>,
    mock: bool,
    nms: NmsConfig,
    qc: QcConfig,
    ssim_threshold: f64,
    dilate_frac: f64,
    fg: ForegroundAugConfig,
    point_prompt: PointSource,
    prompt: PromptAugConfig,
    test_fraction: f64,
    write_candidate_crops: bool,
    record_timestamps: bool,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml_str(&text)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| PipelineError::Config("seed is required".into()))
    }

    pub fn qc(&self) -> QcConfig {
        QcConfig {
            size_min: self.size_min,
            size_max: self.size_max,
            max_aspect: self.max_aspect,
            max_components: self.max_components,
            min_color_std: self.min_color_std,
            min_classifier_score: self.min_classifier_score,
        }
    }

    pub fn nms(&self) -> NmsConfig {
        NmsConfig { iou_threshold: self.nms_iou, containment_threshold: self.nms_containment }
    }

    pub fn foreground_aug(&self) -> ForegroundAugConfig {
        ForegroundAugConfig {
            p_iso_scale: self.p_iso_scale,
            p_rotate: self.p_rotate,
            p_aniso_scale: self.p_aniso_scale,
            p_cutout: self.p_cutout,
            p_brightness: self.p_brightness,
            p_contrast: self.p_contrast,
            p_saturation: self.p_saturation,
            p_filter: self.p_filter,
            p_noise: self.p_noise,
            ..ForegroundAugConfig::default()
        }
    }

    pub fn prompt_aug(&self) -> PromptAugConfig {
        PromptAugConfig {
            point_jitter_frac: self.point_jitter_frac,
            box_enlarge_max: self.box_enlarge_max,
            mask_dilate_max: self.mask_dilate_max,
            mask_feather_max: self.mask_feather_max,
        }
    }

    pub fn gateway(&self) -> HttpGatewayConfig {
        let mut g = HttpGatewayConfig::from_env();
        if let Some(url) = &self.gateway_url {
            g.base_url = url.clone();
        }
        g.bearer_token = self.gateway_token.clone();
        g.attempts = self.gateway_attempts;
        g.backoff_start_ms = self.gateway_backoff_ms;
        g.timeout_ms = self.gateway_timeout_ms;
        g.max_in_flight = self.gateway_max_in_flight;
        g
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.seed()?;
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return bad(format!("nms_iou {} outside [0, 1]", self.nms_iou));
        }
        if let Some(c) = self.nms_containment {
            if !(0.0..=1.0).contains(&c) {
                return bad(format!("nms_containment {c} outside [0, 1]"));
            }
        }
        if !(-1.0..=1.0).contains(&self.ssim_threshold) {
            return bad(format!("ssim_threshold {} outside [-1, 1]", self.ssim_threshold));
        }
        if !(0.0..=0.5).contains(&self.dilate_frac) {
            return bad(format!("dilate_frac {} outside [0, 0.5]", self.dilate_frac));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction {} outside [0, 1]", self.test_fraction));
        }
        let pr = self.prompt_aug();
        if [pr.point_jitter_frac, pr.box_enlarge_max, pr.mask_dilate_max, pr.mask_feather_max].iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("prompt augmentation magnitudes must lie in [0, 1]".into());
        }
        self.qc().validate()?;
        self.foreground_aug().validate()?;
        Ok(())
    }

    /// Hex digest over every setting that affects output bytes. Paths,
    /// worker count and gateway transport settings are excluded.
    pub fn fingerprint(&self) -> String {
        let f = Fingerprinted {
            seed: self.seed,
            mock: self.mock,
            nms: self.nms(),
            qc: self.qc(),
            ssim_threshold: self.ssim_threshold,
            dilate_frac: self.dilate_frac,
            fg: self.foreground_aug(),
            point_prompt: self.point_prompt,
            prompt: self.prompt_aug(),
            test_fraction: self.test_fraction,
            write_candidate_crops: self.write_candidate_crops,
            record_timestamps: self.record_timestamps,
        };
        let json = serde_json::to_vec(&f).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_thresholds() {
        let c = PipelineConfig { seed: Some(1), ..Default::default() };
        c.validate().unwrap();
        assert_eq!((c.nms_iou, c.size_min, c.size_max, c.max_aspect), (0.6, 0.1, 0.75, 3.0));
        assert_eq!((c.max_components, c.min_color_std, c.min_classifier_score, c.ssim_threshold), (4, 45.0, 0.7, 0.8));
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(matches!(PipelineConfig::default().validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn parses_flat_toml() {
        let c = PipelineConfig::from_toml_str("seed = 7\nworkers = 4\nmock = true\nmin_color_std = 30.0\ninput_dir = \"imgs\"\n").unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.workers, 4);
        assert_eq!(c.min_color_std, 30.0);
        assert_eq!(c.input_dir, PathBuf::from("imgs"));
        assert!(PipelineConfig::from_toml_str("sed = 7").is_err());
    }

    #[test]
    fn fingerprint_ignores_transport_and_parallelism() {
        let a = PipelineConfig { seed: Some(7), ..Default::default() };
        let b = PipelineConfig { workers: 8, output_dir: "elsewhere".into(), gateway_attempts: 5, ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = PipelineConfig { min_color_std: 40.0, ..a.clone() };
        assert_ne!(a.fingerprint(), c.fingerprint());
        let d = PipelineConfig { seed: Some(8), ..a.clone() };
        assert_ne!(a.fingerprint(), d.fingerprint());
    }

    #[test]
    fn point_source_parses_and_counts_toward_fingerprint() {
        let c = PipelineConfig::from_toml_str("seed = 1\npoint_prompt = \"interior\"").unwrap();
        assert_eq!(c.point_prompt, PointSource::Interior);
        let d = PipelineConfig { point_prompt: PointSource::Centroid, ..c.clone() };
        assert_ne!(c.fingerprint(), d.fingerprint());
        assert!(PipelineConfig::from_toml_str("point_prompt = \"edge\"").is_err());
    }

    #[test]
    fn out_of_range_thresholds_rejected() {
        let base = PipelineConfig { seed: Some(1), ..Default::default() };
        for bad in [
            PipelineConfig { size_min: 0.8, ..base.clone() },
            PipelineConfig { min_classifier_score: 1.5, ..base.clone() },
            PipelineConfig { p_rotate: 2.0, ..base.clone() },
            PipelineConfig { workers: 0, ..base.clone() },
            PipelineConfig { nms_iou: -0.1, ..base.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
