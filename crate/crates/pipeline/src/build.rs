//! segment → NMS → score → cascade → per survivor: dilate → inpaint → SSIM
//! gate → foreground cut-out → background crop → prompt → write.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{SystemTime, UNIX_EPOCH};

use forge_core::augment::{augment_foreground, choose_window, resize_mask_preserving, short_edge_dims, CROP_SIZE};
use forge_core::imageops::resize_bilinear;
use forge_core::inpaint_qc::{dilation_radius, gate_inpainting};
use forge_core::io::{encode_png, encode_rgba_png, read_image};
use forge_core::mask_ops::{dilate, nms_indices};
use forge_core::prompt::{augment_prompt, derive_prompts, sample_interior_point};
use forge_core::qc_filters::{run_cascade, FilterReport};
use forge_core::{mask_bbox, BinaryMask, MaskCandidate, PromptKind, RasterImage, TetradMeta, TetradRecord};
use forge_gateway::{Gateway, HttpGateway, MockGateway};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, PipelineConfig, PointSource};
use crate::error::{IoContext, PipelineError, Result};
use crate::manifest::{
    read_manifest, CandidateEntry, GateEntry, Manifest, ManifestWriter, SourceLine, SourceStatus, TetradLine, Timestamps,
    MANIFEST_FILE,
};

pub const RUN_FILE: &str = "run.json";
pub const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tif"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub segmented: u64,
    pub after_nms: u64,
    pub cascade: Option<FilterReport>,
    pub after_ssim: u64,
    pub records: u64,
}

impl StageCounts {
    pub fn add(&mut self, line: &SourceLine) {
        self.segmented += line.segmented;
        self.after_nms += line.after_nms;
        match &mut self.cascade {
            Some(r) => r.merge(&line.report),
            None => self.cascade = Some(line.report.clone()),
        }
        self.after_ssim += line.kept_after_gate();
        self.records += line.records.len() as u64;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub sources_total: usize,
    pub sources_already_done: usize,
    pub sources_processed: usize,
    pub sources_failed: usize,
    pub records_out: u64,
    pub counts: StageCounts,
    /// Stopped early on request; the output is resumable.
    pub interrupted: bool,
}

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    /// Stop after committing this many new sources, as if killed.
    pub stop_after: Option<usize>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct RunInfo {
    fingerprint: String,
    seed: u64,
}

pub fn make_gateway(cfg: &PipelineConfig) -> Result<Arc<dyn Gateway>> {
    if cfg.mock {
        Ok(Arc::new(MockGateway::new()))
    } else {
        Ok(Arc::new(HttpGateway::new(cfg.gateway())?))
    }
}

/// Image files directly inside `dir`, sorted by file name, with their
/// source ids (file stems).
pub fn list_sources(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((stem, path));
        }
    }
    out.sort_by(|a, b| a.1.file_name().cmp(&b.1.file_name()));
    let mut seen = BTreeSet::new();
    for (id, _) in &out {
        if !seen.insert(id.clone()) {
            return Err(PipelineError::Config(format!("two input files share the source id {id:?}")));
        }
    }
    Ok(out)
}

/// Deterministic stream for one (seed, source, mask) triple.
pub fn record_rng(seed: u64, source_id: &str, mask_index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"record");
    h.update(seed.to_le_bytes());
    h.update(source_id.as_bytes());
    h.update([0]);
    h.update((mask_index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn record_id(source_id: &str, mask_index: usize) -> String {
    format!("{source_id}_{mask_index:03}")
}

pub fn candidate_id(source_id: &str, index: usize) -> String {
    format!("{source_id}_c{index:03}")
}

/// "test" for a stable hash-selected fraction of ids, otherwise "train".
pub fn split_for(id: &str, test_fraction: f64) -> &'static str {
    let d = Sha256::digest(id.as_bytes());
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    if (v as f64 / u64::MAX as f64) < test_fraction {
        "test"
    } else {
        "train"
    }
}

/// Input to the foreground classifier: the mask's bbox with every pixel
/// outside the mask set to zero.
pub fn score_crop(image: &RasterImage, mask: &BinaryMask) -> Result<RasterImage> {
    let b = mask_bbox(mask)?;
    let mut crop = image.crop(&b)?;
    let zero = vec![0u8; image.channels() as usize];
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            if !mask.get(x, y) {
                crop.set_pixel(x - b.x0, y - b.y0, &zero);
            }
        }
    }
    Ok(crop)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Output files as (path relative to the output root, bytes).
type Files = Vec<(String, Vec<u8>)>;

/// Everything one source contributes; written only by the committing thread.
struct SourceOutput {
    line: SourceLine,
    tetrads: Vec<TetradLine>,
    files: Files,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    seed: u64,
    gateway: &'a dyn Gateway,
}

fn process_source(ctx: &Ctx<'_>, source_id: &str, path: &Path) -> Result<SourceOutput> {
    let file = path.file_name().and_then(|f| f.to_str()).unwrap_or_default().to_string();
    let started = now_ms();
    match run_source(ctx, source_id, &file, path) {
        Ok(mut out) => {
            if ctx.cfg.record_timestamps {
                let ts = Timestamps { started_ms: started, finished_ms: now_ms() };
                out.line.timestamps = Some(ts.clone());
                for t in &mut out.tetrads {
                    t.timestamps = Some(ts.clone());
                }
            }
            Ok(out)
        }
        Err(e @ PipelineError::GatewayDown(_)) => Err(e),
        Err(e) => {
            log::warn!("{file}: skipped: {e}");
            let line = SourceLine::failed(source_id, &file, e.to_string(), &ctx.cfg.qc());
            Ok(SourceOutput { line, tetrads: Vec::new(), files: Vec::new() })
        }
    }
}

fn run_source(ctx: &Ctx<'_>, source_id: &str, file: &str, path: &Path) -> Result<SourceOutput> {
    let cfg = ctx.cfg;
    let qc = cfg.qc();
    let image = read_image(path)?;
    let (w, h) = image.dims();

    let raw = ctx.gateway.segment(&image, source_id)?;
    let segmented = raw.len() as u64;
    let raw: Vec<(usize, MaskCandidate)> = raw.into_iter().enumerate().filter(|(_, c)| !c.mask.is_empty()).collect();
    let plain: Vec<MaskCandidate> = raw.iter().map(|(_, c)| c.clone()).collect();
    let kept = nms_indices(&plain, &cfg.nms())?;
    let deduped: Vec<(usize, MaskCandidate)> = kept.iter().map(|&i| raw[i].clone()).collect();
    let candidates: Vec<MaskCandidate> = deduped.iter().map(|(_, c)| c.clone()).collect();

    let mut scores = Vec::with_capacity(candidates.len());
    for c in &candidates {
        scores.push(ctx.gateway.score_foreground(&score_crop(&image, &c.mask)?)?);
    }
    let cascade = run_cascade(&image, &candidates, &scores, &qc)?;

    let mut files = Vec::new();
    let mut entries = Vec::with_capacity(candidates.len());
    for (k, ((raw_index, c), verdicts)) in deduped.iter().zip(&cascade.verdicts).enumerate() {
        let bbox = mask_bbox(&c.mask)?;
        let crop = if cfg.write_candidate_crops {
            let rel = format!("candidates/{}.png", candidate_id(source_id, k));
            files.push((rel.clone(), encode_rgba_png(&image.crop(&bbox)?, &c.mask.crop(&bbox)?)?));
            Some(rel)
        } else {
            None
        };
        entries.push(CandidateEntry {
            index: k,
            raw_index: *raw_index,
            segment_score: c.score,
            classifier_score: scores[k],
            bbox,
            mask: c.mask.clone(),
            verdicts: verdicts.clone(),
            survived: cascade.survivor_indices.contains(&k),
            crop,
        });
    }

    let radius = dilation_radius(w, h, cfg.dilate_frac);
    let mut gate = Vec::new();
    let mut tetrads = Vec::new();
    for &k in &cascade.survivor_indices {
        let c = &candidates[k];
        let hole = dilate(&c.mask, radius);
        let background = ctx.gateway.inpaint(&image, &hole)?;
        let decision = gate_inpainting(&image, &background, cfg.ssim_threshold)?;
        let mut entry = GateEntry { mask_index: k, dilate_radius: radius, ssim: decision.ssim, keep: decision.keep, note: None };
        if decision.keep {
            match make_tetrad(ctx, source_id, k, &image, &background, c, &entries[k], decision.ssim, radius) {
                Ok((record, record_files)) => {
                    files.extend(record_files);
                    tetrads.push(TetradLine { record, report: cascade.report.clone(), timestamps: None });
                }
                Err(e) => {
                    entry.keep = false;
                    entry.note = Some(e.to_string());
                }
            }
        }
        gate.push(entry);
    }

    let line = SourceLine {
        source_id: source_id.into(),
        file: file.into(),
        status: SourceStatus::Ok,
        error: None,
        segmented,
        after_nms: candidates.len() as u64,
        report: cascade.report,
        candidates: entries,
        gate,
        records: tetrads.iter().map(|t| t.record.id.clone()).collect(),
        timestamps: None,
    };
    Ok(SourceOutput { line, tetrads, files })
}

#[allow(clippy::too_many_arguments)]
fn make_tetrad(
    ctx: &Ctx<'_>,
    source_id: &str,
    k: usize,
    image: &RasterImage,
    background: &RasterImage,
    cand: &MaskCandidate,
    entry: &CandidateEntry,
    ssim: f64,
    radius: u32,
) -> Result<(TetradRecord, Files)> {
    let cfg = ctx.cfg;
    let id = record_id(source_id, k);
    let mut rng = record_rng(ctx.seed, source_id, k);
    let mut params = forge_core::Params::default();

    // foreground: tight crop, augment, re-tighten
    let fg = augment_foreground(&image.crop(&entry.bbox)?, &cand.mask.crop(&entry.bbox)?, &mut rng, &cfg.foreground_aug())?;
    let tight = mask_bbox(&fg.mask)?;
    let fg_png = encode_rgba_png(&fg.image.crop(&tight)?, &fg.mask.crop(&tight)?)?;
    params.extend(fg.params);

    // one window shared by background, ground truth and mask
    let (nw, nh) = short_edge_dims(image.width(), image.height(), CROP_SIZE);
    let rmask = resize_mask_preserving(&cand.mask, nw, nh);
    let window = choose_window(&rmask, CROP_SIZE, &mut rng)?;
    let gt = resize_bilinear(image, nw, nh).crop(&window)?;
    let bg = resize_bilinear(background, nw, nh).crop(&window)?;
    let mask = rmask.crop(&window)?;
    params.push("crop_x0", window.x0 as f64);
    params.push("crop_y0", window.y0 as f64);

    let kind = PromptKind::ALL[rng.random_range(0..PromptKind::ALL.len())];
    let base = match (kind, cfg.point_prompt) {
        (PromptKind::Point, PointSource::Interior) => sample_interior_point(&mask, &mut rng)?,
        _ => derive_prompts(&mask)?.get(kind).clone(),
    };
    let (prompt, prompt_params) = augment_prompt(&base, mask.dims(), &mut rng, &cfg.prompt_aug())?;
    params.extend(prompt_params);

    let measured = |i: usize| entry.verdicts[i].measured;
    let record = TetradRecord {
        id: id.clone(),
        fg: format!("fg/{id}.png"),
        bg: format!("bg/{id}.png"),
        gt: format!("gt/{id}.png"),
        gt_dims: gt.dims(),
        mask,
        prompt,
        meta: TetradMeta {
            source_id: source_id.into(),
            mask_index: k,
            segment_score: entry.segment_score,
            classifier_score: entry.classifier_score,
            relative_size: measured(0),
            aspect_ratio: measured(1),
            components: measured(2) as u32,
            color_std: measured(3),
            ssim,
            dilate_radius: radius,
            split: split_for(&id, cfg.test_fraction).into(),
            augmentation: params,
        },
    };
    record.validate()?;
    let files = vec![
        (record.fg.clone(), fg_png),
        (record.bg.clone(), encode_png(&bg)?),
        (record.gt.clone(), encode_png(&gt)?),
    ];
    Ok((record, files))
}

fn check_run_info(out: &Path, cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let path = out.join(RUN_FILE);
    let current = RunInfo { fingerprint: cfg.fingerprint(), seed };
    match std::fs::read(&path) {
        Ok(bytes) => {
            let found: RunInfo = serde_json::from_slice(&bytes)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            if found != current {
                return Err(PipelineError::ConfigDrift { expected: current.fingerprint, found: found.fingerprint });
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let mut text = serde_json::to_string_pretty(&current).expect("run info serializes");
            text.push('\n');
            std::fs::write(&path, text).at(&path)
        }
        Err(e) => Err(PipelineError::Io { path, source: e }),
    }
}

/// Build tetrads for every source not yet committed in the output manifest.
/// Rerunning on a finished output is a no-op.
pub fn build(cfg: &PipelineConfig, gateway: &dyn Gateway, opts: &BuildOptions) -> Result<BuildSummary> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let sources = list_sources(&cfg.input_dir)?;
    let out = &cfg.output_dir;
    for sub in ["", "fg", "bg", "gt", "candidates"] {
        std::fs::create_dir_all(out.join(sub)).at(out.join(sub))?;
    }
    check_run_info(out, cfg, seed)?;

    let manifest_path = out.join(MANIFEST_FILE);
    let existing = match read_manifest(&manifest_path) {
        Ok(m) => m,
        Err(PipelineError::NoManifest(_)) => Manifest::default(),
        Err(e) => return Err(e),
    };
    if existing.trailing_len > 0 {
        log::info!("discarding {} uncommitted manifest bytes", existing.trailing_len);
    }
    let done: BTreeSet<&str> = existing.sources().map(|s| s.source_id.as_str()).collect();
    let todo: Vec<&(String, PathBuf)> = sources.iter().filter(|(id, _)| !done.contains(id.as_str())).collect();
    let mut writer = ManifestWriter::open(&manifest_path, existing.committed_len)?;

    let mut summary = BuildSummary {
        sources_total: sources.len(),
        sources_already_done: sources.len() - todo.len(),
        ..Default::default()
    };
    let ctx = Ctx { cfg, seed, gateway };
    let next_job = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<SourceOutput>)>();
    let mut failure = None;

    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(todo.len().max(1)) {
            let tx = tx.clone();
            let (ctx, todo, next_job, stop) = (&ctx, &todo, &next_job, &stop);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next_job.fetch_add(1, Ordering::SeqCst);
                let Some((id, path)) = todo.get(i) else { break };
                let res = process_source(ctx, id, path);
                if tx.send((i, res)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // commit strictly in source order so the manifest is always a prefix
        let mut pending = BTreeMap::new();
        let mut next = 0usize;
        'recv: for (i, res) in rx.iter() {
            pending.insert(i, res);
            while let Some(res) = pending.remove(&next) {
                next += 1;
                let committed = res.and_then(|o| commit(out, &mut writer, o));
                match committed {
                    Ok(line) => {
                        summary.sources_processed += 1;
                        summary.sources_failed += (line.status == SourceStatus::Failed) as usize;
                        summary.records_out += line.records.len() as u64;
                        summary.counts.add(&line);
                    }
                    Err(e) => {
                        failure = Some(e);
                        stop.store(true, Ordering::SeqCst);
                        break 'recv;
                    }
                }
                if opts.stop_after.is_some_and(|n| summary.sources_processed >= n) && next < todo.len() {
                    summary.interrupted = true;
                    stop.store(true, Ordering::SeqCst);
                    break 'recv;
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if summary.counts.cascade.is_none() {
        summary.counts.cascade = Some(FilterReport::empty(&cfg.qc()));
    }
    Ok(summary)
}

/// Like [`build`], but requires an existing manifest.
pub fn resume(cfg: &PipelineConfig, gateway: &dyn Gateway, opts: &BuildOptions) -> Result<BuildSummary> {
    let path = cfg.output_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(PipelineError::NoManifest(path));
    }
    build(cfg, gateway, opts)
}

fn commit(out: &Path, writer: &mut ManifestWriter, o: SourceOutput) -> Result<SourceLine> {
    for (rel, bytes) in &o.files {
        let path = out.join(rel);
        std::fs::write(&path, bytes).at(&path)?;
    }
    writer.commit(&o.tetrads, &o.line)?;
    Ok(o.line)
}

/// Digest of every file under `root`, keyed by relative path.
pub fn tree_digest(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).at(&dir)? {
            let path = entry.at(&dir)?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).at(&path)?;
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                out.insert(rel, hex(&Sha256::digest(&bytes)));
            }
        }
    }
    Ok(out)
}
