//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Every check compares library or binary output against an oracle written
//! here, independently of the implementation under test.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqlabel_core::campseudo::{refine_crf, refine_crf_traced, threshold_cam, CrfConfig, ThresholdConfig};
use seqlabel_core::merger::{merge_labels, MergeOptions};
use seqlabel_core::metrics::{confusion_matrix, fw_iou, mean_iou};
use seqlabel_core::model::{load_manifest, read_mask, read_rgb, read_scoremap, ClassTable, DatasetManifest, ImageRecord, LabelMask, RgbImage, ScoreMap};
use seqlabel_core::pipeline::{
    evaluate_dir, run_campseudo, run_merge, run_sequence, simulate_annotations, CamStageConfig, MetricsOptions,
    PropagateConfig,
};
use seqlabel_core::sequencer::{build_sequences, extract_all, load_sequences, FeatureKind, FeatureVector, SequencerConfig};
use seqlabel_core::synthgen::{generate_dataset, SynthConfig};
use seqlabel_core::workspace::Workspace;
use tower::ServiceExt;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- oracles

fn merge_oracle(ys: &[u8], yp: &[u8]) -> Vec<u8> {
    ys.iter()
        .zip(yp)
        .map(|(&s, &p)| if s == 0 && p != 0 && p != 255 { p } else { s })
        .collect()
}

fn miou_oracle(pred: &[u8], gt: &[u8], n: usize) -> Option<(f64, f64)> {
    let mut ious = Vec::new();
    let (mut weighted, mut total) = (0.0, 0u64);
    for c in 0..n as u8 {
        let pairs = pred.iter().zip(gt).filter(|(p, g)| **p != 255 && **g != 255);
        let (mut i, mut t, mut q) = (0u64, 0u64, 0u64);
        for (&p, &g) in pairs {
            i += u64::from(p == c && g == c);
            t += u64::from(g == c);
            q += u64::from(p == c);
        }
        total += t;
        if t + q - i > 0 {
            let iou = i as f64 / (t + q - i) as f64;
            ious.push(iou);
            weighted += t as f64 * iou;
        }
    }
    (!ious.is_empty() && total > 0)
        .then(|| (ious.iter().sum::<f64>() / ious.len() as f64, weighted / total as f64))
}

fn unary_argmax_oracle(map: &ScoreMap, init: &LabelMask) -> LabelMask {
    let labels: Vec<u8> = (0u8..255).filter(|c| init.data().contains(c)).collect();
    let mut out = init.clone();
    for j in 0..init.len() {
        if init.data()[j] == 255 {
            continue;
        }
        let classes: Vec<f64> = labels.iter().filter(|&&c| c != 0).map(|&c| f64::from(map.score(c, j))).collect();
        let best = if classes.is_empty() {
            (1..=map.n_cl() as u8).map(|c| f64::from(map.score(c, j))).fold(0.0, f64::max)
        } else {
            classes.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let energy = |l: u8| {
            let p = if l == 0 { 1.0 - best } else { f64::from(map.score(l, j)) };
            -p.clamp(1e-6, 1.0).ln()
        };
        let mut pick = labels[0];
        for &l in &labels[1..] {
            if energy(l) < energy(pick) {
                pick = l;
            }
        }
        out.data_mut()[j] = pick;
    }
    out
}

fn random_map(rng: &mut ChaCha8Rng, w: u32, h: u32, n_cl: usize) -> ScoreMap {
    let n = (w * h) as usize;
    ScoreMap::new(w, h, (0..n_cl).map(|_| (0..n).map(|_| rng.random::<f32>()).collect()).collect()).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, n_cl: usize) -> BTreeSet<u8> {
    let mut s: BTreeSet<u8> = (1..=n_cl as u8).filter(|_| rng.random_bool(0.5)).collect();
    if s.is_empty() {
        s.insert(1);
    }
    s
}

fn random_thresholds(rng: &mut ChaCha8Rng) -> ThresholdConfig {
    let (a, b): (f64, f64) = (rng.random(), rng.random());
    ThresholdConfig { fg_threshold: a.max(b), bg_threshold: a.min(b) }
}

// ---------------------------------------------------------------- criteria

fn c1_merge_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut pairs, mut pixels, mut mismatched) = (0, 0usize, 0usize);
    for _ in 0..10_000 {
        let (w, h, n_cl) = (rng.random_range(1..=16u32), rng.random_range(1..=16u32), rng.random_range(1..=6u8));
        let n = (w * h) as usize;
        let ys: Vec<u8> = (0..n).map(|_| rng.random_range(0..=n_cl)).collect();
        let yp: Vec<u8> = (0..n).map(|_| if rng.random_bool(0.2) { 255 } else { rng.random_range(0..=n_cl) }).collect();
        let (m, _) = merge_labels(
            &LabelMask::new(w, h, ys.clone()).unwrap(),
            &LabelMask::new(w, h, yp.clone()).unwrap(),
            &MergeOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let want = merge_oracle(&ys, &yp);
        mismatched += m.data().iter().zip(&want).filter(|(a, b)| a != b).count();
        pairs += 1;
        pixels += n;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(mismatched == 0, "{mismatched} mismatched pixels");
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("{pairs} pairs, {pixels} pixels, 0 mismatches, {secs:.2} s"))
}

fn c2_metrics() -> Check {
    let start = Instant::now();
    let mask = |d: &[u8]| LabelMask::new(d.len() as u32, 1, d.to_vec()).unwrap();
    let cm = confusion_matrix(&mask(&[1, 2, 2, 2]), &mask(&[1, 1, 2, 2]), 3, false).map_err(|e| e.to_string())?;
    let (m, f) = (mean_iou(&cm).unwrap(), fw_iou(&cm).unwrap());
    ensure!((m - 7.0 / 12.0).abs() < 1e-9 && (f - 7.0 / 12.0).abs() < 1e-9, "hand fixture gave {m}, {f}");

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let n = rng.random_range(2..=7u8);
        let draw = |len: usize, rng: &mut ChaCha8Rng| -> Vec<u8> {
            (0..len).map(|_| if rng.random_bool(0.1) { 255 } else { rng.random_range(0..n) }).collect()
        };
        let (la, lb) = (rng.random_range(1..=50), rng.random_range(1..=50));
        let (pa, ga, pb, gb) = (draw(la, &mut rng), draw(la, &mut rng), draw(lb, &mut rng), draw(lb, &mut rng));
        let a = confusion_matrix(&mask(&pa), &mask(&ga), n as usize, true).unwrap();
        let b = confusion_matrix(&mask(&pb), &mask(&gb), n as usize, true).unwrap();
        let jp: Vec<u8> = pa.iter().chain(&pb).copied().collect();
        let jg: Vec<u8> = ga.iter().chain(&gb).copied().collect();
        let joint = confusion_matrix(&mask(&jp), &mask(&jg), n as usize, true).unwrap();
        let mut sum = a.clone();
        sum += &b;
        ensure!(sum == joint, "additivity failed");
        let mut order: Vec<usize> = (0..jp.len()).collect();
        order.shuffle(&mut rng);
        let sp: Vec<u8> = order.iter().map(|&i| jp[i]).collect();
        let sg: Vec<u8> = order.iter().map(|&i| jg[i]).collect();
        let shuffled = confusion_matrix(&mask(&sp), &mask(&sg), n as usize, true).unwrap();
        ensure!(shuffled == joint, "permutation changed the matrix");
        if let Some((om, of)) = miou_oracle(&jp, &jg, n as usize) {
            let (gm, gf) = (mean_iou(&joint).unwrap(), fw_iou(&joint).unwrap());
            ensure!((gm - om).abs() < 1e-9 && (gf - of).abs() < 1e-9, "oracle disagreement");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("7/12 fixture exact; additivity + permutation on 1000 fixtures, {secs:.2} s"))
}

fn c3_threshold() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let n_cl = rng.random_range(1..=6);
        let (w, h) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let map = random_map(&mut rng, w, h, n_cl);
        let labels = random_labels(&mut rng, n_cl);
        let cfg = random_thresholds(&mut rng);
        let m = threshold_cam(&map, &labels, &cfg).map_err(|e| e.to_string())?;
        for j in 0..m.len() {
            let (mut c, mut s) = (0u8, f32::NEG_INFINITY);
            for &l in &labels {
                if map.score(l, j) > s {
                    (c, s) = (l, map.score(l, j));
                }
            }
            let s = f64::from(s);
            let buckets = [s > cfg.fg_threshold, s < cfg.bg_threshold, s >= cfg.bg_threshold && s <= cfg.fg_threshold];
            ensure!(buckets.iter().filter(|b| **b).count() == 1, "pixel in {buckets:?}");
            let want = if buckets[0] { c } else if buckets[1] { 0 } else { 255 };
            ensure!(m.data()[j] == want, "pixel {j}: got {}, want {want}", m.data()[j]);
        }
        let raised = ThresholdConfig { fg_threshold: rng.random_range(cfg.fg_threshold..=1.0), ..cfg };
        let lowered = ThresholdConfig { bg_threshold: rng.random_range(0.0..=cfg.bg_threshold), ..cfg };
        let count = |m: &LabelMask, f: fn(u8) -> bool| m.data().iter().filter(|&&v| f(v)).count();
        let m1 = threshold_cam(&map, &labels, &raised).unwrap();
        let m2 = threshold_cam(&map, &labels, &lowered).unwrap();
        ensure!(count(&m1, |v| v != 0 && v != 255) <= count(&m, |v| v != 0 && v != 255), "raising fg added class pixels");
        ensure!(count(&m2, |v| v == 0) <= count(&m, |v| v == 0), "lowering bg added background pixels");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("partition + monotonicity on 1000 maps, {secs:.2} s"))
}

fn c4_crf(ws: &Workspace) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let zero = CrfConfig { spatial_weight: 0.0, bilateral_weight: 0.0, ..Default::default() };
    let mut worst_dev: f64 = 0.0;
    for _ in 0..100 {
        let (w, h, n_cl) = (rng.random_range(1..=40), rng.random_range(1..=40), rng.random_range(1..=6));
        let map = random_map(&mut rng, w, h, n_cl);
        let labels = random_labels(&mut rng, n_cl);
        let init = threshold_cam(&map, &labels, &random_thresholds(&mut rng)).unwrap();
        let raw: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
        let img = RgbImage::from_raw(w, h, raw).unwrap();
        let got = refine_crf(&map, &img, &init, &zero).map_err(|e| e.to_string())?;
        ensure!(got == unary_argmax_oracle(&map, &init), "zero-weight CRF differs from unary argmax");
        let (_, trace) = refine_crf_traced(&map, &img, &init, &CrfConfig::default()).unwrap();
        worst_dev = trace.max_sum_deviation.iter().copied().fold(worst_dev, f64::max);
    }
    ensure!(worst_dev <= 1e-6, "marginal sum deviation {worst_dev:e}");

    // Convergence on the synthetic acceptance fixtures.
    let manifest = load_manifest(&ws.manifest_path()).map_err(|e| e.to_string())?;
    let mut worst_change: f64 = 0.0;
    for rec in &manifest.images {
        let map = read_scoremap(rec.scoremap_path.as_ref().unwrap()).unwrap();
        let img = read_rgb(&rec.image_path).unwrap();
        let init = threshold_cam(&map, &rec.class_labels, &ThresholdConfig::default()).unwrap();
        let (_, trace) = refine_crf_traced(&map, &img, &init, &CrfConfig::default()).unwrap();
        worst_change = worst_change.max(*trace.max_change.last().unwrap());
    }
    ensure!(worst_change < 0.05, "max marginal change at iteration 5 is {worst_change}");
    Ok(format!(
        "100/100 zero-weight fixtures equal unary argmax; max |sum Q - 1| = {worst_dev:.1e}; \
         iteration-5 change <= {worst_change:.1e} over {} synthetic frames",
        manifest.len()
    ))
}

fn c5_sequencer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..200 {
        let n = rng.random_range(0..30);
        let mut records = Vec::new();
        let mut features = BTreeMap::new();
        for i in 0..n {
            let id = format!("im{i:03}");
            records.push(ImageRecord {
                id: id.clone(),
                image_path: PathBuf::from(format!("{id}.png")),
                scoremap_path: None,
                class_labels: BTreeSet::from([rng.random_range(1..=2u8)]),
                subject: format!("s{}", rng.random_range(0..3)),
                timestep: rng.random_range(0..8),
                gt_mask_path: None,
            });
            let v: Vec<f64> = (0..4).map(|_| rng.random()).collect();
            features.insert(id, FeatureVector { values: v, source: FeatureKind::External });
        }
        let manifest = DatasetManifest::new(ClassTable::body_parts(), records.clone()).unwrap();
        let (t1, t2): (f64, f64) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
        let cfg = |t: f64| SequencerConfig { split_threshold: t, ..Default::default() };
        let lo = build_sequences(&manifest, &features, &cfg(t1.min(t2))).unwrap();
        let hi = build_sequences(&manifest, &features, &cfg(t1.max(t2))).unwrap();

        let mut seen = BTreeSet::new();
        for s in &lo.sequences {
            let r0 = manifest.get(&s.image_ids[0]).unwrap();
            for id in &s.image_ids {
                ensure!(seen.insert(id.clone()), "image {id} in two sequences");
                let r = manifest.get(id).unwrap();
                ensure!(r.subject == r0.subject && r.class_labels == r0.class_labels, "mixed sequence {}", s.id);
            }
            let owner = hi.sequence_of(&s.image_ids[0]).unwrap();
            ensure!(s.image_ids.iter().all(|id| owner.contains(id)), "raising tau split a sequence");
        }
        ensure!(seen.len() == manifest.len(), "partition misses images");
        ensure!(hi.n() <= lo.n(), "raising tau increased n");

        let mut shuffled = records;
        shuffled.shuffle(&mut rng);
        let other = DatasetManifest::new(ClassTable::body_parts(), shuffled).unwrap();
        let again = build_sequences(&other, &features, &cfg(t1.min(t2))).unwrap();
        ensure!(again.to_json_bytes() == lo.to_json_bytes(), "output depends on manifest order");
    }

    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig { subjects: 4, timesteps: 10, abrupt_change_at: Some(5), ..Default::default() };
    let manifest = generate_dataset(&synth, dir.path()).map_err(|e| e.to_string())?;
    let config = SequencerConfig::default();
    let features = extract_all(&manifest, &config).unwrap();
    let set = build_sequences(&manifest, &features, &config).unwrap();
    ensure!(set.n() == 2 * synth.subjects as usize, "abrupt fixture gave {} sequences", set.n());
    let cosine = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    };
    let mut splits = 0;
    for s in 0..synth.subjects {
        for t in 1..synth.timesteps {
            let a = &features[&format!("s{s:02}_t{:03}", t - 1)].values;
            let b = &features[&format!("s{s:02}_t{t:03}")].values;
            splits += usize::from(cosine(a, b) > config.split_threshold);
        }
    }
    ensure!(splits == synth.subjects as usize, "oracle counts {splits} splits");
    Ok(format!("partition/homogeneity/determinism/tau-monotonicity on 200 manifests; abrupt fixture n = {}", set.n()))
}

/// Merged-vs-CAM mIoU margin measured on the seed-42 default run (blur 3,
/// CRF on the CAM branch): merged 0.957167, CAM-only 0.947486. Frozen with a
/// little slack for floating-point differences across platforms.
const FROZEN_MARGIN: f64 = 0.009;

fn c6_directional(ws: &Workspace) -> Check {
    let start = Instant::now();
    let manifest = load_manifest(&ws.manifest_path()).map_err(|e| e.to_string())?;
    ensure!(manifest.len() >= 40, "fixture has {} images", manifest.len());
    let merged = evaluate_dir(&manifest, &ws.merged_dir(), &MetricsOptions::default()).map_err(|e| e.to_string())?;
    let cam_opts = MetricsOptions { ignore_as_background: true, ..Default::default() };
    let cam = evaluate_dir(&manifest, &ws.campseudo_dir(), &cam_opts).map_err(|e| e.to_string())?;

    // Independent recount from the raw masks.
    let (mut pm, mut pc, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for r in &manifest.images {
        pm.extend_from_slice(read_mask(&ws.merged_path(&r.id), None).unwrap().data());
        pc.extend(read_mask(&ws.campseudo_path(&r.id), None).unwrap().data().iter().map(|&v| if v == 255 { 0 } else { v }));
        g.extend_from_slice(read_mask(r.gt_mask_path.as_ref().unwrap(), None).unwrap().data());
    }
    let n = manifest.classes.n_cl() + 1;
    let (om, _) = miou_oracle(&pm, &g, n).unwrap();
    let (oc, _) = miou_oracle(&pc, &g, n).unwrap();
    ensure!((om - merged.mean_iou).abs() < 1e-9 && (oc - cam.mean_iou).abs() < 1e-9, "pipeline metrics disagree with recount");

    // Strict class-set reading, reported alongside.
    let mut strict_pixels = Vec::new();
    let seqs = load_sequences(&ws.sequences_path(), &manifest).unwrap();
    let strict = MergeOptions { strict_class_set: true, ..Default::default() };
    for s in &seqs.sequences {
        let ann = read_mask(&ws.annotation_path(&s.id), None).unwrap();
        for id in &s.image_ids {
            let m = if *id == s.representative_id {
                ann.clone()
            } else {
                merge_labels(&ann, &read_mask(&ws.campseudo_path(id), None).unwrap(), &strict).unwrap().0
            };
            strict_pixels.push((id.clone(), m));
        }
    }
    strict_pixels.sort_by(|a, b| a.0.cmp(&b.0));
    let mut ps = Vec::new();
    let mut gs = Vec::new();
    for (id, m) in &strict_pixels {
        ps.extend_from_slice(m.data());
        gs.extend_from_slice(read_mask(manifest.get(id).unwrap().gt_mask_path.as_ref().unwrap(), None).unwrap().data());
    }
    let (strict_miou, _) = miou_oracle(&ps, &gs, n).unwrap();

    let (off_merged, off_cam) = crf_off_variant()?;

    let margin = merged.mean_iou - cam.mean_iou;
    let detail = format!(
        "merged mIoU {:.6} vs CAM-only {:.6} (margin {margin:.6}, frozen bound {FROZEN_MARGIN}); \
         strict class-set merged mIoU {strict_miou:.6}; \
         without CRF {off_merged:.6} vs {off_cam:.6}; fwIoU {:.6} vs {:.6}; {:.1} s",
        merged.mean_iou,
        cam.mean_iou,
        merged.fw_iou,
        cam.fw_iou,
        start.elapsed().as_secs_f64()
    );
    ensure!(margin > 0.0, "merged does not exceed CAM: {detail}");
    ensure!(margin >= FROZEN_MARGIN, "margin regressed: {detail}");
    Ok(detail)
}

/// Same seed-42 data with CRF switched off, for the record only.
fn crf_off_variant() -> Result<(f64, f64), String> {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());
    let err = |e: seqlabel_core::Error| e.to_string();
    let manifest = generate_dataset(&SynthConfig::default(), ws.root()).map_err(err)?;
    let seqs = run_sequence(&ws, &manifest, &SequencerConfig::default()).map_err(err)?;
    let cam = CamStageConfig { crf: None, ..Default::default() };
    run_campseudo(&ws, &manifest, &cam).map_err(err)?;
    simulate_annotations(&ws, &manifest, &seqs, 0).map_err(err)?;
    run_merge(&ws, &manifest, &seqs, &PropagateConfig::default()).map_err(err)?;
    let merged = evaluate_dir(&manifest, &ws.merged_dir(), &MetricsOptions::default()).map_err(err)?;
    let cam_opts = MetricsOptions { ignore_as_background: true, ..Default::default() };
    let cam = evaluate_dir(&manifest, &ws.campseudo_dir(), &cam_opts).map_err(err)?;
    Ok((merged.mean_iou, cam.mean_iou))
}

// ---------------------------------------------------------------- end-to-end runs

fn seqlabel(ws: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_seqlabel"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("seqlabel {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

const PREP: &[&[&str]] = &[&["synth"], &["sequence"], &["campseudo"]];

fn cli_run(ws: &Path) -> Result<(), String> {
    for args in PREP {
        seqlabel(ws, args)?;
    }
    seqlabel(ws, &["merge", "--simulate-annotations"])?;
    seqlabel(ws, &["metrics"])
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c7_reproducible(a: &Path, b: &Path) -> Check {
    let (ta, tb) = (tree(a), tree(b));
    ensure!(!ta.is_empty(), "empty workspace");
    let differing: Vec<&String> = ta.keys().chain(tb.keys()).filter(|k| ta.get(*k) != tb.get(*k)).collect();
    ensure!(differing.is_empty(), "{} files differ, e.g. {}", differing.len(), differing[0]);
    Ok(format!("{} files byte-identical across two seeded runs", ta.len()))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn c8_cli_vs_service(cli_ws: &Path, api_ws: &Path) -> Check {
    for args in PREP {
        seqlabel(api_ws, args)?;
    }
    let manifest = load_manifest(&Workspace::new(api_ws).manifest_path()).map_err(|e| e.to_string())?;
    let app = seqlabel_service::router(seqlabel_service::ServiceConfig::new(api_ws));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let metrics = rt.block_on(async {
        let (status, body) = call(&app, "GET", "/api/v1/sequences", vec![]).await;
        ensure!(status == StatusCode::OK, "list returned {status}");
        let list: Vec<serde_json::Value> = serde_json::from_slice(&body).unwrap();
        for entry in &list {
            let id = entry["id"].as_str().unwrap();
            let rep = entry["representative_id"].as_str().unwrap();
            let gt = std::fs::read(manifest.get(rep).unwrap().gt_mask_path.as_ref().unwrap()).unwrap();
            let (status, body) = call(&app, "PUT", &format!("/api/v1/sequences/{id}/annotation"), gt).await;
            ensure!(status == StatusCode::OK, "upload for {id} returned {status}: {}", String::from_utf8_lossy(&body));
        }
        let (status, body) = call(&app, "GET", "/api/v1/metrics?against=gt", vec![]).await;
        ensure!(status == StatusCode::OK, "metrics returned {status}");
        Ok(body)
    })?;

    let pick = |root: &Path| -> BTreeMap<String, Vec<u8>> {
        tree(root).into_iter().filter(|(k, _)| k.starts_with("merged") || k.starts_with("annotations")).collect()
    };
    let (a, b) = (pick(cli_ws), pick(api_ws));
    ensure!(!a.is_empty() && a == b, "merged/annotation files differ ({} vs {} files)", a.len(), b.len());
    let cli_metrics = std::fs::read(cli_ws.join("reports").join("metrics.json")).unwrap();
    ensure!(cli_metrics == metrics, "metrics JSON differs");
    Ok(format!("{} merged/annotation files and metrics JSON byte-identical", a.len()))
}

// ---------------------------------------------------------------- driver

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, result: Check| {
        match result {
            Ok(detail) => println!("criterion {n} [PRIMARY] {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} [PRIMARY] {name}: FAIL ({detail})");
            }
        }
    };
    let run_a = tempfile::tempdir().unwrap();
    let run_b = tempfile::tempdir().unwrap();
    let api = tempfile::tempdir().unwrap();
    let runs = cli_run(run_a.path()).and_then(|_| cli_run(run_b.path()));
    let ws = Workspace::new(run_a.path());

    report(1, "merge oracle equivalence", c1_merge_oracle());
    report(2, "metrics hand-check and properties", c2_metrics());
    report(3, "threshold semantics", c3_threshold());
    report(4, "CRF degeneracy, normalization, convergence", runs.clone().and_then(|_| c4_crf(&ws)));
    report(5, "sequencer properties", c5_sequencer());
    report(6, "merged beats CAM-only on synthetic data", runs.clone().and_then(|_| c6_directional(&ws)));
    report(7, "end-to-end reproducibility", runs.clone().and_then(|_| c7_reproducible(run_a.path(), run_b.path())));
    report(8, "CLI/service equivalence", runs.and_then(|_| c8_cli_vs_service(run_a.path(), api.path())));
    println!("criterion 9 [SECONDARY] UI round trip: NOT RUN (annotator UI is out of scope)");
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
