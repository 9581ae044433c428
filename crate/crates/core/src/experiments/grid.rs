//! Encoder × head ablation grid.
//!
//! Each cell trains agents on one frozen encoder with one head variant and
//! records the best smoothed reward. Finished cells are appended to
//! `<out>/grid_cells.csv`, so an interrupted grid resumes where it stopped and
//! a finished one trains nothing. `<out>/grid.csv` holds every cell with its
//! min-max normalized value; cells that could not be trained are marked
//! `missing`. `<out>/grid_meta.txt` records the normalization and budget, and
//! `<out>/grid.png` is a grey-level heatmap (red = missing).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::heads::HeadVariant;

use super::config::ExperimentConfig;
use super::run::{create_dir, load_encoder, train_agent};

/// Maps the observed maximum to 1 and minimum to 0. When every present value
/// is equal they all map to 1. `None` stays `None`.
pub fn min_max_normalize(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let present = values.iter().flatten();
    let lo = present.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = present.copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| {
            v.map(|x| {
                if hi > lo {
                    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    1.0
                }
            })
        })
        .collect()
}

/// Highest value of the smoothed curve once the window is full (over the
/// whole curve if it is shorter than the window).
pub fn best_smoothed(smoothed: &[f64], window: usize) -> Option<f64> {
    let from = if smoothed.len() >= window { window - 1 } else { 0 };
    smoothed[from.min(smoothed.len())..].iter().copied().reduce(f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub encoder: String,
    pub variant: HeadVariant,
    pub best: Option<f64>,
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub cells: Vec<GridCell>,
    /// Cells trained by this call.
    pub trained: usize,
    pub csv: PathBuf,
}

/// `label=path` or a bare path labelled by its file stem.
pub fn parse_encoder_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((l, p)) => (l.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(arg);
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string());
            (label, p)
        }
    }
}

fn read_done(path: &Path) -> Result<BTreeMap<(String, String), f64>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        let bad = || Error::Dataset(format!("{}: malformed cell row", path.display()));
        let (e, v, b) = (rec.get(0).ok_or_else(bad)?, rec.get(1).ok_or_else(bad)?, rec.get(2).ok_or_else(bad)?);
        done.insert((e.to_string(), v.to_string()), b.parse().map_err(|_| bad())?);
    }
    Ok(done)
}

fn write_done(path: &Path, done: &BTreeMap<(String, String), f64>) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    let mut w = csv::Writer::from_path(&tmp)?;
    w.write_record(["encoder", "head_variant", "best_smoothed_reward"])?;
    for ((e, v), b) in done {
        w.write_record([e.clone(), v.clone(), b.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn ablate(
    cfg: &ExperimentConfig,
    encoders: &[(String, PathBuf)],
    variants: &[HeadVariant],
    serial: bool,
    out: &Path,
) -> Result<GridOutcome> {
    if encoders.is_empty() || variants.is_empty() {
        return Err(Error::config("the grid needs at least one encoder and one head variant"));
    }
    create_dir(out)?;
    let done_path = out.join("grid_cells.csv");
    let mut done = read_done(&done_path)?;
    let mut trained = 0;
    for (label, path) in encoders {
        let enc = match load_encoder(path) {
            Ok(e) => Some(e),
            Err(e) => {
                log::warn!("encoder {label}: {e}; its cells are marked missing");
                None
            }
        };
        for v in variants {
            let key = (label.clone(), v.to_string());
            if done.contains_key(&key) {
                continue;
            }
            let Some(enc) = enc.as_ref() else { continue };
            let dir = out.join("cells").join(format!("{label}__{v}"));
            match train_agent(cfg, Some(enc), *v, &cfg.ablate_seeds, false, serial, &dir) {
                Ok(s) => {
                    let smooth: Vec<f64> = s.aggregate.iter().map(|r| r.smoothed).collect();
                    let best = best_smoothed(&smooth, cfg.smoothing_window)
                        .ok_or_else(|| Error::Degenerate("empty reward curve".into()))?;
                    done.insert(key, best);
                    write_done(&done_path, &done)?;
                    trained += 1;
                }
                Err(e) => log::warn!("cell {label} × {v} failed: {e}; marked missing"),
            }
        }
    }
    let mut cells: Vec<GridCell> = encoders
        .iter()
        .flat_map(|(label, _)| {
            variants.iter().map(|v| GridCell {
                encoder: label.clone(),
                variant: *v,
                best: done.get(&(label.clone(), v.to_string())).copied(),
                normalized: None,
            })
        })
        .collect();
    let norm = min_max_normalize(&cells.iter().map(|c| c.best).collect::<Vec<_>>());
    for (c, n) in cells.iter_mut().zip(norm) {
        c.normalized = n;
    }
    let csv_path = out.join("grid.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["encoder", "head_variant", "best_smoothed_reward", "normalized", "status"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &cells {
        w.write_record([
            c.encoder.clone(),
            c.variant.to_string(),
            opt(c.best),
            opt(c.normalized),
            if c.best.is_some() { "ok" } else { "missing" }.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let present: Vec<f64> = cells.iter().filter_map(|c| c.best).collect();
    let meta = format!(
        "normalization = min-max over all completed cells\nmin = {}\nmax = {}\ncells = {}\nmissing = {}\n\
         episodes = {}\nseeds = {}\nsmoothing_window = {}\nbest = highest smoothed median reward once the window is full\n",
        present.iter().copied().fold(f64::INFINITY, f64::min),
        present.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        cells.len(),
        cells.len() - present.len(),
        cfg.episodes,
        cfg.get("ablate_seeds").unwrap_or_default(),
        cfg.smoothing_window,
    );
    std::fs::write(out.join("grid_meta.txt"), meta).map_err(|e| Error::io(out, e))?;
    write_heatmap(&out.join("grid.png"), &cells, encoders.len(), variants.len())?;
    Ok(GridOutcome {
        cells,
        trained,
        csv: csv_path,
    })
}

fn write_heatmap(path: &Path, cells: &[GridCell], rows: usize, cols: usize) -> Result<()> {
    const PX: u32 = 24;
    let mut img = image::RgbImage::new(cols as u32 * PX, rows as u32 * PX);
    for (i, c) in cells.iter().enumerate() {
        let colour = match c.normalized {
            Some(n) => {
                let g = (n * 255.0).round() as u8;
                image::Rgb([g, g, g])
            }
            None => image::Rgb([200, 0, 0]),
        };
        let (r, k) = ((i / cols) as u32, (i % cols) as u32);
        for y in 0..PX {
            for x in 0..PX {
                img.put_pixel(k * PX + x, r * PX + y, colour);
            }
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}
