//! Text reports and annotated images.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use patchscope_core::deconvnet::Patch;
use patchscope_core::evaluation::{LocalizationSummary, TrajectoryPoint};
use patchscope_core::explain::MetricResult;
use patchscope_core::importance::ImportanceScore;
use patchscope_core::Tensor;

use crate::error::{Error, Result};
use crate::pnm::Raster;

pub const RED: [u8; 3] = [255, 0, 0];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];

/// Layer bands for annotation colours: layers below `green_from` are red,
/// below `blue_from` green, the rest blue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bands {
    pub green_from: usize,
    pub blue_from: usize,
}

impl Default for Bands {
    fn default() -> Self {
        Self {
            green_from: 3,
            blue_from: 5,
        }
    }
}

impl Bands {
    pub fn colour(&self, layer: usize) -> [u8; 3] {
        if layer < self.green_from {
            RED
        } else if layer < self.blue_from {
            GREEN
        } else {
            BLUE
        }
    }
}

impl FromStr for Bands {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (g, b) = s.split_once(',').ok_or("expected GREEN_FROM,BLUE_FROM")?;
        let green_from = g.trim().parse().map_err(|_| format!("bad band edge {g:?}"))?;
        let blue_from = b.trim().parse().map_err(|_| format!("bad band edge {b:?}"))?;
        if green_from > blue_from {
            return Err("band edges must be non-decreasing".into());
        }
        Ok(Self { green_from, blue_from })
    }
}

impl fmt::Display for Bands {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.green_from, self.blue_from)
    }
}

/// Every scored neuron, grouped by layer and listed in rank order.
pub fn score_dump(scores: &[ImportanceScore]) -> String {
    let mut sorted: Vec<&ImportanceScore> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        a.neuron
            .layer
            .cmp(&b.neuron.layer)
            .then(a.degenerate.cmp(&b.degenerate))
            .then(b.value.total_cmp(&a.value))
            .then(a.neuron.channel.cmp(&b.neuron.channel))
    });
    let mut s = String::from("metric\tlayer\tchannel\tvalue\tdegenerate\n");
    for sc in sorted {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            sc.metric.name(),
            sc.neuron.layer,
            sc.neuron.channel,
            sc.value,
            sc.degenerate as u8
        )
        .unwrap();
    }
    s
}

pub fn patch_file_name(p: &Patch, rank: usize) -> String {
    format!("{}_{}_{}.ppm", p.metric.name(), p.neuron.layer, rank)
}

/// Ranked selections of several metrics, with shortfalls and patch boxes.
pub fn ranked_listing(results: &[MetricResult]) -> String {
    let mut s = String::from("metric\tlayer\trank\tchannel\tscore\ttop\tleft\theight\twidth\tpatch\n");
    for r in results {
        for sel in &r.ranked.selections {
            for (rank, (n, score)) in sel.neurons.iter().zip(&sel.scores).enumerate() {
                let rank = rank + 1;
                let patch = r.patches.patches.iter().find(|p| p.neuron == *n);
                let (geom, file) = match patch {
                    Some(p) => (
                        format!("{}\t{}\t{}\t{}", p.bbox.top, p.bbox.left, p.bbox.height, p.bbox.width),
                        patch_file_name(p, rank),
                    ),
                    None => ("-\t-\t-\t-".into(), "-".into()),
                };
                writeln!(s, "{}\t{}\t{rank}\t{}\t{score}\t{geom}\t{file}", r.metric.name(), sel.layer, n.channel).unwrap();
            }
        }
    }
    s
}

/// Notes on shortfalls and dead paths; empty when there are none.
pub fn shortfall_notes(results: &[MetricResult]) -> String {
    let mut s = String::new();
    for r in results {
        for sel in &r.ranked.selections {
            if sel.shortfall > 0 {
                writeln!(
                    s,
                    "{}: layer {} has {} eligible neuron(s) fewer than top {}",
                    r.metric.name(),
                    sel.layer,
                    sel.shortfall,
                    r.ranked.top_n
                )
                .unwrap();
            }
        }
        for (n, e) in &r.patches.shortfalls {
            writeln!(s, "{}: no patch for {n}: {e}", r.metric.name()).unwrap();
        }
        if r.patches.patches.is_empty() {
            writeln!(s, "{}: no patches (all selected neurons degenerate or dead)", r.metric.name()).unwrap();
        }
    }
    s
}

/// Copy of `image` with a 1-pixel outline per patch, coloured by layer band.
pub fn annotate(image: &Tensor, patches: &[Patch], bands: &Bands) -> Result<Raster> {
    let mut r = Raster::from_tensor(image)?;
    if r.channels != 3 {
        return Err(Error::Format("annotation needs a colour image".into()));
    }
    for p in patches {
        let b = &p.bbox;
        r.outline(b.top, b.left, b.height, b.width, bands.colour(p.neuron.layer));
    }
    Ok(r)
}

/// One row per checkpoint: accuracy, mean Jaccard and each probe's Jaccard.
pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let probes = points.first().map_or(0, |p| p.jaccards.len());
    let mut s = String::from("epoch,validation_accuracy,mean_jaccard");
    for i in 0..probes {
        write!(s, ",jaccard_probe_{i}").unwrap();
    }
    s.push('\n');
    for p in points {
        write!(s, "{},{},{}", p.epoch, p.validation_accuracy, p.mean_jaccard).unwrap();
        for j in &p.jaccards {
            write!(s, ",{j}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// One row per checkpoint and metric.
pub fn secondary_csv(points: &[TrajectoryPoint]) -> String {
    let mut s = String::from("epoch,metric,secondary_accuracy\n");
    for p in points {
        for (m, acc) in &p.secondary_accuracy {
            writeln!(s, "{},{},{acc}", p.epoch, m.name()).unwrap();
        }
    }
    s
}

pub fn localization_csv(rows: &[LocalizationSummary]) -> String {
    let mut s = String::from("metric,top_n,mean_ratio,images\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.metric.name(), r.top_n, r.mean_ratio, r.per_image.len()).unwrap();
    }
    s
}

/// Human-readable summary of a whole evaluation.
pub fn text_report(points: &[TrajectoryPoint], localization: &[LocalizationSummary], spearman: Option<f64>) -> String {
    let mut s = String::from("Convergence\n");
    let metrics: Vec<_> = points
        .first()
        .map(|p| p.secondary_accuracy.iter().map(|(m, _)| *m).collect())
        .unwrap_or_default();
    write!(s, "{:>6} {:>8} {:>8}", "epoch", "val_acc", "jaccard").unwrap();
    for m in &metrics {
        write!(s, " {:>14}", m.name()).unwrap();
    }
    s.push('\n');
    for p in points {
        write!(s, "{:>6} {:>8.4} {:>8.4}", p.epoch, p.validation_accuracy, p.mean_jaccard).unwrap();
        for (_, acc) in &p.secondary_accuracy {
            write!(s, " {acc:>14.4}").unwrap();
        }
        s.push('\n');
    }
    match spearman {
        Some(r) => writeln!(s, "spearman(epoch, mean jaccard) = {r:.4}").unwrap(),
        None => writeln!(s, "spearman(epoch, mean jaccard) = undefined").unwrap(),
    }
    if !localization.is_empty() {
        s.push_str("\nLocalization\n");
        writeln!(s, "{:>14} {:>6} {:>10} {:>7}", "metric", "top_n", "ratio", "images").unwrap();
        for r in localization {
            writeln!(s, "{:>14} {:>6} {:>10.4} {:>7}", r.metric.name(), r.top_n, r.mean_ratio, r.per_image.len()).unwrap();
        }
    }
    s
}

/// `MANIFEST.txt`: one line per output file with a short description.
#[derive(Default)]
pub struct RunManifest {
    command: String,
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, file: impl Into<String>, what: impl Into<String>) {
        self.entries.push((file.into(), what.into()));
    }

    pub fn render(&self) -> String {
        let mut s = format!("# files written by `patchscope {}`\n", self.command);
        s.push_str("MANIFEST.txt\tthis listing\n");
        for (f, w) in &self.entries {
            writeln!(s, "{f}\t{w}").unwrap();
        }
        s
    }
}
