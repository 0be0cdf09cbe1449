//! Static SVG figures and a plain-text summary table. Output depends only on the
//! artifacts read, so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::{column, read_epochs_csv, seed_dirs, ExperimentSummary, MeanStd, EPOCHS_FILE, MODEL_FILE, SUMMARY_FILE, TRAIN_DATA_FILE, WEIGHTS_FILE};
use crate::datasets::{self, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{confidence_band, Classifier, LinearModel, Model};
use crate::numeric;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * PAD)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(svg: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        svg,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#444\"/>",
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    );
    for (v, anchor) in [(f.x.0, "start"), (f.x.1, "end")] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"11\">{v:.3}</text>",
            f.px(v),
            HEIGHT - PAD + 14.0
        );
    }
    for v in [f.y.0, f.y.1] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{v:.3}</text>",
            PAD - 4.0,
            f.py(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

/// Segment of `a x + b y + c = 0` inside the frame, if any.
fn clip_line(f: &Frame, a: f64, b: f64, c: f64) -> Option<((f64, f64), (f64, f64))> {
    let mut pts = vec![];
    if b != 0.0 {
        for x in [f.x.0, f.x.1] {
            let y = -(a * x + c) / b;
            if y >= f.y.0 && y <= f.y.1 {
                pts.push((x, y));
            }
        }
    }
    if a != 0.0 {
        for y in [f.y.0, f.y.1] {
            let x = -(b * y + c) / a;
            if x >= f.x.0 && x <= f.x.1 {
                pts.push((x, y));
            }
        }
    }
    (pts.len() >= 2).then(|| (pts[0], pts[pts.len() - 1]))
}

/// Scatter of a two-feature training set with the learned hyperplane and the
/// confidence band `|w.x| = M_e`. Marker area scales with the sample weight;
/// hard samples (loss above `e`) are drawn with a black outline.
pub fn hyperplane_svg(ds: &LabeledDataset, model: &LinearModel, weights: &[f64], e: f64, title: &str) -> Result<String> {
    if ds.dim() != 2 {
        return Err(Error::invalid("hyperplane figure needs two features"));
    }
    crate::error::check_len("hyperplane weights", ds.len(), weights.len())?;
    let xs: Vec<f64> = (0..ds.len()).map(|i| ds.x.row(i)[0]).collect();
    let ys: Vec<f64> = (0..ds.len()).map(|i| ds.x.row(i)[1]).collect();
    let f = Frame {
        x: padded(xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        y: padded(ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    };
    let mut svg = header(title);
    axes(&mut svg, &f, "f0", "f1");
    let n = ds.len() as f64;
    for i in 0..ds.len() {
        let r = (2.5 * (weights[i] * n).sqrt()).clamp(1.0, 9.0);
        let hard = model.loss(ds.x.row(i), ds.y[i]) > e;
        let stroke = if hard { " stroke=\"black\" stroke-width=\"1\"" } else { "" };
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r:.2}\" fill=\"{}\" fill-opacity=\"0.6\"{stroke}/>",
            f.px(xs[i]),
            f.py(ys[i]),
            PALETTE[ds.y[i] % PALETTE.len()]
        );
    }
    let w = &model.omega;
    let band = confidence_band(e)?;
    let mut lines = vec![(0.0, "#000", "")];
    if !band.empty {
        lines.push((band.m_e, "#666", " stroke-dasharray=\"6 4\""));
        lines.push((-band.m_e, "#666", " stroke-dasharray=\"6 4\""));
    }
    for (offset, color, dash) in lines {
        if let Some((p, q)) = clip_line(&f, w[0], w[1], w[2] - offset) {
            let _ = writeln!(
                svg,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
                f.px(p.0),
                f.py(p.1),
                f.px(q.0),
                f.py(q.1)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Mean and standard deviation per epoch across seeds (seeds that stopped early
/// drop out of later epochs).
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn curve_from_runs(label: &str, runs: &[Vec<f64>]) -> Curve {
    let len = runs.iter().map(Vec::len).max().unwrap_or(0);
    let (mut mean, mut std) = (vec![], vec![]);
    for k in 0..len {
        let vals: Vec<f64> = runs.iter().filter_map(|r| r.get(k).copied()).collect();
        mean.push(numeric::mean(&vals));
        std.push(numeric::std_dev(&vals));
    }
    Curve {
        label: label.to_string(),
        mean,
        std,
    }
}

/// Per-epoch curves with a shaded band of one standard deviation.
pub fn curves_svg(curves: &[Curve], title: &str, ylabel: &str) -> String {
    let len = curves.iter().map(|c| c.mean.len()).max().unwrap_or(1).max(2);
    let lo = curves
        .iter()
        .flat_map(|c| c.mean.iter().zip(&c.std).map(|(m, s)| m - s))
        .fold(f64::INFINITY, f64::min);
    let hi = curves
        .iter()
        .flat_map(|c| c.mean.iter().zip(&c.std).map(|(m, s)| m + s))
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let f = Frame {
        x: (1.0, len as f64),
        y: padded(lo, hi),
    };
    let mut svg = header(title);
    axes(&mut svg, &f, "epoch", ylabel);
    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let upper: Vec<String> = c
            .mean
            .iter()
            .zip(&c.std)
            .enumerate()
            .map(|(i, (m, s))| format!("{:.2},{:.2}", f.px((i + 1) as f64), f.py(m + s)))
            .collect();
        let lower: Vec<String> = c
            .mean
            .iter()
            .zip(&c.std)
            .enumerate()
            .rev()
            .map(|(i, (m, s))| format!("{:.2},{:.2}", f.px((i + 1) as f64), f.py(m - s)))
            .collect();
        let _ = writeln!(
            svg,
            "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = c
            .mean
            .iter()
            .enumerate()
            .map(|(i, m)| format!("{:.2},{:.2}", f.px((i + 1) as f64), f.py(*m)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            line.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>",
            PAD + 8.0,
            PAD + 16.0 + 14.0 * k as f64,
            escape(&c.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn cell(m: Option<MeanStd>) -> String {
    m.map_or_else(|| "-".into(), |m| format!("{:.4} +/- {:.4}", m.mean, m.std))
}

pub fn summary_table(rows: &[(String, ExperimentSummary)]) -> String {
    let header = ["run", "variant", "seeds", "failed", "eprop_train", "eprop_test", "tacc_train", "tacc_test"];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|(label, s)| {
            [
                label.clone(),
                s.variant.clone(),
                s.seeds.len().to_string(),
                s.failed_seeds.len().to_string(),
                cell(s.eprop_train),
                cell(s.eprop_test),
                cell(s.tacc_train),
                cell(s.tacc_test),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|k| body.iter().map(|r| r[k].len()).chain([header[k].len()]).max().unwrap())
        .collect();
    let fmt_row = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = fmt_row(header.to_vec()) + "\n";
    out += &fmt_row(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    out += "\n";
    for r in &body {
        out += &fmt_row(r.iter().map(String::as_str).collect());
        out += "\n";
    }
    out
}

fn read_summary(dir: &Path) -> Result<ExperimentSummary> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::parse(&path, e.to_string()))
}

fn label_of(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn metric_runs(seeds: &[PathBuf], name: &str) -> Result<Vec<Vec<f64>>> {
    seeds
        .iter()
        .map(|d| {
            let path = d.join(EPOCHS_FILE);
            let cols = read_epochs_csv(&path)?;
            column(&cols, name, &path)?
                .iter()
                .map(|v| v.ok_or_else(|| Error::parse(&path, format!("empty {name} value"))))
                .collect()
        })
        .collect()
}

/// Renders figures and the summary table for experiment directories into `out`.
/// Returns the files written, in order.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if dirs.is_empty() {
        return Err(Error::invalid("report needs at least one experiment directory"));
    }
    fs::create_dir_all(out)?;
    let mut written = vec![];
    let mut rows = vec![];
    let (mut test_curves, mut train_curves) = (vec![], vec![]);
    for dir in dirs {
        let label = label_of(dir);
        let summary = read_summary(dir)?;
        let seeds = seed_dirs(dir)?;
        train_curves.push(curve_from_runs(&label, &metric_runs(&seeds, "eprop_train")?));
        if summary.eprop_test.is_some() {
            test_curves.push(curve_from_runs(&label, &metric_runs(&seeds, "eprop_test")?));
        }
        if let (Some(first), Some(seed)) = (seeds.first(), summary.seeds.iter().find(|s| s.ok)) {
            let model: Model = serde_json::from_str(&fs::read_to_string(first.join(MODEL_FILE))?)
                .map_err(|e| Error::parse(first.join(MODEL_FILE), e.to_string()))?;
            if let Model::Logistic(lr) = &model {
                let train = datasets::read_csv(&first.join(TRAIN_DATA_FILE))?;
                if train.dim() == 2 {
                    let weights = read_weights(&first.join(WEIGHTS_FILE))?;
                    let e = seed.e.unwrap_or(std::f64::consts::LN_2);
                    let svg = hyperplane_svg(&train, lr, &weights, e, &format!("{label}, seed {}", seed.seed))?;
                    let path = out.join(format!("hyperplane-{label}.svg"));
                    fs::write(&path, svg)?;
                    written.push(path);
                }
            }
        }
        rows.push((label, summary));
    }
    for (name, curves) in [("eprop_train", &train_curves), ("eprop_test", &test_curves)] {
        if curves.is_empty() {
            continue;
        }
        let path = out.join(format!("{name}.svg"));
        fs::write(&path, curves_svg(curves, &format!("{name} (mean +/- std)"), name))?;
        written.push(path);
    }
    let path = out.join("summary.txt");
    fs::write(&path, summary_table(&rows))?;
    written.push(path);
    Ok(written)
}

fn read_weights(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == "weight")
        .ok_or_else(|| Error::parse(path, "missing column \"weight\""))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec[idx].parse::<f64>().map_err(|e| Error::parse(path, e.to_string()))
        })
        .collect()
}
