//! SVG renderings: scene with model overlay, occupancy heatmap, one frame per
//! EM iteration, and a per-crossing activity timeline.
//!
//! Output is plain text with fixed two-decimal coordinates, so equal inputs
//! give equal bytes. Elements carry a `class` attribute naming what they show
//! (`detection`, `corner`, `segment`, `band-inner`, `band-outer`,
//! `initial-corner`, `corner-path`, `cell`, `activity`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::classifier::DEFAULT_INNER_MARGIN;
use crate::classifier::DEFAULT_OUTER_MARGIN;
use crate::clustering::cell_counts;
use crate::em::{assign_latent, CrossingModel, EmTrace};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::io::detections::Detection;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    /// Width of the drawing in pixels; height follows the data aspect ratio.
    pub width: f64,
    /// Padding around the data in pixels.
    pub padding: f64,
    /// Half-width of the dashed band drawn around each crossing.
    pub inner: f64,
    /// Radius of the dashed circle drawn around each corner.
    pub outer: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width: 800.0,
            padding: 20.0,
            inner: DEFAULT_INNER_MARGIN,
            outer: DEFAULT_OUTER_MARGIN,
        }
    }
}

/// Maps data coordinates to pixels (y up in data, down in SVG).
#[derive(Clone, Copy, Debug)]
struct Viewport {
    min: Point2,
    scale: f64,
    height: f64,
    width: f64,
    padding: f64,
}

impl Viewport {
    fn fit<'a>(points: impl IntoIterator<Item = &'a Point2>, opts: &RenderOptions) -> Self {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if !lo.is_finite() || !hi.is_finite() {
            lo = Point2::new(0.0, 0.0);
            hi = Point2::new(1.0, 1.0);
        }
        let span_x = (hi.x - lo.x).max(1e-9);
        let span_y = (hi.y - lo.y).max(1e-9);
        let inner_w = (opts.width - 2.0 * opts.padding).max(1.0);
        let scale = inner_w / span_x.max(span_y);
        Self {
            min: lo,
            scale,
            height: span_y * scale + 2.0 * opts.padding,
            width: opts.width,
            padding: opts.padding,
        }
    }

    fn px(&self, p: Point2) -> (f64, f64) {
        (
            self.padding + (p.x - self.min.x) * self.scale,
            self.height - self.padding - (p.y - self.min.y) * self.scale,
        )
    }

    fn len(&self, d: f64) -> f64 {
        d * self.scale
    }

    fn open(&self, out: &mut String, background: &str) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2}" height="{h:.2}" viewBox="0 0 {w:.2} {h:.2}">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(out, r#"<rect x="0" y="0" width="{:.2}" height="{:.2}" fill="{background}"/>"#, self.width, self.height);
    }
}

fn close(out: &mut String) {
    out.push_str("</svg>\n");
}

fn path_d(vp: &Viewport, pts: &[Point2]) -> String {
    let mut d = String::new();
    for (i, &p) in pts.iter().enumerate() {
        let (x, y) = vp.px(p);
        let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { " L" });
    }
    d
}

fn draw_detections(out: &mut String, vp: &Viewport, points: &[Point2]) {
    out.push_str("<g fill=\"#4a78b5\" fill-opacity=\"0.5\">\n");
    for &p in points {
        let (x, y) = vp.px(p);
        let _ = writeln!(out, r#"<circle class="detection" cx="{x:.2}" cy="{y:.2}" r="1.50"/>"#);
    }
    out.push_str("</g>\n");
}

fn draw_model(out: &mut String, vp: &Viewport, model: &CrossingModel, opts: &RenderOptions) {
    for (s, &(a, b)) in model.segments.iter().enumerate() {
        let (p, q) = (model.corners[a], model.corners[b]);
        if p == q {
            continue;
        }
        let n = model.lines[s].normal() * opts.inner;
        for side in [n, -n] {
            let _ = writeln!(
                out,
                r##"<path class="band-inner" d="{}" stroke="#888888" stroke-dasharray="6 4" fill="none"/>"##,
                path_d(vp, &[p + side, q + side])
            );
        }
        let _ = writeln!(
            out,
            r##"<path class="segment" d="{}" stroke="#d62728" stroke-width="2" fill="none"/>"##,
            path_d(vp, &[p, q])
        );
    }
    for &c in &model.corners {
        let (x, y) = vp.px(c);
        let _ = writeln!(
            out,
            r##"<circle class="band-outer" cx="{x:.2}" cy="{y:.2}" r="{:.2}" stroke="#888888" stroke-dasharray="3 3" fill="none"/>"##,
            vp.len(opts.outer)
        );
    }
    for &c in &model.corners {
        let (x, y) = vp.px(c);
        let _ = writeln!(out, r##"<circle class="corner" cx="{x:.2}" cy="{y:.2}" r="5.00" fill="#d62728"/>"##);
    }
}

fn draw_trace(out: &mut String, vp: &Viewport, trace: &EmTrace, upto: usize) {
    for (i, &c) in trace.initial_corners.iter().enumerate() {
        let mut path = vec![c];
        path.extend(trace.iterations.iter().take(upto).filter_map(|r| r.corners.get(i).copied()));
        if path.len() > 1 {
            let _ = writeln!(
                out,
                r##"<path class="corner-path" d="{}" stroke="#2ca02c" fill="none"/>"##,
                path_d(vp, &path)
            );
        }
        let (x, y) = vp.px(c);
        let _ = writeln!(
            out,
            r##"<rect class="initial-corner" x="{:.2}" y="{:.2}" width="8.00" height="8.00" fill="none" stroke="#ff7f0e"/>"##,
            x - 4.0,
            y - 4.0
        );
    }
}

fn trace_points(trace: Option<&EmTrace>) -> Vec<Point2> {
    trace
        .map(|t| {
            t.initial_corners
                .iter()
                .chain(t.iterations.iter().flat_map(|r| r.corners.iter()))
                .copied()
                .collect()
        })
        .unwrap_or_default()
}

/// Detections, initial corners with their paths, and the final model.
pub fn render_scene(points: &[Point2], model: &CrossingModel, trace: Option<&EmTrace>, opts: &RenderOptions) -> String {
    let extra = trace_points(trace);
    let vp = Viewport::fit(points.iter().chain(&model.corners).chain(&extra), opts);
    let mut out = String::new();
    vp.open(&mut out, "#ffffff");
    draw_detections(&mut out, &vp, points);
    if let Some(t) = trace {
        draw_trace(&mut out, &vp, t, t.iterations.len());
    }
    draw_model(&mut out, &vp, model, opts);
    close(&mut out);
    out
}

/// Occupancy counts per cell as grey levels, brightest at the maximum count.
pub fn render_heatmap(points: &[Point2], resolution: f64, opts: &RenderOptions) -> Result<String> {
    let counts = cell_counts(points, resolution)?;
    let max = counts.values().copied().max().unwrap_or(0).max(1) as f64;
    let cell = |(i, j): (i64, i64)| Point2::new(i as f64 * resolution, j as f64 * resolution);
    let corners: Vec<Point2> = counts
        .keys()
        .flat_map(|&(i, j)| [cell((i, j)), cell((i + 1, j + 1))])
        .collect();
    let vp = Viewport::fit(&corners, opts);
    let side = vp.len(resolution);
    let mut out = String::new();
    vp.open(&mut out, "#000000");
    for (&(i, j), &n) in &counts {
        let level = (255.0 * n as f64 / max).round() as u8;
        let (x, y) = vp.px(cell((i, j + 1)));
        let _ = writeln!(
            out,
            r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{side:.2}" height="{side:.2}" fill="rgb({level},{level},{level})"/>"#
        );
    }
    close(&mut out);
    Ok(out)
}

/// One frame for the initial model and one per iteration, named
/// `frame_0000.svg`, `frame_0001.svg`, ... All frames share one viewport.
pub fn render_frames(
    points: &[Point2],
    segments: &[(usize, usize)],
    trace: &EmTrace,
    opts: &RenderOptions,
) -> Vec<(String, String)> {
    let extra = trace_points(Some(trace));
    let vp = Viewport::fit(points.iter().chain(&extra), opts);
    let states = std::iter::once(&trace.initial_corners).chain(trace.iterations.iter().map(|r| &r.corners));
    states
        .enumerate()
        .map(|(f, corners)| {
            let mut out = String::new();
            vp.open(&mut out, "#ffffff");
            draw_detections(&mut out, &vp, points);
            draw_trace(&mut out, &vp, trace, f);
            match CrossingModel::from_corners(corners.clone(), segments.to_vec()) {
                Ok(model) => draw_model(&mut out, &vp, &model, opts),
                Err(_) => {
                    for &c in corners {
                        let (x, y) = vp.px(c);
                        let _ = writeln!(out, r##"<circle class="corner" cx="{x:.2}" cy="{y:.2}" r="5.00" fill="#d62728"/>"##);
                    }
                }
            }
            if let Some(r) = f.checked_sub(1).and_then(|i| trace.iterations.get(i)) {
                let _ = writeln!(
                    out,
                    r#"<text x="10.00" y="20.00" font-family="monospace" font-size="14">iteration {} phase {}</text>"#,
                    r.iteration,
                    u8::from(r.phase)
                );
            }
            close(&mut out);
            (frame_name(f), out)
        })
        .collect()
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.svg")
}

/// Writes rendered frames into `dir` (created if missing).
pub fn write_frames(dir: impl AsRef<Path>, frames: &[(String, String)]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    frames
        .iter()
        .map(|(name, svg)| {
            let path = dir.join(name);
            super::write_text(&path, svg)?;
            Ok(path)
        })
        .collect()
}

/// Time spans, per crossing, during which at least one detection lies inside
/// its band. Timestamps are bucketed into `bin` seconds and adjacent occupied
/// buckets are merged.
pub fn activity_intervals(detections: &[Detection], model: &CrossingModel, inner: f64, bin: f64) -> Vec<Vec<(f64, f64)>> {
    let points: Vec<Point2> = detections.iter().map(|d| d.position).collect();
    let assignment = assign_latent(&points, model, inner);
    let mut bins: Vec<Vec<i64>> = vec![Vec::new(); model.lines.len()];
    for (d, label) in detections.iter().zip(&assignment.labels) {
        if let Some(s) = label {
            bins[*s].push((d.timestamp / bin).floor() as i64);
        }
    }
    bins.into_iter()
        .map(|mut b| {
            b.sort_unstable();
            b.dedup();
            let mut spans: Vec<(i64, i64)> = Vec::new();
            for i in b {
                match spans.last_mut() {
                    Some(last) if last.1 + 1 == i => last.1 = i,
                    _ => spans.push((i, i)),
                }
            }
            spans
                .into_iter()
                .map(|(a, z)| (a as f64 * bin, (z + 1) as f64 * bin))
                .collect()
        })
        .collect()
}

/// One row per crossing with its activity intervals along the time axis.
pub fn render_activity(intervals: &[Vec<(f64, f64)>], opts: &RenderOptions) -> String {
    let t_max = intervals.iter().flatten().map(|s| s.1).fold(0.0, f64::max).max(1.0);
    let row = 24.0;
    let label_w = 90.0;
    let width = opts.width;
    let height = 2.0 * opts.padding + row * intervals.len() as f64;
    let scale = (width - label_w - 2.0 * opts.padding).max(1.0) / t_max;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{width:.2}" height="{height:.2}" fill="#ffffff"/>"##);
    for (s, spans) in intervals.iter().enumerate() {
        let y = opts.padding + row * s as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="monospace" font-size="12">crossing {s}</text>"#,
            opts.padding,
            y + row * 0.65
        );
        for &(a, b) in spans {
            let _ = writeln!(
                out,
                r##"<rect class="activity" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4"/>"##,
                opts.padding + label_w + a * scale,
                y + 4.0,
                (b - a) * scale,
                row - 8.0
            );
        }
    }
    close(&mut out);
    out
}
