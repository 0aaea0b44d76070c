//! Minimal static SVG figures for batch runs: forest plots, paired overlap
//! histograms, subgroup boxplots and bar charts.
//!
//! Everything is built by deterministic string concatenation with fixed
//! 2-decimal coordinates — identical inputs yield byte-identical files, so
//! figures participate in reproducibility checks like any other artifact.
//! No external renderer or font machinery is involved; the files are plain
//! standalone SVG 1.1.

use crate::diagnostics::OverlapReport;

const WIDTH: f64 = 640.0;
const MARGIN_LEFT: f64 = 150.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 45.0;
const ROW_H: f64 = 26.0;
const FONT: &str = "font-family=\"sans-serif\" font-size=\"12\"";
const ACCENT: &str = "#2a6f4e"; // diamond / bar fill
const MUTED: &str = "#666666"; // whiskers, axes
const TREATED_FILL: &str = "#cc6677";
const CONTROL_FILL: &str = "#4477aa";

/// One row of a forest plot. `point = None` renders a labeled "failed" row
/// so grid failures stay visible in the figure.
#[derive(Clone, Debug, PartialEq)]
pub struct ForestRow {
    pub label: String,
    pub point: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

/// Box summary of one distribution: median, quartile box and whisker ends.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxStats {
    pub label: String,
    pub lo_whisker: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub hi_whisker: f64,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn num(v: f64) -> String {
    // Tick labels: short fixed precision with trailing zeros trimmed.
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn coord(v: f64) -> String {
    format!("{v:.2}")
}

/// Maps data values on `[lo, hi]` onto pixel offsets of a `span`-wide track.
struct Scale {
    lo: f64,
    hi: f64,
    offset: f64,
    span: f64,
}

impl Scale {
    /// Builds a scale covering all finite values with 5% padding; collapses
    /// to a unit band around the value when the range is degenerate.
    fn fit(values: impl Iterator<Item = f64>, offset: f64, span: f64) -> Scale {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Scale { lo: lo - pad, hi: hi + pad, offset, span }
    }

    fn x(&self, v: f64) -> f64 {
        self.offset + (v - self.lo) / (self.hi - self.lo) * self.span
    }

    /// Five evenly spaced ticks over the padded range.
    fn ticks(&self) -> Vec<f64> {
        (0..5).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).collect()
    }
}

struct Doc {
    body: String,
    width: f64,
    height: f64,
}

impl Doc {
    fn new(width: f64, height: f64) -> Doc {
        Doc { body: String::new(), width, height }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, w: f64) {
        self.body.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\" stroke-width=\"{w}\"/>\n",
            coord(x1),
            coord(y1),
            coord(x2),
            coord(y2)
        ));
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        self.body.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>\n",
            coord(x),
            coord(y),
            coord(w),
            coord(h)
        ));
    }

    fn diamond(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        self.body.push_str(&format!(
            "<polygon points=\"{},{} {},{} {},{} {},{}\" fill=\"{fill}\"/>\n",
            coord(cx - r),
            coord(cy),
            coord(cx),
            coord(cy - r),
            coord(cx + r),
            coord(cy),
            coord(cx),
            coord(cy + r)
        ));
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\" {FONT}>{}</text>\n",
            coord(x),
            coord(y),
            esc(s)
        ));
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\">\n<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" \
             fill=\"white\"/>\n{body}</svg>\n",
            w = coord(self.width),
            h = coord(self.height),
            body = self.body
        )
    }

    fn x_axis(&mut self, scale: &Scale, y: f64, label: &str) {
        self.line(scale.offset, y, scale.offset + scale.span, y, MUTED, 1.0);
        for t in scale.ticks() {
            let x = scale.x(t);
            self.line(x, y, x, y + 4.0, MUTED, 1.0);
            self.text(x, y + 16.0, "middle", &num(t));
        }
        self.text(scale.offset + scale.span / 2.0, y + 32.0, "middle", label);
    }
}

/// Forest plot: one row per estimate, diamond at the point, whisker over the
/// confidence interval, and an optional dashed reference line (e.g. the null
/// effect). Rows appear top to bottom in input order; failed rows render as
/// an explicit annotation instead of vanishing.
pub fn forest_plot_svg(
    title: &str,
    rows: &[ForestRow],
    x_label: &str,
    reference: Option<f64>,
) -> String {
    let height = MARGIN_TOP + rows.len().max(1) as f64 * ROW_H + MARGIN_BOTTOM;
    let span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let values = rows
        .iter()
        .flat_map(|r| {
            let mut v = Vec::new();
            if let Some(p) = r.point {
                v.push(p);
            }
            if let Some((lo, hi)) = r.ci {
                v.push(lo);
                v.push(hi);
            }
            v
        })
        .chain(reference);
    let scale = Scale::fit(values, MARGIN_LEFT, span);

    let mut doc = Doc::new(WIDTH, height);
    doc.text(WIDTH / 2.0, 20.0, "middle", title);
    let plot_bottom = MARGIN_TOP + rows.len().max(1) as f64 * ROW_H;
    if let Some(r) = reference {
        let x = scale.x(r);
        doc.body.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"{MUTED}\" \
             stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n",
            x0 = coord(x),
            y0 = coord(MARGIN_TOP - 4.0),
            y1 = coord(plot_bottom)
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        let cy = MARGIN_TOP + (i as f64 + 0.5) * ROW_H;
        doc.text(MARGIN_LEFT - 8.0, cy + 4.0, "end", &row.label);
        match row.point {
            None => doc.text(MARGIN_LEFT + 4.0, cy + 4.0, "start", "failed"),
            Some(p) => {
                if let Some((lo, hi)) = row.ci {
                    doc.line(scale.x(lo), cy, scale.x(hi), cy, MUTED, 1.5);
                    for end in [lo, hi] {
                        doc.line(scale.x(end), cy - 4.0, scale.x(end), cy + 4.0, MUTED, 1.5);
                    }
                }
                doc.diamond(scale.x(p), cy, 5.0, ACCENT);
            }
        }
    }
    doc.x_axis(&scale, plot_bottom + 6.0, x_label);
    doc.finish()
}

/// Paired propensity histogram: treated bars drawn upward and control bars
/// downward from a shared baseline, over the report's fixed `[0, 1]` bins,
/// with the NTV summary in the subtitle.
pub fn overlap_histogram_svg(report: &OverlapReport) -> String {
    let height = 320.0;
    let span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let half = 100.0;
    let baseline = MARGIN_TOP + 30.0 + half;
    let peak = report
        .bins
        .iter()
        .map(|b| b.treated.max(b.control))
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    let mut doc = Doc::new(WIDTH, height);
    doc.text(WIDTH / 2.0, 20.0, "middle", "Propensity overlap by arm");
    doc.text(
        WIDTH / 2.0,
        36.0,
        "middle",
        &format!("normalized total variation = {}", num(report.ntv)),
    );
    let bin_w = span / report.bins.len() as f64;
    for (i, bin) in report.bins.iter().enumerate() {
        let x = MARGIN_LEFT + i as f64 * bin_w;
        if bin.treated > 0 {
            let h = bin.treated as f64 / peak * half;
            doc.rect(x + 1.0, baseline - h, bin_w - 2.0, h, TREATED_FILL);
        }
        if bin.control > 0 {
            let h = bin.control as f64 / peak * half;
            doc.rect(x + 1.0, baseline, bin_w - 2.0, h, CONTROL_FILL);
        }
    }
    doc.line(MARGIN_LEFT, baseline, MARGIN_LEFT + span, baseline, MUTED, 1.0);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let x = MARGIN_LEFT + v * span;
        doc.line(x, baseline + half, x, baseline + half + 4.0, MUTED, 1.0);
        doc.text(x, baseline + half + 16.0, "middle", &num(v));
    }
    doc.text(
        MARGIN_LEFT + span / 2.0,
        baseline + half + 32.0,
        "middle",
        "estimated propensity",
    );
    doc.text(MARGIN_LEFT - 8.0, baseline - half / 2.0, "end", "treated");
    doc.text(MARGIN_LEFT - 8.0, baseline + half / 2.0, "end", "control");
    doc.finish()
}

/// Horizontal boxplots, one per entry: quartile box, median line, whisker
/// span. Used for per-subgroup effect distributions.
pub fn boxplot_svg(title: &str, x_label: &str, boxes: &[BoxStats]) -> String {
    let height = MARGIN_TOP + boxes.len().max(1) as f64 * ROW_H + MARGIN_BOTTOM;
    let span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let scale = Scale::fit(
        boxes.iter().flat_map(|b| [b.lo_whisker, b.hi_whisker].into_iter()),
        MARGIN_LEFT,
        span,
    );
    let mut doc = Doc::new(WIDTH, height);
    doc.text(WIDTH / 2.0, 20.0, "middle", title);
    for (i, b) in boxes.iter().enumerate() {
        let cy = MARGIN_TOP + (i as f64 + 0.5) * ROW_H;
        doc.text(MARGIN_LEFT - 8.0, cy + 4.0, "end", &b.label);
        doc.line(scale.x(b.lo_whisker), cy, scale.x(b.q25), cy, MUTED, 1.5);
        doc.line(scale.x(b.q75), cy, scale.x(b.hi_whisker), cy, MUTED, 1.5);
        for end in [b.lo_whisker, b.hi_whisker] {
            doc.line(scale.x(end), cy - 4.0, scale.x(end), cy + 4.0, MUTED, 1.5);
        }
        let (x0, x1) = (scale.x(b.q25), scale.x(b.q75));
        doc.rect(x0, cy - 8.0, (x1 - x0).max(1.0), 16.0, "#cfe3d8");
        let xm = scale.x(b.median);
        doc.line(xm, cy - 8.0, xm, cy + 8.0, ACCENT, 2.0);
    }
    let plot_bottom = MARGIN_TOP + boxes.len().max(1) as f64 * ROW_H;
    doc.x_axis(&scale, plot_bottom + 6.0, x_label);
    doc.finish()
}

/// Vertical bar chart on a `[0, 1]` axis (e.g. AUCs), one labeled bar per
/// entry.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)]) -> String {
    let height = 300.0;
    let span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let track = 190.0;
    let base = MARGIN_TOP + track;
    let mut doc = Doc::new(WIDTH, height);
    doc.text(WIDTH / 2.0, 20.0, "middle", title);
    let slot = span / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = MARGIN_LEFT + i as f64 * slot;
        let h = v.clamp(0.0, 1.0) * track;
        doc.rect(x + slot * 0.15, base - h, slot * 0.7, h, ACCENT);
        doc.text(x + slot / 2.0, base - h - 6.0, "middle", &num(*v));
        doc.text(x + slot / 2.0, base + 16.0, "middle", label);
    }
    doc.line(MARGIN_LEFT, base, MARGIN_LEFT + span, base, MUTED, 1.0);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = base - v * track;
        doc.line(MARGIN_LEFT - 4.0, y, MARGIN_LEFT, y, MUTED, 1.0);
        doc.text(MARGIN_LEFT - 8.0, y + 4.0, "end", &num(v));
    }
    doc.finish()
}
