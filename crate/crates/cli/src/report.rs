//! Report rendering: a markdown summary of training and evaluation, plus a
//! small self-contained SVG line chart of the training curve. All numeric
//! output uses fixed-precision formatting so identical inputs produce
//! identical bytes.

use reclab_core::eval::EvalRow;
use reclab_core::train::MetricsRow;

/// Chart geometry: overall canvas and the plot rectangle inside it.
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 62.0;
const RIGHT: f64 = 616.0;
const TOP: f64 = 46.0;
const BOTTOM: f64 = 318.0;

/// Render a polyline chart of `(x, y)` points. Points are drawn in input
/// order; a monotone series therefore renders as a monotone polyline.
pub fn render_curve(points: &[(f64, f64)], x_label: &str, y_label: &str, title: &str) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        (LEFT + RIGHT) / 2.0,
        escape(title)
    ));
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 34.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0,
        escape(y_label)
    ));
    if points.is_empty() {
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">no data</text>\n",
            (LEFT + RIGHT) / 2.0,
            (TOP + BOTTOM) / 2.0
        ));
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    // Degenerate ranges (single point, flat series) still need a finite scale.
    if x_max - x_min < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_max - y_min < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * (RIGHT - LEFT);
    let sy = |y: f64| BOTTOM - (y - y_min) / (y_max - y_min) * (BOTTOM - TOP);
    // Range labels at the axis extremes.
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.3}</text>\n",
        LEFT - 6.0,
        BOTTOM + 4.0,
        y_min
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.3}</text>\n",
        LEFT - 6.0,
        TOP + 4.0,
        y_max
    ));
    svg.push_str(&format!(
        "  <text x=\"{LEFT}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        BOTTOM + 18.0,
        trim_number(x_min)
    ));
    svg.push_str(&format!(
        "  <text x=\"{RIGHT}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        BOTTOM + 18.0,
        trim_number(x_max)
    ));
    if points.len() == 1 {
        let (x, y) = points[0];
        svg.push_str(&format!(
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n",
            sx(x),
            sy(y)
        ));
    } else {
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Integer-valued floats print without a fraction; others keep 3 places.
fn trim_number(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.3}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Markdown summary of whatever artifacts the run produced so far.
pub fn render_report(
    sft: Option<&[MetricsRow]>,
    grpo: Option<&[MetricsRow]>,
    eval: Option<&[EvalRow]>,
    curve_file: &str,
) -> String {
    let mut md = String::from("# Run report\n");
    if let Some(rows) = sft {
        md.push_str("\n## Supervised fine-tuning\n\n");
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            md.push_str("| logged steps | first loss | final loss |\n");
            md.push_str("|---:|---:|---:|\n");
            md.push_str(&format!(
                "| {} | {:.4} | {:.4} |\n",
                rows.len(),
                first.loss,
                last.loss
            ));
        } else {
            md.push_str("No logged steps.\n");
        }
    }
    if let Some(rows) = grpo {
        md.push_str("\n## Policy optimization\n\n");
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            md.push_str(
                "| logged rounds | first reward | final reward | final hit rate | final format rate | final KL |\n",
            );
            md.push_str("|---:|---:|---:|---:|---:|---:|\n");
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                rows.len(),
                opt(first.mean_reward),
                opt(last.mean_reward),
                opt(last.hit_rate),
                opt(last.fmt_rate),
                opt(last.kl)
            ));
        } else {
            md.push_str("No logged rounds.\n");
        }
    }
    if let Some(rows) = eval {
        md.push_str("\n## Ranking evaluation\n\n");
        md.push_str("| split | k | HR@k | NDCG@k | users |\n");
        md.push_str("|---|---:|---:|---:|---:|\n");
        for r in rows {
            md.push_str(&format!(
                "| {} | {} | {:.4} | {:.4} | {} |\n",
                r.split, r.k, r.hr, r.ndcg, r.n_users
            ));
        }
    }
    md.push_str(&format!("\n## Training curve\n\n![Training curve]({curve_file})\n"));
    md
}
