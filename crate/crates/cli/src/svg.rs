//! Tiny hand-rolled SVG plots. These are a convenience layer over the CSVs;
//! nothing downstream parses them and the rerun byte-identity contract
//! covers CSVs only.

const W: f64 = 800.0;
const H: f64 = 500.0;
const MARGIN: f64 = 55.0;

const PALETTE: [&str; 10] = [
    "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951", "#ff8ab7", "#a463f2", "#97bbf5",
    "#9c6b4e", "#9498a0",
];

fn finite_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn axes(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN,
    ));
    s.push_str(&format!(
        "<text x=\"{m}\" y=\"{yb}\" text-anchor=\"middle\">{xlo}</text>\n\
         <text x=\"{r}\" y=\"{yb}\" text-anchor=\"middle\">{xhi}</text>\n\
         <text x=\"{xl}\" y=\"{b}\" text-anchor=\"end\">{ylo}</text>\n\
         <text x=\"{xl}\" y=\"{t}\" text-anchor=\"end\">{yhi}</text>\n\
         <text x=\"{cx}\" y=\"{yb}\" text-anchor=\"middle\">{xlab}</text>\n\
         <text x=\"16\" y=\"{cy}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {cy})\">{ylab}</text>\n",
        m = MARGIN,
        r = W - MARGIN,
        xl = MARGIN - 6.0,
        b = H - MARGIN,
        t = MARGIN + 4.0,
        yb = H - MARGIN + 20.0,
        cx = W / 2.0,
        cy = H / 2.0,
        xlo = trim(x_lo),
        xhi = trim(x_hi),
        ylo = trim(y_lo),
        yhi = trim(y_hi),
        xlab = escape(x_label),
        ylab = escape(y_label),
    ));
    s
}

fn trim(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One or more named line series over a shared integer x axis starting at 0.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[(&str, &[f64])]) -> String {
    let n = series.iter().map(|(_, ys)| ys.len()).max().unwrap_or(0);
    let x_hi = (n.saturating_sub(1)).max(1) as f64;
    let (y_lo, y_hi) = finite_bounds(series.iter().flat_map(|(_, ys)| ys.iter().copied()));
    let sx = (W - 2.0 * MARGIN) / x_hi;
    let sy = (H - 2.0 * MARGIN) / (y_hi - y_lo);
    let mut out = header(title);
    out.push_str(&axes(0.0, x_hi, y_lo, y_hi, x_label, y_label));
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(x, &v)| {
                format!(
                    "{:.2},{:.2}",
                    MARGIN + x as f64 * sx,
                    H - MARGIN - (v - y_lo) * sy
                )
            })
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            W - MARGIN + 4.0,
            MARGIN + 16.0 * i as f64,
            escape(name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of 2-D points colored by a small integer class id.
pub fn scatter_plot(title: &str, points: &[(f64, f64, usize)]) -> String {
    let (x_lo, x_hi) = finite_bounds(points.iter().map(|p| p.0));
    let (y_lo, y_hi) = finite_bounds(points.iter().map(|p| p.1));
    let sx = (W - 2.0 * MARGIN) / (x_hi - x_lo);
    let sy = (H - 2.0 * MARGIN) / (y_hi - y_lo);
    let mut out = header(title);
    out.push_str(&axes(x_lo, x_hi, y_lo, y_hi, "pc1", "pc2"));
    for &(x, y, class) in points {
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{}\"/>\n",
            MARGIN + (x - x_lo) * sx,
            H - MARGIN - (y - y_lo) * sy,
            PALETTE[class % PALETTE.len()]
        ));
    }
    out.push_str("</svg>\n");
    out
}
