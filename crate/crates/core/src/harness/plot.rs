//! gnuplot data files and scripts for matrix results.

use std::fmt::Write as _;

use super::{CellParams, CellSummary, MatrixResult};

/// Numeric parameters that can serve as the x axis, in preference order.
const X_AXES: [(&str, fn(&CellParams) -> f64); 4] = [
    ("capacity_mbps", |c| c.capacity_mbps),
    ("rtt_ms", |c| c.rtt_ms),
    ("loss", |c| c.loss),
    ("cross", |c| c.cross as f64),
];

fn series_label(c: &CellParams) -> String {
    format!(
        "{} {} {} {}",
        c.engine.as_str(),
        c.cca.as_str(),
        c.direction.as_str(),
        c.accounting.as_str()
    )
}

/// The first numeric parameter that takes more than one value.
pub fn x_axis(result: &MatrixResult) -> (&'static str, fn(&CellParams) -> f64) {
    X_AXES
        .iter()
        .copied()
        .find(|(_, get)| {
            let mut vals: Vec<f64> = result.summaries.iter().map(|s| get(&s.cell)).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals.len() > 1
        })
        .unwrap_or(X_AXES[0])
}

/// Blocks of `x median ci_low ci_high`, one per series, separated by two
/// blank lines so gnuplot can address them with `index`.
pub fn data_file(result: &MatrixResult) -> (String, Vec<String>) {
    let (xname, get) = x_axis(result);
    let mut labels: Vec<String> = Vec::new();
    for s in &result.summaries {
        let l = series_label(&s.cell);
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# {label}");
        let _ = writeln!(out, "# {xname} median_accuracy ci95_low ci95_high");
        let mut rows: Vec<&CellSummary> = result
            .summaries
            .iter()
            .filter(|s| &series_label(&s.cell) == label)
            .collect();
        rows.sort_by(|a, b| get(&a.cell).total_cmp(&get(&b.cell)));
        for s in rows {
            let nan = |x: Option<f64>| x.map_or("NaN".to_string(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{} {} {} {}",
                get(&s.cell),
                nan(s.median_accuracy),
                nan(s.ci95.map(|c| c.0)),
                nan(s.ci95.map(|c| c.1))
            );
        }
    }
    (out, labels)
}

pub fn script(name: &str, result: &MatrixResult, labels: &[String]) -> String {
    let (xname, _) = x_axis(result);
    let mut s = String::new();
    let _ = writeln!(s, "set terminal pngcairo size 900,600");
    let _ = writeln!(s, "set output '{name}.png'");
    let _ = writeln!(s, "set xlabel '{xname}'");
    let _ = writeln!(s, "set ylabel 'accuracy (reported / capacity)'");
    let _ = writeln!(s, "set key bottom left");
    let _ = writeln!(s, "set grid");
    let parts: Vec<String> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            format!(
                "'{name}.dat' index {i} using 1:3:4 with filledcurves fs transparent solid 0.2 notitle, \
                 '' index {i} using 1:2 with linespoints title '{l}'"
            )
        })
        .collect();
    let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    s
}
