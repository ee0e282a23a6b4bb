//! CSV and SVG output. Floats are written with 17 significant digits in
//! scientific notation, independent of locale, so identical runs produce
//! identical bytes.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::dynamics::{FieldSample, Trajectory};
use crate::spectral::HistogramBin;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_spectrum_csv<W: Write>(mut out: W, eigenvalues: &[f64]) -> io::Result<()> {
    writeln!(out, "index,eigenvalue")?;
    for (i, v) in eigenvalues.iter().enumerate() {
        writeln!(out, "{i},{}", fmt_f64(*v))?;
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(mut out: W, bins: &[HistogramBin]) -> io::Result<()> {
    writeln!(out, "bin_left,bin_right,count")?;
    for b in bins {
        writeln!(out, "{},{},{}", fmt_f64(b.left), fmt_f64(b.right), b.count)?;
    }
    Ok(())
}

/// Natural-log relative columns are left empty when the initial distance is 0.
pub fn write_trajectory_csv<W: Write>(mut out: W, t: &Trajectory) -> io::Result<()> {
    writeln!(out, "layer,d_M,bound,log_rel_d,log_rel_bound")?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for l in 0..t.distances.len() {
        writeln!(
            out,
            "{l},{},{},{},{}",
            fmt_f64(t.distances[l]),
            fmt_f64(t.bounds[l]),
            opt(t.log_rel_distance(l)),
            opt(t.log_rel_bound(l)),
        )?;
    }
    Ok(())
}

pub fn write_field_csv<W: Write>(mut out: W, samples: &[FieldSample]) -> io::Result<()> {
    writeln!(out, "x1,x2,v1,v2,speed,d_before,d_after")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(s.x1),
            fmt_f64(s.x2),
            fmt_f64(s.v1),
            fmt_f64(s.v2),
            fmt_f64(s.speed),
            fmt_f64(s.d_before),
            fmt_f64(s.d_after),
        )?;
    }
    Ok(())
}

/// Line chart of the log-relative distance (solid) and bound (dashed) per
/// layer. Returns `None` when the initial distance is zero.
pub fn trajectory_svg(t: &Trajectory) -> Option<String> {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;

    let layers = t.distances.len();
    let actual: Vec<f64> = (0..layers)
        .map(|l| t.log_rel_distance(l))
        .collect::<Option<_>>()?;
    let bound: Vec<f64> = (0..layers)
        .map(|l| t.log_rel_bound(l))
        .collect::<Option<_>>()?;

    // Zero distances map to −∞; clip them to the lowest finite value.
    let finite = actual
        .iter()
        .chain(&bound)
        .copied()
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        hi += 1.0;
        lo -= 1.0;
    }
    let x_of = |l: usize| PAD + (W - 2.0 * PAD) * l as f64 / (layers.max(2) - 1) as f64;
    let y_of = |v: f64| {
        let v = if v.is_finite() { v } else { lo };
        H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo)
    };
    let polyline = |values: &[f64]| {
        values
            .iter()
            .enumerate()
            .map(|(l, v)| format!("{:.2},{:.2}", x_of(l), y_of(*v)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}" stroke="black"/>"#,
        H - PAD
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        polyline(&actual)
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="firebrick" stroke-width="2" stroke-dasharray="6 4" points="{}"/>"#,
        polyline(&bound)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="12">log relative distance (solid) and bound (dashed), range [{lo:.3}, {hi:.3}]</text>"#
    );
    let _ = writeln!(svg, "</svg>");
    Some(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trajectory(d0: f64) -> Trajectory {
        Trajectory {
            distances: vec![d0, d0 * 0.5, d0 * 0.1],
            bounds: vec![d0, d0 * 0.6, d0 * 0.36],
            lambda: 0.6,
            s_values: vec![1.0, 1.0],
        }
    }

    #[test]
    fn float_format_is_17_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn trajectory_csv_layout() {
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &trajectory(2.0)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "layer,d_M,bound,log_rel_d,log_rel_bound");
        assert_eq!(lines.len(), 4);
        let fields: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(fields[3].parse::<f64>().unwrap(), 0.5f64.ln());

        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &trajectory(0.0)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with(",,"));
    }

    #[test]
    fn svg_needs_nonzero_start() {
        assert!(trajectory_svg(&trajectory(0.0)).is_none());
        let svg = trajectory_svg(&trajectory(3.0)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn spectrum_and_histogram_headers() {
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &[0.0, 1.5]).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("index,eigenvalue\n0,"));
        let mut buf = Vec::new();
        write_histogram_csv(
            &mut buf,
            &[HistogramBin {
                left: 0.0,
                right: 2.0,
                count: 3,
            }],
        )
        .unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with(",3\n"));
    }
}
