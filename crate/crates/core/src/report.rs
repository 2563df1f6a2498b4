// SPDX-License-Identifier: MIT OR Apache-2.0

//! Report emission: CSV for machines, HTML heatmaps for people.
//!
//! CSV columns are `dataset,method,metric,ratio,value,n_samples`. Each
//! curve point is one row; the curve average is a row whose ratio is `avg`.
//!
//! In the HTML output every token is a `<span>` whose background is red for
//! positive saliency and blue for negative, with opacity proportional to
//! the score's magnitude relative to the largest magnitude in the row.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;
use crate::eval::{Curve, EvalReport};
use crate::types::Variant;

pub const CSV_HEADER: &str = "dataset,method,metric,ratio,value,n_samples";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn write_curve<W: Write>(
    out: &mut W,
    report: &EvalReport,
    method: Variant,
    metric: &str,
    curve: &Curve,
) -> Result<()> {
    let dataset = csv_field(&report.dataset);
    for (r, v) in curve.ratios.iter().zip(&curve.values) {
        writeln!(
            out,
            "{dataset},{method},{metric},{r},{v},{}",
            report.n_samples
        )?;
    }
    writeln!(
        out,
        "{dataset},{method},{metric},avg,{},{}",
        curve.average, report.n_samples
    )?;
    Ok(())
}

/// Writes the header followed by every method's curves for every report.
pub fn write_csv<W: Write>(reports: &[EvalReport], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for report in reports {
        for scores in &report.methods {
            write_curve(&mut out, report, scores.method, "aopc", &scores.aopc)?;
            write_curve(
                &mut out,
                report,
                scores.method,
                "sufficiency",
                &scores.sufficiency,
            )?;
        }
    }
    Ok(())
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// One `<span>` per token, shaded by saliency.
pub fn heatmap_row(tokens: &[String], saliency: &[f64]) -> String {
    let scale = saliency
        .iter()
        .map(|v| v.abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut html = String::new();
    for (tok, &v) in tokens.iter().zip(saliency) {
        let alpha = (v.abs() / scale).clamp(0.0, 1.0);
        let (r, g, b) = if v >= 0.0 {
            (220, 38, 38)
        } else {
            (37, 99, 235)
        };
        let _ = write!(
            html,
            "<span class=\"tok\" style=\"background-color: rgba({r},{g},{b},{alpha:.3})\" title=\"{v:.6}\">{}</span>",
            escape_html(tok)
        );
    }
    html
}

const STYLE: &str = "body{font-family:sans-serif;margin:2em;}\
.tok{padding:2px 1px;margin:0 1px;border-radius:3px;white-space:pre;}\
table{border-collapse:collapse;margin-bottom:1.5em;}\
td,th{padding:4px 8px;border-bottom:1px solid #ddd;text-align:left;}\
section{margin-bottom:2em;}";

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{t}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n<h1>{t}</h1>\n{body}</body>\n</html>\n",
        t = escape_html(title)
    )
}

/// Single-prompt explanation page with one heatmap row per method.
pub fn explain_html(title: &str, tokens: &[String], rows: &[(Variant, Vec<f64>)]) -> String {
    let mut body = String::from("<table>\n");
    for (variant, sal) in rows {
        let _ = writeln!(
            body,
            "<tr><th>{variant}</th><td>{}</td></tr>",
            heatmap_row(tokens, sal)
        );
    }
    body.push_str("</table>\n");
    page(title, &body)
}

/// Benchmark page: a summary table per dataset, then one section per kept
/// sample with a heatmap row per method.
pub fn benchmark_html(reports: &[EvalReport]) -> String {
    let mut body = String::new();
    for report in reports {
        let _ = writeln!(
            body,
            "<h2>{}</h2>\n<p>{} samples evaluated, {} skipped, {} flagged</p>",
            escape_html(&report.dataset),
            report.n_samples,
            report.skipped,
            report.flagged
        );
        body.push_str("<table>\n<tr><th>method</th><th>AOPC</th><th>Sufficiency</th></tr>\n");
        for m in &report.methods {
            let _ = writeln!(
                body,
                "<tr><td>{}</td><td>{:.4}</td><td>{:.4}</td></tr>",
                m.method, m.aopc.average, m.sufficiency.average
            );
        }
        body.push_str("</table>\n");
        for sample in &report.samples {
            let _ = writeln!(body, "<section>\n<h3>sample {}</h3>\n<table>", sample.index);
            for (variant, sal) in &sample.saliency {
                let _ = writeln!(
                    body,
                    "<tr><th>{variant}</th><td>{}</td></tr>",
                    heatmap_row(&sample.tokens, sal)
                );
            }
            body.push_str("</table>\n</section>\n");
        }
    }
    page("Saliency faithfulness report", &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::MethodScores;

    fn report() -> EvalReport {
        EvalReport {
            dataset: "d".into(),
            n_samples: 2,
            skipped: 0,
            flagged: 0,
            methods: vec![MethodScores {
                method: Variant::Random,
                aopc: Curve::new(vec![0.5, 1.0], vec![0.25, 0.75]),
                sufficiency: Curve::new(vec![0.0, 1.0], vec![0.5, 0.5]),
            }],
            samples: vec![],
        }
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_csv(&[report()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "d,random,aopc,0.5,0.25,2");
        assert_eq!(lines[3], "d,random,aopc,avg,0.5,2");
        assert_eq!(lines[4], "d,random,sufficiency,0,0.5,2");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn heatmap_has_one_span_per_token() {
        let toks: Vec<String> = ["a", "<b>", "c"].iter().map(|s| s.to_string()).collect();
        let html = explain_html("t", &toks, &[(Variant::Forward, vec![0.1, -0.5, 0.0])]);
        assert_eq!(html.matches("<span class=\"tok\"").count(), 3);
        assert!(html.contains("&lt;b&gt;"));
        assert!(html.contains("rgba(37,99,235,1.000)"));
    }

    #[test]
    fn csv_quotes_awkward_names() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
