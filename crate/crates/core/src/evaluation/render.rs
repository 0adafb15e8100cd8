use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::Lemma3Report;
use crate::data::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderFormat {
    Ansi,
    Html,
}

impl std::str::FromStr for RenderFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ansi" => Ok(Self::Ansi),
            "html" => Ok(Self::Html),
            _ => Err(format!("unknown format {s:?}, expected ansi or html")),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const HTML_HEAD: &str = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><style>\
body{font-family:sans-serif;max-width:60em;margin:2em auto}\
mark{background:#ffd54f}u{text-decoration-thickness:2px}\
.ex{margin:1em 0;line-height:1.8}.meta{color:#666;font-size:.85em}\
</style></head><body>\n";

/// Renders the first `n` examples: gold tokens underlined, predicted tokens
/// highlighted. Returns an empty string for `n = 0`.
pub fn render_rationales(examples: &[Example], pred_masks: &[Vec<u8>], n: usize, format: RenderFormat) -> String {
    let n = n.min(examples.len()).min(pred_masks.len());
    if n == 0 {
        return String::new();
    }
    let mut out = String::new();
    if format == RenderFormat::Html {
        out.push_str(HTML_HEAD);
        out.push_str("<p class=\"meta\">underline: gold rationale; highlight: selected</p>\n");
    }
    for (ex, pred) in examples.iter().zip(pred_masks).take(n) {
        let gold = ex.gold_mask.as_deref();
        let words: Vec<String> = ex
            .tokens
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                let g = gold.is_some_and(|g| g.get(i) == Some(&1));
                let p = pred.get(i) == Some(&1);
                match format {
                    RenderFormat::Ansi => {
                        let mut codes = Vec::new();
                        if g {
                            codes.push("4");
                        }
                        if p {
                            codes.push("1;30;43");
                        }
                        if codes.is_empty() {
                            tok.clone()
                        } else {
                            format!("\x1b[{}m{tok}\x1b[0m", codes.join(";"))
                        }
                    }
                    RenderFormat::Html => {
                        let mut w = escape(tok);
                        if g {
                            w = format!("<u>{w}</u>");
                        }
                        if p {
                            w = format!("<mark>{w}</mark>");
                        }
                        w
                    }
                }
            })
            .collect();
        match format {
            RenderFormat::Ansi => {
                let _ = writeln!(out, "[{}] label={}", ex.id, ex.label);
                let _ = writeln!(out, "{}\n", words.join(" "));
            }
            RenderFormat::Html => {
                let _ = writeln!(
                    out,
                    "<div class=\"ex\"><div class=\"meta\">{} &middot; label {}</div>{}</div>",
                    escape(&ex.id),
                    ex.label,
                    words.join(" ")
                );
            }
        }
    }
    if format == RenderFormat::Html {
        out.push_str("</body></html>\n");
    }
    out
}

/// Self-contained HTML with a per-dimension bar chart of the first 40
/// representation dimensions of every probe token, plus the distance table.
pub fn render_probe_html(report: &Lemma3Report) -> String {
    const DIMS: usize = 40;
    let mut out = String::from(HTML_HEAD);
    let _ = writeln!(
        out,
        "<p class=\"meta\">shared layers: {} of {}</p>",
        report.share_depth, report.num_layers
    );
    for view in &report.views {
        let _ = writeln!(out, "<h2>{} encoder</h2>", escape(&view.view));
        let _ = writeln!(
            out,
            "<p>mean distance to preceding token: uninformative {:.4}, informative {:.4}, ratio {:.4}</p>",
            view.mean_uninformative, view.mean_informative, view.ratio
        );
        for s in &view.sentences {
            let _ = writeln!(out, "<h3>{}</h3><table><tr><th>token</th><th>d(prev)</th><th>first {DIMS} dims</th></tr>", escape(&s.tokens.join(" ")));
            let scale = s
                .representations
                .iter()
                .flat_map(|r| r.iter().take(DIMS))
                .fold(1e-12f64, |m, v| m.max(v.abs()));
            for ((tok, rep), d) in s.tokens.iter().zip(&s.representations).zip(&s.distance_to_previous) {
                let mut svg = format!("<svg width=\"{}\" height=\"40\">", DIMS * 6);
                for (k, v) in rep.iter().take(DIMS).enumerate() {
                    let h = (v.abs() / scale * 19.0).max(0.5);
                    let y = if *v >= 0.0 { 20.0 - h } else { 20.0 };
                    let color = if *v >= 0.0 { "#1e88e5" } else { "#e53935" };
                    let _ = write!(svg, "<rect x=\"{}\" y=\"{y:.2}\" width=\"5\" height=\"{h:.2}\" fill=\"{color}\"/>", k * 6);
                }
                svg.push_str("</svg>");
                let d = d.map_or("-".to_string(), |d| format!("{d:.4}"));
                let _ = writeln!(out, "<tr><td>{}</td><td>{d}</td><td>{svg}</td></tr>", escape(tok));
            }
            out.push_str("</table>\n");
        }
    }
    out.push_str("</body></html>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex() -> Example {
        let toks = ["a", "<b>", "c", "d"].iter().map(|s| s.to_string()).collect();
        Example::new("e1", toks, 1, Some(vec![0, 1, 1, 0])).unwrap()
    }

    #[test]
    fn zero_examples_is_empty() {
        assert!(render_rationales(&[ex()], &[vec![0; 4]], 0, RenderFormat::Html).is_empty());
        assert!(render_rationales(&[ex()], &[vec![0; 4]], 0, RenderFormat::Ansi).is_empty());
    }

    #[test]
    fn exact_prediction_highlights_are_underlined() {
        let html = render_rationales(&[ex()], &[vec![0, 1, 1, 0]], 5, RenderFormat::Html);
        assert_eq!(html.matches("<mark><u>").count(), 2);
        assert_eq!(html.matches("<mark>").count(), 2);
        assert!(html.contains("&lt;b&gt;"));
        let ansi = render_rationales(&[ex()], &[vec![0, 1, 1, 0]], 1, RenderFormat::Ansi);
        assert_eq!(ansi.matches("\x1b[4;1;30;43m").count(), 2);
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_rationales(&[ex(), ex()], &[vec![1, 0, 0, 0], vec![0; 4]], 2, RenderFormat::Ansi);
        let b = render_rationales(&[ex(), ex()], &[vec![1, 0, 0, 0], vec![0; 4]], 2, RenderFormat::Ansi);
        assert_eq!(a, b);
    }
}
