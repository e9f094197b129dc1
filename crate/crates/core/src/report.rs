//! Aggregation of evaluation records into result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::metrics::HD95_CONVENTION;
use crate::pipeline::{LesionGroup, Method, Record};

pub const DISCLAIMER: &str = "Synthetic phantom data with simulated opinions. These numbers are \
not comparable to results measured on real MR data with trained networks.";

/// Mean of the defined values and how many evaluations were undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMean {
    pub mean: Option<f64>,
    pub n: usize,
    pub undefined: usize,
}

impl MetricMean {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Self {
        let (mut sum, mut n, mut undefined) = (0.0, 0, 0);
        for v in values {
            match v {
                Some(v) => {
                    sum += v;
                    n += 1;
                }
                None => undefined += 1,
            }
        }
        MetricMean {
            mean: (n > 0).then(|| sum / n as f64),
            n,
            undefined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub group: LesionGroup,
    pub method: Method,
    pub dice: MetricMean,
    pub hd95_mm: MetricMean,
    pub avd_pct: MetricMean,
    pub detection_pct: MetricMean,
    pub f1: MetricMean,
}

/// Means over all (repeat, test subject) evaluations, in table order.
pub fn summarize(records: &[Record]) -> Vec<RowSummary> {
    let mut buckets: BTreeMap<(LesionGroup, Method), Vec<&crate::metrics::MetricsReport>> =
        BTreeMap::new();
    for r in records {
        if let Record::Eval(e) = r {
            buckets
                .entry((e.group, e.method))
                .or_default()
                .push(&e.metrics);
        }
    }
    buckets
        .into_iter()
        .map(|((group, method), ms)| RowSummary {
            group,
            method,
            dice: MetricMean::of(ms.iter().map(|m| Some(m.dice))),
            hd95_mm: MetricMean::of(ms.iter().map(|m| m.hd95_mm)),
            avd_pct: MetricMean::of(ms.iter().map(|m| m.avd_pct)),
            detection_pct: MetricMean::of(ms.iter().map(|m| m.detection_pct)),
            f1: MetricMean::of(ms.iter().map(|m| m.f1)),
        })
        .collect()
}

pub fn find_row(rows: &[RowSummary], group: LesionGroup, method: Method) -> Option<&RowSummary> {
    rows.iter().find(|r| r.group == group && r.method == method)
}

fn source_label(method: Method, cfg: Option<&RunConfig>) -> String {
    let scale = |k: usize| {
        let p = cfg.map_or_else(
            || crate::patching::Scale::ALL[k].patch_size(),
            |c| c.scales[k].patch,
        );
        format!("{}x{}x{}", p[0], p[1], p[2])
    };
    match method {
        Method::Fine => scale(0),
        Method::Mid => scale(1),
        Method::Coarse => scale(2),
        _ => "3 opinions".to_string(),
    }
}

fn cell(m: &MetricMean, scale: f64) -> String {
    match m.mean {
        Some(v) => format!("{:.2}", v * scale),
        None => "n/a".to_string(),
    }
}

/// Provenance lines shared by every generated report.
pub fn header(cfg: Option<&RunConfig>) -> String {
    let mut s = String::new();
    writeln!(s, "# sinfuse cross-validation report").unwrap();
    writeln!(s, "# {DISCLAIMER}").unwrap();
    writeln!(s, "# hd95 = {HD95_CONVENTION}").unwrap();
    writeln!(
        s,
        "# lesion overlap = at least one shared voxel; dice, f1 shown x100; hd in mm; avd and detection in %"
    )
    .unwrap();
    if let Some(cfg) = cfg {
        for line in cfg.describe() {
            writeln!(s, "# {line}").unwrap();
        }
    }
    s
}

/// Plain-text tables, one per lesion group, with aligned columns.
pub fn render_text(rows: &[RowSummary], cfg: Option<&RunConfig>) -> String {
    let mut s = header(cfg);
    let heads = [
        "Source",
        "Ensemble",
        "Dice",
        "HD",
        "AVD",
        "Detection",
        "F1",
        "n",
    ];
    for group in LesionGroup::ALL {
        let mut table: Vec<[String; 8]> = Vec::new();
        for method in Method::ALL {
            let Some(r) = find_row(rows, group, method) else {
                continue;
            };
            let ensemble = match method {
                Method::Fine | Method::Mid | Method::Coarse => String::new(),
                m => m.name().to_string(),
            };
            table.push([
                source_label(method, cfg),
                ensemble,
                cell(&r.dice, 100.0),
                cell(&r.hd95_mm, 1.0),
                cell(&r.avd_pct, 1.0),
                cell(&r.detection_pct, 1.0),
                cell(&r.f1, 100.0),
                r.dice.n.to_string(),
            ]);
        }
        if table.is_empty() {
            continue;
        }
        let widths: Vec<usize> = (0..heads.len())
            .map(|c| {
                table
                    .iter()
                    .map(|row| row[c].len())
                    .max()
                    .unwrap_or(0)
                    .max(heads[c].len())
            })
            .collect();
        let fmt_row = |cells: &[&str]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| {
                    if c < 2 {
                        format!("{v:<w$}")
                    } else {
                        format!("{v:>w$}")
                    }
                })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        writeln!(s).unwrap();
        writeln!(s, "{}", group.title()).unwrap();
        writeln!(s, "{}", fmt_row(&heads)).unwrap();
        writeln!(
            s,
            "{}",
            widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .join("-+-")
        )
        .unwrap();
        for row in &table {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            writeln!(s, "{}", fmt_row(&cells)).unwrap();
        }
    }
    s
}

/// One JSON object per table row.
pub fn render_jsonl(rows: &[RowSummary]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("row serializes"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsReport;
    use crate::pipeline::EvalRecord;

    fn rec(method: Method, dice: f64, hd: Option<f64>) -> Record {
        Record::Eval(EvalRecord {
            repeat: 0,
            subject: 0,
            group: LesionGroup::All,
            method,
            metrics: MetricsReport {
                dice,
                hd95_mm: hd,
                avd_pct: Some(10.0),
                detection_pct: Some(50.0),
                f1: Some(0.5),
                flags: vec![],
            },
        })
    }

    #[test]
    fn means_skip_undefined() {
        let rows = summarize(&[
            rec(Method::SinAct, 0.8, Some(2.0)),
            rec(Method::SinAct, 0.6, None),
        ]);
        let r = find_row(&rows, LesionGroup::All, Method::SinAct).unwrap();
        assert!((r.dice.mean.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(r.hd95_mm.mean, Some(2.0));
        assert_eq!(r.hd95_mm.undefined, 1);
    }

    #[test]
    fn text_layout() {
        let rows = summarize(&[
            rec(Method::Fine, 0.7774, Some(17.82)),
            rec(Method::SinAct, 0.8126, Some(2.58)),
        ]);
        let text = render_text(&rows, None);
        assert!(text.contains(DISCLAIMER));
        assert!(text.contains("All lesions"));
        let sin = text.lines().find(|l| l.contains("SinAct")).unwrap();
        let cells: Vec<&str> = sin.split('|').map(str::trim).collect();
        assert_eq!(
            cells[..7],
            [
                "3 opinions",
                "SinAct",
                "81.26",
                "2.58",
                "10.00",
                "50.00",
                "50.00"
            ]
        );
        assert!(text.lines().any(|l| l.starts_with("6x10x6")));
    }
}
