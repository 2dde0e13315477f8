//! Columnar plot data: accuracy against the number of classes kept, one
//! column per alignment mask.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::report::ReportRow;
use crate::data::shift::classes_kept;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRequest {
    pub experiment: String,
    pub metric: String,
    /// Series to emit, in column order; `None` emits every series present.
    pub series: Option<Vec<String>>,
}

/// Known figure ids and the series they need.
pub fn figure_request(id: &str) -> Result<PlotRequest> {
    let series = |names: &[&str]| Some(names.iter().map(|s| s.to_string()).collect());
    match id {
        "fig2" | "fig2-exclude-last" => Ok(PlotRequest {
            experiment: "fig2-label-shift".into(),
            metric: "accuracy".into(),
            series: series(&["original", "exclude-last-0", "exclude-last-1", "exclude-last-2", "exclude-last-4"]),
        }),
        "fig2-exclude-first" => Ok(PlotRequest {
            experiment: "fig2-label-shift".into(),
            metric: "accuracy".into(),
            series: series(&["original", "exclude-first-0", "exclude-first-1", "exclude-first-2", "exclude-first-4"]),
        }),
        other => Err(Error::Usage(format!(
            "unknown figure {other:?}; known: fig2, fig2-exclude-last, fig2-exclude-first"
        ))),
    }
}

/// Series name of a row: `original` without alignment, the mask for plain
/// AdaBN, `mode:mask` otherwise.
pub fn series_name(row: &ReportRow) -> String {
    match row.alignment.as_str() {
        "none" => "original".into(),
        "adabn" => row.mask.clone(),
        mode => format!("{mode}:{}", row.mask),
    }
}

/// CSV with header `classes_kept,<series…>` and one row per `k`, ascending.
/// Every `(k, series)` cell must be present exactly once.
pub fn emit_plot_data(rows: &[ReportRow], req: &PlotRequest) -> Result<String> {
    let mut cells: BTreeMap<(usize, String), f64> = BTreeMap::new();
    let mut seen_series: Vec<String> = Vec::new();
    let mut shift_of_k: BTreeMap<usize, String> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.experiment == req.experiment && r.metric == req.metric) {
        let k = classes_kept(&r.shift).ok_or_else(|| {
            Error::Usage(format!("row shift {:?} has no class-subset(k) to use as x", r.shift))
        })?;
        let s = series_name(r);
        if cells.insert((k, s.clone()), r.value).is_some() {
            return Err(Error::Usage(format!("duplicate cell for k = {k}, series {s}")));
        }
        shift_of_k.entry(k).or_insert_with(|| r.shift.clone());
        if !seen_series.contains(&s) {
            seen_series.push(s);
        }
    }
    if shift_of_k.is_empty() {
        return Err(Error::MissingSeries(format!(
            "no {} rows for experiment {}",
            req.metric, req.experiment
        )));
    }
    let series = req.series.clone().unwrap_or(seen_series);
    let cells = &cells;
    let missing: Vec<String> = shift_of_k
        .iter()
        .flat_map(|(&k, shift)| {
            series
                .iter()
                .filter(move |s| !cells.contains_key(&(k, s.to_string())))
                .map(move |s| format!("({shift}, {s})"))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSeries(format!("absent (shift, mask) cells: {}", missing.join(", "))));
    }
    let mut out = format!("classes_kept,{}\n", series.join(","));
    for &k in shift_of_k.keys() {
        write!(out, "{k}").unwrap();
        for s in &series {
            write!(out, ",{}", cells[&(k, s.clone())]).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, alignment: &str, mask: &str, v: f64) -> ReportRow {
        ReportRow::new("fig2-label-shift", &format!("gaussian-noise(0.06)+class-subset({k})"), alignment, mask, "accuracy", v, 0)
    }

    #[test]
    fn full_grid_emits_sorted_columns() {
        let mut rows = Vec::new();
        for k in [3, 1] {
            rows.push(row(k, "none", "-", 0.9));
            for m in [0, 1, 2, 4] {
                rows.push(row(k, "adabn", &format!("exclude-last-{m}"), 0.1 * m as f64));
            }
        }
        let text = emit_plot_data(&rows, &figure_request("fig2").unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "classes_kept,original,exclude-last-0,exclude-last-1,exclude-last-2,exclude-last-4");
        assert!(lines[1].starts_with("1,0.9,0,"));
        assert!(lines[2].starts_with("3,"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn missing_series_lists_absent_cells() {
        let rows = vec![row(1, "none", "-", 0.9), row(1, "adabn", "exclude-last-0", 0.5)];
        match emit_plot_data(&rows, &figure_request("fig2").unwrap()) {
            Err(Error::MissingSeries(msg)) => {
                assert!(msg.contains("exclude-last-2") && msg.contains("class-subset(1)"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_point_series_is_one_row() {
        let rows = vec![row(2, "adabn", "all", 0.7)];
        let req = PlotRequest {
            experiment: "fig2-label-shift".into(),
            metric: "accuracy".into(),
            series: None,
        };
        assert_eq!(emit_plot_data(&rows, &req).unwrap(), "classes_kept,all\n2,0.7\n");
    }
}
