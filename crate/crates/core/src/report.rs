//! CSV and JSON artifacts. All numbers are written with at most 15
//! significant digits, '.' as decimal separator, and a header row.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::analysis::{Branch, Stability};
use crate::bifurcation::BifurcationRecord;
use crate::integrator::{NormSample, ProbeSample, SimState};
use crate::model::SPECIES;

/// Rounds to 15 significant digits.
pub fn round15(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.14e}").parse().unwrap_or(x)
}

/// Shortest representation of [`round15`]`(x)`.
pub fn fmt_num(x: f64) -> String {
    format!("{:?}", round15(x))
}

fn csv_writer(path: &Path) -> std::io::Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

fn io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

pub fn write_timeseries_csv(path: &Path, samples: &[NormSample]) -> std::io::Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(SPECIES.iter().map(|s| format!("l2_{s}")));
    for s in SPECIES {
        header.push(format!("min_{s}"));
        header.push(format!("max_{s}"));
    }
    w.write_record(&header).map_err(io)?;
    for s in samples {
        let mut row = vec![fmt_num(s.t)];
        row.extend(s.l2.iter().map(|&x| fmt_num(x)));
        for i in 0..4 {
            row.push(fmt_num(s.min[i]));
            row.push(fmt_num(s.max[i]));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
}

/// One row per cell: index coordinates, cell-center coordinates, `f, m, s, r`.
pub fn write_fields_csv(path: &Path, state: &SimState) -> std::io::Result<()> {
    let grid = state.grid();
    let two_d = grid.dim() == 2;
    let mut w = csv_writer(path)?;
    let mut header: Vec<&str> = if two_d { vec!["i", "j", "x", "y"] } else { vec!["i", "x"] };
    header.extend(SPECIES);
    w.write_record(&header).map_err(io)?;
    for c in 0..grid.len() {
        let (i, j) = grid.index_coords(c);
        let x = grid.center(c);
        let mut row = if two_d {
            vec![i.to_string(), j.to_string(), fmt_num(x[0]), fmt_num(x[1])]
        } else {
            vec![i.to_string(), fmt_num(x[0])]
        };
        row.extend(state.fields.iter().map(|f| fmt_num(f.values()[c])));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
}

/// Reads the `f, m, s, r` columns of a fields CSV; rows must be in cell order.
pub fn read_fields_csv(path: &Path, cells: usize) -> Result<[Vec<f64>; 4], String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let cols: Vec<usize> = SPECIES
        .iter()
        .map(|s| headers.iter().position(|h| h.trim() == *s).ok_or(format!("missing column {s}")))
        .collect::<Result<_, _>>()?;
    let mut out: [Vec<f64>; 4] = Default::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        for (i, &col) in cols.iter().enumerate() {
            let raw = rec.get(col).ok_or(format!("row {}: short record", line + 2))?;
            let v: f64 = raw.trim().parse().map_err(|_| format!("row {}: bad number {raw:?}", line + 2))?;
            out[i].push(v);
        }
    }
    if out[0].len() != cells {
        return Err(format!("expected {cells} rows, got {}", out[0].len()));
    }
    Ok(out)
}

fn stability_label(s: Stability) -> &'static str {
    match s {
        Stability::Stable => "stable",
        Stability::Unstable => "unstable",
        Stability::NonHyperbolic => "non-hyperbolic",
    }
}

pub fn write_bifurcation_csv(path: &Path, records: &[BifurcationRecord]) -> std::io::Result<()> {
    let branches = [Branch::Origin, Branch::Critical, Branch::Plus, Branch::Minus];
    let mut w = csv_writer(path)?;
    let mut header = vec!["beta".to_string(), "n_branches".to_string()];
    for b in branches {
        for col in ["f", "m", "stability"] {
            header.push(format!("{}_{col}", b.label()));
        }
    }
    header.extend(["init_f", "init_m"].map(String::from));
    header.extend(SPECIES.iter().map(|s| format!("l2_{s}")));
    header.extend(["mean_f", "mean_m", "converged", "t_end"].map(String::from));
    w.write_record(&header).map_err(io)?;

    for r in records {
        let mut row = vec![fmt_num(r.beta), r.branches.len().to_string()];
        for b in branches {
            match r.branch(b) {
                Some(s) => row.extend([fmt_num(s.f), fmt_num(s.m), stability_label(s.classification).into()]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
        }
        row.extend(r.initial.iter().map(|&x| fmt_num(x)));
        row.extend(r.l2.iter().map(|&x| fmt_num(x)));
        row.extend([fmt_num(r.mean[0]), fmt_num(r.mean[1]), r.converged.to_string(), fmt_num(r.t_end)]);
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
}

pub fn write_probe_csv(path: &Path, samples: &[ProbeSample]) -> std::io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "distance", "distance_half"]).map_err(io)?;
    for s in samples {
        w.write_record([fmt_num(s.t), fmt_num(s.distance), fmt_num(s.distance_half)]).map_err(io)?;
    }
    w.flush()
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64().filter(|_| n.is_f64()) {
                if let Some(r) = serde_json::Number::from_f64(round15(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Serializes with floats rounded to 15 significant digits.
pub fn to_json(value: &impl Serialize) -> serde_json::Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    serde_json::to_string_pretty(&v)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let text = to_json(value).map_err(std::io::Error::other)?;
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn fifteen_digit_formatting() {
        assert_eq!(fmt_num(0.25), "0.25");
        assert_eq!(fmt_num(0.1 + 0.2), "0.3");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333333");
        assert_eq!(fmt_num(-2.5e-12), "-2.5e-12");
        assert_eq!(fmt_num(0.0), "0.0");
        assert_eq!(round15(f64::INFINITY), f64::INFINITY);
    }

    #[test]
    fn json_numbers_are_rounded() {
        let s = to_json(&serde_json::json!({"a": 1.0 / 3.0, "n": 7, "v": [0.1 + 0.2]})).unwrap();
        assert!(s.contains("0.333333333333333") && !s.contains("0.3333333333333333"));
        assert!(s.contains("\"n\": 7"));
        assert!(s.contains("0.3\n") || s.contains("0.3,") || s.contains("0.3 "), "{s}");
    }

    #[test]
    fn fields_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = build_grid(2, &[1.0, 1.0], &[3, 2]).unwrap();
        let vals: [Vec<f64>; 4] = std::array::from_fn(|s| (0..6).map(|c| 0.1 * (s * 6 + c) as f64 / 3.0).collect());
        let state = SimState::from_values(g, vals.clone()).unwrap();
        let path = dir.path().join("fields.csv");
        write_fields_csv(&path, &state).unwrap();
        let back = read_fields_csv(&path, 6).unwrap();
        for (a, b) in back.iter().flatten().zip(vals.iter().flatten()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
        assert!(read_fields_csv(&path, 7).is_err());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("i,j,x,y,f,m,s,r\n"));
    }
}
