//! Evaluation results as CSV (`method,views,mae,mse,rmse,rate`) and as an
//! aligned text table.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub views: Vec<usize>,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub rate: f64,
}

fn views_field(views: &[usize]) -> String {
    views.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn encode_results_csv(rows: &[ResultRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "views", "mae", "mse", "rmse", "rate"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.method.clone(),
            views_field(&r.views),
            format!("{:?}", r.mae),
            format!("{:?}", r.mse),
            format!("{:?}", r.rmse),
            format!("{:?}", r.rate),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn parse_results_csv(bytes: &[u8], path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if rec.len() != 6 {
            return Err(Error::format(path, format!("expected 6 fields, got {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| Error::format(path, format!("field {i}: {e}")))
        };
        let views = rec[1]
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse().map_err(|e| Error::format(path, format!("views: {e}"))))
            .collect::<Result<Vec<usize>>>()?;
        out.push(ResultRow {
            method: rec[0].to_string(),
            views,
            mae: num(2)?,
            mse: num(3)?,
            rmse: num(4)?,
            rate: num(5)?,
        });
    }
    Ok(out)
}

pub fn format_results_table(rows: &[ResultRow]) -> String {
    let header = ["method", "views", "MAE", "MSE", "RMSE", "Rate"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                views_field(&r.views),
                format!("{:.3}", r.mae),
                format!("{:.3}", r.mse),
                format!("{:.3}", r.rmse),
                format!("{:.3}", r.rate),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |row: &[&str]| -> String {
        let parts: Vec<String> = row
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        out.push_str(&line(&refs));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<ResultRow> {
        vec![
            ResultRow { method: "tpmvcc".into(), views: vec![1, 2, 3], mae: 2.5, mse: 9.0, rmse: 3.0, rate: 0.95 },
            ResultRow { method: "dwf".into(), views: vec![1], mae: 0.1 + 0.2, mse: 1e-20, rmse: 1e-10, rate: 1.0 },
        ]
    }

    #[test]
    fn csv_round_trip() {
        let bytes = encode_results_csv(&rows());
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("method,views,mae,mse,rmse,rate\ntpmvcc,\"1,2,3\",2.5,9.0,3.0,0.95\n"));
        let back = parse_results_csv(&bytes, Path::new("r")).unwrap();
        assert_eq!(back, rows());
        assert_eq!(encode_results_csv(&back), bytes);
    }

    #[test]
    fn table_is_aligned() {
        let t = format_results_table(&rows());
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("method"));
        assert_eq!(lines[2].len(), lines[0].len());
        assert!(lines[3].contains("0.300"));
    }
}
