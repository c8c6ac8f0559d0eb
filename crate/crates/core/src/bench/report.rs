//! CSV and markdown tables of [`ResultRow`]s.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::experiment::ResultRow;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::Parse(format!("unknown report format `{s}`"))),
        }
    }
}

const LAMBDA_COLUMNS: [&str; 5] = [
    "lambda_dl",
    "lambda_h",
    "lambda_err",
    "lambda_order",
    "residual",
];

fn sci(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2e}")).unwrap_or_default()
}

fn fixed(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

fn full(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn count(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `2^-k` when `h` is an exact power of two, otherwise two digits.
fn mesh_label(h: f64) -> String {
    let k = h.log2().round();
    if h > 0.0 && 2f64.powf(k) == h {
        format!("2^{k}")
    } else {
        format!("{h:.2e}")
    }
}

fn lambda_fields(r: &ResultRow) -> [Option<f64>; 5] {
    [
        r.lambda_dl,
        r.lambda_h,
        r.lambda_err,
        r.lambda_order,
        r.residual,
    ]
}

/// Renders `rows` with a fixed column order. Lambda columns appear when any
/// row carries eigenvalue data.
pub fn emit_report(rows: &[ResultRow], format: ReportFormat) -> String {
    let with_lambda = rows.iter().any(ResultRow::has_lambda);
    match format {
        ReportFormat::Csv => emit_csv(rows, with_lambda),
        ReportFormat::Markdown => emit_markdown(rows, with_lambda),
    }
}

fn csv_header(with_lambda: bool) -> Vec<String> {
    let mut cols: Vec<String> = ["h", "epochs", "e_dl", "k", "e_h", "order"]
        .map(String::from)
        .to_vec();
    if with_lambda {
        cols.extend(LAMBDA_COLUMNS.map(String::from));
    }
    cols.extend(
        [
            "converged",
            "status",
            "h_full",
            "e_dl_full",
            "e_h_full",
            "order_full",
        ]
        .map(String::from),
    );
    if with_lambda {
        cols.extend(LAMBDA_COLUMNS.map(|c| format!("{c}_full")));
    }
    cols
}

fn emit_csv(rows: &[ResultRow], with_lambda: bool) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(with_lambda))
        .expect("in-memory write");
    for r in rows {
        let mut rec = vec![
            mesh_label(r.h),
            r.epochs.to_string(),
            sci(r.e_dl),
            count(r.iterations),
            sci(r.e_h),
            fixed(r.order),
        ];
        if with_lambda {
            let l = lambda_fields(r);
            rec.extend([sci(l[0]), sci(l[1]), sci(l[2]), fixed(l[3]), sci(l[4])]);
        }
        rec.extend([
            r.converged.to_string(),
            r.status.clone(),
            full(Some(r.h)),
            full(r.e_dl),
            full(r.e_h),
            full(r.order),
        ]);
        if with_lambda {
            rec.extend(lambda_fields(r).map(full));
        }
        w.write_record(rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn emit_markdown(rows: &[ResultRow], with_lambda: bool) -> String {
    let mut head = vec!["h", "#Epoch", "e_DL", "#K", "e_h", "order"];
    if with_lambda {
        head.extend(["λ_DL", "λ_h", "|λ−λ_h|", "λ order", "‖res‖_2"]);
    }
    head.extend(["status", "phase I (s)", "phase II (s)"]);
    let mut out = format!("| {} |\n|{}\n", head.join(" | "), "---|".repeat(head.len()));
    for r in rows {
        let mut cells = vec![
            mesh_label(r.h),
            r.epochs.to_string(),
            sci(r.e_dl),
            count(r.iterations),
            sci(r.e_h),
            fixed(r.order),
        ];
        if with_lambda {
            let l = lambda_fields(r);
            cells.extend([sci(l[0]), sci(l[1]), sci(l[2]), fixed(l[3]), sci(l[4])]);
        }
        cells.extend([
            r.status.replace('|', "/"),
            format!("{:.2}", r.wall_phase1),
            format!("{:.2}", r.wall_phase2),
        ]);
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}

/// Reads a CSV produced by [`emit_report`] back into rows, taking numbers
/// from the full-precision columns. Wall times are not stored and read as 0.
pub fn parse_report(text: &str) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let col = |name: &str| header.iter().position(|c| c == name);
    let need =
        |name: &str| col(name).ok_or_else(|| Error::Parse(format!("missing column `{name}`")));
    let opt_f = |rec: &csv::StringRecord, name: &str| -> Result<Option<f64>> {
        match col(name).and_then(|i| rec.get(i)) {
            None | Some("") => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Parse(format!("bad number `{s}` in `{name}`"))),
        }
    };
    let (i_epochs, i_k, i_conv, i_status) = (
        need("epochs")?,
        need("k")?,
        need("converged")?,
        need("status")?,
    );
    need("h_full")?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let bad = |name: &str| Error::Parse(format!("bad value in `{name}`"));
        rows.push(ResultRow {
            h: opt_f(&rec, "h_full")?.ok_or_else(|| bad("h_full"))?,
            epochs: rec[i_epochs].parse().map_err(|_| bad("epochs"))?,
            e_dl: opt_f(&rec, "e_dl_full")?,
            iterations: match &rec[i_k] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("k"))?),
            },
            e_h: opt_f(&rec, "e_h_full")?,
            order: opt_f(&rec, "order_full")?,
            lambda_dl: opt_f(&rec, "lambda_dl_full")?,
            lambda_h: opt_f(&rec, "lambda_h_full")?,
            lambda_err: opt_f(&rec, "lambda_err_full")?,
            lambda_order: opt_f(&rec, "lambda_order_full")?,
            residual: opt_f(&rec, "residual_full")?,
            converged: rec[i_conv].parse().map_err(|_| bad("converged"))?,
            status: rec[i_status].to_string(),
            wall_phase1: 0.0,
            wall_phase2: 0.0,
        });
    }
    Ok(rows)
}
