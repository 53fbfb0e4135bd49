//! Results CSV and rendered report tables.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use mcbench_core::metrics::{
    build_report_table, fmt_opt, fmt_sparsity, CompressionRecord, ReportRow,
};
use mcbench_core::quantization::Int8Mode;

pub const CSV_COLUMNS: [&str; 8] = [
    "sparsity",
    "precision_bits",
    "int8_mode",
    "size_bytes",
    "reduction_factor",
    "accuracy_pct",
    "delta_acc_pp",
    "quality",
];

const SIZE_COLUMNS: [&str; 6] = [
    "sparsity",
    "precision_bits",
    "size_bytes",
    "reduction_factor",
    "accuracy_pct",
    "delta_acc_pp",
];

const QUALITY_COLUMNS: [&str; 4] = ["sparsity", "precision_bits", "quality", "flag"];

/// Cells of one record in `CSV_COLUMNS` order.
pub fn record_cells(r: &CompressionRecord) -> [String; 8] {
    [
        fmt_sparsity(r.sparsity),
        r.precision_bits.to_string(),
        r.int8_mode.map_or("-".into(), |m| m.id().to_string()),
        r.size_bytes.to_string(),
        fmt_opt(r.reduction_factor, 2),
        format!("{:.2}", r.accuracy),
        fmt_opt(r.accuracy_delta, 2),
        fmt_opt(r.quality, 4),
    ]
}

pub fn write_csv(records: &[CompressionRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(record_cells(r))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn parse_opt(cell: &str) -> Result<Option<f64>> {
    if cell == "-" {
        Ok(None)
    } else {
        Ok(Some(cell.parse()?))
    }
}

/// Parses a results CSV; errors carry the 1-based line number.
pub fn read_csv(text: &str) -> Result<Vec<CompressionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers().context("line 1: unreadable header")?;
    if header.iter().ne(CSV_COLUMNS) {
        bail!("line 1: expected header {}", CSV_COLUMNS.join(","));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow!("line {line}: {e}")
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let rec = parse_row(&row).with_context(|| format!("line {line}"))?;
        out.push(rec);
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord) -> Result<CompressionRecord> {
    let cell = |i: usize| {
        row.get(i)
            .ok_or_else(|| anyhow!("missing column {}", CSV_COLUMNS[i]))
    };
    let int8_mode = match cell(2)? {
        "-" => None,
        m => Some(m.parse::<Int8Mode>()?),
    };
    let rec = CompressionRecord {
        sparsity: cell(0)?.parse().context("sparsity")?,
        precision_bits: cell(1)?.parse().context("precision_bits")?,
        int8_mode,
        size_bytes: cell(3)?.parse().context("size_bytes")?,
        reduction_factor: parse_opt(cell(4)?).context("reduction_factor")?,
        accuracy: cell(5)?.parse().context("accuracy_pct")?,
        accuracy_delta: parse_opt(cell(6)?).context("delta_acc_pp")?,
        quality: parse_opt(cell(7)?).context("quality")?,
    };
    let blanks = [rec.reduction_factor, rec.accuracy_delta, rec.quality]
        .iter()
        .filter(|v| v.is_none())
        .count();
    if blanks != 0 && blanks != 3 {
        bail!("baseline rows must leave reduction_factor, delta_acc_pp and quality all empty");
    }
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

fn size_cells(row: &ReportRow) -> Vec<String> {
    let c = record_cells(&row.record);
    vec![
        c[0].clone(),
        c[1].clone(),
        c[3].clone(),
        c[4].clone(),
        c[5].clone(),
        c[6].clone(),
    ]
}

fn quality_cells(row: &ReportRow) -> Vec<String> {
    let c = record_cells(&row.record);
    vec![
        c[0].clone(),
        c[1].clone(),
        c[7].clone(),
        row.flag.map_or("", |f| f.label()).to_string(),
    ]
}

fn markdown_table(out: &mut String, header: &[&str], rows: impl Iterator<Item = Vec<String>>) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for cells in rows {
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
}

/// Renders the size/accuracy table and the quality table.
pub fn render(records: &[CompressionRecord], format: Format) -> Result<String> {
    let rows = build_report_table(records)?;
    match format {
        Format::Markdown => {
            let mut out = String::new();
            out.push_str("## Size and accuracy\n\n");
            markdown_table(&mut out, &SIZE_COLUMNS, rows.iter().map(size_cells));
            out.push_str("\n## Quality\n\n");
            markdown_table(&mut out, &QUALITY_COLUMNS, rows.iter().map(quality_cells));
            Ok(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = CSV_COLUMNS.to_vec();
            header.push("flag");
            w.write_record(&header)?;
            for row in &rows {
                let mut cells = record_cells(&row.record).to_vec();
                cells.push(row.flag.map_or("", |f| f.label()).to_string());
                w.write_record(&cells)?;
            }
            Ok(String::from_utf8(w.into_inner()?)?)
        }
    }
}

/// Body rows of a markdown table, cell text trimmed.
pub type TableRows = Vec<Vec<String>>;

/// Reads the two markdown tables back as `(size rows, quality rows)`.
pub fn parse_markdown(text: &str) -> Result<(TableRows, TableRows)> {
    let mut tables: Vec<TableRows> = Vec::new();
    let mut current: Option<TableRows> = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(inner) = line.strip_prefix('|').and_then(|l| l.strip_suffix('|')) {
            if inner.starts_with("---") {
                continue;
            }
            let cells: Vec<String> = inner.split('|').map(|c| c.trim().to_string()).collect();
            current.get_or_insert_with(Vec::new).push(cells);
        } else if let Some(t) = current.take() {
            tables.push(t);
        }
    }
    tables.extend(current);
    if tables.len() != 2 {
        bail!("expected 2 tables, found {}", tables.len());
    }
    let quality = tables.pop().expect("two tables");
    let size = tables.pop().expect("two tables");
    let body = |t: Vec<Vec<String>>| t.into_iter().skip(1).collect();
    Ok((body(size), body(quality)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<CompressionRecord> {
        let base = CompressionRecord::baseline(78_170, 98.17);
        let mut v = vec![base.clone()];
        for (s, p, size, acc) in [(0.0, 16, 17_626, 97.80), (0.99, 8, 2_250, 29.75)] {
            let mode = (p == 8).then_some(Int8Mode::Asymmetric);
            v.push(CompressionRecord::compressed(s, p, mode, size, acc, &base).unwrap());
        }
        v
    }

    #[test]
    fn csv_round_trips_rendered_values() {
        let text = write_csv(&sample()).unwrap();
        let back = read_csv(&text).unwrap();
        assert_eq!(write_csv(&back).unwrap(), text);
        assert!(text.starts_with("sparsity,precision_bits,int8_mode,size_bytes,"));
        assert!(text.contains("0,32,-,78170,-,98.17,-,-"));
    }

    #[test]
    fn malformed_csv_reports_line() {
        let mut text = write_csv(&sample()).unwrap();
        text.push_str("0.5,32,-,oops,1.00,90.00,-1.00,-0.1\n");
        let err = format!("{:#}", read_csv(&text).unwrap_err());
        assert!(err.contains("line 5"), "{err}");
        let err = format!("{:#}", read_csv("a,b\n1,2\n").unwrap_err());
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn partial_baseline_rows_are_rejected() {
        let text = format!("{}\n0,32,-,10,-,90.00,1.00,-\n", CSV_COLUMNS.join(","));
        assert!(read_csv(&text).is_err());
    }

    #[test]
    fn markdown_has_both_tables_and_flags() {
        let md = render(&sample(), Format::Markdown).unwrap();
        let (size, quality) = parse_markdown(&md).unwrap();
        assert_eq!(size.len(), 3);
        assert_eq!(size[0], ["0", "32", "78170", "-", "98.17", "-"]);
        assert_eq!(quality[1][3], "best");
        assert_eq!(quality[2][3], "worst");
    }
}
