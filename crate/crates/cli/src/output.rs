//! CSV assembly with reproducibility in mind: every document echoes the
//! seed in a header comment, and the timestamp comment can be suppressed so
//! golden-file comparisons are byte-stable.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;

pub struct CsvDoc {
    lines: Vec<String>,
}

impl CsvDoc {
    pub fn new(subcommand: &str) -> Self {
        CsvDoc {
            lines: vec![format!("# pacsim {subcommand}")],
        }
    }

    pub fn comment(&mut self, key: &str, value: impl Display) {
        self.lines.push(format!("# {key}={value}"));
    }

    pub fn timestamp(&mut self, suppress: bool) {
        if !suppress {
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            self.comment("generated_unix", now);
        }
    }

    pub fn header(&mut self, columns: &[&str]) {
        self.lines.push(columns.join(","));
    }

    pub fn row(&mut self, fields: Vec<String>) {
        self.lines.push(fields.join(","));
    }

    pub fn finish(self, out: Option<&Path>) -> std::io::Result<()> {
        let mut text = self.lines.join("\n");
        text.push('\n');
        match out {
            Some(path) => std::fs::write(path, text),
            None => std::io::stdout().write_all(text.as_bytes()),
        }
    }
}

/// Shortest round-trip decimal form; deterministic for a given value.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Plain-text table with aligned columns, for human consumption.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: &[String], widths: &[usize]| -> String {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let header_cells: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    out.push_str(&fmt_row(&header_cells, &widths));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row, &widths));
        out.push('\n');
    }
    out
}
