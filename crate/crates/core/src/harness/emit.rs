//! Deterministic CSV files with a provenance header.
//!
//! Layout: `#`-prefixed comment lines (generator, configuration hash, seed),
//! then a header row and the data rows. Floats are written in their
//! shortest round-trip form so files read back bit-exactly.

use std::path::Path;

use crate::error::{Error, Result};

/// What produced a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn comment_lines(&self) -> Vec<String> {
        vec![
            format!("generator: {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            format!("config_sha256: {}", self.config_hash),
            format!("seed: {}", self.seed),
        ]
    }
}

/// In-memory CSV document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        CsvTable {
            comments: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_provenance(mut self, p: &Provenance) -> Self {
        self.comments = p.comment_lines();
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of a numeric column; empty cells read as NaN.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .column(name)
            .ok_or_else(|| Error::Dimension(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                let cell = r[idx].trim();
                if cell.is_empty() {
                    Ok(f64::NAN)
                } else {
                    cell.parse::<f64>()
                        .map_err(|e| Error::Dimension(format!("column {name}: {cell:?}: {e}")))
                }
            })
            .collect()
    }

    /// Value of a `key: value` comment line.
    pub fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let (k, v) = c.split_once(':')?;
            (k.trim() == key).then_some(v.trim())
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        let body = w.into_inner().expect("in-memory flush");
        out.push_str(std::str::from_utf8(&body).expect("utf-8 fields"));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let comments = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#').trim().to_string())
            .collect();
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let parse_err = |e: csv::Error| Error::Parse {
            path: "<csv>".into(),
            message: e.to_string(),
        };
        let columns = rdr.headers().map_err(parse_err)?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(parse_err)?;
        Ok(CsvTable { comments, columns, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv_string())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn float_cell(v: f64) -> String {
    format!("{v:e}")
}

pub(crate) fn opt_cell(v: Option<f64>) -> String {
    v.map(float_cell).unwrap_or_default()
}

/// Gnuplot script plotting `columns` of `csv_name` against its first column
/// on a logarithmic y axis.
pub fn gnuplot_script(csv_name: &str, xlabel: &str, columns: &[(usize, &str)]) -> String {
    let mut out = String::new();
    out.push_str("set datafile separator ','\n");
    out.push_str("set datafile commentschars '#'\n");
    out.push_str("set logscale y\n");
    out.push_str(&format!("set xlabel '{xlabel}'\n"));
    out.push_str("set ylabel 'RCRB (m)'\n");
    out.push_str("set key top left\n");
    let plots: Vec<String> = columns
        .iter()
        .enumerate()
        .map(|(i, (col, title))| {
            let file = if i == 0 { format!("'{csv_name}'") } else { "''".to_string() };
            format!("{file} using 1:{col} skip 1 with linespoints title '{title}'")
        })
        .collect();
    out.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    out
}
