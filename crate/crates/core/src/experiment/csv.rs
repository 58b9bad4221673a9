use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    B(bool),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

/// 17 significant digits, so values round-trip exactly.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn render(cell: &Cell) -> String {
    match cell {
        Cell::F(v) => format_float(*v),
        Cell::I(v) => v.to_string(),
        Cell::B(b) => u8::from(*b).to_string(),
        // commas would break the column layout
        Cell::S(s) => s.replace([',', '\n', '\r'], ";"),
    }
}

/// In-memory table; header cells read `name[unit]`.
#[derive(Debug, Clone)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new(columns: &[(&str, &str)]) -> Self {
        CsvTable {
            header: columns.iter().map(|(n, u)| format!("{n}[{u}]")).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width does not match header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(render).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Line-plot script for columns of a CSV written by [`CsvTable`].
pub fn gnuplot_script(csv: &Path, x_col: usize, y_cols: &[usize], log_x: bool, log_y: bool) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead\n");
    if log_x {
        s.push_str("set logscale x\n");
    }
    if log_y {
        s.push_str("set logscale y\n");
    }
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let parts: Vec<String> = y_cols
        .iter()
        .map(|y| format!("'{name}' using {x_col}:{y} with linespoints"))
        .collect();
    let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    s
}

pub fn write_gnuplot(csv: &Path, x_col: usize, y_cols: &[usize], log_x: bool, log_y: bool) -> Result<PathBuf> {
    let path = csv.with_extension("gp");
    write_atomic(&path, gnuplot_script(csv, x_col, y_cols, log_x, log_y).as_bytes())?;
    Ok(path)
}
