//! CSV tables and JSON sidecars. Floats use the shortest representation that
//! round-trips, so identical results give identical bytes.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// A table of string cells with a header row.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Real matrix with a leading index column (`index_name`, one row per matrix row).
    pub fn from_real(index_name: &str, index: &[usize], col_prefix: &str, m: &DMatrix<f64>) -> Self {
        let mut t = Self::new(std::iter::once(index_name.to_string()).chain((0..m.ncols()).map(|j| format!("{col_prefix}{j}"))));
        for (r, i) in index.iter().enumerate() {
            t.push(std::iter::once(i.to_string()).chain(m.row(r).iter().map(|v| fmt_f64(*v))).collect());
        }
        t
    }

    /// Complex matrix as paired `_re`/`_im` columns.
    pub fn from_complex(index_name: &str, index: &[usize], col_prefix: &str, m: &DMatrix<C64>) -> Self {
        let header = std::iter::once(index_name.to_string())
            .chain((0..m.ncols()).flat_map(|j| [format!("{col_prefix}{j}_re"), format!("{col_prefix}{j}_im")]));
        let mut t = Self::new(header);
        for (r, i) in index.iter().enumerate() {
            t.push(std::iter::once(i.to_string()).chain(m.row(r).iter().flat_map(|z| [fmt_f64(z.re), fmt_f64(z.im)])).collect());
        }
        t
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let conv = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(&self.header).map_err(conv)?;
        for r in &self.rows {
            w.write_record(r).map_err(conv)?;
        }
        w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    outputs: &'a [String],
}

/// Output directory collecting the files of one command.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root.display().to_string(), e))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        self.write(name, &table.to_csv()?)
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("json: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, command: &str, config: &RunConfig) -> Result<Vec<String>> {
        let outputs = self.written.clone();
        let m = Manifest { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), command, config, outputs: &outputs };
        self.json("manifest.json", &m)?;
        Ok(self.written)
    }
}
