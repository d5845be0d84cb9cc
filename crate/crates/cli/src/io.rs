//! CSV and sidecar files.
//!
//! Numbers are written in Rust's shortest round-trip form, so reading a file
//! back yields the exact `f64` values that were written. Sidecars are plain
//! `key = value` text and are the only place timestamps appear.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use dbfe_core::numerics::Grid1D;
use dbfe_core::stats::EnsembleStats;

/// Shortest decimal text that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Files written by one run. Unless [`Outputs::commit`] is called, dropping
/// the set deletes them, so failed runs leave no partial results behind.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    prefix: String,
    written: Vec<PathBuf>,
    created_dir: bool,
    committed: bool,
}

impl Outputs {
    pub fn new(dir: impl Into<PathBuf>, prefix: &str) -> Result<Self> {
        let dir = dir.into();
        let created_dir = !dir.exists();
        fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir,
            prefix: prefix.to_string(),
            written: Vec::new(),
            created_dir,
            committed: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{}{name}", self.prefix))
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Keeps the files; returns their paths.
    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }

    /// Writes a CSV with a header row; every record must match its width.
    pub fn write_csv<I, R>(&mut self, name: &str, header: &[String], rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.path(name);
        self.written.push(path.clone());
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }

    /// CSV with one column per named series.
    pub fn write_columns(&mut self, name: &str, columns: &[(&str, &[f64])]) -> Result<PathBuf> {
        let len = columns.first().map_or(0, |c| c.1.len());
        if let Some((n, c)) = columns.iter().find(|c| c.1.len() != len) {
            bail!("column {n} has {} values, expected {len}", c.len());
        }
        let header: Vec<String> = columns.iter().map(|c| c.0.to_string()).collect();
        self.write_csv(name, &header, (0..len).map(|r| columns.iter().map(move |c| fmt_f64(c.1[r]))))
    }

    /// Ensemble layout: the header holds the grid points, then one row per
    /// sample.
    pub fn write_ensemble(&mut self, name: &str, grid: &Grid1D, fields: &[f64]) -> Result<PathBuf> {
        let header: Vec<String> = grid.points().into_iter().map(fmt_f64).collect();
        self.write_csv(name, &header, fields.chunks_exact(grid.nx).map(|r| r.iter().map(|&v| fmt_f64(v))))
    }

    /// Stats layout: `x, mean, var, skew, kurt, lo, hi, l1`; `l1` is empty
    /// without a reference or where the reference vanishes.
    pub fn write_stats(&mut self, name: &str, grid: &Grid1D, stats: &EnsembleStats, l1: Option<&[Option<f64>]>) -> Result<PathBuf> {
        let pct = (stats.level * 100.0).round() as u32;
        let header: Vec<String> = ["x", "mean", "var", "skew", "kurt"]
            .into_iter()
            .map(String::from)
            .chain([format!("lo{pct}"), format!("hi{pct}"), "l1".to_string()])
            .collect();
        let m = &stats.moments;
        let rows = (0..grid.nx).map(|j| {
            let l1 = l1.and_then(|e| e[j]).map(fmt_f64).unwrap_or_default();
            vec![
                fmt_f64(grid.x(j)),
                fmt_f64(m.mean[j]),
                fmt_f64(m.variance[j]),
                fmt_f64(m.skewness[j]),
                fmt_f64(m.kurtosis[j]),
                fmt_f64(stats.conf_lo[j]),
                fmt_f64(stats.conf_hi[j]),
                l1,
            ]
        });
        self.write_csv(name, &header, rows)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        self.written.push(path.clone());
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Writes `<name>.meta` next to a data file, stamped with the wall time.
    pub fn write_sidecar(&mut self, name: &str, entries: &[(&str, String)]) -> Result<PathBuf> {
        let path = self.path(&format!("{name}.meta"));
        self.written.push(path.clone());
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut text = format!("created_unix = {stamp}\n");
        for (k, v) in entries {
            text.push_str(&format!("{k} = {v}\n"));
        }
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            // Only succeeds if nothing else ended up in it.
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// A CSV file read back as a header and numeric rows; empty cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|c| if c.is_empty() { Ok(f64::NAN) } else { c.parse::<f64>() })
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("{}: bad number in row {}", path.display(), k + 1))?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column {name}"))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    /// The header parsed as numbers (ensemble files).
    pub fn numeric_header(&self) -> Result<Vec<f64>> {
        self.header
            .iter()
            .map(|h| h.parse::<f64>().with_context(|| format!("header cell {h:?} is not a number")))
            .collect()
    }
}

pub fn read_sidecar(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("{}: malformed line {line:?}", path.display()))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn float_text_round_trips(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn float_text_is_short() {
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(-1.0), "-1.0");
        assert_eq!(fmt_f64(1e-300), "1e-300");
    }

    #[test]
    fn uncommitted_outputs_are_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let kept;
        {
            let mut out = Outputs::new(&dir, "a_").unwrap();
            kept = out.write_columns("x.csv", &[("x", &[1.0, 2.0])]).unwrap();
            out.write_sidecar("x", &[("n", "2".into())]).unwrap();
            assert!(kept.exists());
        }
        assert!(!kept.exists());
        assert!(!dir.exists());

        let mut out = Outputs::new(&dir, "").unwrap();
        let p = out.write_columns("y.csv", &[("x", &[1.0]), ("y", &[0.5])]).unwrap();
        assert_eq!(out.commit(), vec![p.clone()]);
        assert!(p.exists());
    }

    #[test]
    fn tables_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = Outputs::new(tmp.path(), "").unwrap();
        let grid = Grid1D::new(-1.0, 1.0, 3).unwrap();
        let fields = [0.1, 1.0 / 3.0, -2e-17, 4.0, 5.5, 6.0];
        let p = out.write_ensemble("e.csv", &grid, &fields).unwrap();
        let t = Table::read(&p).unwrap();
        assert_eq!(t.numeric_header().unwrap(), grid.points());
        assert_eq!(t.rows.concat(), fields);
        assert!(out.write_columns("bad.csv", &[("a", &[1.0]), ("b", &[])]).is_err());

        let s = out.write_sidecar("e", &[("seed", "3".into())]).unwrap();
        let meta = read_sidecar(&s).unwrap();
        assert_eq!(meta["seed"], "3");
        assert!(meta.contains_key("created_unix"));
        out.commit();
    }
}
