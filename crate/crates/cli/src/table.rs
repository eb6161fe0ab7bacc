//! Result tables and their CSV form.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Column names of the provenance prefix carried by every CSV.
pub const HASH_COLUMN: &str = "config_hash";
pub const SEED_COLUMN: &str = "seed";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn get(&self, row: usize, name: &str) -> Option<&str> {
        self.column(name).map(|c| self.rows[row][c].as_str())
    }

    pub fn get_f64(&self, row: usize, name: &str) -> Option<f64> {
        self.get(row, name).and_then(|v| v.parse().ok())
    }

    /// CSV bytes with the provenance columns prepended to every row.
    pub fn to_csv(&self, config_hash: &str, seed: u64) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec![HASH_COLUMN.to_string(), SEED_COLUMN.to_string()];
        head.extend(self.header.iter().cloned());
        w.write_record(&head)?;
        let seed = seed.to_string();
        for r in &self.rows {
            let mut rec = vec![config_hash.to_string(), seed.clone()];
            rec.extend(r.iter().cloned());
            w.write_record(&rec)?;
        }
        w.into_inner().context("flushing CSV")
    }

    pub fn write_csv(&self, path: &Path, config_hash: &str, seed: u64) -> Result<()> {
        std::fs::write(path, self.to_csv(config_hash, seed)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read_csv(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header.is_empty() {
            bail!("{} has no header row", path.display());
        }
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Table { header, rows })
    }
}

/// Shortest round-tripping decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x".into(), num(0.1)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.write_csv(&path, "abc", 5).unwrap();
        let back = Table::read_csv(&path).unwrap();
        assert_eq!(back.header, vec!["config_hash", "seed", "a", "b"]);
        assert_eq!(back.get_f64(0, "b"), Some(0.1));
        assert_eq!(back.get(0, "seed"), Some("5"));
    }
}
