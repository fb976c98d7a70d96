use std::path::Path;

use crate::error::{Error, Result};

/// Observation sequence `y_{1:T}`, stored row-major with `dim_obs` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    dim_obs: usize,
    /// Provenance: synthetic seed or source file.
    pub meta: String,
}

impl Dataset {
    pub fn new(y: Vec<f64>, dim_obs: usize, meta: impl Into<String>) -> Self {
        assert!(dim_obs >= 1, "observations need at least one column");
        assert_eq!(y.len() % dim_obs, 0, "ragged observation buffer");
        Self { y, dim_obs, meta: meta.into() }
    }

    pub fn empty(dim_obs: usize) -> Self {
        Self::new(Vec::new(), dim_obs, "empty")
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.y.len() / self.dim_obs
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim_obs(&self) -> usize {
        self.dim_obs
    }

    /// Observation at zero-based index `t` (i.e. `y_{t+1}`).
    pub fn obs(&self, t: usize) -> &[f64] {
        &self.y[t * self.dim_obs..(t + 1) * self.dim_obs]
    }

    /// First `t` observations as a new dataset.
    pub fn prefix(&self, t: usize) -> Dataset {
        Dataset::new(self.y[..t * self.dim_obs].to_vec(), self.dim_obs, self.meta.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    /// Reads a CSV with header `t,y[,y2...]`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Data { path: path.to_path_buf(), msg };
        let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.len() < 2 || &headers[0] != "t" || &headers[1] != "y" {
            return Err(bad(format!("expected header 't,y[,y2...]', found '{}'", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let dim_obs = headers.len() - 1;
        let mut y = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            for field in record.iter().skip(1) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("row {}: '{field}' is not a number", row + 1)))?;
                if !v.is_finite() {
                    return Err(bad(format!("row {}: non-finite observation", row + 1)));
                }
                y.push(v);
            }
        }
        Ok(Dataset::new(y, dim_obs, path.display().to_string()))
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let mut header = vec!["t".to_string(), "y".to_string()];
        header.extend((2..=self.dim_obs).map(|k| format!("y{k}")));
        let to_err = |e: csv::Error| Error::Data { path: path.to_path_buf(), msg: e.to_string() };
        w.write_record(&header).map_err(to_err)?;
        for t in 0..self.len() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(self.obs(t).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        let ds = Dataset::new(vec![0.1, -2.5, 3.0, 1e-17], 2, "x");
        ds.to_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,y,y2\n1,0.1,-2.5\n"));
        let back = Dataset::from_csv(&path).unwrap();
        assert_eq!(back.values(), ds.values());
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn rejects_bad_header_and_non_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "time,obs\n1,2\n").unwrap();
        assert!(Dataset::from_csv(&p).is_err());
        std::fs::write(&p, "t,y\n1,abc\n").unwrap();
        assert!(Dataset::from_csv(&p).is_err());
        std::fs::write(&p, "t,y\n1,inf\n").unwrap();
        assert!(Dataset::from_csv(&p).is_err());
    }
}
