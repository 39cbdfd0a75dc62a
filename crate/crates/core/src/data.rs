//! Finite weighted datasets of `(x, y)` pairs and their CSV form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{mixture_parts, normalize_weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    dim: usize,
    /// Row-major attributes, `len() * dim` entries.
    xs: Vec<f64>,
    ys: Vec<f64>,
    weights: Vec<f64>,
}

impl DataSet {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::domain("dataset must be nonempty"));
        }
        let dim = xs[0].len();
        if dim == 0 {
            return Err(Error::domain("attribute dimension must be at least 1"));
        }
        if xs.iter().any(|x| x.len() != dim) {
            return Err(Error::contract("attribute vectors have inconsistent dimensions"));
        }
        Self::from_flat(dim, xs.concat(), ys, weights)
    }

    pub fn uniform(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        Self::new(xs, ys, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn from_flat(dim: usize, xs: Vec<f64>, ys: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = ys.len();
        if n == 0 {
            return Err(Error::domain("dataset must be nonempty"));
        }
        if dim == 0 || xs.len() != n * dim || weights.len() != n {
            return Err(Error::contract(format!(
                "inconsistent dataset shapes: {} attributes, {} responses, {} weights, dim {dim}",
                xs.len(),
                n,
                weights.len()
            )));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::domain("dataset contains non-finite values"));
        }
        let weights = normalize_weights(&weights)?;
        Ok(Self { dim, xs, ys, weights })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Point `i` as a joint `(x, y)` vector.
    pub fn joint(&self, i: usize) -> Vec<f64> {
        let mut z = self.x(i).to_vec();
        z.push(self.ys[i]);
        z
    }

    /// `(1 - eps) * self + eps * other`, concatenating supports.
    pub fn mixture(&self, other: &Self, eps: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::contract("cannot mix datasets of different dimension"));
        }
        let (keep0, keep1) = mixture_parts(eps)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut weights = Vec::new();
        if keep0 {
            xs.extend_from_slice(&self.xs);
            ys.extend_from_slice(&self.ys);
            weights.extend(self.weights.iter().map(|w| w * (1.0 - eps)));
        }
        if keep1 {
            xs.extend_from_slice(&other.xs);
            ys.extend_from_slice(&other.ys);
            weights.extend(other.weights.iter().map(|w| w * eps));
        }
        Self::from_flat(self.dim, xs, ys, weights)
    }

    /// CSV with header `x_1,…,x_p,y,weight`; floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x_{k}")).collect();
        header.extend(["y".to_string(), "weight".to_string()]);
        let mut write = |record: Vec<String>| w.write_record(&record).expect("writing to memory");
        write(header);
        for i in 0..self.len() {
            let mut record: Vec<String> = self.x(i).iter().map(|v| fmt_f64(*v)).collect();
            record.push(fmt_f64(self.ys[i]));
            record.push(fmt_f64(self.weights[i]));
            write(record);
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("ascii output")
    }

    /// Parse CSV with columns `x_1..x_p,y` and an optional trailing `weight`
    /// column. Without weights the points are equally weighted.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::domain(format!("dataset header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header == [""] {
            return Err(Error::domain("empty dataset file"));
        }
        let has_weight = header.last().map(String::as_str) == Some("weight");
        let y_col = if has_weight { header.len() - 2 } else { header.len() - 1 };
        if header.get(y_col).map(String::as_str) != Some("y") || y_col == 0 {
            return Err(Error::domain("dataset header must be x_1,...,x_p,y[,weight]"));
        }
        for (k, h) in header[..y_col].iter().enumerate() {
            if *h != format!("x_{}", k + 1) {
                return Err(Error::domain(format!("column {} should be x_{}, found {h}", k + 1, k + 1)));
            }
        }
        let dim = y_col;
        let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::domain(format!("row {}: {e}", row + 1)))?;
            let parsed = record
                .iter()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::domain(format!("row {}: {e}", row + 1)))?;
            xs.extend_from_slice(&parsed[..dim]);
            ys.push(parsed[dim]);
            if has_weight {
                ws.push(parsed[dim + 1]);
            }
        }
        if !has_weight {
            ws = vec![1.0 / ys.len().max(1) as f64; ys.len()];
        }
        Self::from_flat(dim, xs, ys, ws)
    }
}

/// Shortest-round-trip-safe representation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validation() {
        assert!(DataSet::uniform(vec![], vec![]).is_err());
        assert!(DataSet::uniform(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]).is_err());
        assert!(DataSet::new(vec![vec![1.0]], vec![0.0], vec![0.5]).is_err());
        assert!(DataSet::uniform(vec![vec![f64::NAN]], vec![0.0]).is_err());
    }

    #[test]
    fn mixture_weights_sum_to_one() {
        let a = DataSet::uniform((0..200).map(|i| vec![i as f64]).collect(), vec![0.0; 200]).unwrap();
        let b = DataSet::uniform((0..200).map(|i| vec![-(i as f64)]).collect(), vec![1.0; 200]).unwrap();
        for eps in [0.0, 0.01, 0.05, 0.07, 0.1, 1.0] {
            let m = a.mixture(&b, eps).unwrap();
            assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let contaminated: f64 = (0..m.len()).filter(|&i| m.y(i) == 1.0).map(|i| m.weight(i)).sum();
            assert!((contaminated - eps).abs() < 1e-12);
        }
        assert_eq!(a.mixture(&b, 0.0).unwrap().len(), 200);
    }

    #[test]
    fn csv_without_weights() {
        let d = DataSet::from_csv("x_1,x_2,y\n1,2,3\n4,5,6\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.x(1), &[4.0, 5.0]);
        assert_eq!(d.weight(0), 0.5);
        assert!(DataSet::from_csv("a,y\n1,2\n").is_err());
        assert!(DataSet::from_csv("x_1,y\n1\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(vals in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6, 0.1f64..1.0), 1..20)) {
            let total: f64 = vals.iter().map(|v| v.2).sum();
            let d = DataSet::new(
                vals.iter().map(|v| vec![v.0]).collect(),
                vals.iter().map(|v| v.1).collect(),
                vals.iter().map(|v| v.2 / total).collect(),
            ).unwrap();
            prop_assert_eq!(DataSet::from_csv(&d.to_csv()).unwrap(), d);
        }
    }
}
