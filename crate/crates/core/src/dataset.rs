//! Labelled mesh of states used for warm-start and HJB training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{AnalyticSolution, Domain};
use crate::State;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub x1: f64,
    pub x2: f64,
    #[serde(rename = "J_star")]
    pub value: f64,
    #[serde(rename = "lambda1_star")]
    pub lambda1: f64,
    #[serde(rename = "lambda2_star")]
    pub lambda2: f64,
    #[serde(rename = "u_star")]
    pub control: f64,
    pub is_boundary: bool,
}

impl GridRecord {
    pub fn state(&self) -> State {
        [self.x1, self.x2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    pub records: Vec<GridRecord>,
    boundary: Vec<usize>,
}

impl GridDataset {
    pub fn from_records(records: Vec<GridRecord>) -> Self {
        let boundary = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_boundary)
            .map(|(i, _)| i)
            .collect();
        Self { records, boundary }
    }

    /// Uniform mesh over `domain` labelled with the analytical solution.
    /// Rows are ordered with `x1` as the outer index.
    pub fn generate<S: AnalyticSolution>(sys: &S, domain: &Domain) -> Result<Self> {
        domain.validate()?;
        let ax1 = domain.axis(0);
        let ax2 = domain.axis(1);
        let last = domain.resolution - 1;
        let mut records = Vec::with_capacity(ax1.len() * ax2.len());
        for (i, &x1) in ax1.iter().enumerate() {
            for (j, &x2) in ax2.iter().enumerate() {
                let x = [x1, x2];
                let lam = sys.analytic_costate(&x);
                records.push(GridRecord {
                    x1,
                    x2,
                    value: sys.analytic_value(&x),
                    lambda1: lam[0],
                    lambda2: lam[1],
                    control: sys.analytic_control(&x),
                    is_boundary: i == 0 || j == 0 || i == last || j == last,
                });
            }
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Indices of boundary records.
    pub fn boundary_indices(&self) -> &[usize] {
        &self.boundary
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<GridRecord>, _>>()?;
        Ok(Self::from_records(records))
    }
}
