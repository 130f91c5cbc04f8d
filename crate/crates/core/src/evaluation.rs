//! Grid evaluation of a learned cost-to-go against the analytical solution,
//! and export of the resulting surfaces.

use std::path::Path;

use rayon::prelude::*;

use crate::dataset::GridDataset;
use crate::error::{Error, Result};
use crate::system::{AffineSystem, AnalyticSolution, Domain};
use crate::value_net::CostToGo;
use crate::State;

pub const EVAL_RESOLUTION: usize = 101;

/// Default evaluation grid: 101×101 on [-10, 10]².
pub fn evaluation_domain() -> Domain {
    Domain {
        resolution: EVAL_RESOLUTION,
        ..Domain::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub quantity: String,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// `z[i][j]` is the value at `(x1[i], x2[j])`.
    pub z: Vec<Vec<f64>>,
}

impl SurfaceGrid {
    fn tabulate<F>(quantity: &str, domain: &Domain, f: F) -> Result<Self>
    where
        F: Fn(&State) -> f64 + Sync,
    {
        domain.validate()?;
        let x1 = domain.axis(0);
        let x2 = domain.axis(1);
        let z = x1
            .par_iter()
            .map(|&a| x2.iter().map(|&b| f(&[a, b])).collect())
            .collect();
        Ok(Self {
            quantity: quantity.to_string(),
            x1,
            x2,
            z,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.z[i][j]
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.z.iter().flatten().copied()
    }

    /// Writes `x1,x2,<quantity>` rows, `x1` outer.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record(["x1", "x2", self.quantity.as_str()])?;
        for (i, a) in self.x1.iter().enumerate() {
            for (j, b) in self.x2.iter().enumerate() {
                w.write_record([a.to_string(), b.to_string(), self.z[i][j].to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn learned<C, S>(net: &C, sys: &S, x: &State) -> (State, f64)
where
    C: CostToGo + ?Sized,
    S: AffineSystem + ?Sized,
{
    let (_, lam) = net.value_and_costate(x);
    (lam, sys.control_from_costate(x, &lam))
}

/// Pointwise squared errors of λ̂1, λ̂2 and û against the analytical solution.
pub fn mse_surfaces<C, S>(net: &C, sys: &S, domain: &Domain) -> Result<[SurfaceGrid; 3]>
where
    C: CostToGo + ?Sized,
    S: AffineSystem + AnalyticSolution + ?Sized,
{
    let err = |x: &State, k: usize| {
        let (lam, u) = learned(net, sys, x);
        let d = match k {
            0 | 1 => lam[k] - sys.analytic_costate(x)[k],
            _ => u - sys.analytic_control(x),
        };
        d * d
    };
    Ok([
        SurfaceGrid::tabulate("mse_lambda1", domain, |x| err(x, 0))?,
        SurfaceGrid::tabulate("mse_lambda2", domain, |x| err(x, 1))?,
        SurfaceGrid::tabulate("mse_u", domain, |x| err(x, 2))?,
    ])
}

/// `H(x, û, λ̂)` with the learned costate and its minimizing control.
pub fn hamiltonian_surface<C, S>(net: &C, sys: &S, domain: &Domain) -> Result<SurfaceGrid>
where
    C: CostToGo + ?Sized,
    S: AffineSystem + ?Sized,
{
    SurfaceGrid::tabulate("hamiltonian", domain, |x| {
        let (lam, u) = learned(net, sys, x);
        sys.hamiltonian(x, u, &lam)
    })
}

/// Learned λ̂1, λ̂2, û surfaces followed by their analytical counterparts.
pub fn reconstruct_surfaces<C, S>(net: &C, sys: &S, domain: &Domain) -> Result<[SurfaceGrid; 6]>
where
    C: CostToGo + ?Sized,
    S: AffineSystem + AnalyticSolution + ?Sized,
{
    Ok([
        SurfaceGrid::tabulate("lambda1_hat", domain, |x| learned(net, sys, x).0[0])?,
        SurfaceGrid::tabulate("lambda2_hat", domain, |x| learned(net, sys, x).0[1])?,
        SurfaceGrid::tabulate("u_hat", domain, |x| learned(net, sys, x).1)?,
        SurfaceGrid::tabulate("lambda1_star", domain, |x| sys.analytic_costate(x)[0])?,
        SurfaceGrid::tabulate("lambda2_star", domain, |x| sys.analytic_costate(x)[1])?,
        SurfaceGrid::tabulate("u_star", domain, |x| sys.analytic_control(x))?,
    ])
}

/// Mean of `r(x)²` over the interior points of `domain`.
pub fn interior_mean_sq_residual<C, S>(net: &C, sys: &S, domain: &Domain) -> Result<f64>
where
    C: CostToGo + ?Sized,
    S: AffineSystem + ?Sized,
{
    domain.validate()?;
    if domain.resolution < 3 {
        return Err(Error::InvalidDomain("no interior points below resolution 3".into()));
    }
    let x1 = domain.axis(0);
    let x2 = domain.axis(1);
    let inner = &x2[1..x2.len() - 1];
    let sum: f64 = x1[1..x1.len() - 1]
        .par_iter()
        .map(|&a| {
            inner
                .iter()
                .map(|&b| {
                    let x = [a, b];
                    let (_, lam) = net.value_and_costate(&x);
                    sys.hjb_residual(&x, &lam).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sum / (x1.len() - 2).pow(2) as f64)
}

/// Mean squared value error over the boundary records of a dataset.
pub fn boundary_mse<C: CostToGo + ?Sized>(net: &C, dataset: &GridDataset) -> Result<f64> {
    let idx = dataset.boundary_indices();
    if idx.is_empty() {
        return Err(Error::EmptySubset("boundary"));
    }
    let sum: f64 = idx
        .iter()
        .map(|&i| {
            let r = &dataset.records[i];
            (net.value_and_costate(&r.state()).0 - r.value).powi(2)
        })
        .sum();
    Ok(sum / idx.len() as f64)
}

/// `RMSE(Ĵ, J*) / RMS(J*)` over every point of `domain`.
pub fn relative_rmse<C, S>(net: &C, sys: &S, domain: &Domain) -> Result<f64>
where
    C: CostToGo + ?Sized,
    S: AnalyticSolution + Sync + ?Sized,
{
    domain.validate()?;
    let x1 = domain.axis(0);
    let x2 = domain.axis(1);
    let (se, ss) = x1
        .par_iter()
        .map(|&a| {
            x2.iter().fold((0.0, 0.0), |(se, ss), &b| {
                let x = [a, b];
                let truth = sys.analytic_value(&x);
                let err = net.value_and_costate(&x).0 - truth;
                (se + err * err, ss + truth * truth)
            })
        })
        .reduce(|| (0.0, 0.0), |p, q| (p.0 + q.0, p.1 + q.1));
    Ok((se / ss).sqrt())
}
