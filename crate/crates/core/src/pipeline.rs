//! The five pipeline commands. Each reads its inputs from and writes its
//! outputs to the run directory `cfg.out`, and leaves a JSON manifest with the
//! effective configuration and SHA-256 checksums of everything it wrote.
//!
//! ```text
//! <out>/dataset.csv
//! <out>/weights/base.json, weights/member_NN.json
//! <out>/warm_start_loss.csv, loss_history.csv
//! <out>/sim/<policy>.csv
//! <out>/surfaces/<quantity>_memberNN.csv
//! <out>/manifests/<command>.json
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SystemKind};
use crate::control::{simulate, Ensemble, Policy};
use crate::dataset::GridDataset;
use crate::error::{Error, Result};
use crate::evaluation::{
    hamiltonian_surface, interior_mean_sq_residual, mse_surfaces, reconstruct_surfaces, relative_rmse,
    SurfaceGrid,
};
use crate::system::Dierks;
use crate::training::{train_ensemble, train_warm_start};
use crate::value_net::{load_weights, save_weights, NetworkParams};

pub const DATASET_FILE: &str = "dataset.csv";
pub const BASE_WEIGHTS_FILE: &str = "weights/base.json";
pub const WARM_START_LOSS_FILE: &str = "warm_start_loss.csv";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";

pub fn member_weights_file(member: usize) -> String {
    format!("weights/member_{member:02}.json")
}

pub fn sim_file(policy: Policy) -> String {
    format!("sim/{policy}.csv")
}

pub fn surface_file(quantity: &str, member: usize) -> String {
    format!("surfaces/{quantity}_member{member:02}.csv")
}

pub fn manifest_file(name: &str) -> String {
    format!("manifests/{name}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub wall_time_s: f64,
    pub details: serde_json::Value,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn output(&self, path: &str) -> Option<&FileEntry> {
        self.outputs.iter().find(|f| f.path == path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

struct Run<'a> {
    cfg: &'a RunConfig,
    command: String,
    started: Instant,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RunConfig, command: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        Ok(Self {
            cfg,
            command: command.into(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.cfg.out.join(rel)
    }

    /// Path for a new output, with its parent directory created.
    fn out_path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(p)
    }

    fn entry(&self, rel: &str) -> Result<FileEntry> {
        let p = self.path(rel);
        let bytes = std::fs::metadata(&p).map_err(|e| Error::io(&p, e))?.len();
        Ok(FileEntry {
            path: rel.to_string(),
            sha256: sha256_file(&p)?,
            bytes,
        })
    }

    fn input(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(Error::MissingInput(p));
        }
        let e = self.entry(rel)?;
        self.inputs.push(e);
        Ok(p)
    }

    fn output(&mut self, rel: &str) -> Result<()> {
        let e = self.entry(rel)?;
        self.outputs.push(e);
        Ok(())
    }

    fn finish(self, details: serde_json::Value) -> Result<Manifest> {
        let manifest = Manifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: self.cfg.seed,
            config: self.cfg.clone(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            details,
        };
        let rel = manifest_file(&manifest.command);
        let p = self.cfg.out.join(&rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    }
}

fn system(cfg: &RunConfig) -> Dierks {
    match cfg.system {
        SystemKind::Dierks => Dierks,
    }
}

/// Generates the labelled mesh.
pub fn gen_data(cfg: &RunConfig) -> Result<Manifest> {
    let mut run = Run::new(cfg, "gen-data")?;
    let ds = GridDataset::generate(&system(cfg), &cfg.domain)?;
    ds.write_csv(&run.out_path(DATASET_FILE)?)?;
    run.output(DATASET_FILE)?;
    run.finish(json!({
        "domain": cfg.domain,
        "rows": ds.len(),
        "boundary_rows": ds.boundary_count(),
    }))
}

/// Warm-starts the base network on the mesh labels.
pub fn warm_start(cfg: &RunConfig) -> Result<Manifest> {
    let mut run = Run::new(cfg, "warm-start")?;
    let ds = GridDataset::read_csv(&run.input(DATASET_FILE)?)?;
    let tc = cfg.warm_start_config();
    let res = train_warm_start(&ds, &tc)?;

    save_weights(&run.out_path(BASE_WEIGHTS_FILE)?, &res.params, Some(tc.seed))?;
    run.output(BASE_WEIGHTS_FILE)?;

    let path = run.out_path(WARM_START_LOSS_FILE)?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["epoch", "loss", "lr"])?;
    for (e, (l, lr)) in res.history.iter().zip(&res.lr_history).enumerate() {
        w.write_record([e.to_string(), l.to_string(), lr.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    drop(w);
    run.output(WARM_START_LOSS_FILE)?;

    let rel = relative_rmse(&res.params, &system(cfg), &cfg.eval_domain())?;
    run.finish(json!({
        "epochs_run": res.history.len(),
        "final_loss": res.history.last(),
        "loss_history": res.history,
        "relative_rmse": rel,
    }))
}

/// Refines `ensemble.size` copies of the base network against the HJB loss.
pub fn train_ensemble_cmd(cfg: &RunConfig) -> Result<Manifest> {
    let mut run = Run::new(cfg, "train-ensemble")?;
    let ds = GridDataset::read_csv(&run.input(DATASET_FILE)?)?;
    let (base, _) = load_weights(&run.input(BASE_WEIGHTS_FILE)?)?;
    let tc = cfg.hjb_config();
    let sys = system(cfg);
    let ens = train_ensemble(&ds, &sys, &tc, cfg.ensemble.size, &base)?;

    let mut members = Vec::new();
    for m in &ens.members {
        match &m.outcome {
            Ok(r) => {
                let rel = member_weights_file(m.index);
                save_weights(&run.out_path(&rel)?, &r.params, Some(m.seed))?;
                run.output(&rel)?;
                let last = r.history.last();
                members.push(json!({
                    "index": m.index,
                    "seed": m.seed,
                    "status": "ok",
                    "weights": rel,
                    "final_boundary_loss": last.map(|c| c.boundary),
                    "final_hjb_loss": last.map(|c| c.residual),
                    "final_total": last.map(|c| c.total),
                }));
            }
            Err(e) => members.push(json!({
                "index": m.index,
                "seed": m.seed,
                "status": "failed",
                "error": e,
            })),
        }
    }

    let path = run.out_path(LOSS_HISTORY_FILE)?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["epoch", "member", "boundary_loss", "hjb_loss", "total"])?;
    for (j, r) in ens.trained() {
        for (e, c) in r.history.iter().enumerate() {
            w.write_record([
                e.to_string(),
                j.to_string(),
                c.boundary.to_string(),
                c.residual.to_string(),
                c.total.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    drop(w);
    run.output(LOSS_HISTORY_FILE)?;

    let failures: Vec<usize> = ens.failures().map(|(j, _)| j).collect();
    run.finish(json!({
        "members": members,
        "failures": failures,
        "ensemble_loss": ens.ensemble_loss,
    }))
}

/// Indices of the member weight files present in the run directory.
pub fn member_indices(out: &Path) -> Result<Vec<usize>> {
    let dir = out.join("weights");
    let mut idx = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&dir) {
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(j) = name
                .strip_prefix("member_")
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse().ok())
            {
                idx.push(j);
            }
        }
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Closed-loop simulation with `cfg.sim.policy`.
pub fn simulate_cmd(cfg: &RunConfig) -> Result<Manifest> {
    let policy = cfg.sim.policy;
    let mut run = Run::new(cfg, format!("simulate-{policy}"))?;
    let sys = system(cfg);
    let ensemble = if policy.is_learned() {
        let idx = member_indices(&cfg.out)?;
        if idx.is_empty() {
            return Err(Error::MissingInput(cfg.out.join(member_weights_file(0))));
        }
        let mut members = Vec::with_capacity(idx.len());
        for j in idx {
            members.push(load_weights(&run.input(&member_weights_file(j))?)?.0);
        }
        Some(Ensemble::new(members)?)
    } else {
        None
    };
    let sc = cfg.sim_config();
    let sim = simulate(ensemble.as_ref(), &sys, &sc)?;
    let rel = sim_file(policy);
    sim.write_csv(&run.out_path(&rel)?)?;
    run.output(&rel)?;

    let diverged: Vec<usize> = (0..sim.members()).filter(|&j| sim.is_diverged(j)).collect();
    run.finish(json!({
        "policy": policy,
        "members": sim.members(),
        "steps": sim.times.len().saturating_sub(1),
        "diverged": diverged,
        "final_states": sim.final_states(),
    }))
}

/// Exports every evaluation surface for `cfg.eval.member`.
pub fn evaluate_cmd(cfg: &RunConfig) -> Result<Manifest> {
    let member = cfg.eval.member;
    let mut run = Run::new(cfg, format!("evaluate-member{member:02}"))?;
    let (net, _): (NetworkParams, _) = load_weights(&run.input(&member_weights_file(member))?)?;
    let sys = system(cfg);
    let domain = cfg.eval_domain();

    let h = hamiltonian_surface(&net, &sys, &domain)?;
    let mean_abs_h = h.values().map(f64::abs).sum::<f64>() / (domain.resolution * domain.resolution) as f64;
    let mut surfaces: Vec<SurfaceGrid> = mse_surfaces(&net, &sys, &domain)?.into();
    surfaces.extend(reconstruct_surfaces(&net, &sys, &domain)?);
    surfaces.push(h);
    for s in &surfaces {
        let rel = surface_file(&s.quantity, member);
        s.write_csv(&run.out_path(&rel)?)?;
        run.output(&rel)?;
    }
    run.finish(json!({
        "member": member,
        "resolution": domain.resolution,
        "relative_rmse": relative_rmse(&net, &sys, &domain)?,
        "interior_mean_sq_residual": interior_mean_sq_residual(&net, &sys, &domain)?,
        "mean_abs_hamiltonian": mean_abs_h,
    }))
}

/// Writes a human-readable one-line summary of a manifest.
pub fn summarize(m: &Manifest, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "{}: {} output file(s) in {:.2}s (seed {})",
        m.command,
        m.outputs.len(),
        m.wall_time_s,
        m.master_seed
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(out: &Path) -> RunConfig {
        let mut c = RunConfig::from_toml_str(
            "domain.resolution = 12\nwarm_start.epochs = 2\nhjb.epochs = 2\nhjb.batch_size = 16\nensemble.size = 3\neval.resolution = 9\nsim.tf = 0.5\n",
        )
        .unwrap();
        c.out = out.to_path_buf();
        c
    }

    #[test]
    fn file_names() {
        assert_eq!(member_weights_file(3), "weights/member_03.json");
        assert_eq!(sim_file(Policy::MeanInclusive), "sim/mean_inclusive.csv");
        assert_eq!(surface_file("u_hat", 0), "surfaces/u_hat_member00.csv");
    }

    #[test]
    fn commands_compose_and_record_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let m = gen_data(&cfg).unwrap();
        assert_eq!(m.details["rows"], 144);
        assert_eq!(
            m.output(DATASET_FILE).unwrap().sha256,
            sha256_file(&dir.path().join(DATASET_FILE)).unwrap()
        );
        warm_start(&cfg).unwrap();
        let t = train_ensemble_cmd(&cfg).unwrap();
        assert_eq!(t.details["members"].as_array().unwrap().len(), 3);
        assert_eq!(member_indices(dir.path()).unwrap(), vec![0, 1, 2]);
        let s = simulate_cmd(&cfg).unwrap();
        assert_eq!(s.inputs.len(), 3);
        let e = evaluate_cmd(&cfg).unwrap();
        assert_eq!(e.outputs.len(), 10);
        let replay = RunConfig::load(&dir.path().join(manifest_file("evaluate-member00"))).unwrap();
        assert_eq!(replay, cfg);
    }

    #[test]
    fn missing_inputs_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        assert!(matches!(warm_start(&cfg), Err(Error::MissingInput(p)) if p.ends_with(DATASET_FILE)));
        assert!(matches!(simulate_cmd(&cfg), Err(Error::MissingInput(_))));
        assert!(matches!(evaluate_cmd(&cfg), Err(Error::MissingInput(_))));
    }
}
