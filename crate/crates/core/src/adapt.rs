//! The adaptive loop: solve → threshold → prune → cluster → refine, until
//! the mesh stops changing; then one peak per cluster.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::AutoKernel;
use crate::mesh::{Mesh, RefineOptions};
use crate::recovery::{recover, ClusterData, RecoveredPeak, RecoveryOptions};
use crate::solver::{solve_hal_with, solve_lasso, DataTerm, Gram, SolverOptions, SparseSolution, HAL_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SolverKind {
    #[default]
    Lasso,
    Hal {
        rounds: usize,
        #[serde(default = "default_hal_epsilon")]
        epsilon: f64,
    },
}

fn default_hal_epsilon() -> f64 {
    HAL_EPSILON
}

impl SolverKind {
    pub fn solve(&self, gram: &Gram, lambda: f64, opts: &SolverOptions, warm: Option<&[f64]>) -> Result<SparseSolution> {
        match *self {
            SolverKind::Lasso => solve_lasso(gram, lambda, opts, warm),
            SolverKind::Hal { rounds, epsilon } => solve_hal_with(gram, lambda, rounds, epsilon, opts, warm),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    /// `λ = fraction·λ_max` on every mesh.
    #[default]
    Recompute,
    /// `λ_max` taken from the initial mesh.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "snake_case")]
pub struct AdaptConfig {
    pub lambda_fraction: f64,
    pub h_min: f64,
    pub active_threshold_fraction: f64,
    pub max_iterations: usize,
    pub solver: SolverKind,
    pub solver_options: SolverOptions,
    pub lambda_mode: LambdaMode,
    /// Overrides the `h_min`-derived discard threshold.
    pub min_measure: Option<f64>,
    pub recovery: RecoveryOptions,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lambda_fraction: 0.1,
            h_min: 0.0,
            active_threshold_fraction: 0.005,
            max_iterations: 50,
            solver: SolverKind::Lasso,
            solver_options: SolverOptions::default(),
            lambda_mode: LambdaMode::Recompute,
            min_measure: None,
            recovery: RecoveryOptions::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_fraction > 0.0 && self.lambda_fraction < 1.0) {
            return Err(Error::Config(format!("lambda_fraction must lie in (0, 1), got {}", self.lambda_fraction)));
        }
        if !(self.h_min > 0.0) {
            return Err(Error::Config(format!("h_min must be positive, got {}", self.h_min)));
        }
        if !(0.0..1.0).contains(&self.active_threshold_fraction) {
            return Err(Error::Config("active_threshold_fraction must lie in [0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    fn refine_options(&self, dim: usize) -> RefineOptions {
        let mut opts = RefineOptions::new(dim, self.h_min);
        if let Some(m) = self.min_measure {
            opts.min_measure = m;
        }
        opts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IterationRecord {
    pub generation: usize,
    pub mesh: String,
    pub solution: String,
    pub lambda: f64,
    pub node_count: usize,
    pub element_count: usize,
    pub active_node_count: usize,
    pub cluster_count: usize,
    pub inserted_node_count: usize,
    pub removed_element_count: usize,
    /// Length or area of the mesh that was solved on.
    pub measure: f64,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdaptTrace {
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
    /// Clusters split by coefficient sign before recovery.
    pub sign_split_clusters: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AdaptResult {
    pub peaks: Vec<RecoveredPeak>,
    pub trace: AdaptTrace,
    pub mesh: Mesh,
    pub solution: SparseSolution,
}

/// `{k : |c_k| > fraction·max|c|}`; empty for `c ≡ 0`.
pub fn active_set(solution: &SparseSolution, fraction: f64) -> Vec<usize> {
    let max = solution.max_abs();
    if max == 0.0 {
        return Vec::new();
    }
    let thr = fraction * max;
    (0..solution.coefficients.len()).filter(|&k| solution.coefficients[k].abs() > thr).collect()
}

#[derive(Debug, Clone, Default)]
pub struct ClusterRecovery {
    pub peaks: Vec<RecoveredPeak>,
    pub sign_split_clusters: Vec<usize>,
}

/// One peak per connected cluster of active nodes; clusters holding both
/// signs are split by sign first.
pub fn recover_clusters(mesh: &Mesh, solution: &SparseSolution, auto: &AutoKernel, threshold_fraction: f64, opts: RecoveryOptions) -> Result<ClusterRecovery> {
    let active = active_set(solution, threshold_fraction);
    let pruned = mesh.prune(&active);
    let mut old_of_new = vec![0; pruned.mesh.num_nodes()];
    for (old, new) in pruned.node_map.iter().enumerate() {
        if let Some(n) = new {
            old_of_new[*n] = old;
        }
    }
    let mut is_active = vec![false; mesh.num_nodes()];
    active.iter().for_each(|&k| is_active[k] = true);
    let mut taken = vec![false; mesh.num_nodes()];
    let mut out = ClusterRecovery::default();
    let d = mesh.dim();
    for (ci, cluster) in pruned.mesh.clusters().iter().enumerate() {
        let members: Vec<usize> = cluster
            .nodes
            .iter()
            .map(|&n| old_of_new[n])
            .filter(|&k| is_active[k] && !std::mem::replace(&mut taken[k], true))
            .collect();
        if members.is_empty() {
            continue;
        }
        let pos: Vec<usize> = members.iter().copied().filter(|&k| solution.coefficients[k] > 0.0).collect();
        let neg: Vec<usize> = members.iter().copied().filter(|&k| solution.coefficients[k] < 0.0).collect();
        if !pos.is_empty() && !neg.is_empty() {
            out.sign_split_clusters.push(ci);
        }
        for group in [pos, neg] {
            if group.is_empty() {
                continue;
            }
            let data = ClusterData::new(
                d,
                group.iter().flat_map(|&k| mesh.node(k).to_vec()).collect(),
                group.iter().map(|&k| solution.coefficients[k]).collect(),
                group.iter().map(|&k| solution.weights[k]).collect(),
            )?;
            let id = out.peaks.len();
            out.peaks.push(recover(&data, auto, id, opts)?);
        }
    }
    Ok(out)
}

pub fn run_adaptive(data: &DataTerm, initial: &Mesh, cfg: &AdaptConfig) -> Result<AdaptResult> {
    run_adaptive_with(data, initial, cfg, |_, _, _| Ok(()))
}

/// As [`run_adaptive`], calling `observe` after every solve.
pub fn run_adaptive_with<F>(data: &DataTerm, initial: &Mesh, cfg: &AdaptConfig, mut observe: F) -> Result<AdaptResult>
where
    F: FnMut(&IterationRecord, &Mesh, &SparseSolution) -> Result<()>,
{
    cfg.validate()?;
    if initial.is_empty() {
        return Err(Error::invalid("initial mesh is empty"));
    }
    let refine_opts = cfg.refine_options(initial.dim());
    let mut mesh = initial.clone().with_generation(0);
    let mut warm: Option<Vec<f64>> = None;
    let mut frozen_max = None;
    let mut records = Vec::new();
    let mut converged = false;
    let mut last: Option<(Mesh, SparseSolution)> = None;

    for m in 0..cfg.max_iterations {
        let ctx = |e: Error| Error::Iteration {
            context: format!("adaptive iteration {m}"),
            source: Box::new(e),
        };
        let gram = data.gram(&mesh).map_err(ctx)?;
        let lmax = match cfg.lambda_mode {
            LambdaMode::Recompute => gram.lambda_max(),
            LambdaMode::Frozen => *frozen_max.get_or_insert(gram.lambda_max()),
        };
        let lambda = cfg.lambda_fraction * lmax;
        if !(lambda > 0.0) {
            return Err(ctx(Error::invalid("λ_max vanished on the current mesh")));
        }
        let sol = cfg
            .solver
            .solve(&gram, lambda, &cfg.solver_options, warm.as_deref())
            .map_err(ctx)?
            .with_generation(m);
        let active = active_set(&sol, cfg.active_threshold_fraction);
        let pruned = mesh.prune(&active);
        let (clusters, refined) = if pruned.mesh.is_empty() {
            (Vec::new(), None)
        } else {
            let clusters = pruned.mesh.clusters();
            let refined = pruned.mesh.refine(&clusters, refine_opts).map_err(ctx)?;
            (clusters, Some(refined))
        };
        let inserted = refined.as_ref().map_or(0, |r| r.inserted);
        let record = IterationRecord {
            generation: m,
            mesh: format!("iter_{m}/mesh.json"),
            solution: format!("iter_{m}/solution.csv"),
            lambda,
            node_count: mesh.num_nodes(),
            element_count: mesh.num_elements(),
            active_node_count: active.len(),
            cluster_count: clusters.len(),
            inserted_node_count: inserted,
            removed_element_count: pruned.removed_elements,
            measure: mesh.total_measure(),
            solver_iterations: sol.iterations,
        };
        log::info!(
            "iteration {m}: {} nodes, {} active, {} clusters, {} inserted, {} elements removed",
            record.node_count,
            record.active_node_count,
            record.cluster_count,
            record.inserted_node_count,
            record.removed_element_count
        );
        observe(&record, &mesh, &sol)?;
        records.push(record);

        let Some(refined) = refined else {
            last = Some((mesh, sol));
            converged = true;
            break;
        };
        if inserted == 0 && pruned.removed_elements == 0 {
            last = Some((mesh, sol));
            converged = true;
            break;
        }
        let mut next_warm = vec![0.0; refined.mesh.num_nodes()];
        for (old, new) in pruned.node_map.iter().enumerate() {
            if let Some(n) = new {
                next_warm[*n] = sol.coefficients[old];
            }
        }
        warm = Some(next_warm);
        last = Some((mesh, sol));
        mesh = refined.mesh.with_generation(m + 1);
    }

    let (mesh, solution) = last.expect("at least one iteration ran");
    if !converged {
        log::warn!("adaptive loop stopped at max_iterations = {}", cfg.max_iterations);
    }
    let rec = recover_clusters(&mesh, &solution, &data.recovery_kernel(), cfg.active_threshold_fraction, cfg.recovery)?;
    Ok(AdaptResult {
        peaks: rec.peaks,
        trace: AdaptTrace {
            converged,
            iterations: records,
            sign_split_clusters: rec.sign_split_clusters,
        },
        mesh,
        solution,
    })
}
