//! Solve, convergence and lower-bound studies.

use std::fs;
use std::path::{Path, PathBuf};

use gpehho_core::fespace::{cell_dim, face_dim, PiecewisePolynomial};
use gpehho_core::gpe::{auto_sigma, certify, DiscreteProblem, GroundState, LowerBoundCertificate, Mode, Potential};
use gpehho_core::hho::reconstruct;
use gpehho_core::mesh::{compute_geometry, square_side_h, TriMesh};
use gpehho_core::solver::{gradient_flow, FlowTrace};
use gpehho_core::Error as CoreError;
use serde::Serialize;

use crate::config::{hierarchy, EnergyUpper, ExperimentConfig, SigmaSpec};
use crate::error::{CliError, Result};
use crate::report::{eoc, float, opt_float, write_json, Csv};
use crate::svg::{emit_svg_loglog, Series};
use crate::transfer::{ancestor_map, difference_norms, Field};

/// Spatial dimension entering the trace constant.
const DIM: usize = 2;

/// Per-invocation switches that are not part of the experiment definition.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub dump_mesh: bool,
}

/// One converged discrete ground state.
pub struct LevelSolution {
    pub level: usize,
    pub h: f64,
    pub sigma: f64,
    pub dp: DiscreteProblem,
    pub ground: GroundState,
    pub trace: FlowTrace,
    pub quartic: f64,
}

impl LevelSolution {
    pub fn dofs(&self) -> usize {
        self.dp.num_dofs()
    }

    /// `|lambda - 2E - kappa/2 Q| / |lambda|` for the mode's quartic term.
    pub fn identity_defect(&self) -> f64 {
        let k = self.dp.problem.kappa;
        (self.ground.lambda - 2.0 * self.ground.energy - 0.5 * k * self.quartic).abs() / self.ground.lambda.abs()
    }
}

/// Solves one level; on stagnation the trace is written to `trace_path`
/// before the error is returned.
pub fn solve_level(
    cfg: &ExperimentConfig,
    potential: &Potential,
    mesh: TriMesh,
    mode: Mode,
    k: usize,
    sigma: f64,
    trace_path: &Path,
) -> Result<LevelSolution> {
    let level = mesh.level;
    let h = square_side_h(&mesh)?;
    let dp = DiscreteProblem::new(cfg.problem(potential, mode, k, sigma), mesh)?;
    match gradient_flow(&dp, &cfg.solver, None) {
        Ok((ground, trace)) => {
            let quartic = dp.quartic(&ground.state);
            Ok(LevelSolution { level, h, sigma, dp, ground, trace, quartic })
        }
        Err(CoreError::Stagnation { iterations, trace }) => {
            trace.write_csv(trace_path)?;
            Err(CoreError::Stagnation { iterations, trace }.into())
        }
        Err(e) => Err(e.into()),
    }
}

/// Standard-mode solve with degree `k_ref` on the level `extra` steps beyond
/// `m_max`.
pub fn reference_solution(cfg: &ExperimentConfig, potential: &Potential, meshes: &[TriMesh], out: &Path) -> Result<LevelSolution> {
    let level = cfg.reference_level();
    solve_level(
        cfg,
        potential,
        meshes[level].clone(),
        Mode::Standard,
        cfg.k_ref(),
        cfg.reference_sigma(),
        &out.join("trace_reference.csv"),
    )
}

fn upper_energy(cfg: &ExperimentConfig, reference: Option<&LevelSolution>) -> Option<f64> {
    match cfg.e_upper {
        EnergyUpper::Analytic { value } => Some(value),
        EnergyUpper::ReferenceRun { margin } => reference.map(|r| r.ground.energy + margin * r.ground.energy.abs()),
    }
}

fn needs_reference_for_sigma(cfg: &ExperimentConfig) -> bool {
    cfg.sigma.is_auto() && matches!(cfg.e_upper, EnergyUpper::ReferenceRun { .. })
}

/// Sigma at mesh size `h`, either fixed or from the admissibility condition.
fn level_sigma(cfg: &ExperimentConfig, h: f64, e_upper: Option<f64>) -> Result<f64> {
    match &cfg.sigma {
        SigmaSpec::Value(v) => Ok(*v),
        SigmaSpec::Keyword(_) => {
            let e = e_upper.ok_or_else(|| CliError::Config("automatic sigma needs an energy upper bound".into()))?;
            Ok(auto_sigma(h, e, DIM, cfg.safety)?)
        }
    }
}

fn prepare(cfg: &ExperimentConfig, opts: &RunOptions, max_level: usize) -> Result<(Potential, Vec<TriMesh>)> {
    let potential = cfg.build_potential()?;
    fs::create_dir_all(&opts.out)?;
    let meshes = hierarchy(cfg.domain, max_level)?;
    if opts.dump_mesh {
        dump_mesh(&meshes[cfg.levels[1]], &opts.out)?;
    }
    Ok((potential, meshes))
}

/// Writes `mesh_nodes.txt` ("x y" per vertex) and `mesh_cells.txt`
/// ("i j k" per cell, 0-based).
pub fn dump_mesh(mesh: &TriMesh, out: &Path) -> Result<()> {
    mesh.write_nodes(fs::File::create(out.join("mesh_nodes.txt"))?)?;
    mesh.write_elements(fs::File::create(out.join("mesh_cells.txt"))?)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    #[serde(flatten)]
    pub certificate: LowerBoundCertificate,
    /// Slack with the largest cell diameter in place of the square side.
    pub slack_diameter: f64,
}

fn certificate_report(sol: &LevelSolution) -> Option<CertificateReport> {
    sol.ground.certificate.map(|certificate| CertificateReport {
        certificate,
        slack_diameter: certify(sol.dp.mesh_size(), sol.sigma, sol.ground.energy, DIM).slack,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub level: usize,
    pub h: f64,
    pub dofs: usize,
    pub mode: Mode,
    pub k: usize,
    pub kappa: f64,
    pub potential: String,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_upper: Option<f64>,
    #[serde(rename = "E")]
    pub energy: f64,
    pub lambda: f64,
    pub quartic: f64,
    pub iterations: usize,
    pub residual: f64,
    pub energy_change: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateReport>,
}

/// Ground state on the finest configured level; writes `summary.json` and
/// `trace.csv`.
pub fn run_solve(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SolveSummary> {
    let level = cfg.levels[1];
    let top = if needs_reference_for_sigma(cfg) { cfg.reference_level() } else { level };
    let (potential, meshes) = prepare(cfg, opts, top)?;
    let reference = if needs_reference_for_sigma(cfg) {
        Some(reference_solution(cfg, &potential, &meshes, &opts.out)?)
    } else {
        None
    };
    let e_upper = cfg.sigma.is_auto().then(|| upper_energy(cfg, reference.as_ref())).flatten();
    let sigma = level_sigma(cfg, square_side_h(&meshes[level])?, e_upper)?;
    let trace_path = opts.out.join("trace.csv");
    let sol = solve_level(cfg, &potential, meshes[level].clone(), cfg.mode, cfg.k, sigma, &trace_path)?;
    sol.trace.write_csv(&trace_path)?;
    let summary = SolveSummary {
        level,
        h: sol.h,
        dofs: sol.dofs(),
        mode: cfg.mode,
        k: cfg.k,
        kappa: cfg.kappa,
        potential: potential.kind().to_string(),
        sigma,
        e_upper,
        energy: sol.ground.energy,
        lambda: sol.ground.lambda,
        quartic: sol.quartic,
        iterations: sol.ground.iterations,
        residual: sol.ground.residual,
        energy_change: sol.ground.energy_change,
        certificate: certificate_report(&sol),
    };
    write_json(&opts.out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub dofs: usize,
    pub sigma: f64,
    pub energy: f64,
    pub lambda: f64,
    pub quartic: f64,
    pub err_l2_bulk: f64,
    pub err_l2_rec: f64,
    pub err_h1_rec: f64,
    pub err_e: f64,
    pub err_lambda: f64,
    pub eoc_l2_bulk: Option<f64>,
    pub eoc_l2_rec: Option<f64>,
    pub eoc_h1_rec: Option<f64>,
    pub eoc_e: Option<f64>,
    pub eoc_lambda: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl ConvergenceRow {
    fn errors(&self) -> [f64; 5] {
        [self.err_l2_bulk, self.err_l2_rec, self.err_h1_rec, self.err_e, self.err_lambda]
    }

    fn set_eocs(&mut self, prev: &ConvergenceRow) {
        let e: Vec<Option<f64>> =
            prev.errors().iter().zip(self.errors()).map(|(&a, b)| eoc(prev.h, a, self.h, b)).collect();
        [self.eoc_l2_bulk, self.eoc_l2_rec, self.eoc_h1_rec, self.eoc_e, self.eoc_lambda] = [e[0], e[1], e[2], e[3], e[4]];
    }
}

pub const CONVERGENCE_HEADER: [&str; 19] = [
    "level", "h", "dofs", "sigma", "energy", "lambda", "quartic", "err_L2_bulk", "err_L2_rec", "err_H1_rec", "err_E",
    "err_lambda", "eoc_L2_bulk", "eoc_L2_rec", "eoc_H1_rec", "eoc_E", "eoc_lambda", "iterations", "residual",
];

pub fn convergence_csv(rows: &[ConvergenceRow]) -> Csv {
    let mut csv = Csv::new(&CONVERGENCE_HEADER);
    for r in rows {
        let mut cells = vec![r.level.to_string(), float(r.h), r.dofs.to_string()];
        cells.extend([r.sigma, r.energy, r.lambda, r.quartic].map(float));
        cells.extend(r.errors().map(float));
        cells.extend([r.eoc_l2_bulk, r.eoc_l2_rec, r.eoc_h1_rec, r.eoc_e, r.eoc_lambda].map(opt_float));
        cells.extend([r.iterations.to_string(), float(r.residual)]);
        csv.row(cells);
    }
    csv
}

/// Errors of a coarse solution against the reference, by exact transfer of
/// the coarse polynomials to the reference mesh.
pub fn error_row(sol: &LevelSolution, reference: &LevelSolution, reference_rec: &PiecewisePolynomial, meshes: &[TriMesh]) -> Result<ConvergenceRow> {
    let space = &sol.dp.space;
    let rec = reconstruct(space, &sol.ground.state)?;
    let bulk = PiecewisePolynomial { degree: space.k + 1, coeffs: sol.ground.state.cell_block().to_vec() };
    let map = ancestor_map(meshes, sol.level, reference.level)?;
    let fine = Field { mesh: &reference.dp.space.mesh, poly: reference_rec };
    let nb = difference_norms(Field { mesh: &space.mesh, poly: &bulk }, fine, &map)?;
    let nr = difference_norms(Field { mesh: &space.mesh, poly: &rec }, fine, &map)?;
    Ok(ConvergenceRow {
        level: sol.level,
        h: sol.h,
        dofs: sol.dofs(),
        sigma: sol.sigma,
        energy: sol.ground.energy,
        lambda: sol.ground.lambda,
        quartic: sol.quartic,
        err_l2_bulk: nb.l2,
        err_l2_rec: nr.l2,
        err_h1_rec: nr.h1,
        err_e: (sol.ground.energy - reference.ground.energy).abs(),
        err_lambda: (sol.ground.lambda - reference.ground.lambda).abs(),
        eoc_l2_bulk: None,
        eoc_l2_rec: None,
        eoc_h1_rec: None,
        eoc_e: None,
        eoc_lambda: None,
        iterations: sol.ground.iterations,
        residual: sol.ground.residual,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ReferenceSummary {
    pub level: usize,
    pub h: f64,
    pub k_ref: usize,
    pub sigma: f64,
    pub dofs: usize,
    #[serde(rename = "E")]
    pub energy: f64,
    pub lambda: f64,
    pub quartic: f64,
    pub iterations: usize,
    pub residual: f64,
    pub note: &'static str,
}

const REFERENCE_NOTE: &str = "reference is a standard-mode HHO solve of degree k_ref on a finer nested mesh; \
     its own discretisation error is included in every error column";

fn reference_summary(r: &LevelSolution) -> ReferenceSummary {
    ReferenceSummary {
        level: r.level,
        h: r.h,
        k_ref: r.dp.space.k,
        sigma: r.sigma,
        dofs: r.dofs(),
        energy: r.ground.energy,
        lambda: r.ground.lambda,
        quartic: r.quartic,
        iterations: r.ground.iterations,
        residual: r.ground.residual,
        note: REFERENCE_NOTE,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub reference: ReferenceSummary,
    pub rows: Vec<ConvergenceRow>,
}

/// Convergence table against the reference; writes `convergence.csv`,
/// `convergence.svg` and `summary.json`.
pub fn run_convergence(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ConvergenceReport> {
    let (potential, meshes) = prepare(cfg, opts, cfg.reference_level())?;
    let reference = reference_solution(cfg, &potential, &meshes, &opts.out)?;
    let reference_rec = reconstruct(&reference.dp.space, &reference.ground.state)?;
    let e_upper = upper_energy(cfg, Some(&reference));
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for level in cfg.levels[0]..=cfg.levels[1] {
        let sigma = level_sigma(cfg, square_side_h(&meshes[level])?, e_upper)?;
        let trace_path = opts.out.join(format!("trace_level{level}.csv"));
        let sol = solve_level(cfg, &potential, meshes[level].clone(), cfg.mode, cfg.k, sigma, &trace_path)?;
        sol.trace.write_csv(&trace_path)?;
        let mut row = error_row(&sol, &reference, &reference_rec, &meshes)?;
        if let Some(prev) = rows.last() {
            row.set_eocs(prev);
        }
        rows.push(row);
    }
    convergence_csv(&rows).write(&opts.out.join("convergence.csv"))?;
    let col = |name: &str, f: fn(&ConvergenceRow) -> f64| Series::new(name, rows.iter().map(|r| (r.h, f(r))).collect());
    let series = [
        col("err_L2_bulk", |r| r.err_l2_bulk),
        col("err_L2_rec", |r| r.err_l2_rec),
        col("err_H1_rec", |r| r.err_h1_rec),
        col("err_E", |r| r.err_e),
        col("err_lambda", |r| r.err_lambda),
    ];
    let k = cfg.k as f64;
    let svg = emit_svg_loglog(&series, "h", "error", &[k + 1.0, k + 2.0, 2.0 * k + 2.0])?;
    fs::write(opts.out.join("convergence.svg"), svg)?;
    let report = ConvergenceReport { reference: reference_summary(&reference), rows };
    write_json(&opts.out.join("summary.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub level: usize,
    pub h: f64,
    pub h_diameter: f64,
    pub dofs: Option<usize>,
    pub sigma: Option<f64>,
    pub energy: Option<f64>,
    pub lambda: Option<f64>,
    pub quartic: Option<f64>,
    pub e_ref: f64,
    pub gap: Option<f64>,
    pub slack: Option<f64>,
    pub slack_diameter: Option<f64>,
    pub feasible: bool,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
}

pub const BOUNDS_HEADER: [&str; 15] = [
    "level", "h", "h_diameter", "dofs", "sigma", "energy", "lambda", "quartic", "e_ref", "gap", "slack",
    "slack_diameter", "feasible", "iterations", "residual",
];

pub fn bounds_csv(rows: &[BoundRow]) -> Csv {
    let mut csv = Csv::new(&BOUNDS_HEADER);
    for r in rows {
        let opt_usize = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        csv.row(vec![
            r.level.to_string(),
            float(r.h),
            float(r.h_diameter),
            opt_usize(r.dofs),
            opt_float(r.sigma),
            opt_float(r.energy),
            opt_float(r.lambda),
            opt_float(r.quartic),
            float(r.e_ref),
            opt_float(r.gap),
            opt_float(r.slack),
            opt_float(r.slack_diameter),
            r.feasible.to_string(),
            opt_usize(r.iterations),
            opt_float(r.residual),
        ]);
    }
    csv
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub reference: ReferenceSummary,
    pub e_upper: f64,
    pub rows: Vec<BoundRow>,
}

/// Lower-bound study of the modified scheme with automatic sigma; writes
/// `bounds.csv`, `bounds.svg` and `summary.json`. Infeasible levels are
/// flagged and skipped; all-infeasible and negative slack are errors
/// reported after the files are written.
pub fn run_lowerbound(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<BoundsReport> {
    if cfg.mode != Mode::Modified {
        return Err(CliError::Config("lower-bound study requires mode = \"modified\"".into()));
    }
    let (potential, meshes) = prepare(cfg, opts, cfg.reference_level())?;
    let reference = reference_solution(cfg, &potential, &meshes, &opts.out)?;
    let e_ref = reference.ground.energy;
    let e_upper = upper_energy(cfg, Some(&reference)).expect("reference available");
    let mut rows = Vec::new();
    for level in cfg.levels[0]..=cfg.levels[1] {
        let h = square_side_h(&meshes[level])?;
        let h_diameter = compute_geometry(&meshes[level]).max_diameter();
        let sigma = match &cfg.sigma {
            SigmaSpec::Value(v) => Some(*v),
            SigmaSpec::Keyword(_) => match auto_sigma(h, e_upper, DIM, cfg.safety) {
                Ok(s) => Some(s),
                Err(CoreError::NoAdmissibleSigma { .. }) => None,
                Err(e) => return Err(e.into()),
            },
        };
        let Some(sigma) = sigma else {
            rows.push(BoundRow {
                level,
                h,
                h_diameter,
                dofs: None,
                sigma: None,
                energy: None,
                lambda: None,
                quartic: None,
                e_ref,
                gap: None,
                slack: None,
                slack_diameter: None,
                feasible: false,
                iterations: None,
                residual: None,
            });
            continue;
        };
        let trace_path = opts.out.join(format!("trace_level{level}.csv"));
        let sol = solve_level(cfg, &potential, meshes[level].clone(), Mode::Modified, 0, sigma, &trace_path)?;
        sol.trace.write_csv(&trace_path)?;
        let cert = certificate_report(&sol).expect("modified mode carries a certificate");
        rows.push(BoundRow {
            level,
            h,
            h_diameter,
            dofs: Some(sol.dofs()),
            sigma: Some(sigma),
            energy: Some(sol.ground.energy),
            lambda: Some(sol.ground.lambda),
            quartic: Some(sol.quartic),
            e_ref,
            gap: Some(e_ref - sol.ground.energy),
            slack: Some(cert.certificate.slack),
            slack_diameter: Some(cert.slack_diameter),
            feasible: true,
            iterations: Some(sol.ground.iterations),
            residual: Some(sol.ground.residual),
        });
    }
    bounds_csv(&rows).write(&opts.out.join("bounds.csv"))?;
    let series = [
        Series::new("E_h^0", rows.iter().filter_map(|r| r.energy.map(|e| (r.h, e))).collect()),
        Series::new("E_ref", rows.iter().map(|r| (r.h, e_ref)).collect()),
    ];
    let svg = emit_svg_loglog(&series, "h", "energy", &[])?;
    fs::write(opts.out.join("bounds.svg"), svg)?;
    let any_feasible = rows.iter().any(|r| r.feasible);
    let negative: Vec<usize> = rows.iter().filter(|r| r.slack.is_some_and(|s| s < 0.0)).map(|r| r.level).collect();
    let report = BoundsReport { reference: reference_summary(&reference), e_upper, rows };
    write_json(&opts.out.join("summary.json"), &report)?;
    if !any_feasible {
        return Err(CliError::Infeasible);
    }
    if !negative.is_empty() {
        return Err(CliError::NegativeSlack(negative));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeshInfo {
    pub level: usize,
    pub h: f64,
    pub h_diameter: f64,
    pub vertices: usize,
    pub cells: usize,
    pub faces: usize,
    pub interior_faces: usize,
    pub dofs: usize,
}

/// Mesh statistics for every configured level; writes `summary.json`.
pub fn run_mesh_info(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<MeshInfo>> {
    fs::create_dir_all(&opts.out)?;
    let meshes = hierarchy(cfg.domain, cfg.levels[1])?;
    if opts.dump_mesh {
        dump_mesh(&meshes[cfg.levels[1]], &opts.out)?;
    }
    let info = meshes[cfg.levels[0]..]
        .iter()
        .map(|m| {
            let interior = m.num_faces() - m.num_boundary_faces();
            Ok(MeshInfo {
                level: m.level,
                h: square_side_h(m)?,
                h_diameter: compute_geometry(m).max_diameter(),
                vertices: m.num_vertices(),
                cells: m.num_cells(),
                faces: m.num_faces(),
                interior_faces: interior,
                dofs: m.num_cells() * cell_dim(cfg.k + 1) + interior * face_dim(cfg.k),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&opts.out.join("summary.json"), &info)?;
    Ok(info)
}
