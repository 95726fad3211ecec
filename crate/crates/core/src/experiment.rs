//! Orchestration of the error sweep over `(H, m)` cells and of the property
//! diagnostics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficient::{discretize, eval_a_eps, ArcCoefficientParams, PiecewiseConstantCoefficient};
use crate::corrector::{
    compute_corrector_set, decay_profile, fit_decay, ideal_local_corrector, CorrectorContext, CorrectorMode,
    CorrectorOptions, DecayFit, MultiscaleBasis,
};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_mass, assemble_stiffness, dot, norm2, norm_inf, solve_neumann_direct,
    solve_neumann_meanzero, CgOptions, CsrMatrix, FemNorms, NodalVector,
};
use crate::geometry::{build_hierarchy_capped, build_uniform_mesh, MeshHierarchy, StructuredTriMesh, DEFAULT_MAX_FINE_N};
use crate::io::{read_field_cache, write_coefficient_pgm, write_decay_csv, write_error_csv, write_field_cache, write_vtk};
use crate::msolver::{compare, solve_multiscale, ErrorReport};
use crate::pou::{build_lifting, interpolation_constants, lift_to_preimage};

/// Right-hand side of the sweep problem.
pub fn sweep_load(x: [f64; 2]) -> f64 {
    x[0] - 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepCell {
    /// `H = 2^-coarse_exp`.
    pub coarse_exp: u32,
    pub m: usize,
}

impl SweepCell {
    pub fn parse_list(s: &str) -> Result<Vec<SweepCell>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                let (h, m) = t
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("sweep entry {t:?} is not of the form H_exp:m")))?;
                let coarse_exp = h.trim().parse().map_err(|_| Error::Config(format!("bad coarse exponent in {t:?}")))?;
                let m = m.trim().parse().map_err(|_| Error::Config(format!("bad m in {t:?}")))?;
                Ok(SweepCell { coarse_exp, m })
            })
            .collect()
    }
}

/// The six rows of the reference table.
pub fn table_sweep() -> Vec<SweepCell> {
    [(1, 0), (2, 0), (2, 1), (3, 1), (3, 2), (4, 2)]
        .into_iter()
        .map(|(coarse_exp, m)| SweepCell { coarse_exp, m })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportToggles {
    pub vtk: bool,
    pub pgm: bool,
    /// Decay profile of one ideal corrector (diagnostics only).
    pub decay_csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSolver {
    Direct,
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsSettings {
    pub coarse_exp: u32,
    pub m: usize,
    pub test_vectors: usize,
    pub decay_kmax: usize,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        Self {
            coarse_exp: 3,
            m: 1,
            test_vectors: 50,
            decay_kmax: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `h = 2^-fine_exp`.
    pub fine_exp: u32,
    pub sweep: Vec<SweepCell>,
    pub coefficient: ArcCoefficientParams,
    /// Use whole-domain patches instead of `m` layers.
    pub ideal: bool,
    pub reference_solver: ReferenceSolver,
    pub cg: CgOptions,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub export: ExportToggles,
    pub threads: Option<usize>,
    pub seed: u64,
    pub max_fine_n: usize,
    pub diagnostics: DiagnosticsSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fine_exp: 8,
            sweep: table_sweep(),
            coefficient: ArcCoefficientParams::default(),
            ideal: false,
            reference_solver: ReferenceSolver::Direct,
            cg: CgOptions::default(),
            out_dir: PathBuf::from("out"),
            cache_dir: None,
            export: ExportToggles::default(),
            threads: None,
            seed: 0,
            max_fine_n: DEFAULT_MAX_FINE_N,
            diagnostics: DiagnosticsSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.coefficient.validate()?;
        if self.fine_exp >= usize::BITS - 1 || (1usize << self.fine_exp) > self.max_fine_n {
            return Err(Error::Config(format!(
                "fine exponent {} exceeds the mesh cap {}",
                self.fine_exp, self.max_fine_n
            )));
        }
        let check = |coarse_exp: u32, what: &str| {
            if coarse_exp > self.fine_exp {
                Err(Error::Config(format!(
                    "{what}: coarse exponent {coarse_exp} exceeds fine exponent {}",
                    self.fine_exp
                )))
            } else {
                Ok(())
            }
        };
        for c in &self.sweep {
            check(c.coarse_exp, "sweep")?;
        }
        check(self.diagnostics.coarse_exp, "diagnostics")?;
        if self.threads == Some(0) {
            return Err(Error::Config("thread count must be positive".into()));
        }
        Ok(())
    }

    fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    fn hierarchy(&self, coarse_exp: u32) -> Result<MeshHierarchy> {
        build_hierarchy_capped(1 << coarse_exp, (self.fine_exp - coarse_exp) as usize, self.max_fine_n)
    }

    fn mode(&self, m: usize) -> CorrectorMode {
        if self.ideal {
            CorrectorMode::Ideal
        } else {
            CorrectorMode::Localized { m }
        }
    }
}

/// Fine mesh, coefficient, matrices and reference solution shared by all
/// sweep cells.
pub struct FineSetup {
    pub mesh: StructuredTriMesh,
    pub coeff: PiecewiseConstantCoefficient,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub norms: FemNorms,
    pub load: NodalVector,
    pub reference: NodalVector,
    pub reference_cached: bool,
    pub reference_seconds: f64,
}

/// Hex digest identifying a fine reference problem.
pub fn reference_key(n: usize, coeff: &PiecewiseConstantCoefficient) -> String {
    let mut h = Sha256::new();
    h.update(b"x1-1/2");
    h.update((n as u64).to_le_bytes());
    for v in coeff.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect()
}

impl FineSetup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let mesh = build_uniform_mesh(1 << config.fine_exp)?;
        let params = config.coefficient;
        let coeff = discretize(|x| eval_a_eps(x, &params), &mesh)?;
        let stiffness = assemble_stiffness(&mesh, &coeff)?;
        let mass = assemble_mass(&mesh);
        let norms = FemNorms::new(&mesh);
        let load = assemble_load(&mesh, sweep_load);

        let start = Instant::now();
        let dir = config.cache_dir();
        let path = dir.join(format!("reference_n{}_{}.bin", mesh.n(), reference_key(mesh.n(), &coeff)));
        let (reference, reference_cached) = match read_field_cache(&path, mesh.num_vertices())? {
            Some(values) => (NodalVector::new(&mesh, values)?, true),
            None => {
                let sol = match config.reference_solver {
                    ReferenceSolver::Direct => solve_neumann_direct(&stiffness, &mass, &load)?,
                    ReferenceSolver::Cg => solve_neumann_meanzero(&stiffness, &mass, &load, config.cg)?,
                };
                fs::create_dir_all(&dir)?;
                write_field_cache(&path, sol.u.values())?;
                (sol.u, false)
            }
        };
        Ok(Self {
            mesh,
            coeff,
            stiffness,
            mass,
            norms,
            load,
            reference,
            reference_cached,
            reference_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub coarse_exp: u32,
    pub m: usize,
    pub ideal: bool,
    pub num_coarse: usize,
    pub partition_defect: Option<f64>,
    pub residual: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub rows: Vec<ErrorReport>,
    pub cells: Vec<CellSummary>,
    pub reference_cached: bool,
    pub reference_seconds: f64,
}

impl ExperimentOutcome {
    pub fn all_converged(&self) -> bool {
        self.cells.iter().all(|c| c.error.is_none())
    }
}

pub struct CellResult {
    pub report: ErrorReport,
    pub solution: NodalVector,
    pub partition_defect: f64,
    pub residual: f64,
    pub num_coarse: usize,
}

pub fn run_cell(config: &ExperimentConfig, fine: &FineSetup, cell: SweepCell) -> Result<CellResult> {
    let hier = config.hierarchy(cell.coarse_exp)?;
    let mode = config.mode(cell.m);
    let ctx = CorrectorContext::new(&hier, &fine.coeff)?;
    let set = compute_corrector_set(&ctx, mode, CorrectorOptions::default())?;
    let basis = MultiscaleBasis::new(&ctx.clement.prolongation, &set)?;
    let ms = solve_multiscale(&fine.stiffness, &fine.mass, &basis, &fine.load)?;
    let m = match mode {
        CorrectorMode::Ideal => None,
        CorrectorMode::Localized { m } => Some(m),
    };
    let report = compare(
        &ms.u,
        &fine.reference,
        &fine.norms,
        hier.coarse.spacing(),
        m,
        hier.fine.spacing(),
    )?;
    Ok(CellResult {
        report,
        partition_defect: basis.partition_defect(),
        residual: ms.residual,
        num_coarse: ms.num_coarse,
        solution: ms.u,
    })
}

/// Runs every sweep cell and writes `errors.csv`, `summary.json` and the
/// requested exports into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let fine = FineSetup::new(config)?;
    if config.export.pgm {
        write_coefficient_pgm(&config.out_dir.join("coefficient.pgm"), &fine.mesh, &fine.coeff)?;
    }
    if config.export.vtk {
        write_vtk(
            &config.out_dir.join("reference.vtk"),
            &fine.mesh,
            &[("u_h", fine.reference.values())],
            Some(&fine.coeff),
        )?;
    }
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for &cell in &config.sweep {
        let start = Instant::now();
        let mut summary = CellSummary {
            coarse_exp: cell.coarse_exp,
            m: cell.m,
            ideal: config.ideal,
            num_coarse: ((1usize << cell.coarse_exp) + 1).pow(2),
            partition_defect: None,
            residual: None,
            seconds: 0.0,
            error: None,
        };
        match run_cell(config, &fine, cell) {
            Ok(res) => {
                if config.export.vtk {
                    let diff = fine.reference.sub(&res.solution)?;
                    let name = format!("multiscale_H{}_m{}.vtk", cell.coarse_exp, cell.m);
                    write_vtk(
                        &config.out_dir.join(name),
                        &fine.mesh,
                        &[("u_ms", res.solution.values()), ("error", diff.values())],
                        None,
                    )?;
                }
                summary.partition_defect = Some(res.partition_defect);
                summary.residual = Some(res.residual);
                summary.num_coarse = res.num_coarse;
                rows.push(res.report);
            }
            Err(e) => summary.error = Some(e.to_string()),
        }
        summary.seconds = start.elapsed().as_secs_f64();
        cells.push(summary);
    }
    write_error_csv(fs::File::create(config.out_dir.join("errors.csv"))?, &rows)?;
    let outcome = ExperimentOutcome {
        config: config.clone(),
        rows,
        cells,
        reference_cached: fine.reference_cached,
        reference_seconds: fine.reference_seconds,
    };
    fs::write(config.out_dir.join("summary.json"), serde_json::to_string_pretty(&outcome)?)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub status: Status,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub note: Option<String>,
}

impl Check {
    fn at_most(value: f64, threshold: f64) -> Self {
        Self {
            status: if value <= threshold { Status::Pass } else { Status::Fail },
            value: Some(value),
            threshold: Some(threshold),
            note: None,
        }
    }

    fn skip(note: &str) -> Self {
        Self {
            status: Status::Skip,
            value: None,
            threshold: None,
            note: Some(note.to_string()),
        }
    }

    fn info(value: f64) -> Self {
        Self {
            status: if value.is_finite() { Status::Pass } else { Status::Fail },
            value: Some(value),
            threshold: None,
            note: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub coarse_exp: u32,
    pub fine_exp: u32,
    pub m: usize,
    pub checks: BTreeMap<String, Check>,
    pub decay_fit: Option<DecayFit>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.checks.values().all(|c| c.status != Status::Fail)
    }
}

fn unit(i: usize, n: usize) -> Vec<f64> {
    (0..n).map(|j| (i == j) as u8 as f64).collect()
}

/// Measures the structural properties of the method on one hierarchy and
/// writes `diagnostics.json` into the output directory.
pub fn run_diagnostics(config: &ExperimentConfig) -> Result<DiagnosticsReport> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let d = config.diagnostics;
    let hier = config.hierarchy(d.coarse_exp)?;
    let params = config.coefficient;
    let coeff = discretize(|x| eval_a_eps(x, &params), &hier.fine)?;
    let ctx = CorrectorContext::new(&hier, &coeff)?;
    let nf = hier.fine.num_vertices();
    let nc = hier.coarse.num_vertices();
    let mut checks = BTreeMap::new();

    let localized = compute_corrector_set(&ctx, CorrectorMode::Localized { m: d.m }, CorrectorOptions::default())?;
    let basis = MultiscaleBasis::new(&ctx.clement.prolongation, &localized)?;
    checks.insert("partition_of_unity".into(), Check::at_most(basis.partition_defect(), 1e-9));

    let constraint = localized
        .aggregated
        .iter()
        .map(|q| {
            let c = ctx.clement.matrix.mul_vec(&q.to_dense(nf));
            norm_inf(&c) / q.norm_inf().max(f64::MIN_POSITIVE)
        })
        .fold(0.0f64, f64::max);
    checks.insert("fine_space_membership".into(), Check::at_most(constraint, 1e-9));

    if hier.levels == 0 {
        let zero = localized.aggregated.iter().all(|q| q.indices.is_empty());
        checks.insert("correctors_zero".into(), Check::at_most(if zero { 0.0 } else { 1.0 }, 0.0));
    } else {
        checks.insert("correctors_zero".into(), Check::skip("only defined when coarse and fine meshes coincide"));
    }

    let pi = std::f64::consts::PI;
    let smooth = NodalVector::interpolate(&hier.fine, |x| (pi * x[0]).cos() * (pi * x[1]).cos());
    let consts = interpolation_constants(&hier, &ctx.clement, &smooth)?;
    checks.insert("clement_approximation_constant".into(), Check::info(consts.approximation));
    checks.insert("clement_stability_constant".into(), Check::info(consts.stability));
    checks.insert("clement_restriction_condition".into(), Check::info(ctx.clement.restriction_condition()));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut decay_fit = None;
    if hier.levels == 0 {
        for name in ["lifting_identity", "a_orthogonality_residual", "decay_theta"] {
            checks.insert(name.into(), Check::skip("fine space is trivial"));
        }
    } else {
        let lifting = build_lifting(&hier)?;
        let lift_err = (0..nc)
            .map(|z| {
                let b = NodalVector::from_raw(hier.fine.n(), lifting.dense(z));
                let ib = ctx.clement.apply(&b).unwrap_or_default();
                ib.iter().zip(unit(z, nc)).fold(0.0f64, |m, (a, e)| m.max((a - e).abs()))
            })
            .fold(0.0f64, f64::max);
        checks.insert("lifting_identity".into(), Check::at_most(lift_err, 1e-10));

        let ideal = compute_corrector_set(&ctx, CorrectorMode::Ideal, CorrectorOptions::default())?;
        let ideal_basis = MultiscaleBasis::new(&ctx.clement.prolongation, &ideal)?;
        let bt = ideal_basis.matrix.transpose();
        let columns: Vec<Vec<f64>> = (0..nc)
            .map(|z| {
                let (idx, val) = bt.row(z);
                let mut c = vec![0.0; nf];
                idx.iter().zip(val).for_each(|(&i, &v)| c[i] = v);
                c
            })
            .collect();
        let col_energy: Vec<f64> = columns.iter().map(|c| dot(c, &ctx.stiffness.mul_vec(c)).sqrt()).collect();
        let mut worst = 0.0f64;
        for _ in 0..d.test_vectors {
            let v: Vec<f64> = (0..nf).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let iv = ctx.clement.apply(&NodalVector::from_raw(hier.fine.n(), v.clone()))?;
            let lifted = lift_to_preimage(&ctx.clement, &lifting, &iv)?;
            let w: Vec<f64> = v.iter().zip(lifted.values()).map(|(a, b)| a - b).collect();
            let kw = ctx.stiffness.mul_vec(&w);
            let wn = dot(&w, &kw).sqrt();
            for (c, e) in columns.iter().zip(&col_energy) {
                worst = worst.max(dot(c, &kw).abs() / (e * wn));
            }
        }
        checks.insert("a_orthogonality_residual".into(), Check::at_most(worst, 1e-8));

        let q = ideal_local_corrector(&ctx, 0, hier.coarse.triangles()[0][0])?;
        let profile = decay_profile(&hier, &q, 0, d.decay_kmax);
        if config.export.decay_csv {
            write_decay_csv(&config.out_dir.join("decay.csv"), &profile)?;
        }
        decay_fit = fit_decay(&profile, 1..=d.decay_kmax);
        let check = match decay_fit {
            Some(fit) => Check {
                status: if fit.theta > 0.0 && fit.theta < 1.0 { Status::Pass } else { Status::Fail },
                value: Some(fit.theta),
                threshold: Some(1.0),
                note: Some(format!("R^2 = {:.4}", fit.r_squared)),
            },
            None => Check::skip("decay profile vanishes before two layers"),
        };
        checks.insert("decay_theta".into(), check);
    }

    let mass = assemble_mass(&hier.fine);
    let load = assemble_load(&hier.fine, sweep_load);
    let ms = solve_multiscale(&ctx.stiffness, &mass, &basis, &load)?;
    let uh = solve_neumann_direct(&ctx.stiffness, &mass, &load)?.u;
    let e = uh.sub(&ms.u)?;
    let bt = basis.matrix.transpose();
    let defect = norm2(&bt.mul_vec(&ctx.stiffness.mul_vec(e.values())));
    let scale = norm2(&bt.mul_vec(&ctx.stiffness.mul_vec(uh.values())));
    checks.insert("galerkin_orthogonality".into(), Check::at_most(defect / scale.max(f64::MIN_POSITIVE), 1e-8));
    checks.insert("reduced_system_residual".into(), Check::at_most(ms.residual, 1e-9));

    let report = DiagnosticsReport {
        coarse_exp: d.coarse_exp,
        fine_exp: config.fine_exp,
        m: d.m,
        checks,
        decay_fit,
    };
    fs::write(config.out_dir.join("diagnostics.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            fine_exp: 4,
            sweep: vec![SweepCell { coarse_exp: 1, m: 0 }, SweepCell { coarse_exp: 2, m: 1 }],
            out_dir: dir.to_path_buf(),
            diagnostics: DiagnosticsSettings {
                coarse_exp: 2,
                m: 1,
                test_vectors: 5,
                decay_kmax: 3,
            },
            ..Default::default()
        }
    }

    #[test]
    fn sweep_parsing() {
        let cells = SweepCell::parse_list("1:0, 2:1,").unwrap();
        assert_eq!(cells, vec![SweepCell { coarse_exp: 1, m: 0 }, SweepCell { coarse_exp: 2, m: 1 }]);
        assert!(SweepCell::parse_list("").unwrap().is_empty());
        assert!(SweepCell::parse_list("3").is_err());
        assert!(SweepCell::parse_list("a:1").is_err());
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), text);
        let partial = ExperimentConfig::from_json(r#"{"fine_exp": 5, "sweep": []}"#).unwrap();
        assert_eq!(partial.fine_exp, 5);
        assert_eq!(partial.coefficient, ArcCoefficientParams::default());
        assert!(ExperimentConfig::from_json(r#"{"fine_exp": 2, "sweep": [{"coarse_exp": 3, "m": 0}]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"unknown": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"fine_exp": 20}"#).is_err());
    }

    #[test]
    fn experiment_writes_outputs_and_reuses_reference() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.export = ExportToggles {
            vtk: true,
            pgm: true,
            decay_csv: false,
        };
        let first = run_experiment(&cfg).unwrap();
        assert!(first.all_converged());
        assert_eq!(first.rows.len(), 2);
        assert!(!first.reference_cached);
        for f in ["errors.csv", "summary.json", "coefficient.pgm", "reference.vtk", "multiscale_H2_m1.vtk"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let second = run_experiment(&cfg).unwrap();
        assert!(second.reference_cached);
        assert_eq!(first.rows, second.rows);
        for c in &first.cells {
            assert!(c.partition_defect.unwrap() < 1e-9);
        }
    }

    #[test]
    fn diagnostics_pass_on_small_problem() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.export.decay_csv = true;
        let report = run_diagnostics(&cfg).unwrap();
        assert!(report.passed(), "{:#?}", report.checks);
        assert_eq!(report.checks["a_orthogonality_residual"].status, Status::Pass);
        assert!(dir.path().join("diagnostics.json").exists());
        assert!(dir.path().join("decay.csv").exists());

        cfg.diagnostics.coarse_exp = cfg.fine_exp;
        let flat = run_diagnostics(&cfg).unwrap();
        assert_eq!(flat.checks["correctors_zero"].status, Status::Pass);
        assert!(flat.passed());
    }
}
