//! End-to-end run: MAP point, VB-EM, sensitive directions, design samples and
//! validation, driven by a flat `key = value` config and written as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::map::{optimize_map, MapOptions, MapResult};
use crate::mesh::BoundaryTag;
use crate::problems::{
    constraint_value_and_gradient, ForwardModel, HeatFluxConfig, HeatFluxProblem, TopologyConfig, TopologyProblem,
};
use crate::validation::{estimate_nkl, ValidationInputs, ValidationReport};
use crate::vb::{run_vbem, sample_designs, sensitive_directions, ConstraintTerm, PriorConfig, SensitivitySpectrum};
use crate::vb::{VbemOptions, VbemResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    HeatFlux,
    Topology,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Map,
    Vbem,
    Validate,
    All,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "map" => Ok(Self::Map),
            "vbem" => Ok(Self::Vbem),
            "validate" => Ok(Self::Validate),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!("unknown stage `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub heat: HeatFluxConfig,
    pub topo: TopologyConfig,
    pub d_y: usize,
    pub tau_y0_inv: f64,
    pub eps2: f64,
    pub w_steps: usize,
    pub vbem_max_iters: usize,
    pub map_tol: f64,
    pub map_max_iters: usize,
    /// Validation sample count; `0` skips validation.
    pub validate_m: usize,
    pub threads: usize,
    pub design_levels: Vec<f64>,
    pub design_count: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(problem: ProblemKind) -> Self {
        Self {
            problem,
            heat: HeatFluxConfig::default(),
            topo: TopologyConfig::default(),
            d_y: 10,
            tau_y0_inv: 1e4,
            eps2: 1e-10,
            w_steps: 100,
            vbem_max_iters: 200,
            map_tol: 1e-5,
            map_max_iters: 100,
            validate_m: 500,
            threads: 0,
            design_levels: vec![0.9, 0.5],
            design_count: 5,
            seed: 0,
        }
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// unknown keys are an error.
    pub fn parse(text: &str) -> crate::Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let problem = match pairs.iter().find(|(k, _)| k == "problem").map(|(_, v)| v.as_str()) {
            Some("heat_flux") => ProblemKind::HeatFlux,
            Some("topo") => ProblemKind::Topology,
            Some(other) => return Err(Error::Config(format!("unknown problem `{other}`"))),
            None => return Err(Error::Config("missing key `problem`".into())),
        };
        let mut cfg = Self::new(problem);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> crate::Result<()> {
        let heat = self.problem == ProblemKind::HeatFlux;
        match key {
            "problem" => {}
            "mesh.nx" => *self.nx_mut() = parse(key, value)?,
            "mesh.ny" => *self.ny_mut() = parse(key, value)?,
            "field.sigma_g2" => {
                let v = parse(key, value)?;
                self.heat.sigma_g2 = v;
                self.topo.sigma_g2 = v;
            }
            "field.x0" => {
                let v = parse(key, value)?;
                self.heat.x0 = v;
                self.topo.x0 = v;
            }
            "field.mu_theta0" => {
                let v = parse(key, value)?;
                self.heat.mu_theta0 = v;
                self.topo.mu_theta0 = v;
            }
            "utility.tau_Q_inv" => {
                let v = parse(key, value)?;
                if heat {
                    self.heat.tau_q_inv = v;
                } else {
                    self.topo.tau_q_inv = v;
                }
            }
            "constraint.VF" => self.topo.volume_fraction = parse(key, value)?,
            "constraint.eps_c2" => self.topo.eps_c2 = parse(key, value)?,
            "heat.observation_x1" => self.heat.observation_x1 = parse(key, value)?,
            "heat.dirichlet" => {
                self.heat.dirichlet = value
                    .split(',')
                    .map(|t| {
                        let t = t.trim();
                        BoundaryTag::ALL
                            .into_iter()
                            .find(|b| b.as_str() == t)
                            .ok_or_else(|| Error::Config(format!("{key}: unknown edge `{t}`")))
                    })
                    .collect::<crate::Result<_>>()?;
            }
            "vb.d_y" => self.d_y = parse(key, value)?,
            "vb.tau_y0_inv" => self.tau_y0_inv = parse(key, value)?,
            "vb.eps2" => self.eps2 = parse(key, value)?,
            "vb.w_steps" => self.w_steps = parse(key, value)?,
            "vb.max_iters" => self.vbem_max_iters = parse(key, value)?,
            "map.tol" => self.map_tol = parse(key, value)?,
            "map.max_iters" => self.map_max_iters = parse(key, value)?,
            "validate.M" => self.validate_m = parse(key, value)?,
            "validate.threads" => self.threads = parse(key, value)?,
            "design.levels" => {
                self.design_levels = value.split(',').map(|t| parse(key, t.trim())).collect::<crate::Result<_>>()?;
            }
            "design.count" => self.design_count = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn nx_mut(&mut self) -> &mut usize {
        match self.problem {
            ProblemKind::HeatFlux => &mut self.heat.nx,
            ProblemKind::Topology => &mut self.topo.nx,
        }
    }

    fn ny_mut(&mut self) -> &mut usize {
        match self.problem {
            ProblemKind::HeatFlux => &mut self.heat.ny,
            ProblemKind::Topology => &mut self.topo.ny,
        }
    }

    /// The resolved configuration in the same `key = value` form, one key per line.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let (name, nx, ny, field, tau_q_inv) = match self.problem {
            ProblemKind::HeatFlux => {
                let h = &self.heat;
                ("heat_flux", h.nx, h.ny, (h.sigma_g2, h.x0, h.mu_theta0), h.tau_q_inv)
            }
            ProblemKind::Topology => {
                let t = &self.topo;
                ("topo", t.nx, t.ny, (t.sigma_g2, t.x0, t.mu_theta0), t.tau_q_inv)
            }
        };
        let _ = writeln!(s, "problem = {name}");
        let _ = writeln!(s, "mesh.nx = {nx}\nmesh.ny = {ny}");
        let _ = writeln!(s, "field.sigma_g2 = {:e}\nfield.x0 = {:e}\nfield.mu_theta0 = {:e}", field.0, field.1, field.2);
        let _ = writeln!(s, "utility.tau_Q_inv = {tau_q_inv:e}");
        match self.problem {
            ProblemKind::HeatFlux => {
                let edges: Vec<&str> = self.heat.dirichlet.iter().map(|b| b.as_str()).collect();
                let _ = writeln!(s, "heat.observation_x1 = {:e}\nheat.dirichlet = {}", self.heat.observation_x1, edges.join(","));
            }
            ProblemKind::Topology => {
                let _ = writeln!(s, "constraint.VF = {:e}\nconstraint.eps_c2 = {:e}", self.topo.volume_fraction, self.topo.eps_c2);
            }
        }
        let _ = writeln!(
            s,
            "vb.d_y = {}\nvb.tau_y0_inv = {:e}\nvb.eps2 = {:e}\nvb.w_steps = {}\nvb.max_iters = {}",
            self.d_y, self.tau_y0_inv, self.eps2, self.w_steps, self.vbem_max_iters
        );
        let _ = writeln!(s, "map.tol = {:e}\nmap.max_iters = {}", self.map_tol, self.map_max_iters);
        let _ = writeln!(s, "validate.M = {}\nvalidate.threads = {}", self.validate_m, self.threads);
        let levels: Vec<String> = self.design_levels.iter().map(|l| format!("{l:e}")).collect();
        let _ = writeln!(s, "design.levels = {}\ndesign.count = {}", levels.join(","), self.design_count);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> crate::Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Solver,
    Validation,
}

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    pub kind: FailureKind,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Config => 2,
            FailureKind::Solver => 3,
            FailureKind::Validation => 4,
        }
    }
}

fn fail(stage: &'static str, kind: FailureKind) -> impl FnOnce(Error) -> StageError {
    move |source| StageError { stage, kind, source }
}

/// What a run produced, beyond the files.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub map_forward_calls: usize,
    pub map_converged: bool,
    pub f_mu: f64,
    pub vbem: Option<VbemSummary>,
    pub validation: Option<ValidationReport>,
    pub forward_calls: usize,
}

#[derive(Debug, Clone)]
pub struct VbemSummary {
    pub f_final: f64,
    pub iterations: usize,
    pub converged: bool,
    pub sigma2: DVector<f64>,
    pub warnings: Vec<String>,
}

enum Built {
    Heat(HeatFluxProblem),
    Topo(TopologyProblem),
}

impl Built {
    fn model(&self) -> &dyn ForwardModel {
        match self {
            Self::Heat(p) => p,
            Self::Topo(p) => p,
        }
    }

    /// Coordinates attached to each design variable.
    fn design_points(&self) -> Vec<[f64; 2]> {
        match self {
            Self::Heat(p) => p.design_coordinates().into_iter().map(|x2| [0.0, x2]).collect(),
            Self::Topo(p) => p.mesh().map(|m| m.centroids().to_vec()).unwrap_or_default(),
        }
    }
}

/// Runs the pipeline up to `stage` and writes every artifact into `out`.
///
/// On failure the artifacts of completed stages stay on disk and the manifest
/// names the failing stage.
pub fn run(config: &RunConfig, out: &Path, stage: Stage) -> std::result::Result<RunSummary, StageError> {
    fs::create_dir_all(out).map_err(|e| fail("setup", FailureKind::Config)(e.into()))?;
    let mut manifest = Manifest { config, out, calls_map: 0, calls_validation: 0, failed: None, stage };
    let result = run_stages(config, out, stage, &mut manifest);
    if let Err(e) = &result {
        manifest.failed = Some(e.stage);
    }
    manifest.write().map_err(fail("manifest", FailureKind::Config))?;
    result
}

fn run_stages(
    config: &RunConfig,
    out: &Path,
    stage: Stage,
    manifest: &mut Manifest<'_>,
) -> std::result::Result<RunSummary, StageError> {
    let built = match config.problem {
        ProblemKind::HeatFlux => HeatFluxProblem::new(config.heat.clone()).map(Built::Heat),
        ProblemKind::Topology => TopologyProblem::new(config.topo.clone()).map(Built::Topo),
    }
    .map_err(fail("setup", FailureKind::Config))?;
    let model = built.model();
    if config.d_y == 0 || config.d_y > model.d_z() {
        return Err(fail("setup", FailureKind::Config)(Error::Config(format!(
            "vb.d_y must lie in 1..={}, got {}",
            model.d_z(),
            config.d_y
        ))));
    }
    let prior = PriorConfig::new(config.tau_y0_inv, config.eps2, model.field_prior().clone())
        .map_err(fail("setup", FailureKind::Config))?;

    let map_options =
        MapOptions { max_iters: config.map_max_iters, tol: config.map_tol, seed: config.seed, ..MapOptions::default() };
    let map = optimize_map(model, map_options).map_err(fail("map", FailureKind::Solver))?;
    manifest.calls_map = map.forward_calls;
    write_map(out, &map, &built.design_points()).map_err(fail("map", FailureKind::Solver))?;
    let mut summary = RunSummary {
        out_dir: out.to_path_buf(),
        map_forward_calls: map.forward_calls,
        map_converged: map.converged,
        f_mu: map.f_mu,
        vbem: None,
        validation: None,
        forward_calls: map.forward_calls,
    };
    if stage == Stage::Map {
        return Ok(summary);
    }

    let (c, f) = match model.constraint() {
        Some(desc) => {
            let (c, f) = constraint_value_and_gradient(&desc, &map.mu_z);
            (c, Some((f, desc.eps_c2)))
        }
        None => (0.0, None),
    };
    let vb_options = VbemOptions {
        d_y: config.d_y,
        w_steps: config.w_steps,
        max_iters: config.vbem_max_iters,
        seed: config.seed,
        ..VbemOptions::default()
    };
    let constraint = f.as_ref().map(|(f, eps_c2)| ConstraintTerm { c, f, eps_c2: *eps_c2 });
    let vb = run_vbem(
        &map.lin,
        model.u_target(),
        &map.mu_theta,
        &map.mu_z,
        &prior,
        model.tau_q(),
        constraint,
        map.log_p_mu_z,
        vb_options,
        None,
    )
    .map_err(fail("vbem", FailureKind::Solver))?;
    let spectrum = sensitive_directions(&vb.state, &vb.params).map_err(fail("vbem", FailureKind::Solver))?;
    write_vbem(out, &vb, &spectrum, &built.design_points()).map_err(fail("vbem", FailureKind::Solver))?;
    summary.vbem = Some(VbemSummary {
        f_final: vb.f_final,
        iterations: vb.trace.len(),
        converged: vb.converged,
        sigma2: spectrum.sigma2.clone(),
        warnings: vb.warnings.clone(),
    });

    if matches!(stage, Stage::Vbem | Stage::All) {
        let mut rng = stream(config.seed, 1);
        let mut rows = Vec::new();
        for &level in &config.design_levels {
            let zs = sample_designs(&vb.params, &vb.state, level, config.design_count, &mut rng)
                .map_err(fail("designs", FailureKind::Config))?;
            rows.extend(zs.into_iter().enumerate().map(|(i, z)| (level, i, z)));
        }
        write_designs(out, &rows).map_err(fail("designs", FailureKind::Solver))?;
    }

    if stage == Stage::Vbem || config.validate_m == 0 {
        return Ok(summary);
    }
    let inputs = ValidationInputs {
        state: &vb.state,
        params: &vb.params,
        prior: &prior,
        log_p_mu_z: map.log_p_mu_z,
        threads: config.threads,
    };
    let mut rng = stream(config.seed, 2);
    let report =
        estimate_nkl(model, inputs, config.validate_m, &mut rng).map_err(fail("validate", FailureKind::Validation))?;
    manifest.calls_validation = report.forward_calls;
    fs::write(out.join("validation.txt"), report.to_text())
        .map_err(|e| fail("validate", FailureKind::Validation)(e.into()))?;
    summary.forward_calls += report.forward_calls;
    summary.validation = Some(report);
    Ok(summary)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Manifest<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    calls_map: usize,
    calls_validation: usize,
    failed: Option<&'static str>,
    stage: Stage,
}

impl Manifest<'_> {
    fn write(&self) -> crate::Result<()> {
        let stage = format!("{:?}", self.stage).to_lowercase();
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.config.seed);
        let _ = writeln!(s, "config_sha256 = {}", self.config.hash());
        let _ = writeln!(s, "stage = {stage}");
        let _ = writeln!(s, "forward_calls_map = {}", self.calls_map);
        let _ = writeln!(s, "forward_calls_validation = {}", self.calls_validation);
        let _ = writeln!(s, "forward_calls_total = {}", self.calls_map + self.calls_validation);
        let _ = writeln!(s, "status = {}", self.failed.map_or("ok".to_string(), |st| format!("failed at {st}")));
        fs::write(self.out.join("manifest.txt"), s)?;
        fs::write(self.out.join("config.txt"), self.config.canonical_text())?;
        Ok(())
    }
}

fn write_map(out: &Path, map: &MapResult, points: &[[f64; 2]]) -> crate::Result<()> {
    let mut s = String::from("iter,F_mu,forward_calls,step_norm_theta,step_norm_z,constraint_c\n");
    for r in &map.trace {
        let _ = writeln!(
            s,
            "{},{:.16e},{},{:.16e},{:.16e},{:.16e}",
            r.iter, r.f_mu, r.forward_calls, r.step_norm_theta, r.step_norm_z, r.constraint_c
        );
    }
    fs::write(out.join("map_trace.csv"), s)?;

    let mut s = String::from("index,x1,x2,mu_z\n");
    for (i, z) in map.mu_z.iter().enumerate() {
        let p = points.get(i).copied().unwrap_or([f64::NAN; 2]);
        let _ = writeln!(s, "{i},{:.16e},{:.16e},{z:.16e}", p[0], p[1]);
    }
    fs::write(out.join("mu_z.csv"), s)?;

    let mut s = String::from("index,mu_theta\n");
    for (i, t) in map.mu_theta.iter().enumerate() {
        let _ = writeln!(s, "{i},{t:.16e}");
    }
    fs::write(out.join("mu_theta.csv"), s)?;
    Ok(())
}

fn write_vbem(out: &Path, vb: &VbemResult, spectrum: &SensitivitySpectrum, points: &[[f64; 2]]) -> crate::Result<()> {
    let mut s = String::from("iter,F\n");
    for r in &vb.trace {
        let _ = writeln!(s, "{},{:.16e}", r.iter, r.f_after_m);
    }
    fs::write(out.join("f_trace.csv"), s)?;

    let mut s = String::from("j,sigma2_j\n");
    for (j, v) in spectrum.sigma2.iter().enumerate() {
        let _ = writeln!(s, "{},{v:.16e}", j + 1);
    }
    fs::write(out.join("spectrum.csv"), s)?;

    let dy = spectrum.w_hat.ncols();
    let mut s = String::from("index,x1,x2");
    for j in 1..=dy {
        let _ = write!(s, ",w_{j}");
    }
    s.push('\n');
    for i in 0..spectrum.w_hat.nrows() {
        let p = points.get(i).copied().unwrap_or([f64::NAN; 2]);
        let _ = write!(s, "{i},{:.16e},{:.16e}", p[0], p[1]);
        for j in 0..dy {
            let _ = write!(s, ",{:.16e}", spectrum.w_hat[(i, j)]);
        }
        s.push('\n');
    }
    fs::write(out.join("directions.csv"), s)?;
    Ok(())
}

fn write_designs(out: &Path, rows: &[(f64, usize, DVector<f64>)]) -> crate::Result<()> {
    let dz = rows.first().map_or(0, |r| r.2.len());
    let mut s = String::from("level,sample");
    for i in 0..dz {
        let _ = write!(s, ",z_{i}");
    }
    s.push('\n');
    for (level, k, z) in rows {
        let _ = write!(s, "{level:.16e},{k}");
        for v in z.iter() {
            let _ = write!(s, ",{v:.16e}");
        }
        s.push('\n');
    }
    fs::write(out.join("designs.csv"), s)?;
    Ok(())
}
