//! Experiment orchestration: configuration, the flagship pipelines and the
//! files they write.
//!
//! Each ε-row runs datum → minimize → extract → certify → compare against the
//! predicted minimal chain. Rows are independent and may run in parallel; all
//! file writes happen afterwards, in row order.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::{ChainCell, ChainJson, Disk, Point, PolyChain};
use crate::energy::{self, SolverOptions, TraceRow};
use crate::error::{Error, Result};
use crate::fields::{
    make_boundary_datum, DatumSpec, DomainKind, Field, SpherePoint, TORUS_MAJOR, TORUS_MINOR,
};
use crate::groups::{CoefficientGroup, GroupElement, GroupKind};
use crate::lowerbound::{self, BallParams, LowerBoundCertificate};
use crate::manifolds::{ManifoldKind, TargetManifold};
use crate::singular::{self, SingularGrid};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "GLCHAINS_THREADS";

pub const SUMMARY_HEADER: &str =
    "eps,energy,normalized,cert_bound,chain_mass,total_class,support_dist,runtime_s";
pub const TRACE_HEADER: &str = "iter,energy,dirichlet,potential,grad_norm,step";

/// Segments used for the analytic circle of the solid-torus prediction.
const CIRCLE_SEGMENTS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DiskDegree,
    MinimalConnection,
    SolidTorus,
    NormTable,
    CertifyOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub target: ManifoldKind,
    pub theta0: Option<f64>,
    pub delta_star: Option<f64>,
    /// Boundary class of the disk datum.
    pub degree: Vec<i64>,
    /// Boundary singularities of the minimal-connection datum.
    pub points: Vec<SpherePoint>,
    pub eps_list: Vec<f64>,
    /// Nodes per axis (a node budget `resolution^3` for the solid torus).
    pub resolution: usize,
    /// Disk or ball radius.
    pub radius: f64,
    pub solver: SolverOptions,
    pub seed: u64,
    /// Amplitude of the seeded perturbation applied to the initial field.
    pub noise: f64,
    pub grid_trials: usize,
    /// Extraction grid size; defaults to [`singular::default_grid_size`].
    pub grid_size: Option<f64>,
    pub ball: BallParams,
    /// Input field for `certify_only`.
    pub field: Option<PathBuf>,
    /// Range `|d| ≤ norm_range` of the norm table.
    pub norm_range: i64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::DiskDegree,
            target: ManifoldKind::Circle,
            theta0: None,
            delta_star: None,
            degree: vec![1],
            points: Vec::new(),
            eps_list: vec![0.1, 0.05, 0.025],
            resolution: 128,
            radius: 1.0,
            solver: SolverOptions::default(),
            seed: 0,
            noise: 0.01,
            grid_trials: 16,
            grid_size: None,
            ball: BallParams::default(),
            field: None,
            norm_range: 4,
            output_dir: PathBuf::from("out"),
            threads: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML or JSON config, chosen by extension (JSON first otherwise).
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let parsed = match ext {
            "toml" => toml::from_str(&text).map_err(|e| Error::Config(e.to_string())),
            "json" => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string())),
            _ => serde_json::from_str(&text)
                .or_else(|_| toml::from_str(&text))
                .map_err(|e: toml::de::Error| Error::Config(e.to_string())),
        }?;
        Ok(parsed)
    }

    pub fn target_manifold(&self) -> Result<TargetManifold> {
        TargetManifold::with_params(self.target, self.theta0, self.delta_star)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.ball.validate()?;
        let needs_eps = self.experiment != ExperimentKind::NormTable;
        if needs_eps && self.eps_list.is_empty() {
            return Err(Error::Config("eps_list is empty".into()));
        }
        if self.eps_list.iter().any(|&e| !(e > 0.0 && e < 0.5)) {
            return Err(Error::Config("every ε must lie in (0, 1/2)".into()));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("eps_list must be strictly decreasing".into()));
        }
        if self.resolution < 8 {
            return Err(Error::Config("resolution must be at least 8".into()));
        }
        if !(self.radius > 0.0) || self.noise < 0.0 || self.grid_trials == 0 {
            return Err(Error::Config(
                "radius must be positive, noise nonnegative, grid_trials nonzero".into(),
            ));
        }
        if self.grid_size.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::Config("grid_size must be positive".into()));
        }
        let group = self.target_manifold()?.group();
        match self.experiment {
            ExperimentKind::DiskDegree => {
                GroupElement::from_ints(group.kind, &self.degree)
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            ExperimentKind::MinimalConnection => {
                if self.points.is_empty() {
                    return Err(Error::Config(
                        "minimal_connection needs boundary points".into(),
                    ));
                }
            }
            ExperimentKind::CertifyOnly => {
                if self.field.is_none() {
                    return Err(Error::Config("certify_only needs a field file".into()));
                }
            }
            ExperimentKind::SolidTorus | ExperimentKind::NormTable => {}
        }
        Ok(())
    }

    fn datum(&self) -> Result<Field> {
        let target = self.target_manifold()?;
        let spec = match self.experiment {
            ExperimentKind::DiskDegree => DatumSpec::Disk {
                class: self.degree.clone(),
                radius: self.radius,
                nodes: self.resolution,
            },
            ExperimentKind::MinimalConnection => DatumSpec::SpherePoints {
                radius: self.radius,
                nodes: self.resolution,
                points: self.points.clone(),
            },
            ExperimentKind::SolidTorus => DatumSpec::SolidTorus {
                nodes: self.resolution,
            },
            ExperimentKind::CertifyOnly => {
                return Field::read_glf(self.field.as_ref().expect("validated"))
            }
            ExperimentKind::NormTable => {
                return Err(Error::Config("norm_table has no datum".into()))
            }
        };
        make_boundary_datum(&spec, target)
    }

    fn thread_count(&self) -> Option<usize> {
        let env = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0);
        match (self.threads, env) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// Grid spacing must resolve the smallest ε at least coarsely.
fn check_resolution(spacing: f64, eps: f64, warnings: &mut Vec<String>) -> Result<()> {
    if spacing > 2.0 * eps {
        return Err(Error::Config(format!(
            "grid spacing {spacing:.4} exceeds 2ε = {}",
            2.0 * eps
        )));
    }
    if spacing > eps / 4.0 {
        warnings.push(format!(
            "grid spacing {spacing:.4} is coarser than ε/4 at ε = {eps}"
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub eps: f64,
    pub energy: f64,
    pub normalized: f64,
    pub cert_bound: Option<f64>,
    pub chain_mass: f64,
    pub total_class: Option<GroupElement>,
    pub support_dist: f64,
    pub runtime_s: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Number of nonzero cells of the extracted chain.
    pub n_cells: usize,
    /// Intersection index with the meridian disk (solid torus).
    pub intersection: Option<GroupElement>,
    /// Energy of the regularised harmonic competitor (disk, circle target).
    pub competitor_energy: Option<f64>,
    pub grid_h: f64,
    pub notes: Vec<String>,
    pub error: Option<String>,
}

impl ExperimentRow {
    fn failed(eps: f64, err: &Error, runtime_s: f64) -> Self {
        ExperimentRow {
            eps,
            energy: f64::NAN,
            normalized: f64::NAN,
            cert_bound: None,
            chain_mass: f64::NAN,
            total_class: None,
            support_dist: f64::NAN,
            runtime_s,
            iterations: 0,
            converged: false,
            n_cells: 0,
            intersection: None,
            competitor_energy: None,
            grid_h: f64::NAN,
            notes: Vec::new(),
            error: Some(err.to_string()),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.eps,
            self.energy,
            self.normalized,
            opt(self.cert_bound),
            self.chain_mass,
            self.total_class.map_or(String::new(), |c| c.to_string()),
            self.support_dist,
            self.runtime_s
        )
    }
}

/// Everything a row produces besides its summary line.
pub struct RowArtifacts {
    pub field: Field,
    pub chain: PolyChain,
    pub trace: Vec<TraceRow>,
    pub certificate: Option<LowerBoundCertificate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ExperimentRow>,
    pub prediction: Option<ChainJson>,
    pub prediction_mass: Option<f64>,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.ok())
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }
}

/// Vertices of the regular `q`-gon minimising the interaction energy of `q`
/// unit vortices in a disk of radius `r` with degree-`q` boundary data:
/// radius `r ((q-1)/(3q-1))^{1/(2q)}`, first vertex on the positive x-axis.
pub fn vortex_polygon(q: usize, r: f64, angle: f64) -> Vec<Point> {
    if q == 1 {
        return vec![[0.0; 3]];
    }
    let qf = q as f64;
    let rho = r * ((qf - 1.0) / (3.0 * qf - 1.0)).powf(1.0 / (2.0 * qf));
    (0..q)
        .map(|j| {
            let a = angle + 2.0 * std::f64::consts::PI * j as f64 / qf;
            [rho * a.cos(), rho * a.sin(), 0.0]
        })
        .collect()
}

/// Circle `ρ = major - minor` in the plane `z = 0`, oriented by increasing angle.
pub fn inner_equator(group: GroupKind, mult: GroupElement) -> Result<PolyChain> {
    let r = TORUS_MAJOR - TORUS_MINOR;
    let pt = |j: usize| {
        let a = 2.0 * std::f64::consts::PI * j as f64 / CIRCLE_SEGMENTS as f64;
        [r * a.cos(), r * a.sin(), 0.0]
    };
    let cells = (0..CIRCLE_SEGMENTS)
        .map(|j| ChainCell::segment(pt(j), pt(j + 1), mult))
        .collect();
    PolyChain::new(1, 3, group, cells)
}

/// The mass-minimising chain the extracted chains are compared against.
pub fn predict_plateau(cfg: &ExperimentConfig) -> Result<PolyChain> {
    let target = cfg.target_manifold()?;
    let group = target.group();
    match cfg.experiment {
        ExperimentKind::DiskDegree => {
            let sigma = GroupElement::from_ints(group.kind, &cfg.degree)?;
            let parts = group.optimal_decomposition(sigma)?;
            let pts = vortex_polygon(parts.len().max(1), cfg.radius, 0.0);
            let cells = parts
                .iter()
                .zip(pts)
                .map(|(&g, p)| ChainCell::point(p, g))
                .collect();
            PolyChain::new(0, 2, group.kind, cells)
        }
        ExperimentKind::MinimalConnection => {
            let mut cells = Vec::new();
            for sp in &cfg.points {
                let l = (sp.at[0].powi(2) + sp.at[1].powi(2) + sp.at[2].powi(2)).sqrt();
                let p = [
                    cfg.radius * sp.at[0] / l,
                    cfg.radius * sp.at[1] / l,
                    cfg.radius * sp.at[2] / l,
                ];
                cells.push(ChainCell::point(
                    p,
                    GroupElement::from_ints(group.kind, &sp.class)?,
                ));
            }
            PolyChain::new(0, 3, group.kind, cells)?.minimal_connection()
        }
        ExperimentKind::SolidTorus => {
            if target.kind != ManifoldKind::Circle {
                return Err(Error::UnsupportedPrediction(
                    "solid_torus needs the circle target".into(),
                ));
            }
            inner_equator(group.kind, GroupElement::Int(1))
        }
        ExperimentKind::NormTable => Err(Error::UnsupportedPrediction("norm_table".into())),
        ExperimentKind::CertifyOnly => Err(Error::UnsupportedPrediction("certify_only".into())),
    }
}

/// Support distance of a 0-chain to the predicted polygon, minimised over the
/// rotations that put a predicted point at the angle of an extracted one.
fn aligned_support_distance(chain: &PolyChain, prediction: &PolyChain, radius: f64) -> Result<f64> {
    let q = prediction.cells.len();
    if q <= 1 || chain.is_empty() {
        return Ok(chain.support_distance(prediction));
    }
    let mut best = f64::INFINITY;
    for c in &chain.cells {
        let a = c.geom[0][1].atan2(c.geom[0][0]);
        let cells = vortex_polygon(q, radius, a)
            .into_iter()
            .zip(&prediction.cells)
            .map(|(p, pc)| ChainCell::point(p, pc.mult))
            .collect();
        let rotated = PolyChain::new(0, 2, prediction.group, cells)?;
        best = best.min(chain.support_distance(&rotated));
    }
    Ok(best)
}

/// Circle-valued map with unit vortices at the chain's points, harmonic phase
/// matching `e^{idθ}` on the disk boundary, and modulus `min(dist/ε, 1)` to
/// the vortex set. Dirichlet nodes keep the datum values.
pub fn disk_competitor(datum: &Field, chain: &PolyChain, radius: f64, eps: f64) -> Result<Field> {
    if datum.target.kind != ManifoldKind::Circle || datum.dims != 2 {
        return Err(Error::Dimension(
            "the disk competitor needs a planar circle-valued field".into(),
        ));
    }
    let mut vortices = Vec::new();
    for c in &chain.cells {
        let d = c.mult.coord(0);
        let step = d.signum();
        for _ in 0..d.abs() {
            vortices.push((c.geom[0], step as f64));
        }
    }
    let r2 = radius * radius;
    let mut f = datum.clone();
    for i in 0..f.num_nodes() {
        if f.dirichlet[i] {
            continue;
        }
        let x = f.position(i);
        let mut phase = 0.0;
        for (a, s) in &vortices {
            let direct = (x[1] - a[1]).atan2(x[0] - a[0]);
            let re = 1.0 - (x[0] * a[0] + x[1] * a[1]) / r2;
            let im = -(x[0] * a[1] - x[1] * a[0]) / r2;
            phase += s * (direct - im.atan2(re));
        }
        f.set_value(i, &[phase.cos(), phase.sin()]);
    }
    let mut g = f.regularize(chain, eps);
    for i in 0..g.num_nodes() {
        if g.dirichlet[i] {
            let v = datum.value(i).to_vec();
            g.set_value(i, &v);
        }
    }
    Ok(g)
}

/// Cells whose midpoint lies inside the domain.
fn chain_in_domain(chain: &PolyChain, domain: &DomainKind) -> Result<PolyChain> {
    let cells = chain
        .cells
        .iter()
        .filter(|c| {
            let n = c.geom.len() as f64;
            let mut m = [0.0; 3];
            for p in &c.geom {
                for k in 0..3 {
                    m[k] += p[k] / n;
                }
            }
            domain.contains(&m, chain.ambient_dim)
        })
        .cloned()
        .collect();
    PolyChain::new(chain.dim, chain.ambient_dim, chain.group, cells)
}

/// Meridian disk `{y = 0, x > 0}` of the solid torus, widened by `margin`.
pub fn meridian_disk(margin: f64) -> Disk {
    Disk {
        center: [TORUS_MAJOR, 0.0, 0.0],
        normal: [0.0, 1.0, 0.0],
        radius: TORUS_MINOR + margin,
    }
}

/// Offset batches tried before giving up on an admissible extraction grid.
pub const GRID_BATCHES: u64 = 4;

/// Chooses a grid among `grid_trials` offsets and extracts the chain; if the
/// best offset still fails the skeleton check, a fresh batch is drawn.
fn extract_with_retries(
    field: &Field,
    h: f64,
    cfg: &ExperimentConfig,
    eps: f64,
    notes: &mut Vec<String>,
) -> Result<(SingularGrid, PolyChain)> {
    let y = vec![0.0; field.m()];
    let mut last = None;
    for batch in 0..GRID_BATCHES {
        let seed = cfg.seed.wrapping_add(batch);
        let grid = singular::choose_grid(
            field,
            h,
            cfg.grid_trials,
            eps,
            seed,
            singular::SKELETON_PENALTY,
        )?;
        match singular::extract_chain(field, &grid, &y) {
            Ok(chain) => {
                if batch > 0 {
                    notes.push(format!(
                        "extraction grid found in offset batch {}",
                        batch + 1
                    ));
                }
                return Ok((grid, chain));
            }
            Err(e @ Error::SkeletonTooClose { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one batch"))
}

/// Runs one ε-row of the experiment.
pub fn run_row(
    cfg: &ExperimentConfig,
    eps: f64,
    prediction: Option<&PolyChain>,
) -> Result<(ExperimentRow, RowArtifacts)> {
    let start = Instant::now();
    let mut notes = Vec::new();
    let datum = cfg.datum()?;
    check_resolution(datum.spacing, eps, &mut notes)?;

    let (field, trace, iterations, converged) = if cfg.experiment == ExperimentKind::CertifyOnly {
        (datum.clone(), Vec::new(), 0, true)
    } else {
        let mut init = datum.clone();
        init.perturb(cfg.seed, cfg.noise);
        let out = energy::minimize(&init, eps, &cfg.solver)?;
        if out.stalled {
            notes.push("minimizer stalled at round-off".into());
        }
        (out.field, out.trace, out.iterations, out.converged)
    };
    let report = energy::energy(&field, eps);

    let h = cfg
        .grid_size
        .unwrap_or_else(|| singular::default_grid_size(&field, eps));
    let (grid, chain) = extract_with_retries(&field, h, cfg, eps, &mut notes)?;

    let certificate = match field.dims {
        2 => match lowerbound::ball_construction(&field, eps, &cfg.ball) {
            Ok(c) => Some(c),
            Err(e) => {
                notes.push(format!("no certificate: {e}"));
                None
            }
        },
        _ => None,
    };
    let mut cert_bound = certificate.as_ref().map(|c| c.certified_bound);
    if matches!(field.domain, DomainKind::SolidTorus { .. }) {
        match lowerbound::sliced_bound(&field, eps, &cfg.ball, lowerbound::default_slices()) {
            Ok((b, _)) => cert_bound = Some(b),
            Err(e) => notes.push(format!("no sliced certificate: {e}")),
        }
    }

    let compared = if cfg.experiment == ExperimentKind::MinimalConnection {
        chain_in_domain(&chain, &field.domain)?
    } else {
        chain.clone()
    };
    let support_dist = match prediction {
        Some(p) if cfg.experiment == ExperimentKind::DiskDegree => {
            aligned_support_distance(&compared, p, cfg.radius)?
        }
        Some(p) => compared.support_distance(p),
        None => f64::NAN,
    };
    let intersection = if matches!(field.domain, DomainKind::SolidTorus { .. }) {
        match chain.intersection_index(&meridian_disk(grid.h)) {
            Ok(i) => Some(i),
            Err(e) => {
                notes.push(format!("intersection index: {e}"));
                None
            }
        }
    } else {
        None
    };
    let competitor_energy = if cfg.experiment == ExperimentKind::DiskDegree
        && field.target.kind == ManifoldKind::Circle
    {
        let comp = disk_competitor(&datum, &chain, cfg.radius, eps)?;
        Some(energy::energy(&comp, eps).total)
    } else {
        None
    };

    let row = ExperimentRow {
        eps,
        energy: report.total,
        normalized: report.normalized,
        cert_bound,
        chain_mass: compared.mass(),
        total_class: Some(chain.total_class()),
        support_dist,
        runtime_s: start.elapsed().as_secs_f64(),
        iterations,
        converged,
        n_cells: chain.cells.len(),
        intersection,
        competitor_energy,
        grid_h: grid.h,
        notes,
        error: None,
    };
    Ok((
        row,
        RowArtifacts {
            field,
            chain,
            trace,
            certificate,
        },
    ))
}

/// `|σ|*`, `E_min` and an optimal decomposition for every element of the
/// group with coordinates in `[-range, range]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub element: GroupElement,
    pub e_min: f64,
    pub norm: f64,
    pub decomposition: Vec<GroupElement>,
}

pub fn norm_table(kind: GroupKind, range: i64) -> Result<Vec<NormRow>> {
    let g = CoefficientGroup::get(kind);
    g.elements_within(range)
        .into_iter()
        .map(|s| {
            Ok(NormRow {
                element: s,
                e_min: g.e_min(s)?,
                norm: g.norm(s)?,
                decomposition: g.optimal_decomposition(s)?,
            })
        })
        .collect()
}

pub fn norm_table_csv(rows: &[NormRow]) -> String {
    let mut s = String::from("element,e_min,norm,decomposition\n");
    for r in rows {
        let parts: Vec<String> = r.decomposition.iter().map(|g| g.to_string()).collect();
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.element,
            r.e_min,
            r.norm,
            parts.join(" ")
        ));
    }
    s
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for t in trace {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.iter, t.energy, t.dirichlet, t.potential, t.grad_norm, t.step
        ));
    }
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Runs every ε-row, then writes the config, per-row artifacts, `report.json`
/// and `summary.csv` into the output directory. Row failures are recorded in
/// the report rather than returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), cfg)?;

    let group = cfg.target_manifold()?.group();
    if cfg.experiment == ExperimentKind::NormTable {
        let rows = norm_table(group.kind, cfg.norm_range)?;
        fs::write(dir.join("norm_table.csv"), norm_table_csv(&rows))?;
        let report = ExperimentReport {
            config: cfg.clone(),
            rows: Vec::new(),
            prediction: None,
            prediction_mass: None,
            warnings: Vec::new(),
        };
        write_json(&dir.join("report.json"), &report)?;
        fs::write(dir.join("summary.csv"), report.summary_csv())?;
        return Ok(report);
    }

    let mut warnings = Vec::new();
    let prediction = match predict_plateau(cfg) {
        Ok(p) => Some(p),
        Err(Error::UnsupportedPrediction(_)) => None,
        Err(e) => return Err(e),
    };
    if let Some(p) = &prediction {
        p.write_json(&dir.join("prediction.json"))?;
    }

    let work = || -> Vec<(ExperimentRow, Option<RowArtifacts>)> {
        cfg.eps_list
            .par_iter()
            .map(|&eps| {
                let t = Instant::now();
                match run_row(cfg, eps, prediction.as_ref()) {
                    Ok((r, a)) => (r, Some(a)),
                    Err(e) => (
                        ExperimentRow::failed(eps, &e, t.elapsed().as_secs_f64()),
                        None,
                    ),
                }
            })
            .collect()
    };
    let results = match cfg.thread_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    };

    let mut rows = Vec::new();
    for (row, art) in results {
        if let Some(a) = art {
            let tag = format!("eps{}", row.eps);
            fs::write(dir.join(format!("trace_{tag}.csv")), trace_csv(&a.trace))?;
            a.chain.write_json(&dir.join(format!("chain_{tag}.json")))?;
            a.field.write_glf(&dir.join(format!("field_{tag}.glf")))?;
            if let Some(c) = &a.certificate {
                write_json(&dir.join(format!("cert_{tag}.json")), c)?;
            }
        }
        for n in &row.notes {
            warnings.push(format!("ε = {}: {n}", row.eps));
        }
        rows.push(row);
    }
    let report = ExperimentReport {
        config: cfg.clone(),
        rows,
        prediction_mass: prediction.as_ref().map(|p| p.mass()),
        prediction: prediction.as_ref().map(|p| p.to_json()),
        warnings,
    };
    write_json(&dir.join("report.json"), &report)?;
    fs::write(dir.join("summary.csv"), report.summary_csv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_radius_for_two_vortices() {
        let p = vortex_polygon(2, 1.0, 0.0);
        assert!((p[0][0] - 5f64.powf(-0.25)).abs() < 1e-12);
        assert!((p[1][0] + 5f64.powf(-0.25)).abs() < 1e-12);
    }

    #[test]
    fn disk_prediction_masses() {
        let mut cfg = ExperimentConfig {
            degree: vec![2],
            ..Default::default()
        };
        let p = predict_plateau(&cfg).unwrap();
        assert_eq!(p.cells.len(), 2);
        assert!((p.mass() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        cfg.degree = vec![0];
        assert!(predict_plateau(&cfg).unwrap().is_empty());
    }

    #[test]
    fn equator_mass_close_to_two_pi_squared() {
        let c = inner_equator(GroupKind::Circle, GroupElement::Int(1)).unwrap();
        let want = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
        assert!((c.mass() - want).abs() / want < 1e-4);
    }

    #[test]
    fn eps_list_must_decrease() {
        let cfg = ExperimentConfig {
            eps_list: vec![0.05, 0.1],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
