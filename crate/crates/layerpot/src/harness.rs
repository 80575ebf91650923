//! Experiment configuration, task dispatch, report bundles and regression
//! baselines.
//!
//! A run produces a [`ReportBundle`]: a summary with one status line per
//! invariant, CSV tables and a JSON diagnostics dump. Bundles are written
//! to a temporary sibling directory and renamed into place.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeff::{dual_hat_check, hat_involution_check, Family, FamilyConfig, C64};
use crate::error::{Error, Result};
use crate::funcalc::{
    complementarity_residual, duality_residual, idempotence_residual, intertwining_residuals, ode_residual, sector_excess,
    Calculus, OperatorKind, Sector, Semigroup, Side, SpectralSplit,
};
use crate::fundsol::{
    annular_decay, distributional_identity_check, lambda_closedness_residual, laplace_double_layer_quadrature, lipschitz_invariance_check,
    potential_from_gradient, pointwise_bound_check, solid_annulus_decay, tdep_distributional_check, tdep_fundamental_solution,
    truncated_cone, annulus_masses, loglog_slope, BaseCoefficients, PoleKernelSolver, TestBump,
};
use crate::layers::{coefficient_stability, kkpt_sweep, perturb, log_space, nontangential_maximal, LayerPotentials, WhitneyParams};
use crate::torus::{garding_check, random_field, Fourier, GridField, TorusGrid};

/// Radius of the coefficient ball in the stability check.
pub const STABILITY_EPS: f64 = 1e-2;

/// Thread-count variable; the only environment input.
pub const THREADS_ENV: &str = "LAYERPOT_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Verify,
    Dirichlet,
    Neumann,
    KkptSweep,
    Estimates,
    Fundsol,
    TdepFundsol,
}

impl Task {
    pub const ALL: [Task; 7] = [Task::Verify, Task::Dirichlet, Task::Neumann, Task::KkptSweep, Task::Estimates, Task::Fundsol, Task::TdepFundsol];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Verify => "verify",
            Task::Dirichlet => "dirichlet",
            Task::Neumann => "neumann",
            Task::KkptSweep => "kkpt-sweep",
            Task::Estimates => "estimates",
            Task::Fundsol => "fundsol",
            Task::TdepFundsol => "tdep-fundsol",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| Error::config("task", format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Operator identities and exact oracles.
    pub identity: f64,
    /// Hat-transform algebra per sample.
    pub algebra: f64,
    /// `t -> 0` limit of the semigroup.
    pub limit: f64,
    /// Boundary solve residuals.
    pub solve: f64,
    /// Fundamental-solution quadrature against the functional calculus.
    pub reciprocity: f64,
    /// Distributional identity and curl of the lifted kernel.
    pub distributional: f64,
    /// Closedness of the `Lambda` one-form.
    pub closedness: f64,
    /// Allowed deviation of decay slopes.
    pub slope: f64,
    /// Relative drift of estimate constants under refinement.
    pub refinement: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: 1e-9,
            algebra: 1e-10,
            limit: 1e-4,
            solve: 1e-8,
            reciprocity: 1e-6,
            distributional: 1e-6,
            closedness: 1e-6,
            slope: 0.3,
            refinement: 0.1,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<()> {
        let all = [
            ("identity", self.identity),
            ("algebra", self.algebra),
            ("limit", self.limit),
            ("solve", self.solve),
            ("reciprocity", self.reciprocity),
            ("distributional", self.distributional),
            ("closedness", self.closedness),
            ("slope", self.slope),
            ("refinement", self.refinement),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("tolerances.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

/// One trigonometric term `cos_coef cos(k.x) + sin_coef sin(k.x)` with
/// `k` in units of `2 pi / L`, placed in system component `comp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub wave: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
    #[serde(default)]
    pub comp: usize,
}

/// Boundary data. Random data is a seeded band-limited trigonometric
/// polynomial, so it is the same function on every grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryData {
    Trig { terms: Vec<TrigTerm> },
    Random { seed: u64, max_mode: u32 },
}

impl Default for BoundaryData {
    fn default() -> Self {
        BoundaryData::Trig { terms: vec![TrigTerm { wave: vec![1], cos: 1.0, sin: 0.0, comp: 0 }] }
    }
}

impl BoundaryData {
    fn terms(&self, grid: &TorusGrid) -> Vec<TrigTerm> {
        match self {
            BoundaryData::Trig { terms } => terms.clone(),
            BoundaryData::Random { seed, max_mode } => {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                let k = *max_mode as i64;
                let mut out = Vec::new();
                let waves: Vec<Vec<i64>> = if grid.n == 1 {
                    (1..=k).map(|a| vec![a]).collect()
                } else {
                    (0..=k).flat_map(|a| (-k..=k).map(move |b| vec![a, b])).filter(|w| w[0] > 0 || (w[0] == 0 && w[1] > 0)).collect()
                };
                for comp in 0..grid.m {
                    for w in &waves {
                        let decay = 1.0 / (1.0 + w.iter().map(|v| (v * v) as f64).sum::<f64>());
                        out.push(TrigTerm { wave: w.clone(), cos: rng.gen_range(-1.0..1.0) * decay, sin: rng.gen_range(-1.0..1.0) * decay, comp });
                    }
                }
                out
            }
        }
    }

    pub fn validate(&self, grid: &TorusGrid) -> Result<()> {
        for (i, t) in self.terms(grid).iter().enumerate() {
            if t.wave.len() != grid.n {
                return Err(Error::config(format!("data.terms[{i}].wave"), format!("needs {} entries", grid.n)));
            }
            if t.comp >= grid.m {
                return Err(Error::config(format!("data.terms[{i}].comp"), format!("must be below m = {}", grid.m)));
            }
            if t.wave.iter().all(|&k| k == 0) {
                return Err(Error::config(format!("data.terms[{i}].wave"), "constant modes are excluded from boundary data"));
            }
            if t.wave.iter().any(|&k| 2 * k.unsigned_abs() as usize >= grid.size) {
                return Err(Error::config(format!("data.terms[{i}].wave"), "mode is not resolved by the grid"));
            }
        }
        Ok(())
    }

    /// Samples on an `m`-component boundary field.
    pub fn sample(&self, grid: &TorusGrid) -> GridField {
        let terms = self.terms(grid);
        let mut f = GridField::zeros(grid, grid.m);
        let scale = 2.0 * PI / grid.length;
        for p in 0..grid.points() {
            let x = grid.coords(p);
            for t in &terms {
                let phase: f64 = t.wave.iter().zip(&x).map(|(k, xi)| *k as f64 * scale * xi).sum();
                f.values[p * grid.m + t.comp] += C64::new(t.cos * phase.cos() + t.sin * phase.sin(), 0.0);
            }
        }
        f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pole {
    pub t0: f64,
    /// Grid index of the pole.
    pub x0: usize,
    #[serde(default)]
    pub column: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; must agree with the task named on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub grid: TorusGrid,
    #[serde(default = "default_family")]
    pub family: FamilyConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Heights for solution slices and sup norms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heights: Option<Vec<f64>>,
    /// `k` ladder for the KKPT sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<BoundaryData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole: Option<Pole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseCoefficients>,
}

fn default_family() -> FamilyConfig {
    FamilyConfig::of(Family::Identity)
}

impl ExperimentConfig {
    pub fn new(task: Task, grid: TorusGrid, family: FamilyConfig) -> Self {
        Self {
            task: Some(task),
            grid,
            family,
            tolerances: Tolerances::default(),
            seed: 0,
            out: None,
            heights: None,
            k: None,
            data: None,
            pole: None,
            radii: None,
            t_max: None,
            base: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks everything `run` relies on, with field-level messages.
    pub fn validate(&self, task: Task) -> Result<()> {
        if let Some(t) = self.task {
            if t != task {
                return Err(Error::config("task", format!("config names `{t}` but `{task}` was requested")));
            }
        }
        self.grid.validate()?;
        self.tolerances.validate()?;
        if let Some(h) = &self.heights {
            if h.is_empty() || h.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                return Err(Error::config("heights", "need at least one positive height"));
            }
        }
        if let Some(d) = &self.data {
            d.validate(&self.grid)?;
        }
        match task {
            Task::KkptSweep => {
                if self.grid.n != 1 || self.grid.m != 1 {
                    return Err(Error::config("grid", "the KKPT sweep needs n = 1 and m = 1"));
                }
                let k = self.k.as_ref().ok_or_else(|| Error::config("k", "required for kkpt-sweep"))?;
                if k.is_empty() || k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::config("k", "need nonnegative finite values"));
                }
            }
            Task::Fundsol => {
                if self.grid.n != 1 {
                    return Err(Error::config("grid", "fundsol runs on n = 1 grids; use tdep-fundsol for n = 2"));
                }
                let pole = self.pole()?;
                if !(pole.t0 > 0.0) {
                    return Err(Error::config("pole.t0", "must be positive"));
                }
                if pole.x0 >= self.grid.points() || pole.column >= self.grid.m {
                    return Err(Error::config("pole", "x0 must be a grid index and column below m"));
                }
                let radii = self.radii();
                if radii.len() < 3 || radii.iter().any(|r| !(*r > 0.0 && *r <= self.grid.length / 4.0)) {
                    return Err(Error::config("radii", "need at least three radii in (0, L/4]"));
                }
            }
            Task::TdepFundsol => {
                if self.grid.n != 2 || self.grid.m != 1 {
                    return Err(Error::config("grid", "tdep-fundsol lifts an n = 2, m = 1 base"));
                }
                if self.family.family != Family::Identity {
                    return Err(Error::config("family", "tdep-fundsol takes its coefficients from `base`"));
                }
                self.base().lifted_field(&self.grid).map(|_| ())?;
                if let Some(t) = self.t_max {
                    if !(t > 0.0) {
                        return Err(Error::config("t_max", "must be positive"));
                    }
                }
                if let Some(p) = &self.pole {
                    if p.x0 >= self.grid.points() || p.column != 0 {
                        return Err(Error::config("pole", "x0 must be a grid index and column 0"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn pole(&self) -> Result<Pole> {
        Ok(self.pole.clone().unwrap_or(Pole { t0: 1.0, x0: 0, column: 0 }))
    }

    fn radii(&self) -> Vec<f64> {
        self.radii.clone().unwrap_or_else(|| [128.0, 64.0, 32.0].iter().map(|d| self.grid.length / d).collect())
    }

    fn base(&self) -> BaseCoefficients {
        self.base.clone().unwrap_or_else(BaseCoefficients::identity)
    }

    fn heights(&self) -> Vec<f64> {
        self.heights.clone().unwrap_or_else(|| log_space(self.grid.length / 256.0, self.grid.length, 16))
    }

    /// SHA-256 of the canonical JSON of everything that determines the
    /// numbers: the output directory and the tolerances are left out.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
            map.remove("tolerances");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Invariant {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub grid_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: Task,
    pub family: String,
    pub grid: TorusGrid,
    pub pass: bool,
    pub invariants: Vec<Invariant>,
    pub constants: BTreeMap<String, Measured>,
    pub slopes: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
pub struct ReportBundle {
    pub summary: Summary,
    /// `(file name, CSV text)`.
    pub tables: Vec<(String, String)>,
    pub diagnostics: serde_json::Value,
}

const KERNEL_NOTE: &str = "boundary data and solutions are taken modulo constants: the constant modes form the kernel of D on the torus and are excluded";

struct Recorder {
    invariants: Vec<Invariant>,
    constants: BTreeMap<String, Measured>,
    slopes: BTreeMap<String, f64>,
    tables: Vec<(String, String)>,
    diagnostics: serde_json::Map<String, serde_json::Value>,
    notes: Vec<String>,
}

impl Recorder {
    fn new() -> Self {
        Self {
            invariants: Vec::new(),
            constants: BTreeMap::new(),
            slopes: BTreeMap::new(),
            tables: Vec::new(),
            diagnostics: serde_json::Map::new(),
            notes: vec![KERNEL_NOTE.to_string()],
        }
    }

    /// `value <= tolerance`.
    fn below(&mut self, name: &str, value: f64, tolerance: f64) {
        self.invariants.push(Invariant { name: name.into(), value, tolerance, pass: value <= tolerance });
    }

    fn holds(&mut self, name: &str, ok: bool) {
        self.invariants.push(Invariant { name: name.into(), value: if ok { 0.0 } else { 1.0 }, tolerance: 0.0, pass: ok });
    }

    fn constant(&mut self, name: &str, value: f64, grid_size: usize) {
        self.constants.insert(name.into(), Measured { value, grid_size });
    }

    fn table(&mut self, name: &str, text: String) {
        self.tables.push((name.into(), text));
    }

    fn diag(&mut self, key: &str, v: impl Serialize) {
        self.diagnostics.insert(key.into(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
    }
}

/// Validates and runs one task.
pub fn run(task: Task, config: &ExperimentConfig) -> Result<ReportBundle> {
    config.validate(task)?;
    let mut rec = Recorder::new();
    match task {
        Task::Verify => verify(config, &mut rec)?,
        Task::Dirichlet => boundary_problem(config, &mut rec, false)?,
        Task::Neumann => boundary_problem(config, &mut rec, true)?,
        Task::KkptSweep => kkpt(config, &mut rec)?,
        Task::Estimates => estimates(config, &mut rec)?,
        Task::Fundsol => fundsol(config, &mut rec)?,
        Task::TdepFundsol => tdep(config, &mut rec)?,
    }
    let family = if task == Task::TdepFundsol { "lifted_base".to_string() } else { config.family.family.name().to_string() };
    let summary = Summary {
        task,
        family,
        grid: config.grid.clone(),
        pass: rec.invariants.iter().all(|i| i.pass),
        invariants: rec.invariants,
        constants: rec.constants,
        slopes: rec.slopes,
        notes: rec.notes,
        provenance: Provenance { config_hash: config.hash(), code_version: env!("CARGO_PKG_VERSION").to_string(), threads: threads() },
    };
    Ok(ReportBundle { summary, tables: rec.tables, diagnostics: serde_json::Value::Object(rec.diagnostics) })
}

fn rel(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Seeded random field with Gaussian-damped Fourier modes.
fn smooth_field(grid: &TorusGrid, comps: usize, seed: u64) -> GridField {
    let f = random_field(grid, comps, seed);
    let values = Fourier::new(grid).multiplier(&f.values, comps, comps, |xi, v, out| {
        let damp = (-xi.iter().map(|x| x * x).sum::<f64>() / 4.0).exp();
        for (o, a) in out.iter_mut().zip(v) {
            *o = a * damp;
        }
    });
    GridField { grid: grid.clone(), comps, values }
}

fn mean_zero(grid: &TorusGrid, f: &GridField) -> GridField {
    GridField { grid: grid.clone(), comps: f.comps, values: Fourier::new(grid).remove_mean(&f.values, f.comps) }
}

fn verify(config: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let grid = &config.grid;
    let tol = &config.tolerances;
    let field = config.family.build(grid)?;
    let mut inv: f64 = 0.0;
    let mut dual: f64 = 0.0;
    for a in &field.samples {
        inv = inv.max(hat_involution_check(a)?);
        dual = dual.max(dual_hat_check(a)?);
    }
    rec.below("hat_involution", inv, tol.algebra);
    rec.below("hat_adjoint_duality", dual, tol.algebra);
    let garding = garding_check(&field, 8, config.seed);
    rec.holds("garding_positive", garding > 0.0);
    rec.constant("kappa", field.kappa, grid.size);
    rec.constant("omega", field.omega, grid.size);

    let calc = Arc::new(Calculus::new(&field)?);
    let (rb, rd) = intertwining_residuals(&calc);
    rec.below("intertwining_b", rb, tol.identity);
    rec.below("intertwining_d", rd, tol.identity);
    rec.below("complementarity_db", complementarity_residual(&calc, OperatorKind::Db), tol.identity);
    rec.below("complementarity_bd", complementarity_residual(&calc, OperatorKind::Bd), tol.identity);
    let split = SpectralSplit { kind: OperatorKind::Db, calculus: calc.clone() };
    rec.below("idempotence", idempotence_residual(&split), tol.identity);
    rec.below("sector_containment", sector_excess(&calc), tol.identity);
    rec.below("operator_duality", duality_residual(grid, &calc.b), tol.identity);
    rec.constant("omega_observed", calc.omega_observed(), grid.size);

    // semigroup law on E+ and the t -> 0 limit
    let plus = Semigroup::new(&split, Side::Plus);
    let f = random_field(grid, grid.components(), config.seed.wrapping_add(11));
    let f = plus.apply(0.0, &f.values)?;
    let law = rel(&plus.apply(0.9, &f)?, &plus.apply(0.4, &plus.apply(0.5, &f)?)?);
    rec.below("semigroup_law", law, tol.identity);
    // strong limit on a smooth field; the operator-norm limit does not exist
    let smooth = smooth_field(grid, grid.components(), config.seed.wrapping_add(14));
    let e = plus.apply(0.0, &smooth.values)?;
    rec.below("semigroup_limit", rel(&plus.apply(1e-6 * grid.length, &e)?, &e), tol.limit);
    let h0 = mean_zero(grid, &random_field(grid, grid.m, config.seed.wrapping_add(12)));
    let v0 = calc.apply(OperatorKind::Bd, &calc.multipliers(Sector::Right, |_| C64::new(1.0, 0.0)), &h0.normal_embedding().values);
    let r1 = ode_residual(&calc, &v0, 0.5, 2e-3);
    let r2 = ode_residual(&calc, &v0, 0.5, 1e-3);
    rec.constant("ode_halving_ratio", r1 / r2, grid.size);
    rec.holds("ode_second_order", (3.0..5.0).contains(&(r1 / r2)));

    // double-layer duality through the A* calculus
    let lp = LayerPotentials::from_calculus(calc.clone());
    let star = LayerPotentials::new(&field.adjoint()?)?;
    let g0 = mean_zero(grid, &random_field(grid, grid.m, config.seed.wrapping_add(13)));
    let mut worst: f64 = 0.0;
    for t in [0.2, 0.5] {
        worst = worst.max(lp.duality_residual(&star, t, &h0, &g0)?);
    }
    rec.below("layer_duality", worst, tol.identity);

    // holomorphic dependence: the difference quotient settles as eps -> 0
    let r1 = coefficient_stability(&perturb(&field, STABILITY_EPS, config.seed)?, &field)?;
    let r2 = coefficient_stability(&perturb(&field, STABILITY_EPS / 10.0, config.seed)?, &field)?;
    rec.constant("stability_ratio", r1, grid.size);
    rec.below("stability_ratio_settles", (r1 - r2).abs() / r2.max(f64::MIN_POSITIVE), tol.refinement);
    let boundary = lp.double_layer_boundary();
    let (smin, norm) = boundary.sigma_range();
    rec.constant("double_layer_sigma_min", smin, grid.size);
    rec.constant("double_layer_norm", norm, grid.size);
    if config.family.family == Family::Identity {
        let half = faer::Scale(C64::new(0.5, 0.0)) * faer::Mat::<C64>::identity(boundary.restricted.nrows(), boundary.restricted.ncols());
        let off = (&boundary.restricted - half).singular_values().map_err(|e| Error::Decomposition(format!("{e:?}")))?[0];
        rec.below("laplace_double_layer_half", off, tol.identity);
        if grid.n == 1 && grid.m == 1 {
            let h = GridField::scalar(grid, |x| C64::new((2.0 * PI * x[0] / grid.length).cos(), 0.0));
            let mut worst: f64 = 0.0;
            for t in [0.1, 1.0] {
                let d = lp.double_layer_t(t, &h)?;
                let poisson = h.scale(C64::new(0.5 * (-2.0 * PI * t / grid.length).exp(), 0.0));
                worst = worst.max(d.sub(&poisson).l2_norm());
                // the midpoint rule resolves the kernel only a few cells above the boundary
                if t < 4.0 * grid.spacing() {
                    continue;
                }
                let q = laplace_double_layer_quadrature(grid, t, &h, 200)?;
                rec.below(&format!("laplace_kernel_quadrature_t{t}"), q.sub(&d).l2_norm() / d.l2_norm(), 1e-3);
            }
            rec.below("laplace_poisson", worst, tol.identity);
        }
    }
    rec.diag("split", split.diagnostics(grid.dofs() <= 512));
    let mut csv = String::from("index,re,im,sector\n");
    for (i, l) in calc.eigenvalues.iter().enumerate() {
        csv.push_str(&format!("{i},{:e},{:e},{:?}\n", l.re, l.im, calc.sectors[i]));
    }
    rec.table("eigenvalues.csv", csv);
    Ok(())
}

fn boundary_problem(config: &ExperimentConfig, rec: &mut Recorder, neumann: bool) -> Result<()> {
    let grid = &config.grid;
    let field = config.family.build(grid)?;
    let lp = LayerPotentials::new(&field)?;
    let phi = config.data.clone().unwrap_or_default().sample(grid);
    let heights = config.heights();
    let (label, h, residual, slices, trace) = if neumann {
        let s = lp.solve_neumann(&phi, &heights)?;
        ("neumann", s.h, s.residual, s.slices, s.trace_error)
    } else {
        let s = lp.solve_dirichlet(&phi, &heights)?;
        ("dirichlet", s.h, s.residual, s.slices, s.trace_error)
    };
    let op = if neumann { lp.neumann_operator() } else { lp.double_layer_boundary() };
    let (smin, norm) = op.sigma_range();
    rec.below("solve_residual", residual, config.tolerances.solve);
    rec.constant("sigma_min", smin, grid.size);
    rec.constant("operator_norm", norm, grid.size);
    rec.constant("trace_error", trace, grid.size);
    rec.table("data.csv", phi.to_csv());
    rec.table("density.csv", h.to_csv());
    let mut index = String::from("slice,t,u_norm,conormal_norm\n");
    for (i, s) in slices.iter().enumerate() {
        index.push_str(&format!("{i},{:e},{:e},{:e}\n", s.t, s.u.l2_norm(), s.conormal.l2_norm()));
        rec.table(&format!("u_{i:03}.csv"), s.u.to_csv());
        rec.table(&format!("conormal_{i:03}.csv"), s.conormal.to_csv());
    }
    rec.table("slices.csv", index);
    rec.diag(label, serde_json::json!({ "residual": residual, "trace_error": trace, "sigma_min": smin, "norm": norm }));
    Ok(())
}

fn kkpt(config: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let grid = &config.grid;
    let ks = config.k.clone().unwrap_or_default();
    let rows = kkpt_sweep(grid, &ks)?;
    let mut csv = String::from("k,sigma_min,norm,sigma_neumann,norm_neumann,invertible\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{}\n",
            r.k, r.sigma_double_layer, r.norm_double_layer, r.sigma_neumann, r.norm_neumann, r.double_layer_invertible
        ));
        rec.constant(&format!("sigma_min_k{}", r.k), r.sigma_double_layer, grid.size);
    }
    // NotInvertible at k = 1 is recorded as data
    let mut sorted: Vec<&crate::layers::KkptRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.k.total_cmp(&b.k));
    let below_one: Vec<&&crate::layers::KkptRow> = sorted.iter().filter(|r| r.k < 1.0).collect();
    rec.holds("sigma_min_strictly_decreasing", below_one.windows(2).all(|w| w[1].sigma_double_layer < w[0].sigma_double_layer));
    if let Some(r0) = rows.iter().find(|r| r.k == 0.0) {
        rec.below("sigma_min_at_k0", (r0.sigma_double_layer - 0.5).abs(), config.tolerances.identity);
    }
    rec.table("kkpt.csv", csv);
    rec.diag("kkpt", &rows);
    Ok(())
}

/// Estimate constants of one family on one grid.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateConstants {
    pub grid_size: usize,
    pub sup_norm: f64,
    pub square_function: f64,
    pub square_tail: f64,
    pub nontangential: f64,
}

/// Sup-in-`t` norm, square function and `N~*` constants of the double
/// layer for fixed boundary data, all relative to `|h|`.
pub fn estimate_constants(family: &FamilyConfig, grid: &TorusGrid, data: &BoundaryData) -> Result<EstimateConstants> {
    let field = family.build(grid)?;
    let lp = LayerPotentials::new(&field)?;
    let h = data.sample(grid);
    let hn = h.l2_norm();
    let l = grid.length;
    let heights = log_space(5e-4 * l, 2.0 * l, 48);
    let sup = lp.uniform_bound(&h, &heights)?;
    let sq = lp.square_function_norm(&h, &log_space(1e-4 * l, 10.0 * l, 200))?;
    let slices: Vec<(f64, GridField)> = heights.iter().map(|&t| Ok((t, lp.double_layer_t(t, &h)?))).collect::<Result<_>>()?;
    let refs: Vec<(f64, &GridField)> = slices.iter().map(|(t, f)| (*t, f)).collect();
    let params = WhitneyParams::new(l, 24);
    let nt = nontangential_maximal(&refs, &params)?;
    Ok(EstimateConstants { grid_size: grid.size, sup_norm: sup, square_function: sq.ratio.sqrt(), square_tail: sq.tail_bound, nontangential: nt.l2_norm() / hn })
}

fn estimates(config: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let grid = &config.grid;
    let data = config.data.clone().unwrap_or(BoundaryData::Random { seed: config.seed, max_mode: 4 });
    let cap = if grid.n == 1 { crate::torus::MAX_POINTS_1D } else { crate::torus::MAX_POINTS_2D };
    let (coarse, fine) = if 2 * grid.size <= cap { (grid.clone(), grid.with_size(2 * grid.size)?) } else { (grid.with_size(grid.size / 2)?, grid.clone()) };
    data.validate(&coarse)?;
    let a = estimate_constants(&config.family, &coarse, &data)?;
    let b = estimate_constants(&config.family, &fine, &data)?;
    let mut csv = String::from("N,sup_norm,square_function,square_tail,nontangential\n");
    for c in [&a, &b] {
        csv.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", c.grid_size, c.sup_norm, c.square_function, c.square_tail, c.nontangential));
        rec.constant(&format!("sup_norm_N{}", c.grid_size), c.sup_norm, c.grid_size);
        rec.constant(&format!("square_function_N{}", c.grid_size), c.square_function, c.grid_size);
        rec.constant(&format!("nontangential_N{}", c.grid_size), c.nontangential, c.grid_size);
    }
    let drift = |x: f64, y: f64| (x - y).abs() / x.abs().max(f64::MIN_POSITIVE);
    let tol = config.tolerances.refinement;
    rec.below("sup_norm_refinement", drift(a.sup_norm, b.sup_norm), tol);
    rec.below("square_function_refinement", drift(a.square_function, b.square_function), tol);
    rec.below("nontangential_refinement", drift(a.nontangential, b.nontangential), tol);
    rec.below("square_function_tail", b.square_tail, 1e-3);
    rec.table("estimates.csv", csv);
    rec.diag("estimates", [&a, &b]);
    Ok(())
}

fn fundsol(config: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let grid = &config.grid;
    let tol = &config.tolerances;
    let field = config.family.build(grid)?;
    let solver = PoleKernelSolver::for_field(&field)?;
    let (up, down) = solver.sigma_min();
    rec.constant("dual_gram_sigma_min_upper", up, grid.size);
    rec.constant("dual_gram_sigma_min_lower", down, grid.size);
    let pole = config.pole()?;
    let (t0, x0, col) = (pole.t0, pole.x0, pole.column);
    let h = grid.spacing();
    let heights = vec![t0 - 0.5 * h, t0 - h, 0.5 * t0, 0.0];
    let kernel = solver.construct(t0, x0, col, &heights)?;
    let mut index = String::from("slice,t,norm\n");
    for (i, (t, g)) in kernel.slices.iter().enumerate() {
        index.push_str(&format!("{i},{t:e},{:e}\n", g.l2_norm()));
        rec.table(&format!("kernel_{i:03}.csv"), g.to_csv());
    }
    rec.table("kernel_slices.csv", index);
    // norm bound |g(t)| |t - t0|^{n/2}
    let c_bound: Vec<f64> = kernel.slices.iter().map(|(t, g)| g.l2_norm() * (t0 - t).abs().sqrt()).collect();
    rec.constant("kernel_norm_constant", c_bound.iter().cloned().fold(0.0, f64::max), grid.size);

    let radii = config.radii();
    let tail_kernel = solver.construct(t0, x0, col, &[t0 - 0.5 * h])?;
    let tail = annular_decay(&tail_kernel, &radii)?;
    let solid = solid_annulus_decay(&solver, t0, x0, col, &radii, h / 4.0, 4)?;
    let n = grid.n as f64;
    rec.slopes.insert("tail".into(), tail.slope);
    rec.slopes.insert("solid_annulus".into(), solid.slope);
    rec.below("tail_slope", (tail.slope + n).abs(), tol.slope);
    rec.below("solid_annulus_slope", (solid.slope - (1.0 - n)).abs(), tol.slope);
    let mut csv = String::from("kind,radius,t,mass\n");
    for r in &tail.rows {
        csv.push_str(&format!("tail,{:e},{:e},{:e}\n", r.radius, r.t, r.mass));
    }
    for r in &solid.rows {
        csv.push_str(&format!("solid,{:e},{:e},{:e}\n", r.radius, r.t, r.mass));
    }
    rec.table("decay.csv", csv);

    // reciprocity against the functional calculus
    let lp = LayerPotentials::from_calculus(solver.calc.clone());
    let data = config.data.clone().unwrap_or(BoundaryData::Random { seed: config.seed, max_mode: 4 });
    let hb = data.sample(grid);
    let mut dl: f64 = 0.0;
    let mut sl: f64 = 0.0;
    for t in [0.2, 0.5] {
        let a = solver.double_layer_by_quadrature(t, &hb)?;
        let b = lp.double_layer_t(t, &hb)?;
        dl = dl.max(a.sub(&b).l2_norm() / b.l2_norm());
        let a = solver.single_layer_gradient_by_quadrature(&field, t, &hb)?;
        let b = lp.single_layer_gradient_t(t, &hb)?;
        sl = sl.max(a.sub(&b).l2_norm() / b.l2_norm());
    }
    rec.below("double_layer_reciprocity", dl, tol.reciprocity);
    rec.below("single_layer_reciprocity", sl, tol.reciprocity);

    // distributional equation across t = 0
    let psi = smooth_field(grid, grid.components(), config.seed.wrapping_add(21));
    let across = distributional_identity_check(&solver, x0, col, &TestBump { center: 0.2 * t0, half_width: t0, psi: psi.clone() }, 48)?;
    let away = distributional_identity_check(&solver, x0, col, &TestBump { center: 2.5 * t0, half_width: t0, psi }, 48)?;
    rec.below("distributional_identity", across.residual, tol.distributional);
    rec.below("distributional_away_from_pole", away.residual, tol.distributional);
    rec.diag("distributional", [&across, &away]);

    // shear invariance and closedness of the one-form
    let (gamma, sigma) = truncated_cone(grid, x0, (0.5 * t0).min(grid.length / 4.0));
    let lip = lipschitz_invariance_check(&field, &gamma, &sigma, t0, x0, col, &[-0.5 * t0, 0.0])?;
    rec.constant("lipschitz_residual", lip.residual, grid.size);
    let closed = lambda_closedness_residual(&solver, &field, &[0.0, 0.1, 0.3, 0.7], config.seed.wrapping_add(22))?;
    rec.below("lambda_closedness", closed, tol.closedness);
    rec.diag("lipschitz", &lip);
    rec.diag("decay", serde_json::json!({ "tail": tail, "solid": solid }));
    Ok(())
}

fn tdep(config: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let grid = &config.grid;
    let tol = &config.tolerances;
    let base = config.base();
    let field = base.lifted_field(grid)?;
    let solver = PoleKernelSolver::for_field(&field)?;
    let x0 = config.pole.as_ref().map(|p| p.x0).unwrap_or(grid.points() / 2 + grid.size / 2);
    let t_max = config.t_max.unwrap_or(32.0 * grid.length);
    let kernel = tdep_fundamental_solution(&solver, x0, 1e-4 * grid.spacing(), t_max, 200)?;
    rec.below("curl", kernel.curl_residual, tol.distributional);
    rec.below("tail_fraction", kernel.tail_bound / kernel.total_norm, 0.1);
    let phi = GridField::scalar(grid, |x| {
        let s = 2.0 * PI / grid.length;
        C64::new((s * x[0]).cos() + 0.5 * (s * x[1] - 0.3).sin() + 0.25 * (s * (2.0 * x[0] + x[1])).cos(), 0.0)
    });
    let (got, want) = tdep_distributional_check(&field, &kernel, &phi)?;
    let err = ((got[0] - want[0]).powi(2) + (got[1] - want[1]).powi(2)).sqrt() / (want[0].powi(2) + want[1].powi(2)).sqrt().max(1.0);
    rec.below("distributional_identity", err, tol.distributional);
    let radii = config.radii.clone().unwrap_or_else(|| [1.25, 2.5, 5.0].iter().map(|c| c * grid.spacing()).collect());
    let masses = annulus_masses(&kernel.g, x0, &radii, 8)?;
    let slope = loglog_slope(&radii, &masses);
    rec.slopes.insert("annulus".into(), slope);
    rec.below("annulus_slope", slope.abs(), tol.slope);
    let u = potential_from_gradient(&kernel.g, x0)?;
    let report = pointwise_bound_check(&u, x0, 1.5 * grid.spacing(), grid.length / 4.0, &radii)?;
    rec.constant("log_coefficient", report.log_coefficient, grid.size);
    rec.constant("log_envelope", report.envelope, grid.size);
    rec.holds("dyadic_means_within_factor_3", report.dyadic_spread <= 3.0);
    let mut csv = String::from("radius,mass\n");
    for (r, m) in radii.iter().zip(&masses) {
        csv.push_str(&format!("{r:e},{m:e}\n"));
    }
    rec.table("annulus.csv", csv);
    rec.table("gradient.csv", kernel.g.to_csv());
    rec.table("potential.csv", u.to_csv());
    rec.diag("kernel", &kernel);
    rec.diag("pointwise", &report);
    rec.notes.push("the base fundamental solution lives on the torus and solves div A grad = delta - 1/|T|".into());
    Ok(())
}

/// Threads used by the numerical kernels.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Applies `LAYERPOT_THREADS` to the thread pools. Unset means the default.
pub fn configure_threads() -> Result<usize> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(threads());
    };
    let count: usize = raw.trim().parse().ok().filter(|c| *c > 0).ok_or_else(|| Error::config(THREADS_ENV, format!("`{raw}` is not a positive integer")))?;
    #[cfg(feature = "parallel")]
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(count).build_global();
        faer::set_global_parallelism(if count == 1 { faer::Par::Seq } else { faer::Par::rayon(count) });
    }
    #[cfg(not(feature = "parallel"))]
    let _ = count;
    Ok(threads())
}

impl ReportBundle {
    /// Writes `summary.json`, `diagnostics.json` and the tables into `dir`,
    /// replacing any previous bundle only once everything is on disk.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(io)?;
        let name = dir.file_name().ok_or_else(|| Error::config("out", "output path has no final component"))?.to_string_lossy().to_string();
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io)?;
        }
        fs::create_dir_all(&tmp).map_err(io)?;
        let result = (|| -> Result<()> {
            let summary = serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Io(e.to_string()))?;
            fs::write(tmp.join("summary.json"), summary).map_err(io)?;
            let diag = serde_json::to_string_pretty(&self.diagnostics).map_err(|e| Error::Io(e.to_string()))?;
            fs::write(tmp.join("diagnostics.json"), diag).map_err(io)?;
            for (file, text) in &self.tables {
                fs::write(tmp.join(file), text).map_err(io)?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        if dir.exists() {
            let old = parent.join(format!(".{name}.old-{}", std::process::id()));
            fs::rename(dir, &old).map_err(io)?;
            fs::rename(&tmp, dir).map_err(io)?;
            fs::remove_dir_all(&old).map_err(io)?;
        } else {
            fs::rename(&tmp, dir).map_err(io)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub key: String,
    pub baseline: f64,
    pub current: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    /// Constants moving more than 10 % relative.
    pub constants: Vec<Drift>,
    /// Slopes moving more than 0.1.
    pub slopes: Vec<Drift>,
    /// Keys present on only one side.
    pub missing: Vec<String>,
}

impl RegressionReport {
    pub fn is_clean(&self) -> bool {
        self.constants.is_empty() && self.slopes.is_empty() && self.missing.is_empty()
    }
}

pub const CONSTANT_DRIFT: f64 = 0.1;
pub const SLOPE_DRIFT: f64 = 0.1;

/// Compares a summary against a baseline summary of the same configuration.
pub fn regression_compare(current: &Summary, baseline: &Summary) -> Result<RegressionReport> {
    if current.provenance.config_hash != baseline.provenance.config_hash {
        return Err(Error::BaselineMismatch { baseline: baseline.provenance.config_hash.clone(), current: current.provenance.config_hash.clone() });
    }
    let mut report = RegressionReport::default();
    for (k, b) in &baseline.constants {
        match current.constants.get(k) {
            None => report.missing.push(k.clone()),
            Some(c) => {
                let scale = b.value.abs().max(f64::MIN_POSITIVE);
                if (c.value - b.value).abs() > CONSTANT_DRIFT * scale {
                    report.constants.push(Drift { key: k.clone(), baseline: b.value, current: c.value });
                }
            }
        }
    }
    for (k, b) in &baseline.slopes {
        match current.slopes.get(k) {
            None => report.missing.push(k.clone()),
            Some(c) if (c - b).abs() > SLOPE_DRIFT => report.slopes.push(Drift { key: k.clone(), baseline: *b, current: *c }),
            Some(_) => {}
        }
    }
    for k in current.constants.keys().chain(current.slopes.keys()) {
        if !baseline.constants.contains_key(k) && !baseline.slopes.contains_key(k) {
            report.missing.push(k.clone());
        }
    }
    Ok(report)
}

pub fn load_summary(path: &Path) -> Result<Summary> {
    let p = if path.is_dir() { path.join("summary.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config("baseline", e.to_string()))
}
