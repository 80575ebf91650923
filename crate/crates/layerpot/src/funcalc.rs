//! Functional calculus of `DB` and `BD` on the periodic grid.
//!
//! Both operators vanish on `B^{-1}H^perp` resp. `H^perp` and are similar on
//! the complement, so a single eigendecomposition serves both. With `Q` an
//! orthonormal eigenbasis of `D` on `H`, `Sigma` its eigenvalues and
//! `G = Q* B Q`, the compressed operator `T = Sigma G = W Lambda W^{-1}`
//! gives
//!
//! ```text
//! g(DB) = Q W g(Lambda) W^{-1} G^{-1} Q* B
//! g(BD) = B Q W g(Lambda) W^{-1} G^{-1} Q*
//! ```
//!
//! for every `g` with `g(0) = 0`.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef};
use serde::Serialize;

use crate::coeff::{BlockCoefficient, CoefficientField, ReflectionN, C64};
use crate::error::{Error, Result};
use crate::torus::{apply_pointwise, assemble_d, mat_vec, multiplication_matrix, DenseOperator, Fourier, GridField, RangeBasis, TorusGrid};

pub const DEFECT_COND_LIMIT: f64 = 1e10;
pub const KERNEL_GAP: f64 = 1e-8;
pub const GAP_CEILING: f64 = 1e-4;
const GAP_ANGLE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    #[serde(rename = "DB")]
    Db,
    #[serde(rename = "BD")]
    Bd,
}

impl OperatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            OperatorKind::Db => "DB",
            OperatorKind::Bd => "BD",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sector {
    Right,
    Left,
    Kernel,
}

/// Eigendecomposition of the compressed operator together with the factors
/// needed to evaluate functions of `DB` and `BD`.
#[derive(Clone, Debug)]
pub struct Calculus {
    pub grid: TorusGrid,
    /// Pointwise `B = hat(A)`.
    pub b: Vec<BlockCoefficient>,
    pub kappa: f64,
    pub omega: f64,
    pub eigenvalues: Vec<C64>,
    pub sectors: Vec<Sector>,
    /// `Q W`, columns are eigenvectors of `DB`.
    pub x: Mat<C64>,
    /// `B Q W`, columns are eigenvectors of `BD`.
    pub bx: Mat<C64>,
    /// `W^{-1} G^{-1} Q*`.
    pub y: Mat<C64>,
    pub cond_w: f64,
    /// Spectral radius, the scale of the gap thresholds.
    pub scale: f64,
}

impl Calculus {
    pub fn new(field: &CoefficientField) -> Result<Self> {
        let grid = field.grid.clone();
        let b = field.hat()?;
        let basis = RangeBasis::new(&grid);
        let k = basis.dim();
        let bq = block_diag_times(&b, basis.q.as_ref());
        let g = basis.q.adjoint() * &bq;
        drop(bq);
        let t = Mat::from_fn(k, k, |i, j| g[(i, j)] * basis.symbol[i]);
        let eig = t.eigen().map_err(|e| Error::Decomposition(format!("{e:?}")))?;
        drop(t);
        let w = eig.U().to_owned();
        let eigenvalues: Vec<C64> = (0..k).map(|i| eig.S().column_vector()[i]).collect();
        drop(eig);
        let sv = w.singular_values().map_err(|e| Error::Decomposition(format!("{e:?}")))?;
        let cond_w = sv[0] / sv[k - 1];
        if !(cond_w <= DEFECT_COND_LIMIT) {
            return Err(Error::DefectiveSpectrum { cond: cond_w });
        }
        let scale = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
        let mut sectors = Vec::with_capacity(k);
        for l in &eigenvalues {
            let r = l.norm();
            if r < KERNEL_GAP * scale {
                sectors.push(Sector::Kernel);
                continue;
            }
            if r <= GAP_CEILING * scale && l.re.abs() < r * GAP_ANGLE.sin() {
                return Err(Error::GapViolation { re: l.re, im: l.im });
            }
            if l.re > 0.0 {
                sectors.push(Sector::Right);
            } else if l.re < 0.0 {
                sectors.push(Sector::Left);
            } else {
                return Err(Error::GapViolation { re: l.re, im: l.im });
            }
        }
        let x = &basis.q * &w;
        let bx = block_diag_times(&b, x.as_ref());
        let ginv_qt = g.partial_piv_lu().solve(basis.q.adjoint().to_owned());
        drop(g);
        let winv = w.partial_piv_lu().inverse();
        let y = &winv * &ginv_qt;
        Ok(Self { grid, b, kappa: field.kappa, omega: field.omega, eigenvalues, sectors, x, bx, y, cond_w, scale })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn sector_mask(&self, sector: Sector) -> Vec<bool> {
        self.sectors.iter().map(|s| *s == sector).collect()
    }

    /// Multipliers `g(lambda)` on the chosen sector, zero elsewhere.
    pub fn multipliers(&self, sector: Sector, g: impl Fn(C64) -> C64) -> Vec<C64> {
        self.eigenvalues
            .iter()
            .zip(&self.sectors)
            .map(|(l, s)| if *s == sector { g(*l) } else { C64::new(0.0, 0.0) })
            .collect()
    }

    /// `g(Op) v` for multipliers given per eigenvalue.
    pub fn apply(&self, kind: OperatorKind, mult: &[C64], v: &[C64]) -> Vec<C64> {
        match kind {
            OperatorKind::Bd => {
                let coef = mat_vec(self.y.as_ref(), v);
                let scaled: Vec<C64> = coef.iter().zip(mult).map(|(c, m)| c * m).collect();
                mat_vec(self.bx.as_ref(), &scaled)
            }
            OperatorKind::Db => {
                let bv = apply_pointwise(&self.b, v);
                let coef = mat_vec(self.y.as_ref(), &bv);
                let scaled: Vec<C64> = coef.iter().zip(mult).map(|(c, m)| c * m).collect();
                mat_vec(self.x.as_ref(), &scaled)
            }
        }
    }

    /// Eigen-coordinates of `v` with respect to the decomposition of `kind`.
    pub fn coordinates(&self, kind: OperatorKind, v: &[C64]) -> Vec<C64> {
        match kind {
            OperatorKind::Bd => mat_vec(self.y.as_ref(), v),
            OperatorKind::Db => mat_vec(self.y.as_ref(), &apply_pointwise(&self.b, v)),
        }
    }

    /// Reassembles a field from eigen-coordinates.
    pub fn synthesize(&self, kind: OperatorKind, coef: &[C64]) -> Vec<C64> {
        match kind {
            OperatorKind::Bd => mat_vec(self.bx.as_ref(), coef),
            OperatorKind::Db => mat_vec(self.x.as_ref(), coef),
        }
    }

    /// Dense `g(Op)`.
    pub fn matrix(&self, kind: OperatorKind, mult: &[C64]) -> Mat<C64> {
        let (left, right) = self.factors(kind);
        let scaled = Mat::from_fn(left.nrows(), left.ncols(), |i, j| left[(i, j)] * mult[j]);
        &scaled * &right
    }

    /// `(left, right)` with `g(Op) = left diag(g) right`.
    pub fn factors(&self, kind: OperatorKind) -> (MatRef<'_, C64>, Mat<C64>) {
        match kind {
            OperatorKind::Bd => (self.bx.as_ref(), self.y.clone()),
            OperatorKind::Db => (self.x.as_ref(), times_block_diag(self.y.as_ref(), &self.b)),
        }
    }

    pub fn omega_observed(&self) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.sectors)
            .filter(|(_, s)| **s != Sector::Kernel)
            .map(|(l, _)| fold_arg(*l))
            .fold(0.0, f64::max)
    }
}

/// `|arg(lambda)|` or `|arg(-lambda)|`, whichever lies in `[0, pi/2]`.
pub fn fold_arg(l: C64) -> f64 {
    let a = l.arg().abs();
    if a > PI / 2.0 { PI - a } else { a }
}

/// `diag(B_p) M` for a block-diagonal `B`.
pub(crate) fn block_diag_times(b: &[BlockCoefficient], m: MatRef<'_, C64>) -> Mat<C64> {
    let c = b[0].size();
    let mut out = Mat::<C64>::zeros(m.nrows(), m.ncols());
    for (p, s) in b.iter().enumerate() {
        for i in 0..c {
            for j in 0..c {
                let bij = s.get(i, j);
                if bij == C64::new(0.0, 0.0) {
                    continue;
                }
                let src = m.row(p * c + j);
                let mut dst = out.as_mut().row_mut(p * c + i);
                for col in 0..m.ncols() {
                    dst[col] += bij * src[col];
                }
            }
        }
    }
    out
}

/// `M diag(B_p)` for a block-diagonal `B`.
pub(crate) fn times_block_diag(m: MatRef<'_, C64>, b: &[BlockCoefficient]) -> Mat<C64> {
    let c = b[0].size();
    let mut out = Mat::<C64>::zeros(m.nrows(), m.ncols());
    for (p, s) in b.iter().enumerate() {
        for i in 0..c {
            for j in 0..c {
                let bij = s.get(i, j);
                if bij == C64::new(0.0, 0.0) {
                    continue;
                }
                for r in 0..m.nrows() {
                    out[(r, p * c + j)] += m[(r, p * c + i)] * bij;
                }
            }
        }
    }
    out
}

pub fn assemble_db(field: &CoefficientField) -> Result<DenseOperator> {
    let d = assemble_d(&field.grid);
    let mb = multiplication_matrix(&field.grid, &field.hat()?)?;
    Ok(DenseOperator::new(&d.matrix * &mb.matrix, "DB"))
}

pub fn assemble_bd(field: &CoefficientField) -> Result<DenseOperator> {
    let d = assemble_d(&field.grid);
    let mb = multiplication_matrix(&field.grid, &field.hat()?)?;
    Ok(DenseOperator::new(&mb.matrix * &d.matrix, "BD"))
}

/// Spectral splitting of `DB` or `BD` into right sector, left sector and kernel.
#[derive(Clone, Debug)]
pub struct SpectralSplit {
    pub kind: OperatorKind,
    pub calculus: Arc<Calculus>,
}

pub fn spectral_split(field: &CoefficientField, kind: OperatorKind) -> Result<SpectralSplit> {
    Ok(SpectralSplit { kind, calculus: Arc::new(Calculus::new(field)?) })
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub scale: f64,
    pub kernel_from_compression: usize,
    pub kernel_dimension: usize,
    pub right: usize,
    pub left: usize,
    pub min_sector_modulus: f64,
    pub min_abs_real_part: f64,
    pub eigenvector_condition: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitDiagnostics {
    pub operator: OperatorKind,
    pub eigenvalues: Vec<[f64; 2]>,
    pub omega_observed: f64,
    pub omega_coefficients: f64,
    pub projection_norms: Option<ProjectionNorms>,
    pub gap: GapReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProjectionNorms {
    pub right: f64,
    pub left: f64,
    pub kernel: f64,
}

impl SpectralSplit {
    pub fn with_kind(&self, kind: OperatorKind) -> Self {
        Self { kind, calculus: self.calculus.clone() }
    }

    pub fn label(&self) -> &'static str {
        self.kind.label()
    }

    /// Nonzero spectrum followed by the kernel zeros.
    pub fn eigenvalues(&self) -> Vec<C64> {
        let c = &self.calculus;
        let mut ev: Vec<C64> = c.eigenvalues.clone();
        ev.extend(std::iter::repeat_n(C64::new(0.0, 0.0), c.grid.dofs() - c.dim()));
        ev
    }

    pub fn omega_observed(&self) -> f64 {
        self.calculus.omega_observed()
    }

    fn projection(&self, sector: Sector) -> Mat<C64> {
        let mult = self.calculus.multipliers(sector, |_| C64::new(1.0, 0.0));
        self.calculus.matrix(self.kind, &mult)
    }

    pub fn right_proj(&self) -> DenseOperator {
        let name = if self.kind == OperatorKind::Bd { "Et+" } else { "E+" };
        DenseOperator::new(self.projection(Sector::Right), name)
    }

    pub fn left_proj(&self) -> DenseOperator {
        let name = if self.kind == OperatorKind::Bd { "Et-" } else { "E-" };
        DenseOperator::new(self.projection(Sector::Left), name)
    }

    pub fn kernel_proj(&self) -> DenseOperator {
        let c = &self.calculus;
        let all = c.eigenvalues.iter().zip(&c.sectors).map(|(_, s)| if *s == Sector::Kernel { C64::new(0.0, 0.0) } else { C64::new(1.0, 0.0) }).collect::<Vec<_>>();
        let range = c.matrix(self.kind, &all);
        let dim = c.grid.dofs();
        DenseOperator::new(Mat::<C64>::identity(dim, dim) - range, "K")
    }

    pub fn gap_report(&self) -> GapReport {
        let c = &self.calculus;
        let count = |s: Sector| c.sectors.iter().filter(|x| **x == s).count();
        let sector_ev = || c.eigenvalues.iter().zip(&c.sectors).filter(|(_, s)| **s != Sector::Kernel).map(|(l, _)| *l);
        GapReport {
            scale: c.scale,
            kernel_from_compression: count(Sector::Kernel),
            kernel_dimension: c.grid.dofs() - c.dim() + count(Sector::Kernel),
            right: count(Sector::Right),
            left: count(Sector::Left),
            min_sector_modulus: sector_ev().map(|l| l.norm()).fold(f64::INFINITY, f64::min),
            min_abs_real_part: sector_ev().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min),
            eigenvector_condition: c.cond_w,
        }
    }

    /// Diagnostic dump; projection norms need dense SVDs and are optional.
    pub fn diagnostics(&self, with_norms: bool) -> SplitDiagnostics {
        let projection_norms = with_norms.then(|| ProjectionNorms {
            right: self.right_proj().op_norm(),
            left: self.left_proj().op_norm(),
            kernel: self.kernel_proj().op_norm(),
        });
        SplitDiagnostics {
            operator: self.kind,
            eigenvalues: self.eigenvalues().iter().map(|l| [l.re, l.im]).collect(),
            omega_observed: self.omega_observed(),
            omega_coefficients: self.calculus.omega,
            projection_norms,
            gap: self.gap_report(),
        }
    }

    pub fn diagnostics_json(&self, with_norms: bool) -> String {
        serde_json::to_string_pretty(&self.diagnostics(with_norms)).expect("serializable diagnostics")
    }
}

/// `e^{-t Op}` restricted to one sector.
#[derive(Clone, Debug)]
pub struct Semigroup {
    pub split: SpectralSplit,
    pub side: Side,
}

impl Semigroup {
    pub fn new(split: &SpectralSplit, side: Side) -> Self {
        Self { split: split.clone(), side }
    }

    fn multipliers(&self, t: f64) -> Result<Vec<C64>> {
        let sector = match self.side {
            Side::Plus if t >= 0.0 => Sector::Right,
            Side::Minus if t <= 0.0 => Sector::Left,
            _ => return Err(Error::SideMismatch { t }),
        };
        Ok(self.split.calculus.multipliers(sector, |l| (-t * l).exp()))
    }

    pub fn at(&self, t: f64) -> Result<DenseOperator> {
        let mult = self.multipliers(t)?;
        let label = format!("exp(-{t}{})E{}", self.split.label(), if self.side == Side::Plus { "+" } else { "-" });
        Ok(DenseOperator::new(self.split.calculus.matrix(self.split.kind, &mult), label))
    }

    pub fn apply(&self, t: f64, f: &[C64]) -> Result<Vec<C64>> {
        let mult = self.multipliers(t)?;
        Ok(self.split.calculus.apply(self.split.kind, &mult, f))
    }
}

pub fn semigroup_apply(split: &SpectralSplit, side: Side, t: f64, f: &GridField) -> Result<GridField> {
    let values = Semigroup::new(split, side).apply(t, &f.values)?;
    GridField::from_values(&f.grid, f.comps, values)
}

/// `b_t(BD) = e^{-t BD} Et+`.
pub fn b_t_of_bd(split: &SpectralSplit, t: f64) -> Result<DenseOperator> {
    if split.kind != OperatorKind::Bd {
        return Err(Error::DimensionMismatch("b_t is applied to BD".into()));
    }
    if !(t > 0.0) {
        return Err(Error::SideMismatch { t });
    }
    let mut op = Semigroup::new(split, Side::Plus).at(t)?;
    op.label = format!("b_{t}(BD)");
    Ok(op)
}

/// Residuals of the intertwining relations `B E = Et B` and `D Et = E D`,
/// Frobenius norms over both sides.
pub fn intertwining_residuals(calc: &Calculus) -> (f64, f64) {
    let d = assemble_d(&calc.grid).matrix;
    let mb = multiplication_matrix(&calc.grid, &calc.b).expect("grid-shaped samples").matrix;
    let mut rb: f64 = 0.0;
    let mut rd: f64 = 0.0;
    for sector in [Sector::Right, Sector::Left] {
        let mult = calc.multipliers(sector, |_| C64::new(1.0, 0.0));
        let e = calc.matrix(OperatorKind::Db, &mult);
        let et = calc.matrix(OperatorKind::Bd, &mult);
        rb = rb.max((&mb * &e - &et * &mb).norm_l2());
        rd = rd.max((&d * &et - &e * &d).norm_l2());
    }
    (rb, rd)
}

/// `|E+ + E- + K - I|` for the chosen operator, with `K` the kernel
/// projection computed independently (onto `H^perp` along `BH` for `BD`,
/// onto `B^{-1}H^perp` along `H` for `DB`).
pub fn complementarity_residual(calc: &Calculus, kind: OperatorKind) -> f64 {
    let grid = &calc.grid;
    let dim = grid.dofs();
    let one = |s: Sector| calc.matrix(kind, &calc.multipliers(s, |_| C64::new(1.0, 0.0)));
    let sum = one(Sector::Right) + one(Sector::Left);
    let k = kernel_projection_direct(calc, kind);
    (sum + k - Mat::<C64>::identity(dim, dim)).norm_l2()
}

/// The kernel projection built from the orthogonal projection `P` onto `H`
/// without using the eigendecomposition: for `BD` it is
/// `I - B Q (Q* B Q)^{-1} Q*`, for `DB` it is `I - Q (Q* B Q)^{-1} Q* B`.
pub fn kernel_projection_direct(calc: &Calculus, kind: OperatorKind) -> Mat<C64> {
    let basis = RangeBasis::new(&calc.grid);
    let bq = block_diag_times(&calc.b, basis.q.as_ref());
    let g = basis.q.adjoint() * &bq;
    let lu = g.partial_piv_lu();
    let dim = calc.grid.dofs();
    let range = match kind {
        OperatorKind::Bd => &bq * lu.solve(basis.q.adjoint().to_owned()),
        OperatorKind::Db => &basis.q * lu.solve(times_block_diag(basis.q.adjoint().to_owned().as_ref(), &calc.b)),
    };
    Mat::<C64>::identity(dim, dim) - range
}

/// Largest idempotence defect over the three projections.
pub fn idempotence_residual(split: &SpectralSplit) -> f64 {
    [split.right_proj(), split.left_proj(), split.kernel_proj()]
        .iter()
        .map(|p| (&p.matrix * &p.matrix - &p.matrix).norm_l2())
        .fold(0.0, f64::max)
}

/// Largest excess of the folded eigenvalue argument over `omega`.
pub fn sector_excess(calc: &Calculus) -> f64 {
    calc.omega_observed() - calc.omega
}

/// Matrix form of the duality identity
/// `<g, N (BD) f> = <-D (N B* N) g, N f>` for all `f, g`: the residual is
/// `|(N BD)* - N (-D N B* N)|_F / |BD|_F`.
pub fn duality_residual(grid: &TorusGrid, b: &[BlockCoefficient]) -> f64 {
    let d = assemble_d(grid).matrix;
    let mb = multiplication_matrix(grid, b).expect("grid-shaped samples").matrix;
    let refl = ReflectionN::new(grid.n, grid.m);
    let c = grid.components();
    let dim = grid.dofs();
    let nmat = Mat::from_fn(dim, dim, |i, j| if i == j { C64::new(refl.sign(i % c), 0.0) } else { C64::new(0.0, 0.0) });
    let bd = &mb * &d;
    let lhs = (&nmat * &bd).adjoint().to_owned();
    let btilde = &nmat * mb.adjoint() * &nmat;
    let rhs = &nmat * (-(&d * &btilde));
    (lhs - rhs).norm_l2() / bd.norm_l2()
}

/// Gram matrix `M[a, b] = <N F_a, G_b>` (weighted) of the pairing between
/// `Et^s_A` (columns `F = BX` of `calc` on sector `s`) and `E^{-s}_{A*}`
/// (columns `G = X` of `calc_star` on the opposite sector). Columns are
/// normalized to unit weighted norm.
pub fn dual_gram(calc: &Calculus, calc_star: &Calculus, side: Side) -> DualPair {
    let (s_a, s_star) = match side {
        Side::Plus => (Sector::Right, Sector::Left),
        Side::Minus => (Sector::Left, Sector::Right),
    };
    let grid = &calc.grid;
    let w = grid.weight();
    let c = grid.components();
    let m = grid.m;
    let fa: Vec<usize> = (0..calc.dim()).filter(|&j| calc.sectors[j] == s_a).collect();
    let gb: Vec<usize> = (0..calc_star.dim()).filter(|&j| calc_star.sectors[j] == s_star).collect();
    let col_norm = |mat: MatRef<'_, C64>, j: usize| (w * mat.col(j).iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt();
    let fscale: Vec<f64> = fa.iter().map(|&j| 1.0 / col_norm(calc.bx.as_ref(), j)).collect();
    let gscale: Vec<f64> = gb.iter().map(|&j| 1.0 / col_norm(calc_star.x.as_ref(), j)).collect();
    let dim = grid.dofs();
    let nf = Mat::from_fn(dim, fa.len(), |r, a| {
        let sgn = if r % c < m { -1.0 } else { 1.0 };
        calc.bx[(r, fa[a])] * (sgn * fscale[a] * w)
    });
    let g = Mat::from_fn(dim, gb.len(), |r, b| calc_star.x[(r, gb[b])] * gscale[b]);
    // M[a, b] = sum_r (N F)[r, a] conj(G[r, b])
    let gram = nf.transpose() * g.conjugate();
    DualPair { side, f_index: fa, g_index: gb, f_scale: fscale, g_scale: gscale, gram }
}

#[derive(Clone, Debug)]
pub struct DualPair {
    pub side: Side,
    pub f_index: Vec<usize>,
    pub g_index: Vec<usize>,
    pub f_scale: Vec<f64>,
    pub g_scale: Vec<f64>,
    pub gram: Mat<C64>,
}

impl DualPair {
    pub fn sigma_min(&self) -> f64 {
        if self.gram.nrows() != self.gram.ncols() || self.gram.nrows() == 0 {
            return 0.0;
        }
        let sv = self.gram.singular_values().expect("svd of gram matrix");
        sv[sv.len() - 1]
    }
}

/// Centered-difference residual of `dt v + BD v = 0` for
/// `v(t) = e^{-t BD} v0` with `v0` in the right sector.
pub fn ode_residual(calc: &Calculus, v0: &[C64], t: f64, delta: f64) -> f64 {
    let split = SpectralSplit { kind: OperatorKind::Bd, calculus: Arc::new(calc.clone()) };
    let sg = Semigroup::new(&split, Side::Plus);
    let v = |s: f64| sg.apply(s, v0).expect("positive time");
    let (vp, vm, v0t) = (v(t + delta), v(t - delta), v(t));
    let fourier = Fourier::new(&calc.grid);
    let bdv = apply_pointwise(&calc.b, &fourier.apply_d(&v0t));
    let res: f64 = vp
        .iter()
        .zip(&vm)
        .zip(&bdv)
        .map(|((a, b), c)| ((a - b) / (2.0 * delta) + c).norm_sqr())
        .sum();
    (res * calc.grid.weight()).sqrt()
}
