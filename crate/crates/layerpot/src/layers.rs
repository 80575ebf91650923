//! Double and single layer potentials through the functional calculus,
//! boundary solvers and the associated estimates.
//!
//! All boundary operators act on `m`-component fields and are restricted
//! to mean-zero data; the constants are the torus kernel of `D`.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::Serialize;

use crate::coeff::{CoefficientField, FamilyConfig, C64};
use crate::error::{Error, Result};
use crate::funcalc::{times_block_diag, Calculus, OperatorKind, Sector, Semigroup, SpectralSplit, Side};
use crate::torus::{mat_vec, mean_zero_basis, DenseOperator, Fourier, GridField, TorusGrid};

pub const INVERTIBILITY_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct WhitneyParams {
    pub c0: f64,
    pub c1: f64,
    pub t_samples: Vec<f64>,
}

impl WhitneyParams {
    /// `count` log-spaced heights on `[1e-3, 1] L`.
    pub fn new(length: f64, count: usize) -> Self {
        Self { c0: 2.0, c1: 0.5, t_samples: log_space(1e-3 * length, length, count) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 1.0) {
            return Err(Error::config("c0", "must exceed 1"));
        }
        if !(self.c1 > 0.0) {
            return Err(Error::config("c1", "must be positive"));
        }
        if self.t_samples.is_empty() || self.t_samples.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("t_samples", "must be sorted increasing"));
        }
        Ok(())
    }
}

pub fn log_space(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..count).map(|i| (la + (lb - la) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Potential and conormal gradient at one height.
#[derive(Clone, Debug)]
pub struct SolutionSlice {
    pub t: f64,
    pub u: GridField,
    pub conormal: GridField,
}

/// An operator on `m`-component boundary fields together with its
/// compression `Z* M Z` to the mean-zero subspace.
#[derive(Clone, Debug)]
pub struct BoundaryOperator {
    pub full: DenseOperator,
    pub restricted: Mat<C64>,
    basis: Arc<Mat<C64>>,
}

impl BoundaryOperator {
    fn new(full: Mat<C64>, label: &str, basis: Arc<Mat<C64>>) -> Self {
        let restricted = basis.adjoint() * &full * basis.as_ref();
        Self { full: DenseOperator::new(full, label), restricted, basis }
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.restricted.singular_values().expect("svd of boundary operator")
    }

    /// `(sigma_min, |op|)` on mean-zero fields.
    pub fn sigma_range(&self) -> (f64, f64) {
        let sv = self.singular_values();
        (sv[sv.len() - 1], sv[0])
    }

    pub fn check_invertible(&self) -> Result<()> {
        let (sigma_min, norm) = self.sigma_range();
        if sigma_min <= INVERTIBILITY_THRESHOLD * norm {
            return Err(Error::NotInvertible { sigma_min, norm });
        }
        Ok(())
    }

    /// Mean-zero `h` with `Z*(M h - phi) = 0`.
    pub fn solve(&self, phi: &GridField) -> Result<GridField> {
        self.check_invertible()?;
        let rhs = self.basis.adjoint() * faer::col::ColRef::from_slice(&phi.values);
        let coef = self.restricted.partial_piv_lu().solve(rhs);
        let h: Vec<C64> = (self.basis.as_ref() * coef).iter().copied().collect();
        GridField::from_values(&phi.grid, phi.comps, h)
    }

    /// `|Z*(M h - phi)| / |Z* phi|`.
    pub fn residual(&self, h: &GridField, phi: &GridField) -> f64 {
        let mh = self.full.apply(&h.values);
        let diff: Vec<C64> = mh.iter().zip(&phi.values).map(|(a, b)| a - b).collect();
        let r = self.basis.adjoint() * faer::col::ColRef::from_slice(&diff);
        let p = self.basis.adjoint() * faer::col::ColRef::from_slice(&phi.values);
        let pn = p.norm_l2();
        if pn == 0.0 { r.norm_l2() } else { r.norm_l2() / pn }
    }
}

/// Layer potentials for one coefficient field.
#[derive(Clone, Debug)]
pub struct LayerPotentials {
    pub calc: Arc<Calculus>,
    basis: Arc<Mat<C64>>,
    fourier: Fourier,
}

#[derive(Clone, Debug)]
pub struct DirichletSolution {
    pub h: GridField,
    pub residual: f64,
    pub slices: Vec<SolutionSlice>,
    /// `|u(t_min) - phi|` modulo constants, relative to `|phi|`.
    pub trace_error: f64,
}

#[derive(Clone, Debug)]
pub struct NeumannSolution {
    pub h: GridField,
    pub residual: f64,
    pub slices: Vec<SolutionSlice>,
    /// `|dnu u(t_min) - phi|` modulo constants, relative to `|phi|`.
    pub trace_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SquareFunction {
    /// Quadrature of `int |dt Dt h|^2 t dt / |h|^2`.
    pub ratio: f64,
    /// Upper bound for the part of the integral beyond the last node.
    pub tail_bound: f64,
}

#[derive(Clone, Debug)]
pub struct ConjugateSystem {
    pub slices: Vec<SolutionSlice>,
    /// Largest violation of `A_pp dt u + A_pq grad u = f_perp`, relative.
    pub identity_residual: f64,
}

impl LayerPotentials {
    pub fn new(field: &CoefficientField) -> Result<Self> {
        Ok(Self::from_calculus(Arc::new(Calculus::new(field)?)))
    }

    pub fn from_calculus(calc: Arc<Calculus>) -> Self {
        let basis = Arc::new(mean_zero_basis(&calc.grid));
        let fourier = Fourier::new(&calc.grid);
        Self { calc, basis, fourier }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.calc.grid
    }

    fn check_boundary(&self, h: &GridField) -> Result<()> {
        if h.comps != self.grid().m || h.grid != *self.grid() {
            return Err(Error::DimensionMismatch("boundary data must have m components on the same grid".into()));
        }
        Ok(())
    }

    fn right(&self, t: f64) -> Result<Vec<C64>> {
        if !(t > 0.0) {
            return Err(Error::SideMismatch { t });
        }
        Ok(self.calc.multipliers(Sector::Right, |l| (-t * l).exp()))
    }

    /// `b_t(BD)[h, 0]` as a full field.
    pub fn conjugate_field(&self, t: f64, h: &GridField) -> Result<GridField> {
        self.check_boundary(h)?;
        let mult = self.right(t)?;
        let v = self.calc.apply(OperatorKind::Bd, &mult, &h.normal_embedding().values);
        GridField::from_values(self.grid(), self.grid().components(), v)
    }

    pub fn double_layer_t(&self, t: f64, h: &GridField) -> Result<GridField> {
        Ok(self.conjugate_field(t, h)?.perp())
    }

    pub fn single_layer_gradient_t(&self, t: f64, h: &GridField) -> Result<GridField> {
        self.check_boundary(h)?;
        let mult = self.right(t)?;
        let v = self.calc.apply(OperatorKind::Db, &mult, &h.normal_embedding().values);
        GridField::from_values(self.grid(), self.grid().components(), v)
    }

    fn perp_rows(&self, mat: &Mat<C64>, cols: &[usize]) -> Mat<C64> {
        let g = self.grid();
        let (m, c) = (g.m, g.components());
        Mat::from_fn(g.points() * m, cols.len(), |r, j| mat[((r / m) * c + r % m, cols[j])])
    }

    fn perp_cols(&self, mat: &Mat<C64>, rows: &[usize]) -> Mat<C64> {
        let g = self.grid();
        let (m, c) = (g.m, g.components());
        Mat::from_fn(rows.len(), g.points() * m, |i, col| mat[(rows[i], (col / m) * c + col % m)])
    }

    fn right_index(&self) -> Vec<usize> {
        (0..self.calc.dim()).filter(|&j| self.calc.sectors[j] == Sector::Right).collect()
    }

    /// `h -> (Et+ [h, 0])_perp`.
    pub fn double_layer_boundary(&self) -> BoundaryOperator {
        let idx = self.right_index();
        let left = self.perp_rows(&self.calc.bx, &idx);
        let right = self.perp_cols(&self.calc.y, &idx);
        BoundaryOperator::new(&left * &right, "D~", self.basis.clone())
    }

    /// `h -> (E+ [h, 0])_perp`, the conormal trace of the single layer.
    pub fn neumann_operator(&self) -> BoundaryOperator {
        let idx = self.right_index();
        let left = self.perp_rows(&self.calc.x, &idx);
        let yb = times_block_diag(self.calc.y.as_ref(), &self.calc.b);
        let right = self.perp_cols(&yb, &idx);
        BoundaryOperator::new(&left * &right, "dnu S", self.basis.clone())
    }

    /// Minus the tangential-normal arrangement: `f = -D v` for the conjugate
    /// field `v`, i.e. the conormal gradient of `u = v_perp`.
    fn conormal_of(&self, v: &GridField) -> GridField {
        let dv = self.fourier.apply_d(&v.values);
        GridField { grid: v.grid.clone(), comps: v.comps, values: dv.into_iter().map(|z| -z).collect() }
    }

    pub fn solve_dirichlet(&self, phi: &GridField, heights: &[f64]) -> Result<DirichletSolution> {
        self.check_boundary(phi)?;
        let op = self.double_layer_boundary();
        let h = op.solve(phi)?;
        let residual = op.residual(&h, phi);
        let mut slices = Vec::with_capacity(heights.len());
        for &t in heights {
            let v = self.conjugate_field(t, &h)?;
            slices.push(SolutionSlice { t, u: v.perp(), conormal: self.conormal_of(&v) });
        }
        let trace_error = self.trace_error(slices.iter().min_by(|a, b| a.t.total_cmp(&b.t)).map(|s| &s.u), phi);
        Ok(DirichletSolution { h, residual, slices, trace_error })
    }

    pub fn solve_neumann(&self, phi: &GridField, heights: &[f64]) -> Result<NeumannSolution> {
        self.check_boundary(phi)?;
        let op = self.neumann_operator();
        let h = op.solve(phi)?;
        let residual = op.residual(&h, phi);
        let m = self.grid().m;
        let mut slices = Vec::with_capacity(heights.len());
        for &t in heights {
            let f = self.single_layer_gradient_t(t, &h)?;
            let u = self.fourier.antiderivative(&f.par().values, m);
            slices.push(SolutionSlice { t, u: GridField::from_values(self.grid(), m, u)?, conormal: f });
        }
        let trace = slices.iter().min_by(|a, b| a.t.total_cmp(&b.t)).map(|s| s.conormal.perp());
        let trace_error = self.trace_error(trace.as_ref(), phi);
        Ok(NeumannSolution { h, residual, slices, trace_error })
    }

    fn trace_error(&self, trace: Option<&GridField>, phi: &GridField) -> f64 {
        let Some(trace) = trace else { return f64::NAN };
        let m = self.grid().m;
        let d = self.fourier.remove_mean(&trace.sub(phi).values, m);
        let p = self.fourier.remove_mean(&phi.values, m);
        let norm = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm(&p) == 0.0 { norm(&d) } else { norm(&d) / norm(&p) }
    }

    /// `sup_t |Dt h| / |h|` over the given heights.
    pub fn uniform_bound(&self, h: &GridField, heights: &[f64]) -> Result<f64> {
        let hn = h.l2_norm();
        if hn == 0.0 {
            return Ok(0.0);
        }
        let mut best: f64 = 0.0;
        for &t in heights {
            best = best.max(self.double_layer_t(t, h)?.l2_norm() / hn);
        }
        Ok(best)
    }

    /// Square function of the double layer with `dt Dt h` evaluated as
    /// `-(BD b_t(BD) [h, 0])_perp`, trapezoid rule in `ln t`.
    pub fn square_function_norm(&self, h: &GridField, t_quadrature: &[f64]) -> Result<SquareFunction> {
        self.check_boundary(h)?;
        let hn2 = h.l2_norm().powi(2);
        if hn2 == 0.0 {
            return Ok(SquareFunction { ratio: 0.0, tail_bound: 0.0 });
        }
        if t_quadrature.len() < 2 || t_quadrature.windows(2).any(|w| !(w[0] > 0.0 && w[0] < w[1])) {
            return Err(Error::config("t_quadrature", "needs at least two increasing positive heights"));
        }
        let idx = self.right_index();
        let bx_perp = self.perp_rows(&self.calc.bx, &idx);
        let coef_all = self.calc.coordinates(OperatorKind::Bd, &h.normal_embedding().values);
        let coef: Vec<C64> = idx.iter().map(|&j| coef_all[j]).collect();
        let lam: Vec<C64> = idx.iter().map(|&j| self.calc.eigenvalues[j]).collect();
        let w = self.grid().weight();
        let eval = |t: f64| -> (f64, f64) {
            let scaled: Vec<C64> = coef.iter().zip(&lam).map(|(c, l)| -c * l * (-t * l).exp()).collect();
            let v = mat_vec(bx_perp.as_ref(), &scaled);
            let norm2 = w * v.iter().map(|z| z.norm_sqr()).sum::<f64>();
            (norm2, scaled.iter().map(|z| z.norm_sqr()).sum::<f64>())
        };
        let vals: Vec<(f64, f64)> = t_quadrature.iter().map(|&t| eval(t)).collect();
        // integrand in ln t is |.|^2 t^2
        let mut total = 0.0;
        for i in 1..t_quadrature.len() {
            let (a, b) = (t_quadrature[i - 1], t_quadrature[i]);
            total += 0.5 * (b.ln() - a.ln()) * (vals[i - 1].0 * a * a + vals[i].0 * b * b);
        }
        // linear head on (0, t_0): the integrand |.|^2 t vanishes at 0
        let t0 = t_quadrature[0];
        total += 0.5 * t0 * t0 * vals[0].0;
        let tt = *t_quadrature.last().unwrap();
        let a = lam.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
        let frob2 = w * bx_perp.norm_l2().powi(2);
        let tail_bound = frob2 * vals.last().unwrap().1 * (tt / (2.0 * a) + 1.0 / (4.0 * a * a));
        Ok(SquareFunction { ratio: total / hn2, tail_bound: tail_bound / hn2 })
    }

    /// `e^{-t BD} v0` for `v0` in the right sector of `BD`; `u = -v_perp`
    /// and `f = D v`.
    pub fn conjugate_system(&self, field: &CoefficientField, v0: &GridField, heights: &[f64]) -> Result<ConjugateSystem> {
        let g = self.grid().clone();
        if !v0.is_full() || v0.grid != g {
            return Err(Error::DimensionMismatch("v0 must be a full field on the same grid".into()));
        }
        let split = SpectralSplit { kind: OperatorKind::Bd, calculus: self.calc.clone() };
        let proj = Semigroup::new(&split, Side::Plus).apply(0.0, &v0.values)?;
        let scale = v0.l2_norm().max(f64::MIN_POSITIVE);
        let off = GridField { grid: g.clone(), comps: v0.comps, values: proj }.sub(v0).l2_norm() / scale;
        if off > 1e-8 {
            return Err(Error::NotInSector { residual: off });
        }
        let (m, n, c) = (g.m, g.n, g.components());
        let mut slices = Vec::with_capacity(heights.len());
        let mut worst: f64 = 0.0;
        for &t in heights {
            let mult = self.right(t)?;
            let v = self.calc.apply(OperatorKind::Bd, &mult, &v0.values);
            let dv_mult: Vec<C64> = self.calc.eigenvalues.iter().zip(&mult).map(|(l, e)| -l * e).collect();
            let dvdt = self.calc.apply(OperatorKind::Bd, &dv_mult, &v0.values);
            let v = GridField::from_values(&g, c, v)?;
            let f = GridField::from_values(&g, c, self.fourier.apply_d(&v.values))?;
            let u = v.perp().scale(C64::new(-1.0, 0.0));
            // u = -v_perp, so dt u = -(dt v)_perp
            let grad_u = self.fourier.gradient(&u.values, m);
            let mut num = 0.0;
            for p in 0..g.points() {
                let a = &field.samples[p];
                for i in 0..m {
                    let mut lhs = C64::new(0.0, 0.0);
                    for j in 0..m {
                        lhs += a.get(i, j) * -dvdt[p * c + j];
                        for l in 0..n {
                            lhs += a.get(i, m + j * n + l) * grad_u[p * m * n + j * n + l];
                        }
                    }
                    num += (lhs - f.values[p * c + i]).norm_sqr();
                    for l in 0..n {
                        num += (grad_u[p * m * n + i * n + l] - f.values[p * c + m + i * n + l]).norm_sqr();
                    }
                }
            }
            let den = f.values.iter().map(|z| z.norm_sqr()).sum::<f64>().max(f64::MIN_POSITIVE);
            if f.l2_norm() > 0.0 {
                worst = worst.max((num / den).sqrt());
            }
            slices.push(SolutionSlice { t, u, conormal: f });
        }
        Ok(ConjugateSystem { slices, identity_residual: worst })
    }

    /// `|<(b_t(BD_A)[h,0])_perp, g> - <h, (e^{t DB_{A*}} E-_{A*} [g,0])_perp>|`,
    /// relative to `|h| |g|`.
    pub fn duality_residual(&self, star: &LayerPotentials, t: f64, h: &GridField, g: &GridField) -> Result<f64> {
        let lhs = self.double_layer_t(t, h)?.inner(g);
        let split = SpectralSplit { kind: OperatorKind::Db, calculus: star.calc.clone() };
        let back = Semigroup::new(&split, Side::Minus).apply(-t, &g.normal_embedding().values)?;
        let back = GridField::from_values(self.grid(), self.grid().components(), back)?.perp();
        let rhs = h.inner(&back);
        Ok((lhs - rhs).norm() / (h.l2_norm() * g.l2_norm()).max(f64::MIN_POSITIVE))
    }
}

/// Discrete `N~*` over Whitney boxes: heights in `[t/c0, c0 t]`, horizontal
/// window `|y - x| < c1 t`. The `L2` average is normalized so that a
/// constant of modulus one maps to one. Components are grouped per system
/// index (`m` groups).
pub fn nontangential_maximal(slices: &[(f64, &GridField)], params: &WhitneyParams) -> Result<GridField> {
    params.validate()?;
    let Some((_, first)) = slices.first() else {
        return Err(Error::config("slices", "at least one slice is required"));
    };
    let grid = first.grid.clone();
    let comps = first.comps;
    let m = grid.m;
    let n = grid.n;
    let group = |c: usize| if comps == m || c < m { c % m } else { (c - m) / n };
    let mut order: Vec<usize> = (0..slices.len()).collect();
    order.sort_by(|&a, &b| slices[a].0.total_cmp(&slices[b].0));
    // midpoint cell widths in t
    let ts: Vec<f64> = order.iter().map(|&i| slices[i].0).collect();
    let dt: Vec<f64> = (0..ts.len())
        .map(|i| {
            if ts.len() == 1 {
                return 1.0;
            }
            let lo = if i == 0 { ts[0] } else { 0.5 * (ts[i - 1] + ts[i]) };
            let hi = if i + 1 == ts.len() { ts[i] } else { 0.5 * (ts[i] + ts[i + 1]) };
            (hi - lo).max(f64::MIN_POSITIVE)
        })
        .collect();
    let np = grid.points();
    let mut out = GridField::zeros(&grid, m);
    for x in 0..np {
        for &tc in &params.t_samples {
            let (lo, hi) = (tc / params.c0, tc * params.c0);
            let radius = params.c1 * tc;
            let mut mass = vec![0.0; m];
            let mut weight = vec![0.0; m];
            for (k, &si) in order.iter().enumerate() {
                let t = ts[k];
                if t < lo || t > hi {
                    continue;
                }
                let f = slices[si].1;
                for y in 0..np {
                    if grid.distance(x, y) >= radius {
                        continue;
                    }
                    for c in 0..comps {
                        mass[group(c)] += dt[k] * f.values[y * comps + c].norm_sqr();
                    }
                    for gi in 0..m {
                        weight[gi] += dt[k];
                    }
                }
            }
            for gi in 0..m {
                if weight[gi] > 0.0 {
                    let avg = (mass[gi] / weight[gi]).sqrt();
                    if avg > out.values[x * m + gi].re {
                        out.values[x * m + gi] = C64::new(avg, 0.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct KkptRow {
    pub k: f64,
    pub sigma_double_layer: f64,
    pub norm_double_layer: f64,
    pub sigma_neumann: f64,
    pub norm_neumann: f64,
    pub double_layer_invertible: bool,
}

/// Smallest singular values of both boundary operators along a `k` ladder.
pub fn kkpt_sweep(grid: &TorusGrid, kvalues: &[f64]) -> Result<Vec<KkptRow>> {
    if grid.n != 1 || grid.m != 1 {
        return Err(Error::config("grid", "kkpt sweep requires n = 1 and m = 1"));
    }
    let row = |&k: &f64| -> Result<KkptRow> {
        let lp = LayerPotentials::new(&FamilyConfig::kkpt(k).build(grid)?)?;
        let dl = lp.double_layer_boundary();
        let (sd, nd) = dl.sigma_range();
        let (sn, nn) = lp.neumann_operator().sigma_range();
        Ok(KkptRow {
            k,
            sigma_double_layer: sd,
            norm_double_layer: nd,
            sigma_neumann: sn,
            norm_neumann: nn,
            double_layer_invertible: sd > INVERTIBILITY_THRESHOLD * nd,
        })
    };
    crate::par_map(kvalues, row).into_iter().collect()
}

/// `|D~^A - D~^{A0}|_op / |A - A0|_inf` on mean-zero fields; zero when the
/// fields agree to `1e-14`.
pub fn coefficient_stability(field_a: &CoefficientField, field_a0: &CoefficientField) -> Result<f64> {
    if field_a.grid != field_a0.grid {
        return Err(Error::DimensionMismatch("fields live on different grids".into()));
    }
    let dist = field_a.sup_distance(field_a0);
    if dist <= 1e-14 {
        return Ok(0.0);
    }
    let a = LayerPotentials::new(field_a)?.double_layer_boundary();
    let b = LayerPotentials::new(field_a0)?.double_layer_boundary();
    let diff = &a.restricted - &b.restricted;
    Ok(crate::coeff::spectral_norm(diff.as_ref()) / dist)
}

/// `A0 + eps P` with `P` a seeded smooth field of low Fourier modes,
/// normalized to `max_x |P(x)|_2 = 1`.
pub fn perturb(base: &CoefficientField, eps: f64, seed: u64) -> Result<CoefficientField> {
    use rand::{Rng, SeedableRng};
    let grid = &base.grid;
    let (n, m) = (grid.n, grid.m);
    let s = (1 + n) * m;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::new();
    for _ in 0..3 {
        let k: Vec<f64> = (0..n).map(|_| rng.gen_range(-2i32..=2) as f64).collect();
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mat: Vec<C64> = (0..s * s).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        modes.push((k, phase, mat));
    }
    let raw: Vec<Mat<C64>> = (0..grid.points())
        .map(|p| {
            let x = grid.coords(p);
            Mat::from_fn(s, s, |i, j| {
                modes
                    .iter()
                    .map(|(k, ph, mat)| {
                        let arg: f64 = k.iter().zip(&x).map(|(a, b)| a * b * std::f64::consts::TAU / grid.length).sum::<f64>() + ph;
                        mat[i * s + j] * (1.0 + arg.cos())
                    })
                    .sum()
            })
        })
        .collect();
    let sup = raw.iter().map(|r| crate::coeff::spectral_norm(r.as_ref())).fold(0.0, f64::max);
    let samples = base
        .samples
        .iter()
        .zip(&raw)
        .map(|(a, r)| crate::coeff::BlockCoefficient::from_fn(n, m, |i, j| a.get(i, j) + r[(i, j)] * (eps / sup)))
        .collect();
    CoefficientField::new(grid.clone(), samples)
}
