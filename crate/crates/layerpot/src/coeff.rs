//! Pointwise block-matrix algebra for coefficients.
//!
//! A `BlockCoefficient` is one `(1+n)m` square complex matrix with the normal
//! (perp) components first, followed by the tangential (par) components in the
//! order `m + i*n + l` for system index `i` and direction `l`.

use std::f64::consts::PI;

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, MatRef, Side};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::TorusGrid;

pub type C64 = Complex64;

/// A_perp_perp blocks with a larger condition number are treated as singular.
pub const NORMAL_BLOCK_COND_LIMIT: f64 = 1e12;

/// Frozen bounds for the pullback: `|A_s| <= C (1+|s|^2) |A|` and
/// `kappa(A_s) >= c kappa(A) / (1+|s|^2)`. The measured suprema are about
/// 1.34 and 0.75 in every dimension since the congruence is a Kronecker
/// product with the identity.
pub const PULLBACK_NORM_CONST: f64 = 1.5;
pub const PULLBACK_KAPPA_CONST: f64 = 0.7;

const RANGE_ROTATIONS: usize = 256;
const RANGE_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct BlockCoefficient {
    n: usize,
    m: usize,
    mat: Mat<C64>,
}

impl PartialEq for BlockCoefficient {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.m == other.m && self.mat == other.mat
    }
}

impl BlockCoefficient {
    pub fn new(n: usize, m: usize, mat: Mat<C64>) -> Result<Self> {
        let s = (1 + n) * m;
        if mat.nrows() != s || mat.ncols() != s {
            return Err(Error::DimensionMismatch(format!(
                "expected {s}x{s} block coefficient, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(Self { n, m, mat })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        let s = (1 + n) * m;
        Self { n, m, mat: Mat::identity(s, s) }
    }

    pub fn from_fn(n: usize, m: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        let s = (1 + n) * m;
        Self { n, m, mat: Mat::from_fn(s, s, f) }
    }

    /// Assembles the four blocks `[pp, pq; qp, qq]`.
    pub fn from_blocks(
        n: usize,
        m: usize,
        pp: MatRef<'_, C64>,
        pq: MatRef<'_, C64>,
        qp: MatRef<'_, C64>,
        qq: MatRef<'_, C64>,
    ) -> Result<Self> {
        let mn = m * n;
        let ok = pp.shape() == (m, m)
            && pq.shape() == (m, mn)
            && qp.shape() == (mn, m)
            && qq.shape() == (mn, mn);
        if !ok {
            return Err(Error::DimensionMismatch("block shapes do not match (n, m)".into()));
        }
        Ok(Self::from_fn(n, m, |i, j| match (i < m, j < m) {
            (true, true) => pp[(i, j)],
            (true, false) => pq[(i, j - m)],
            (false, true) => qp[(i - m, j)],
            (false, false) => qq[(i - m, j - m)],
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn size(&self) -> usize {
        (1 + self.n) * self.m
    }

    pub fn matrix(&self) -> MatRef<'_, C64> {
        self.mat.as_ref()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.mat[(i, j)]
    }

    pub fn perp_perp(&self) -> MatRef<'_, C64> {
        self.mat.as_ref().submatrix(0, 0, self.m, self.m)
    }

    pub fn perp_par(&self) -> MatRef<'_, C64> {
        self.mat.as_ref().submatrix(0, self.m, self.m, self.m * self.n)
    }

    pub fn par_perp(&self) -> MatRef<'_, C64> {
        self.mat.as_ref().submatrix(self.m, 0, self.m * self.n, self.m)
    }

    pub fn par_par(&self) -> MatRef<'_, C64> {
        let mn = self.m * self.n;
        self.mat.as_ref().submatrix(self.m, self.m, mn, mn)
    }

    pub fn adjoint(&self) -> Self {
        Self { n: self.n, m: self.m, mat: self.mat.adjoint().to_owned() }
    }

    pub fn apply(&self, v: &[C64], out: &mut [C64]) {
        let s = self.size();
        for i in 0..s {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..s {
                acc += self.mat[(i, j)] * v[j];
            }
            out[i] = acc;
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.mat.norm_l2()
    }

    pub fn op_norm(&self) -> f64 {
        spectral_norm(self.mat.as_ref())
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn hermitian_min_eig(&self) -> f64 {
        hermitian_part_extreme(self.mat.as_ref(), C64::new(1.0, 0.0), false)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = &self.mat - self.mat.adjoint();
        d.norm_max() <= tol * self.mat.norm_max().max(1.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { n: self.n, m: self.m, mat: &self.mat - &other.mat }
    }

    /// Largest `|arg z|` over the numerical range of the matrix.
    pub fn sector_angle(&self) -> f64 {
        if self.is_hermitian(1e-15) {
            return 0.0;
        }
        let conj = self.mat.conjugate().to_owned();
        upper_sector_angle(self.mat.as_ref()).max(upper_sector_angle(conj.as_ref()))
    }
}

pub(crate) fn spectral_norm(a: MatRef<'_, C64>) -> f64 {
    a.singular_values().map(|s| s[0]).unwrap_or(f64::NAN)
}

/// Extreme eigenvalue of the Hermitian part of `rot * A`.
fn hermitian_part_extreme(a: MatRef<'_, C64>, rot: C64, largest: bool) -> f64 {
    let s = a.nrows();
    let h = Mat::from_fn(s, s, |i, j| (rot * a[(i, j)] + (rot * a[(j, i)]).conj()) * 0.5);
    let ev = h.self_adjoint_eigenvalues(Side::Lower).expect("hermitian eigenvalues");
    if largest { ev[s - 1] } else { ev[0] }
}

/// Smallest angle `phi` in `[0, pi/2]` such that the numerical range lies
/// below the ray of angle `phi`. The support function in the normal
/// direction `e^{i(phi + pi/2)}` is scanned on a fixed rotation ladder and
/// the first sign change is refined by bisection.
fn upper_sector_angle(a: MatRef<'_, C64>) -> f64 {
    let support = |phi: f64| {
        let rot = C64::from_polar(1.0, -(phi + PI / 2.0));
        hermitian_part_extreme(a, rot, true)
    };
    if support(0.0) <= 0.0 {
        return 0.0;
    }
    let step = (PI / 2.0) / RANGE_ROTATIONS as f64;
    let mut hi = PI / 2.0;
    for j in 1..=RANGE_ROTATIONS {
        let phi = j as f64 * step;
        if support(phi) <= 0.0 {
            hi = phi;
            break;
        }
    }
    let mut lo = hi - step;
    while hi - lo > RANGE_TOL * 1e-2 {
        let mid = 0.5 * (lo + hi);
        if support(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// The condition number is taken relative to the whole matrix, so that a
/// tiny scalar normal block is rejected as well.
fn normal_block_inverse(a: &BlockCoefficient) -> Result<Mat<C64>> {
    let pp = a.perp_perp();
    let sv = pp.singular_values().map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let smin = sv[sv.len() - 1];
    let scale = sv[0].max(a.op_norm());
    let cond = if smin > 0.0 { scale / smin } else { f64::INFINITY };
    if !(cond <= NORMAL_BLOCK_COND_LIMIT) {
        return Err(Error::SingularNormalBlock { cond });
    }
    Ok(pp.partial_piv_lu().inverse())
}

/// The transform exchanging `dt u` and the conormal derivative.
pub fn hat_transform(a: &BlockCoefficient) -> Result<BlockCoefficient> {
    let inv = normal_block_inverse(a)?;
    let pq = a.perp_par();
    let qp = a.par_perp();
    let qq = a.par_par();
    let inv_pq = &inv * pq;
    let new_pp = inv.clone();
    let new_pq = -&inv_pq;
    let new_qp = qp * &inv;
    let new_qq = qq - qp * &inv_pq;
    BlockCoefficient::from_blocks(
        a.n,
        a.m,
        new_pp.as_ref(),
        new_pq.as_ref(),
        new_qp.as_ref(),
        new_qq.as_ref(),
    )
}

/// `|hat(hat(a)) - a|_F`.
pub fn hat_involution_check(a: &BlockCoefficient) -> Result<f64> {
    let b = hat_transform(a)?;
    let aa = hat_transform(&b)?;
    Ok(aa.sub(a).frobenius())
}

/// `|hat(a*) - N hat(a)* N|_F`.
pub fn dual_hat_check(a: &BlockCoefficient) -> Result<f64> {
    let lhs = hat_transform(&a.adjoint())?;
    let n = ReflectionN::new(a.n, a.m);
    let rhs = n.conjugate(&hat_transform(a)?.adjoint());
    Ok(lhs.sub(&rhs).frobenius())
}

/// The reflection `diag(-I_m, I_mn)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReflectionN {
    pub n: usize,
    pub m: usize,
}

impl ReflectionN {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m }
    }

    pub fn sign(&self, component: usize) -> f64 {
        if component < self.m { -1.0 } else { 1.0 }
    }

    pub fn matrix(&self) -> Mat<C64> {
        let s = (1 + self.n) * self.m;
        Mat::from_fn(s, s, |i, j| if i == j { C64::new(self.sign(i), 0.0) } else { C64::new(0.0, 0.0) })
    }

    /// `N a N`.
    pub fn conjugate(&self, a: &BlockCoefficient) -> BlockCoefficient {
        BlockCoefficient::from_fn(a.n, a.m, |i, j| a.mat[(i, j)] * (self.sign(i) * self.sign(j)))
    }

    /// Applies N to a flattened field with `(1+n)m` components per point.
    pub fn apply_in_place(&self, values: &mut [C64]) {
        let c = (1 + self.n) * self.m;
        for chunk in values.chunks_mut(c) {
            for v in chunk.iter_mut().take(self.m) {
                *v = -*v;
            }
        }
    }
}

/// `A_s = [1, -s^t; 0, I] A [1, 0; -s, I]` with each entry acting on the
/// system index.
pub fn lipschitz_pullback(a: &BlockCoefficient, sigma: &[f64]) -> BlockCoefficient {
    assert_eq!(sigma.len(), a.n, "slope vector length must equal n");
    let right = shear_matrix(a.n, a.m, sigma);
    let left = right.transpose().to_owned();
    BlockCoefficient { n: a.n, m: a.m, mat: &left * &a.mat * &right }
}

/// `[1, 0; -s, I]` tensored with the system identity.
fn shear_matrix(n: usize, m: usize, sigma: &[f64]) -> Mat<C64> {
    let s = (1 + n) * m;
    let mut r = Mat::<C64>::identity(s, s);
    for i in 0..m {
        for (l, sl) in sigma.iter().enumerate() {
            r[(m + i * n + l, i)] = C64::new(-sl, 0.0);
        }
    }
    r
}

/// Grid-sampled coefficients with accretivity metadata. `kappa` is computed
/// from the samples, `omega` from their hat transforms.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub grid: TorusGrid,
    pub samples: Vec<BlockCoefficient>,
    pub kappa: f64,
    pub omega: f64,
}

impl CoefficientField {
    pub fn new(grid: TorusGrid, samples: Vec<BlockCoefficient>) -> Result<Self> {
        if samples.len() != grid.points() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {} grid points",
                samples.len(),
                grid.points()
            )));
        }
        for s in &samples {
            if s.n != grid.n || s.m != grid.m {
                return Err(Error::DimensionMismatch("sample dimensions differ from grid".into()));
            }
        }
        let mut field = Self { grid, samples, kappa: 0.0, omega: 0.0 };
        let (kappa, omega) = accretivity_bounds(&field)?;
        field.kappa = kappa;
        field.omega = omega;
        Ok(field)
    }

    pub fn constant(grid: TorusGrid, a: BlockCoefficient) -> Result<Self> {
        let samples = vec![a; grid.points()];
        Self::new(grid, samples)
    }

    /// Pointwise hat transform, itself an accretive field.
    pub fn hat(&self) -> Result<Vec<BlockCoefficient>> {
        self.samples.iter().map(hat_transform).collect()
    }

    pub fn adjoint(&self) -> Result<Self> {
        let samples = self.samples.iter().map(|s| s.adjoint()).collect();
        // hat(A*) = N hat(A)* N has the conjugate numerical range, so kappa
        // and omega carry over unchanged.
        Ok(Self { grid: self.grid.clone(), samples, kappa: self.kappa, omega: self.omega })
    }

    /// Pullback by slopes `sigma[p]` given per grid point.
    pub fn pullback(&self, sigma: &[Vec<f64>]) -> Result<Self> {
        if sigma.len() != self.samples.len() {
            return Err(Error::DimensionMismatch("one slope vector per grid point expected".into()));
        }
        let samples = self.samples.iter().zip(sigma).map(|(a, s)| lipschitz_pullback(a, s)).collect();
        Self::new(self.grid.clone(), samples)
    }

    /// `max_x |A(x) - A0(x)|_2`.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.sub(b).op_norm())
            .fold(0.0, f64::max)
    }
}

/// `(kappa, omega)` for a field; also asserts that the hat-transformed field
/// stays accretive.
pub fn accretivity_bounds(field: &CoefficientField) -> Result<(f64, f64)> {
    let mut kappa = f64::INFINITY;
    let mut kappa_hat = f64::INFINITY;
    let mut omega: f64 = 0.0;
    let mut last: Option<(&BlockCoefficient, f64, f64, f64)> = None;
    for a in &field.samples {
        let (k, kh, w) = match last {
            Some((prev, k, kh, w)) if prev == a => (k, kh, w),
            _ => {
                let k = a.hermitian_min_eig();
                if !(k > 0.0) {
                    return Err(Error::NotAccretive { kappa: k });
                }
                let b = hat_transform(a)?;
                (k, b.hermitian_min_eig(), b.sector_angle())
            }
        };
        kappa = kappa.min(k);
        kappa_hat = kappa_hat.min(kh);
        omega = omega.max(w);
        last = Some((a, k, kh, w));
    }
    if !(kappa_hat > 0.0) {
        return Err(Error::NotAccretive { kappa: kappa_hat });
    }
    Ok((kappa, omega))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Identity,
    Constant,
    HermitianRandom,
    Block,
    Kkpt,
    CustomTable,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Identity => "identity",
            Family::Constant => "constant",
            Family::HermitianRandom => "hermitian_random",
            Family::Block => "block",
            Family::Kkpt => "kkpt",
            Family::CustomTable => "custom_table",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Row-major complex pairs `[re, im]`; one matrix, or one per grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<serde_json::Value>,
}

impl FamilyConfig {
    pub fn of(family: Family) -> Self {
        Self { family, k: None, seed: None, matrix: None }
    }

    pub fn kkpt(k: f64) -> Self {
        Self { k: Some(k), ..Self::of(Family::Kkpt) }
    }

    pub fn seeded(family: Family, seed: u64) -> Self {
        Self { seed: Some(seed), ..Self::of(family) }
    }

    pub fn build(&self, grid: &TorusGrid) -> Result<CoefficientField> {
        let (n, m) = (grid.n, grid.m);
        let seed = self.seed.unwrap_or(0);
        match self.family {
            Family::Identity => CoefficientField::constant(grid.clone(), BlockCoefficient::identity(n, m)),
            Family::Constant => {
                let a = match &self.matrix {
                    Some(v) => parse_matrix(v, (1 + n) * m, "matrix")?,
                    None => random_accretive(n, m, &mut ChaCha8Rng::seed_from_u64(seed)),
                };
                CoefficientField::constant(grid.clone(), BlockCoefficient::new(n, m, a)?)
            }
            Family::Block => CoefficientField::constant(grid.clone(), block_default(n, m)),
            Family::HermitianRandom => {
                let gen = SmoothHermitian::new(n, m, seed);
                let samples = (0..grid.points()).map(|p| gen.eval(&grid.coords(p), grid.length)).collect();
                CoefficientField::new(grid.clone(), samples)
            }
            Family::Kkpt => {
                if n != 1 || m != 1 {
                    return Err(Error::config("family", "kkpt requires n = 1 and m = 1"));
                }
                let k = self.k.unwrap_or(0.5);
                if !k.is_finite() || k < 0.0 {
                    return Err(Error::config("k", "must be a finite nonnegative number"));
                }
                let samples = (0..grid.points()).map(|p| kkpt_sample(k, grid.periodic_sign(p))).collect();
                CoefficientField::new(grid.clone(), samples)
            }
            Family::CustomTable => {
                let v = self.matrix.as_ref().ok_or_else(|| Error::config("matrix", "required for custom_table"))?;
                let s = (1 + n) * m;
                let samples = match v.as_array() {
                    Some(rows) if rows.len() == grid.points() && depth(v) == 4 => rows
                        .iter()
                        .map(|r| BlockCoefficient::new(n, m, parse_matrix(r, s, "matrix")?))
                        .collect::<Result<Vec<_>>>()?,
                    _ => vec![BlockCoefficient::new(n, m, parse_matrix(v, s, "matrix")?)?; grid.points()],
                };
                CoefficientField::new(grid.clone(), samples)
            }
        }
    }
}

pub fn kkpt_sample(k: f64, sign: f64) -> BlockCoefficient {
    let ks = k * sign;
    BlockCoefficient::from_fn(1, 1, |i, j| match (i, j) {
        (0, 1) => C64::new(ks, 0.0),
        (1, 0) => C64::new(-ks, 0.0),
        _ => C64::new(1.0, 0.0),
    })
}

fn block_default(n: usize, m: usize) -> BlockCoefficient {
    BlockCoefficient::from_fn(n, m, |i, j| {
        if i != j {
            C64::new(0.0, 0.0)
        } else if i < m {
            C64::new(2.0, 0.0)
        } else {
            C64::new(0.5, 0.0)
        }
    })
}

/// A random constant matrix whose Hermitian part has smallest eigenvalue 0.5.
pub fn random_accretive(n: usize, m: usize, rng: &mut impl Rng) -> Mat<C64> {
    let s = (1 + n) * m;
    let mut a = Mat::from_fn(s, s, |_, _| C64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)));
    let lo = hermitian_part_extreme(a.as_ref(), C64::new(1.0, 0.0), false);
    for i in 0..s {
        a[(i, i)] += C64::new(0.5 - lo, 0.0);
    }
    a
}

fn random_hermitian_unit(s: usize, rng: &mut impl Rng) -> Mat<C64> {
    let g = Mat::from_fn(s, s, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let h = (&g + g.adjoint()) * faer::Scale(C64::new(0.5, 0.0));
    let norm = spectral_norm(h.as_ref());
    h * faer::Scale(C64::new(1.0 / norm, 0.0))
}

/// Smooth Hermitian field `I + sum_j a_j (H_j cos(k_j.x) + H'_j sin(k_j.x))`
/// with the amplitudes summing to 0.3, so that `kappa >= 0.5` on every grid.
#[derive(Clone, Debug)]
pub struct SmoothHermitian {
    n: usize,
    m: usize,
    terms: Vec<(Vec<f64>, f64, Mat<C64>, Mat<C64>)>,
}

impl SmoothHermitian {
    pub fn new(n: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_4e31);
        let s = (1 + n) * m;
        let waves: Vec<Vec<f64>> = if n == 1 {
            vec![vec![1.0], vec![2.0], vec![3.0]]
        } else {
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, -1.0]]
        };
        let weights: Vec<f64> = waves.iter().map(|_| rng.gen_range(0.5..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let terms = waves
            .into_iter()
            .zip(weights)
            .map(|(k, w)| {
                let amp = 0.3 * w / total;
                (k, amp, random_hermitian_unit(s, &mut rng), random_hermitian_unit(s, &mut rng))
            })
            .collect();
        Self { n, m, terms }
    }

    pub fn eval(&self, x: &[f64], length: f64) -> BlockCoefficient {
        let s = (1 + self.n) * self.m;
        let mut a = Mat::<C64>::identity(s, s);
        for (k, amp, hc, hs) in &self.terms {
            let phase: f64 = k.iter().zip(x).map(|(k, x)| 2.0 * PI * k * x / length).sum();
            let (c, sn) = (amp * phase.cos(), amp * phase.sin());
            for i in 0..s {
                for j in 0..s {
                    a[(i, j)] += hc[(i, j)] * c + hs[(i, j)] * sn;
                }
            }
        }
        BlockCoefficient { n: self.n, m: self.m, mat: a }
    }
}

fn depth(v: &serde_json::Value) -> usize {
    match v.as_array().and_then(|a| a.first()) {
        Some(first) => 1 + depth(first),
        None => usize::from(v.is_array()),
    }
}

/// Parses an `s x s` matrix of `[re, im]` pairs.
pub fn parse_matrix(v: &serde_json::Value, s: usize, field: &str) -> Result<Mat<C64>> {
    let bad = |msg: String| Error::config(field, msg);
    let rows = v.as_array().ok_or_else(|| bad("expected an array of rows".into()))?;
    if rows.len() != s {
        return Err(bad(format!("expected {s} rows, found {}", rows.len())));
    }
    let mut out = Mat::<C64>::zeros(s, s);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or_else(|| bad(format!("row {i} is not an array")))?;
        if row.len() != s {
            return Err(bad(format!("row {i} has {} entries, expected {s}", row.len())));
        }
        for (j, e) in row.iter().enumerate() {
            let pair = e.as_array().filter(|p| p.len() == 2).ok_or_else(|| bad(format!("entry ({i},{j}) is not [re, im]")))?;
            let re = pair[0].as_f64().ok_or_else(|| bad(format!("entry ({i},{j}) re is not a number")))?;
            let im = pair[1].as_f64().ok_or_else(|| bad(format!("entry ({i},{j}) im is not a number")))?;
            out[(i, j)] = C64::new(re, im);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn real2(a: [[f64; 2]; 2]) -> BlockCoefficient {
        BlockCoefficient::from_fn(1, 1, |i, j| c(a[i][j]))
    }

    fn assert_close(a: &BlockCoefficient, b: &BlockCoefficient, tol: f64) {
        let r = a.sub(b).frobenius();
        assert!(r <= tol, "residual {r:e}");
    }

    #[test]
    fn hat_identity_is_fixed() {
        for (n, m) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            let i = BlockCoefficient::identity(n, m);
            assert_close(&hat_transform(&i).unwrap(), &i, 0.0);
        }
    }

    #[test]
    fn hat_hand_example() {
        let a = real2([[2.0, 1.0], [0.0, 1.0]]);
        let b = hat_transform(&a).unwrap();
        assert_close(&b, &real2([[0.5, -0.5], [0.0, 1.0]]), 1e-15);
        assert!(hat_involution_check(&a).unwrap() <= 1e-15);
    }

    #[test]
    fn hat_of_kkpt() {
        for s in [1.0, -1.0] {
            let k = 0.7;
            let b = hat_transform(&kkpt_sample(k, s)).unwrap();
            assert_close(&b, &real2([[1.0, -k * s], [-k * s, 1.0 + k * k]]), 1e-15);
        }
        assert!(dual_hat_check(&kkpt_sample(0.5, 1.0)).unwrap() <= 1e-12);
    }

    #[test]
    fn singular_normal_block_is_rejected() {
        let a = real2([[0.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(hat_transform(&a), Err(Error::SingularNormalBlock { .. })));
        let a = real2([[1e-13, 0.0], [0.0, 1.0]]);
        assert!(matches!(hat_transform(&a), Err(Error::SingularNormalBlock { .. })));
        let a = BlockCoefficient::from_fn(1, 2, |i, j| match (i, j) {
            (0, 0) => c(1.0),
            (1, 1) => c(1e-14),
            (0, 1) | (1, 0) => c(0.0),
            _ => c(if i == j { 1.0 } else { 0.0 }),
        });
        assert!(matches!(hat_transform(&a), Err(Error::SingularNormalBlock { .. })));
    }

    #[test]
    fn reflection_is_an_involution() {
        let n = ReflectionN::new(2, 2).matrix();
        assert_eq!(&n * &n, Mat::<C64>::identity(6, 6));
        assert_eq!(n.adjoint().to_owned(), n);
    }

    #[test]
    fn pullback_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = BlockCoefficient::new(2, 2, random_accretive(2, 2, &mut rng)).unwrap();
        assert_eq!(lipschitz_pullback(&a, &[0.0, 0.0]), a);
        let s = 1.7;
        let p = lipschitz_pullback(&BlockCoefficient::identity(1, 1), &[s]);
        assert_close(&p, &real2([[1.0 + s * s, -s], [-s, 1.0]]), 1e-14);
        let p = lipschitz_pullback(&BlockCoefficient::identity(1, 1), &[3.0]);
        assert!(p.hermitian_min_eig() > 0.0);
    }

    #[test]
    fn sector_angle_of_rotated_scalar() {
        // the numerical range of e^{i a} I is the single point e^{i a}
        let a = BlockCoefficient::from_fn(1, 1, |i, j| if i == j { C64::from_polar(1.0, 0.4) } else { c(0.0) });
        assert!((a.sector_angle() - 0.4).abs() <= RANGE_TOL);
        // a normal matrix with eigenvalues 1 +- i has a segment from 1-i to 1+i
        let b = BlockCoefficient::from_fn(1, 1, |i, j| match (i, j) {
            (0, 0) | (1, 1) => c(1.0),
            (0, 1) => c(1.0),
            _ => c(-1.0),
        });
        assert!((b.sector_angle() - PI / 4.0).abs() <= RANGE_TOL);
    }

    #[test]
    fn family_bounds() {
        let g = TorusGrid::new(1, 16, 2.0 * PI, 1).unwrap();
        let f = FamilyConfig::of(Family::Identity).build(&g).unwrap();
        assert_eq!((f.kappa, f.omega), (1.0, 0.0));
        let f = FamilyConfig::kkpt(0.9).build(&g).unwrap();
        assert!((f.kappa - 1.0).abs() < 1e-14 && f.omega == 0.0);
        let diag = serde_json::json!([[[2.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.5, 0.0]]]);
        let cfg = FamilyConfig { matrix: Some(diag), ..FamilyConfig::of(Family::Constant) };
        let f = cfg.build(&g).unwrap();
        assert!((f.kappa - 0.5).abs() < 1e-14 && f.omega == 0.0);
        let f = FamilyConfig::seeded(Family::HermitianRandom, 7).build(&g).unwrap();
        // the hat of a Hermitian field has skew off-diagonal blocks
        assert!(f.kappa >= 0.4 && f.omega > 0.0 && f.omega < PI / 2.0);
    }

    #[test]
    fn non_accretive_is_rejected() {
        let g = TorusGrid::new(1, 8, 2.0 * PI, 1).unwrap();
        let m = serde_json::json!([[[1.0, 0.0], [3.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]);
        let cfg = FamilyConfig { matrix: Some(m), ..FamilyConfig::of(Family::CustomTable) };
        assert!(matches!(cfg.build(&g), Err(Error::NotAccretive { .. })));
    }

    fn accretive_strategy() -> impl Strategy<Value = BlockCoefficient> {
        (1usize..=2, 1usize..=2, any::<u64>()).prop_map(|(n, m, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            BlockCoefficient::new(n, m, random_accretive(n, m, &mut rng)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn hat_algebra(a in accretive_strategy()) {
            prop_assert!(hat_involution_check(&a).unwrap() <= 1e-10);
            prop_assert!(dual_hat_check(&a).unwrap() <= 1e-10);
            prop_assert!(hat_transform(&a).unwrap().hermitian_min_eig() > 0.0);
        }

        #[test]
        fn pullback_round_trip_and_bounds(a in accretive_strategy(), s0 in -4.0f64..4.0, s1 in -4.0f64..4.0) {
            let sigma: Vec<f64> = [s0, s1][..a.n()].to_vec();
            let minus: Vec<f64> = sigma.iter().map(|s| -s).collect();
            let back = lipschitz_pullback(&lipschitz_pullback(&a, &sigma), &minus);
            prop_assert!(back.sub(&a).frobenius() <= 1e-10 * a.frobenius());
            let p = lipschitz_pullback(&a, &sigma);
            let w = 1.0 + sigma.iter().map(|s| s * s).sum::<f64>();
            prop_assert!(p.op_norm() <= PULLBACK_NORM_CONST * w * a.op_norm());
            prop_assert!(p.hermitian_min_eig() >= PULLBACK_KAPPA_CONST * a.hermitian_min_eig() / w);
        }
    }
}
