//! Periodic Fourier grid standing in for the boundary `R^n`.
//!
//! Points are cell centers `(j + 1/2) h`, flattened as `p = ix + N * iy`.
//! Field values are flattened as `p * comps + component`. All matrices act on
//! these flattened vectors with the plain Euclidean inner product; the
//! quadrature weight `h^n` only enters reported `L2` norms and pairings.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::coeff::{BlockCoefficient, CoefficientField, C64};
use crate::error::{Error, Result};

pub const MAX_POINTS_1D: usize = 1024;
pub const MAX_POINTS_2D: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusGrid {
    pub n: usize,
    #[serde(rename = "N")]
    pub size: usize,
    #[serde(rename = "L", default = "default_length")]
    pub length: f64,
    #[serde(default = "default_m")]
    pub m: usize,
}

fn default_length() -> f64 {
    2.0 * PI
}

fn default_m() -> usize {
    1
}

impl TorusGrid {
    pub fn new(n: usize, size: usize, length: f64, m: usize) -> Result<Self> {
        let g = Self { n, size, length, m };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 1 && self.n != 2 {
            return Err(Error::config("n", "boundary dimension must be 1 or 2"));
        }
        if self.size < 8 || !self.size.is_power_of_two() {
            return Err(Error::config("N", format!("{} is not a power of two >= 8", self.size)));
        }
        let cap = if self.n == 1 { MAX_POINTS_1D } else { MAX_POINTS_2D };
        if self.size > cap {
            return Err(Error::config("N", format!("{} exceeds the dense ceiling {cap} for n = {}", self.size, self.n)));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::config("L", "period must be positive"));
        }
        if self.m == 0 || self.m > 4 {
            return Err(Error::config("m", "system size must be between 1 and 4"));
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.size.pow(self.n as u32)
    }

    /// Components per point of a full field, `m(1+n)`.
    pub fn components(&self) -> usize {
        self.m * (1 + self.n)
    }

    pub fn dofs(&self) -> usize {
        self.points() * self.components()
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.size as f64
    }

    /// Quadrature weight of one grid cell.
    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.n as i32)
    }

    pub fn multi_index(&self, p: usize) -> [usize; 2] {
        [p % self.size, p / self.size]
    }

    pub fn coords(&self, p: usize) -> Vec<f64> {
        let h = self.spacing();
        let idx = self.multi_index(p);
        (0..self.n).map(|l| (idx[l] as f64 + 0.5) * h).collect()
    }

    /// Wavenumber vector of FFT-ordered mode `p`.
    pub fn wavenumber(&self, p: usize) -> Vec<f64> {
        let idx = self.multi_index(p);
        (0..self.n)
            .map(|l| {
                let k = idx[l] as i64;
                let k = if k >= self.size as i64 / 2 { k - self.size as i64 } else { k };
                2.0 * PI * k as f64 / self.length
            })
            .collect()
    }

    /// `+1` on `(0, L/2)` and `-1` on `(L/2, L)` in the first coordinate.
    pub fn periodic_sign(&self, p: usize) -> f64 {
        if self.coords(p)[0] < 0.5 * self.length { 1.0 } else { -1.0 }
    }

    /// Componentwise periodic displacement `x_p - x_q` folded into `[-L/2, L/2)`.
    pub fn displacement(&self, p: usize, q: usize) -> Vec<f64> {
        let (a, b) = (self.coords(p), self.coords(q));
        a.iter()
            .zip(&b)
            .map(|(a, b)| {
                let d = a - b;
                d - self.length * (d / self.length).round()
            })
            .collect()
    }

    pub fn distance(&self, p: usize, q: usize) -> f64 {
        self.displacement(p, q).iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    pub fn with_size(&self, size: usize) -> Result<Self> {
        Self::new(self.n, size, self.length, self.m)
    }
}

/// Values on the grid, `comps` per point. Full fields carry `m(1+n)`
/// components (perp first), boundary data and potentials carry `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: TorusGrid,
    pub comps: usize,
    pub values: Vec<C64>,
}

impl GridField {
    pub fn zeros(grid: &TorusGrid, comps: usize) -> Self {
        Self { grid: grid.clone(), comps, values: vec![C64::new(0.0, 0.0); grid.points() * comps] }
    }

    pub fn from_values(grid: &TorusGrid, comps: usize, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.points() * comps {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} points x {comps} components",
                values.len(),
                grid.points()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite field value".into()));
        }
        Ok(Self { grid: grid.clone(), comps, values })
    }

    /// Samples `f(x)` for each point into an `m`-component field.
    pub fn scalar(grid: &TorusGrid, f: impl Fn(&[f64]) -> C64) -> Self {
        let m = grid.m;
        let mut out = Self::zeros(grid, m);
        for p in 0..grid.points() {
            let v = f(&grid.coords(p));
            for i in 0..m {
                out.values[p * m + i] = v;
            }
        }
        out
    }

    pub fn is_full(&self) -> bool {
        self.comps == self.grid.components()
    }

    pub fn at(&self, p: usize, c: usize) -> C64 {
        self.values[p * self.comps + c]
    }

    /// Embeds boundary data `h` as `[h, 0]`.
    pub fn normal_embedding(&self) -> GridField {
        let c = self.grid.components();
        let m = self.grid.m;
        let mut out = GridField::zeros(&self.grid, c);
        for p in 0..self.grid.points() {
            for i in 0..m {
                out.values[p * c + i] = self.values[p * m + i];
            }
        }
        out
    }

    pub fn perp(&self) -> GridField {
        let c = self.comps;
        let m = self.grid.m;
        let mut out = GridField::zeros(&self.grid, m);
        for p in 0..self.grid.points() {
            for i in 0..m {
                out.values[p * m + i] = self.values[p * c + i];
            }
        }
        out
    }

    /// The tangential components as an `mn`-component field.
    pub fn par(&self) -> GridField {
        let c = self.comps;
        let m = self.grid.m;
        let mn = c - m;
        let mut out = GridField::zeros(&self.grid, mn);
        for p in 0..self.grid.points() {
            for j in 0..mn {
                out.values[p * mn + j] = self.values[p * c + m + j];
            }
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        (self.grid.weight() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `int <self, other>` with `other` conjugated.
    pub fn inner(&self, other: &GridField) -> C64 {
        let s: C64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum();
        s * self.grid.weight()
    }

    pub fn mean(&self, comp: usize) -> C64 {
        let n = self.grid.points();
        (0..n).map(|p| self.at(p, comp)).sum::<C64>() / n as f64
    }

    pub fn sub(&self, other: &GridField) -> GridField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        GridField { grid: self.grid.clone(), comps: self.comps, values }
    }

    pub fn scale(&self, s: C64) -> GridField {
        GridField { grid: self.grid.clone(), comps: self.comps, values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn column_names(&self) -> Vec<String> {
        let m = self.grid.m;
        let n = self.grid.n;
        (0..self.comps)
            .map(|c| if c < m { format!("perp_{c}") } else { format!("par_{}_{}", (c - m) / n, (c - m) % n) })
            .collect()
    }

    /// One row per grid point: coordinates, then re/im per component.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let coords = if self.grid.n == 1 { vec!["x"] } else { vec!["x", "y"] };
        let mut header: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
        for name in self.column_names() {
            header.push(format!("{name}_re"));
            header.push(format!("{name}_im"));
        }
        s.push_str(&header.join(","));
        s.push('\n');
        for p in 0..self.grid.points() {
            let mut row: Vec<String> = self.grid.coords(p).iter().map(|x| format!("{x:.17e}")).collect();
            for c in 0..self.comps {
                let v = self.at(p, c);
                row.push(format!("{:.17e}", v.re));
                row.push(format!("{:.17e}", v.im));
            }
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn from_csv(grid: &TorusGrid, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::config("csv", "empty input"))?;
        let cols = header.split(',').count();
        let skip = grid.n;
        if cols < skip || (cols - skip) % 2 != 0 {
            return Err(Error::config("csv", "header does not have coordinate columns and re/im pairs"));
        }
        let comps = (cols - skip) / 2;
        let mut values = Vec::with_capacity(grid.points() * comps);
        for (row, line) in lines.enumerate() {
            let nums: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::config("csv", format!("row {row}: {e}")))?;
            if nums.len() != cols {
                return Err(Error::config("csv", format!("row {row} has {} columns", nums.len())));
            }
            for c in 0..comps {
                values.push(C64::new(nums[skip + 2 * c], nums[skip + 2 * c + 1]));
            }
        }
        Self::from_values(grid, comps, values)
    }
}

/// Dense matrix acting on flattened fields.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub matrix: Mat<C64>,
    pub label: String,
}

impl DenseOperator {
    pub fn new(matrix: Mat<C64>, label: impl Into<String>) -> Self {
        Self { matrix, label: label.into() }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        mat_vec(self.matrix.as_ref(), v)
    }

    pub fn op_norm(&self) -> f64 {
        crate::coeff::spectral_norm(self.matrix.as_ref())
    }

    pub fn singular_values(&self) -> Result<Vec<f64>> {
        self.matrix.singular_values().map_err(|e| Error::Decomposition(format!("{e:?}")))
    }
}

pub(crate) fn mat_vec(a: MatRef<'_, C64>, v: &[C64]) -> Vec<C64> {
    assert_eq!(a.ncols(), v.len());
    let col = faer::col::ColRef::from_slice(v);
    let out = a * col;
    out.iter().copied().collect()
}

/// Unitary multidimensional DFT on fields with several components.
#[derive(Clone)]
pub struct Fourier {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fourier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("grid", &self.grid).finish()
    }
}

impl Fourier {
    pub fn new(grid: &TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid: grid.clone(),
            forward: planner.plan_fft_forward(grid.size),
            inverse: planner.plan_fft_inverse(grid.size),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn transform(&self, values: &mut [C64], comps: usize, inverse: bool) {
        let np = self.grid.points();
        assert_eq!(values.len(), np * comps);
        let mut buf = vec![C64::new(0.0, 0.0); np];
        for c in 0..comps {
            for p in 0..np {
                buf[p] = values[p * comps + c];
            }
            let nn = self.grid.size;
            let plan = if inverse { &self.inverse } else { &self.forward };
            for row in buf.chunks_mut(nn) {
                plan.process(row);
            }
            if self.grid.n == 2 {
                let mut column = vec![C64::new(0.0, 0.0); nn];
                for ix in 0..nn {
                    for iy in 0..nn {
                        column[iy] = buf[ix + nn * iy];
                    }
                    plan.process(&mut column);
                    for iy in 0..nn {
                        buf[ix + nn * iy] = column[iy];
                    }
                }
            }
            let s = 1.0 / (np as f64).sqrt();
            buf.iter_mut().for_each(|v| *v *= s);
            for p in 0..np {
                values[p * comps + c] = buf[p];
            }
        }
    }

    pub fn forward(&self, values: &mut [C64], comps: usize) {
        self.transform(values, comps, false);
    }

    pub fn inverse(&self, values: &mut [C64], comps: usize) {
        self.transform(values, comps, true);
    }

    /// Applies a per-mode linear map `out = sym(xi) * in` in Fourier space.
    pub fn multiplier(
        &self,
        values: &[C64],
        comps_in: usize,
        comps_out: usize,
        symbol: impl Fn(&[f64], &[C64], &mut [C64]),
    ) -> Vec<C64> {
        let np = self.grid.points();
        let mut hat = values.to_vec();
        self.forward(&mut hat, comps_in);
        let mut out = vec![C64::new(0.0, 0.0); np * comps_out];
        for p in 0..np {
            let xi = self.grid.wavenumber(p);
            symbol(&xi, &hat[p * comps_in..(p + 1) * comps_in], &mut out[p * comps_out..(p + 1) * comps_out]);
        }
        self.inverse(&mut out, comps_out);
        out
    }

    /// `D f` for a full field.
    pub fn apply_d(&self, values: &[C64]) -> Vec<C64> {
        let (m, n) = (self.grid.m, self.grid.n);
        let c = self.grid.components();
        self.multiplier(values, c, c, |xi, f, out| d_symbol(m, n, xi, f, out))
    }

    /// Orthogonal projection onto the closure of the range of `D`.
    pub fn project_range(&self, values: &[C64]) -> Vec<C64> {
        let (m, n) = (self.grid.m, self.grid.n);
        let c = self.grid.components();
        self.multiplier(values, c, c, |xi, f, out| {
            let r2: f64 = xi.iter().map(|x| x * x).sum();
            if r2 == 0.0 {
                return;
            }
            for i in 0..m {
                out[i] = f[i];
                // tangential part: projection onto the direction of xi
                let dot: C64 = (0..n).map(|l| f[m + i * n + l] * xi[l]).sum();
                for l in 0..n {
                    out[m + i * n + l] = dot * xi[l] / r2;
                }
            }
        })
    }

    /// Tangential gradient of an `m`-component field, returned with `mn` components.
    pub fn gradient(&self, values: &[C64], m: usize) -> Vec<C64> {
        let n = self.grid.n;
        self.multiplier(values, m, m * n, |xi, u, out| {
            for i in 0..m {
                for l in 0..n {
                    out[i * n + l] = C64::new(0.0, xi[l]) * u[i];
                }
            }
        })
    }

    /// Mean-zero potential whose gradient best matches `g` (`mn` components).
    pub fn antiderivative(&self, g: &[C64], m: usize) -> Vec<C64> {
        let n = self.grid.n;
        self.multiplier(g, m * n, m, |xi, g, out| {
            let r2: f64 = xi.iter().map(|x| x * x).sum();
            if r2 == 0.0 {
                return;
            }
            for i in 0..m {
                let dot: C64 = (0..n).map(|l| g[i * n + l] * xi[l]).sum();
                out[i] = C64::new(0.0, -1.0) * dot / r2;
            }
        })
    }

    /// `d_1 g_2 - d_2 g_1` per system index for `mn`-component fields (n = 2).
    pub fn curl(&self, g: &[C64], m: usize) -> Vec<C64> {
        let n = self.grid.n;
        if n == 1 {
            return vec![C64::new(0.0, 0.0); self.grid.points() * m];
        }
        self.multiplier(g, m * n, m, |xi, g, out| {
            for i in 0..m {
                out[i] = C64::new(0.0, xi[0]) * g[i * n + 1] - C64::new(0.0, xi[1]) * g[i * n];
            }
        })
    }

    /// Removes the mean of every component.
    pub fn remove_mean(&self, values: &[C64], comps: usize) -> Vec<C64> {
        self.multiplier(values, comps, comps, |xi, f, out| {
            if xi.iter().any(|x| *x != 0.0) {
                out.copy_from_slice(f);
            }
        })
    }
}

/// The symbol `[0, i xi^t; -i xi, 0]` tensored with the system identity.
pub fn d_symbol(m: usize, n: usize, xi: &[f64], f: &[C64], out: &mut [C64]) {
    for i in 0..m {
        let mut perp = C64::new(0.0, 0.0);
        for l in 0..n {
            perp += C64::new(0.0, xi[l]) * f[m + i * n + l];
            out[m + i * n + l] = C64::new(0.0, -xi[l]) * f[i];
        }
        out[i] = perp;
    }
}

/// Dense matrix of `D`, symmetrized so that it is exactly self-adjoint.
pub fn assemble_d(grid: &TorusGrid) -> DenseOperator {
    let fourier = Fourier::new(grid);
    let dim = grid.dofs();
    let mut mat = Mat::<C64>::zeros(dim, dim);
    let mut e = vec![C64::new(0.0, 0.0); dim];
    for j in 0..dim {
        e[j] = C64::new(1.0, 0.0);
        let col = fourier.apply_d(&e);
        for (i, v) in col.into_iter().enumerate() {
            mat[(i, j)] = v;
        }
        e[j] = C64::new(0.0, 0.0);
    }
    let sym = (&mat + mat.adjoint()) * faer::Scale(C64::new(0.5, 0.0));
    DenseOperator::new(sym, "D")
}

/// Orthonormal eigenbasis of `D` on its range: two columns per nonzero mode
/// and system index, with eigenvalues `+|xi|` and `-|xi|`.
#[derive(Clone, Debug)]
pub struct RangeBasis {
    pub q: Mat<C64>,
    pub symbol: Vec<f64>,
}

impl RangeBasis {
    pub fn new(grid: &TorusGrid) -> Self {
        let (m, n) = (grid.m, grid.n);
        let c = grid.components();
        let np = grid.points();
        let mut cols: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * m * (np - 1));
        for p in 1..np {
            for i in 0..m {
                for s in [1.0, -1.0] {
                    cols.push((p, i, s));
                }
            }
        }
        let norm = 1.0 / (np as f64).sqrt();
        let coords: Vec<Vec<f64>> = (0..np).map(|p| grid.coords(p)).collect();
        let mut q = Mat::<C64>::zeros(np * c, cols.len());
        let mut symbol = Vec::with_capacity(cols.len());
        for (j, &(p, i, s)) in cols.iter().enumerate() {
            let xi = grid.wavenumber(p);
            let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            symbol.push(s * r);
            let a = std::f64::consts::FRAC_1_SQRT_2;
            for (y, x) in coords.iter().enumerate() {
                let phase: f64 = xi.iter().zip(x).map(|(k, x)| k * x).sum();
                let e = C64::from_polar(norm, phase);
                q[(y * c + i, j)] = e * a;
                for l in 0..n {
                    q[(y * c + m + i * n + l, j)] = e * C64::new(0.0, -s * xi[l] * a / r);
                }
            }
        }
        Self { q, symbol }
    }

    pub fn dim(&self) -> usize {
        self.symbol.len()
    }
}

/// Orthonormal basis of mean-zero `m`-component fields.
pub fn mean_zero_basis(grid: &TorusGrid) -> Mat<C64> {
    let m = grid.m;
    let np = grid.points();
    let norm = 1.0 / (np as f64).sqrt();
    let coords: Vec<Vec<f64>> = (0..np).map(|p| grid.coords(p)).collect();
    Mat::from_fn(np * m, (np - 1) * m, |row, col| {
        let (y, i) = (row / m, row % m);
        let (p, j) = (col / m + 1, col % m);
        if i != j {
            return C64::new(0.0, 0.0);
        }
        let xi = grid.wavenumber(p);
        let phase: f64 = xi.iter().zip(&coords[y]).map(|(k, x)| k * x).sum();
        C64::from_polar(norm, phase)
    })
}

pub fn curl_free_projection(grid: &TorusGrid) -> DenseOperator {
    let basis = RangeBasis::new(grid);
    let p = &basis.q * basis.q.adjoint();
    DenseOperator::new(p, "P_H")
}

/// Block-diagonal operator applying one matrix per grid point.
pub fn multiplication_matrix(grid: &TorusGrid, samples: &[BlockCoefficient]) -> Result<DenseOperator> {
    if samples.len() != grid.points() {
        return Err(Error::DimensionMismatch("one sample per grid point expected".into()));
    }
    let c = grid.components();
    let mut mat = Mat::<C64>::zeros(grid.dofs(), grid.dofs());
    for (p, s) in samples.iter().enumerate() {
        if s.size() != c {
            return Err(Error::DimensionMismatch("sample size differs from grid components".into()));
        }
        for i in 0..c {
            for j in 0..c {
                mat[(p * c + i, p * c + j)] = s.get(i, j);
            }
        }
    }
    Ok(DenseOperator::new(mat, "M"))
}

pub fn multiplication_operator(field: &CoefficientField) -> Result<DenseOperator> {
    multiplication_matrix(&field.grid, &field.samples)
}

/// Applies one matrix per grid point to a full field.
pub fn apply_pointwise(samples: &[BlockCoefficient], values: &[C64]) -> Vec<C64> {
    let c = samples[0].size();
    let mut out = vec![C64::new(0.0, 0.0); values.len()];
    for (p, s) in samples.iter().enumerate() {
        s.apply(&values[p * c..(p + 1) * c], &mut out[p * c..(p + 1) * c]);
    }
    out
}

/// Smallest `Re <A f, f> / |f|^2` over seeded random `f` in the range of `D`.
pub fn garding_check(field: &CoefficientField, trials: usize, seed: u64) -> f64 {
    let grid = &field.grid;
    let fourier = Fourier::new(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let raw: Vec<C64> = (0..grid.dofs()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let f = fourier.project_range(&raw);
        let af = apply_pointwise(&field.samples, &f);
        let num: f64 = af.iter().zip(&f).map(|(a, b)| (a * b.conj()).re).sum();
        let den: f64 = f.iter().map(|v| v.norm_sqr()).sum();
        worst = worst.min(num / den);
    }
    worst
}

pub fn random_field(grid: &TorusGrid, comps: usize, seed: u64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.points() * comps).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    GridField { grid: grid.clone(), comps, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{Family, FamilyConfig};
    use faer::Side;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid1(nn: usize) -> TorusGrid {
        TorusGrid::new(1, nn, 2.0 * PI, 1).unwrap()
    }

    fn max_abs(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(1, 12, 1.0, 1).is_err());
        assert!(TorusGrid::new(1, 4, 1.0, 1).is_err());
        assert!(TorusGrid::new(2, 64, 1.0, 1).is_err());
        assert!(TorusGrid::new(3, 8, 1.0, 1).is_err());
        let g: TorusGrid = serde_json::from_str(r#"{"n": 2, "N": 16, "L": 1.0, "m": 2}"#).unwrap();
        assert_eq!(g.dofs(), 2 * 3 * 256);
    }

    #[test]
    fn d_spectrum_small_grid() {
        let g = grid1(8);
        let d = assemble_d(&g);
        let mut ev = d.matrix.self_adjoint_eigenvalues(Side::Lower).unwrap();
        ev.sort_by(f64::total_cmp);
        let mut expect: Vec<f64> = vec![0.0, 0.0];
        for k in -4i32..=3 {
            if k != 0 {
                expect.push(k.abs() as f64);
                expect.push(-(k.abs() as f64));
            }
        }
        expect.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let sa = &d.matrix - d.matrix.adjoint();
        assert!(sa.norm_max() == 0.0);
    }

    #[test]
    fn d_on_constant_and_single_mode() {
        let g = grid1(16);
        let f = Fourier::new(&g);
        let constant = vec![C64::new(0.3, -0.2); g.dofs()];
        assert!(f.apply_d(&constant).iter().all(|v| v.norm() < 1e-13));
        let mut v = vec![C64::new(0.0, 0.0); g.dofs()];
        for p in 0..g.points() {
            v[2 * p + 1] = C64::from_polar(1.0, g.coords(p)[0]);
        }
        let dv = f.apply_d(&v);
        for p in 0..g.points() {
            let want = C64::new(0.0, 1.0) * C64::from_polar(1.0, g.coords(p)[0]);
            assert!((dv[2 * p] - want).norm() < 1e-12);
            assert!(dv[2 * p + 1].norm() < 1e-12);
        }
    }

    #[test]
    fn parity_and_projection_identities() {
        for g in [grid1(16), TorusGrid::new(2, 8, 2.0 * PI, 1).unwrap(), TorusGrid::new(1, 8, 3.0, 2).unwrap()] {
            let d = assemble_d(&g);
            let nmat = Mat::from_fn(g.dofs(), g.dofs(), |i, j| {
                if i != j {
                    C64::new(0.0, 0.0)
                } else if i % g.components() < g.m {
                    C64::new(-1.0, 0.0)
                } else {
                    C64::new(1.0, 0.0)
                }
            });
            let ndn = &nmat * &d.matrix * &nmat + &d.matrix;
            assert!(ndn.norm_max() <= 1e-12);
            let p = curl_free_projection(&g);
            let idem = &p.matrix * &p.matrix - &p.matrix;
            assert!(idem.norm_max() <= 1e-12);
            assert!((&p.matrix - p.matrix.adjoint()).norm_max() <= 1e-12);
            let comm = &p.matrix * &d.matrix - &d.matrix * &p.matrix;
            assert!(comm.norm_max() <= 1e-10);
            // the same projection from the dense eigendecomposition of D
            let eig = d.matrix.self_adjoint_eigen(Side::Lower).unwrap();
            let u = eig.U();
            let s = eig.S();
            let keep: Vec<usize> = (0..g.dofs()).filter(|&i| s.column_vector()[i].re.abs() > 1e-8).collect();
            let uk = Mat::from_fn(g.dofs(), keep.len(), |i, j| u[(i, keep[j])]);
            let pe = &uk * uk.adjoint();
            assert!((&pe - &p.matrix).norm_max() <= 1e-10);
        }
    }

    #[test]
    fn projection_examples() {
        let g = grid1(16);
        let f = Fourier::new(&g);
        let constant = vec![C64::new(1.0, 2.0); g.dofs()];
        assert!(f.project_range(&constant).iter().all(|v| v.norm() < 1e-13));
        let r = random_field(&g, 2, 1);
        let mz = f.remove_mean(&r.values, 2);
        assert!(max_abs(&f.project_range(&mz), &mz) < 1e-13);
        let p = curl_free_projection(&g);
        assert!(max_abs(&p.apply(&r.values), &f.project_range(&r.values)) < 1e-12);
    }

    #[test]
    fn multiplication_examples() {
        let g = grid1(16);
        let id = FamilyConfig::of(Family::Identity).build(&g).unwrap();
        let m = multiplication_operator(&id).unwrap();
        assert_eq!(m.matrix, Mat::<C64>::identity(32, 32));
        let cst = FamilyConfig::seeded(Family::Constant, 2).build(&g).unwrap();
        let m = multiplication_operator(&cst).unwrap();
        assert!((m.op_norm() - cst.samples[0].op_norm()).abs() < 1e-12);
        let k = 0.6;
        let kk = FamilyConfig::kkpt(k).build(&g).unwrap();
        let m = multiplication_operator(&kk).unwrap();
        let mut e = vec![C64::new(0.0, 0.0); 32];
        for p in 0..16 {
            e[2 * p] = C64::new(1.0, 0.0);
        }
        let out = m.apply(&e);
        for p in 0..16 {
            assert_eq!(out[2 * p], C64::new(1.0, 0.0));
            assert_eq!(out[2 * p + 1], C64::new(-k * g.periodic_sign(p), 0.0));
        }
    }

    #[test]
    fn garding_examples() {
        let g = grid1(32);
        let id = FamilyConfig::of(Family::Identity).build(&g).unwrap();
        assert!((garding_check(&id, 5, 1) - 1.0).abs() < 1e-12);
        let diag = serde_json::json!([[[2.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.5, 0.0]]]);
        let cfg = FamilyConfig { matrix: Some(diag), ..FamilyConfig::of(Family::Constant) };
        assert!(garding_check(&cfg.build(&g).unwrap(), 10, 2) >= 0.5);
        let kk = FamilyConfig::kkpt(0.9).build(&g).unwrap();
        assert!(garding_check(&kk, 10, 3) >= 1.0 - 1e-10);
    }

    #[test]
    fn csv_round_trip() {
        let g = TorusGrid::new(2, 8, 1.0, 1).unwrap();
        let f = random_field(&g, 3, 4);
        let text = f.to_csv();
        assert!(text.starts_with("x,y,perp_0_re,perp_0_im,par_0_0_re,par_0_0_im,par_0_1_re"));
        assert_eq!(GridField::from_csv(&g, &text).unwrap(), f);
    }

    #[test]
    fn antiderivative_inverts_gradient() {
        for g in [grid1(32), TorusGrid::new(2, 16, 2.0 * PI, 2).unwrap()] {
            let f = Fourier::new(&g);
            let u = f.remove_mean(&random_field(&g, g.m, 9).values, g.m);
            let grad = f.gradient(&u, g.m);
            assert!(max_abs(&f.antiderivative(&grad, g.m), &u) < 1e-12);
            assert!(f.curl(&grad, g.m).iter().all(|v| v.norm() < 1e-12));
        }
    }

    proptest! {
        #[test]
        fn fft_round_trip(seed in any::<u64>(), two_d in any::<bool>()) {
            let g = if two_d { TorusGrid::new(2, 16, 1.0, 1).unwrap() } else { grid1(64) };
            let f = Fourier::new(&g);
            let r = random_field(&g, 3, seed);
            let mut v = r.values.clone();
            f.forward(&mut v, 3);
            f.inverse(&mut v, 3);
            prop_assert!(max_abs(&v, &r.values) < 1e-12);
        }

        #[test]
        fn d_reproduces_symbol(k in -20i32..20, seed in any::<u64>()) {
            let g = grid1(64);
            let f = Fourier::new(&g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = [C64::new(rng.gen_range(-1.0..1.0), 0.0), C64::new(0.0, rng.gen_range(-1.0..1.0))];
            let mut field = vec![C64::new(0.0, 0.0); g.dofs()];
            for p in 0..g.points() {
                let e = C64::from_polar(1.0, k as f64 * g.coords(p)[0]);
                field[2 * p] = e * v[0];
                field[2 * p + 1] = e * v[1];
            }
            let out = f.apply_d(&field);
            let xi = k as f64;
            for p in 0..g.points() {
                let e = C64::from_polar(1.0, xi * g.coords(p)[0]);
                let want = [C64::new(0.0, xi) * v[1] * e, C64::new(0.0, -xi) * v[0] * e];
                prop_assert!((out[2 * p] - want[0]).norm() < 1e-12);
                prop_assert!((out[2 * p + 1] - want[1]).norm() < 1e-12);
            }
        }
    }
}
