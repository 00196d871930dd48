//! Two-step reconstruction: per-time-slice TV recovery of the transformed
//! full-sensor data from compressed data, then FBP from the recovered means.
//!
//! Each slice solves `min_h ‖A h - y‖² + λ ‖D h‖₁` with `D` the first
//! difference along the sensor index, by a primal–dual (Chambolle–Pock)
//! iteration. The data term is handled through its exact proximal map,
//! precomputed from an eigendecomposition of `AᵀA`; when `A` is block
//! diagonal the map splits into independent blocks.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::CsData;
use crate::csdesign::StructuredCsMatrix;
use crate::error::{invalid, Error, Result};
use crate::geometry::{ImageGrid, SensorGeometry, SourceImage, TimeGrid};
use crate::scalar::Real;
use crate::wave::{fbp_from_means, MeansData};

/// Primal step in units of `scale / λ`; the dual step follows from `τσ‖D‖² < 1`.
const PRIMAL_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Differences wrap around the full sensor ring.
    #[default]
    Circular,
    /// Differences wrap within each sensor group, decoupling the groups.
    PerGroup,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvOptions<T> {
    pub lambda: T,
    pub max_iter: usize,
    /// Relative change of the primal iterate below which a slice is converged.
    pub tol: T,
    pub boundary: Boundary,
    /// Keep the per-iteration objective of the reported iterate.
    #[serde(default)]
    pub track_objective: bool,
}

impl<T: Real> TvOptions<T> {
    pub fn new(lambda: T) -> Self {
        Self {
            lambda,
            max_iter: 2000,
            tol: T::lit(1e-8),
            boundary: Boundary::Circular,
            track_objective: false,
        }
    }

    /// `λ = factor · ‖YT‖∞` (1e-6 for exact data, 1e-3 for noisy data).
    pub fn scaled_to(data: &CsData<T>, factor: T) -> Self {
        let peak = data.values().iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let lambda = if peak > T::zero() { factor * peak } else { factor };
        Self::new(lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero()) {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.tol > T::zero()) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one slice solve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceReport<T> {
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective of the reported iterate after every iteration (when tracked).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<T>,
}

/// Full-sensor transformed data recovered slice by slice.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredMeans<T> {
    times: TimeGrid<T>,
    values: Array2<T>,
    slices: Vec<SliceReport<T>>,
}

impl<T: Real> RecoveredMeans<T> {
    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn times(&self) -> &TimeGrid<T> {
        &self.times
    }

    pub fn slices(&self) -> &[SliceReport<T>] {
        &self.slices
    }

    /// Number of slices that hit `max_iter` before reaching `tol`.
    pub fn unconverged(&self) -> usize {
        self.slices.iter().filter(|s| !s.converged).count()
    }

    pub fn into_means(self, geometry: SensorGeometry<T>) -> Result<MeansData<T>> {
        MeansData::new(geometry, self.times, self.values)
    }
}

/// Sensor neighbour structure of the difference operator `D`.
#[derive(Clone, Debug)]
struct Differences {
    /// `(D h)_i = h[next[i]] - h[i]`.
    next: Vec<usize>,
}

impl Differences {
    fn new(n: usize, boundary: Boundary, group: usize) -> Self {
        let next = match boundary {
            Boundary::Circular => (0..n).map(|i| (i + 1) % n).collect(),
            Boundary::PerGroup => {
                let g = group.max(1);
                (0..n)
                    .map(|i| {
                        let base = (i / g) * g;
                        let size = g.min(n - base);
                        base + (i - base + 1) % size
                    })
                    .collect()
            }
        };
        Self { next }
    }

    fn apply<T: Real>(&self, h: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = h[self.next[i]] - h[i];
        }
    }

    /// `Dᵀ p`.
    fn adjoint<T: Real>(&self, p: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (i, &pi) in p.iter().enumerate() {
            out[self.next[i]] += pi;
            out[i] -= pi;
        }
    }

    fn l1<T: Real>(&self, h: &[T]) -> T {
        (0..h.len()).map(|i| (h[self.next[i]] - h[i]).abs()).fold(T::zero(), |a, v| a + v)
    }
}

/// Connected column sets of `A` together with the eigendecomposition of each diagonal block of `AᵀA`.
#[derive(Clone, Debug)]
struct GramBlocks {
    blocks: Vec<GramBlock>,
}

#[derive(Clone, Debug)]
struct GramBlock {
    cols: Vec<usize>,
    /// Rows of `A` touching these columns.
    rows: Vec<usize>,
    /// Eigenvectors (column-major, `cols.len()` squared).
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

impl GramBlocks {
    fn new(a: &Array2<f64>) -> Self {
        let (m, n) = a.dim();
        // union-find over columns sharing a row
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            let mut c = i;
            while p[c] != r {
                let nx = p[c];
                p[c] = r;
                c = nx;
            }
            r
        }
        for r in 0..m {
            let nz: Vec<usize> = (0..n).filter(|&c| a[[r, c]] != 0.0).collect();
            for w in nz.windows(2) {
                let (x, y) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if x != y {
                    parent[x.max(y)] = x.min(y);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_slot = vec![usize::MAX; n];
        for c in 0..n {
            let r = find(&mut parent, c);
            if root_slot[r] == usize::MAX {
                root_slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[root_slot[r]].push(c);
        }
        let blocks = groups
            .into_iter()
            .map(|cols| {
                let rows: Vec<usize> = (0..m).filter(|&r| cols.iter().any(|&c| a[[r, c]] != 0.0)).collect();
                let k = cols.len();
                let gram = DMatrix::from_fn(k, k, |i, j| rows.iter().map(|&r| a[[r, cols[i]]] * a[[r, cols[j]]]).sum());
                let eig = SymmetricEigen::new(gram);
                GramBlock {
                    cols,
                    rows,
                    values: eig.eigenvalues.iter().map(|v: &f64| v.max(0.0)).collect(),
                    vectors: eig.eigenvectors,
                }
            })
            .collect();
        Self { blocks }
    }
}

/// Proximal map of `τ‖A h - y‖²`: `h = (I + 2τAᵀA)⁻¹ (v + 2τAᵀy)`.
#[derive(Clone, Debug)]
struct DataProx<T> {
    /// Per block: `(cols, dense (I + 2τAᵀA)⁻¹ restricted to the block)`.
    blocks: Vec<(Vec<usize>, Array2<T>)>,
    /// `2τ (I + 2τAᵀA)⁻¹ Aᵀ`, n × m, applied once per slice.
    data_map: Array2<T>,
}

impl<T: Real> DataProx<T> {
    fn new(a: &Array2<f64>, grams: &GramBlocks, tau: f64) -> Self {
        let (m, n) = a.dim();
        let mut data_map = Array2::<f64>::zeros((n, m));
        let mut blocks = Vec::with_capacity(grams.blocks.len());
        for b in &grams.blocks {
            let k = b.cols.len();
            let v = &b.vectors;
            let shrink: Vec<f64> = b.values.iter().map(|&l| 1.0 / (1.0 + 2.0 * tau * l)).collect();
            let gain: Vec<f64> = b.values.iter().map(|&l| 2.0 * tau / (1.0 + 2.0 * tau * l)).collect();
            let dense = Array2::from_shape_fn((k, k), |(i, j)| (0..k).map(|e| v[(i, e)] * shrink[e] * v[(j, e)]).sum::<f64>());
            // gain map in the eigenbasis: V diag(gain) Vᵀ Aᵀ
            let vg = Array2::from_shape_fn((k, k), |(i, j)| (0..k).map(|e| v[(i, e)] * gain[e] * v[(j, e)]).sum::<f64>());
            for (bi, &ci) in b.cols.iter().enumerate() {
                for &r in &b.rows {
                    let mut acc = 0.0;
                    for (bj, &cj) in b.cols.iter().enumerate() {
                        acc += vg[[bi, bj]] * a[[r, cj]];
                    }
                    data_map[[ci, r]] = acc;
                }
            }
            blocks.push((b.cols.clone(), dense.mapv(T::lit)));
        }
        Self {
            blocks,
            data_map: data_map.mapv(T::lit),
        }
    }

    /// `out = (I + 2τAᵀA)⁻¹ v + offset`.
    fn apply(&self, v: &[T], offset: &[T], out: &mut [T]) {
        for (cols, dense) in &self.blocks {
            for (bi, &ci) in cols.iter().enumerate() {
                let row = dense.row(bi);
                let mut acc = offset[ci];
                for (bj, &cj) in cols.iter().enumerate() {
                    acc += row[bj] * v[cj];
                }
                out[ci] = acc;
            }
        }
    }
}

/// Slice solver reusable across all time slices of one problem.
struct TvSolver<'a, T> {
    a: &'a Array2<T>,
    diff: Differences,
    prox: DataProx<T>,
    tau: T,
    sigma: T,
    opts: TvOptions<T>,
}

impl<'a, T: Real> TvSolver<'a, T> {
    fn new(a: &'a Array2<T>, group: usize, grams: &GramBlocks, scale: T, opts: TvOptions<T>) -> Self {
        let n = a.ncols();
        let diff = Differences::new(n, opts.boundary, group);
        let tau = PRIMAL_STEP * scale.as_f64() / opts.lambda.as_f64();
        // ‖D‖² ≤ 4
        let sigma = 0.99 / (4.0 * tau);
        let a64 = a.mapv(|v| v.as_f64());
        let prox = DataProx::new(&a64, grams, tau);
        Self {
            a,
            diff,
            prox,
            tau: T::lit(tau),
            sigma: T::lit(sigma),
            opts,
        }
    }

    fn objective(&self, h: &[T], y: ArrayView1<T>) -> T {
        let ah = self.a.dot(&ArrayView1::from(h));
        let fit = ah.iter().zip(y.iter()).map(|(p, q)| (*p - *q) * (*p - *q)).fold(T::zero(), |a, v| a + v);
        fit + self.opts.lambda * self.diff.l1(h)
    }

    fn solve(&self, y: ArrayView1<T>) -> (Array1<T>, SliceReport<T>) {
        let n = self.a.ncols();
        if y.iter().all(|v| *v == T::zero()) {
            let history = if self.opts.track_objective { vec![T::zero()] } else { Vec::new() };
            return (
                Array1::zeros(n),
                SliceReport {
                    objective: T::zero(),
                    iterations: 0,
                    converged: true,
                    history,
                },
            );
        }
        let offset = self.prox.data_map.dot(&y).to_vec();
        let mut h = vec![T::zero(); n];
        self.prox.apply(&h.clone(), &offset, &mut h);
        let mut h_bar = h.clone();
        let mut p = vec![T::zero(); n];
        let mut dh = vec![T::zero(); n];
        let mut dtp = vec![T::zero(); n];
        let mut v = vec![T::zero(); n];
        let mut h_new = vec![T::zero(); n];

        let mut best = h.clone();
        let mut best_obj = self.objective(&h, y);
        let mut history = Vec::new();
        let lam = self.opts.lambda;
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=self.opts.max_iter {
            iterations = it;
            self.diff.apply(&h_bar, &mut dh);
            for (pi, di) in p.iter_mut().zip(&dh) {
                *pi = (*pi + self.sigma * *di).max(-lam).min(lam);
            }
            self.diff.adjoint(&p, &mut dtp);
            for i in 0..n {
                v[i] = h[i] - self.tau * dtp[i];
            }
            self.prox.apply(&v, &offset, &mut h_new);
            let mut change = T::zero();
            let mut norm = T::zero();
            for i in 0..n {
                let d = h_new[i] - h[i];
                change += d * d;
                norm += h_new[i] * h_new[i];
                h_bar[i] = h_new[i] + d;
            }
            std::mem::swap(&mut h, &mut h_new);
            let obj = self.objective(&h, y);
            if obj <= best_obj {
                best_obj = obj;
                best.copy_from_slice(&h);
            }
            if self.opts.track_objective {
                history.push(best_obj);
            }
            if change.sqrt() <= self.opts.tol * norm.sqrt().max(T::min_positive_value()) {
                converged = true;
                break;
            }
        }
        (
            Array1::from(best),
            SliceReport {
                objective: best_obj,
                iterations,
                converged,
                history,
            },
        )
    }
}

fn check_dims(a: &StructuredCsMatrix, m: usize) -> Result<()> {
    if a.rows() != m {
        return Err(Error::DimensionMismatch {
            what: "measurement rows",
            expected: a.rows(),
            actual: m,
        });
    }
    Ok(())
}

/// Approximate minimiser of `‖A h - y‖² + λ‖D h‖₁` for one time slice.
pub fn tv_solve_time_slice<T: Real>(
    a: &StructuredCsMatrix,
    y: ArrayView1<T>,
    opts: &TvOptions<T>,
) -> Result<(Array1<T>, SliceReport<T>)> {
    opts.validate()?;
    check_dims(a, y.len())?;
    let ar = a.to_real::<T>();
    let grams = GramBlocks::new(&a.to_real::<f64>());
    let scale = y.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let solver = TvSolver::new(&ar, a.spec().n0(), &grams, scale.max(T::min_positive_value()), *opts);
    Ok(solver.solve(y))
}

/// Solves every time slice of the transformed compressed data independently.
pub fn tv_recover_means<T: Real>(a: &StructuredCsMatrix, yt: &CsData<T>, opts: &TvOptions<T>) -> Result<RecoveredMeans<T>> {
    opts.validate()?;
    check_dims(a, yt.m())?;
    let ar = a.to_real::<T>();
    let grams = GramBlocks::new(&a.to_real::<f64>());
    let scale = yt.values().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let solver = TvSolver::new(&ar, a.spec().n0(), &grams, scale.max(T::min_positive_value()), *opts);
    let columns: Vec<(Array1<T>, SliceReport<T>)> = yt
        .values()
        .axis_iter(Axis(1))
        .into_par_iter()
        .map(|y| solver.solve(y))
        .collect();
    let n = a.cols();
    let mut values = Array2::zeros((n, yt.values().ncols()));
    let mut slices = Vec::with_capacity(columns.len());
    for (l, (h, rep)) in columns.into_iter().enumerate() {
        values.column_mut(l).assign(&h);
        slices.push(rep);
    }
    Ok(RecoveredMeans {
        times: yt.times().clone(),
        values,
        slices,
    })
}

/// `T` on the compressed data, TV recovery of the full-sensor means, then FBP.
pub fn two_step_reconstruct<T: Real>(
    y: &CsData<T>,
    a: &StructuredCsMatrix,
    geom: &SensorGeometry<T>,
    grid: &ImageGrid<T>,
    opts: &TvOptions<T>,
) -> Result<(SourceImage<T>, RecoveredMeans<T>)> {
    if a.cols() != geom.n() {
        return Err(Error::DimensionMismatch {
            what: "matrix columns vs sensors",
            expected: geom.n(),
            actual: a.cols(),
        });
    }
    let yt = y.transformed()?;
    let recovered = tv_recover_means(a, &yt, opts)?;
    let means = recovered.clone().into_means(geom.clone())?;
    let image = fbp_from_means(&means, geom, grid)?;
    Ok((image, recovered))
}
