//! Structured binary measurement matrices and their design by random search
//! on the sparse injectivity number (SIN).
//!
//! A group matrix has `m0` rows and `n0 = b·g` columns split into `g` blocks
//! of `b` sensors; every row switches on at most one sensor per block. The
//! full matrix stacks one group matrix per sensor group block-diagonally.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Largest number of column subsets enumerated by [`sin_number`] and [`rip_constant`].
pub const MAX_SUBSETS: u128 = 100_000;

/// Block/group layout of an admissible matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureSpec {
    /// Sensors per switch.
    pub block_size: usize,
    pub blocks_per_group: usize,
    pub group_count: usize,
    /// Measurements per group.
    pub m0: usize,
}

impl StructureSpec {
    pub fn new(block_size: usize, blocks_per_group: usize, group_count: usize, m0: usize) -> Result<Self> {
        let spec = Self {
            block_size,
            blocks_per_group,
            group_count,
            m0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The hardware layout: 4 groups of 4 blocks of 4 sensors.
    pub fn papi(m0: usize) -> Self {
        Self {
            block_size: 4,
            blocks_per_group: 4,
            group_count: 4,
            m0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.blocks_per_group == 0 || self.group_count == 0 || self.m0 == 0 {
            return Err(invalid(format!("structure sizes must all be positive: {self:?}")));
        }
        if self.block_size > u8::MAX as usize - 1 {
            return Err(invalid(format!("block size {} too large", self.block_size)));
        }
        Ok(())
    }

    /// Group width `n0 = b·g`.
    pub fn n0(&self) -> usize {
        self.block_size * self.blocks_per_group
    }

    /// Total sensor count.
    pub fn n(&self) -> usize {
        self.n0() * self.group_count
    }

    /// Total measurement count.
    pub fn m(&self) -> usize {
        self.m0 * self.group_count
    }
}

/// Per-row sensor choices: entry `0` switches the block off, `k ≥ 1` selects its `k`-th sensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionList {
    rows: Vec<Vec<u8>>,
}

impl SelectionList {
    pub fn new(rows: Vec<Vec<u8>>) -> Self {
        Self { rows }
    }

    pub fn zeros(spec: &StructureSpec) -> Self {
        Self {
            rows: vec![vec![0; spec.blocks_per_group]; spec.m0],
        }
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn validate(&self, spec: &StructureSpec) -> Result<()> {
        if self.rows.len() != spec.m0 {
            return Err(Error::DimensionMismatch {
                what: "selection rows",
                expected: spec.m0,
                actual: self.rows.len(),
            });
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != spec.blocks_per_group {
                return Err(Error::DimensionMismatch {
                    what: "selection entries per row",
                    expected: spec.blocks_per_group,
                    actual: row.len(),
                });
            }
            if let Some(&bad) = row.iter().find(|&&e| e as usize > spec.block_size) {
                return Err(invalid(format!(
                    "selection row {i} picks sensor {bad} in a block of {}",
                    spec.block_size
                )));
            }
        }
        Ok(())
    }
}

/// Binary admissible measurement matrix, either one group (`m0 × n0`) or the
/// block-diagonal assembly over all groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuredCsMatrix {
    spec: StructureSpec,
    entries: Array2<u8>,
    origin: Vec<SelectionList>,
}

impl StructuredCsMatrix {
    pub fn spec(&self) -> &StructureSpec {
        &self.spec
    }

    pub fn entries(&self) -> &Array2<u8> {
        &self.entries
    }

    /// Selection lists the matrix was built from, one per group on the diagonal.
    pub fn origin(&self) -> &[SelectionList] {
        &self.origin
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn is_assembled(&self) -> bool {
        self.origin.len() > 1 || self.cols() != self.spec.n0()
    }

    pub fn to_real<T: Real>(&self) -> Array2<T> {
        self.entries.mapv(|e| if e == 0 { T::zero() } else { T::one() })
    }

    /// Re-derives the entries from an explicit 0/1 array, checking admissibility.
    pub fn from_entries(spec: StructureSpec, entries: Array2<u8>) -> Result<Self> {
        spec.validate()?;
        let n0 = spec.n0();
        let m0 = spec.m0;
        if !entries.ncols().is_multiple_of(n0) || !entries.nrows().is_multiple_of(m0) || entries.ncols() / n0 != entries.nrows() / m0 {
            return Err(invalid(format!(
                "matrix of shape {:?} does not tile into {m0} × {n0} groups",
                entries.dim()
            )));
        }
        let groups = entries.ncols() / n0;
        let mut origin = Vec::with_capacity(groups);
        for gi in 0..groups {
            let mut rows = Vec::with_capacity(m0);
            for i in 0..m0 {
                let r = gi * m0 + i;
                let mut sel = vec![0u8; spec.blocks_per_group];
                for c in 0..entries.ncols() {
                    let e = entries[[r, c]];
                    if e > 1 {
                        return Err(invalid(format!("entry ({r}, {c}) = {e} is not binary")));
                    }
                    if e == 0 {
                        continue;
                    }
                    if c / n0 != gi {
                        return Err(invalid(format!("entry ({r}, {c}) lies outside the diagonal group {gi}")));
                    }
                    let local = c % n0;
                    let block = local / spec.block_size;
                    if sel[block] != 0 {
                        return Err(invalid(format!("row {r} activates two sensors in block {block}")));
                    }
                    sel[block] = (local % spec.block_size + 1) as u8;
                }
                rows.push(sel);
            }
            origin.push(SelectionList::new(rows));
        }
        Ok(Self { spec, entries, origin })
    }

    /// Whether every row has at most one active sensor per block.
    pub fn is_admissible(&self) -> bool {
        let b = self.spec.block_size;
        self.entries.iter().all(|&e| e <= 1)
            && self.entries.rows().into_iter().all(|row| {
                row.as_slice()
                    .map(|r| r.chunks(b).all(|blk| blk.iter().map(|&e| e as usize).sum::<usize>() <= 1))
                    .unwrap_or_else(|| {
                        let v: Vec<u8> = row.to_vec();
                        v.chunks(b).all(|blk| blk.iter().map(|&e| e as usize).sum::<usize>() <= 1)
                    })
            })
    }
}

/// Number of nonzero entries.
pub fn l0_norm<T: Real>(x: ArrayView1<T>) -> usize {
    x.iter().filter(|v| **v != T::zero()).count()
}

/// `σ_s(x)`: ℓ¹ norm of everything but the `s` largest-magnitude entries
/// (ties keep the lower index).
pub fn best_s_term_error<T: Real>(x: ArrayView1<T>, s: usize) -> T {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].abs().partial_cmp(&x[a].abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.iter().skip(s).map(|&i| x[i].abs()).fold(T::zero(), |acc, v| acc + v)
}

/// Draws every entry independently and uniformly from `{0, 1, …, b}`.
pub fn sample_selection_list<R: Rng + ?Sized>(spec: &StructureSpec, rng: &mut R) -> SelectionList {
    let b = spec.block_size as u8;
    let rows = (0..spec.m0)
        .map(|_| (0..spec.blocks_per_group).map(|_| rng.random_range(0..=b)).collect())
        .collect();
    SelectionList { rows }
}

/// [`sample_selection_list`] with a fresh generator seeded from `seed`.
pub fn sample_selection_list_seeded(spec: &StructureSpec, seed: u64) -> SelectionList {
    sample_selection_list(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Row `i` gets a one in column `(block - 1)·b + k` for every nonzero entry `k`
/// (block and sensor counted from 1).
pub fn make_cs_matrix(list: &SelectionList, spec: &StructureSpec) -> Result<StructuredCsMatrix> {
    spec.validate()?;
    list.validate(spec)?;
    let b = spec.block_size;
    let mut entries = Array2::zeros((spec.m0, spec.n0()));
    for (i, row) in list.rows.iter().enumerate() {
        for (block, &k) in row.iter().enumerate() {
            if k > 0 {
                entries[[i, block * b + k as usize - 1]] = 1;
            }
        }
    }
    Ok(StructuredCsMatrix {
        spec: *spec,
        entries,
        origin: vec![list.clone()],
    })
}

/// Places the group matrices on the diagonal of one `(G·m0) × (G·n0)` matrix.
pub fn assemble_block_diagonal(groups: &[StructuredCsMatrix]) -> Result<StructuredCsMatrix> {
    let first = groups.first().ok_or_else(|| invalid("no group matrices to assemble"))?;
    if groups.len() == 1 {
        return Ok(first.clone());
    }
    let spec = first.spec;
    let (m0, n0) = (spec.m0, spec.n0());
    for g in groups {
        if g.spec != spec {
            return Err(invalid(format!("group specs differ: {:?} vs {:?}", g.spec, spec)));
        }
        if g.entries.dim() != (m0, n0) {
            return Err(invalid(format!(
                "expected {m0} × {n0} group matrices, got {:?}",
                g.entries.dim()
            )));
        }
    }
    let count = groups.len();
    let mut entries = Array2::zeros((count * m0, count * n0));
    let mut origin = Vec::with_capacity(count);
    for (gi, g) in groups.iter().enumerate() {
        entries
            .slice_mut(ndarray::s![gi * m0..(gi + 1) * m0, gi * n0..(gi + 1) * n0])
            .assign(&g.entries);
        origin.extend(g.origin.iter().cloned());
    }
    Ok(StructuredCsMatrix {
        spec: StructureSpec {
            group_count: count,
            ..spec
        },
        entries,
        origin,
    })
}

/// Smallest singular value over all `k`-column submatrices, with the minimiser.
#[derive(Clone, Debug, PartialEq)]
pub struct SinReport<T> {
    pub k: usize,
    pub theta: T,
    pub worst_subset: Vec<usize>,
    /// Unit vector supported on `worst_subset` with `‖M v‖ = theta`.
    pub worst_vector: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RipReport<T> {
    pub s: usize,
    pub delta: T,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn check_capacity(n: usize, k: usize) -> Result<()> {
    let subsets = binomial(n, k);
    if subsets > MAX_SUBSETS {
        return Err(Error::Capacity {
            n,
            k,
            subsets,
            limit: MAX_SUBSETS,
        });
    }
    Ok(())
}

/// Lexicographic `k`-subsets of `0..n`.
pub(crate) struct Combinations {
    idx: Vec<usize>,
    n: usize,
    done: bool,
}

impl Combinations {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        Self {
            idx: (0..k).collect(),
            n,
            done: k > n,
        }
    }

    /// Current subset, or `None` once exhausted.
    pub(crate) fn current(&self) -> Option<&[usize]> {
        (!self.done).then_some(self.idx.as_slice())
    }

    pub(crate) fn advance(&mut self) {
        let k = self.idx.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                return;
            }
        }
        self.done = true;
    }
}

/// Integer-valued matrices (such as 0/1 sensing matrices) admit an exact
/// singularity test on column subsets.
fn integer_columns<T: Real>(m: ArrayView2<T>) -> Option<Vec<Vec<i64>>> {
    let limit = T::lit((1u64 << 20) as f64);
    m.iter().all(|v| v.fract() == T::zero() && v.abs() < limit).then(|| {
        m.columns()
            .into_iter()
            .map(|c| c.iter().map(|v| v.to_i64().unwrap_or(0)).collect())
            .collect()
    })
}

/// Fraction-free Gaussian elimination; exact determinant of a small integer matrix.
fn bareiss_det(mut a: Vec<Vec<i128>>) -> i128 {
    let n = a.len();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if a[k][k] == 0 {
            match (k + 1..n).find(|&r| a[r][k] != 0) {
                Some(r) => {
                    a.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}

fn integer_gram(cols: &[Vec<i64>], subset: &[usize]) -> Vec<Vec<i128>> {
    subset
        .iter()
        .map(|&a| {
            subset
                .iter()
                .map(|&b| cols[a].iter().zip(&cols[b]).map(|(x, y)| (*x as i128) * (*y as i128)).sum())
                .collect()
        })
        .collect()
}

fn submatrix(m: &DMatrix<f64>, subset: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), subset.len(), |r, c| m[(r, subset[c])])
}

/// Smallest singular value of `sub` and a corresponding unit right singular vector.
fn smallest_singular(sub: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let (rows, cols) = sub.shape();
    if rows >= cols {
        let svd = sub.clone().svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let (i, &s) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .expect("nonempty");
        (s, v_t.row(i).iter().copied().collect())
    } else {
        // wide: a kernel direction exists; take the bottom eigenvector of the Gram matrix
        let eig = SymmetricEigen::new(sub.transpose() * sub);
        let (i, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .expect("nonempty");
        (0.0, eig.eigenvectors.column(i).iter().copied().collect())
    }
}

fn to_dmatrix<T: Real>(m: ArrayView2<T>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[[r, c]].as_f64())
}

/// `k`-sparse injectivity number by exhaustive enumeration of all `k`-column
/// submatrices. For recovery of `s`-sparse signals call with `k = 2s`.
///
/// Integer-valued matrices are screened with an exact determinant test, so a
/// rank-deficient subset reports `theta = 0` exactly rather than round-off.
pub fn sin_number<T: Real>(m: ArrayView2<T>, k: usize) -> Result<SinReport<T>> {
    let n = m.ncols();
    if k == 0 || k > n {
        return Err(invalid(format!("subset size {k} must lie in 1..={n}")));
    }
    check_capacity(n, k)?;
    let dense = to_dmatrix(m);
    let int_cols = integer_columns(m);

    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    let mut combos = Combinations::new(n, k);
    while let Some(subset) = combos.current() {
        let sub = submatrix(&dense, subset);
        let exact_zero = k > m.nrows()
            || int_cols
                .as_ref()
                .is_some_and(|cols| bareiss_det(integer_gram(cols, subset)) == 0);
        if exact_zero {
            // nothing can beat an exact zero, and earlier subsets were all positive
            let (_, v) = smallest_singular(&sub);
            best = Some((0.0, subset.to_vec(), v));
            break;
        }
        let (s, v) = smallest_singular(&sub);
        if best.as_ref().is_none_or(|(b, _, _)| s < *b) {
            best = Some((s, subset.to_vec(), v));
        }
        combos.advance();
    }
    let (theta, worst_subset, local) = best.expect("at least one subset");
    let mut worst_vector = Array1::zeros(n);
    for (&c, v) in worst_subset.iter().zip(local) {
        worst_vector[c] = T::lit(v);
    }
    Ok(SinReport {
        k,
        theta: T::lit(theta),
        worst_subset,
        worst_vector,
    })
}

/// Restricted isometry constant of order `s` (columns used as given):
/// `max_S max(σ_max(M_S)² - 1, 1 - σ_min(M_S)²)`.
pub fn rip_constant<T: Real>(m: ArrayView2<T>, s: usize) -> Result<RipReport<T>> {
    let n = m.ncols();
    if s == 0 || s > n {
        return Err(invalid(format!("RIP order {s} must lie in 1..={n}")));
    }
    check_capacity(n, s)?;
    let dense = to_dmatrix(m);
    let mut delta = 0.0f64;
    let mut combos = Combinations::new(n, s);
    while let Some(subset) = combos.current() {
        let sub = submatrix(&dense, subset);
        let sv = sub.singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let smin = if s > m.nrows() {
            0.0
        } else {
            sv.iter().copied().fold(f64::INFINITY, f64::min)
        };
        delta = delta.max((smax * smax - 1.0).abs()).max((1.0 - smin * smin).abs());
        combos.advance();
    }
    Ok(RipReport { s, delta: T::lit(delta) })
}

/// Bit-packed 0/1 group matrix for the inner loop of the design search.
struct PackedColumns {
    cols: Vec<u64>,
}

impl PackedColumns {
    fn new(m: &StructuredCsMatrix) -> Self {
        let cols = m
            .entries
            .columns()
            .into_iter()
            .map(|c| c.iter().enumerate().fold(0u64, |acc, (r, &e)| acc | ((e as u64 & 1) << r)))
            .collect();
        Self { cols }
    }

    /// True when every `k`-subset has `σ_min² > threshold²`; the caller
    /// confirms survivors with [`sin_number`].
    fn all_subsets_exceed(&self, k: usize, threshold: f64) -> bool {
        let n = self.cols.len();
        let thr2 = threshold * threshold;
        let mut combos = Combinations::new(n, k);
        let mut gram = vec![vec![0i128; k]; k];
        let mut shifted = vec![0.0f64; k * k];
        while let Some(subset) = combos.current() {
            for (i, &a) in subset.iter().enumerate() {
                for (j, &b) in subset.iter().enumerate().skip(i) {
                    let g = (self.cols[a] & self.cols[b]).count_ones() as i128;
                    gram[i][j] = g;
                    gram[j][i] = g;
                }
            }
            if bareiss_det(gram.clone()) == 0 {
                return false;
            }
            for i in 0..k {
                for j in 0..k {
                    shifted[i * k + j] = gram[i][j] as f64 - if i == j { thr2 } else { 0.0 };
                }
            }
            if !cholesky_in_place(&mut shifted, k) {
                return false;
            }
            combos.advance();
        }
        true
    }
}

/// Returns false when the symmetric matrix is not positive definite.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Outcome of the random design search.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignResult {
    pub best_matrix: StructuredCsMatrix,
    pub best_sin: f64,
    pub best_list: SelectionList,
    pub iterations_used: usize,
    pub seed: u64,
    /// Iteration (from 1) at which `best_list` was drawn; 0 when nothing beat zero.
    pub best_iteration: usize,
}

/// Random search over admissible `m0 × n0` group matrices for the largest
/// `k`-subset SIN. Only strict improvements replace the incumbent, which
/// starts at zero; results depend only on `seed`.
pub fn optimize_sin(spec: &StructureSpec, k: usize, n_iter: usize, seed: u64) -> Result<DesignResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    optimize_sin_with(spec, k, n_iter, seed, &mut rng, |_, _| {})
}

/// [`optimize_sin`] driven by a caller-supplied generator; `on_improve` sees
/// every strict improvement as `(iteration, sin)`.
pub fn optimize_sin_with<R: Rng + ?Sized>(
    spec: &StructureSpec,
    k: usize,
    n_iter: usize,
    seed: u64,
    rng: &mut R,
    mut on_improve: impl FnMut(usize, f64),
) -> Result<DesignResult> {
    spec.validate()?;
    if n_iter == 0 {
        return Err(invalid("the design search needs at least one iteration"));
    }
    let n0 = spec.n0();
    if k == 0 || k > n0 {
        return Err(invalid(format!("subset size {k} must lie in 1..={n0}")));
    }
    check_capacity(n0, k)?;
    if spec.m0 > 64 {
        return Err(invalid(format!("m0 = {} exceeds the 64-row search limit", spec.m0)));
    }

    let mut best_sin = 0.0f64;
    let mut best_list = SelectionList::zeros(spec);
    let mut best_matrix = make_cs_matrix(&best_list, spec)?;
    let mut best_iteration = 0;
    for it in 1..=n_iter {
        let list = sample_selection_list(spec, rng);
        let candidate = make_cs_matrix(&list, spec)?;
        if k > spec.m0 || !PackedColumns::new(&candidate).all_subsets_exceed(k, best_sin) {
            continue;
        }
        let sin = sin_number(candidate.to_real::<f64>().view(), k)?.theta;
        if sin > best_sin {
            best_sin = sin;
            best_list = list;
            best_matrix = candidate;
            best_iteration = it;
            on_improve(it, sin);
        }
    }
    Ok(DesignResult {
        best_matrix,
        best_sin,
        best_list,
        iterations_used: n_iter,
        seed,
        best_iteration,
    })
}

/// Unoptimised comparator: the first uniformly drawn admissible matrix whose
/// SIN reaches `min_sin`, searched for at most `max_draws` draws.
pub fn first_admissible_with_sin(
    spec: &StructureSpec,
    k: usize,
    min_sin: f64,
    max_draws: usize,
    seed: u64,
) -> Result<Option<(StructuredCsMatrix, f64)>> {
    spec.validate()?;
    check_capacity(spec.n0(), k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_draws {
        let list = sample_selection_list(spec, &mut rng);
        let candidate = make_cs_matrix(&list, spec)?;
        if k > spec.m0 || !PackedColumns::new(&candidate).all_subsets_exceed(k, 0.0) {
            continue;
        }
        let sin = sin_number(candidate.to_real::<f64>().view(), k)?.theta;
        if sin >= min_sin {
            return Ok(Some((candidate, sin)));
        }
    }
    Ok(None)
}
