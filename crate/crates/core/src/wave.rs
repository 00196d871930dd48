//! Circular means, the 2D forward wave map, the Abel-based temporal
//! transform and filtered backprojection on the detection circle.
//!
//! All temporal operators work on the uniform grid `t_l = l h`, which also
//! serves as the radial grid of the circular means. The Abel kernel
//! `1 / sqrt(t² - r²)` is integrated exactly against piecewise-linear
//! interpolants, so the discrete operators below are plain matrices built
//! once per grid.

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Axis, Zip};

use crate::error::{invalid, Error, Result};
use crate::geometry::{ImageGrid, SensorGeometry, SourceImage, TimeGrid};
use crate::scalar::Real;

/// Angular samples per image axis sample used by [`circular_means`].
pub const ANGLES_PER_PIXEL: usize = 4;

/// Rows of sensor data sharing one time (or radius) axis.
pub trait SensorSeries<T: Real> {
    fn geometry(&self) -> &SensorGeometry<T>;
    fn times(&self) -> &TimeGrid<T>;
    fn values(&self) -> &Array2<T>;
}

macro_rules! sensor_series {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            geometry: SensorGeometry<T>,
            times: TimeGrid<T>,
            values: Array2<T>,
        }

        impl<T: Real> $name<T> {
            pub fn new(geometry: SensorGeometry<T>, times: TimeGrid<T>, values: Array2<T>) -> Result<Self> {
                if values.nrows() != geometry.n() {
                    return Err(Error::DimensionMismatch {
                        what: "sensor rows",
                        expected: geometry.n(),
                        actual: values.nrows(),
                    });
                }
                if values.ncols() != times.q() {
                    return Err(Error::DimensionMismatch {
                        what: "time samples",
                        expected: times.q(),
                        actual: values.ncols(),
                    });
                }
                Ok(Self { geometry, times, values })
            }

            pub fn zeros(geometry: SensorGeometry<T>, times: TimeGrid<T>) -> Self {
                let values = Array2::zeros((geometry.n(), times.q()));
                Self { geometry, times, values }
            }

            pub fn into_values(self) -> Array2<T> {
                self.values
            }

            pub fn geometry(&self) -> &SensorGeometry<T> {
                &self.geometry
            }

            pub fn times(&self) -> &TimeGrid<T> {
                &self.times
            }

            pub fn values(&self) -> &Array2<T> {
                &self.values
            }
        }

        impl<T: Real> SensorSeries<T> for $name<T> {
            fn geometry(&self) -> &SensorGeometry<T> {
                &self.geometry
            }
            fn times(&self) -> &TimeGrid<T> {
                &self.times
            }
            fn values(&self) -> &Array2<T> {
                &self.values
            }
        }
    };
}

sensor_series!(
    /// Circular means `m(s_j, r_l)` of the source; row `j` belongs to sensor `j`.
    MeansData
);
sensor_series!(
    /// Pressure traces `p(s_j, t_l)` recorded on the detection circle.
    PressureData
);

/// Circular means with the default angular resolution of `4 n_r` samples.
pub fn circular_means<T: Real>(u: &SourceImage<T>, geom: &SensorGeometry<T>, radii: &TimeGrid<T>) -> MeansData<T> {
    circular_means_with(u, geom, radii, ANGLES_PER_PIXEL * u.grid().n_r())
}

/// `m(s_j, r) = 1/(2π) ∮ u(s_j + r θ) dθ` by the uniform rule on `n_angles`
/// directions with bilinear interpolation of `u`.
pub fn circular_means_with<T: Real>(
    u: &SourceImage<T>,
    geom: &SensorGeometry<T>,
    radii: &TimeGrid<T>,
    n_angles: usize,
) -> MeansData<T> {
    let n_angles = n_angles.max(1);
    let dirs: Vec<(T, T)> = (0..n_angles)
        .map(|a| {
            let phi = std::f64::consts::TAU * a as f64 / n_angles as f64;
            (T::lit(phi.cos()), T::lit(phi.sin()))
        })
        .collect();
    let inv = T::one() / T::from_usize_lossy(n_angles);
    let r = radii.values();
    let mut values = Array2::zeros((geom.n(), radii.q()));
    Zip::from(values.rows_mut())
        .and(&Array1::from(geom.positions().to_vec()))
        .par_for_each(|mut row, s| {
            for (l, out) in row.iter_mut().enumerate() {
                *out = if l == 0 || r[l] == T::zero() {
                    u.sample(s[0], s[1])
                } else {
                    let mut acc = T::zero();
                    for &(c, sn) in &dirs {
                        acc += u.sample(s[0] + r[l] * c, s[1] + r[l] * sn);
                    }
                    acc * inv
                };
            }
        });
    MeansData {
        geometry: geom.clone(),
        times: radii.clone(),
        values,
    }
}

/// Discrete Abel operator `g(t_l) = ∫_0^{t_l} f(r) / sqrt(t_l² - r²) dr` for
/// piecewise-linear `f` on the uniform grid; lower triangular, dimensionless.
#[derive(Clone, Debug)]
pub struct AbelOperator<T> {
    kernel: Array2<T>,
}

impl<T: Real> AbelOperator<T> {
    pub fn new(q: usize) -> Self {
        let mut k = Array2::<f64>::zeros((q, q));
        for l in 1..q {
            let lf = l as f64;
            for c in 0..l {
                let (a, b) = (c as f64, c as f64 + 1.0);
                let i0 = (b / lf).min(1.0).asin() - (a / lf).asin();
                let i1 = ((lf - a) * (lf + a)).sqrt() - ((lf - b) * (lf + b)).max(0.0).sqrt();
                k[[l, c]] += b * i0 - i1;
                k[[l, c + 1]] += i1 - a * i0;
            }
        }
        Self {
            kernel: k.mapv(T::lit),
        }
    }

    pub fn q(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.kernel
    }

    pub fn apply(&self, f: ArrayView1<T>) -> Array1<T> {
        self.kernel.dot(&f)
    }

    /// Solves `K f = g` by forward substitution with `f_0 = 0`; row 0 of `K` vanishes.
    pub fn solve(&self, g: ArrayView1<T>) -> Array1<T> {
        let q = self.q();
        let mut f = Array1::zeros(q);
        for l in 1..q {
            let row = self.kernel.row(l);
            let mut acc = g[l];
            for c in 1..l {
                acc -= row[c] * f[c];
            }
            f[l] = acc / row[l];
        }
        f
    }
}

/// Central differences in the interior, one-sided at both ends.
pub fn differentiate<T: Real>(g: ArrayView1<T>, step: T, mut out: ArrayViewMut1<T>) {
    let q = g.len();
    if q < 2 {
        out.fill(T::zero());
        return;
    }
    out[0] = (g[1] - g[0]) / step;
    out[q - 1] = (g[q - 1] - g[q - 2]) / step;
    let two_h = T::lit(2.0) * step;
    for l in 1..q - 1 {
        out[l] = (g[l + 1] - g[l - 1]) / two_h;
    }
}

/// Cumulative trapezoid with zero initial value.
pub fn cumulative_trapezoid<T: Real>(p: ArrayView1<T>, step: T, mut out: ArrayViewMut1<T>) {
    let half = step * T::lit(0.5);
    let mut acc = T::zero();
    if !out.is_empty() {
        out[0] = T::zero();
    }
    for l in 1..p.len() {
        acc += half * (p[l - 1] + p[l]);
        out[l] = acc;
    }
}

/// The temporal transform `T` (pressure → circular means) and its inverse on one grid.
#[derive(Clone, Debug)]
pub struct TemporalTransform<T> {
    times: TimeGrid<T>,
    abel: AbelOperator<T>,
}

impl<T: Real> TemporalTransform<T> {
    pub fn new(times: &TimeGrid<T>) -> Self {
        Self {
            times: times.clone(),
            abel: AbelOperator::new(times.q()),
        }
    }

    pub fn times(&self) -> &TimeGrid<T> {
        &self.times
    }

    fn check(&self, rows: &Array2<T>) -> Result<()> {
        if rows.ncols() != self.times.q() {
            return Err(Error::DimensionMismatch {
                what: "time samples",
                expected: self.times.q(),
                actual: rows.ncols(),
            });
        }
        Ok(())
    }

    /// Applies `T` to every row: antiderivative, inverse Abel, division by `r`.
    pub fn forward(&self, rows: &Array2<T>) -> Result<Array2<T>> {
        self.check(rows)?;
        let h = self.times.step();
        let r = self.times.values();
        let q = self.times.q();
        let mut out = Array2::zeros(rows.raw_dim());
        Zip::from(out.rows_mut()).and(rows.rows()).par_for_each(|mut o, p| {
            let mut g = Array1::zeros(q);
            cumulative_trapezoid(p, h, g.view_mut());
            let f = self.abel.solve(g.view());
            for l in 1..q {
                o[l] = f[l] / r[l];
            }
            o[0] = if q >= 4 {
                T::lit(3.0) * (o[1] - o[2]) + o[3]
            } else if q >= 2 {
                o[1]
            } else {
                T::zero()
            };
        });
        Ok(out)
    }

    /// Applies `T⁻¹` to every row: multiply by `r`, forward Abel, differentiate.
    /// This is exactly the temporal part of the forward wave map.
    pub fn inverse(&self, rows: &Array2<T>) -> Result<Array2<T>> {
        self.check(rows)?;
        let h = self.times.step();
        let r = self.times.values();
        let mut out = Array2::zeros(rows.raw_dim());
        Zip::from(out.rows_mut()).and(rows.rows()).par_for_each(|o, m| {
            let f: Array1<T> = m.iter().zip(r).map(|(&mv, &rv)| mv * rv).collect();
            let g = self.abel.apply(f.view());
            differentiate(g.view(), h, o);
        });
        Ok(out)
    }
}

/// Pressure on the detection circle from the circular means of the source.
pub fn pressure_from_means<T: Real>(means: &MeansData<T>) -> PressureData<T> {
    let tt = TemporalTransform::new(&means.times);
    let values = tt.inverse(&means.values).expect("means rows match their own grid");
    PressureData {
        geometry: means.geometry.clone(),
        times: means.times.clone(),
        values,
    }
}

/// Forward wave map `W`: `p(s, t) = ∂_t ∫_0^t r m(s, r) / sqrt(t² - r²) dr`.
pub fn wave_forward<T: Real>(u: &SourceImage<T>, geom: &SensorGeometry<T>, times: &TimeGrid<T>) -> PressureData<T> {
    pressure_from_means(&circular_means(u, geom, times))
}

/// [`wave_forward`] with an explicit number of quadrature directions.
pub fn wave_forward_with<T: Real>(
    u: &SourceImage<T>,
    geom: &SensorGeometry<T>,
    times: &TimeGrid<T>,
    n_angles: usize,
) -> PressureData<T> {
    pressure_from_means(&circular_means_with(u, geom, times, n_angles))
}

/// Temporal transform of pressure data into (approximate) circular means.
pub fn apply_t<T: Real>(p: &PressureData<T>) -> MeansData<T> {
    let tt = TemporalTransform::new(&p.times);
    let values = tt.forward(&p.values).expect("pressure rows match their own grid");
    MeansData {
        geometry: p.geometry.clone(),
        times: p.times.clone(),
        values,
    }
}

/// Filter `F(ρ_k) = ∫_{ρ_k}^{2R} w(t) / sqrt(t² - ρ_k²) dt` for piecewise-linear `w`,
/// evaluated at every grid radius; upper triangular, dimensionless.
#[derive(Clone, Debug)]
struct BackprojectionFilter<T> {
    kernel: Array2<T>,
}

impl<T: Real> BackprojectionFilter<T> {
    fn new(q: usize) -> Self {
        let mut k = Array2::<f64>::zeros((q, q));
        for rho in 1..q {
            let kf = rho as f64;
            for i in rho..q - 1 {
                let (a, b) = (i as f64, i as f64 + 1.0);
                let sa = ((a - kf) * (a + kf)).max(0.0).sqrt();
                let sb = ((b - kf) * (b + kf)).sqrt();
                let j0 = ((b + sb) / (a + sa)).ln();
                let j1 = sb - sa;
                k[[rho, i]] += b * j0 - j1;
                k[[rho, i + 1]] += j1 - a * j0;
            }
        }
        if q > 1 {
            // ρ = 0 only occurs for points on the detector itself
            let first = k.row(1).to_owned();
            k.row_mut(0).assign(&first);
        }
        Self {
            kernel: k.mapv(T::lit),
        }
    }
}

/// Contribution of `t > 2R` to the backprojection filter, expressed through
/// `f = r m` on `[0, 2R)`:
/// `F_tail(ρ) = ∫ f(r) ∫_{2R}^∞ ∂_t(t ∂_t (t² - r²)^{-1/2}) / sqrt(t² - ρ²) dt dr`.
/// The inner integral has the closed form
/// `1/((X - a)(1 + S)) + a (2 + S) / ((X - a)² (1 + S)²)`
/// with `X = 4R²`, `a = r²`, `b = ρ²`, `S = sqrt((X - b)/(X - a))`.
#[derive(Clone, Debug)]
struct TailFilter<T> {
    kernel: Array2<T>,
}

impl<T: Real> TailFilter<T> {
    /// Kernel in grid units (`h = 1`); row `k` is the radius `ρ_k`, column `c` the node `r_c`.
    fn new(q: usize) -> Self {
        let mut k = Array2::<f64>::zeros((q, q));
        if q < 2 {
            return Self { kernel: k.mapv(T::lit) };
        }
        let big = ((q - 1) * (q - 1)) as f64;
        // the node at r = 2R is excluded: the kernel is singular there and f vanishes
        for rho in 0..q - 1 {
            let b = (rho * rho) as f64;
            for c in 0..q - 1 {
                let a = (c * c) as f64;
                let s = ((big - b) / (big - a)).sqrt();
                let xa = big - a;
                let tau = 1.0 / (xa * (1.0 + s)) + a * (2.0 + s) / (xa * xa * (1.0 + s) * (1.0 + s));
                let w = if c == 0 { 0.5 } else { 1.0 };
                k[[rho, c]] = w * tau;
            }
        }
        Self { kernel: k.mapv(T::lit) }
    }
}

/// Filtered backprojection on the detection circle:
/// `u(x) = -(1/(πR)) ∮ ∫_{|x-s|}^∞ ∂_t(t p)(s, t) / sqrt(t² - |x-s|²) dt ds`.
///
/// The time integral is evaluated on the recorded window `[0, 2R]`; the part
/// beyond `2R` is added through [`TailFilter`] from the means recovered by `T`.
pub fn fbp_from_pressure<T: Real>(
    p: &PressureData<T>,
    geom: &SensorGeometry<T>,
    grid: &ImageGrid<T>,
) -> Result<SourceImage<T>> {
    if p.values.nrows() != geom.n() {
        return Err(Error::DimensionMismatch {
            what: "sensor rows",
            expected: geom.n(),
            actual: p.values.nrows(),
        });
    }
    let times = &p.times;
    let q = times.q();
    let h = times.step();
    let t = times.values();
    let filter = BackprojectionFilter::<T>::new(q);
    let tail = TailFilter::<T>::new(q);
    let abel = AbelOperator::<T>::new(q);

    // filtered traces, one row per sensor
    let mut filtered = Array2::<T>::zeros((geom.n(), q));
    Zip::from(filtered.rows_mut()).and(p.values.rows()).par_for_each(|mut out, row| {
        let tp: Array1<T> = row.iter().zip(t).map(|(&pv, &tv)| pv * tv).collect();
        let mut w = Array1::zeros(q);
        differentiate(tp.view(), h, w.view_mut());
        let mut g = Array1::zeros(q);
        cumulative_trapezoid(row, h, g.view_mut());
        let f = abel.solve(g.view());
        // f carries one factor of length (r m); the tail kernel is in grid units
        let tail_part = tail.kernel.dot(&f) / h;
        out.assign(&(filter.kernel.dot(&w) + tail_part));
    });

    let scale = -geom.arc_weight() / (T::lit(std::f64::consts::PI) * geom.radius());
    let n = grid.n_r();
    let inv_h = T::one() / h;
    let last = T::from_usize_lossy(q - 1);
    let positions = geom.positions();
    let mut values = Array2::<T>::zeros((n, n));
    Zip::indexed(&mut values).par_for_each(|(row, col), v| {
        if !grid.inside(row, col) {
            return;
        }
        let x = grid.center(col);
        let y = grid.center(row);
        let mut acc = T::zero();
        for (j, s) in positions.iter().enumerate() {
            let dx = x - s[0];
            let dy = y - s[1];
            let fi = (dx * dx + dy * dy).sqrt() * inv_h;
            if fi >= last {
                continue;
            }
            let i0 = fi.floor();
            let w = fi - i0;
            let i = i0.to_usize().unwrap_or(0);
            acc += (T::one() - w) * filtered[[j, i]] + w * filtered[[j, i + 1]];
        }
        *v = scale * acc;
    });
    SourceImage::masked(*grid, values)
}

/// Two-step inversion from (recovered) circular means: `T⁻¹` followed by FBP.
pub fn fbp_from_means<T: Real>(
    h: &MeansData<T>,
    geom: &SensorGeometry<T>,
    grid: &ImageGrid<T>,
) -> Result<SourceImage<T>> {
    fbp_from_pressure(&pressure_from_means(h), geom, grid)
}

/// Inner product on pressure data under which FBP is the adjoint of `W`:
/// `(2/R) ∮ ∫ t p(s,t) v(s,t) dt ds`, trapezoid in time, arc weights in space.
pub fn pressure_inner_product<T: Real>(a: &PressureData<T>, b: &PressureData<T>) -> Result<T> {
    if a.values.dim() != b.values.dim() {
        return Err(invalid("pressure inner product needs identically shaped data"));
    }
    let h = a.times.step();
    let t = a.times.values();
    let q = t.len();
    let mut acc = T::zero();
    for (ra, rb) in a.values.axis_iter(Axis(0)).zip(b.values.axis_iter(Axis(0))) {
        for l in 0..q {
            let w = if l == 0 || l == q - 1 { T::lit(0.5) } else { T::one() };
            acc += w * t[l] * ra[l] * rb[l];
        }
    }
    Ok(T::lit(2.0) / a.geometry.radius() * a.geometry.arc_weight() * h * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_disc_phantom, make_sensor_geometry, DiscSpec};
    use crate::metrics::relative_l2;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    fn ring(n: usize) -> SensorGeometry<f64> {
        make_sensor_geometry(n, 1.0, TAU).unwrap()
    }

    fn disc(n_r: usize, c: [f64; 2], a: f64) -> SourceImage<f64> {
        make_disc_phantom(ImageGrid::new(n_r, 1.0).unwrap(), &[DiscSpec::uniform(c, a, 1.0)]).unwrap()
    }

    fn scaled(u: &SourceImage<f64>, c: f64) -> SourceImage<f64> {
        SourceImage::new(*u.grid(), u.values() * c).unwrap()
    }

    #[test]
    fn abel_reproduces_linear_profiles() {
        // m ≡ 1 gives ∫_0^t r / sqrt(t² - r²) dr = t, exact for piecewise-linear r m
        let k = AbelOperator::<f64>::new(40);
        let f = Array1::from_iter((0..40).map(|c| c as f64));
        let g = k.apply(f.view());
        for (l, v) in g.iter().enumerate() {
            assert_abs_diff_eq!(*v, l as f64, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(k.solve(g.view()), f, epsilon = 1e-9);
    }

    #[test]
    fn abel_converges_on_quadratic_profiles() {
        // ∫_0^t r² / sqrt(t² - r²) dr = π t² / 4
        let q = 400;
        let k = AbelOperator::<f64>::new(q);
        let f = Array1::from_iter((0..q).map(|c| (c * c) as f64));
        let g = k.apply(f.view());
        let l = (q - 1) as f64;
        assert!((g[q - 1] - PI * l * l / 4.0).abs() / (PI * l * l / 4.0) < 1e-4);
    }

    #[test]
    fn derivative_and_antiderivative_are_exact_on_lines() {
        let g = Array1::from_iter((0..6).map(|l| 3.0 * l as f64 * 0.5));
        let mut d = Array1::zeros(6);
        differentiate(g.view(), 0.5, d.view_mut());
        assert_abs_diff_eq!(d, Array1::from_elem(6, 3.0), epsilon = 1e-14);
        let mut c = Array1::zeros(6);
        cumulative_trapezoid(Array1::from_elem(6, 2.0).view(), 0.5, c.view_mut());
        assert_abs_diff_eq!(c[5], 5.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_source_gives_zero_everywhere() {
        let grid = ImageGrid::new(16, 1.0).unwrap();
        let u = SourceImage::zeros(grid);
        let geom = ring(8);
        let times = TimeGrid::new(32, 1.0).unwrap();
        let m = circular_means(&u, &geom, &times);
        assert!(m.values().iter().all(|v| *v == 0.0));
        let p = wave_forward(&u, &geom, &times);
        assert!(p.values().iter().all(|v| *v == 0.0));
        assert!(apply_t(&p).values().iter().all(|v| *v == 0.0));
        assert!(fbp_from_pressure(&p, &geom, &grid).unwrap().values().iter().all(|v| *v == 0.0));
        assert!(fbp_from_means(&m, &geom, &grid).unwrap().values().iter().all(|v| *v == 0.0));
    }

    /// Brute-force angular quadrature of the same bilinear image.
    fn dense_mean(u: &SourceImage<f64>, s: [f64; 2], r: f64, n: usize) -> f64 {
        (0..n)
            .map(|a| {
                let phi = TAU * (a as f64 + 0.5) / n as f64;
                u.sample(s[0] + r * phi.cos(), s[1] + r * phi.sin())
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn centred_disc_mean_matches_arc_fraction() {
        let (n_r, a) = (128, 0.4);
        let u = disc(n_r, [0.0, 0.0], a);
        let geom = ring(16);
        let times = TimeGrid::new(101, 1.0).unwrap();
        let m = circular_means(&u, &geom, &times);
        // r = R - a/2 sits on the grid: t_l = l/50
        let l = 40;
        assert_abs_diff_eq!(times.values()[l], 1.0 - a / 2.0, epsilon = 1e-12);
        let r = times.values()[l];
        let s = geom.positions()[3];
        let dense = dense_mean(&u, s, r, 10 * 4 * n_r);
        assert!((m.values()[[3, l]] - dense).abs() < 2e-3 * dense);
        let fraction = ((r * r + 1.0 - a * a) / (2.0 * r)).acos() / PI;
        assert!((dense - fraction).abs() < 0.02 * fraction, "{dense} vs {fraction}");
    }

    #[test]
    fn symmetric_source_gives_identical_rows() {
        // four sensors a quarter turn apart map the pixel lattice onto itself
        let u = disc(32, [0.0, 0.0], 0.5);
        let m = circular_means(&u, &ring(4), &TimeGrid::new(64, 1.0).unwrap());
        for j in 1..4 {
            assert_abs_diff_eq!(m.values().row(j), m.values().row(0), epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_map_is_linear() {
        let geom = ring(12);
        let times = TimeGrid::new(64, 1.0).unwrap();
        let u1 = disc(32, [0.2, 0.1], 0.3);
        let u2 = disc(32, [-0.3, 0.0], 0.2);
        let sum = SourceImage::new(*u1.grid(), u1.values() + u2.values()).unwrap();
        let p1 = wave_forward(&u1, &geom, &times);
        let p2 = wave_forward(&u2, &geom, &times);
        let ps = wave_forward(&sum, &geom, &times);
        let peak = ps.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_abs_diff_eq!(*ps.values(), p1.values() + p2.values(), epsilon = 1e-12 * peak);
        let pc = wave_forward(&scaled(&u1, 2.5), &geom, &times);
        assert_abs_diff_eq!(*pc.values(), p1.values() * 2.5, epsilon = 1e-12 * peak);
    }

    #[test]
    fn temporal_transform_and_fbp_are_linear() {
        let geom = ring(8);
        let times = TimeGrid::new(48, 1.0).unwrap();
        let grid = ImageGrid::new(24, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut draw = || PressureData::new(geom.clone(), times.clone(), Array2::from_shape_fn((8, 48), |_| rng.random_range(-1.0..1.0))).unwrap();
        let (a, b) = (draw(), draw());
        let s = PressureData::new(geom.clone(), times.clone(), a.values() + b.values()).unwrap();
        let ta = apply_t(&a);
        let tb = apply_t(&b);
        let ts = apply_t(&s);
        assert_abs_diff_eq!(*ts.values(), ta.values() + tb.values(), epsilon = 1e-9);
        let fa = fbp_from_pressure(&a, &geom, &grid).unwrap();
        let fb = fbp_from_pressure(&b, &geom, &grid).unwrap();
        let fs = fbp_from_pressure(&s, &geom, &grid).unwrap();
        assert_abs_diff_eq!(*fs.values(), fa.values() + fb.values(), epsilon = 1e-12);
        let ma = fbp_from_means(&ta, &geom, &grid).unwrap();
        let mb = fbp_from_means(&tb, &geom, &grid).unwrap();
        let ms = fbp_from_means(&ts, &geom, &grid).unwrap();
        assert_abs_diff_eq!(*ms.values(), ma.values() + mb.values(), epsilon = 1e-9);
    }

    #[test]
    fn leading_edge_arrives_at_the_geometric_distance() {
        let (c, a) = ([0.25, -0.15], 0.3);
        let u = disc(128, c, a);
        let geom = ring(16);
        let times = TimeGrid::new(128, 1.0).unwrap();
        let h = times.step();
        // bilinear sampling widens the rim by up to a pixel diagonal
        let spread = std::f64::consts::SQRT_2 * u.grid().pixel_size();
        let p = wave_forward(&u, &geom, &times);
        let peak = p.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (j, s) in geom.positions().iter().enumerate() {
            let expected = ((s[0] - c[0]).powi(2) + (s[1] - c[1]).powi(2)).sqrt() - a;
            let first = p.values().row(j).iter().position(|v| v.abs() > 1e-3 * peak).unwrap();
            let arrival = times.values()[first];
            // the central difference reacts one step ahead of the means
            assert!(arrival >= expected - h - spread && arrival <= expected + h, "sensor {j}: {arrival} vs {expected}");
            // causality: nothing before the support is reached
            let quiet = ((expected - 2.0 * h) / h).floor().max(0.0) as usize;
            assert!(p.values().row(j).iter().take(quiet).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn pressure_vanishes_at_time_zero() {
        let u = disc(64, [0.1, 0.2], 0.3);
        let p = wave_forward(&u, &ring(8), &TimeGrid::new(64, 1.0).unwrap());
        assert!(p.values().column(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn means_vanish_beyond_the_support() {
        let u = disc(64, [0.1, 0.2], 0.3);
        let geom = ring(8);
        let times = TimeGrid::new(128, 1.0).unwrap();
        let m = circular_means(&u, &geom, &times);
        let pix = u.grid().pixel_size();
        for (j, s) in geom.positions().iter().enumerate() {
            let far = ((s[0] - 0.1).powi(2) + (s[1] - 0.2).powi(2)).sqrt() + 0.3 + 2.0 * pix;
            for (l, r) in times.values().iter().enumerate() {
                if *r > far {
                    assert_eq!(m.values()[[j, l]], 0.0);
                }
            }
        }
    }

    #[test]
    fn transform_recovers_means_and_refines() {
        let u = disc(64, [0.2, 0.1], 0.35);
        let geom = ring(16);
        let err = |q: usize, angles: usize| {
            let times = TimeGrid::new(q, 1.0).unwrap();
            let m = circular_means_with(&u, &geom, &times, angles);
            let back = apply_t(&pressure_from_means(&m));
            relative_l2(back.values(), m.values()).unwrap()
        };
        let coarse = err(256, 256);
        let fine = err(512, 512);
        assert!(coarse <= 0.05, "{coarse}");
        assert!(fine < coarse, "{fine} !< {coarse}");
    }

    #[test]
    fn inverse_transform_round_trip_at_default_resolution() {
        let u = make_disc_phantom(ImageGrid::new(128, 1.0).unwrap(), &[DiscSpec::uniform([0.2, 0.1], 0.35, 1.0)]).unwrap();
        let geom = ring(16);
        let times = TimeGrid::new(512, 1.0).unwrap();
        let p = wave_forward(&u, &geom, &times);
        let p2 = pressure_from_means(&apply_t(&p));
        assert!(relative_l2(p2.values(), p.values()).unwrap() <= 0.02);
    }

    #[test]
    fn both_fbp_paths_agree() {
        let grid = ImageGrid::new(48, 1.0).unwrap();
        let u = make_disc_phantom(grid, &[DiscSpec::uniform([0.1, 0.0], 0.4, 1.0)]).unwrap();
        let geom = ring(32);
        let times = TimeGrid::new(128, 1.0).unwrap();
        let via_means = fbp_from_means(&circular_means(&u, &geom, &times), &geom, &grid).unwrap();
        let via_pressure = fbp_from_pressure(&wave_forward(&u, &geom, &times), &geom, &grid).unwrap();
        assert!(relative_l2(via_means.values(), via_pressure.values()).unwrap() <= 0.05);
    }

    #[test]
    fn fbp_inverts_at_nyquist_sampling() {
        let n_r = 64;
        let grid = ImageGrid::new(n_r, 1.0).unwrap();
        let u = make_disc_phantom(grid, &[DiscSpec::uniform([0.15, -0.1], 0.4, 1.0)]).unwrap();
        let geom = ring(crate::geometry::nyquist_sensor_count(n_r));
        let times = TimeGrid::new(256, 1.0).unwrap();
        let rec = fbp_from_pressure(&wave_forward(&u, &geom, &times), &geom, &grid).unwrap();
        let err = relative_l2(rec.values(), u.values()).unwrap();
        assert!(err <= 0.10, "{err}");
    }

    #[test]
    fn fbp_is_adjoint_of_forward_map() {
        // <W u, W v>_weighted against <u, FBP(W v)> with pixel-area weights; the
        // recording window runs to 6R so the inner product sees most of the tail
        let grid = ImageGrid::new(64, 1.0).unwrap();
        let geom = ring(101);
        let times = TimeGrid::new(768, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut random_phantom = || {
            let discs: Vec<_> = (0..3)
                .map(|_| {
                    let c = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
                    DiscSpec::uniform(c, rng.random_range(0.1..0.3), rng.random_range(0.5..1.5))
                })
                .collect();
            make_disc_phantom(grid, &discs).unwrap()
        };
        for _ in 0..3 {
            let u = random_phantom();
            let v = random_phantom();
            let wu = wave_forward(&u, &geom, &times);
            let wv = wave_forward(&v, &geom, &times);
            let lhs = pressure_inner_product(&wu, &wv).unwrap();
            let back = fbp_from_pressure(&wv, &geom, &grid).unwrap();
            let area = grid.pixel_size() * grid.pixel_size();
            let rhs = area * (u.values() * back.values()).sum();
            assert!((lhs - rhs).abs() <= 0.05 * rhs.abs(), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn series_constructors_check_shapes() {
        let geom = ring(4);
        let times = TimeGrid::new(8, 1.0).unwrap();
        assert!(MeansData::new(geom.clone(), times.clone(), Array2::zeros((3, 8))).is_err());
        assert!(PressureData::new(geom.clone(), times.clone(), Array2::zeros((4, 7))).is_err());
        assert!(PressureData::new(geom, times, Array2::<f64>::zeros((4, 8))).is_ok());
    }
}
