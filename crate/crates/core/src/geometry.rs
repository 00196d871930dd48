//! Detection circle, sampling grids and disc phantoms.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Relative clip applied to the inverse-sqrt profile near the disc rim.
pub const INVERSE_SQRT_CLIP: f64 = 1e-3;

/// `n` point detectors spread uniformly over an arc of angle `coverage` on
/// the circle of radius `radius` centred at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorGeometry<T> {
    n: usize,
    radius: T,
    coverage: T,
    positions: Vec<[T; 2]>,
}

impl<T: Real> SensorGeometry<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    /// Angular coverage Ω in radians.
    pub fn coverage(&self) -> T {
        self.coverage
    }

    pub fn positions(&self) -> &[[T; 2]] {
        &self.positions
    }

    /// Arc length associated with each detector, `R Ω / n`.
    pub fn arc_weight(&self) -> T {
        self.radius * self.coverage / T::from_usize_lossy(self.n)
    }
}

/// Builds the sensor ring with `s_j = R (cos(Ω j / n), sin(Ω j / n))`, `j = 0..n`.
pub fn make_sensor_geometry<T: Real>(n: usize, radius: T, coverage: T) -> Result<SensorGeometry<T>> {
    if n == 0 {
        return Err(invalid("sensor count must be positive"));
    }
    if !(radius > T::zero()) || !radius.is_finite() {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    let two_pi = T::lit(std::f64::consts::TAU);
    if !(coverage > T::zero() && coverage <= two_pi) {
        return Err(invalid(format!("angular coverage must lie in (0, 2π], got {coverage}")));
    }
    let nf = T::from_usize_lossy(n);
    let positions = (0..n)
        .map(|j| {
            let phi = coverage * T::from_usize_lossy(j) / nf;
            [radius * phi.cos(), radius * phi.sin()]
        })
        .collect();
    Ok(SensorGeometry {
        n,
        radius,
        coverage,
        positions,
    })
}

/// Number of detectors needed on the full circle for alias-free sampling of
/// an `n_r × n_r` image: `round(π n_r / 2)`.
pub fn nyquist_sensor_count(n_r: usize) -> usize {
    (std::f64::consts::PI * n_r as f64 / 2.0).round() as usize
}

/// Uniform samples `t_l = 2R l / (q - 1)`, `l = 0..q`, with unit sound speed.
///
/// The same grid doubles as the radial grid of circular means.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid<T> {
    radius: T,
    t: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(q: usize, radius: T) -> Result<Self> {
        if q < 2 {
            return Err(invalid(format!("time grid needs at least 2 samples, got {q}")));
        }
        if !(radius > T::zero()) {
            return Err(invalid(format!("radius must be positive, got {radius}")));
        }
        let span = T::lit(2.0) * radius;
        let denom = T::from_usize_lossy(q - 1);
        let mut t: Vec<T> = (0..q).map(|l| span * T::from_usize_lossy(l) / denom).collect();
        t[q - 1] = span;
        Ok(Self { radius, t })
    }

    pub fn q(&self) -> usize {
        self.t.len()
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn step(&self) -> T {
        T::lit(2.0) * self.radius / T::from_usize_lossy(self.q() - 1)
    }

    pub fn values(&self) -> &[T] {
        &self.t
    }
}

/// `n_r × n_r` pixel grid covering `[-R, R]²`; pixel `(i, j)` has centre
/// `(x_j, y_i)` with `x_j = -R + (j + 1/2) 2R / n_r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageGrid<T> {
    n_r: usize,
    radius: T,
}

impl<T: Real> ImageGrid<T> {
    pub fn new(n_r: usize, radius: T) -> Result<Self> {
        if n_r == 0 {
            return Err(invalid("image grid needs at least one pixel per axis"));
        }
        if !(radius > T::zero()) {
            return Err(invalid(format!("radius must be positive, got {radius}")));
        }
        Ok(Self { n_r, radius })
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn pixel_size(&self) -> T {
        T::lit(2.0) * self.radius / T::from_usize_lossy(self.n_r)
    }

    /// Centre coordinate of pixel index `i` along either axis.
    #[inline]
    pub fn center(&self, i: usize) -> T {
        -self.radius + (T::from_usize_lossy(i) + T::lit(0.5)) * self.pixel_size()
    }

    /// Whether pixel `(row, col)` lies strictly inside the detection circle.
    #[inline]
    pub fn inside(&self, row: usize, col: usize) -> bool {
        let x = self.center(col);
        let y = self.center(row);
        x * x + y * y < self.radius * self.radius
    }
}

/// Initial pressure `u` sampled at pixel centres; `values[[row, col]]` sits at `(x_col, y_row)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceImage<T> {
    grid: ImageGrid<T>,
    values: Array2<T>,
}

impl<T: Real> SourceImage<T> {
    /// Wraps `values`, rejecting wrong shapes and any mass on or outside the detection circle.
    pub fn new(grid: ImageGrid<T>, values: Array2<T>) -> Result<Self> {
        let n = grid.n_r();
        if values.dim() != (n, n) {
            return Err(invalid(format!(
                "image values have shape {:?}, grid expects ({n}, {n})",
                values.dim()
            )));
        }
        for ((row, col), v) in values.indexed_iter() {
            if *v != T::zero() && !grid.inside(row, col) {
                return Err(invalid(format!(
                    "pixel ({row}, {col}) lies outside the detection circle but holds {v}"
                )));
            }
        }
        Ok(Self { grid, values })
    }

    /// Like [`SourceImage::new`] but zeroes everything outside the circle instead of failing.
    pub fn masked(grid: ImageGrid<T>, mut values: Array2<T>) -> Result<Self> {
        let n = grid.n_r();
        if values.dim() != (n, n) {
            return Err(invalid(format!(
                "image values have shape {:?}, grid expects ({n}, {n})",
                values.dim()
            )));
        }
        for ((row, col), v) in values.indexed_iter_mut() {
            if !grid.inside(row, col) {
                *v = T::zero();
            }
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: ImageGrid<T>) -> Self {
        let n = grid.n_r();
        Self {
            grid,
            values: Array2::zeros((n, n)),
        }
    }

    pub fn grid(&self) -> &ImageGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    /// Bilinear interpolation at `(x, y)`; samples outside the pixel lattice count as zero.
    #[inline]
    pub fn sample(&self, x: T, y: T) -> T {
        let n = self.grid.n_r();
        let inv = T::one() / self.grid.pixel_size();
        let fx = (x + self.grid.radius()) * inv - T::lit(0.5);
        let fy = (y + self.grid.radius()) * inv - T::lit(0.5);
        let lim = T::from_usize_lossy(n);
        if !(fx > -T::one() && fy > -T::one() && fx < lim && fy < lim) {
            return T::zero();
        }
        let x0 = fx.floor();
        let y0 = fy.floor();
        let wx = fx - x0;
        let wy = fy - y0;
        let (c0, r0) = (x0.to_isize().unwrap_or(-2), y0.to_isize().unwrap_or(-2));
        let at = |r: isize, c: isize| -> T {
            if r < 0 || c < 0 || r >= n as isize || c >= n as isize {
                T::zero()
            } else {
                self.values[[r as usize, c as usize]]
            }
        };
        let one = T::one();
        (one - wy) * ((one - wx) * at(r0, c0) + wx * at(r0, c0 + 1))
            + wy * ((one - wx) * at(r0 + 1, c0) + wx * at(r0 + 1, c0 + 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscProfile {
    /// Constant amplitude inside the disc.
    Uniform,
    /// `amplitude / sqrt(a² - ρ²)`, whose integral along every chord equals `π · amplitude`.
    InverseSqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscSpec<T> {
    pub center: [T; 2],
    pub radius: T,
    pub amplitude: T,
    pub profile: DiscProfile,
}

impl<T: Real> DiscSpec<T> {
    pub fn uniform(center: [T; 2], radius: T, amplitude: T) -> Self {
        Self {
            center,
            radius,
            amplitude,
            profile: DiscProfile::Uniform,
        }
    }

    pub fn inverse_sqrt(center: [T; 2], radius: T, amplitude: T) -> Self {
        Self {
            center,
            radius,
            amplitude,
            profile: DiscProfile::InverseSqrt,
        }
    }

    /// Profile value at distance `rho` from the centre.
    pub fn value_at(&self, rho: T) -> T {
        let a = self.radius;
        if rho >= a {
            return T::zero();
        }
        match self.profile {
            DiscProfile::Uniform => self.amplitude,
            DiscProfile::InverseSqrt => {
                let clip = a * (T::one() - T::lit(INVERSE_SQRT_CLIP));
                let r = rho.min(clip);
                self.amplitude / (a * a - r * r).sqrt()
            }
        }
    }

    fn validate(&self, detection_radius: T) -> Result<()> {
        let [cx, cy] = self.center;
        if !(self.radius > T::zero()) {
            return Err(invalid(format!("disc radius must be positive, got {}", self.radius)));
        }
        if !((cx * cx + cy * cy).sqrt() + self.radius < detection_radius) {
            return Err(invalid(format!(
                "disc at ({cx}, {cy}) with radius {} is not inside the detection circle of radius {detection_radius}",
                self.radius
            )));
        }
        Ok(())
    }
}

/// Superposes the discs on `grid`, sampling each profile at pixel centres.
pub fn make_disc_phantom<T: Real>(grid: ImageGrid<T>, discs: &[DiscSpec<T>]) -> Result<SourceImage<T>> {
    make_disc_phantom_averaged(grid, discs, 1)
}

/// Like [`make_disc_phantom`], but each pixel holds the mean of the profile
/// over a `sub x sub` lattice inside the cell.
pub fn make_disc_phantom_averaged<T: Real>(
    grid: ImageGrid<T>,
    discs: &[DiscSpec<T>],
    sub: usize,
) -> Result<SourceImage<T>> {
    if sub == 0 {
        return Err(invalid("supersampling factor must be at least 1"));
    }
    for d in discs {
        d.validate(grid.radius())?;
    }
    let n = grid.n_r();
    let px = grid.pixel_size();
    let offsets: Vec<T> = (0..sub)
        .map(|k| px * T::lit((k as f64 + 0.5) / sub as f64 - 0.5))
        .collect();
    let norm = T::lit((sub * sub) as f64);
    let values = Array2::from_shape_fn((n, n), |(row, col)| {
        let (xc, yc) = (grid.center(col), grid.center(row));
        let mut acc = T::zero();
        for &oy in &offsets {
            for &ox in &offsets {
                let (x, y) = (xc + ox, yc + oy);
                for d in discs {
                    let dx = x - d.center[0];
                    let dy = y - d.center[1];
                    acc += d.value_at((dx * dx + dy * dy).sqrt());
                }
            }
        }
        acc / norm
    });
    SourceImage::new(grid, values)
}
