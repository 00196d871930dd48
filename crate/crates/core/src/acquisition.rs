//! Compressed data `Y = A P` and the measurement noise model.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::csdesign::StructuredCsMatrix;
use crate::error::{invalid, Error, Result};
use crate::geometry::TimeGrid;
use crate::metrics::frobenius;
use crate::scalar::Real;
use crate::wave::{SensorSeries, TemporalTransform};

/// Compressed measurements: one row per measurement channel, one column per time sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CsData<T> {
    matrix_ref: String,
    times: TimeGrid<T>,
    values: Array2<T>,
}

impl<T: Real> CsData<T> {
    pub fn new(matrix_ref: impl Into<String>, times: TimeGrid<T>, values: Array2<T>) -> Result<Self> {
        if values.ncols() != times.q() {
            return Err(Error::DimensionMismatch {
                what: "time samples",
                expected: times.q(),
                actual: values.ncols(),
            });
        }
        Ok(Self {
            matrix_ref: matrix_ref.into(),
            times,
            values,
        })
    }

    /// Identifier of the measurement matrix (typically its file name).
    pub fn matrix_ref(&self) -> &str {
        &self.matrix_ref
    }

    pub fn times(&self) -> &TimeGrid<T> {
        &self.times
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    /// Applies the temporal transform to every measurement row; since `A`
    /// acts on sensors only, this equals measuring the transformed pressure.
    pub fn transformed(&self) -> Result<Self> {
        let values = TemporalTransform::new(&self.times).forward(&self.values)?;
        Ok(Self {
            matrix_ref: self.matrix_ref.clone(),
            times: self.times.clone(),
            values,
        })
    }
}

/// `A · values`, acting on the sensor index only.
pub fn apply_matrix<T: Real>(a: &StructuredCsMatrix, rows: &Array2<T>) -> Result<Array2<T>> {
    if a.cols() != rows.nrows() {
        return Err(Error::DimensionMismatch {
            what: "matrix columns vs sensor rows",
            expected: a.cols(),
            actual: rows.nrows(),
        });
    }
    Ok(a.to_real::<T>().dot(rows))
}

/// Records compressed data `Y = A P` from pressure or means data.
pub fn apply_cs<T: Real, S: SensorSeries<T>>(
    a: &StructuredCsMatrix,
    data: &S,
    matrix_ref: impl Into<String>,
) -> Result<CsData<T>> {
    let values = apply_matrix(a, data.values())?;
    CsData::new(matrix_ref, data.times().clone(), values)
}

/// Adds white Gaussian noise rescaled so that `‖noise‖ / ‖Y‖` equals `level`.
pub fn add_noise<T: Real>(y: &CsData<T>, level: T, seed: u64) -> Result<CsData<T>> {
    if !(level >= T::zero()) {
        return Err(invalid(format!("noise level must be nonnegative, got {level}")));
    }
    if level == T::zero() {
        return Ok(y.clone());
    }
    let norm = frobenius(y.values.view());
    if norm == T::zero() {
        return Err(invalid("cannot scale noise relative to all-zero data"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Array2<f64> = Array2::from_shape_simple_fn(y.values.raw_dim(), || StandardNormal.sample(&mut rng));
    let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = level.as_f64() * norm.as_f64() / raw_norm;
    let values = &y.values + &raw.mapv(|v| T::lit(v * scale));
    Ok(CsData {
        matrix_ref: y.matrix_ref.clone(),
        times: y.times.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csdesign::{assemble_block_diagonal, make_cs_matrix, sample_selection_list_seeded, SelectionList, StructureSpec};
    use crate::geometry::make_sensor_geometry;
    use crate::metrics::relative_l2;
    use crate::wave::{apply_t, PressureData};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use std::f64::consts::TAU;

    fn random_pressure(n: usize, q: usize, seed: u64) -> PressureData<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = make_sensor_geometry(n, 1.0, TAU).unwrap();
        let times = TimeGrid::new(q, 1.0).unwrap();
        PressureData::new(geom, times, Array2::from_shape_fn((n, q), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn papi(m0: usize, seed: u64) -> StructuredCsMatrix {
        let spec = StructureSpec::papi(m0);
        let groups: Vec<_> = (0..4)
            .map(|g| make_cs_matrix(&sample_selection_list_seeded(&spec, seed + g), &spec).unwrap())
            .collect();
        assemble_block_diagonal(&groups).unwrap()
    }

    fn identity_assembly() -> StructuredCsMatrix {
        let spec = StructureSpec::papi(16);
        let rows: Vec<Vec<u8>> = (0..16)
            .map(|i| {
                let mut r = vec![0u8; 4];
                r[i / 4] = (i % 4 + 1) as u8;
                r
            })
            .collect();
        let g = make_cs_matrix(&SelectionList::new(rows), &spec).unwrap();
        assemble_block_diagonal(&vec![g; 4]).unwrap()
    }

    #[test]
    fn identity_measurement_returns_the_data() {
        let p = random_pressure(64, 20, 1);
        let y = apply_cs(&identity_assembly(), &p, "eye").unwrap();
        assert_eq!(y.values(), p.values());
        assert_eq!(y.matrix_ref(), "eye");
    }

    #[test]
    fn example_row_sums_three_sensors() {
        let spec = StructureSpec::papi(1);
        let a = make_cs_matrix(&SelectionList::new(vec![vec![1, 0, 1, 2]]), &spec).unwrap();
        let p = random_pressure(16, 10, 2);
        let y = apply_cs(&a, &p, "row").unwrap();
        // sensors 1, 9 and 14 counted from one
        let expected = &(&p.values().row(0) + &p.values().row(8)) + &p.values().row(13);
        assert_abs_diff_eq!(y.values().row(0), expected.view(), epsilon = 1e-15);
    }

    #[test]
    fn measurement_commutes_with_the_temporal_transform() {
        let a = papi(12, 3);
        let p = random_pressure(64, 128, 3);
        let lhs = apply_cs(&a, &apply_t(&p), "a").unwrap();
        let rhs = apply_cs(&a, &p, "a").unwrap().transformed().unwrap();
        assert!(relative_l2(rhs.values(), lhs.values()).unwrap() <= 1e-12);
    }

    #[test]
    fn measurement_is_linear() {
        let a = papi(12, 4);
        let (p1, p2) = (random_pressure(64, 16, 5), random_pressure(64, 16, 6));
        let sum = PressureData::new(p1.geometry().clone(), p1.times().clone(), p1.values() + p2.values() * 3.0).unwrap();
        let y1 = apply_cs(&a, &p1, "a").unwrap();
        let y2 = apply_cs(&a, &p2, "a").unwrap();
        let ys = apply_cs(&a, &sum, "a").unwrap();
        assert_abs_diff_eq!(*ys.values(), y1.values() + y2.values() * 3.0, epsilon = 1e-12);
    }

    #[test]
    fn groups_only_see_their_own_sensors() {
        let a = papi(12, 7);
        let p = random_pressure(64, 16, 8);
        let mut bumped = p.values().clone();
        bumped.slice_mut(ndarray::s![32..48, ..]).mapv_inplace(|v| v + 1.0);
        let q = PressureData::new(p.geometry().clone(), p.times().clone(), bumped).unwrap();
        let (y, z) = (apply_cs(&a, &p, "a").unwrap(), apply_cs(&a, &q, "a").unwrap());
        for r in 0..48 {
            if !(24..36).contains(&r) {
                assert_eq!(y.values().row(r), z.values().row(r));
            }
        }
    }

    #[test]
    fn mismatched_sensor_count_is_rejected() {
        let a = papi(12, 1);
        let p = random_pressure(32, 8, 1);
        assert!(matches!(apply_cs(&a, &p, "a"), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn noise_hits_the_requested_level_exactly() {
        let a = papi(12, 9);
        let y = apply_cs(&a, &random_pressure(64, 32, 9), "a").unwrap();
        assert_eq!(add_noise(&y, 0.0, 1).unwrap(), y);
        let n1 = add_noise(&y, 0.0901, 1).unwrap();
        let n2 = add_noise(&y, 0.0901, 2).unwrap();
        assert_abs_diff_eq!(relative_l2(n1.values(), y.values()).unwrap(), 0.0901, epsilon = 1e-12);
        assert_abs_diff_eq!(relative_l2(n2.values(), y.values()).unwrap(), 0.0901, epsilon = 1e-12);
        assert_ne!(n1.values(), n2.values());
        assert_eq!(add_noise(&y, 0.0901, 1).unwrap(), n1);
    }

    #[test]
    fn noise_preconditions() {
        let times = TimeGrid::new(4, 1.0).unwrap();
        let zero = CsData::new("z", times.clone(), Array2::zeros((3, 4))).unwrap();
        assert!(add_noise(&zero, 0.1, 1).is_err());
        assert_eq!(add_noise(&zero, 0.0, 1).unwrap(), zero);
        let one = CsData::new("o", times, Array2::ones((3, 4))).unwrap();
        assert!(add_noise(&one, -0.1, 1).is_err());
        assert!(CsData::new("bad", TimeGrid::new(5, 1.0).unwrap(), Array2::<f64>::zeros((3, 4))).is_err());
    }
}
