//! Error metrics.

use ndarray::{ArrayBase, ArrayView, Data, Dimension};

use crate::error::{invalid, Result};
use crate::scalar::Real;

pub fn frobenius<T: Real, D: Dimension>(a: ArrayView<T, D>) -> T {
    a.iter().map(|v| *v * *v).fold(T::zero(), |acc, v| acc + v).sqrt()
}

/// `‖a - b‖₂ / ‖b‖₂` over all entries.
pub fn relative_l2<T, S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> Result<T>
where
    T: Real,
    S1: Data<Elem = T>,
    S2: Data<Elem = T>,
    D: Dimension,
{
    if a.shape() != b.shape() {
        return Err(invalid(format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let reference = frobenius(b.view());
    if reference == T::zero() {
        return Err(invalid("relative error against an all-zero reference"));
    }
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt();
    Ok(diff / reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn identical_arrays() {
        let b = array![1.0, -2.0, 3.0];
        assert_eq!(relative_l2(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn doubled_array_has_unit_error() {
        let b = array![[1.0, -2.0], [0.5, 4.0]];
        let a = &b * 2.0;
        let e: f64 = relative_l2(&a, &b).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prescribed_perturbation() {
        let b = array![3.0, 4.0, 0.0, 12.0];
        let e = array![1.0, -1.0, 2.0, 0.5];
        let e: Array1<f64> = &e * (0.0901 * 13.0 / frobenius(e.view()));
        let a = &b + &e;
        assert!((relative_l2(&a, &b).unwrap() - 0.0901).abs() < 1e-14);
    }

    #[test]
    fn rejects_zero_reference_and_shape_mismatch() {
        let z = Array1::<f64>::zeros(3);
        assert!(relative_l2(&array![1.0, 0.0, 0.0], &z).is_err());
        assert!(relative_l2(&array![1.0, 0.0], &array![1.0, 0.0, 0.0]).is_err());
    }
}
