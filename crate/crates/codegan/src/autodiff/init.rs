use super::value::{Tensor, Value};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Uniform bound a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Parameter with entries i.i.d. uniform on [-a, a]; deterministic given
/// the generator state.
pub fn xavier_uniform_init(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut SeededRng,
) -> Result<Value> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Domain {
            op: "xavier_uniform_init",
            detail: format!("zero fan (fan_in={fan_in}, fan_out={fan_out})"),
        });
    }
    let a = xavier_bound(fan_in, fan_out) as f32;
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.uniform_f32(-a, a)).collect();
    Ok(Value::parameter(Tensor::new(data, shape.to_vec())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_for_equal_fans_of_three_is_one() {
        assert!((xavier_bound(3, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_matches_direct_formula() {
        // sqrt(6/300) = sqrt(0.02)
        let a = xavier_bound(100, 200);
        assert!((a - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((a - 0.141_421_4).abs() < 1e-7);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut r1 = SeededRng::new(11);
        let mut r2 = SeededRng::new(11);
        let a = xavier_uniform_init(&[4, 5], 5, 4, &mut r1).unwrap();
        let b = xavier_uniform_init(&[4, 5], 5, 4, &mut r2).unwrap();
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn entries_stay_within_bound() {
        let mut rng = SeededRng::new(5);
        let v = xavier_uniform_init(&[50, 20], 20, 50, &mut rng).unwrap();
        let a = xavier_bound(20, 50) as f32;
        assert!(v.data().iter().all(|x| x.abs() <= a));
    }

    #[test]
    fn zero_fan_rejected() {
        let mut rng = SeededRng::new(5);
        assert!(xavier_uniform_init(&[1], 0, 3, &mut rng).is_err());
    }
}
