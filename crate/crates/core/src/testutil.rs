pub use crate::sampling::random_field;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn central_difference_gradient(f: impl Fn(&[f64]) -> f64, u: &[f64], step: f64) -> Vec<f64> {
    let mut x = u.to_vec();
    (0..u.len())
        .map(|i| {
            let h = step * u[i].abs().max(1.0);
            x[i] = u[i] + h;
            let plus = f(&x);
            x[i] = u[i] - h;
            let minus = f(&x);
            x[i] = u[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}
