//! Mean/variance normalization of single vectors.
//!
//! `normalize_vector(v) = (v - mean(v)) / (population_std(v) + NORM_EPS)`.
//! Constant vectors come out as exactly zero. The companion backward is
//! used where the normalization sits inside a differentiated path.

pub const NORM_EPS: f64 = 1e-8;

pub fn normalize_vector(v: &[f64]) -> Vec<f64> {
    assert!(v.len() >= 2, "normalization needs at least two components");
    let d = v.len() as f64;
    let mean = v.iter().sum::<f64>() / d;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    let denom = var.sqrt() + NORM_EPS;
    v.iter().map(|x| (x - mean) / denom).collect()
}

/// Gradient of a scalar loss with respect to `v`, given the gradient
/// `d_out` with respect to `normalize_vector(v)`.
///
/// At exactly zero variance the map is flat by convention (the forward
/// output is pinned to zero there) and the gradient is zero.
pub fn normalize_backward(v: &[f64], d_out: &[f64]) -> Vec<f64> {
    assert_eq!(v.len(), d_out.len(), "gradient length");
    let d = v.len() as f64;
    let mean = v.iter().sum::<f64>() / d;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let var = c.iter().map(|x| x * x).sum::<f64>() / d;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return vec![0.0; v.len()];
    }
    let denom = sigma + NORM_EPS;
    let cg: f64 = c.iter().zip(d_out).map(|(a, b)| a * b).sum();
    // d/dc of c/(sigma(c) + eps), with sigma = sqrt(mean(c^2))
    let dc: Vec<f64> = c
        .iter()
        .zip(d_out)
        .map(|(&ci, &gi)| gi / denom - ci * cg / (d * sigma * denom * denom))
        .collect();
    let dc_mean = dc.iter().sum::<f64>() / d;
    dc.iter().map(|x| x - dc_mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_vector_maps_to_zero() {
        assert_eq!(normalize_vector(&[1.0, 1.0, 1.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn symmetric_pair_is_nearly_fixed() {
        let out = normalize_vector(&[1.0, -1.0]);
        assert!((out[0] - 1.0).abs() < 1e-7);
        assert!((out[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn shift_cancels() {
        let v = [0.3, -1.7, 2.2, 0.05];
        let shifted: Vec<f64> = v.iter().map(|x| x + 123.456).collect();
        let a = normalize_vector(&v);
        let b = normalize_vector(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn output_is_centered_with_near_unit_std() {
        let v = [4.0, -2.5, 0.0, 7.75, 3.1];
        let out = normalize_vector(&v);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        let var = out.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / out.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_matches_central_differences() {
        let v = vec![0.9, -0.4, 1.7, 0.2, -1.1];
        let w = vec![0.5, 1.0, -0.7, 0.3, 0.8]; // loss = w . normalize(v)
        let analytic = normalize_backward(&v, &w);
        let h = 1e-6;
        for i in 0..v.len() {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[i] += h;
            vm[i] -= h;
            let lp: f64 = normalize_vector(&vp).iter().zip(&w).map(|(a, b)| a * b).sum();
            let lm: f64 = normalize_vector(&vm).iter().zip(&w).map(|(a, b)| a * b).sum();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-5) < 1e-5,
                "coord {i}: fd {fd}, analytic {}",
                analytic[i]
            );
        }
    }
}
