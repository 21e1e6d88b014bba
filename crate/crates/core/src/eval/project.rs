use crate::error::{Error, Result};

/// Power-iteration steps per component.
pub const POWER_ITERS: usize = 500;

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Flips `v` so that its largest-magnitude component is positive.
fn fix_sign(v: &mut [f64]) {
    let big = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top principal direction of covariance `c` (d×d) orthogonal to `against`.
fn power(c: &[f64], d: usize, against: Option<&[f64]>) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
    let project_out = |v: &mut Vec<f64>| {
        if let Some(u) = against {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
    };
    project_out(&mut v);
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let mut w: Vec<f64> = (0..d).map(|r| c[r * d..(r + 1) * d].iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        project_out(&mut w);
        lambda = normalize(&mut w);
        if lambda == 0.0 {
            break;
        }
        v = w;
    }
    fix_sign(&mut v);
    (v, lambda)
}

/// Projects onto the top two principal components of the mean-centered
/// points. Fixed initial vector, fixed iteration count and a sign
/// convention make the result deterministic.
pub fn project_2d<L: Clone>(points: &[Vec<f64>], labels: &[L]) -> Result<Vec<(f64, f64, L)>> {
    if points.len() < 3 {
        return Err(Error::invalid("projection needs at least three points"));
    }
    if labels.len() != points.len() {
        return Err(Error::invalid("one label per point is required"));
    }
    let d = points[0].len();
    if d < 2 || points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("points must share a dimension of at least 2"));
    }
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let mut c = vec![0.0; d * d];
    for p in &centered {
        for r in 0..d {
            for k in 0..d {
                c[r * d + k] += p[r] * p[k];
            }
        }
    }
    c.iter_mut().for_each(|v| *v /= n);
    let trace: f64 = (0..d).map(|k| c[k * d + k]).sum();
    let (v1, l1) = power(&c, d, None);
    let (v2, l2) = power(&c, d, Some(&v1));
    let tol = 1e-12 * trace.max(f64::MIN_POSITIVE);
    if !(l1 > tol && l2 > tol) {
        return Err(Error::DegenerateData("embeddings span fewer than two dimensions".into()));
    }
    Ok(centered
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let x = p.iter().zip(&v1).map(|(a, b)| a * b).sum();
            let y = p.iter().zip(&v2).map(|(a, b)| a * b).sum();
            (x, y, l.clone())
        })
        .collect())
}
