use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::rng::stream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub label: String,
}

impl ProjectedPoint {
    pub fn write_csv(points: &[ProjectedPoint], out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "label"])?;
        for p in points {
            w.write_record([p.x.to_string(), p.y.to_string(), p.label.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

const MAX_ITERS: usize = 10_000;

fn mat_vec(cov: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    cov.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
}

/// Power iteration for the leading eigenvector orthogonal to `basis`.
/// The sign is fixed so the largest-magnitude entry is positive.
fn leading_axis(cov: &[Vec<f64>], basis: &[Vec<f64>], start: Vec<f64>) -> Vec<f64> {
    let mut v = start;
    orthogonalize(&mut v, basis);
    normalize(&mut v);
    for _ in 0..MAX_ITERS {
        let mut next = mat_vec(cov, &v);
        orthogonalize(&mut next, basis);
        if normalize(&mut next) == 0.0 {
            // Covariance vanishes on this subspace; any unit vector will do.
            break;
        }
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if delta < 1e-13 {
            break;
        }
    }
    let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Projects centered vectors onto their top two principal axes.
pub fn project_latents(points: &[Vec<f64>], labels: &[String], seed: u64) -> Result<Vec<ProjectedPoint>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientSamples(format!("projection needs 2 vectors, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::ShapeError(format!("{} labels for {n} vectors", labels.len())));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::ShapeError("vectors must share a non-zero dimension".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for p in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += p[i] * p[j] / n as f64;
            }
        }
    }
    let mut rng = stream(seed, "pca");
    let mut start = || (0..d).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
    let first = leading_axis(&cov, &[], start());
    let second = if d > 1 {
        leading_axis(&cov, std::slice::from_ref(&first), start())
    } else {
        vec![0.0]
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Ok(centered
        .iter()
        .zip(labels)
        .map(|(p, l)| ProjectedPoint {
            x: dot(p, &first),
            y: dot(p, &second),
            label: l.clone(),
        })
        .collect())
}
