//! Fader sweeps and the consistency, restrictiveness and linearity scores.

mod cluster;
mod project;
mod sweep;

pub use cluster::{classify_arousal, cluster_accuracy};
pub use project::{project_latents, ProjectedPoint};
pub use sweep::{evaluate, fader_sweep, Controllable, EvalOptions, EvalReport, FeatureScores, IdentityStub, SweepResult};

use crate::error::{Error, Result};
use crate::labels::Feature;

/// Note density is divided by this before entering the spread-based scores.
pub const NOTE_DENSITY_SCALE: f64 = 16.0;

/// `min + (t / T)(max - min)` for `t = 1..=T`.
pub fn slide_values(z_min: f64, z_max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::InvalidSweep(format!("need at least 2 steps, got {steps}")));
    }
    if z_min.partial_cmp(&z_max).is_none_or(|o| o == std::cmp::Ordering::Greater) {
        return Err(Error::InvalidSweep(format!("min {z_min} exceeds max {z_max}")));
    }
    let span = z_max - z_min;
    Ok((1..=steps)
        .map(|t| {
            if t == steps {
                z_max
            } else {
                z_min + (t as f64 / steps as f64) * span
            }
        })
        .collect())
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn check_rect(values: &[Vec<f64>]) -> Result<(usize, usize)> {
    let m = values.len();
    let t = values.first().map_or(0, Vec::len);
    if values.iter().any(|row| row.len() != t) {
        return Err(Error::ShapeError("ragged score matrix".into()));
    }
    Ok((m, t))
}

/// `1 - mean_t std_m values[m][t]` (population std).
pub fn consistency_score(values: &[Vec<f64>]) -> Result<f64> {
    let (m, t) = check_rect(values)?;
    if m < 2 {
        return Err(Error::InsufficientSamples(format!("consistency needs M >= 2, got {m}")));
    }
    if t == 0 {
        return Err(Error::InsufficientSamples("consistency needs at least one step".into()));
    }
    let spread: f64 = (0..t).map(|j| population_std(values.iter().map(move |row| row[j]))).sum();
    Ok(1.0 - spread / t as f64)
}

/// `1 - mean_m std_t values[m][t]` (population std).
pub fn restrictiveness_score(values: &[Vec<f64>]) -> Result<f64> {
    let (m, t) = check_rect(values)?;
    if t < 2 {
        return Err(Error::InsufficientSamples(format!("restrictiveness needs T >= 2, got {t}")));
    }
    if m == 0 {
        return Err(Error::InsufficientSamples("restrictiveness needs at least one sample".into()));
    }
    let spread: f64 = values.iter().map(|row| population_std(row.iter().copied())).sum();
    Ok(1.0 - spread / m as f64)
}

/// R^2 of the least-squares line through all `(x, y)` pairs; 0 when `y`
/// has no variance.
pub fn linearity_score(pairs: &[(f64, f64)]) -> Result<f64> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::InsufficientSamples(format!("linearity needs 3 pairs, got {n}")));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let ss_tot: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if ss_tot < 1e-12 {
        return Ok(0.0);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = pairs.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Density normalized onto `[0, 1]` for the spread-based scores.
pub fn normalized_density(feature: Feature, raw: f64) -> f64 {
    match feature {
        Feature::Rhythm => raw,
        Feature::Note => raw / NOTE_DENSITY_SCALE,
    }
}
