//! Greedy covering selection of basis centers, at one radius and over a
//! geometric ladder of scales.

use rand::Rng;

use crate::dataset::Points;
use crate::{Error, Result};

/// Scale ladder `h_s = h1 * beta^(s-1)`, `s = 1..=n_scales`, with cluster
/// radius `gamma * h_s` at each rung.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleConfig {
    pub h1: f64,
    pub beta: f64,
    pub n_scales: usize,
    pub gamma: f64,
}

impl ScaleConfig {
    pub fn new(h1: f64, beta: f64, n_scales: usize, gamma: f64) -> Result<Self> {
        let cfg = Self {
            h1,
            beta,
            n_scales,
            gamma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h1 > 0.0 && self.h1.is_finite()) {
            return Err(Error::invalid(format!("h1 must be positive, got {}", self.h1)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid(format!("beta must lie in (0,1), got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.n_scales == 0 {
            return Err(Error::invalid("at least one scale is required"));
        }
        Ok(())
    }

    /// Width of scale `s` (1-based).
    pub fn scale(&self, s: usize) -> f64 {
        self.h1 * self.beta.powi(s as i32 - 1)
    }

    /// Cluster radius at scale `s` (1-based).
    pub fn radius(&self, s: usize) -> f64 {
        self.gamma * self.scale(s)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of one covering pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleScaleClusters {
    /// Point indices chosen as centers, in selection order.
    pub centers: Vec<usize>,
    /// `(point index, center ordinal)` for every input candidate, in absorption order.
    pub assignment: Vec<(usize, usize)>,
}

impl SingleScaleClusters {
    pub fn count(&self) -> usize {
        self.centers.len()
    }
}

/// Covers `candidates` (indices into `points`) with balls of radius `radius`.
///
/// Repeatedly picks a uniformly random remaining point as a center and absorbs
/// every remaining point within distance `<= radius` of it.
pub fn cluster_single_scale<R: Rng + ?Sized>(
    points: Points<'_>,
    candidates: &[usize],
    radius: f64,
    rng: &mut R,
) -> Result<SingleScaleClusters> {
    if candidates.is_empty() {
        return Err(Error::invalid("cannot cluster an empty point set"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("cluster radius must be positive, got {radius}")));
    }
    let r2 = radius * radius;
    let mut remaining = candidates.to_vec();
    let mut centers = Vec::new();
    let mut assignment = Vec::with_capacity(candidates.len());
    while !remaining.is_empty() {
        let pick = rng.random_range(0..remaining.len());
        let center = remaining[pick];
        let ordinal = centers.len();
        centers.push(center);
        let c = points.get(center);
        remaining.retain(|&i| {
            if sq_dist(points.get(i), c) <= r2 {
                assignment.push((i, ordinal));
                false
            } else {
                true
            }
        });
    }
    Ok(SingleScaleClusters {
        centers,
        assignment,
    })
}

/// A selected basis center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Center {
    /// Row of the training set the center was copied from.
    pub row: usize,
    /// 1-based scale index.
    pub scale: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Centers ordered by scale, then by selection order within a scale.
    pub centers: Vec<Center>,
    /// `k_s` for `s = 1..=S`.
    pub per_scale_counts: Vec<usize>,
    /// `(point row, center row)` pairs produced at each scale.
    pub assignments: Vec<Vec<(usize, usize)>>,
}

impl ClusterResult {
    /// Number of basis functions `D`.
    pub fn total(&self) -> usize {
        self.centers.len()
    }

    pub fn centers_at(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.centers.iter().filter(move |c| c.scale == s).map(|c| c.row)
    }
}

/// Hierarchical selection: cover the remaining set at each scale, then remove
/// only that scale's centers before moving to the next (finer) scale.
pub fn cluster_multiscale<R: Rng + ?Sized>(
    points: Points<'_>,
    cfg: &ScaleConfig,
    rng: &mut R,
) -> Result<ClusterResult> {
    if points.is_empty() {
        return Err(Error::invalid("cannot cluster an empty point set"));
    }
    cfg.validate()?;
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut centers = Vec::new();
    let mut per_scale_counts = Vec::with_capacity(cfg.n_scales);
    let mut assignments = Vec::with_capacity(cfg.n_scales);
    for s in 1..=cfg.n_scales {
        if remaining.is_empty() {
            per_scale_counts.push(0);
            assignments.push(Vec::new());
            continue;
        }
        let pass = cluster_single_scale(points, &remaining, cfg.radius(s), rng)?;
        let mut is_center = vec![false; points.len()];
        for &c in &pass.centers {
            is_center[c] = true;
            centers.push(Center { row: c, scale: s });
        }
        remaining.retain(|&i| !is_center[i]);
        per_scale_counts.push(pass.count());
        assignments.push(
            pass.assignment
                .iter()
                .map(|&(p, k)| (p, pass.centers[k]))
                .collect(),
        );
    }
    Ok(ClusterResult {
        centers,
        per_scale_counts,
        assignments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleCoverage {
    pub radius: f64,
    /// Largest distance from an absorbed point to its center (0 if the scale is empty).
    pub max_distance: f64,
    /// Smallest pairwise distance between this scale's centers (∞ for fewer than two).
    pub min_separation: f64,
}

impl ScaleCoverage {
    pub fn covered(&self) -> bool {
        self.max_distance <= self.radius
    }

    pub fn separated(&self) -> bool {
        self.min_separation > self.radius
    }
}

/// Per-scale coverage radius and center separation of a clustering.
pub fn coverage_report(points: Points<'_>, result: &ClusterResult, cfg: &ScaleConfig) -> Vec<ScaleCoverage> {
    (1..=cfg.n_scales)
        .map(|s| {
            let max_distance = result
                .assignments
                .get(s - 1)
                .map(|a| {
                    a.iter()
                        .map(|&(p, c)| sq_dist(points.get(p), points.get(c)).sqrt())
                        .fold(0.0, f64::max)
                })
                .unwrap_or(0.0);
            let rows: Vec<usize> = result.centers_at(s).collect();
            let mut min_separation = f64::INFINITY;
            for (i, &a) in rows.iter().enumerate() {
                for &b in &rows[i + 1..] {
                    min_separation = min_separation.min(sq_dist(points.get(a), points.get(b)).sqrt());
                }
            }
            ScaleCoverage {
                radius: cfg.radius(s),
                max_distance,
                min_separation,
            }
        })
        .collect()
}

/// Smallest pairwise Euclidean distance in the set (∞ for fewer than two points).
pub fn min_pairwise_distance(points: Points<'_>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(sq_dist(points.get(i), points.get(j)));
        }
    }
    best.sqrt()
}
