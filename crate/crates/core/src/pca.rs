//! Principal components of the q population and the ear/line selectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `n × dims`, orthonormal columns ordered by decreasing variance.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    /// Fraction of the total variance carried by each component.
    pub explained_variance_fractions: Vec<f64>,
    pub total_variance: f64,
    /// Numerical rank of the centered data.
    pub rank: usize,
    /// `points × dims` coordinates of the centered input.
    pub projections: DMatrix<f64>,
}

/// Top `dims` right singular directions of the mean-centered point matrix.
///
/// Each component is signed so its largest-magnitude entry is positive. A
/// rank below `dims` is reported through [`Pca::rank`], not as an error.
pub fn pca(points: &[DVector<f64>], dims: usize) -> Result<Pca> {
    if dims == 0 {
        return Err(Error::Config("pca needs at least one component".into()));
    }
    let m = points.len();
    if m < dims + 1 {
        return Err(Error::InsufficientPoints { needed: dims + 1, got: m });
    }
    let n = points[0].len();
    if dims > n {
        return Err(Error::Config(format!("cannot extract {dims} components from dimension {n}")));
    }
    for p in points {
        check_dim(n, p.len())?;
    }
    let mut mean = DVector::zeros(n);
    for p in points {
        mean += p;
    }
    mean /= m as f64;
    let x = DMatrix::from_fn(m, n, |i, j| points[i][j] - mean[j]);

    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let denom = (m - 1) as f64;
    let total_variance = x.norm_squared() / denom;
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax.max(f64::MIN_POSITIVE)).count();

    let mut components = DMatrix::zeros(n, dims);
    let mut explained_variance = Vec::with_capacity(dims);
    for (k, &i) in order.iter().take(dims).enumerate() {
        let mut c = vt.row(i).transpose();
        let lead = c.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if lead < 0.0 {
            c.neg_mut();
        }
        components.set_column(k, &c);
        explained_variance.push(svd.singular_values[i].powi(2) / denom);
    }
    // Fewer singular values than requested components (m − 1 < n) pads with zero.
    let explained_variance_fractions =
        explained_variance.iter().map(|v| if total_variance > 0.0 { v / total_variance } else { 0.0 }).collect();
    let projections = &x * &components;
    Ok(Pca { mean, components, explained_variance, explained_variance_fractions, total_variance, rank, projections })
}

impl Pca {
    pub fn dims(&self) -> usize {
        self.components.ncols()
    }

    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.mean.len(), x.len())?;
        Ok(self.components.transpose() * (x - &self.mean))
    }

    pub fn reconstruct(&self, coords: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dims(), coords.len())?;
        Ok(&self.components * coords + &self.mean)
    }

    pub fn top_fraction(&self) -> f64 {
        self.explained_variance_fractions.iter().sum()
    }
}

/// Which continuation a q vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Continuation {
    Greedy,
    Branch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Ear members lie at or beyond this quantile of 2-D radius.
    pub ear_quantile: f64,
    /// Line members lie within this fraction of the cloud scale from the line.
    pub line_distance: f64,
    pub line_refits: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { ear_quantile: 0.90, line_distance: 0.05, line_refits: 5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Clusters {
    pub left_ear: Vec<usize>,
    pub right_ear: Vec<usize>,
    pub greedy_line: Vec<usize>,
    pub branch_line: Vec<usize>,
    pub bulk: Vec<usize>,
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Ears from 2-D projections: radius at or above the quantile, `y > 0`, and
/// `x < 0` (left) or `x > 0` (right).
pub fn select_ears(proj2: &DMatrix<f64>, cfg: &ClusterConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if proj2.ncols() < 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: proj2.ncols() });
    }
    let radii: Vec<f64> = proj2.row_iter().map(|r| (r[0] * r[0] + r[1] * r[1]).sqrt()).collect();
    if radii.is_empty() {
        return Ok(Default::default());
    }
    let cut = quantile(&radii, cfg.ear_quantile);
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for (i, r) in radii.iter().enumerate() {
        let (x, y) = (proj2[(i, 0)], proj2[(i, 1)]);
        if *r < cut || y <= 0.0 || *r == 0.0 {
            continue;
        }
        if x < 0.0 {
            left.push(i);
        } else if x > 0.0 {
            right.push(i);
        }
    }
    Ok((left, right))
}

fn fit_line(points: &[DVector<f64>]) -> Option<(DVector<f64>, DVector<f64>)> {
    if points.len() < 2 {
        return None;
    }
    let d = points[0].len();
    let mut c = DVector::zeros(d);
    for p in points {
        c += p;
    }
    c /= points.len() as f64;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let r = p - &c;
        cov += &r * r.transpose();
    }
    let eig = cov.symmetric_eigen();
    let imax = eig.eigenvalues.imax();
    Some((c, eig.eigenvectors.column(imax).into_owned()))
}

fn line_distance(p: &DVector<f64>, (c, dir): &(DVector<f64>, DVector<f64>)) -> f64 {
    let r = p - c;
    (&r - dir * dir.dot(&r)).norm()
}

/// Lines from 3-D projections: for each continuation, fit a line through its
/// points (skipping `exclude`), keep points within the distance threshold,
/// and refit on the inliers.
pub fn select_lines(
    proj3: &DMatrix<f64>,
    labels: &[Continuation],
    exclude: &[bool],
    cfg: &ClusterConfig,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if proj3.ncols() < 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: proj3.ncols() });
    }
    check_dim(proj3.nrows(), labels.len())?;
    check_dim(proj3.nrows(), exclude.len())?;
    let pts: Vec<DVector<f64>> = proj3.row_iter().map(|r| r.columns(0, 3).transpose()).collect();
    let scale = (pts.iter().map(|p| p.norm_squared()).sum::<f64>() / pts.len().max(1) as f64).sqrt();
    let tol = cfg.line_distance * scale;

    let mut out = [Vec::new(), Vec::new()];
    for (slot, which) in [Continuation::Greedy, Continuation::Branch].into_iter().enumerate() {
        let pool: Vec<usize> = (0..pts.len()).filter(|&i| labels[i] == which && !exclude[i]).collect();
        let mut members = pool.clone();
        for _ in 0..=cfg.line_refits {
            let sel: Vec<DVector<f64>> = members.iter().map(|&i| pts[i].clone()).collect();
            let Some(line) = fit_line(&sel) else {
                members.clear();
                break;
            };
            let next: Vec<usize> = pool.iter().copied().filter(|&i| line_distance(&pts[i], &line) <= tol).collect();
            if next == members {
                break;
            }
            members = next;
        }
        out[slot] = members;
    }
    let [g, b] = out;
    Ok((g, b))
}

/// Ears from the 2-D projection and lines from the 3-D projection of the
/// same population. Everything else is bulk.
pub fn select_clusters(
    proj2: &DMatrix<f64>,
    proj3: &DMatrix<f64>,
    labels: &[Continuation],
    cfg: &ClusterConfig,
) -> Result<Clusters> {
    check_dim(proj2.nrows(), proj3.nrows())?;
    let (left_ear, right_ear) = select_ears(proj2, cfg)?;
    let mut in_ear = vec![false; proj2.nrows()];
    for &i in left_ear.iter().chain(&right_ear) {
        in_ear[i] = true;
    }
    let (greedy_line, branch_line) = select_lines(proj3, labels, &in_ear, cfg)?;
    let mut taken = in_ear;
    for &i in greedy_line.iter().chain(&branch_line) {
        taken[i] = true;
    }
    let bulk = (0..taken.len()).filter(|&i| !taken[i]).collect();
    Ok(Clusters { left_ear, right_ear, greedy_line, branch_line, bulk })
}
