//! Joint Laplacian embedding of query and model keypoints.
//!
//! Query keypoints (`p` of them) and model-image keypoints (`q`) become the
//! nodes of one graph. Cross edges carry the product of a local-descriptor
//! kernel and a context kernel; optionally, query–query edges carry the
//! product of a spatial kernel and a temporal-stability kernel. There are no
//! model–model edges. Coordinates come from the bottom nonzero generalized
//! eigenvectors of `L z = λ D z`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::par::{self, Exec};

/// Bandwidth of a Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    Fixed(f64),
    /// `factor` times the median-heuristic bandwidth of the data at hand.
    Median(f64),
}

impl Default for Sigma {
    fn default() -> Self {
        Sigma::Median(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    /// Local descriptor kernel.
    pub sigma_f: Sigma,
    /// Context descriptor kernel.
    pub sigma_c: Sigma,
    /// Spatial (pixel position) kernel.
    pub sigma_s: Sigma,
    /// Temporal stability kernel.
    pub sigma_g: Sigma,
    pub embedding_dim: usize,
    /// Seed for the median-heuristic pair subsample.
    pub seed: u64,
    pub exec: Exec,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            sigma_f: Sigma::Median(1.0),
            sigma_c: Sigma::Median(1.0),
            sigma_s: Sigma::Median(1.0),
            sigma_g: Sigma::Median(1.0),
            embedding_dim: 60,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

fn sq_dist<F: Copy + Into<f64>>(a: &[F], b: &[F]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.into() - y.into();
            d * d
        })
        .sum()
}

fn check_dims<V: AsRef<[F]>, F>(a: &[V], b: &[V]) -> Result<usize> {
    let dim = a.first().or(b.first()).map(|v| v.as_ref().len()).unwrap_or(0);
    for v in a.iter().chain(b) {
        if v.as_ref().len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.as_ref().len() });
        }
    }
    Ok(dim)
}

/// Pairwise squared Euclidean distances, `|a| x |b|`.
pub fn squared_distances<V, F>(a: &[V], b: &[V], exec: Exec) -> Result<DMatrix<f64>>
where
    V: AsRef<[F]> + Sync,
    F: Copy + Into<f64> + Sync,
{
    check_dims(a, b)?;
    let (p, q) = (a.len(), b.len());
    let mut data = vec![0.0; p * q];
    par::fill_rows(exec, &mut data, q, |i, row| {
        let ai = a[i].as_ref();
        for (j, out) in row.iter_mut().enumerate() {
            *out = sq_dist(ai, b[j].as_ref());
        }
    });
    Ok(DMatrix::from_row_slice(p, q, &data))
}

/// `exp(-‖a_i − b_j‖² / σ²)` for every pair.
pub fn gaussian_kernel<V, F>(a: &[V], b: &[V], sigma: f64, exec: Exec) -> Result<DMatrix<f64>>
where
    V: AsRef<[F]> + Sync,
    F: Copy + Into<f64> + Sync,
{
    if !(sigma > 0.0) {
        return Err(Error::DegenerateInput("kernel bandwidth must be positive"));
    }
    let d2 = squared_distances(a, b, exec)?;
    Ok(kernel_from_sq(&d2, sigma))
}

pub(crate) fn kernel_from_sq(d2: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let s2 = sigma * sigma;
    d2.map(|v| (-v / s2).exp())
}

const MEDIAN_MAX_PAIRS: usize = 10_000;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of squared distances over all pairs when there are at most 10⁴ of
/// them, otherwise over a seeded uniform subsample of 10⁴ pairs.
fn median_sq_of_pairs(n_pairs: usize, seed: u64, pair: impl Fn(usize) -> f64) -> Result<f64> {
    if n_pairs < 2 {
        return Err(Error::DegenerateInput("median heuristic needs at least 2 pairs"));
    }
    let mut vals: Vec<f64> = if n_pairs <= MEDIAN_MAX_PAIRS {
        (0..n_pairs).map(&pair).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..MEDIAN_MAX_PAIRS).map(|_| pair(rng.random_range(0..n_pairs))).collect()
    };
    if vals.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("all pairwise distances are zero"));
    }
    let m = median(&mut vals);
    if m > 0.0 {
        Ok(m)
    } else {
        // more than half the pairs coincide; fall back to the mean
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Median-heuristic bandwidth: `σ² = median ‖a_i − b_j‖²`.
pub fn median_sigma<V, F>(a: &[V], b: &[V], seed: u64) -> Result<f64>
where
    V: AsRef<[F]>,
    F: Copy + Into<f64>,
{
    check_dims(a, b)?;
    let q = b.len();
    let m = median_sq_of_pairs(a.len() * q, seed, |k| sq_dist(a[k / q].as_ref(), b[k % q].as_ref()))?;
    Ok(m.sqrt())
}

/// Median heuristic over a precomputed squared-distance matrix. When
/// `upper_only`, only entries above the diagonal are considered.
pub(crate) fn median_sigma_from_sq(d2: &DMatrix<f64>, upper_only: bool, seed: u64) -> Result<f64> {
    let (p, q) = d2.shape();
    if upper_only {
        let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (i + 1..q).map(move |j| (i, j))).collect();
        median_sq_of_pairs(pairs.len(), seed, |k| d2[pairs[k]]).map(f64::sqrt)
    } else {
        median_sq_of_pairs(p * q, seed, |k| d2[(k / q, k % q)]).map(f64::sqrt)
    }
}

fn resolve(sigma: Sigma, d2: &DMatrix<f64>, upper_only: bool, seed: u64) -> Result<f64> {
    match sigma {
        Sigma::Fixed(s) if s > 0.0 => Ok(s),
        Sigma::Fixed(_) => Err(Error::DegenerateInput("kernel bandwidth must be positive")),
        Sigma::Median(f) => Ok(f * median_sigma_from_sq(d2, upper_only, seed)?),
    }
}

/// Kernel with a bandwidth resolved from `sigma`.
pub fn resolved_kernel<V, F>(a: &[V], b: &[V], sigma: Sigma, seed: u64, exec: Exec) -> Result<DMatrix<f64>>
where
    V: AsRef<[F]> + Sync,
    F: Copy + Into<f64> + Sync,
{
    let d2 = squared_distances(a, b, exec)?;
    let s = resolve(sigma, &d2, false, seed)?;
    Ok(kernel_from_sq(&d2, s))
}

/// Gaussian kernel on 2D pixel positions within one frame.
pub fn spatial_similarity(points: &[PixelPoint], sigma: Sigma, seed: u64) -> Result<DMatrix<f64>> {
    let p = points.len();
    let d2 = DMatrix::from_fn(p, p, |i, j| {
        let (a, b) = (points[i], points[j]);
        (a.u - b.u).powi(2) + (a.v - b.v).powi(2)
    });
    if p < 2 {
        return Ok(DMatrix::from_element(p, p, 1.0));
    }
    let s = match resolve(sigma, &d2, true, seed) {
        Ok(s) => s,
        Err(Error::DegenerateInput(_)) if matches!(sigma, Sigma::Median(_)) => {
            return Ok(DMatrix::from_element(p, p, 1.0));
        }
        Err(e) => return Err(e),
    };
    let mut k = kernel_from_sq(&d2, s);
    for i in 0..p {
        k[(i, i)] = 1.0;
        for j in 0..i {
            k[(i, j)] = k[(j, i)];
        }
    }
    Ok(k)
}

/// Temporal stability kernel on tracked positions.
///
/// Each track lists positions for frames `T−K ..= T` (last = current). The
/// exponent for a pair sums, over past frames, the squared change of their
/// pairwise distance relative to frame T. Pairs that keep their distance
/// get weight 1.
pub fn temporal_similarity<T: AsRef<[PixelPoint]>>(tracks: &[T], sigma: Sigma, seed: u64) -> Result<DMatrix<f64>> {
    let p = tracks.len();
    let len = tracks.first().map(|t| t.as_ref().len()).unwrap_or(0);
    for t in tracks {
        if t.as_ref().len() != len {
            return Err(Error::RaggedTracks { first: len, other: t.as_ref().len() });
        }
    }
    if len == 0 {
        return Err(Error::EmptyInput("tracks have no positions"));
    }
    let cur = len - 1;
    let mut e = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let ti = tracks[i].as_ref();
        for j in i + 1..p {
            let tj = tracks[j].as_ref();
            let d_now = ti[cur].dist(&tj[cur]);
            let s: f64 = (0..cur).map(|f| (ti[f].dist(&tj[f]) - d_now).powi(2)).sum();
            e[(i, j)] = s;
            e[(j, i)] = s;
        }
    }
    if cur == 0 || p < 2 {
        return Ok(DMatrix::from_element(p, p, 1.0));
    }
    let s = match resolve(sigma, &e, true, seed) {
        Ok(s) => s,
        // every pairwise distance is constant: all weights are 1
        Err(Error::DegenerateInput(_)) if matches!(sigma, Sigma::Median(_)) => {
            return Ok(DMatrix::from_element(p, p, 1.0));
        }
        Err(err) => return Err(err),
    };
    // the exponent is already a squared quantity
    Ok(e.map(|v| (-v / (s * s)).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityMode {
    /// Cross edges only.
    SingleFrame,
    /// Cross edges plus a within-query block.
    SpatioTemporal,
}

/// Symmetric `(p+q) x (p+q)` affinity; rows `0..p` are query keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub w: DMatrix<f64>,
    pub p: usize,
    pub q: usize,
    pub mode: AffinityMode,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.p + self.q
    }

    /// True when `(i, j)` is a query–model edge.
    pub fn is_cross(&self, i: usize, j: usize) -> bool {
        (i < self.p) != (j < self.p)
    }
}

/// Build the joint affinity: cross blocks `P∘R`, within-query block `S∘G`
/// (spatio-temporal mode; a missing `G` counts as all ones), zero
/// within-model block, zero diagonal.
pub fn assemble_affinity(
    p_mat: &DMatrix<f64>,
    r_mat: &DMatrix<f64>,
    s_mat: Option<&DMatrix<f64>>,
    g_mat: Option<&DMatrix<f64>>,
    mode: AffinityMode,
) -> Result<AffinityMatrix> {
    let (p, q) = p_mat.shape();
    if r_mat.shape() != (p, q) {
        return Err(Error::ShapeMismatch(format!("P is {p}x{q} but R is {:?}", r_mat.shape())));
    }
    let n = p + q;
    let mut w = DMatrix::<f64>::zeros(n, n);
    for i in 0..p {
        for j in 0..q {
            let v = p_mat[(i, j)] * r_mat[(i, j)];
            w[(i, p + j)] = v;
            w[(p + j, i)] = v;
        }
    }
    if mode == AffinityMode::SpatioTemporal {
        let s = s_mat.ok_or_else(|| Error::ShapeMismatch("spatio-temporal mode needs S".into()))?;
        if s.shape() != (p, p) {
            return Err(Error::ShapeMismatch(format!("S is {:?}, expected {p}x{p}", s.shape())));
        }
        if let Some(g) = g_mat {
            if g.shape() != (p, p) {
                return Err(Error::ShapeMismatch(format!("G is {:?}, expected {p}x{p}", g.shape())));
            }
        }
        for i in 0..p {
            for j in i + 1..p {
                let gv = g_mat.map_or(1.0, |g| g[(i, j)]);
                let v = s[(i, j)] * gv;
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    Ok(AffinityMatrix { w, p, q, mode })
}

/// Embedded coordinates of query (`zq`) and model (`zm`) keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSet {
    pub zq: DMatrix<f64>,
    pub zm: DMatrix<f64>,
    /// Ascending, all strictly positive.
    pub eigenvalues: Vec<f64>,
    pub dim: usize,
    /// Nodes with zero degree; their rows are zero.
    pub isolated: Vec<bool>,
    /// Fewer than the requested number of nonzero eigenpairs existed.
    pub truncated: bool,
}

impl EmbeddedSet {
    /// All coordinates stacked, query rows first.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (p, q) = (self.zq.nrows(), self.zm.nrows());
        let mut z = DMatrix::zeros(p + q, self.dim);
        z.rows_mut(0, p).copy_from(&self.zq);
        z.rows_mut(p, q).copy_from(&self.zm);
        z
    }

    pub fn query_isolated(&self, i: usize) -> bool {
        self.isolated[i]
    }

    pub fn model_isolated(&self, j: usize) -> bool {
        self.isolated[self.zq.nrows() + j]
    }
}

/// Relative threshold under which an eigenvalue counts as zero.
pub const ZERO_EIGENVALUE_REL: f64 = 1e-8;

/// Solve `L z = λ D z` and keep the `d` smallest nonzero modes.
///
/// Reduced to the symmetric problem `D^{-1/2} L D^{-1/2} y = λ y` with
/// `z = D^{-1/2} y`, so the returned vectors satisfy `ZᵀDZ = I`. Eigenvector
/// signs are fixed so that the largest-magnitude entry is positive.
pub fn solve_embedding(aff: &AffinityMatrix, d: usize) -> Result<EmbeddedSet> {
    let n = aff.n();
    let w = &aff.w;
    if w.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!("W is {:?}, expected {n}x{n}", w.shape())));
    }
    if d == 0 {
        return Err(Error::DegenerateInput("embedding dimension must be at least 1"));
    }
    let degree: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let isolated: Vec<bool> = degree.iter().map(|&v| !(v > 0.0)).collect();
    let active: Vec<usize> = (0..n).filter(|&i| !isolated[i]).collect();
    let m = active.len();

    let inv_sqrt: Vec<f64> = active.iter().map(|&i| 1.0 / degree[i].sqrt()).collect();
    let mut lsym = DMatrix::<f64>::zeros(m, m);
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            let l = if a == b { degree[i] - w[(i, j)] } else { -w[(i, j)] };
            lsym[(a, b)] = l * inv_sqrt[a] * inv_sqrt[b];
        }
    }
    for a in 0..m {
        for b in 0..a {
            let avg = 0.5 * (lsym[(a, b)] + lsym[(b, a)]);
            lsym[(a, b)] = avg;
            lsym[(b, a)] = avg;
        }
    }

    let (vals, vecs) = if m > 0 {
        let eig = SymmetricEigen::new(lsym);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        (nalgebra::DVector::zeros(0), DMatrix::zeros(0, 0))
    };
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
    let lmax = order.last().map(|&k| vals[k]).unwrap_or(0.0);
    let cutoff = ZERO_EIGENVALUE_REL * lmax.abs();
    let chosen: Vec<usize> = order.into_iter().filter(|&k| vals[k] > cutoff).take(d).collect();
    let dim = chosen.len();

    let mut z = DMatrix::<f64>::zeros(n, dim);
    for (c, &k) in chosen.iter().enumerate() {
        let y = vecs.column(k);
        let mut col: Vec<f64> = (0..m).map(|a| y[a] * inv_sqrt[a]).collect();
        let mut best = 0;
        for a in 1..m {
            if col[a].abs() > col[best].abs() {
                best = a;
            }
        }
        if m > 0 && col[best] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        for (a, &i) in active.iter().enumerate() {
            z[(i, c)] = col[a];
        }
    }

    let p = aff.p;
    Ok(EmbeddedSet {
        zq: z.rows(0, p).into_owned(),
        zm: z.rows(p, aff.q).into_owned(),
        eigenvalues: chosen.iter().map(|&k| vals[k]).collect(),
        dim,
        isolated,
        truncated: dim < d,
    })
}

/// `Σᵢⱼ ‖zᵢ − zⱼ‖² Wᵢⱼ` over all ordered pairs.
pub fn embedding_objective(w: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            if wij != 0.0 {
                total += wij * (z.row(i) - z.row(j)).norm_squared();
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rows(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|r| r.to_vec()).collect()
    }

    fn random_affinity(n: usize, p: usize, rng: &mut ChaCha8Rng) -> AffinityMatrix {
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v: f64 = rng.random_range(0.0..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        AffinityMatrix { w, p, q: n - p, mode: AffinityMode::SpatioTemporal }
    }

    fn dense_degree(w: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_fn(w.nrows(), |i, _| w.row(i).sum()))
    }

    #[test]
    fn kernel_values() {
        let a = rows(&[&[0.0, 0.0]]);
        let b = rows(&[&[0.0, 0.0], &[3.0, 4.0]]);
        let k = gaussian_kernel(&a, &b, 5.0, Exec::Sequential).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        let k = gaussian_kernel(&a, &b, 1e9, Exec::Sequential).unwrap();
        assert!(k.iter().all(|&v| v > 0.999 && v <= 1.0));
        let bad = rows(&[&[1.0]]);
        assert!(matches!(gaussian_kernel(&a, &bad, 1.0, Exec::Sequential), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn kernel_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<Vec<f32>> = (0..30).map(|_| (0..16).map(|_| rng.random_range(0.0f32..1.0)).collect()).collect();
        let b: Vec<Vec<f32>> = (0..20).map(|_| (0..16).map(|_| rng.random_range(0.0f32..1.0)).collect()).collect();
        let x = gaussian_kernel(&a, &b, 0.7, Exec::Sequential).unwrap();
        let y = gaussian_kernel(&a, &b, 0.7, Exec::Parallel).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn median_sigma_matches_enumeration() {
        // 3 points at 0 and 2 at 1 on a line, against the same set
        let pts = rows(&[&[0.0], &[0.0], &[0.0], &[1.0], &[1.0]]);
        let mut all = Vec::new();
        for a in &pts {
            for b in &pts {
                all.push((a[0] - b[0]).powi(2));
            }
        }
        // 13 zeros and 12 ones: the median is 0, so the mean is used
        let zeros = all.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 13);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let s = median_sigma(&pts, &pts, 0).unwrap();
        assert!((s * s - mean).abs() < 1e-12);

        let a = rows(&[&[0.0], &[1.0]]);
        let b = rows(&[&[1.0], &[1.0], &[2.0]]);
        // squared distances {1,1,4,0,0,1} -> sorted {0,0,1,1,1,4}, median 1
        let s = median_sigma(&a, &b, 0).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_sigma_degenerate_and_deterministic() {
        let same = rows(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(median_sigma(&same, &same, 0), Err(Error::DegenerateInput(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let big: Vec<Vec<f64>> = (0..150).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let s1 = median_sigma(&big, &big, 42).unwrap();
        let s2 = median_sigma(&big, &big, 42).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn spatial_kernel() {
        let pts = vec![PixelPoint::new(0.0, 0.0), PixelPoint::new(3.0, 4.0), PixelPoint::new(10.0, 1.0)];
        let s = spatial_similarity(&pts, Sigma::Fixed(5.0), 0).unwrap();
        assert_eq!(s, s.transpose());
        assert!((0..3).all(|i| s[(i, i)] == 1.0));
        assert!((s[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn temporal_kernel_cases() {
        let static_tracks = vec![
            vec![PixelPoint::new(0.0, 0.0); 4],
            vec![PixelPoint::new(5.0, 1.0); 4],
            vec![PixelPoint::new(2.0, 9.0); 4],
        ];
        let g = temporal_similarity(&static_tracks, Sigma::Fixed(1.0), 0).unwrap();
        assert!(g.iter().all(|&v| v == 1.0));
        let g = temporal_similarity(&static_tracks, Sigma::Median(1.0), 0).unwrap();
        assert!(g.iter().all(|&v| v == 1.0));

        // distance 5 now; 5 + 2 in exactly one past frame, sigma 2
        let a = vec![PixelPoint::new(0.0, 0.0); 3];
        let b = vec![PixelPoint::new(7.0, 0.0), PixelPoint::new(5.0, 0.0), PixelPoint::new(5.0, 0.0)];
        let g = temporal_similarity(&[a, b], Sigma::Fixed(2.0), 0).unwrap();
        assert!((g[(0, 1)] - (-1.0f64).exp()).abs() < 1e-12);

        let ragged = vec![vec![PixelPoint::default(); 3], vec![PixelPoint::default(); 2]];
        assert!(matches!(temporal_similarity(&ragged, Sigma::Fixed(1.0), 0), Err(Error::RaggedTracks { .. })));
    }

    #[test]
    fn temporal_kernel_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<PixelPoint> = (0..6).map(|_| PixelPoint::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect();
        let shifts: Vec<(f64, f64)> = (0..5).map(|_| (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0))).collect();
        let tracks: Vec<Vec<PixelPoint>> = base
            .iter()
            .map(|p| shifts.iter().map(|(dx, dy)| PixelPoint::new(p.u + dx, p.v + dy)).collect())
            .collect();
        // oracle: pairwise distances before and after translation agree
        for f in 0..5 {
            for i in 0..6 {
                for j in 0..6 {
                    assert!((tracks[i][f].dist(&tracks[j][f]) - base[i].dist(&base[j])).abs() < 1e-9);
                }
            }
        }
        let g = temporal_similarity(&tracks, Sigma::Fixed(1.0), 0).unwrap();
        assert!(g.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn assemble_single_and_spatiotemporal() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let a = assemble_affinity(&one, &one, None, None, AffinityMode::SingleFrame).unwrap();
        assert_eq!(a.w, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));

        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let r = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.3, 0.7]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let a = assemble_affinity(&p, &r, Some(&s), Some(&g), AffinityMode::SpatioTemporal).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(4, 4, &[
            0.0,       0.6 * 0.5, 0.9 * 0.5, 0.1 * 0.4,
            0.6 * 0.5, 0.0,       0.2 * 0.3, 0.8 * 0.7,
            0.9 * 0.5, 0.2 * 0.3, 0.0,       0.0,
            0.1 * 0.4, 0.8 * 0.7, 0.0,       0.0,
        ]);
        assert_eq!(a.w, expected);

        let ones2 = DMatrix::from_element(2, 2, 1.0);
        let ones23 = DMatrix::from_element(2, 3, 1.0);
        let a = assemble_affinity(&ones23, &ones23, Some(&ones2), Some(&ones2), AffinityMode::SpatioTemporal).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j || (i >= 2 && j >= 2) { 0.0 } else { 1.0 };
                assert_eq!(a.w[(i, j)], expect);
            }
        }
        assert!(matches!(
            assemble_affinity(&ones23, &ones2, None, None, AffinityMode::SingleFrame),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            assemble_affinity(&ones23, &ones23, None, None, AffinityMode::SpatioTemporal),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn two_node_graph() {
        // L = [[1,-1],[-1,1]], D = I: eigenvalues 0 and 2, z = ±(1,-1)/√2
        let one = DMatrix::from_element(1, 1, 1.0);
        let a = assemble_affinity(&one, &one, None, None, AffinityMode::SingleFrame).unwrap();
        let e = solve_embedding(&a, 5).unwrap();
        assert_eq!(e.dim, 1);
        assert!(e.truncated);
        assert!((e.eigenvalues[0] - 2.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.zq[(0, 0)].abs() - h).abs() < 1e-12);
        assert!((e.zq[(0, 0)] + e.zm[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn disconnected_components_have_zero_modes_excluded() {
        // two disjoint edges 0-2 and 1-3 (p = 2, q = 2)
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let r = DMatrix::from_element(2, 2, 1.0);
        let a = assemble_affinity(&p, &r, None, None, AffinityMode::SingleFrame).unwrap();
        // brute-force oracle: eigenvalues of D^-1 L for block diagonal pairs
        // are {0, 2} for each edge
        let e = solve_embedding(&a, 4).unwrap();
        assert_eq!(e.dim, 2);
        assert!(e.eigenvalues.iter().all(|&l| (l - 2.0).abs() < 1e-12));
    }

    #[test]
    fn isolated_nodes_are_flagged() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = DMatrix::from_element(2, 2, 1.0);
        let a = assemble_affinity(&p, &r, None, None, AffinityMode::SingleFrame).unwrap();
        let e = solve_embedding(&a, 2).unwrap();
        assert_eq!(e.isolated, vec![false, true, false, true]);
        assert!(e.zq.row(1).iter().all(|&v| v == 0.0));
        assert!(e.zm.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eigen_contract_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.random_range(3..25);
            let p = rng.random_range(1..n);
            let a = random_affinity(n, p, &mut rng);
            let e = solve_embedding(&a, 6).unwrap();
            let z = e.stacked();
            let dm = dense_degree(&a.w);
            let l = &dm - &a.w;
            for (k, &lam) in e.eigenvalues.iter().enumerate() {
                let zc = z.column(k);
                let res = (&l * zc - &dm * zc * lam).norm();
                assert!(res <= 1e-8 * zc.norm());
            }
            let gram = z.transpose() * &dm * &z;
            assert!((gram - DMatrix::identity(e.dim, e.dim)).abs().max() < 1e-6);
            let obj = embedding_objective(&a.w, &z);
            let sum: f64 = e.eigenvalues.iter().sum();
            assert!((obj - 2.0 * sum).abs() <= 1e-6 * obj.abs().max(1e-12));
        }
    }

    #[test]
    fn embedding_is_minimal_among_competitors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let n = rng.random_range(4..=12);
            let a = random_affinity(n, n / 2, &mut rng);
            let d = 2.min(n - 2);
            let e = solve_embedding(&a, d).unwrap();
            let z = e.stacked();
            let best = embedding_objective(&a.w, &z);
            let dm = dense_degree(&a.w);
            let ones = nalgebra::DVector::from_element(n, 1.0);
            for _ in 0..50 {
                // random competitor: D-orthogonal to 1, D-orthonormal columns
                let mut c = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
                for k in 0..d {
                    let mut col = c.column(k).into_owned();
                    let proj = (ones.transpose() * &dm * &col)[0] / (ones.transpose() * &dm * &ones)[0];
                    col -= &ones * proj;
                    for prev in 0..k {
                        let pc = c.column(prev).into_owned();
                        let pr = (pc.transpose() * &dm * &col)[0];
                        col -= pc * pr;
                    }
                    let nrm = (col.transpose() * &dm * &col)[0].sqrt();
                    c.set_column(k, &(col / nrm));
                }
                assert!(best <= embedding_objective(&a.w, &c) + 1e-9);
            }
        }
    }

    #[test]
    fn strongest_cross_pair_is_closest() {
        let mut p = DMatrix::from_element(3, 3, 0.01);
        p[(1, 2)] = 0.99;
        let r = DMatrix::from_element(3, 3, 1.0);
        let s = DMatrix::from_element(3, 3, 0.01);
        let a = assemble_affinity(&p, &r, Some(&s), None, AffinityMode::SpatioTemporal).unwrap();
        let e = solve_embedding(&a, 3).unwrap();
        let mut best = (0, 0, f64::INFINITY);
        for i in 0..3 {
            for j in 0..3 {
                let d = (e.zq.row(i) - e.zm.row(j)).norm();
                if d < best.2 {
                    best = (i, j, d);
                }
            }
        }
        assert_eq!((best.0, best.1), (1, 2));
    }

    #[test]
    fn scaling_w_keeps_eigenvectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_affinity(10, 4, &mut rng);
        let mut b = a.clone();
        b.w *= 3.5;
        let ea = solve_embedding(&a, 4).unwrap();
        let eb = solve_embedding(&b, 4).unwrap();
        // D scales too, so ZᵀDZ = I rescales Z by 1/sqrt(3.5)
        let za = ea.stacked();
        let zb = eb.stacked() * 3.5f64.sqrt();
        for k in 0..ea.dim {
            let d1 = (za.column(k) - zb.column(k)).norm();
            let d2 = (za.column(k) + zb.column(k)).norm();
            assert!(d1.min(d2) < 1e-6);
            assert!((ea.eigenvalues[k] - eb.eigenvalues[k]).abs() < 1e-9);
        }
    }
}
