//! Slow, independent reference implementations used only by tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Dense {
    (0..rows).map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

pub fn zeros(rows: usize, cols: usize) -> Dense {
    vec![vec![0.0; cols]; rows]
}

pub fn transpose(a: &Dense) -> Dense {
    let (r, c) = (a.len(), a.first().map_or(0, Vec::len));
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

/// Triple loop, accumulating in `k` order.
pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn trace(a: &Dense) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

/// Cyclic two-sided Jacobi on a symmetric matrix. Returns eigenvalues in
/// descending order with matching eigenvectors as columns.
pub fn sym_eigen(a: &Dense) -> (Vec<f64>, Dense) {
    let n = a.len();
    let mut a = a.clone();
    let mut v = zeros(n, n);
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&i| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Singular values from the eigenvalues of `[[0, A], [Aᵀ, 0]]`, which are
/// `±σ` without squaring the condition number.
pub fn singular_values(a: &Dense) -> Vec<f64> {
    let (r, c) = (a.len(), a.first().map_or(0, Vec::len));
    let n = r + c;
    let mut h = zeros(n, n);
    for i in 0..r {
        for j in 0..c {
            h[i][r + j] = a[i][j];
            h[r + j][i] = a[i][j];
        }
    }
    let (values, _) = sym_eigen(&h);
    values.into_iter().take(r.min(c)).map(|x| x.max(0.0)).collect()
}

/// First `k` eigenvectors of `AᵀA` as the columns of a `cols x k` basis.
fn leading_row_space(a: &Dense, k: usize) -> Dense {
    let gram = matmul(&transpose(a), a);
    let (_, vecs) = sym_eigen(&gram);
    vecs.iter().map(|row| row[..k].to_vec()).collect()
}

fn numeric_rank(a: &Dense) -> usize {
    let s = singular_values(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = (a.len().max(a[0].len()) as f64) * f64::EPSILON * smax;
    s.iter().filter(|&&x| x > tol && smax > 0.0).count()
}

/// Principal-angle cosines between the row space of `z` and the leading
/// `min(rows z, rank w)` right singular subspace of `w`.
pub fn pabs(z: &Dense, w: &Dense) -> Vec<f64> {
    let r = numeric_rank(z);
    let k = numeric_rank(w).min(z.len());
    let bz = leading_row_space(z, r);
    let bw = leading_row_space(w, k);
    singular_values(&matmul(&transpose(&bw), &bz))
}

/// Dense covariance matrices, then traces.
pub struct NaiveStats {
    pub tr_w: f64,
    pub tr_b: f64,
    pub tr_t: f64,
}

pub fn naive_class_stats(z: &Dense, labels: &[usize], num_classes: usize) -> NaiveStats {
    let n = z.len();
    let d = z[0].len();
    let mut gmean = vec![0.0; d];
    for row in z {
        for (g, x) in gmean.iter_mut().zip(row) {
            *g += x / n as f64;
        }
    }
    let present: Vec<usize> = (0..num_classes).filter(|c| labels.contains(c)).collect();
    let mut means = vec![vec![0.0; d]; num_classes];
    for &c in &present {
        let members: Vec<&Vec<f64>> = z.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
        for r in &members {
            for (m, x) in means[c].iter_mut().zip(r.iter()) {
                *m += x / members.len() as f64;
            }
        }
    }
    let outer_add = |acc: &mut Dense, v: &[f64], w: f64| {
        for i in 0..d {
            for j in 0..d {
                acc[i][j] += w * v[i] * v[j];
            }
        }
    };
    let mut sw = zeros(d, d);
    let mut sb = zeros(d, d);
    let mut st = zeros(d, d);
    for (row, &l) in z.iter().zip(labels) {
        let dw: Vec<f64> = row.iter().zip(&means[l]).map(|(x, m)| x - m).collect();
        let dt: Vec<f64> = row.iter().zip(&gmean).map(|(x, m)| x - m).collect();
        outer_add(&mut sw, &dw, 1.0 / n as f64);
        outer_add(&mut st, &dt, 1.0 / n as f64);
    }
    for &c in &present {
        let db: Vec<f64> = means[c].iter().zip(&gmean).map(|(x, m)| x - m).collect();
        outer_add(&mut sb, &db, 1.0 / present.len() as f64);
    }
    NaiveStats { tr_w: trace(&sw), tr_b: trace(&sb), tr_t: trace(&st) }
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian draw.
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> Dense {
    let g = gaussian(rng, n, n);
    let mut q: Dense = Vec::new();
    for mut v in g {
        for _ in 0..2 {
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / norm).collect());
    }
    q
}

/// `U diag(s) Vᵀ` with random orthogonal factors.
pub fn with_spectrum(rng: &mut impl Rng, rows: usize, cols: usize, s: &[f64]) -> Dense {
    let u = orthogonal(rng, rows);
    let v = orthogonal(rng, cols);
    let mut out = zeros(rows, cols);
    for (k, &sk) in s.iter().enumerate() {
        for i in 0..rows {
            for j in 0..cols {
                out[i][j] += u[i][k] * sk * v[j][k];
            }
        }
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (a, b) = (ranks(x), ranks(y));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
    let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
