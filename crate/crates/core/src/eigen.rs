//! General complex eigenproblem: Householder reduction to Hessenberg form,
//! Wilkinson-shifted QR sweeps to a complex Schur form, and eigenvectors by
//! back-substitution on the triangular factor.

use crate::error::{Error, Result};
use crate::linalg::{norm, CMatrix, C64, ONE, ZERO};

/// Largest dimension accepted by [`eigenpairs`].
pub const MAX_EIGEN_DIM: usize = 1 << 8;

/// Complex Schur decomposition `A = Z T Z^H`.
#[derive(Debug, Clone)]
pub struct Schur {
    pub t: CMatrix,
    pub z: CMatrix,
    pub iterations: usize,
}

fn hessenberg(a: &CMatrix) -> (CMatrix, CMatrix) {
    let n = a.rows();
    let mut h = a.clone();
    let mut q = CMatrix::identity(n);
    for k in 0..n.saturating_sub(2) {
        let alpha_norm = (k + 1..n).map(|r| h[(r, k)].norm_sqr()).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let phase = if x0.norm() == 0.0 { ONE } else { x0 / x0.norm() };
        let alpha = -phase * alpha_norm;
        let mut v: Vec<C64> = (k + 1..n).map(|r| h[(r, k)]).collect();
        v[0] -= alpha;
        let vn2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vn2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vn2;
        // H <- P H, P = I - beta v v^H acting on rows k+1..n
        for c in 0..n {
            let s: C64 = v
                .iter()
                .enumerate()
                .map(|(i, vi)| vi.conj() * h[(k + 1 + i, c)])
                .sum::<C64>()
                * beta;
            for (i, vi) in v.iter().enumerate() {
                h[(k + 1 + i, c)] -= s * vi;
            }
        }
        // H <- H P, Q <- Q P on columns k+1..n
        for m in [&mut h, &mut q] {
            for r in 0..n {
                let s: C64 = v
                    .iter()
                    .enumerate()
                    .map(|(i, vi)| m[(r, k + 1 + i)] * vi)
                    .sum::<C64>()
                    * beta;
                for (i, vi) in v.iter().enumerate() {
                    m[(r, k + 1 + i)] -= s * vi.conj();
                }
            }
        }
        for r in k + 2..n {
            h[(r, k)] = ZERO;
        }
    }
    (h, q)
}

/// Rotation `[[c, s], [-conj(s), c]]` that maps `(a, b)` to `(r, 0)`.
fn givens(a: C64, b: C64) -> (f64, C64) {
    let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
    if r == 0.0 {
        return (1.0, ZERO);
    }
    if a.norm() == 0.0 {
        return (0.0, b.conj() / b.norm());
    }
    let c = a.norm() / r;
    let s = (a / a.norm()) * b.conj() / r;
    (c, s)
}

fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let l1 = (a + d) * 0.5 + disc;
    let l2 = (a + d) * 0.5 - disc;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Complex Schur form by shifted QR with deflation; cap of `100 * dim`
/// sweeps in total.
pub fn schur(a: &CMatrix) -> Result<Schur> {
    if !a.is_square() {
        return Err(Error::Shape(format!("eigenproblem needs a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    let n = a.rows();
    let (mut h, mut z) = hessenberg(a);
    let cap = 100 * n.max(1);
    let eps = f64::EPSILON;
    let scale = h.frobenius().max(f64::MIN_POSITIVE);
    let mut iterations = 0usize;
    let mut hi = n;
    let mut since_deflation = 0usize;
    while hi > 1 {
        // Find the start of the trailing unreduced block.
        let mut l = hi - 1;
        while l > 0 {
            let sub = h[(l, l - 1)].norm();
            let mut diag = h[(l, l)].norm() + h[(l - 1, l - 1)].norm();
            if diag == 0.0 {
                diag = scale;
            }
            if sub <= eps * diag {
                h[(l, l - 1)] = ZERO;
                break;
            }
            l -= 1;
        }
        if l == hi - 1 {
            hi -= 1;
            since_deflation = 0;
            continue;
        }
        if iterations >= cap {
            return Err(Error::Convergence { iterations });
        }
        iterations += 1;
        since_deflation += 1;

        let sigma = if since_deflation % 11 == 10 {
            // exceptional shift to break cycles
            h[(hi - 1, hi - 1)] + C64::new(0.75, 0.25) * h[(hi - 1, hi - 2)].norm()
        } else {
            wilkinson_shift(
                h[(hi - 2, hi - 2)],
                h[(hi - 2, hi - 1)],
                h[(hi - 1, hi - 2)],
                h[(hi - 1, hi - 1)],
            )
        };

        for k in l..hi {
            h[(k, k)] -= sigma;
        }
        let mut rots = Vec::with_capacity(hi - l - 1);
        for k in l..hi - 1 {
            let (c, s) = givens(h[(k, k)], h[(k + 1, k)]);
            for col in k..n {
                let x = h[(k, col)];
                let y = h[(k + 1, col)];
                h[(k, col)] = x * c + s * y;
                h[(k + 1, col)] = -s.conj() * x + y * c;
            }
            h[(k + 1, k)] = ZERO;
            rots.push((c, s));
        }
        for (j, &(c, s)) in rots.iter().enumerate() {
            let k = l + j;
            let top = (k + 2).min(hi);
            for row in 0..top {
                let x = h[(row, k)];
                let y = h[(row, k + 1)];
                h[(row, k)] = x * c + y * s.conj();
                h[(row, k + 1)] = -x * s + y * c;
            }
            for row in 0..n {
                let x = z[(row, k)];
                let y = z[(row, k + 1)];
                z[(row, k)] = x * c + y * s.conj();
                z[(row, k + 1)] = -x * s + y * c;
            }
        }
        for k in l..hi {
            h[(k, k)] += sigma;
        }
    }
    for r in 1..n {
        for c in 0..r {
            h[(r, c)] = ZERO;
        }
    }
    Ok(Schur { t: h, z, iterations })
}

/// Eigenvalues in Schur order.
pub fn eigenvalues(a: &CMatrix) -> Result<Vec<C64>> {
    let s = schur(a)?;
    Ok((0..a.rows()).map(|i| s.t[(i, i)]).collect())
}

/// Eigenpairs of a general complex matrix, vectors normalised to unit norm.
pub fn eigenpairs(a: &CMatrix) -> Result<Vec<(C64, Vec<C64>)>> {
    let n = a.rows();
    if n > MAX_EIGEN_DIM {
        return Err(Error::Size { dim: n, max: MAX_EIGEN_DIM });
    }
    let s = schur(a)?;
    let t = &s.t;
    let small = f64::EPSILON * t.frobenius().max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut x = vec![ZERO; n];
        x[k] = ONE;
        for i in (0..k).rev() {
            let s_: C64 = (i + 1..=k).map(|j| t[(i, j)] * x[j]).sum();
            let mut denom = t[(i, i)] - lambda;
            if denom.norm() < small {
                denom = C64::new(small, 0.0);
            }
            x[i] = -s_ / denom;
        }
        let v = s.z.mul_vec(&x);
        let nv = norm(&v);
        out.push((lambda, v.iter().map(|z| z / nv).collect()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{determinant, sub_vec};
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> CMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn max_residual(a: &CMatrix, pairs: &[(C64, Vec<C64>)]) -> f64 {
        pairs
            .iter()
            .map(|(l, v)| norm(&sub_vec(&a.mul_vec(v), &v.iter().map(|x| x * l).collect::<Vec<_>>())) / (a.frobenius() * norm(v)))
            .fold(0.0, f64::max)
    }

    #[test]
    fn diagonal() {
        let a = CMatrix::diag(&[ONE, C64::new(2.0, 0.0), C64::new(3.0, 0.0)]);
        let mut pairs = eigenpairs(&a).unwrap();
        pairs.sort_by(|x, y| x.0.re.partial_cmp(&y.0.re).unwrap());
        for (k, (l, v)) in pairs.iter().enumerate() {
            assert!((l.re - (k + 1) as f64).abs() < 1e-14);
            assert!((v[k].norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn swap_matrix() {
        let a = CMatrix::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]);
        let mut ev: Vec<f64> = eigenvalues(&a).unwrap().iter().map(|z| z.re).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_trace_and_residuals() {
        let a = random(32, 3);
        let pairs = eigenpairs(&a).unwrap();
        let sum: C64 = pairs.iter().map(|p| p.0).sum();
        assert!((sum - a.trace()).norm() <= 1e-10 * a.trace().norm().max(1.0));
        assert!(max_residual(&a, &pairs) <= 1e-9);
    }

    #[test]
    fn determinant_matches_eigenvalue_product() {
        let a = random(16, 4);
        let prod: C64 = eigenvalues(&a).unwrap().iter().product();
        let det = determinant(&a).unwrap();
        assert!((prod - det).norm() <= 1e-9 * det.norm());
    }

    #[test]
    fn rejects_oversized() {
        let a = CMatrix::identity(MAX_EIGEN_DIM + 1);
        assert!(matches!(eigenpairs(&a), Err(Error::Size { .. })));
    }

    #[test]
    fn jordan_like_block_converges() {
        // Nearly defective matrix: the eigenvalues still come out.
        let a = CMatrix::from_rows(&[
            vec![ONE, ONE, ZERO],
            vec![ZERO, ONE, ONE],
            vec![C64::new(1e-12, 0.0), ZERO, ONE],
        ]);
        let ev = eigenvalues(&a).unwrap();
        for l in ev {
            assert!((l - ONE).norm() < 1e-3);
        }
    }
}
