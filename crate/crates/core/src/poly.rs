//! Polynomials in the crossing- and parity-invariant variable
//! `U(u) = (q u^2 + q^-1 u^-2) / (q + q^-1)`.

use serde::{Deserialize, Serialize};

use crate::eigen;
use crate::error::{Error, Result};
use crate::linalg::{lstsq, CMatrix, C64, ONE, ZERO};

/// `U(u)` for deformation parameter `q`.
pub fn u_var(u: C64, q: C64) -> C64 {
    (q * u * u + (q * u * u).inv()) / (q + q.inv())
}

/// The four preimages `{±u, ±q^-1 u^-1}` of `x` under `U`.
pub fn preimages(x: C64, q: C64) -> [C64; 4] {
    // q w^2 - (q + q^-1) x w + q^-1 = 0, w = u^2
    let a = q;
    let b = -(q + q.inv()) * x;
    let c = q.inv();
    let disc = (b * b - 4.0 * a * c).sqrt();
    // stable pair of quadratic roots
    let sgn = if (b.conj() * disc).re >= 0.0 { 1.0 } else { -1.0 };
    let big = -(b + disc * sgn) / (2.0 * a);
    let w1 = big;
    let w2 = if big.norm() == 0.0 { ZERO } else { c / (a * big) };
    let r1 = w1.sqrt();
    let r2 = w2.sqrt();
    [r1, -r1, r2, -r2]
}

/// Canonical preimage: largest modulus, then positive real part, then
/// positive imaginary part.
pub fn canonical_preimage(x: C64, q: C64) -> C64 {
    canonical_representative(preimages(x, q)[0], q)
}

/// Canonical member of the orbit `{±u, ±q^-1 u^-1}`.
pub fn canonical_representative(u: C64, q: C64) -> C64 {
    let w = (q * u).inv();
    let mut cands = [u, -u, w, -w];
    cands.sort_by(|a, b| {
        let ma = a.norm();
        let mb = b.norm();
        if (ma - mb).abs() > 1e-12 * ma.max(mb) {
            return mb.partial_cmp(&ma).unwrap();
        }
        if (a.re - b.re).abs() > 1e-14 {
            return b.re.partial_cmp(&a.re).unwrap();
        }
        b.im.partial_cmp(&a.im).unwrap()
    });
    cands[0]
}

/// Polynomial `sum_k coeffs[k] U^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CPolyU {
    pub coeffs: Vec<C64>,
}

impl CPolyU {
    pub fn new(coeffs: Vec<C64>) -> Self {
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    /// Drop trailing coefficients with modulus at most `tol` times the largest.
    pub fn trimmed(&self, tol: f64) -> Self {
        let max = self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut coeffs = self.coeffs.clone();
        while let Some(last) = coeffs.last() {
            if last.norm() <= tol * max || last.norm() == 0.0 {
                coeffs.pop();
            } else {
                break;
            }
        }
        Self { coeffs }
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|z| z.norm() != 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.degree().is_none()
    }

    pub fn leading(&self) -> C64 {
        self.degree().map_or(ZERO, |d| self.coeffs[d])
    }

    /// Horner evaluation at `U = x`.
    pub fn eval_u(&self, x: C64) -> C64 {
        self.coeffs.iter().rev().fold(ZERO, |acc, &c| acc * x + c)
    }

    /// Evaluation at spectral point `u`.
    pub fn eval(&self, u: C64, q: C64) -> C64 {
        self.eval_u(u_var(u, q))
    }

    /// Roots in the `U` variable via the companion matrix, Newton-polished.
    pub fn roots(&self) -> Result<Vec<C64>> {
        let d = match self.degree() {
            None | Some(0) => return Ok(Vec::new()),
            Some(d) => d,
        };
        let lead = self.coeffs[d];
        if d == 1 {
            return Ok(vec![-self.coeffs[0] / lead]);
        }
        let comp = CMatrix::from_fn(d, d, |r, c| {
            if r == 0 {
                -self.coeffs[d - 1 - c] / lead
            } else if r == c + 1 {
                ONE
            } else {
                ZERO
            }
        });
        let mut roots = eigen::eigenvalues(&comp)?;
        let deriv: Vec<C64> = (1..=d).map(|k| self.coeffs[k] * k as f64).collect();
        let dp = CPolyU::new(deriv);
        for r in roots.iter_mut() {
            for _ in 0..3 {
                let f = self.eval_u(*r);
                let df = dp.eval_u(*r);
                if df.norm() == 0.0 {
                    break;
                }
                let step = f / df;
                *r -= step;
                if step.norm() <= 1e-16 * r.norm().max(1.0) {
                    break;
                }
            }
        }
        Ok(roots)
    }
}

/// Result of [`interpolate_in_u`]; `residual` is the relative least-squares
/// misfit (zero for square systems up to rounding).
#[derive(Debug, Clone)]
pub struct Interpolant {
    pub poly: CPolyU,
    pub residual: f64,
}

/// Polynomial of the given degree in `U(u)` through the sample points
/// (least squares when overdetermined).
pub fn interpolate_in_u(points: &[(C64, C64)], degree: usize, q: C64) -> Result<Interpolant> {
    if points.len() < degree + 1 {
        return Err(Error::Conditioning(format!(
            "{} points cannot fix a degree-{} polynomial",
            points.len(),
            degree
        )));
    }
    let xs: Vec<C64> = points.iter().map(|&(u, _)| u_var(u, q)).collect();
    interpolate_values(&xs, &points.iter().map(|p| p.1).collect::<Vec<_>>(), degree)
}

/// Same as [`interpolate_in_u`] with the abscissae already given in `U`.
pub fn interpolate_values(xs: &[C64], ys: &[C64], degree: usize) -> Result<Interpolant> {
    for i in 0..xs.len() {
        for j in 0..i {
            if (xs[i] - xs[j]).norm() <= 1e-12 {
                return Err(Error::Conditioning(format!(
                    "abscissae {i} and {j} coincide in U ({:e})",
                    (xs[i] - xs[j]).norm()
                )));
            }
        }
    }
    // Scale the abscissae so the Vandermonde columns are comparable.
    let s = xs.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1.0);
    let v = CMatrix::from_fn(xs.len(), degree + 1, |r, c| (xs[r] / s).powu(c as u32));
    let sol = lstsq(&v, ys)?;
    let coeffs = sol
        .x
        .iter()
        .enumerate()
        .map(|(k, &c)| c / s.powi(k as i32))
        .collect();
    Ok(Interpolant {
        poly: CPolyU::new(coeffs),
        residual: sol.residual,
    })
}

/// Spectral points whose `U` values sit evenly on a circle of the given
/// centre and radius; well separated abscissae for interpolation.
pub fn circle_nodes(count: usize, centre: C64, radius: f64, phase: f64, q: C64) -> Vec<C64> {
    (0..count)
        .map(|k| {
            let th = phase + 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            canonical_preimage(centre + C64::from_polar(radius, th), q)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> C64 {
        C64::from_polar(1.1, 0.37)
    }

    #[test]
    fn u_special_values() {
        let q = q();
        assert!((u_var(ONE, q) - ONE).norm() < 1e-15);
        assert!((u_var(C64::new(0.0, 1.0), q) + ONE).norm() < 1e-15);
    }

    #[test]
    fn u_invariances() {
        let q = q();
        let u = C64::new(0.7, -0.9);
        let x = u_var(u, q);
        assert!((u_var(-u, q) - x).norm() < 1e-14);
        assert!((u_var((q * u).inv(), q) - x).norm() < 1e-14);
    }

    #[test]
    fn preimages_map_back() {
        let q = q();
        let x = C64::new(0.3, 1.7);
        for u in preimages(x, q) {
            assert!((u_var(u, q) - x).norm() < 1e-13);
        }
        let u = C64::new(1.2, 0.4);
        let r = canonical_representative(u, q);
        assert!((u_var(r, q) - u_var(u, q)).norm() < 1e-13);
        assert_eq!(canonical_representative(-r, q), r);
    }

    #[test]
    fn constant_and_square() {
        let q = q();
        let pts: Vec<(C64, C64)> = [0.9, 1.1, 1.3].iter().map(|&r| (C64::from_polar(r, r), ONE)).collect();
        let p = interpolate_in_u(&pts[..1], 0, q).unwrap().poly;
        assert!((p.coeffs[0] - ONE).norm() < 1e-14);
        let sq: Vec<(C64, C64)> = pts.iter().map(|&(u, _)| (u, u_var(u, q).powu(2))).collect();
        let p = interpolate_in_u(&sq, 2, q).unwrap().poly;
        assert!(p.coeffs[0].norm() < 1e-12 && p.coeffs[1].norm() < 1e-12 && (p.coeffs[2] - ONE).norm() < 1e-12);
    }

    #[test]
    fn coincident_abscissae() {
        let q = q();
        let u = C64::new(0.8, 0.3);
        let pts = vec![(u, ONE), (-u, ONE)];
        assert!(matches!(interpolate_in_u(&pts, 1, q), Err(Error::Conditioning(_))));
    }

    #[test]
    fn roots_of_product() {
        let rs = [C64::new(1.0, 2.0), C64::new(-0.5, 0.1), C64::new(3.0, -1.0)];
        // (x - r0)(x - r1)(x - r2)
        let mut coeffs = vec![ONE];
        for r in rs {
            let mut next = vec![ZERO; coeffs.len() + 1];
            for (k, c) in coeffs.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= c * r;
            }
            coeffs = next;
        }
        let found = CPolyU::new(coeffs).roots().unwrap();
        for r in rs {
            assert!(found.iter().any(|f| (f - r).norm() < 1e-12));
        }
    }
}
