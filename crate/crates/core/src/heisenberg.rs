//! The explicit degree-2 nilmanifold H(R^N)/H(Z^N) and nilsequence
//! evaluation.
//!
//! H(R^N) consists of pairs (x, phi) with x in R^N and phi a polynomial of
//! degree at most 2 from R^N to R, multiplied by (x,phi)(y,psi) =
//! (x+y, T^y phi + psi) with (T^y phi)(n) = phi(n+y). Polynomial parts are
//! stored in the binomial basis {1, n_i, binom(n_i,2), n_i n_j}, so the
//! integer lattice H(Z^N) is exactly the set of points with integer
//! coordinates; fundamental-domain reduction is a coordinatewise floor.

use num::Complex;
use serde::{Deserialize, Serialize};

use crate::fourier::kahan_sum;
use crate::group::{GroupElement, GroupSpec};
use crate::hostkra::PolyTarget;
use crate::{Error, Result};

type Complex64 = Complex<f64>;

fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Polynomial of degree at most 2 in binomial coordinates:
/// c + sum lin_i n_i + sum sq_i binom(n_i,2) + sum_{i<j} cross_ij n_i n_j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergPoly {
    pub c: f64,
    pub lin: Vec<f64>,
    pub sq: Vec<f64>,
    pub cross: Vec<f64>,
}

impl HeisenbergPoly {
    pub fn zero(n: usize) -> Self {
        HeisenbergPoly {
            c: 0.0,
            lin: vec![0.0; n],
            sq: vec![0.0; n],
            cross: vec![0.0; n * n.saturating_sub(1) / 2],
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        HeisenbergPoly {
            c,
            ..HeisenbergPoly::zero(n)
        }
    }

    pub fn dims(&self) -> usize {
        self.lin.len()
    }

    pub fn cross_at(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else if i < j {
            self.cross[pair_index(self.dims(), i, j)]
        } else {
            self.cross[pair_index(self.dims(), j, i)]
        }
    }

    /// Evaluation at a real point; binomials extend as t(t-1)/2.
    pub fn eval(&self, t: &[f64]) -> f64 {
        let n = self.dims();
        let mut acc = self.c;
        for i in 0..n {
            acc += self.lin[i] * t[i];
            acc += self.sq[i] * t[i] * (t[i] - 1.0) / 2.0;
        }
        for i in 0..n {
            for j in i + 1..n {
                acc += self.cross[pair_index(n, i, j)] * t[i] * t[j];
            }
        }
        acc
    }

    pub fn eval_int(&self, t: &[i64]) -> f64 {
        let tf: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        self.eval(&tf)
    }

    /// T^y: n -> phi(n + y), re-expanded in the binomial basis.
    pub fn translate(&self, y: &[f64]) -> HeisenbergPoly {
        let n = self.dims();
        let mut out = self.clone();
        out.c = self.eval(y);
        for i in 0..n {
            let mut l = self.lin[i] + self.sq[i] * y[i];
            for j in 0..n {
                if j != i {
                    l += self.cross_at(i, j) * y[j];
                }
            }
            out.lin[i] = l;
        }
        out
    }

    pub fn add(&self, other: &HeisenbergPoly) -> HeisenbergPoly {
        HeisenbergPoly {
            c: self.c + other.c,
            lin: zip_add(&self.lin, &other.lin),
            sq: zip_add(&self.sq, &other.sq),
            cross: zip_add(&self.cross, &other.cross),
        }
    }

    pub fn neg(&self) -> HeisenbergPoly {
        HeisenbergPoly {
            c: -self.c,
            lin: self.lin.iter().map(|v| -v).collect(),
            sq: self.sq.iter().map(|v| -v).collect(),
            cross: self.cross.iter().map(|v| -v).collect(),
        }
    }

    fn coeffs(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.c)
            .chain(self.lin.iter().copied())
            .chain(self.sq.iter().copied())
            .chain(self.cross.iter().copied())
    }

    /// Largest coefficient magnitude.
    pub fn max_abs(&self) -> f64 {
        self.coeffs().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Largest distance of any coefficient to the integers.
    fn max_dist_to_int(&self) -> f64 {
        self.coeffs()
            .fold(0.0, |a: f64, v| a.max((v - v.round()).abs()))
    }

    /// Same, ignoring the constant term.
    fn nonconst_dist_to_int(&self) -> f64 {
        self.coeffs()
            .skip(1)
            .fold(0.0, |a: f64, v| a.max((v - v.round()).abs()))
    }

    /// Same, over the degree-two coefficients only.
    fn quad_dist_to_int(&self) -> f64 {
        self.sq
            .iter()
            .chain(self.cross.iter())
            .fold(0.0, |a: f64, v| a.max((v - v.round()).abs()))
    }
}

fn zip_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergPoint {
    pub x: Vec<f64>,
    pub poly: HeisenbergPoly,
}

impl HeisenbergPoint {
    pub fn identity(n: usize) -> Self {
        HeisenbergPoint {
            x: vec![0.0; n],
            poly: HeisenbergPoly::zero(n),
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn is_integral(&self, tol: f64) -> bool {
        self.x.iter().all(|v| (v - v.round()).abs() <= tol)
            && self.poly.max_dist_to_int() <= tol
    }
}

pub fn heis_mul(p: &HeisenbergPoint, q: &HeisenbergPoint) -> Result<HeisenbergPoint> {
    if p.n() != q.n() {
        return Err(Error::DimensionMismatch {
            expected: p.n(),
            got: q.n(),
        });
    }
    Ok(HeisenbergPoint {
        x: zip_add(&p.x, &q.x),
        poly: p.poly.translate(&q.x).add(&q.poly),
    })
}

pub fn heis_inv(p: &HeisenbergPoint) -> HeisenbergPoint {
    let neg_x: Vec<f64> = p.x.iter().map(|v| -v).collect();
    HeisenbergPoint {
        poly: p.poly.translate(&neg_x).neg(),
        x: neg_x,
    }
}

/// Fundamental-domain representative mod H(Z^N): returns (rep, l) with
/// l in H(Z^N), rep = p . l, the translation part of rep in [0,1)^N, and
/// every binomial coefficient of rep in [0,1).
pub fn heis_reduce(p: &HeisenbergPoint) -> (HeisenbergPoint, HeisenbergPoint) {
    let m: Vec<f64> = p.x.iter().map(|v| -v.floor()).collect();
    let shifted_poly = p.poly.translate(&m);
    let lambda = HeisenbergPoly {
        c: -shifted_poly.c.floor(),
        lin: shifted_poly.lin.iter().map(|v| -v.floor()).collect(),
        sq: shifted_poly.sq.iter().map(|v| -v.floor()).collect(),
        cross: shifted_poly.cross.iter().map(|v| -v.floor()).collect(),
    };
    let lattice = HeisenbergPoint {
        x: m,
        poly: lambda,
    };
    let rep = heis_mul(p, &lattice).expect("same dimension");
    (rep, lattice)
}

/// The quotient H(R^N)/H(Z^N) as a polynomial-map target, with the chain
/// H_0 = R^N x Poly_{<=2}, H_1 = R^N x Poly_{<=1}, H_2 = constants, trivial
/// beyond; membership tests the coset set H_k . H(Z^N) inside H(R^N).
#[derive(Debug, Clone, Copy)]
pub struct HeisenbergTarget {
    pub n: usize,
}

impl PolyTarget for HeisenbergTarget {
    type Elem = HeisenbergPoint;

    fn diff(&self, a: &HeisenbergPoint, b: &HeisenbergPoint) -> HeisenbergPoint {
        heis_mul(a, &heis_inv(b)).expect("same dimension")
    }

    fn in_level(&self, level: usize, e: &HeisenbergPoint, tol: f64) -> bool {
        if level == 0 {
            return true;
        }
        if level == 1 {
            return e.poly.quad_dist_to_int() <= tol;
        }
        let translation_ok = e.x.iter().all(|v| (v - v.round()).abs() <= tol);
        if level == 2 {
            translation_ok && e.poly.nonconst_dist_to_int() <= tol
        } else {
            translation_ok && e.poly.max_dist_to_int() <= tol
        }
    }

    fn degree(&self) -> usize {
        2
    }
}

/// Piecewise-linear radial profile in the sup norm, zero beyond the last
/// knot. Knots are (radius, value) pairs with strictly increasing radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    knots: Vec<(f64, f64)>,
}

impl Bump {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Precondition("a bump needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Precondition("bump knot radii must increase".into()));
        }
        let last = knots.last().unwrap();
        if last.0 > 1.0 || last.1 != 0.0 {
            return Err(Error::Precondition(
                "bump must vanish at its last knot inside the unit ball".into(),
            ));
        }
        Ok(Bump { knots })
    }

    /// Radius/value pairs defining the profile, strictly increasing radii.
    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Tent of height 1: flat to rho - scale, linear down to zero at rho.
    pub fn tent(rho: f64, scale: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) || !(scale > 0.0) {
            return Err(Error::Precondition(
                "tent needs 0 < rho <= 1 and positive scale".into(),
            ));
        }
        let shoulder = (rho - scale).max(0.0);
        if shoulder == 0.0 {
            Bump::new(vec![(0.0, 1.0), (rho, 0.0)])
        } else {
            Bump::new(vec![(0.0, 1.0), (shoulder, 1.0), (rho, 0.0)])
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.knots[0].0 {
            return self.knots[0].1;
        }
        for w in self.knots.windows(2) {
            let (r0, v0) = w[0];
            let (r1, v1) = w[1];
            if r <= r1 {
                return v0 + (v1 - v0) * (r - r0) / (r1 - r0);
            }
        }
        0.0
    }

    pub fn support_radius(&self) -> f64 {
        self.knots.last().unwrap().0
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a: f64, x| a.max(x.abs()))
}

/// F(x, psi) = sum over integer n of bump(x + n) e(psi(n)); finite because
/// the bump is supported inside the unit ball. Invariant under right
/// multiplication by H(Z^N).
pub fn nilsequence_value(bump: &Bump, p: &HeisenbergPoint) -> Complex64 {
    let n = p.n();
    if n == 0 {
        return Complex64::from_polar(bump.eval(0.0), std::f64::consts::TAU * p.poly.c);
    }
    let r = bump.support_radius();
    let lo: Vec<i64> = p.x.iter().map(|&v| (-v - r).ceil() as i64).collect();
    let hi: Vec<i64> = p.x.iter().map(|&v| (-v + r).floor() as i64).collect();
    let mut terms = Vec::new();
    let mut idx = lo.clone();
    'outer: loop {
        let shifted: Vec<f64> = p.x.iter().zip(&idx).map(|(&v, &k)| v + k as f64).collect();
        let w = bump.eval(sup_abs(&shifted));
        if w != 0.0 {
            let phase = std::f64::consts::TAU * p.poly.eval_int(&idx);
            terms.push(Complex64::from_polar(w, phase));
        }
        for pos in 0..n {
            idx[pos] += 1;
            if idx[pos] <= hi[pos] {
                continue 'outer;
            }
            idx[pos] = lo[pos];
        }
        break;
    }
    kahan_sum(terms.into_iter())
}

/// A degree-2 nilsequence on a finite group: the orbit point g(h) for
/// every h, plus the fiber function data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NilsequenceSpec {
    pub group: GroupSpec,
    pub n: usize,
    pub bump: Bump,
    /// g(h) per group element, indexed by element index.
    pub points: Vec<HeisenbergPoint>,
}

impl NilsequenceSpec {
    pub fn new(
        group: GroupSpec,
        n: usize,
        bump: Bump,
        points: Vec<HeisenbergPoint>,
    ) -> Result<Self> {
        if points.len() as u128 != group.cardinality() {
            return Err(Error::DimensionMismatch {
                expected: group.cardinality() as usize,
                got: points.len(),
            });
        }
        if let Some(p) = points.iter().find(|p| p.n() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.n(),
            });
        }
        Ok(NilsequenceSpec {
            group,
            n,
            bump,
            points,
        })
    }

    pub fn orbit_point(&self, x: &GroupElement) -> &HeisenbergPoint {
        &self.points[self.group.index_of(x)]
    }
}

pub fn nilseq_eval(spec: &NilsequenceSpec, x: &GroupElement) -> Complex64 {
    nilsequence_value(&spec.bump, spec.orbit_point(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::Budget;
    use crate::hostkra::{is_polynomial, PolyCheckConfig, PolynomialMapTable};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_point(n: usize, rng: &mut ChaCha8Rng) -> HeisenbergPoint {
        let mut p = HeisenbergPoint::identity(n);
        for v in p.x.iter_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
        p.poly.c = rng.random_range(-3.0..3.0);
        for v in p.poly.lin.iter_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
        for v in p.poly.sq.iter_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
        for v in p.poly.cross.iter_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
        p
    }

    fn random_lattice(n: usize, rng: &mut ChaCha8Rng) -> HeisenbergPoint {
        let mut p = random_point(n, rng);
        for v in p.x.iter_mut() {
            *v = v.round();
        }
        p.poly.c = p.poly.c.round();
        for v in p.poly.lin.iter_mut() {
            *v = v.round();
        }
        for v in p.poly.sq.iter_mut() {
            *v = v.round();
        }
        for v in p.poly.cross.iter_mut() {
            *v = v.round();
        }
        p
    }

    fn close(p: &HeisenbergPoint, q: &HeisenbergPoint, tol: f64) -> bool {
        p.x.iter().zip(&q.x).all(|(a, b)| (a - b).abs() <= tol)
            && (p.poly.c - q.poly.c).abs() <= tol
            && p.poly.lin.iter().zip(&q.poly.lin).all(|(a, b)| (a - b).abs() <= tol)
            && p.poly.sq.iter().zip(&q.poly.sq).all(|(a, b)| (a - b).abs() <= tol)
            && p.poly.cross.iter().zip(&q.poly.cross).all(|(a, b)| (a - b).abs() <= tol)
    }

    #[test]
    fn translation_matches_pointwise_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = random_point(3, &mut rng);
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let shifted = p.poly.translate(&y);
            for _ in 0..5 {
                let t: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let moved: Vec<f64> = t.iter().zip(&y).map(|(a, b)| a + b).collect();
                assert!((shifted.eval(&t) - p.poly.eval(&moved)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_and_inverse_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let id = HeisenbergPoint::identity(2);
        for _ in 0..100 {
            let p = random_point(2, &mut rng);
            assert!(close(&heis_mul(&p, &id).unwrap(), &p, 1e-12));
            assert!(close(&heis_mul(&id, &p).unwrap(), &p, 1e-12));
            assert!(close(&heis_mul(&p, &heis_inv(&p)).unwrap(), &id, 1e-12));
            assert!(close(&heis_mul(&heis_inv(&p), &p).unwrap(), &id, 1e-12));
        }
    }

    #[test]
    fn associativity_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = random_point(2, &mut rng);
            let q = random_point(2, &mut rng);
            let r = random_point(2, &mut rng);
            let left = heis_mul(&heis_mul(&p, &q).unwrap(), &r).unwrap();
            let right = heis_mul(&p, &heis_mul(&q, &r).unwrap()).unwrap();
            assert!(close(&left, &right, 1e-12));
        }
    }

    #[test]
    fn commutator_structure_is_degree_two() {
        // The linear-coefficient and translation generators: their
        // commutator is a central constant.
        let t = 0.3;
        let mut p = HeisenbergPoint::identity(1);
        p.poly.c = t;
        p.poly.lin[0] = 1.0;
        let mut q = HeisenbergPoint::identity(1);
        q.x[0] = 1.0;

        let pq = heis_mul(&p, &q).unwrap();
        assert!((pq.poly.c - (t + 1.0)).abs() < 1e-12);
        assert!((pq.poly.lin[0] - 1.0).abs() < 1e-12);
        let qp = heis_mul(&q, &p).unwrap();
        assert!((qp.poly.c - t).abs() < 1e-12);

        // Cross-check the expansion by evaluating both sides pointwise.
        for n in [0i64, 1, 2] {
            let direct = p.poly.eval_int(&[n + 1]);
            assert!((pq.poly.eval_int(&[n]) - direct - q.poly.eval_int(&[n])).abs() < 1e-12);
        }

        // Commutator (qp)^{-1}(pq) carrying pq to qp: the central constant 1.
        let comm = heis_mul(&heis_inv(&qp), &pq).unwrap();
        assert!(sup_abs(&comm.x) < 1e-12);
        assert!((comm.poly.c - 1.0).abs() < 1e-12);
        assert!(comm.poly.lin.iter().all(|v| v.abs() < 1e-12));
    }

    fn commutator(p: &HeisenbergPoint, q: &HeisenbergPoint) -> HeisenbergPoint {
        let pq = heis_mul(p, q).unwrap();
        let qp = heis_mul(q, p).unwrap();
        heis_mul(&heis_inv(&qp), &pq).unwrap()
    }

    #[test]
    fn commutators_respect_the_filtration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            // Full-group commutators drop to H_1: no translation, no
            // quadratic part.
            let p = random_point(2, &mut rng);
            let q = random_point(2, &mut rng);
            let comm = commutator(&p, &q);
            assert!(sup_abs(&comm.x) < 1e-12);
            assert!(comm.poly.sq.iter().all(|v| v.abs() < 1e-12));
            assert!(comm.poly.cross.iter().all(|v| v.abs() < 1e-12));

            // H_1 commutators are central constants.
            let mut a = random_point(2, &mut rng);
            a.poly.sq = vec![0.0; 2];
            a.poly.cross = vec![0.0; 1];
            let mut b = random_point(2, &mut rng);
            b.poly.sq = vec![0.0; 2];
            b.poly.cross = vec![0.0; 1];
            let comm = commutator(&a, &b);
            assert!(sup_abs(&comm.x) < 1e-12);
            assert!(comm.poly.lin.iter().all(|v| v.abs() < 1e-12));
            assert!(comm.poly.sq.iter().all(|v| v.abs() < 1e-12));
            assert!(comm.poly.cross.iter().all(|v| v.abs() < 1e-12));

            // H_2 is central.
            let center = HeisenbergPoint {
                x: vec![0.0; 2],
                poly: HeisenbergPoly::constant(2, 0.7),
            };
            let left = heis_mul(&p, &center).unwrap();
            let right = heis_mul(&center, &p).unwrap();
            assert!(close(&left, &right, 1e-12));
        }
    }

    #[test]
    fn reduction_lands_in_fundamental_domain_and_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = random_point(2, &mut rng);
            let (rep, lattice) = heis_reduce(&p);
            assert!(lattice.is_integral(0.0));
            assert!(rep.x.iter().all(|&v| (0.0..1.0).contains(&v)));
            assert!(rep.poly.coeffs().all(|v| (0.0..1.0).contains(&v)));
            // p = rep . lattice^{-1}.
            let back = heis_mul(&rep, &heis_inv(&lattice)).unwrap();
            assert!(close(&back, &p, 1e-9));
            // Idempotence.
            let (rep2, l2) = heis_reduce(&rep);
            assert!(close(&rep2, &rep, 0.0));
            assert!(close(&l2, &HeisenbergPoint::identity(2), 0.0));
        }
    }

    #[test]
    fn lattice_points_reduce_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let l = random_lattice(2, &mut rng);
            let (rep, _) = heis_reduce(&l);
            assert!(close(&rep, &HeisenbergPoint::identity(2), 1e-9));
        }
    }

    #[test]
    fn half_translation_reduces_to_half() {
        let mut p = HeisenbergPoint::identity(1);
        p.x[0] = 1.5;
        let (rep, lattice) = heis_reduce(&p);
        assert!((rep.x[0] - 0.5).abs() < 1e-12);
        let back = heis_mul(&rep, &heis_inv(&lattice)).unwrap();
        assert!(close(&back, &p, 1e-12));
    }

    #[test]
    fn tent_bump_shape() {
        let bump = Bump::tent(0.4, 0.05).unwrap();
        assert_eq!(bump.eval(0.0), 1.0);
        assert_eq!(bump.eval(0.3), 1.0);
        assert!((bump.eval(0.375) - 0.5).abs() < 1e-12);
        assert_eq!(bump.eval(0.4), 0.0);
        assert_eq!(bump.eval(0.9), 0.0);
        assert!((bump.lipschitz_constant() - 20.0).abs() < 1e-9);
        assert_eq!(bump.support_radius(), 0.4);
        assert!(Bump::new(vec![(0.0, 1.0), (1.2, 0.0)]).is_err());
    }

    #[test]
    fn nilsequence_at_origin_sums_bump() {
        let bump = Bump::tent(0.4, 0.05).unwrap();
        let p = HeisenbergPoint::identity(2);
        let v = nilsequence_value(&bump, &p);
        // Only n = 0 is inside the support.
        assert!((v.re - 1.0).abs() < 1e-12 && v.im.abs() < 1e-12);

        // A constant polynomial part rotates the value.
        let mut q = HeisenbergPoint::identity(2);
        q.poly.c = 0.25;
        let v = nilsequence_value(&bump, &q);
        assert!(v.re.abs() < 1e-12 && (v.im - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nilsequence_is_lattice_invariant() {
        let bump = Bump::tent(0.45, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let p = random_point(2, &mut rng);
            let l = random_lattice(2, &mut rng);
            let moved = heis_mul(&p, &l).unwrap();
            let a = nilsequence_value(&bump, &p);
            let c = nilsequence_value(&bump, &moved);
            assert!(
                (a - c).norm() < 1e-9,
                "lattice translate changed the value: {a} vs {c}"
            );
        }
    }

    #[test]
    fn translation_orbit_is_polynomial_into_the_quotient() {
        // Pure torus orbit: second differences of the wrapped section are
        // integral, the fibre stays at zero.
        let g = GroupSpec::parse("Z/7").unwrap();
        let points: Vec<HeisenbergPoint> = g
            .iter_elements()
            .map(|h| {
                let mut p = HeisenbergPoint::identity(1);
                p.x[0] = h.coords[0] as f64 / 7.0;
                p
            })
            .collect();
        let table =
            PolynomialMapTable::new(g, HeisenbergTarget { n: 1 }, points).unwrap();
        let out = is_polynomial(&table, 3, &PolyCheckConfig::default(), &Budget::default())
            .unwrap();
        assert!(out.polynomial, "witness: {:?}", out.witness);
    }

    #[test]
    fn quadratic_phase_orbit_is_polynomial_into_the_quotient() {
        // Orbit of the shape produced by a quadratic phase of even
        // denominator: constant coefficient m^2/16 over the section m/8.
        let g = GroupSpec::parse("Z/8").unwrap();
        let points: Vec<HeisenbergPoint> = g
            .iter_elements()
            .map(|h| {
                let m = h.coords[0] as f64;
                let mut p = HeisenbergPoint::identity(1);
                p.x[0] = m / 8.0;
                p.poly.c = (m * m / 16.0).fract();
                p
            })
            .collect();
        let table =
            PolynomialMapTable::new(g, HeisenbergTarget { n: 1 }, points).unwrap();
        let out = is_polynomial(&table, 3, &PolyCheckConfig::default(), &Budget::default())
            .unwrap();
        assert!(out.polynomial, "witness: {:?}", out.witness);
    }

    #[test]
    fn fractional_linear_fibre_over_wrapped_section_fails_depth_three() {
        // The lattice fibre is not normal, so a section that wraps while
        // carrying a non-integral linear coefficient leaks a fractional
        // constant into the third derivative. Such lifts need a character
        // correction before they certify.
        let g = GroupSpec::parse("Z/7").unwrap();
        let points: Vec<HeisenbergPoint> = g
            .iter_elements()
            .map(|h| {
                let mut p = HeisenbergPoint::identity(1);
                p.x[0] = h.coords[0] as f64 / 7.0;
                p.poly.lin[0] = 3.0 * h.coords[0] as f64 / 7.0;
                p
            })
            .collect();
        let table =
            PolynomialMapTable::new(g, HeisenbergTarget { n: 1 }, points).unwrap();
        let out = is_polynomial(&table, 3, &PolyCheckConfig::default(), &Budget::default())
            .unwrap();
        let w = out.witness.expect("expected a depth-3 witness");
        assert!(!out.polynomial);
        assert_eq!(w.order, 3);
    }

    #[test]
    fn cubic_orbit_is_not_polynomial() {
        let g = GroupSpec::parse("Z/7").unwrap();
        let points: Vec<HeisenbergPoint> = g
            .iter_elements()
            .map(|h| {
                let mut p = HeisenbergPoint::identity(1);
                let hf = h.coords[0] as f64;
                p.x[0] = (0.3 * hf * hf * hf).fract();
                p
            })
            .collect();
        let table =
            PolynomialMapTable::new(g, HeisenbergTarget { n: 1 }, points).unwrap();
        let out = is_polynomial(&table, 3, &PolyCheckConfig::default(), &Budget::default())
            .unwrap();
        assert!(!out.polynomial && out.witness.is_some());
    }

    #[test]
    fn spec_evaluation_matches_direct_value() {
        let g = GroupSpec::parse("Z/5").unwrap();
        let bump = Bump::tent(0.3, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let points: Vec<HeisenbergPoint> =
            (0..5).map(|_| random_point(1, &mut rng)).collect();
        let spec = NilsequenceSpec::new(g.clone(), 1, bump.clone(), points.clone()).unwrap();
        for (i, x) in g.iter_elements().enumerate() {
            assert_eq!(nilseq_eval(&spec, &x), nilsequence_value(&bump, &points[i]));
        }
    }
}
