//! Randomly generated shift systems, Folner-box Host-Kra averages, and the
//! sampling identity that compares box averages with uniform ones.
//!
//! The free abelian group on countably many generators acts on a finite
//! group by sending the j-th generator to translation by a seeded random
//! element. Everything here is a finite, statistical shadow of an ergodic
//! limit: box averages approach uniform averages as the boxes grow, and the
//! summability bound `borel_cantelli_partial` quantifies how fast the
//! second moments decay.

use num::complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::budget::Budget;
use crate::fourier::{kahan_sum, kahan_sum_f64};
use crate::gowers::{GowersTuple, IndexArith};
use crate::group::{GroupElement, GroupSpec};
use crate::{Error, Result};

/// Default truncation of the generator sequence.
pub const DEFAULT_J_CAP: usize = 32;

/// Samples per parallel RNG stream; fixed so results do not depend on the
/// thread count.
const CHUNK: u64 = 1024;

/// Finitely many translations g_1..g_J of a finite abelian group, drawn
/// from a seeded generator. The j-th shift comes from its own RNG stream,
/// so extending a system preserves the shifts already drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSystem {
    group: GroupSpec,
    shifts: Vec<GroupElement>,
    seed: u64,
}

impl ShiftSystem {
    pub fn random(group: GroupSpec, j: usize, seed: u64) -> Self {
        let shifts = (0..j)
            .map(|stream| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream as u64);
                let idx = rng.random_range(0..group.cardinality());
                group.element_at(idx as usize)
            })
            .collect();
        ShiftSystem {
            group,
            shifts,
            seed,
        }
    }

    /// The same system with the generator count changed; shared prefixes
    /// are bitwise identical.
    pub fn extended(&self, j: usize) -> Self {
        ShiftSystem::random(self.group.clone(), j, self.seed)
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn shifts(&self) -> &[GroupElement] {
        &self.shifts
    }

    pub fn j(&self) -> usize {
        self.shifts.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The group element sum_j digits[j] g_j.
    pub fn offset(&self, digits: &[u64]) -> Result<GroupElement> {
        if digits.len() > self.shifts.len() {
            return Err(Error::Precondition(format!(
                "offset needs {} generators but the system has {}",
                digits.len(),
                self.shifts.len()
            )));
        }
        let mut acc = self.group.zero();
        for (d, g) in digits.iter().zip(&self.shifts) {
            acc = self.group.add(&acc, &self.group.scalar_mul(*d as i128, g));
        }
        Ok(acc)
    }
}

/// The box { sum_{j <= dims} a_j e_j : a_j in 0..=n } with
/// dims = min(2^n, j_cap); its cardinality is (n+1)^dims.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FolnerBox {
    n: usize,
    dims: usize,
}

impl FolnerBox {
    pub fn new(n: usize, j_cap: usize) -> Self {
        let dims = if n >= 63 {
            j_cap
        } else {
            (1usize << n).min(j_cap)
        };
        FolnerBox { n, dims }
    }

    pub fn standard(n: usize) -> Self {
        FolnerBox::new(n, DEFAULT_J_CAP)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of generator coordinates the box occupies.
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len_u128(&self) -> Option<u128> {
        (self.n as u128 + 1).checked_pow(self.dims as u32)
    }

    pub fn len_f64(&self) -> f64 {
        ((self.n + 1) as f64).powi(self.dims as i32)
    }

    fn sample_digits(&self, rng: &mut ChaCha8Rng) -> Vec<u64> {
        (0..self.dims)
            .map(|_| rng.random_range(0..=self.n as u64))
            .collect()
    }

    /// Distribution over the group of sum_j a_j g_j for a uniform box
    /// element, as a probability vector in enumeration order. Exact up to
    /// f64 rounding: the convolution of dims uniform steps.
    pub fn offset_distribution(&self, sys: &ShiftSystem) -> Result<Vec<f64>> {
        if self.dims > sys.j() {
            return Err(Error::Precondition(format!(
                "box spans {} generators but the system has {}; extend it first",
                self.dims,
                sys.j()
            )));
        }
        let g = sys.group();
        let order = g.len();
        let mut p = vec![0.0f64; order];
        p[g.index_of(&g.zero())] = 1.0;
        let w = 1.0 / (self.n as f64 + 1.0);
        for shift in &sys.shifts[..self.dims] {
            let mut next = vec![0.0f64; order];
            for a in 0..=self.n as i128 {
                let step = g.scalar_mul(a, shift);
                for x in 0..order {
                    if p[x] != 0.0 {
                        let y = g.index_of(&g.add(&g.element_at(x), &step));
                        next[y] += p[x] * w;
                    }
                }
            }
            p = next;
        }
        Ok(p)
    }
}

/// A local Host-Kra box average, exact or sampled.
#[derive(Debug, Clone, Copy)]
pub struct HkEstimate {
    pub value: Complex64,
    /// Standard error of the mean in sampled mode.
    pub std_error: Option<f64>,
    pub exact: bool,
    /// Monte Carlo draws used; 0 in exact mode.
    pub samples: u64,
}

/// Degree-d box inner product of a 2^d-tuple:
/// the average over h^0_i, h^1_i in the i-th box of
/// E_x prod_w C^{|w|} f_w(x + sum_i offset(h^{w_i}_i)).
///
/// Exact when the pair enumeration fits the budget; since the average
/// depends on the box elements only through their offset distributions,
/// the enumeration collapses to group-sized support products. Otherwise
/// Monte Carlo with the given sample count, parallel over fixed-size seed
/// streams so the result is independent of the thread count.
pub fn local_hk_estimate(
    sys: &ShiftSystem,
    tuple: &GowersTuple,
    boxes: &[FolnerBox],
    budget: &Budget,
    samples: u64,
    seed: u64,
) -> Result<HkEstimate> {
    let d = tuple.degree();
    if boxes.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: boxes.len(),
        });
    }
    if tuple.group() != sys.group() {
        return Err(Error::Precondition(
            "tuple functions and shift system live on different groups".into(),
        ));
    }
    if d == 0 {
        return Ok(HkEstimate {
            value: tuple.functions()[0].mean(),
            std_error: None,
            exact: true,
            samples: 0,
        });
    }
    for b in boxes {
        if b.dims() > sys.j() {
            return Err(Error::Precondition(format!(
                "box spans {} generators but the system has {}; extend it first",
                b.dims(),
                sys.j()
            )));
        }
    }

    let g = sys.group();
    let order = g.len();
    let m = 1usize << d;
    let collapsed: f64 = boxes
        .iter()
        .map(|b| b.len_f64().min(order as f64).powi(2))
        .product();
    let work = collapsed * (m * order) as f64;
    if collapsed <= budget.enumeration_cap as f64 && work <= budget.work_cap as f64 {
        let value = exact_box_inner(sys, tuple, boxes)?;
        return Ok(HkEstimate {
            value,
            std_error: None,
            exact: true,
            samples: 0,
        });
    }

    let vals: Vec<&[Complex64]> = tuple.functions().iter().map(|f| f.values()).collect();
    let arith = IndexArith::new(g);
    let chunks = samples.div_ceil(CHUNK);
    let partials: Vec<(Complex64, f64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut sum = Complex64::new(0.0, 0.0);
            let mut sumsq = 0.0f64;
            for _ in 0..count {
                let mut a0 = Vec::with_capacity(d);
                let mut a1 = Vec::with_capacity(d);
                for b in boxes {
                    let digits = b.sample_digits(&mut rng);
                    a0.push(g.index_of(&sys.offset(&digits).expect("checked dims")));
                    let digits = b.sample_digits(&mut rng);
                    a1.push(g.index_of(&sys.offset(&digits).expect("checked dims")));
                }
                let z = vertex_average(&vals, &arith, order, d, &a0, &a1);
                sum += z;
                sumsq += z.norm_sqr();
            }
            (sum, sumsq, count)
        })
        .collect();

    let total: u64 = partials.iter().map(|p| p.2).sum();
    let sum = kahan_sum(partials.iter().map(|p| p.0));
    let sumsq = kahan_sum_f64(partials.iter().map(|p| p.1));
    let mean = sum / total as f64;
    let var = ((sumsq - total as f64 * mean.norm_sqr()) / (total.max(2) - 1) as f64).max(0.0);
    Ok(HkEstimate {
        value: mean,
        std_error: Some((var / total as f64).sqrt()),
        exact: false,
        samples: total,
    })
}

/// E_x prod_w C^{|w|} f_w(x + sum_i a^{w_i}_i), all arguments as group
/// indices.
fn vertex_average(
    vals: &[&[Complex64]],
    arith: &IndexArith,
    order: usize,
    d: usize,
    a0: &[usize],
    a1: &[usize],
) -> Complex64 {
    let m = 1usize << d;
    let mut comb = vec![0usize; m];
    for w in 0..m {
        let mut idx = 0usize;
        for i in 0..d {
            let a = if w >> i & 1 == 1 { a1[i] } else { a0[i] };
            idx = arith.add(idx, a);
        }
        comb[w] = idx;
    }
    let mut z = Complex64::new(0.0, 0.0);
    for x in 0..order {
        let mut prod = Complex64::new(1.0, 0.0);
        for w in 0..m {
            let v = vals[w][arith.add(x, comb[w])];
            prod *= if (w.count_ones() & 1) == 1 { v.conj() } else { v };
        }
        z += prod;
    }
    z / order as f64
}

/// Exact evaluation through per-box offset distributions.
fn exact_box_inner(
    sys: &ShiftSystem,
    tuple: &GowersTuple,
    boxes: &[FolnerBox],
) -> Result<Complex64> {
    let g = sys.group();
    let order = g.len();
    let d = tuple.degree();
    let vals: Vec<&[Complex64]> = tuple.functions().iter().map(|f| f.values()).collect();
    let arith = IndexArith::new(g);

    // Support lists (group index, probability), one per box, reused for
    // both the h^0 and h^1 slot of that coordinate.
    let mut supports = Vec::with_capacity(d);
    for b in boxes {
        let p = b.offset_distribution(sys)?;
        let supp: Vec<(usize, f64)> = p
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, &w)| (i, w))
            .collect();
        supports.push(supp);
    }

    // Mixed-radix walk over the 2d slots: slot 2i is a^0_i, slot 2i+1 is
    // a^1_i.
    let slots = 2 * d;
    let radix: Vec<usize> = (0..slots).map(|s| supports[s / 2].len()).collect();
    let mut counter = vec![0usize; slots];
    let mut a0 = vec![0usize; d];
    let mut a1 = vec![0usize; d];
    let mut acc = Complex64::new(0.0, 0.0);
    let mut comp = Complex64::new(0.0, 0.0);
    loop {
        let mut weight = 1.0f64;
        for s in 0..slots {
            let (idx, w) = supports[s / 2][counter[s]];
            weight *= w;
            if s % 2 == 0 {
                a0[s / 2] = idx;
            } else {
                a1[s / 2] = idx;
            }
        }
        let term = vertex_average(&vals, &arith, order, d, &a0, &a1) * weight - comp;
        let next = acc + term;
        comp = (next - acc) - term;
        acc = next;

        let mut s = 0;
        loop {
            if s == slots {
                return Ok(acc);
            }
            counter[s] += 1;
            if counter[s] < radix[s] {
                break;
            }
            counter[s] = 0;
            s += 1;
        }
    }
}

/// Box average against uniform average of a two-point function, after
/// subtracting its uniform marginal mean.
#[derive(Debug, Clone, Copy)]
pub struct SamplingGapReport {
    /// |box average of the centered function|.
    pub gap: f64,
    /// Box average of the centered function.
    pub lhs: Complex64,
    /// Uniform mean subtracted from the function before averaging; this is
    /// the variance-reduction step, and adding it back recovers the raw
    /// box average.
    pub marginal_mean: Complex64,
    /// Mean square of the centered function under the uniform measure,
    /// when computed exactly.
    pub centered_energy: Option<f64>,
    pub lhs_exact: bool,
    pub rhs_exact: bool,
    pub lhs_std_error: Option<f64>,
    pub rhs_std_error: Option<f64>,
}

/// Compares E_{h^0, h^1 in box} H(offset(h^0), offset(h^1), g) with
/// E_{a^0, a^1 in G} H(a^0, a^1, g) for the system's shifts g. Both sides
/// are exact when the budgets allow (the box side again collapses through
/// the offset distribution), else sampled with a reported standard error.
pub fn sampling_gap(
    sys: &ShiftSystem,
    h: impl Fn(&GroupElement, &GroupElement, &[GroupElement]) -> Complex64 + Sync,
    bx: &FolnerBox,
    budget: &Budget,
    samples: u64,
    seed: u64,
) -> Result<SamplingGapReport> {
    if bx.dims() > sys.j() {
        return Err(Error::Precondition(format!(
            "box spans {} generators but the system has {}; extend it first",
            bx.dims(),
            sys.j()
        )));
    }
    let h = &h;
    let g = sys.group();
    let order = g.len();
    let elems: Vec<GroupElement> = g.iter_elements().collect();
    let pairs = (order as u128) * (order as u128);

    // Uniform side: the marginal mean and the centered second moment.
    let rhs_exact = pairs <= budget.enumeration_cap && pairs <= budget.work_cap;
    let (marginal_mean, centered_energy, rhs_std_error) = if rhs_exact {
        let mean = kahan_sum(
            elems
                .iter()
                .flat_map(|a| elems.iter().map(move |b| h(a, b, &sys.shifts))),
        ) / pairs as f64;
        let energy = kahan_sum_f64(elems.iter().flat_map(|a| {
            elems
                .iter()
                .map(move |b| (h(a, b, &sys.shifts) - mean).norm_sqr())
        })) / pairs as f64;
        (mean, Some(energy), None)
    } else {
        let (mean, se, _) = sample_pairs(samples, seed ^ 0x9e37_79b9_7f4a_7c15, |rng| {
            let a = &elems[rng.random_range(0..order)];
            let b = &elems[rng.random_range(0..order)];
            h(a, b, &sys.shifts)
        });
        (mean, None, Some(se))
    };

    // Box side on the centered function.
    let box_pairs = bx.len_f64().powi(2).min(pairs as f64);
    let lhs_exact = box_pairs <= budget.enumeration_cap as f64 && pairs <= budget.work_cap;
    let (lhs, lhs_std_error) = if lhs_exact {
        let p = bx.offset_distribution(sys)?;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut comp = Complex64::new(0.0, 0.0);
        for (i, &wi) in p.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            for (j, &wj) in p.iter().enumerate() {
                if wj == 0.0 {
                    continue;
                }
                let term =
                    (h(&elems[i], &elems[j], &sys.shifts) - marginal_mean) * (wi * wj) - comp;
                let next = acc + term;
                comp = (next - acc) - term;
                acc = next;
            }
        }
        (acc, None)
    } else {
        let (mean, se, _) = sample_pairs(samples, seed, |rng| {
            let a = sys.offset(&bx.sample_digits(rng)).expect("checked dims");
            let b = sys.offset(&bx.sample_digits(rng)).expect("checked dims");
            h(&a, &b, &sys.shifts) - marginal_mean
        });
        (mean, Some(se))
    };

    Ok(SamplingGapReport {
        gap: lhs.norm(),
        lhs,
        marginal_mean,
        centered_energy,
        lhs_exact,
        rhs_exact,
        lhs_std_error,
        rhs_std_error,
    })
}

/// Chunked parallel Monte Carlo mean of a complex draw; deterministic for
/// a fixed seed regardless of thread count.
fn sample_pairs(
    samples: u64,
    seed: u64,
    draw: impl Fn(&mut ChaCha8Rng) -> Complex64 + Sync,
) -> (Complex64, f64, u64) {
    let samples = samples.max(1);
    let chunks = samples.div_ceil(CHUNK);
    let partials: Vec<(Complex64, f64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut sum = Complex64::new(0.0, 0.0);
            let mut sumsq = 0.0f64;
            for _ in 0..count {
                let z = draw(&mut rng);
                sum += z;
                sumsq += z.norm_sqr();
            }
            (sum, sumsq, count)
        })
        .collect();
    let total: u64 = partials.iter().map(|p| p.2).sum();
    let sum = kahan_sum(partials.iter().map(|p| p.0));
    let sumsq = kahan_sum_f64(partials.iter().map(|p| p.1));
    let mean = sum / total as f64;
    let var = ((sumsq - total as f64 * mean.norm_sqr()) / (total.max(2) - 1) as f64).max(0.0);
    (mean, (var / total as f64).sqrt(), total)
}

/// Partial sum and certified tail of the second-moment series.
#[derive(Debug, Clone, Copy)]
pub struct SummabilityPartial {
    /// sum_{n=1}^{n_max} (1 - 1/(n+1)^8)^(floor(max((2^n - J)/2, 0))).
    pub partial: f64,
    /// Certified upper bound on the rest of the series.
    pub tail_bound: f64,
    /// Terms whose exponent clamps to zero; each contributes exactly 1.
    pub clamped_terms: u32,
}

/// Exponent floor(max((2^n - j)/2, 0)); None means the term is far past
/// the decay crossover and contributes nothing at f64 precision.
fn series_exponent(n: u32, j: u64) -> Option<u128> {
    if n >= 128 {
        return None;
    }
    Some((1u128 << n).saturating_sub(j as u128) / 2)
}

fn series_term(n: u32, j: u64) -> f64 {
    let Some(e) = series_exponent(n, j) else {
        return 0.0;
    };
    if e == 0 {
        return 1.0;
    }
    let q = ((n as f64) + 1.0).powi(8).recip();
    if e <= 64 {
        // Small exponents multiply out exactly; in particular the n=1
        // term is the dyadic 255/256 on the nose.
        (1.0 - q).powi(e as i32)
    } else {
        // ln_1p avoids forming 1 - q, whose rounding would be amplified
        // by the huge exponent.
        ((e as f64) * (-q).ln_1p()).exp()
    }
}

/// exp of minus exponent * q, an upper bound for the term since
/// 1 - q <= exp(-q).
fn series_term_majorant(n: u32, j: u64) -> f64 {
    let Some(e) = series_exponent(n, j) else {
        return 0.0;
    };
    (-(e as f64) * ((n as f64) + 1.0).powi(8).recip()).exp()
}

/// Partial sums of sum_n (1 - 1/(n+1)^8)^(floor(max((2^n - J)/2, 0))) with
/// a certified tail bound. Terms with 2^n <= J have exponent 0 and
/// contribute exactly 1; genuine decay only starts once 2^n outgrows
/// (n+1)^8, around n = 53.
pub fn borel_cantelli_partial(j: u64, n_max: u32) -> SummabilityPartial {
    let mut clamped = 0u32;
    let partial = kahan_sum_f64((1..=n_max).map(|n| {
        let t = series_term(n, j);
        if series_exponent(n, j) == Some(0) {
            clamped += 1;
        }
        t
    }));

    // Majorize every remaining term by exp(-e_n q_n) out to M, then close
    // with a geometric bound: for n >= M the ratio e_{n+1} q_{n+1} /
    // (e_n q_n) is at least 2 ((n+1)/(n+2))^8 >= 3/2 (n >= 30, 2^n >= 2J),
    // so the exponents grow at least like r (1 + k/2).
    let m = (n_max.max(64)).max(64 - (j.max(1).leading_zeros()) + 12);
    let mut tail = kahan_sum_f64((n_max + 1..=m).map(|n| series_term_majorant(n, j)));
    let r = {
        let e = series_exponent(m + 1, j).unwrap_or(u128::MAX) as f64;
        e * ((m as f64) + 2.0).powi(8).recip()
    };
    tail += if r > 100.0 {
        0.0
    } else {
        (-r).exp() / (1.0 - (-r / 2.0).exp())
    };
    SummabilityPartial {
        partial,
        tail_bound: tail,
        clamped_terms: clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::DenseFunction;
    use crate::gowers::gowers_inner;
    use std::f64::consts::TAU;

    fn character(g: &GroupSpec, xi: u64) -> DenseFunction {
        let n = g.len() as f64;
        DenseFunction::from_fn(g.clone(), |x| {
            Complex64::from_polar(1.0, TAU * (xi * x.coords[0]) as f64 / n)
        })
    }

    #[test]
    fn shift_systems_are_reproducible_and_prefix_stable() {
        let g = GroupSpec::parse("Z/101").unwrap();
        let a = ShiftSystem::random(g.clone(), 8, 7);
        let b = ShiftSystem::random(g.clone(), 8, 7);
        assert_eq!(a.shifts(), b.shifts());
        let c = ShiftSystem::random(g.clone(), 32, 7);
        assert_eq!(&c.shifts()[..8], a.shifts());
        assert_eq!(a.extended(32), c);
        let d = ShiftSystem::random(g, 8, 8);
        assert_ne!(a.shifts(), d.shifts());
    }

    #[test]
    fn folner_box_counts_match_the_side_and_dimension_formula() {
        let b = FolnerBox::standard(2);
        assert_eq!(b.dims(), 4);
        assert_eq!(b.len_u128(), Some(81));
        let b = FolnerBox::new(6, 3);
        assert_eq!(b.dims(), 3);
        assert_eq!(b.len_u128(), Some(343));
        let b = FolnerBox::standard(5);
        assert_eq!(b.dims(), 32);
        assert_eq!(b.len_u128(), Some(6u128.pow(32)));
        assert!((b.len_f64() / 6f64.powi(32) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_distribution_is_a_probability_vector() {
        let g = GroupSpec::parse("Z/101").unwrap();
        let sys = ShiftSystem::random(g, 32, 3);
        let p = FolnerBox::standard(3).offset_distribution(&sys).unwrap();
        assert!((kahan_sum_f64(p.iter().copied()) - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn degree_zero_estimate_is_the_plain_mean() {
        let g = GroupSpec::parse("Z/60").unwrap();
        let f = character(&g, 11);
        let sys = ShiftSystem::random(g, 4, 1);
        let tuple = GowersTuple::new(0, vec![f.clone()]).unwrap();
        let est = local_hk_estimate(&sys, &tuple, &[], &Budget::default(), 100, 0).unwrap();
        assert!(est.exact);
        assert_eq!(est.value, f.mean());
    }

    #[test]
    fn degree_one_exact_estimate_matches_the_literal_box_loop() {
        let g = GroupSpec::parse("Z/24").unwrap();
        let sys = ShiftSystem::random(g.clone(), 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut random_phase = |g: &GroupSpec| {
            let vals = (0..g.len())
                .map(|_| Complex64::from_polar(1.0, TAU * rng.random_range(0.0..1.0)))
                .collect();
            DenseFunction::new(g.clone(), vals).unwrap()
        };
        let f0 = random_phase(&g);
        let f1 = random_phase(&g);
        let bx = FolnerBox::standard(2);
        let tuple = GowersTuple::new(1, vec![f0.clone(), f1.clone()]).unwrap();
        let est = local_hk_estimate(&sys, &tuple, &[bx], &Budget::default(), 100, 0).unwrap();
        assert!(est.exact);

        // Literal loop over all 81^2 digit pairs.
        let mut digit_sets = vec![vec![]];
        for _ in 0..bx.dims() {
            let mut next = vec![];
            for t in &digit_sets {
                for a in 0..=bx.n() as u64 {
                    let mut t = t.clone();
                    t.push(a);
                    next.push(t);
                }
            }
            digit_sets = next;
        }
        assert_eq!(digit_sets.len(), 81);
        let mut slow = Complex64::new(0.0, 0.0);
        for h0 in &digit_sets {
            for h1 in &digit_sets {
                let a0 = sys.offset(h0).unwrap();
                let a1 = sys.offset(h1).unwrap();
                let inner = kahan_sum(g.iter_elements().map(|x| {
                    f0.value(&g.add(&x, &a0)) * f1.value(&g.add(&x, &a1)).conj()
                })) / g.len() as f64;
                slow += inner;
            }
        }
        slow /= (digit_sets.len() * digit_sets.len()) as f64;
        assert!((est.value - slow).norm() < 1e-12, "{} vs {slow}", est.value);
    }

    #[test]
    fn degree_one_character_estimate_matches_the_closed_form() {
        let g = GroupSpec::parse("Z/60").unwrap();
        let sys = ShiftSystem::random(g.clone(), 8, 9);
        let f = character(&g, 7);
        let bx = FolnerBox::standard(3);
        let tuple = GowersTuple::diagonal(1, f);
        let est = local_hk_estimate(&sys, &tuple, &[bx], &Budget::default(), 100, 0).unwrap();
        assert!(est.exact);

        // Independence of the digits factorizes the box average into a
        // product of one-dimensional character sums.
        let mut expect = 1.0f64;
        for shift in &sys.shifts()[..bx.dims()] {
            let s = kahan_sum((0..=bx.n() as u64).map(|a| {
                Complex64::from_polar(1.0, TAU * (a * 7 * shift.coords[0]) as f64 / 60.0)
            })) / (bx.n() as f64 + 1.0);
            expect *= s.norm_sqr();
        }
        assert!((est.value.re - expect).abs() < 1e-10);
        assert!(est.value.im.abs() < 1e-12);
        assert!(expect < 0.05, "shifts not generic enough: {expect}");
    }

    #[test]
    fn degree_two_exact_estimate_matches_the_literal_box_loop() {
        let g = GroupSpec::parse("Z/8").unwrap();
        let sys = ShiftSystem::random(g.clone(), 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let fs: Vec<DenseFunction> = (0..4)
            .map(|_| {
                let vals = (0..8)
                    .map(|_| Complex64::from_polar(1.0, TAU * rng.random_range(0.0..1.0)))
                    .collect();
                DenseFunction::new(g.clone(), vals).unwrap()
            })
            .collect();
        let bx = FolnerBox::new(1, 2);
        let tuple = GowersTuple::new(2, fs.clone()).unwrap();
        let est =
            local_hk_estimate(&sys, &tuple, &[bx, bx], &Budget::default(), 100, 0).unwrap();
        assert!(est.exact);

        let digits: Vec<Vec<u64>> = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
        let mut slow = Complex64::new(0.0, 0.0);
        let mut count = 0usize;
        for h in digits.iter() {
            for k in digits.iter() {
                for l in digits.iter() {
                    for m in digits.iter() {
                        let a = [sys.offset(h).unwrap(), sys.offset(k).unwrap()];
                        let b = [sys.offset(l).unwrap(), sys.offset(m).unwrap()];
                        // slot order: a = h^0_1, h^0_2; b = h^1_1, h^1_2
                        let inner = kahan_sum(g.iter_elements().map(|x| {
                            let mut prod = Complex64::new(1.0, 0.0);
                            for w in 0..4usize {
                                let mut y = x.clone();
                                y = g.add(
                                    &y,
                                    if w & 1 == 1 { &b[0] } else { &a[0] },
                                );
                                y = g.add(
                                    &y,
                                    if w >> 1 & 1 == 1 { &b[1] } else { &a[1] },
                                );
                                let v = fs[w].value(&y);
                                prod *= if w.count_ones() % 2 == 1 { v.conj() } else { v };
                            }
                            prod
                        })) / 8.0;
                        slow += inner;
                        count += 1;
                    }
                }
            }
        }
        slow /= count as f64;
        assert!((est.value - slow).norm() < 1e-12, "{} vs {slow}", est.value);
    }

    #[test]
    fn degree_two_sampled_estimate_tracks_the_exact_inner_product() {
        let g = GroupSpec::parse("Z/16").unwrap();
        let f = DenseFunction::from_fn(g.clone(), |x| {
            let q = (x.coords[0] * x.coords[0]) % 32;
            Complex64::from_polar(1.0, TAU * q as f64 / 32.0)
        });
        let oracle = gowers_inner(&GowersTuple::diagonal(2, f.clone()), &Budget::default())
            .unwrap();

        // A tiny enumeration cap forces Monte Carlo mode.
        let budget = Budget {
            enumeration_cap: 4,
            ..Budget::default()
        };
        let bx = FolnerBox::new(4, 16);
        let mut hits = 0;
        for seed in 0..20u64 {
            let sys = ShiftSystem::random(g.clone(), 16, 100 + seed);
            let tuple = GowersTuple::diagonal(2, f.clone());
            let est =
                local_hk_estimate(&sys, &tuple, &[bx, bx], &budget, 4000, seed).unwrap();
            assert!(!est.exact);
            let se = est.std_error.unwrap();
            let dev = (est.value - oracle).norm();
            assert!(dev <= 6.0 * se, "seed {seed}: deviation {dev} vs se {se}");
            if dev <= 3.0 * se {
                hits += 1;
            }
        }
        assert!(hits >= 16, "only {hits}/20 within three standard errors");
    }

    #[test]
    fn sampled_estimates_are_reproducible_and_consistent_with_exact() {
        let g = GroupSpec::parse("Z/24").unwrap();
        let sys = ShiftSystem::random(g.clone(), 8, 3);
        let f = character(&g, 5);
        let bx = FolnerBox::standard(2);
        let tuple = GowersTuple::diagonal(1, f);
        let exact = local_hk_estimate(&sys, &tuple, &[bx], &Budget::default(), 100, 0).unwrap();
        assert!(exact.exact);

        let budget = Budget {
            enumeration_cap: 4,
            ..Budget::default()
        };
        let s1 = local_hk_estimate(&sys, &tuple, &[bx], &budget, 20_000, 11).unwrap();
        let s2 = local_hk_estimate(&sys, &tuple, &[bx], &budget, 20_000, 11).unwrap();
        assert_eq!(s1.value, s2.value);
        assert_eq!(s1.samples, 20_000);
        let se = s1.std_error.unwrap();
        assert!((s1.value - exact.value).norm() <= 4.0 * se);
    }

    #[test]
    fn sampling_gap_vanishes_without_argument_dependence() {
        let g = GroupSpec::parse("Z/20").unwrap();
        let sys = ShiftSystem::random(g, 8, 2);
        let bx = FolnerBox::standard(2);
        let constant = |_: &GroupElement, _: &GroupElement, _: &[GroupElement]| {
            Complex64::new(0.7, 0.1)
        };
        let r = sampling_gap(&sys, constant, &bx, &Budget::default(), 100, 0).unwrap();
        assert!(r.lhs_exact && r.rhs_exact);
        assert_eq!(r.gap, 0.0);
        assert_eq!(r.centered_energy, Some(0.0));

        // Depending only on the shifts is just as invisible.
        let shift_only = |_: &GroupElement, _: &GroupElement, g: &[GroupElement]| {
            Complex64::from_polar(1.0, TAU * g[0].coords[0] as f64 / 20.0)
        };
        let r = sampling_gap(&sys, shift_only, &bx, &Budget::default(), 100, 0).unwrap();
        assert_eq!(r.gap, 0.0);
    }

    #[test]
    fn sampling_gap_of_a_character_shrinks_with_the_box() {
        let g = GroupSpec::parse("Z/101").unwrap();
        let h = |a: &GroupElement, b: &GroupElement, _: &[GroupElement]| {
            Complex64::from_polar(
                1.0,
                TAU * (a.coords[0] as f64 - b.coords[0] as f64) / 101.0,
            )
        };
        // Eight generators: the box dimension caps at 8, keeping the gaps
        // well above the f64 noise floor through n = 6.
        let mut medians = vec![];
        for n in 2..=6usize {
            let mut gaps: Vec<f64> = (0..20u64)
                .map(|seed| {
                    let sys = ShiftSystem::random(g.clone(), 8, seed);
                    sampling_gap(&sys, h, &FolnerBox::new(n, 8), &Budget::default(), 100, 0)
                        .unwrap()
                        .gap
                })
                .collect();
            gaps.sort_by(f64::total_cmp);
            medians.push((gaps[9] + gaps[10]) / 2.0);
        }
        for w in medians.windows(2) {
            assert!(w[1] < w[0], "medians not decreasing: {medians:?}");
        }
    }

    #[test]
    fn summability_first_term_and_clamped_prefix_are_exact() {
        let r = borel_cantelli_partial(0, 1);
        assert_eq!(r.partial, 255.0 / 256.0);
        assert_eq!(r.clamped_terms, 0);

        // 2^n <= 8 for n <= 3: three terms, each exactly 1.
        let r = borel_cantelli_partial(8, 3);
        assert_eq!(r.partial, 3.0);
        assert_eq!(r.clamped_terms, 3);
    }

    #[test]
    fn summability_partials_are_nondecreasing_and_certified() {
        let ns = [1u32, 2, 5, 10, 20, 30, 52, 62];
        let parts: Vec<SummabilityPartial> =
            ns.iter().map(|&n| borel_cantelli_partial(4, n)).collect();
        for w in parts.windows(2) {
            assert!(w[1].partial >= w[0].partial);
        }
        for (i, p) in parts.iter().enumerate() {
            for later in &parts[i..] {
                assert!(later.partial <= p.partial + p.tail_bound + 1e-12);
            }
        }
        // Terms only start decaying once 2^n outgrows (n+1)^8; past that
        // crossover the partial sums stabilize.
        let a = borel_cantelli_partial(4, 52).partial;
        let b = borel_cantelli_partial(4, 62).partial;
        assert!(b - a < 1e-6, "tail past the crossover too heavy: {}", b - a);
        // Before the crossover they still grow by about 1 per term.
        let grow =
            borel_cantelli_partial(4, 30).partial - borel_cantelli_partial(4, 20).partial;
        assert!(grow > 5.0, "pre-crossover growth vanished: {grow}");
    }

    #[test]
    fn boxes_beyond_the_generator_count_are_rejected() {
        let g = GroupSpec::parse("Z/12").unwrap();
        let sys = ShiftSystem::random(g.clone(), 2, 0);
        let bx = FolnerBox::standard(3);
        assert!(bx.offset_distribution(&sys).is_err());
        let f = character(&g, 1);
        let tuple = GowersTuple::diagonal(1, f);
        match local_hk_estimate(&sys, &tuple, &[bx], &Budget::default(), 10, 0) {
            Err(Error::Precondition(_)) => {}
            other => panic!("expected a precondition failure, got {other:?}"),
        }
    }
}
