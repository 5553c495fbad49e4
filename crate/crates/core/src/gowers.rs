use num::complex::Complex64;
use rayon::prelude::*;

use crate::budget::Budget;
use crate::fourier::{kahan_sum, DenseFunction, DftPlan};
use crate::group::{GroupElement, GroupSpec};
use crate::{Error, Result};

/// Highest uniformity degree handled by the norm evaluators.
pub const MAX_DEGREE: usize = 4;

/// A 2^d-tuple of functions entering a degree-d box inner product.
#[derive(Debug, Clone)]
pub struct GowersTuple {
    degree: usize,
    functions: Vec<DenseFunction>,
}

impl GowersTuple {
    pub fn new(degree: usize, functions: Vec<DenseFunction>) -> Result<Self> {
        if functions.len() != 1 << degree {
            return Err(Error::DimensionMismatch {
                expected: 1 << degree,
                got: functions.len(),
            });
        }
        let g = functions[0].group().clone();
        for f in &functions {
            if f.group() != &g {
                return Err(Error::Precondition(
                    "tuple functions live on different groups".into(),
                ));
            }
        }
        Ok(GowersTuple { degree, functions })
    }

    /// Diagonal tuple (f, f, ..., f).
    pub fn diagonal(degree: usize, f: DenseFunction) -> Self {
        GowersTuple {
            degree,
            functions: vec![f; 1 << degree],
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn group(&self) -> &GroupSpec {
        self.functions[0].group()
    }

    /// Functions in cube-vertex order: index w reads the bits of omega.
    pub fn functions(&self) -> &[DenseFunction] {
        &self.functions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Direct evaluation of the defining average.
    Naive,
    /// Spectral base case plus the derivative recursion.
    Fast,
}

/// Index arithmetic helper. For small groups a dense addition table makes
/// translated lookups one array access.
pub(crate) struct IndexArith {
    group: GroupSpec,
    n: usize,
    add_table: Option<Vec<u32>>,
    neg_table: Vec<u32>,
}

impl IndexArith {
    pub(crate) fn new(group: &GroupSpec) -> Self {
        let n = group.len();
        let neg_table = (0..n)
            .map(|i| group.index_of(&group.neg(&group.element_at(i))) as u32)
            .collect();
        let add_table = if (n as u128) * (n as u128) <= 1 << 22 {
            let mut t = vec![0u32; n * n];
            for i in 0..n {
                let xi = group.element_at(i);
                for j in 0..n {
                    t[i * n + j] = group.index_of(&group.add(&xi, &group.element_at(j))) as u32;
                }
            }
            Some(t)
        } else {
            None
        };
        IndexArith {
            group: group.clone(),
            n,
            add_table,
            neg_table,
        }
    }

    #[inline]
    pub(crate) fn add(&self, i: usize, j: usize) -> usize {
        match &self.add_table {
            Some(t) => t[i * self.n + j] as usize,
            None => self
                .group
                .index_of(&self.group.add(&self.group.element_at(i), &self.group.element_at(j))),
        }
    }

    #[inline]
    fn neg(&self, i: usize) -> usize {
        self.neg_table[i] as usize
    }
}

/// Multiplicative discrete derivative: (D_h f)(x) = f(x) conj(f(x - h)).
pub fn mult_derivative(f: &DenseFunction, h: &GroupElement) -> DenseFunction {
    let g = f.group();
    let vals = f.values();
    let values = (0..vals.len())
        .map(|i| {
            let j = g.index_of(&g.sub(&g.element_at(i), h));
            vals[i] * vals[j].conj()
        })
        .collect();
    DenseFunction::new(g.clone(), values).expect("same group")
}

fn mult_derivative_indexed(vals: &[Complex64], arith: &IndexArith, h: usize) -> Vec<Complex64> {
    let neg_h = arith.neg(h);
    (0..vals.len())
        .map(|i| vals[i] * vals[arith.add(i, neg_h)].conj())
        .collect()
}

/// Reference box inner product
///   <(f_w)>_d = E_{x, h_1..h_d} prod_w C^{|w|} f_w(x + w . h),
/// evaluated by the literal (d+1)-fold loop with compensated accumulation.
/// Work is |G|^{d+1} 2^d elementary products, checked against the budget.
pub fn gowers_inner(t: &GowersTuple, budget: &Budget) -> Result<Complex64> {
    let d = t.degree;
    if d > MAX_DEGREE {
        return Err(Error::Precondition(format!(
            "degree {d} exceeds supported maximum {MAX_DEGREE}"
        )));
    }
    let g = t.group();
    let n = g.len();
    let work = (n as u128).pow(d as u32 + 1) * (1u128 << d);
    budget.check_work(work)?;
    let arith = IndexArith::new(g);
    let vals: Vec<&[Complex64]> = t.functions.iter().map(|f| f.values()).collect();

    let m = 1usize << d;
    let mut h = vec![0usize; d];
    let mut omega_sums = vec![0usize; m];
    let mut acc = Complex64::new(0.0, 0.0);
    let mut comp = Complex64::new(0.0, 0.0);
    loop {
        // omega_sums[w] = index of w . h, built by reusing the prefix
        // without the lowest set bit.
        for w in 1..m {
            let low = w.trailing_zeros() as usize;
            omega_sums[w] = arith.add(omega_sums[w & (w - 1)], h[low]);
        }
        for x in 0..n {
            let mut term = Complex64::new(1.0, 0.0);
            for (w, &s) in omega_sums.iter().enumerate() {
                let v = vals[w][arith.add(x, s)];
                term *= if (w.count_ones() & 1) == 1 { v.conj() } else { v };
            }
            // Neumaier step.
            let t2 = acc + term;
            comp += Complex64::new(
                if acc.re.abs() >= term.re.abs() {
                    (acc.re - t2.re) + term.re
                } else {
                    (term.re - t2.re) + acc.re
                },
                if acc.im.abs() >= term.im.abs() {
                    (acc.im - t2.im) + term.im
                } else {
                    (term.im - t2.im) + acc.im
                },
            );
            acc = t2;
        }
        // Odometer over (h_1, ..., h_d).
        let mut k = 0;
        while k < d {
            h[k] += 1;
            if h[k] < n {
                break;
            }
            h[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    let total = (n as f64).powi(d as i32 + 1);
    Ok((acc + comp) / total)
}

/// Direct evaluation of the defining average for the diagonal tuple,
/// restructured so the innermost shift average factors into |E_x W|^2:
///   ||f||_{U^d}^{2^d} = E_{h_1..h_{d-1}} |E_x prod_{w'} C^{|w'|} f(x + w'.h)|^2.
/// This is an exact regrouping of the same sum, with no spectral shortcut,
/// and costs |G|^d 2^{d-1} products.
fn norm_pow_naive(f: &DenseFunction, d: usize, budget: &Budget) -> Result<f64> {
    let g = f.group();
    let n = g.len();
    let work = (n as u128).pow(d as u32) * (1u128 << (d - 1));
    budget.check_work(work)?;
    let arith = IndexArith::new(g);
    let vals = f.values();

    if d == 1 {
        return Ok(f.mean().norm_sqr());
    }

    let dm1 = d - 1;
    let m = 1usize << dm1;
    let outer = n.pow(dm1 as u32 - 1) as usize; // tuples (h_2, ..., h_{d-1})

    // Parallelize over h_1; partial results are index-ordered then reduced
    // pairwise, so the outcome does not depend on the thread count.
    let per_h1: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|h1| {
            let mut omega_sums = vec![0usize; m];
            let mut rest = vec![0usize; dm1.saturating_sub(1)];
            let mut local = Vec::with_capacity(outer);
            loop {
                for w in 1..m {
                    let low = w.trailing_zeros() as usize;
                    let hv = if low == 0 { h1 } else { rest[low - 1] };
                    omega_sums[w] = arith.add(omega_sums[w & (w - 1)], hv);
                }
                let mut sum = Complex64::new(0.0, 0.0);
                for x in 0..n {
                    let mut term = Complex64::new(1.0, 0.0);
                    for (w, &s) in omega_sums.iter().enumerate() {
                        let v = vals[arith.add(x, s)];
                        term *= if (w.count_ones() & 1) == 1 { v.conj() } else { v };
                    }
                    sum += term;
                }
                local.push((sum / n as f64).norm_sqr());

                let mut k = 0;
                while k < rest.len() {
                    rest[k] += 1;
                    if rest[k] < n {
                        break;
                    }
                    rest[k] = 0;
                    k += 1;
                }
                if rest.is_empty() || k == rest.len() {
                    break;
                }
            }
            pairwise_sum(&local)
        })
        .collect();
    Ok(pairwise_sum(&per_h1) / (n as f64).powi(dm1 as i32))
}

/// Balanced pairwise summation; deterministic and accurate.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// ||f||_{U^d}^{2^d} in fast mode: spectral fourth moment at d = 2,
/// derivative recursion above, derivative average parallelized over h.
fn norm_pow_fast(
    vals: &[Complex64],
    d: usize,
    arith: &IndexArith,
    plan: &DftPlan,
    group: &GroupSpec,
    parallel: bool,
) -> f64 {
    match d {
        1 => (kahan_sum(vals.iter().copied()) / vals.len() as f64).norm_sqr(),
        2 => {
            let f = DenseFunction::new(group.clone(), vals.to_vec()).expect("length");
            plan.dft(&f).fourth_moment()
        }
        _ => {
            let n = vals.len();
            let body = |h: usize| {
                let dh = mult_derivative_indexed(vals, arith, h);
                norm_pow_fast(&dh, d - 1, arith, plan, group, false)
            };
            let per_h: Vec<f64> = if parallel {
                (0..n).into_par_iter().map(body).collect()
            } else {
                (0..n).map(body).collect()
            };
            pairwise_sum(&per_h) / n as f64
        }
    }
}

/// Gowers uniformity norm ||f||_{U^d} for 1 <= d <= 4.
///
/// `Naive` computes the defining average directly; `Fast` uses one FFT per
/// derivative at the U^2 base case. Both return a value in [0, sup |f|].
/// Results are independent of the rayon thread count: per-shift values are
/// collected in index order and reduced by balanced pairwise summation.
pub fn gowers_norm(f: &DenseFunction, d: usize, mode: NormMode, budget: &Budget) -> Result<f64> {
    if d == 0 || d > MAX_DEGREE {
        return Err(Error::Precondition(format!(
            "degree must lie in 1..={MAX_DEGREE}, got {d}"
        )));
    }
    let pow = match mode {
        NormMode::Naive => norm_pow_naive(f, d, budget)?,
        NormMode::Fast => {
            if d == 1 {
                return Ok(f.mean().norm());
            }
            let g = f.group();
            let arith = IndexArith::new(g);
            let plan = DftPlan::new(g);
            norm_pow_fast(f.values(), d, &arith, &plan, g, true)
        }
    };
    Ok(pow.max(0.0).powf(1.0 / (1u64 << d) as f64))
}
