use num::complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::group::{Frequency, GroupElement, GroupSpec};
use crate::{Error, Result};

/// Dense complex-valued function on a finite abelian group, stored in
/// enumeration order (mixed-radix lexicographic).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFunction {
    group: GroupSpec,
    values: Vec<Complex64>,
}

/// Fourier coefficients indexed by frequency in enumeration order, with
/// the normalization f_hat(xi) = E_x f(x) e(-xi . x).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    group: GroupSpec,
    values: Vec<Complex64>,
}

impl DenseFunction {
    pub fn new(group: GroupSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != group.len() {
            return Err(Error::DimensionMismatch {
                expected: group.len(),
                got: values.len(),
            });
        }
        Ok(DenseFunction { group, values })
    }

    pub fn from_fn(group: GroupSpec, f: impl Fn(&GroupElement) -> Complex64) -> Self {
        let values = group.iter_elements().map(|x| f(&x)).collect();
        DenseFunction { group, values }
    }

    pub fn constant(group: GroupSpec, c: Complex64) -> Self {
        let n = group.len();
        DenseFunction {
            group,
            values: vec![c; n],
        }
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn value(&self, x: &GroupElement) -> Complex64 {
        self.values[self.group.index_of(x)]
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Mean E_x f(x), compensated.
    pub fn mean(&self) -> Complex64 {
        kahan_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    /// Checks sup |f| <= 1 + tol.
    pub fn check_one_bounded(&self, tol: f64) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            let m = v.norm();
            if m > 1.0 + tol {
                return Err(Error::NotOneBounded {
                    index: i,
                    magnitude: m,
                });
            }
        }
        Ok(())
    }

    /// x |-> f(x + h).
    pub fn translate(&self, h: &GroupElement) -> Self {
        let g = &self.group;
        let values = (0..self.values.len())
            .map(|i| self.values[g.index_of(&g.add(&g.element_at(i), h))])
            .collect();
        DenseFunction {
            group: g.clone(),
            values,
        }
    }

    /// x |-> f(x) e(xi . x).
    pub fn modulate(&self, xi: &Frequency) -> Self {
        let g = self.group.clone();
        let values = g
            .iter_elements()
            .zip(&self.values)
            .map(|(x, v)| v * crate::group::pairing(&g, xi, &x).unit())
            .collect();
        DenseFunction { group: g, values }
    }
}

impl Spectrum {
    pub fn new(group: GroupSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != group.len() {
            return Err(Error::DimensionMismatch {
                expected: group.len(),
                got: values.len(),
            });
        }
        Ok(Spectrum { group, values })
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn coefficient(&self, xi: &Frequency) -> Complex64 {
        self.values[self.group.index_of_freq(xi)]
    }

    /// Sum of |coeff|^2; equals E |f|^2 by Parseval.
    pub fn energy(&self) -> f64 {
        kahan_sum_f64(self.values.iter().map(|v| v.norm_sqr()))
    }

    /// Sum of |coeff|^4; the fourth power of the U^2 norm.
    pub fn fourth_moment(&self) -> f64 {
        kahan_sum_f64(self.values.iter().map(|v| {
            let s = v.norm_sqr();
            s * s
        }))
    }
}

/// Neumaier-compensated complex summation.
pub fn kahan_sum(iter: impl Iterator<Item = Complex64>) -> Complex64 {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut c = Complex64::new(0.0, 0.0);
    for v in iter {
        let t = sum + v;
        let corr_re = if sum.re.abs() >= v.re.abs() {
            (sum.re - t.re) + v.re
        } else {
            (v.re - t.re) + sum.re
        };
        let corr_im = if sum.im.abs() >= v.im.abs() {
            (sum.im - t.im) + v.im
        } else {
            (v.im - t.im) + sum.im
        };
        c += Complex64::new(corr_re, corr_im);
        sum = t;
    }
    sum + c
}

/// Neumaier-compensated real summation.
pub fn kahan_sum_f64(iter: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in iter {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn smallest_factor(n: usize) -> usize {
    for p in [2, 3, 5] {
        if n % p == 0 {
            return p;
        }
    }
    n
}

fn is_smooth(mut n: usize) -> bool {
    for p in [2, 3, 5] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

enum AxisKernel {
    /// Power of two; iterative in-place radix-2.
    Pow2,
    /// 2/3/5-smooth; recursive mixed-radix.
    Smooth,
    /// Anything else; naive O(n^2) matrix application.
    Naive,
}

struct AxisPlan {
    n: usize,
    stride: usize,
    kernel: AxisKernel,
    /// Forward twiddles e(-2 pi i k / n) for k < n.
    twiddles: Vec<Complex64>,
}

/// Per-group transform plan. Twiddle tables are shared across calls and
/// across threads; the transform itself allocates only per-line scratch.
pub struct DftPlan {
    group: GroupSpec,
    axes: Vec<AxisPlan>,
}

impl DftPlan {
    pub fn new(group: &GroupSpec) -> Self {
        let orders = group.orders();
        let mut axes = Vec::with_capacity(orders.len());
        let mut stride = group.len();
        for &n in orders {
            let n = n as usize;
            stride /= n;
            let twiddles = (0..n)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
                .collect();
            let kernel = if n.is_power_of_two() {
                AxisKernel::Pow2
            } else if is_smooth(n) {
                AxisKernel::Smooth
            } else {
                AxisKernel::Naive
            };
            axes.push(AxisPlan {
                n,
                stride,
                kernel,
                twiddles,
            });
        }
        DftPlan {
            group: group.clone(),
            axes,
        }
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    /// Forward transform: f_hat(xi) = E_x f(x) e(-xi . x).
    pub fn dft(&self, f: &DenseFunction) -> Spectrum {
        assert_eq!(f.group(), &self.group, "plan group mismatch");
        let mut data = f.values().to_vec();
        self.transform(&mut data, false);
        let scale = 1.0 / data.len() as f64;
        for v in &mut data {
            *v *= scale;
        }
        Spectrum {
            group: self.group.clone(),
            values: data,
        }
    }

    /// Inverse transform: f(x) = sum_xi s(xi) e(xi . x).
    pub fn idft(&self, s: &Spectrum) -> DenseFunction {
        assert_eq!(s.group(), &self.group, "plan group mismatch");
        let mut data = s.values().to_vec();
        self.transform(&mut data, true);
        DenseFunction {
            group: self.group.clone(),
            values: data,
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        for axis in &self.axes {
            if axis.n == 1 {
                continue;
            }
            let block = axis.n * axis.stride;
            // Lines within one block are independent; blocks are independent.
            if data.len() >= 1 << 14 {
                data.par_chunks_mut(block)
                    .for_each(|chunk| transform_block(chunk, axis, inverse));
            } else {
                for chunk in data.chunks_mut(block) {
                    transform_block(chunk, axis, inverse);
                }
            }
        }
    }
}

fn transform_block(chunk: &mut [Complex64], axis: &AxisPlan, inverse: bool) {
    let n = axis.n;
    let stride = axis.stride;
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..stride {
        for k in 0..n {
            line[k] = chunk[t + k * stride];
        }
        dft_line(&mut line, axis, inverse);
        for k in 0..n {
            chunk[t + k * stride] = line[k];
        }
    }
}

fn tw(axis: &AxisPlan, idx: usize, inverse: bool) -> Complex64 {
    let v = axis.twiddles[idx % axis.n];
    if inverse {
        v.conj()
    } else {
        v
    }
}

fn dft_line(line: &mut [Complex64], axis: &AxisPlan, inverse: bool) {
    match axis.kernel {
        AxisKernel::Pow2 => fft_pow2(line, axis, inverse),
        AxisKernel::Smooth => {
            let out = fft_rec(line, line.len(), 1, 0, axis, inverse);
            line.copy_from_slice(&out);
        }
        AxisKernel::Naive => {
            let n = line.len();
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            for (k, o) in out.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, v) in line.iter().enumerate() {
                    acc += v * tw(axis, (j * k) % n, inverse);
                }
                *o = acc;
            }
            line.copy_from_slice(&out);
        }
    }
}

/// Iterative radix-2 with bit-reversal permutation.
fn fft_pow2(line: &mut [Complex64], axis: &AxisPlan, inverse: bool) {
    let n = line.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            line.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let w = tw(axis, k * step, inverse);
                let u = line[start + k];
                let v = line[start + k + len / 2] * w;
                line[start + k] = u + v;
                line[start + k + len / 2] = u - v;
            }
        }
        len <<= 1;
    }
}

/// Recursive mixed-radix decimation in time for 2/3/5-smooth lengths.
fn fft_rec(
    src: &[Complex64],
    n: usize,
    stride: usize,
    offset: usize,
    axis: &AxisPlan,
    inverse: bool,
) -> Vec<Complex64> {
    if n == 1 {
        return vec![src[offset]];
    }
    let r = smallest_factor(n);
    let m = n / r;
    let subs: Vec<Vec<Complex64>> = (0..r)
        .map(|i| fft_rec(src, m, stride * r, offset + i * stride, axis, inverse))
        .collect();
    let root_step = axis.n / n;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for q in 0..r {
        for k in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, sub) in subs.iter().enumerate() {
                acc += sub[k] * tw(axis, (j * (k + q * m) * root_step) % axis.n, inverse);
            }
            out[q * m + k] = acc;
        }
    }
    out
}

/// Forward transform with a throwaway plan.
pub fn dft(f: &DenseFunction) -> Spectrum {
    DftPlan::new(f.group()).dft(f)
}

/// Inverse transform with a throwaway plan.
pub fn idft(s: &Spectrum) -> DenseFunction {
    DftPlan::new(s.group()).idft(s)
}

/// O(|G|^2) double-loop reference transform.
pub fn dft_naive(f: &DenseFunction) -> Spectrum {
    let g = f.group();
    let elems: Vec<GroupElement> = g.iter_elements().collect();
    let values: Vec<Complex64> = g
        .iter_frequencies()
        .map(|xi| {
            kahan_sum(elems.iter().zip(f.values()).map(|(x, v)| {
                v * crate::group::pairing(g, &xi, x).unit().conj()
            })) / elems.len() as f64
        })
        .collect();
    Spectrum {
        group: g.clone(),
        values,
    }
}

/// Result of the U^2 peak extraction.
#[derive(Debug, Clone)]
pub struct U2Extract {
    pub frequency: Frequency,
    pub magnitude: f64,
    pub u2_norm: f64,
}

/// Largest Fourier coefficient of f, with the guarantee that for
/// 1-bounded f the peak magnitude is at least ||f||_{U^2}^2. Ties are
/// broken toward the earliest frequency in enumeration order.
///
/// When `checked` is set, the guarantee is verified at tolerance `tol`
/// and a violation (which would indicate an implementation bug) is
/// reported as an error.
pub fn u2_extract(f: &DenseFunction, eta: f64, checked: bool, tol: f64) -> Result<U2Extract> {
    f.check_one_bounded(1e-12)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Precondition(format!("eta = {eta} outside [0, 1]")));
    }
    let s = dft(f);
    let mut best = 0usize;
    let mut best_mag = -1.0f64;
    for (i, v) in s.values().iter().enumerate() {
        let m = v.norm();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    let u2 = s.fourth_moment().max(0.0).powf(0.25);
    if checked && u2 >= eta && best_mag < eta * eta - tol {
        return Err(Error::GuaranteeViolated(format!(
            "U^2 inverse: peak {best_mag} < eta^2 = {} with ||f||_U2 = {u2}",
            eta * eta
        )));
    }
    Ok(U2Extract {
        frequency: f.group().frequency_at(best),
        magnitude: best_mag,
        u2_norm: u2,
    })
}
