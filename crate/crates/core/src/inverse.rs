//! Desk-scale inverse pipeline for the third Gowers norm: derivative
//! spectra, a locally linear frequency fit, midpoint symmetrization,
//! integration to a local quadratic phase, per-point frequency selection,
//! and the encoding of the result as a degree-2 nilsequence on the
//! Heisenberg nilmanifold.
//!
//! Every stage certifies its own output: fitted maps are re-verified for
//! local linearity, the symmetrized form for local bilinearity, the
//! integrated phase for vanishing third derivatives, and the nilmanifold
//! encoding for lattice well-definedness, polynomiality, and the window
//! evaluation identity. Reports carry enough data to recompute their
//! correlation from scratch.

use num::bigint::BigInt;
use num::complex::Complex64;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::bohr::{bohr_enumerate, find_regular_radius, is_regular, BohrSet, FrequencySet};
use crate::budget::Budget;
use crate::fourier::{kahan_sum, kahan_sum_f64, DenseFunction, DftPlan};
use crate::gowers::{gowers_norm, mult_derivative, IndexArith, NormMode};
use crate::group::{pairing, Frequency, GroupElement, GroupSpec};
use crate::heisenberg::{
    heis_inv, heis_mul, nilsequence_value, Bump, HeisenbergPoint, HeisenbergPoly,
    HeisenbergTarget, NilsequenceSpec,
};
use crate::hostkra::{is_polynomial, PolyCheckConfig, PolynomialMapTable};
use crate::lift::{build_lift, integrate_local, GlobalQuadraticPhase, LocalBilinearForm, LocalPhase};
use crate::torus::TorusValue;
use crate::{Error, Result};

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn frac(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn log2_ceil(n: u128) -> u128 {
    (128 - n.max(1).leading_zeros()) as u128
}

/// Per-shift spectral data: for every h the peak frequency of the
/// multiplicative derivative and the squared magnitude of its Fourier
/// coefficient. Weights lie in [0, 1] for 1-bounded inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyMap {
    group: GroupSpec,
    xi: Vec<Frequency>,
    weight: Vec<f64>,
}

impl FrequencyMap {
    pub fn new(group: GroupSpec, xi: Vec<Frequency>, weight: Vec<f64>) -> Result<Self> {
        let n = group.len();
        if xi.len() != n || weight.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: xi.len().max(weight.len()),
            });
        }
        for x in &xi {
            group.frequency(x.coords.clone())?;
        }
        if let Some(w) = weight.iter().find(|w| !(-1e-9..=1.0 + 1e-6).contains(*w)) {
            return Err(Error::Precondition(format!(
                "weight {w} outside [0, 1]"
            )));
        }
        Ok(FrequencyMap { group, xi, weight })
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn xi_at(&self, h: &GroupElement) -> &Frequency {
        &self.xi[self.group.index_of(h)]
    }

    pub fn weight_at(&self, h: &GroupElement) -> f64 {
        self.weight[self.group.index_of(h)]
    }

    pub fn entries(&self) -> impl Iterator<Item = (GroupElement, &Frequency, f64)> + '_ {
        self.group
            .iter_elements()
            .zip(&self.xi)
            .zip(&self.weight)
            .map(|((h, xi), &w)| (h, xi, w))
    }

    /// Compensated sum of all weights.
    pub fn total_weight(&self) -> f64 {
        kahan_sum_f64(self.weight.iter().copied())
    }
}

/// Peak frequency of every multiplicative derivative, by one transform
/// per shift. Ties break toward the earliest frequency in enumeration
/// order. With `checked` set, the summed weights are certified against
/// the eighth power of the third Gowers norm.
pub fn derivative_spectrum(
    f: &DenseFunction,
    checked: bool,
    tol: f64,
    budget: &Budget,
) -> Result<FrequencyMap> {
    f.check_one_bounded(1e-9)?;
    let g = f.group();
    let n = g.len();
    budget.check_work((n as u128).pow(2) * (log2_ceil(n as u128) + 1))?;
    let plan = DftPlan::new(g);
    let per_h: Vec<(Frequency, f64)> = (0..n)
        .into_par_iter()
        .map(|hi| {
            let h = g.element_at(hi);
            let spectrum = plan.dft(&mult_derivative(f, &h));
            let mut best = 0usize;
            let mut best_sq = -1.0f64;
            for (i, v) in spectrum.values().iter().enumerate() {
                let m = v.norm_sqr();
                if m > best_sq {
                    best_sq = m;
                    best = i;
                }
            }
            (g.frequency_at(best), best_sq)
        })
        .collect();
    let (xi, weight): (Vec<Frequency>, Vec<f64>) = per_h.into_iter().unzip();
    // Clamp roundoff above 1; the constructor rejects anything material.
    let weight: Vec<f64> = weight.into_iter().map(|w| w.min(1.0)).collect();
    if checked {
        let u3 = gowers_norm(f, 3, NormMode::Fast, budget)?;
        let total = kahan_sum_f64(weight.iter().copied());
        let bound = u3.powi(8) * n as f64 - tol;
        if total < bound {
            return Err(Error::GuaranteeViolated(format!(
                "summed spectral weights {total} fall below the norm energy bound {bound}"
            )));
        }
    }
    FrequencyMap::new(g.clone(), xi, weight)
}

/// A map from a Bohr set into the dual group, stored per member.
#[derive(Debug, Clone)]
pub struct LocalLinearMap {
    domain: BohrSet,
    values: Vec<Frequency>,
    /// Generator images when the map came from a homomorphism fit; empty
    /// for table-built maps.
    columns: Vec<Frequency>,
}

impl LocalLinearMap {
    pub fn new(domain: BohrSet, values: Vec<Frequency>) -> Result<Self> {
        if values.len() != domain.cardinality() {
            return Err(Error::DimensionMismatch {
                expected: domain.cardinality(),
                got: values.len(),
            });
        }
        let g = domain.group().clone();
        for v in &values {
            g.frequency(v.coords.clone())?;
        }
        Ok(LocalLinearMap {
            domain,
            values,
            columns: Vec::new(),
        })
    }

    pub fn domain(&self) -> &BohrSet {
        &self.domain
    }

    pub fn generator_images(&self) -> &[Frequency] {
        &self.columns
    }

    pub fn value(&self, x: &GroupElement) -> Option<&Frequency> {
        let idx = self.domain.group().index_of(x);
        let pos = self.domain.member_indices().binary_search(&idx).ok()?;
        Some(&self.values[pos])
    }

    /// Exhaustive additivity check over member pairs whose sum stays in
    /// the domain.
    pub fn verify_locally_linear(&self, budget: &Budget) -> Result<()> {
        let g = self.domain.group();
        let members = self.domain.members();
        budget.check_work((members.len() as u128).pow(2))?;
        for (i, h) in members.iter().enumerate() {
            for (j, k) in members.iter().enumerate() {
                let sum = g.add(h, k);
                let Some(at_sum) = self.value(&sum) else { continue };
                let expected = g.add_freq(&self.values[i], &self.values[j]);
                if *at_sum != expected {
                    return Err(Error::GuaranteeViolated(format!(
                        "map is not locally linear at h = {h:?}, k = {k:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Outcome of the locally linear fit.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub map: LocalLinearMap,
    /// Weighted fraction of the domain where the map matches the
    /// frequency data.
    pub agreement: f64,
    /// Whether the full candidate space was searched.
    pub exhaustive: bool,
}

/// Candidate images of the j-th generator: frequencies killed by the
/// generator's order, in enumeration order.
fn column_candidates(g: &GroupSpec, j: usize) -> Vec<Frequency> {
    let orders = g.orders();
    let k = orders.len();
    let counts: Vec<u64> = (0..k)
        .map(|i| num::integer::gcd(orders[i], orders[j]))
        .collect();
    let total: u64 = counts.iter().product();
    let mut out = Vec::with_capacity(total as usize);
    let mut t = vec![0u64; k];
    loop {
        let coords: Vec<u64> = (0..k).map(|i| t[i] * (orders[i] / counts[i])).collect();
        out.push(Frequency { coords });
        let mut pos = k;
        while pos > 0 {
            pos -= 1;
            t[pos] += 1;
            if t[pos] < counts[pos] {
                break;
            }
            t[pos] = 0;
            if pos == 0 {
                return out;
            }
        }
    }
}

fn apply_columns(g: &GroupSpec, columns: &[Frequency], h: &GroupElement) -> Frequency {
    let k = g.rank();
    let mut coords = vec![0i128; k];
    for (j, col) in columns.iter().enumerate() {
        let hj = h.coords[j] as i128;
        for i in 0..k {
            coords[i] += col.coords[i] as i128 * hj;
        }
    }
    g.frequency_mod(&coords)
}

/// Fit a locally linear map against the frequency data, maximizing the
/// weight mass of agreeing shifts over Bohr(S, 2 rho). The search runs
/// over restrictions of group homomorphisms into the dual: exhaustively
/// when the candidate space fits the work budget, otherwise by
/// coordinate-ascent sweeps over generator images.
pub fn fit_locally_linear(
    fm: &FrequencyMap,
    s: &FrequencySet,
    rho: &BigRational,
    budget: &Budget,
) -> Result<LinearFit> {
    let g = fm.group();
    if g != s.group() {
        return Err(Error::Precondition(
            "frequency map and frequency set live on different groups".into(),
        ));
    }
    let decision = is_regular(s, rho, budget)?;
    if !decision.regular {
        return Err(Error::Precondition(format!(
            "Bohr set at radius {rho} is not regular"
        )));
    }
    let two_rho = rho * ratio(2, 1);
    let dom = bohr_enumerate(s, &two_rho, budget)?;
    let members = dom.members();
    let weights: Vec<f64> = members.iter().map(|h| fm.weight_at(h)).collect();
    let targets: Vec<&Frequency> = members.iter().map(|h| fm.xi_at(h)).collect();
    let total_mass = kahan_sum_f64(weights.iter().copied());

    let k = g.rank();
    let candidates: Vec<Vec<Frequency>> = (0..k).map(|j| column_candidates(g, j)).collect();
    let mass_of = |columns: &[Frequency]| -> f64 {
        kahan_sum_f64(members.iter().enumerate().map(|(i, h)| {
            if apply_columns(g, columns, h) == *targets[i] {
                weights[i]
            } else {
                0.0
            }
        }))
    };

    let space: u128 = candidates
        .iter()
        .fold(1u128, |a, c| a.saturating_mul(c.len() as u128));
    let exhaustive_cost = space.saturating_mul(members.len() as u128);
    let mut columns: Vec<Frequency> = (0..k).map(|_| g.zero_frequency()).collect();
    let mut best_mass = mass_of(&columns);
    let exhaustive = budget.check_work(exhaustive_cost).is_ok();
    if exhaustive {
        let mut choice = vec![0usize; k];
        'homs: loop {
            // Advance the odometer; the all-zero map was already scored.
            let mut pos = 0;
            loop {
                if pos == k {
                    break 'homs;
                }
                choice[pos] += 1;
                if choice[pos] < candidates[pos].len() {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
            let cols: Vec<Frequency> = (0..k)
                .map(|j| candidates[j][choice[j]].clone())
                .collect();
            let mass = mass_of(&cols);
            if mass > best_mass {
                best_mass = mass;
                columns = cols;
            }
        }
    } else {
        let sweep_cost: u128 = candidates
            .iter()
            .map(|c| c.len() as u128 * members.len() as u128)
            .sum();
        budget.check_work(sweep_cost.saturating_mul(8))?;
        for _ in 0..8 {
            let mut improved = false;
            for j in 0..k {
                let mut best_here = columns[j].clone();
                let mut trial = columns.clone();
                for cand in &candidates[j] {
                    trial[j] = cand.clone();
                    let mass = mass_of(&trial);
                    if mass > best_mass {
                        best_mass = mass;
                        best_here = cand.clone();
                        improved = true;
                    }
                }
                columns[j] = best_here;
            }
            if !improved {
                break;
            }
        }
    }

    let values: Vec<Frequency> = members
        .iter()
        .map(|h| apply_columns(g, &columns, h))
        .collect();
    let map = LocalLinearMap {
        domain: dom,
        values,
        columns,
    };
    map.verify_locally_linear(budget)?;
    let agreement = if total_mass > 0.0 {
        best_mass / total_mass
    } else {
        0.0
    };
    Ok(LinearFit {
        map,
        agreement,
        exhaustive,
    })
}

/// Midpoint symmetrization of a locally linear map.
#[derive(Debug, Clone)]
pub struct SymmetrizedForm {
    pub form: LocalBilinearForm,
    /// Largest observed |Delta(x, z)|, half the circle distance between
    /// the two pairing orders.
    pub max_asymmetry: BigRational,
}

/// Split M x . z into a symmetric part and a small defect: B(x, z) is the
/// unique midpoint with M x . z = B + Delta and M z . x = B - Delta,
/// |Delta| < 1/20. Requires the two orders to stay within circle
/// distance 1/10 on every pair of Bohr(S, rho); the map must cover that
/// set.
pub fn symmetrize(
    m: &LocalLinearMap,
    s: &FrequencySet,
    rho: &BigRational,
    budget: &Budget,
) -> Result<SymmetrizedForm> {
    let g = s.group();
    let dom = bohr_enumerate(s, rho, budget)?;
    let members = dom.members();
    budget.check_work((members.len() as u128).pow(2))?;
    let images: Vec<&Frequency> = members
        .iter()
        .map(|x| {
            m.value(x).ok_or_else(|| {
                Error::Precondition(format!(
                    "linear map does not cover the working Bohr set at {x:?}"
                ))
            })
        })
        .collect::<Result<_>>()?;

    let tenth = ratio(1, 10);
    let zero = TorusValue::zero();
    let mut table = vec![vec![zero; members.len()]; members.len()];
    let mut max_asym = BigRational::zero();
    for i in 0..members.len() {
        for j in i..members.len() {
            let u = pairing(g, images[i], &members[j]);
            let v = pairing(g, images[j], &members[i]);
            let delta = &u - &v;
            let dist = delta.dist_to_int().rational().clone();
            if dist >= tenth {
                return Err(Error::AsymmetryTooLarge {
                    x: members[i].clone(),
                    z: members[j].clone(),
                    asymmetry: frac(&dist),
                });
            }
            // Half the centered representative stays within 1/20, making
            // the midpoint unambiguous.
            let half_delta = delta.centered() / ratio(2, 1);
            let b = TorusValue::from_rational(v.rational() + &half_delta);
            table[i][j] = b.clone();
            table[j][i] = b;
            let asym = half_delta.abs();
            if asym > max_asym {
                max_asym = asym;
            }
        }
    }
    let form = LocalBilinearForm::new(dom, table)?;
    form.verify_locally_bilinear(budget)?;
    Ok(SymmetrizedForm {
        form,
        max_asymmetry: max_asym,
    })
}

/// Pipeline thresholds. Every cutoff the extraction uses is visible
/// here; nothing is hard-coded downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseConfig {
    /// Minimum weighted agreement before the fit stops growing the
    /// frequency set.
    pub agreement_floor: f64,
    /// Correlation below this flags the report instead of failing it.
    pub correlation_floor: f64,
    /// Radius for the first fit attempt.
    #[serde(with = "crate::torus::rational_string")]
    pub initial_rho: BigRational,
    /// Multiplier applied to the radius when symmetrization rejects.
    #[serde(with = "crate::torus::rational_string")]
    pub shrink: BigRational,
    /// Bump shoulder width as a fraction of the final radius.
    pub smoothing_fraction: f64,
    /// Cap on the frequency set size during fit growth.
    pub max_frequencies: usize,
}

impl InverseConfig {
    pub fn for_eta(eta: f64) -> Self {
        InverseConfig {
            agreement_floor: 0.5,
            correlation_floor: eta.powi(3),
            initial_rho: ratio(1, 5),
            shrink: ratio(1, 8),
            smoothing_fraction: 0.125,
            max_frequencies: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InverseDiagnostics {
    pub u3_norm: f64,
    pub eta: f64,
    pub agreement: f64,
    pub fit_exhaustive: bool,
    pub agreement_flagged: bool,
    /// Fraction strings; empty when the stage did not run.
    pub max_asymmetry: String,
    pub symmetrize_radius: String,
    pub enumeration_cap: u128,
    pub work_cap: u128,
    pub agreement_floor: f64,
    pub correlation_floor: f64,
    pub timings: Vec<StageTiming>,
}

/// Full output of the extraction pipeline. The correlation is the mean
/// over x of the peak modulus of the Bohr-windowed, phase-corrected
/// average, and can be recomputed from the other fields alone.
#[derive(Debug, Clone)]
pub struct InverseReport {
    pub s: FrequencySet,
    /// Certified radius of the phase domain.
    pub rho: BigRational,
    pub regular: bool,
    pub phase: LocalPhase,
    /// Peak frequency per x; None where the windowed average vanishes.
    pub xi: Vec<Option<Frequency>>,
    pub correlation: f64,
    pub global: GlobalQuadraticPhase,
    pub below_floor: bool,
    pub diagnostics: InverseDiagnostics,
}

/// Windowed mean at one point and frequency: the average over the phase
/// domain of f(x + h) e(-phi(h) - xi . h).
fn window_mean(
    f: &DenseFunction,
    phase: &LocalPhase,
    arith: &IndexArith,
    x_idx: usize,
    xi: &Frequency,
) -> Complex64 {
    let g = f.group();
    let dom = phase.domain();
    let vals = f.values();
    let terms = dom
        .member_indices()
        .iter()
        .zip(dom.members())
        .zip(phase.values())
        .map(|((&h_idx, h), phi)| {
            let w = (phi + &pairing(g, xi, h)).unit().conj();
            vals[arith.add(x_idx, h_idx)] * w
        });
    kahan_sum(terms) / dom.cardinality() as f64
}

impl InverseReport {
    pub fn group(&self) -> &GroupSpec {
        self.s.group()
    }

    /// Recompute the correlation by literal averaging from (f, S, rho,
    /// phi, xi), independently of the transform-based pipeline path.
    pub fn recompute_correlation(&self, f: &DenseFunction) -> Result<f64> {
        let g = self.group();
        if f.group() != g {
            return Err(Error::Precondition(
                "function lives on a different group than the report".into(),
            ));
        }
        let arith = IndexArith::new(g);
        let per_x: Vec<f64> = (0..g.len())
            .map(|x_idx| match &self.xi[x_idx] {
                Some(xi) => window_mean(f, &self.phase, &arith, x_idx, xi).norm(),
                None => 0.0,
            })
            .collect();
        Ok(kahan_sum_f64(per_x.into_iter()) / g.len() as f64)
    }

    /// JSON document with fractions as strings.
    pub fn to_json(&self) -> serde_json::Value {
        let phase_members: Vec<Vec<u64>> = self
            .phase
            .domain()
            .members()
            .iter()
            .map(|x| x.coords.clone())
            .collect();
        let phase_values: Vec<String> = self
            .phase
            .values()
            .iter()
            .map(|v| v.fraction_string())
            .collect();
        let xi: Vec<serde_json::Value> = self
            .xi
            .iter()
            .map(|x| match x {
                Some(f) => serde_json::json!(f.coords),
                None => serde_json::Value::Null,
            })
            .collect();
        let lift = self.global.lift();
        let basis: Vec<Vec<String>> = lift
            .basis()
            .iter()
            .map(|row| row.iter().map(frac).collect())
            .collect();
        serde_json::json!({
            "group": self.group().to_string(),
            "frequencies": self.s.freqs().iter().map(|x| x.coords.clone()).collect::<Vec<_>>(),
            "rho": frac(&self.rho),
            "regular": self.regular,
            "phase": { "members": phase_members, "values": phase_values },
            "xi": xi,
            "correlation": self.correlation,
            "below_floor": self.below_floor,
            "lift": { "rank": lift.rank(), "basis": basis, "kernel_size": lift.kernel().len() },
            "diagnostics": serde_json::to_value(&self.diagnostics).unwrap_or(serde_json::Value::Null),
        })
    }
}

/// Peak frequency of the windowed, phase-corrected average at every x,
/// by one transform per point, plus the mean peak modulus. Ties break
/// toward the earliest frequency.
pub fn frequency_choices(
    f: &DenseFunction,
    phase: &LocalPhase,
    budget: &Budget,
) -> Result<(Vec<Option<Frequency>>, f64)> {
    let g = f.group();
    let n = g.len();
    let dom = phase.domain();
    let b_len = dom.cardinality();
    budget.check_work((n as u128).pow(2) * (log2_ceil(n as u128) + 1))?;
    let plan = DftPlan::new(g);
    let arith = IndexArith::new(g);
    let window: Vec<(usize, Complex64)> = dom
        .member_indices()
        .iter()
        .zip(phase.values())
        .map(|(&h_idx, phi)| (h_idx, phi.unit().conj()))
        .collect();
    let vals = f.values();
    let per_x: Vec<(Option<Frequency>, f64)> = (0..n)
        .into_par_iter()
        .map(|x_idx| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for &(h_idx, w) in &window {
                buf[h_idx] = vals[arith.add(x_idx, h_idx)] * w;
            }
            let windowed = DenseFunction::new(g.clone(), buf).expect("length matches");
            let spectrum = plan.dft(&windowed);
            let mut best = 0usize;
            let mut best_sq = -1.0f64;
            for (i, v) in spectrum.values().iter().enumerate() {
                let m = v.norm_sqr();
                if m > best_sq {
                    best_sq = m;
                    best = i;
                }
            }
            if best_sq <= 0.0 {
                (None, 0.0)
            } else {
                // The transform averages over all of G; renormalize to a
                // mean over the window.
                let peak = best_sq.sqrt() * n as f64 / b_len as f64;
                (Some(g.frequency_at(best)), peak)
            }
        })
        .collect();
    let (xi, peaks): (Vec<Option<Frequency>>, Vec<f64>) = per_x.into_iter().unzip();
    let correlation = kahan_sum_f64(peaks.into_iter()) / n as f64;
    Ok((xi, correlation))
}

/// Run the whole chain on a 1-bounded function with third Gowers norm at
/// least eta: derivative spectrum, locally linear fit (growing the
/// frequency set only when the fit stays under the agreement floor),
/// midpoint symmetrization with radius shrinking, integration to a
/// certified local quadratic phase, and per-point frequency selection.
/// Low correlation flags the report; it is never manufactured.
pub fn extract_phase(
    f: &DenseFunction,
    eta: f64,
    config: &InverseConfig,
    budget: &Budget,
) -> Result<InverseReport> {
    f.check_one_bounded(1e-9)?;
    if !(0.0 < eta && eta <= 1.0) {
        return Err(Error::Precondition(format!("eta = {eta} outside (0, 1]")));
    }
    let g = f.group().clone();
    let mut timings = Vec::new();
    let mut mark = Instant::now();
    let record = |timings: &mut Vec<StageTiming>, stage: &str, mark: &mut Instant| {
        timings.push(StageTiming {
            stage: stage.to_string(),
            millis: mark.elapsed().as_secs_f64() * 1e3,
        });
        *mark = Instant::now();
    };

    let u3 = gowers_norm(f, 3, NormMode::Fast, budget)?;
    if u3 < eta {
        return Err(Error::NormGateFailed {
            measured: u3,
            required: eta,
        });
    }
    record(&mut timings, "norm gate", &mut mark);

    let fm = derivative_spectrum(f, false, 0.0, budget)?;
    record(&mut timings, "derivative spectrum", &mut mark);

    let mut s = FrequencySet::empty(g.clone());
    let mut rho = config.initial_rho.clone();
    let mut fit = fit_locally_linear(&fm, &s, &rho, budget)?;
    if fit.agreement < config.agreement_floor {
        let lo = ratio(1, 100);
        let hi = ratio(6, 25);
        'grow: while s.len() < config.max_frequencies
            && fit.agreement < config.agreement_floor
        {
            let mut best: Option<(FrequencySet, BigRational, LinearFit)> = None;
            for cand in g.iter_frequencies() {
                if cand == g.zero_frequency() || s.freqs().contains(&cand) {
                    continue;
                }
                let mut freqs = s.freqs().to_vec();
                freqs.push(cand);
                let Ok(grown) = FrequencySet::new(g.clone(), freqs) else { continue };
                let Ok(r) = find_regular_radius(&grown, &lo, &hi, budget) else { continue };
                match fit_locally_linear(&fm, &grown, &r, budget) {
                    Ok(trial) => {
                        if best
                            .as_ref()
                            .is_none_or(|(_, _, b)| trial.agreement > b.agreement)
                        {
                            best = Some((grown, r, trial));
                        }
                    }
                    Err(Error::WorkCapExceeded { .. })
                    | Err(Error::EnumerationCapExceeded { .. }) => break 'grow,
                    Err(e) => return Err(e),
                }
            }
            match best {
                Some((s2, r2, fit2)) if fit2.agreement > fit.agreement + 1e-12 => {
                    s = s2;
                    rho = r2;
                    fit = fit2;
                }
                _ => break,
            }
        }
    }
    let agreement_flagged = fit.agreement < config.agreement_floor;
    record(&mut timings, "linear fit", &mut mark);

    let mut rho_sym = rho.clone();
    let mut sym = None;
    for attempt in 0..5 {
        match symmetrize(&fit.map, &s, &rho_sym, budget) {
            Ok(v) => {
                sym = Some(v);
                break;
            }
            Err(e @ Error::AsymmetryTooLarge { .. }) => {
                if attempt == 4 {
                    return Err(e);
                }
                rho_sym = &rho_sym * &config.shrink;
            }
            Err(e) => return Err(e),
        }
    }
    let sym = sym.expect("loop either sets the form or returns");
    record(&mut timings, "symmetrize", &mut mark);

    let lift = build_lift(&s, budget)?;
    let data = integrate_local(&sym.form, &lift, budget)?;
    record(&mut timings, "integrate", &mut mark);

    let regular = match is_regular(&s, &data.rho_prime, budget) {
        Ok(d) => d.regular,
        Err(Error::RadiusOutOfRange { .. }) => false,
        Err(e) => return Err(e),
    };
    let (xi, correlation) = frequency_choices(f, &data.phase, budget)?;
    record(&mut timings, "frequency choice", &mut mark);

    let below_floor = correlation < config.correlation_floor;
    let diagnostics = InverseDiagnostics {
        u3_norm: u3,
        eta,
        agreement: fit.agreement,
        fit_exhaustive: fit.exhaustive,
        agreement_flagged,
        max_asymmetry: frac(&sym.max_asymmetry),
        symmetrize_radius: frac(&rho_sym),
        enumeration_cap: budget.enumeration_cap,
        work_cap: budget.work_cap,
        agreement_floor: config.agreement_floor,
        correlation_floor: config.correlation_floor,
        timings,
    };
    Ok(InverseReport {
        s,
        rho: data.rho_prime,
        regular,
        phase: data.phase,
        xi,
        correlation,
        global: data.global,
        below_floor,
        diagnostics,
    })
}

/// A report's phase data encoded as a degree-2 nilsequence on
/// H(R^N)/H(Z^N) with N the frequency set size, together with the
/// verification byproducts.
#[derive(Debug, Clone)]
pub struct NilEncoding {
    pub spec: NilsequenceSpec,
    pub x0: GroupElement,
    /// Mean over h in G of f(x0 + h) conj(F(g(h))).
    pub correlation: Complex64,
    /// Sharp-window correlation at x0: modulus of the mean over the Bohr
    /// set of f(x0 + h) e(-phi(h) - xi(x0) . h).
    pub x0_window: f64,
    /// The same mass normalized over all of G.
    pub sharp_mass: f64,
    /// sharp_mass minus |correlation|: what the Lipschitz cutoff gave up.
    pub smoothing_loss: f64,
    /// Fiber character added to the lift so its values on the integer
    /// lattice vanish; all zero when the lift already had that property.
    pub gauge: Vec<BigRational>,
    /// Whether the depth-3 polynomial check was sampled rather than
    /// exhaustive.
    pub polynomial_sampled: bool,
}

/// Encode a report as a nilsequence: pigeonhole to the best base point,
/// smooth the window cutoff into a tent bump, Taylor-expand the gauged
/// global lift into per-element Heisenberg coordinates, and verify
/// lattice well-definedness, the depth-3 polynomial criterion, and the
/// window evaluation identity on every element. Verification failures
/// are hard errors.
pub fn encode_nilmanifold(
    f: &DenseFunction,
    report: &InverseReport,
    config: &InverseConfig,
    budget: &Budget,
) -> Result<NilEncoding> {
    let g = f.group();
    if g != report.group() {
        return Err(Error::Precondition(
            "function lives on a different group than the report".into(),
        ));
    }
    let lift = report.global.lift();
    let s_len = report.s.len();
    let n = g.len();
    let dom = report.phase.domain();
    budget.check_work(
        (n as u128) * (dom.cardinality() as u128 + (s_len as u128 + 2) * 4 + 8),
    )?;
    let arith = IndexArith::new(g);

    // Base point: argmax of the sharp-window mass, earliest index on ties.
    let mut x0_idx = 0usize;
    let mut x0_window = 0.0f64;
    let mut found = false;
    for x_idx in 0..n {
        let Some(xi) = &report.xi[x_idx] else { continue };
        let a = window_mean(f, &report.phase, &arith, x_idx, xi).norm();
        if !found || a > x0_window {
            found = true;
            x0_window = a;
            x0_idx = x_idx;
        }
    }
    let x0 = g.element_at(x0_idx);
    let xi0 = report.xi[x0_idx]
        .clone()
        .unwrap_or_else(|| g.zero_frequency());

    let rho_f = report.rho.to_f64().unwrap_or(f64::NAN);
    let bump = Bump::tent(rho_f, rho_f * config.smoothing_fraction)?;

    // Values of the lift at the lattice unit vectors decide the gauge:
    // subtracting their centered representatives as a character makes
    // every lattice value integral, provided the quadratic part already
    // is. A non-integral quadratic part cannot be repaired by any
    // character and is a construction error.
    let unit_theta = |j: usize, amount: i64| {
        let mut t = vec![BigRational::zero(); s_len];
        t[j] = BigRational::from(BigInt::from(amount));
        t
    };
    let eval_at = |x: &GroupElement, theta: Vec<BigRational>| -> Result<TorusValue> {
        report
            .global
            .eval_lifted(&lift.lift_with(x.clone(), theta)?)
    };
    let zero_el = g.zero();
    let mut unit_vals = Vec::with_capacity(s_len);
    let mut gauge = Vec::with_capacity(s_len);
    for j in 0..s_len {
        let v = eval_at(&zero_el, unit_theta(j, 1))?;
        gauge.push(-v.centered());
        unit_vals.push(v);
    }
    for j in 0..s_len {
        let twice = eval_at(&zero_el, unit_theta(j, 2))?;
        let second = &(&twice - &unit_vals[j]) - &unit_vals[j];
        if !second.is_zero() {
            return Err(Error::GuaranteeViolated(format!(
                "fiber quadratic form is not integral on the lattice: \
                 second difference {second} along generator {j}"
            )));
        }
    }
    for i in 0..s_len {
        for j in i + 1..s_len {
            let mut t = vec![BigRational::zero(); s_len];
            t[i] = BigRational::one();
            t[j] = BigRational::one();
            let both = eval_at(&zero_el, t)?;
            let mixed = &(&both - &unit_vals[i]) - &unit_vals[j];
            if !mixed.is_zero() {
                return Err(Error::GuaranteeViolated(format!(
                    "fiber quadratic form is not integral on the lattice: \
                     mixed difference {mixed} at generators {i}, {j}"
                )));
            }
        }
    }

    let chi = |theta: &[BigRational]| -> TorusValue {
        let mut acc = BigRational::zero();
        for (t, th) in gauge.iter().zip(theta) {
            acc += t * th;
        }
        TorusValue::from_rational(acc)
    };
    let psi = |x: &GroupElement, theta: Vec<BigRational>| -> Result<TorusValue> {
        let base = eval_at(x, theta.clone())?;
        Ok(&base + &chi(&theta))
    };

    // Taylor data per element: constant and first differences of the
    // gauged lift at the canonical coordinates, twisted by the base
    // frequency. The quadratic coefficients vanish modulo 1 by the gate
    // above, so one shared zero representative serves every element.
    let make_point = |h: &GroupElement, theta: &[BigRational]| -> Result<HeisenbergPoint> {
        let base_val = psi(h, theta.to_vec())?;
        let c = (&base_val + &pairing(g, &xi0, h)).as_f64();
        let mut lin = Vec::with_capacity(s_len);
        for i in 0..s_len {
            let mut shifted = theta.to_vec();
            shifted[i] += BigRational::one();
            lin.push((&psi(h, shifted)? - &base_val).as_f64());
        }
        Ok(HeisenbergPoint {
            x: theta.iter().map(|t| t.to_f64().unwrap_or(f64::NAN)).collect(),
            poly: HeisenbergPoly {
                c,
                lin,
                sq: vec![0.0; s_len],
                cross: vec![0.0; s_len * s_len.saturating_sub(1) / 2],
            },
        })
    };
    let thetas: Vec<Vec<BigRational>> = (0..n)
        .map(|idx| lift.canonical_lift(&g.element_at(idx)).theta)
        .collect();
    let points: Vec<HeisenbergPoint> = (0..n)
        .map(|idx| make_point(&g.element_at(idx), &thetas[idx]))
        .collect::<Result<_>>()?;

    // Lift independence: shifting the coordinates by lattice vectors must
    // move the point by a right factor with integer entries.
    if s_len > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let idx = rng.random_range(0..n);
            let mut offset = vec![0i64; s_len];
            while offset.iter().all(|&v| v == 0) {
                for v in offset.iter_mut() {
                    *v = rng.random_range(-2..=2);
                }
            }
            let shifted: Vec<BigRational> = thetas[idx]
                .iter()
                .zip(&offset)
                .map(|(t, &o)| t + BigRational::from(BigInt::from(o)))
                .collect();
            let alt = make_point(&g.element_at(idx), &shifted)?;
            let factor = heis_mul(&heis_inv(&points[idx]), &alt)?;
            if !factor.is_integral(1e-9) {
                return Err(Error::GuaranteeViolated(format!(
                    "lift choice at index {idx} with offset {offset:?} leaves the lattice"
                )));
            }
        }
    }

    let table = PolynomialMapTable::new(g.clone(), HeisenbergTarget { n: s_len }, points.clone())?;
    let outcome = is_polynomial(&table, 3, &PolyCheckConfig::default(), budget)?;
    if !outcome.polynomial {
        return Err(Error::GuaranteeViolated(format!(
            "orbit map fails the degree-2 criterion at witness {:?}",
            outcome.witness
        )));
    }

    // Window evaluation identity on every element: the nilsequence value
    // from the compact Taylor table must match the bump-weighted sum of
    // the gauged lift over the fiber, computed in exact arithmetic.
    let support = bump.support_radius();
    let mut corr_terms = Vec::with_capacity(n);
    for idx in 0..n {
        let h = g.element_at(idx);
        let theta = &thetas[idx];
        let theta_f: Vec<f64> = theta
            .iter()
            .map(|t| t.to_f64().unwrap_or(f64::NAN))
            .collect();
        let mut rhs = Complex64::new(0.0, 0.0);
        if s_len == 0 {
            let val = &psi(&h, Vec::new())? + &pairing(g, &xi0, &h);
            rhs = bump.eval(0.0) * val.unit();
        } else {
            let lo: Vec<i64> = theta_f.iter().map(|t| (-t - support).ceil() as i64).collect();
            let hi: Vec<i64> = theta_f.iter().map(|t| (-t + support).floor() as i64).collect();
            let mut off = lo.clone();
            'boxes: loop {
                let radius = theta_f
                    .iter()
                    .zip(&off)
                    .map(|(t, &o)| (t + o as f64).abs())
                    .fold(0.0f64, f64::max);
                let w = bump.eval(radius);
                if w != 0.0 {
                    let shifted: Vec<BigRational> = theta
                        .iter()
                        .zip(&off)
                        .map(|(t, &o)| t + BigRational::from(BigInt::from(o)))
                        .collect();
                    let val = &psi(&h, shifted)? + &pairing(g, &xi0, &h);
                    rhs += w * val.unit();
                }
                for pos in 0..s_len {
                    off[pos] += 1;
                    if off[pos] <= hi[pos] {
                        continue 'boxes;
                    }
                    off[pos] = lo[pos];
                }
                break;
            }
        }
        let lhs = nilsequence_value(&bump, &points[idx]);
        if (lhs - rhs).norm() > 1e-9 {
            return Err(Error::GuaranteeViolated(format!(
                "window evaluation identity fails at index {idx}: \
                 table value {lhs} vs fiber sum {rhs}"
            )));
        }
        corr_terms.push(f.values()[arith.add(x0_idx, idx)] * lhs.conj());
    }
    let correlation = kahan_sum(corr_terms.into_iter()) / n as f64;
    let sharp_mass = x0_window * dom.cardinality() as f64 / n as f64;
    let spec = NilsequenceSpec::new(g.clone(), s_len, bump, points)?;
    Ok(NilEncoding {
        spec,
        x0,
        correlation,
        x0_window,
        sharp_mass,
        smoothing_loss: sharp_mass - correlation.norm(),
        gauge,
        polynomial_sampled: outcome.sampled,
    })
}

/// Mean over h of f(x0 + h) conj(F(g(h))).
pub fn correlate(f: &DenseFunction, spec: &NilsequenceSpec, x0: &GroupElement) -> Result<Complex64> {
    let g = f.group();
    if g != &spec.group {
        return Err(Error::Precondition(
            "function and nilsequence live on different groups".into(),
        ));
    }
    let arith = IndexArith::new(g);
    let x0_idx = g.index_of(x0);
    let vals = f.values();
    let terms = (0..g.len()).map(|idx| {
        let fg = nilsequence_value(&spec.bump, &spec.points[idx]);
        vals[arith.add(x0_idx, idx)] * fg.conj()
    });
    Ok(kahan_sum(terms) / g.len() as f64)
}

/// Correlation plus the measured norm it certifies.
#[derive(Debug, Clone)]
pub struct CorrelationCheck {
    pub value: Complex64,
    pub u3_norm: f64,
    pub threshold: f64,
}

/// Like `correlate`, but also measures the third Gowers norm and asserts
/// the qualitative converse: correlation at least delta forces a nonzero
/// norm. Both numbers are returned for quantitative logging.
pub fn correlate_checked(
    f: &DenseFunction,
    spec: &NilsequenceSpec,
    x0: &GroupElement,
    delta: f64,
    budget: &Budget,
) -> Result<CorrelationCheck> {
    let value = correlate(f, spec, x0)?;
    let u3_norm = gowers_norm(f, 3, NormMode::Fast, budget)?;
    if value.norm() >= delta && !(u3_norm > 0.0) {
        return Err(Error::GuaranteeViolated(format!(
            "correlation {} with a bounded nilsequence but vanishing norm",
            value.norm()
        )));
    }
    Ok(CorrelationCheck {
        value,
        u3_norm,
        threshold: delta,
    })
}
