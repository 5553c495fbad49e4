//! Repairing almost homomorphisms and trivialising near-coboundaries.
//!
//! Two finite, executable algorithms: a map between finite abelian groups
//! that is multiplicative on most pairs is replaced by the exact
//! homomorphism given pointwise by the mode of difference quotients, and a
//! real-vector-valued cocycle on a dense subset is written as a coboundary
//! by iterated averaging with a geometric residual.

use rayon::prelude::*;

use crate::group::{GroupElement, GroupSpec};
use crate::{Error, Result};

/// Dense value table of a map between two finite abelian groups. No
/// homomorphism property is assumed; the defect is what gets measured.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmostHomTable {
    source: GroupSpec,
    target: GroupSpec,
    values: Vec<GroupElement>,
}

impl AlmostHomTable {
    pub fn new(
        source: GroupSpec,
        target: GroupSpec,
        values: Vec<GroupElement>,
    ) -> Result<Self> {
        if values.len() != source.len() {
            return Err(Error::DimensionMismatch {
                expected: source.len(),
                got: values.len(),
            });
        }
        for v in &values {
            target.element(v.coords.clone())?;
        }
        Ok(AlmostHomTable {
            source,
            target,
            values,
        })
    }

    pub fn from_fn(
        source: GroupSpec,
        target: GroupSpec,
        mut f: impl FnMut(&GroupElement) -> GroupElement,
    ) -> Result<Self> {
        let values = source.iter_elements().map(|g| f(&g)).collect();
        AlmostHomTable::new(source, target, values)
    }

    pub fn source(&self) -> &GroupSpec {
        &self.source
    }

    pub fn target(&self) -> &GroupSpec {
        &self.target
    }

    /// Values in source enumeration order.
    pub fn values(&self) -> &[GroupElement] {
        &self.values
    }

    pub fn value(&self, g: &GroupElement) -> &GroupElement {
        &self.values[self.source.index_of(g)]
    }

    /// Fraction of pairs (g, h) with phi(g + h) != phi(g) + phi(h).
    pub fn defect_fraction(&self) -> f64 {
        let n = self.source.len();
        let elems: Vec<GroupElement> = self.source.iter_elements().collect();
        let bad: usize = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut row_bad = 0usize;
                for j in 0..n {
                    let sum = self.source.add(&elems[i], &elems[j]);
                    let expect = self.target.add(&self.values[i], &self.values[j]);
                    if self.values[self.source.index_of(&sum)] != expect {
                        row_bad += 1;
                    }
                }
                row_bad
            })
            .sum();
        bad as f64 / (n * n) as f64
    }
}

/// Result of repairing an almost homomorphism.
#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub repaired: AlmostHomTable,
    /// Pair-defect fraction of the input table.
    pub input_defect: f64,
    /// Pair-defect fraction of the repaired table; 0 below the recovery
    /// threshold.
    pub output_defect: f64,
    /// Elements where the repaired table disagrees with the input.
    pub disagreement: Vec<GroupElement>,
}

/// Pointwise mode of the difference quotients phi(a + g) - phi(a) over all
/// a. Ties break towards the smaller target enumeration index. Quadratic in
/// the source order.
pub fn repair_homomorphism(t: &AlmostHomTable) -> RepairOutcome {
    let n = t.source.len();
    let elems: Vec<GroupElement> = t.source.iter_elements().collect();
    let repaired_values: Vec<GroupElement> = (0..n)
        .into_par_iter()
        .map(|gi| {
            let mut counts = vec![0u32; t.target.len()];
            for ai in 0..n {
                let ag = t.source.add(&elems[ai], &elems[gi]);
                let d = t
                    .target
                    .sub(&t.values[t.source.index_of(&ag)], &t.values[ai]);
                counts[t.target.index_of(&d)] += 1;
            }
            let best = counts
                .iter()
                .enumerate()
                .max_by_key(|&(i, c)| (c, std::cmp::Reverse(i)))
                .map(|(i, _)| i)
                .unwrap();
            t.target.element_at(best)
        })
        .collect();

    let disagreement: Vec<GroupElement> = (0..n)
        .filter(|&i| repaired_values[i] != t.values[i])
        .map(|i| elems[i].clone())
        .collect();
    let repaired = AlmostHomTable {
        source: t.source.clone(),
        target: t.target.clone(),
        values: repaired_values,
    };
    RepairOutcome {
        input_defect: t.defect_fraction(),
        output_defect: repaired.defect_fraction(),
        disagreement,
        repaired,
    }
}

/// R^dim-valued two-variable table c(h, k) on a subset E of a finite
/// abelian group, stored for exactly the pairs h, k in E with h + k in E.
#[derive(Debug, Clone)]
pub struct CocycleTable {
    group: GroupSpec,
    dim: usize,
    members: Vec<GroupElement>,
    member_pos: Vec<Option<usize>>,
    values: Vec<Vec<Option<Vec<f64>>>>,
}

impl CocycleTable {
    pub fn new(
        group: GroupSpec,
        dim: usize,
        members: Vec<GroupElement>,
        values: Vec<Vec<Option<Vec<f64>>>>,
    ) -> Result<Self> {
        let mut member_pos = vec![None; group.len()];
        for (p, m) in members.iter().enumerate() {
            let idx = group.index_of(m);
            if member_pos[idx].is_some() {
                return Err(Error::Malformed(format!(
                    "duplicate member {m:?} in cocycle domain"
                )));
            }
            member_pos[idx] = Some(p);
        }
        if values.len() != members.len() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                got: values.len(),
            });
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != members.len() {
                return Err(Error::DimensionMismatch {
                    expected: members.len(),
                    got: row.len(),
                });
            }
            for (j, entry) in row.iter().enumerate() {
                let sum = group.add(&members[i], &members[j]);
                let applicable = member_pos[group.index_of(&sum)].is_some();
                match entry {
                    Some(_) if !applicable => {
                        return Err(Error::Malformed(format!(
                            "value present at ({i},{j}) but the sum leaves the domain"
                        )))
                    }
                    Some(v) if v.len() != dim => {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: v.len(),
                        })
                    }
                    None if applicable => {
                        return Err(Error::Malformed(format!(
                            "missing value at applicable pair ({i},{j})"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(CocycleTable {
            group,
            dim,
            members,
            member_pos,
            values,
        })
    }

    /// Fill every applicable pair from a callable.
    pub fn from_fn(
        group: GroupSpec,
        dim: usize,
        members: Vec<GroupElement>,
        mut f: impl FnMut(&GroupElement, &GroupElement) -> Vec<f64>,
    ) -> Result<Self> {
        let mut member_set = vec![false; group.len()];
        for m in &members {
            member_set[group.index_of(m)] = true;
        }
        let mut values = Vec::with_capacity(members.len());
        for h in &members {
            let mut row = Vec::with_capacity(members.len());
            for k in &members {
                let sum = group.add(h, k);
                row.push(member_set[group.index_of(&sum)].then(|| f(h, k)));
            }
            values.push(row);
        }
        CocycleTable::new(group, dim, members, values)
    }

    /// The coboundary df(h, k) = f(h + k) - f(h) - f(k) of a table on the
    /// same domain; always passes verification.
    pub fn coboundary(
        group: GroupSpec,
        members: Vec<GroupElement>,
        f: &[Vec<f64>],
    ) -> Result<Self> {
        if f.len() != members.len() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                got: f.len(),
            });
        }
        let dim = f.first().map_or(0, Vec::len);
        let mut member_pos = vec![None; group.len()];
        for (p, m) in members.iter().enumerate() {
            member_pos[group.index_of(m)] = Some(p);
        }
        let values: Vec<Vec<Option<Vec<f64>>>> = members
            .iter()
            .enumerate()
            .map(|(i, h)| {
                members
                    .iter()
                    .enumerate()
                    .map(|(j, k)| {
                        let sum = group.add(h, k);
                        member_pos[group.index_of(&sum)].map(|p| {
                            (0..dim)
                                .map(|d| f[p][d] - f[i][d] - f[j][d])
                                .collect()
                        })
                    })
                    .collect()
            })
            .collect();
        CocycleTable::new(group, dim, members, values)
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn members(&self) -> &[GroupElement] {
        &self.members
    }

    pub fn density(&self) -> f64 {
        self.members.len() as f64 / self.group.len() as f64
    }

    pub fn value(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.values[i][j].as_deref()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .fold(0.0, |a: f64, v| a.max(v.abs()))
    }

    fn position(&self, g: &GroupElement) -> Option<usize> {
        self.member_pos[self.group.index_of(g)]
    }
}

/// Outcome of an exhaustive cocycle-identity check.
#[derive(Debug, Clone)]
pub struct CocycleCheck {
    pub holds: bool,
    /// A violating triple (h, k, l), if any.
    pub witness: Option<(GroupElement, GroupElement, GroupElement)>,
    /// Largest deviation over all applicable triples.
    pub worst: f64,
}

pub const COCYCLE_TOL: f64 = 1e-10;

/// Checks c(h,k) + c(h+k,l) = c(h,k+l) + c(k,l) over every triple where all
/// four entries exist.
pub fn verify_cocycle(c: &CocycleTable) -> CocycleCheck {
    let m = c.members.len();
    let mut worst = 0.0f64;
    let mut witness = None;
    for i in 0..m {
        for j in 0..m {
            let Some(p_ij) = c.position(&c.group.add(&c.members[i], &c.members[j])) else {
                continue;
            };
            for l in 0..m {
                let (Some(a), Some(b), Some(d), Some(e)) = (
                    c.values[i][j].as_ref(),
                    c.values[p_ij][l].as_ref(),
                    c.position(&c.group.add(&c.members[j], &c.members[l]))
                        .and_then(|p_jl| c.values[i][p_jl].as_ref()),
                    c.values[j][l].as_ref(),
                ) else {
                    continue;
                };
                let dev = (0..c.dim)
                    .map(|t| (a[t] + b[t] - d[t] - e[t]).abs())
                    .fold(0.0f64, f64::max);
                if dev > worst {
                    worst = dev;
                    if dev > COCYCLE_TOL && witness.is_none() {
                        witness = Some((
                            c.members[i].clone(),
                            c.members[j].clone(),
                            c.members[l].clone(),
                        ));
                    }
                }
            }
        }
    }
    CocycleCheck {
        holds: worst <= COCYCLE_TOL,
        witness: if worst <= COCYCLE_TOL { None } else { witness },
        worst,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrivializeConfig {
    /// Maximum fraction of the group that may be missing from the domain.
    pub epsilon0: f64,
    /// Iterations allowed beyond ceil(log2(norm / tol)).
    pub margin: usize,
}

impl Default for TrivializeConfig {
    fn default() -> Self {
        TrivializeConfig {
            epsilon0: 0.01,
            margin: 2,
        }
    }
}

/// Result of writing a cocycle as a coboundary by iterated averaging.
#[derive(Debug, Clone)]
pub struct TrivializationOutcome {
    /// Accumulated primitive, indexed like the table's members.
    pub f: Vec<Vec<f64>>,
    /// Recomputed sup norm of c - df.
    pub residual: f64,
    pub iterations: usize,
    /// Sup norms: initial, then after each iteration.
    pub trace: Vec<f64>,
    /// Largest per-iteration residual ratio observed.
    pub max_factor: f64,
}

/// A residual ratio this close to 1 means averaging is not contracting and
/// further iterations cannot reach the tolerance.
const CONTRACTION_LIMIT: f64 = 0.95;

/// Iterated averaging: each round subtracts the coboundary of
/// f_i(h) = -mean_k c(h, k), halving the residual up to a density-driven
/// slack. The accumulated f satisfies sup|f| <= 2 sup|c|.
pub fn trivialize_cocycle(
    c: &CocycleTable,
    tol: f64,
    cfg: &TrivializeConfig,
) -> Result<TrivializationOutcome> {
    if tol <= 0.0 {
        return Err(Error::Precondition("tolerance must be positive".into()));
    }
    let density = c.density();
    if density < 1.0 - cfg.epsilon0 {
        return Err(Error::DensityTooLow {
            density,
            required: 1.0 - cfg.epsilon0,
        });
    }
    let check = verify_cocycle(c);
    if !check.holds {
        return Err(Error::NotACocycle(format!(
            "worst deviation {} at {:?}",
            check.worst, check.witness
        )));
    }

    let m = c.members.len();
    let initial_norm = c.sup_norm();
    let mut outcome = TrivializationOutcome {
        f: vec![vec![0.0; c.dim]; m],
        residual: initial_norm,
        iterations: 0,
        trace: vec![initial_norm],
        max_factor: 0.0,
    };
    if initial_norm <= tol {
        return Ok(outcome);
    }

    // Precomputed positions of member sums; None marks inapplicable pairs.
    let sum_pos: Vec<Vec<Option<usize>>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| c.position(&c.group.add(&c.members[i], &c.members[j])))
                .collect()
        })
        .collect();

    let cap = (initial_norm / tol).log2().ceil().max(0.0) as usize + cfg.margin;
    let mut current: Vec<Vec<Option<Vec<f64>>>> = c.values.clone();
    let mut prev_norm = initial_norm;

    for step in 1..=cap {
        let f_step: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; c.dim];
                let mut count = 0usize;
                for j in 0..m {
                    if let Some(v) = current[i][j].as_ref() {
                        for d in 0..c.dim {
                            acc[d] += v[d];
                        }
                        count += 1;
                    }
                }
                if count > 0 {
                    for a in acc.iter_mut() {
                        *a /= -(count as f64);
                    }
                }
                acc
            })
            .collect();

        let mut norm = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let Some(p) = sum_pos[i][j] else { continue };
                let entry = current[i][j].as_mut().expect("applicable pair");
                for d in 0..c.dim {
                    entry[d] -= f_step[p][d] - f_step[i][d] - f_step[j][d];
                    norm = norm.max(entry[d].abs());
                }
            }
        }
        for i in 0..m {
            for d in 0..c.dim {
                outcome.f[i][d] += f_step[i][d];
            }
        }

        let factor = norm / prev_norm;
        outcome.iterations = step;
        outcome.trace.push(norm);
        outcome.max_factor = outcome.max_factor.max(factor);
        if norm <= tol {
            break;
        }
        if factor >= CONTRACTION_LIMIT || step == cap {
            return Err(Error::ContractionFailure {
                step,
                factor,
                trace: outcome.trace,
            });
        }
        prev_norm = norm;
    }

    // Recompute the residual from scratch against the accumulated f.
    let mut residual = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let Some(p) = sum_pos[i][j] else { continue };
            let orig = c.values[i][j].as_ref().expect("applicable pair");
            for d in 0..c.dim {
                let df = outcome.f[p][d] - outcome.f[i][d] - outcome.f[j][d];
                residual = residual.max((orig[d] - df).abs());
            }
        }
    }
    outcome.residual = residual;

    let f_norm = outcome
        .f
        .iter()
        .flatten()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if f_norm > 2.0 * initial_norm + 1e-12 {
        return Err(Error::GuaranteeViolated(format!(
            "primitive norm {f_norm} exceeds twice the cocycle norm {initial_norm}"
        )));
    }
    Ok(outcome)
}
