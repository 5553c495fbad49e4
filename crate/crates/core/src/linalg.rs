//! Exact integer and rational linear algebra for small lattices: Hermite
//! and Smith normal forms with unimodular transforms, integer left kernels,
//! Lenstra-Lenstra-Lovasz reduction over Q, and rational matrix inversion.
//! Everything here is exact; dimensions are desk-scale (at most ~10).

use num::{BigInt, BigRational, Integer, One, Signed, Zero};

use crate::{Error, Result};

pub type IMatrix = Vec<Vec<BigInt>>;
pub type QMatrix = Vec<Vec<BigRational>>;

pub fn int_identity(n: usize) -> IMatrix {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { BigInt::one() } else { BigInt::zero() })
                .collect()
        })
        .collect()
}

pub fn int_mat_mul(a: &IMatrix, b: &IMatrix) -> IMatrix {
    let rows = a.len();
    let inner = if rows > 0 { a[0].len() } else { 0 };
    let cols = if b.is_empty() { 0 } else { b[0].len() };
    (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| (0..inner).map(|k| &a[i][k] * &b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn rat_identity(n: usize) -> QMatrix {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        BigRational::one()
                    } else {
                        BigRational::zero()
                    }
                })
                .collect()
        })
        .collect()
}

pub fn rat_mat_mul(a: &QMatrix, b: &QMatrix) -> QMatrix {
    let rows = a.len();
    let inner = if rows > 0 { a[0].len() } else { 0 };
    let cols = if b.is_empty() { 0 } else { b[0].len() };
    (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| (0..inner).map(|k| &a[i][k] * &b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn int_to_rat(a: &IMatrix) -> QMatrix {
    a.iter()
        .map(|row| row.iter().map(|v| BigRational::from(v.clone())).collect())
        .collect()
}

fn row_sub_scaled(m: &mut IMatrix, i: usize, t: usize, q: &BigInt) {
    if q.is_zero() {
        return;
    }
    for c in 0..m[t].len() {
        let d = &m[t][c] * q;
        m[i][c] -= d;
    }
}

fn negate_row(m: &mut IMatrix, i: usize) {
    for v in &mut m[i] {
        *v = -std::mem::take(v);
    }
}

/// Row-style Hermite normal form with transform: returns (H, U) with
/// U * A = H, U unimodular, pivots positive, entries above each pivot
/// reduced into [0, pivot). H keeps zero rows so U stays square.
pub fn hnf_with_transform(a: &IMatrix) -> (IMatrix, IMatrix) {
    let m = a.len();
    let n = if m > 0 { a[0].len() } else { 0 };
    let mut h = a.to_vec();
    let mut u = int_identity(m);
    let mut r = 0;
    for c in 0..n {
        if r >= m {
            break;
        }
        loop {
            let mut piv: Option<usize> = None;
            for i in r..m {
                if !h[i][c].is_zero()
                    && piv.is_none_or(|p| h[i][c].abs() < h[p][c].abs())
                {
                    piv = Some(i);
                }
            }
            let Some(p) = piv else { break };
            h.swap(r, p);
            u.swap(r, p);
            let mut cleared = true;
            for i in r + 1..m {
                if !h[i][c].is_zero() {
                    let q = h[i][c].div_floor(&h[r][c]);
                    row_sub_scaled(&mut h, i, r, &q);
                    row_sub_scaled(&mut u, i, r, &q);
                    if !h[i][c].is_zero() {
                        cleared = false;
                    }
                }
            }
            if cleared {
                break;
            }
        }
        if h[r][c].is_zero() {
            continue;
        }
        if h[r][c].is_negative() {
            negate_row(&mut h, r);
            negate_row(&mut u, r);
        }
        for i in 0..r {
            let q = h[i][c].div_floor(&h[r][c]);
            row_sub_scaled(&mut h, i, r, &q);
            row_sub_scaled(&mut u, i, r, &q);
        }
        r += 1;
    }
    (h, u)
}

/// Nonzero rows of the Hermite normal form: a canonical basis of the row
/// lattice of `a`.
pub fn hnf(a: &IMatrix) -> IMatrix {
    let (h, _) = hnf_with_transform(a);
    h.into_iter().filter(|r| !r.iter().all(Zero::is_zero)).collect()
}

/// Basis of the left kernel { x : x A = 0 } over Z, read off the transform
/// rows matched to zero rows of the Hermite form.
pub fn left_kernel(a: &IMatrix) -> IMatrix {
    let (h, u) = hnf_with_transform(a);
    h.iter()
        .zip(u)
        .filter(|(hr, _)| hr.iter().all(Zero::is_zero))
        .map(|(_, ur)| ur)
        .collect()
}

/// Smith normal form U A V = D with both transforms and their inverses.
#[derive(Debug, Clone)]
pub struct Smith {
    /// Diagonal of D, length min(rows, cols); nonnegative, each entry
    /// divides the next, zeros trail.
    pub d: Vec<BigInt>,
    pub u: IMatrix,
    pub u_inv: IMatrix,
    pub v: IMatrix,
    pub v_inv: IMatrix,
}

pub fn snf(a: &IMatrix) -> Smith {
    let m = a.len();
    let n = if m > 0 { a[0].len() } else { 0 };
    let mut h = a.to_vec();
    let mut u = int_identity(m);
    let mut u_inv = int_identity(m);
    let mut v = int_identity(n);
    let mut v_inv = int_identity(n);

    // Row op h_i -= q h_t keeps U A V = H if mirrored in u and u_inv.
    let row_sub = |h: &mut IMatrix,
                   u: &mut IMatrix,
                   u_inv: &mut IMatrix,
                   i: usize,
                   t: usize,
                   q: &BigInt| {
        row_sub_scaled(h, i, t, q);
        row_sub_scaled(u, i, t, q);
        for r in 0..u_inv.len() {
            let d = &u_inv[r][i] * q;
            u_inv[r][t] += d;
        }
    };
    let col_sub = |h: &mut IMatrix,
                   v: &mut IMatrix,
                   v_inv: &mut IMatrix,
                   j: usize,
                   t: usize,
                   q: &BigInt| {
        for r in 0..h.len() {
            let d = &h[r][t] * q;
            h[r][j] -= d;
        }
        for r in 0..v.len() {
            let d = &v[r][t] * q;
            v[r][j] -= d;
        }
        for c in 0..v_inv[t].len() {
            let d = &v_inv[j][c] * q;
            v_inv[t][c] += d;
        }
    };

    let mut t = 0;
    while t < m.min(n) {
        // Smallest nonzero entry of the trailing submatrix becomes the pivot.
        let mut piv: Option<(usize, usize)> = None;
        for i in t..m {
            for j in t..n {
                if !h[i][j].is_zero()
                    && piv.is_none_or(|(pi, pj)| h[i][j].abs() < h[pi][pj].abs())
                {
                    piv = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = piv else { break };
        if pi != t {
            h.swap(t, pi);
            u.swap(t, pi);
            for r in 0..m {
                u_inv[r].swap(t, pi);
            }
        }
        if pj != t {
            for r in 0..m {
                h[r].swap(t, pj);
            }
            for r in 0..n {
                v[r].swap(t, pj);
            }
            v_inv.swap(t, pj);
        }

        'clear: loop {
            // Clear column t with the current pivot, re-pivoting on any
            // nonzero remainder (its absolute value is strictly smaller).
            for i in t + 1..m {
                if !h[i][t].is_zero() {
                    let q = h[i][t].div_floor(&h[t][t]);
                    row_sub(&mut h, &mut u, &mut u_inv, i, t, &q);
                    if !h[i][t].is_zero() {
                        h.swap(t, i);
                        u.swap(t, i);
                        for r in 0..m {
                            u_inv[r].swap(t, i);
                        }
                        continue 'clear;
                    }
                }
            }
            for j in t + 1..n {
                if !h[t][j].is_zero() {
                    let q = h[t][j].div_floor(&h[t][t]);
                    col_sub(&mut h, &mut v, &mut v_inv, j, t, &q);
                    if !h[t][j].is_zero() {
                        for r in 0..m {
                            h[r].swap(t, j);
                        }
                        for r in 0..n {
                            v[r].swap(t, j);
                        }
                        v_inv.swap(t, j);
                        continue 'clear;
                    }
                }
            }
            // Pivot must divide every remaining entry so the diagonal
            // forms a divisibility chain; fold a violating row in and redo.
            for i in t + 1..m {
                for j in t + 1..n {
                    if !(&h[i][j] % &h[t][t]).is_zero() {
                        let minus_one = -BigInt::one();
                        row_sub(&mut h, &mut u, &mut u_inv, t, i, &minus_one);
                        continue 'clear;
                    }
                }
            }
            break;
        }
        if h[t][t].is_negative() {
            negate_row(&mut h, t);
            negate_row(&mut u, t);
            for r in 0..m {
                u_inv[r][t] = -std::mem::take(&mut u_inv[r][t]);
            }
        }
        t += 1;
    }

    let d = (0..m.min(n)).map(|i| h[i][i].clone()).collect();
    Smith { d, u, u_inv, v, v_inv }
}

fn round_rational(r: &BigRational) -> BigInt {
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    (r + half).floor().to_integer()
}

fn gram_schmidt(b: &QMatrix) -> Result<(Vec<BigRational>, QMatrix)> {
    let n = b.len();
    let dim = b[0].len();
    let mut bstar: QMatrix = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    let mut mu = vec![vec![BigRational::zero(); n]; n];
    for i in 0..n {
        let mut v = b[i].clone();
        for j in 0..i {
            let dot: BigRational = (0..dim).map(|c| &b[i][c] * &bstar[j][c]).sum();
            mu[i][j] = dot / &norms[j];
            for c in 0..dim {
                let d = &mu[i][j] * &bstar[j][c];
                v[c] -= d;
            }
        }
        let nn: BigRational = v.iter().map(|c| c * c).sum();
        if nn.is_zero() {
            return Err(Error::Precondition(
                "lattice basis is linearly dependent".into(),
            ));
        }
        bstar.push(v);
        norms.push(nn);
    }
    Ok((norms, mu))
}

/// Lovasz-reduced basis (delta = 3/4) of the lattice spanned by the rows,
/// computed exactly over Q. Gram-Schmidt data is recomputed after every
/// mutation; fine at these dimensions.
pub fn lll_reduce(basis: &QMatrix) -> Result<QMatrix> {
    let mut b = basis.to_vec();
    let n = b.len();
    if n <= 1 {
        return Ok(b);
    }
    let delta = BigRational::new(BigInt::from(3), BigInt::from(4));
    let dim = b[0].len();
    let mut k = 1;
    while k < n {
        for j in (0..k).rev() {
            let (_, mu) = gram_schmidt(&b)?;
            let q = round_rational(&mu[k][j]);
            if !q.is_zero() {
                let qr = BigRational::from(q);
                for c in 0..dim {
                    let d = &qr * &b[j][c];
                    b[k][c] -= d;
                }
            }
        }
        let (norms, mu) = gram_schmidt(&b)?;
        let lhs = &norms[k];
        let rhs = (&delta - &mu[k][k - 1] * &mu[k][k - 1]) * &norms[k - 1];
        if *lhs >= rhs {
            k += 1;
        } else {
            b.swap(k, k - 1);
            k = k.max(2) - 1;
        }
    }
    Ok(b)
}

/// Exact inverse by Gauss-Jordan elimination; None when singular.
pub fn rat_inverse(m: &QMatrix) -> Option<QMatrix> {
    let n = m.len();
    if n == 0 {
        return Some(Vec::new());
    }
    if m[0].len() != n {
        return None;
    }
    let mut a = m.to_vec();
    let mut inv = rat_identity(n);
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        inv.swap(col, piv);
        let p = a[col][col].clone();
        for c in 0..n {
            a[col][c] /= &p;
            inv[col][c] /= &p;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for c in 0..n {
                    let da = &f * &a[col][c];
                    a[r][c] -= da;
                    let di = &f * &inv[col][c];
                    inv[r][c] -= di;
                }
            }
        }
    }
    Some(inv)
}

/// Exact determinant of a square rational matrix.
pub fn rat_det(m: &QMatrix) -> BigRational {
    let n = m.len();
    let mut a = m.to_vec();
    let mut det = BigRational::one();
    for col in 0..n {
        let Some(piv) = (col..n).find(|&r| !a[r][col].is_zero()) else {
            return BigRational::zero();
        };
        if piv != col {
            a.swap(col, piv);
            det = -det;
        }
        det *= &a[col][col];
        let p = a[col][col].clone();
        for r in col + 1..n {
            if !a[r][col].is_zero() {
                let f = &a[r][col] / &p;
                for c in col..n {
                    let d = &f * &a[col][c];
                    a[r][c] -= d;
                }
            }
        }
    }
    det
}

pub fn int_det(m: &IMatrix) -> BigInt {
    let d = rat_det(&int_to_rat(m));
    debug_assert!(d.is_integer());
    d.to_integer()
}
