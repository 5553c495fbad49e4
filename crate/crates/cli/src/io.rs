//! File formats shared by the subcommands.
//!
//! Functions: CSV with one row per element in enumeration order, columns
//! re,im; or a JSON array of [re, im] pairs (picked by the .json
//! extension). Phase files: one torus value per row, either an exact
//! fraction "p/q" or a float. Tables: CSV keyed by element index.
//! Diagnostics name the file, line, and offending field.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use num::complex::Complex64;
use num::rational::BigRational;

use gowerslab_core::fourier::DenseFunction;
use gowerslab_core::group::{GroupElement, GroupSpec};
use gowerslab_core::heisenberg::{Bump, HeisenbergPoint, HeisenbergPoly, NilsequenceSpec};
use gowerslab_core::torus::TorusValue;
use gowerslab_core::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    let raw = fs::read_to_string(path).map_err(|e| {
        Error::Malformed(format!("cannot read {}: {e}", path.display()))
    })?;
    if raw.trim().is_empty() {
        return Err(Error::Malformed(format!(
            "input file {} is empty",
            path.display()
        )));
    }
    Ok(raw)
}

fn bad_field(path: &Path, line: usize, field: &str, got: &str) -> Error {
    Error::Malformed(format!(
        "{}: line {}: field {field}: cannot parse {got:?}",
        path.display(),
        line
    ))
}

/// Non-empty lines with their 1-based line numbers.
fn data_lines(raw: &str) -> impl Iterator<Item = (usize, &str)> {
    raw.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn read_function(path: &Path, g: &GroupSpec) -> Result<DenseFunction> {
    let raw = read_text(path)?;
    let values: Vec<Complex64> = if path.extension().is_some_and(|e| e == "json") {
        let rows: Vec<Vec<f64>> = serde_json::from_str(&raw)?;
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                if r.len() != 2 {
                    return Err(Error::Malformed(format!(
                        "{}: entry {i}: expected [re, im]",
                        path.display()
                    )));
                }
                Ok(Complex64::new(r[0], r[1]))
            })
            .collect::<Result<_>>()?
    } else {
        data_lines(&raw)
            .map(|(ln, l)| {
                let mut parts = l.split(',');
                let re = parts.next().unwrap_or("");
                let im = parts.next().unwrap_or("");
                if parts.next().is_some() {
                    return Err(Error::Malformed(format!(
                        "{}: line {ln}: expected two columns re,im",
                        path.display()
                    )));
                }
                Ok(Complex64::new(
                    re.trim()
                        .parse()
                        .map_err(|_| bad_field(path, ln, "re", re))?,
                    im.trim()
                        .parse()
                        .map_err(|_| bad_field(path, ln, "im", im))?,
                ))
            })
            .collect::<Result<_>>()?
    };
    if values.len() != g.len() {
        return Err(Error::Malformed(format!(
            "{}: {} rows for a group of order {}",
            path.display(),
            values.len(),
            g.len()
        )));
    }
    DenseFunction::new(g.clone(), values)
}

/// One torus value per row, fractions kept exact.
pub fn read_phases(path: &Path, expected: usize) -> Result<Vec<TorusValue>> {
    let raw = read_text(path)?;
    let values: Vec<TorusValue> = data_lines(&raw)
        .map(|(ln, l)| {
            TorusValue::parse_fraction(l).map_err(|_| bad_field(path, ln, "value", l))
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::Malformed(format!(
            "{}: {} rows, expected {expected}",
            path.display(),
            values.len()
        )));
    }
    Ok(values)
}

/// One row of target coordinates per source element, enumeration order.
pub fn read_hom_table(
    path: &Path,
    source: &GroupSpec,
    target: &GroupSpec,
) -> Result<Vec<GroupElement>> {
    let raw = read_text(path)?;
    let values: Vec<GroupElement> = data_lines(&raw)
        .map(|(ln, l)| {
            let coords: Vec<u64> = l
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse()
                        .map_err(|_| bad_field(path, ln, "coordinate", c))
                })
                .collect::<Result<_>>()?;
            target.element(coords).map_err(|_| {
                Error::Malformed(format!(
                    "{}: line {ln}: coordinates outside the target group",
                    path.display()
                ))
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != source.len() {
        return Err(Error::Malformed(format!(
            "{}: {} rows for a source group of order {}",
            path.display(),
            values.len(),
            source.len()
        )));
    }
    Ok(values)
}

/// Rows "h,k,v_1,...,v_dim" keyed by element index; the member set is
/// whatever indices appear. Returns (dim, members, dense option matrix).
pub type CocycleData = (usize, Vec<GroupElement>, Vec<Vec<Option<Vec<f64>>>>);

pub fn read_cocycle_table(path: &Path, g: &GroupSpec) -> Result<CocycleData> {
    let raw = read_text(path)?;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut dim = None;
    for (ln, l) in data_lines(&raw) {
        let parts: Vec<&str> = l.split(',').collect();
        if parts.len() < 3 {
            return Err(Error::Malformed(format!(
                "{}: line {ln}: expected h,k,v_1,...",
                path.display()
            )));
        }
        let h: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| bad_field(path, ln, "h", parts[0]))?;
        let k: usize = parts[1]
            .trim()
            .parse()
            .map_err(|_| bad_field(path, ln, "k", parts[1]))?;
        if h >= g.len() || k >= g.len() {
            return Err(Error::Malformed(format!(
                "{}: line {ln}: element index outside the group",
                path.display()
            )));
        }
        let v: Vec<f64> = parts[2..]
            .iter()
            .map(|c| {
                c.trim()
                    .parse()
                    .map_err(|_| bad_field(path, ln, "value", c))
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::Malformed(format!(
                    "{}: line {ln}: {} value columns, earlier rows had {d}",
                    path.display(),
                    v.len()
                )))
            }
            _ => {}
        }
        rows.push((h, k, v));
    }
    let dim = dim.expect("read_text rejects empty files");
    let mut indices: Vec<usize> = rows.iter().flat_map(|(h, k, _)| [*h, *k]).collect();
    indices.sort_unstable();
    indices.dedup();
    let pos_of = |i: usize| indices.binary_search(&i).expect("collected above");
    let mut values = vec![vec![None; indices.len()]; indices.len()];
    for (h, k, v) in rows {
        values[pos_of(h)][pos_of(k)] = Some(v);
    }
    let members = indices.into_iter().map(|i| g.element_at(i)).collect();
    Ok((dim, members, values))
}

/// "p/q" or an integer.
pub fn parse_rational(s: &str, flag: &str) -> Result<BigRational> {
    BigRational::from_str(s.trim())
        .map_err(|_| Error::Malformed(format!("{flag}: cannot parse {s:?} as a fraction")))
}

/// "1,0" -> coordinates of one frequency or element.
pub fn parse_coords(s: &str, flag: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| Error::Malformed(format!("{flag}: bad coordinate {c:?}")))
        })
        .collect()
}

/// "1,0;0,1" -> list of coordinate tuples.
pub fn parse_coord_list(s: &str, flag: &str) -> Result<Vec<Vec<u64>>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|t| parse_coords(t, flag)).collect()
}

pub fn fraction(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn spec_to_json(spec: &NilsequenceSpec) -> serde_json::Value {
    serde_json::json!({
        "group": spec.group.to_string(),
        "n": spec.n,
        "bump": spec.bump.knots(),
        "points": spec.points.iter().map(|p| serde_json::json!({
            "x": p.x,
            "c": p.poly.c,
            "lin": p.poly.lin,
            "sq": p.poly.sq,
            "cross": p.poly.cross,
        })).collect::<Vec<_>>(),
    })
}

fn field<'a>(v: &'a serde_json::Value, name: &str) -> Result<&'a serde_json::Value> {
    v.get(name)
        .ok_or_else(|| Error::Malformed(format!("nilsequence spec: missing field {name}")))
}

fn f64_list(v: &serde_json::Value, name: &str) -> Result<Vec<f64>> {
    serde_json::from_value(v.clone())
        .map_err(|_| Error::Malformed(format!("nilsequence spec: field {name} is not a float list")))
}

pub fn spec_from_json(v: &serde_json::Value) -> Result<NilsequenceSpec> {
    let group = GroupSpec::parse(
        field(v, "group")?
            .as_str()
            .ok_or_else(|| Error::Malformed("nilsequence spec: group is not a string".into()))?,
    )?;
    let n = field(v, "n")?
        .as_u64()
        .ok_or_else(|| Error::Malformed("nilsequence spec: n is not an integer".into()))?
        as usize;
    let knots: Vec<(f64, f64)> = serde_json::from_value(field(v, "bump")?.clone())
        .map_err(|_| Error::Malformed("nilsequence spec: bump is not a knot list".into()))?;
    let bump = Bump::new(knots)?;
    let raw_points = field(v, "points")?
        .as_array()
        .ok_or_else(|| Error::Malformed("nilsequence spec: points is not a list".into()))?;
    let points: Vec<HeisenbergPoint> = raw_points
        .iter()
        .map(|p| {
            Ok(HeisenbergPoint {
                x: f64_list(field(p, "x")?, "x")?,
                poly: HeisenbergPoly {
                    c: field(p, "c")?
                        .as_f64()
                        .ok_or_else(|| Error::Malformed("nilsequence spec: c is not a float".into()))?,
                    lin: f64_list(field(p, "lin")?, "lin")?,
                    sq: f64_list(field(p, "sq")?, "sq")?,
                    cross: f64_list(field(p, "cross")?, "cross")?,
                },
            })
        })
        .collect::<Result<_>>()?;
    NilsequenceSpec::new(group, n, bump, points)
}

pub fn complex_json(z: Complex64) -> serde_json::Value {
    serde_json::json!([z.re, z.im])
}

pub fn write_report(path: &Path, report: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(Error::Io)
}
