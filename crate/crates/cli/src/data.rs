//! Dataset CSV ingestion.
//!
//! Header names are `y`, `x1..xq`, `z1..zd` and optionally `r1..rk`, in any
//! column order. Every field must parse as a finite number.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use deepiv::first_stage::Dataset;
use deepiv::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Y,
    X,
    Z,
    R,
}

fn classify(name: &str) -> Option<(Role, usize)> {
    if name == "y" {
        return Some((Role::Y, 1));
    }
    let (role, rest) = match name.split_at_checked(1)? {
        ("x", rest) => (Role::X, rest),
        ("z", rest) => (Role::Z, rest),
        ("r", rest) => (Role::R, rest),
        _ => return None,
    };
    if rest.starts_with('0') || rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((role, rest.parse().ok()?))
}

/// Maps each role to its header positions in index order, checking that
/// every role's indices run `1..=k` without gaps.
fn layout(headers: &csv::StringRecord) -> anyhow::Result<BTreeMap<Role, Vec<usize>>> {
    let mut found: BTreeMap<Role, BTreeMap<usize, usize>> = BTreeMap::new();
    for (pos, raw) in headers.iter().enumerate() {
        let name = raw.trim();
        let (role, idx) = classify(name).ok_or_else(|| {
            anyhow!("unrecognized column {name:?}: expected y, x1.., z1.. or r1..")
        })?;
        if found.entry(role).or_default().insert(idx, pos).is_some() {
            bail!("duplicate column {name:?}");
        }
    }
    let mut out = BTreeMap::new();
    for (role, prefix) in [(Role::Y, "y"), (Role::X, "x"), (Role::Z, "z"), (Role::R, "r")] {
        let cols = found.remove(&role).unwrap_or_default();
        if cols.is_empty() && role != Role::R {
            let name = if role == Role::Y { "y".to_string() } else { format!("{prefix}1") };
            bail!("missing required column {name}");
        }
        for (expected, &idx) in (1..).zip(cols.keys()) {
            if idx != expected {
                bail!("missing required column {prefix}{expected}");
            }
        }
        out.insert(role, cols.into_values().collect());
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = reader.headers().context("cannot read the header row")?.clone();
    let layout = layout(&headers)?;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = rec.with_context(|| format!("malformed record at line {line}"))?;
        for (pos, field) in rec.iter().enumerate() {
            let name = &headers[pos];
            if field.is_empty() {
                bail!("missing value in column {name} at line {line}");
            }
            let v: f64 = field
                .parse()
                .map_err(|_| anyhow!("non-numeric value {field:?} in column {name} at line {line}"))?;
            if !v.is_finite() {
                bail!("non-finite value {field:?} in column {name} at line {line}");
            }
            columns[pos].push(v);
        }
    }
    let n = columns[0].len();
    if n == 0 {
        bail!("{} has a header but no data rows", path.display());
    }
    let block = |role: Role| -> Option<Matrix> {
        let pos = &layout[&role];
        (!pos.is_empty()).then(|| Matrix::from_fn(n, pos.len(), |i, j| columns[pos[j]][i]))
    };
    let y = columns[layout[&Role::Y][0]].clone();
    let x = block(Role::X).expect("x columns checked");
    let z = block(Role::Z).expect("z columns checked");
    Ok(Dataset::new(y, x, z, block(Role::R))?)
}

/// Coefficient labels in estimate order: endogenous, then exogenous.
pub fn coefficient_names(data: &Dataset, with_exogenous: bool) -> Vec<String> {
    let mut names: Vec<String> = (1..=data.q()).map(|j| format!("x{j}")).collect();
    if with_exogenous {
        let k = data.r.as_ref().map_or(0, |r| r.cols());
        names.extend((1..=k).map(|j| format!("r{j}")));
    }
    names
}

/// Writes a dataset in the ingestion schema.
pub fn write_dataset(path: &Path, data: &Dataset) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    let r_cols = data.r.as_ref().map_or(0, |r| r.cols());
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.q()).map(|j| format!("x{j}")));
    header.extend((1..=data.d()).map(|j| format!("z{j}")));
    header.extend((1..=r_cols).map(|j| format!("r{j}")));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![data.y[i].to_string()];
        row.extend(data.x.row(i).iter().map(f64::to_string));
        row.extend(data.z.row(i).iter().map(f64::to_string));
        if let Some(r) = &data.r {
            row.extend(r.row(i).iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
