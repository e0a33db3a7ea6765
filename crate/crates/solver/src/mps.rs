//! MPS export.
//!
//! Output follows the fixed-format column layout (fields starting at columns
//! 2, 5, 15, 25), one coefficient per line. Names longer than eight
//! characters push later fields right; every field stays whitespace
//! separated, so free-format readers accept the file unchanged.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{MipModel, Sense, VarKind};

const OBJ_ROW: &str = "OBJ";

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("cannot export an empty model (no variables or no rows)")]
    Empty,
    #[error("name `{0}` contains whitespace or is empty")]
    InvalidName(String),
    #[error("I/O error writing MPS: {0}")]
    Io(#[from] io::Error),
}

fn check_name(name: &str) -> Result<(), MpsError> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(MpsError::InvalidName(name.to_string()));
    }
    Ok(())
}

fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Writes `model` as MPS (objective sense MIN).
pub fn write_mps<W: Write>(model: &MipModel, out: W) -> Result<(), MpsError> {
    if model.vars.is_empty() || model.rows.is_empty() {
        return Err(MpsError::Empty);
    }
    check_name(&model.name)?;
    for v in &model.vars {
        check_name(&v.name)?;
    }
    for r in &model.rows {
        check_name(&r.name)?;
    }

    // column-major view of the row coefficients
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.vars.len()];
    for (ri, row) in model.rows.iter().enumerate() {
        for &(var, coeff) in &row.terms {
            if coeff != 0.0 {
                columns[var.0].push((ri, coeff));
            }
        }
    }

    let mut w = BufWriter::new(out);
    writeln!(w, "NAME          {}", model.name)?;
    writeln!(w, "OBJSENSE")?;
    writeln!(w, "    MIN")?;
    writeln!(w, "ROWS")?;
    writeln!(w, " N  {OBJ_ROW}")?;
    for row in &model.rows {
        let tag = match row.sense {
            Sense::Le => "L",
            Sense::Ge => "G",
            Sense::Eq => "E",
        };
        writeln!(w, " {tag:<2} {}", row.name)?;
    }

    writeln!(w, "COLUMNS")?;
    let mut in_int = false;
    let mut marker = 0;
    for (ci, var) in model.vars.iter().enumerate() {
        let is_int = var.kind == VarKind::Binary;
        if is_int != in_int {
            let tag = if is_int { "INTORG" } else { "INTEND" };
            writeln!(w, "    MARKER{marker:<4}  'MARKER'                 '{tag}'")?;
            marker += 1;
            in_int = is_int;
        }
        let mut wrote = false;
        if var.obj != 0.0 {
            writeln!(
                w,
                "    {:<8}  {:<8}  {:>12}",
                var.name,
                OBJ_ROW,
                num(var.obj)
            )?;
            wrote = true;
        }
        for &(ri, coeff) in &columns[ci] {
            writeln!(
                w,
                "    {:<8}  {:<8}  {:>12}",
                var.name,
                model.rows[ri].name,
                num(coeff)
            )?;
            wrote = true;
        }
        if !wrote {
            writeln!(w, "    {:<8}  {:<8}  {:>12}", var.name, OBJ_ROW, "0")?;
        }
    }
    if in_int {
        writeln!(
            w,
            "    MARKER{marker:<4}  'MARKER'                 'INTEND'"
        )?;
    }

    writeln!(w, "RHS")?;
    for row in &model.rows {
        if row.rhs != 0.0 {
            writeln!(w, "    RHS       {:<8}  {:>12}", row.name, num(row.rhs))?;
        }
    }

    writeln!(w, "BOUNDS")?;
    for var in &model.vars {
        let name = &var.name;
        if var.kind == VarKind::Binary && var.lower == 0.0 && var.upper == 1.0 {
            writeln!(w, " BV BND       {name}")?;
            continue;
        }
        if var.lower == var.upper {
            writeln!(w, " FX BND       {:<8}  {:>12}", name, num(var.lower))?;
            continue;
        }
        if var.lower == f64::NEG_INFINITY {
            writeln!(w, " MI BND       {name}")?;
        } else if var.lower != 0.0 {
            writeln!(w, " LO BND       {:<8}  {:>12}", name, num(var.lower))?;
        }
        if var.upper != f64::INFINITY {
            writeln!(w, " UP BND       {:<8}  {:>12}", name, num(var.upper))?;
        }
    }
    writeln!(w, "ENDATA")?;
    w.flush()?;
    Ok(())
}

pub fn write_mps_file(model: &MipModel, path: &Path) -> Result<(), MpsError> {
    // validate before touching the filesystem so errors never leave an empty file
    if model.vars.is_empty() || model.rows.is_empty() {
        return Err(MpsError::Empty);
    }
    let mut buf = Vec::new();
    write_mps(model, &mut buf)?;
    let mut file = File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}
