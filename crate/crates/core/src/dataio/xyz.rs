//! Extended-XYZ reader and writer.
//!
//! The comment line carries `key=value` pairs; `Properties=` describes the
//! atom columns (`species:S:1:pos:R:3[:forces:R:3]`). Without `Properties`
//! the block is read as plain XYZ. Trajectory frames add `vel:R:3` and
//! `time=`. `energy=`, `charge=` and `spin=` fill the
//! matching system fields.

use std::fmt::Write as _;

use super::elements;
use crate::error::{Error, Result};
use crate::system::MolecularSystem;

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Split a comment line into `key=value` pairs, honouring double quotes.
pub fn comment_pairs(line: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        let mut value = String::new();
        if chars.peek() == Some(&'=') {
            chars.next();
            if chars.peek() == Some(&'"') {
                chars.next();
                for c in chars.by_ref() {
                    if c == '"' {
                        break;
                    }
                    value.push(c);
                }
            } else {
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    value.push(c);
                    chars.next();
                }
            }
        }
        out.push((key, value));
    }
    out
}

#[derive(Debug)]
struct Column {
    name: String,
    kind: char,
    width: usize,
}

fn parse_properties(spec: &str, line: usize) -> Result<Vec<Column>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() % 3 != 0 {
        return Err(perr(line, format!("malformed Properties `{spec}`")));
    }
    parts
        .chunks(3)
        .map(|c| {
            let kind = c[1].chars().next().unwrap_or('?');
            let width = c[2]
                .parse()
                .map_err(|_| perr(line, format!("bad column width `{}`", c[2])))?;
            if !matches!(kind, 'S' | 'R' | 'I' | 'L') {
                return Err(perr(line, format!("unknown column type `{}`", c[1])));
            }
            Ok(Column {
                name: c[0].to_string(),
                kind,
                width,
            })
        })
        .collect()
}

/// A parsed block with the trajectory extras `vel:R:3` (Å/fs) and `time=` (fs).
#[derive(Clone, Debug, PartialEq)]
pub struct XyzFrame {
    pub system: MolecularSystem,
    pub velocities: Option<Vec<[f64; 3]>>,
    pub time: Option<f64>,
}

pub fn parse_extended_xyz(text: &str) -> Result<Vec<MolecularSystem>> {
    Ok(parse_frames(text)?.into_iter().map(|f| f.system).collect())
}

pub fn parse_frames(text: &str) -> Result<Vec<XyzFrame>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut systems = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count_line = i + 1;
        let n: usize = lines[i].trim().parse().map_err(|_| {
            perr(
                count_line,
                format!("expected atom count, got `{}`", lines[i].trim()),
            )
        })?;
        if n == 0 {
            return Err(perr(count_line, "atom count must be positive"));
        }
        let comment = lines
            .get(i + 1)
            .ok_or_else(|| perr(count_line + 1, "missing comment line"))?;
        let pairs = comment_pairs(comment);
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key.eq_ignore_ascii_case(k))
                .map(|(_, v)| v.as_str())
        };
        let columns = match get("Properties") {
            Some(p) => parse_properties(p, count_line + 1)?,
            None => parse_properties("species:S:1:pos:R:3", count_line + 1)?,
        };
        if !columns.iter().any(|c| c.name == "pos" && c.width == 3) {
            return Err(perr(count_line + 1, "Properties lacks pos:R:3"));
        }
        let mut sys = MolecularSystem {
            atomic_numbers: Vec::with_capacity(n),
            positions: Vec::with_capacity(n),
            spin: 0,
            charge: 0,
            forces: columns.iter().any(|c| c.name == "forces").then(Vec::new),
            energy: None,
        };
        let mut velocities = columns
            .iter()
            .any(|c| c.name == "vel" && c.width == 3)
            .then(Vec::new);
        let time = match get("time") {
            Some(v) => Some(
                v.parse()
                    .map_err(|_| perr(count_line + 1, format!("bad time `{v}`")))?,
            ),
            None => None,
        };
        if let Some(v) = get("energy") {
            sys.energy = Some(
                v.parse()
                    .map_err(|_| perr(count_line + 1, format!("bad energy `{v}`")))?,
            );
        }
        if let Some(v) = get("charge") {
            sys.charge = v
                .parse()
                .map_err(|_| perr(count_line + 1, format!("bad charge `{v}`")))?;
        }
        if let Some(v) = get("spin") {
            sys.spin = v
                .parse()
                .map_err(|_| perr(count_line + 1, format!("bad spin `{v}`")))?;
        }
        for a in 0..n {
            let ln = i + 2 + a;
            let Some(raw) = lines.get(ln) else {
                return Err(perr(
                    ln + 1,
                    format!("count mismatch: declared {n} atoms, found {a}"),
                ));
            };
            let toks: Vec<&str> = raw.split_whitespace().collect();
            let need: usize = columns.iter().map(|c| c.width).sum();
            if toks.len() != need {
                if a > 0 && toks.len() == 1 && toks[0].parse::<usize>().is_ok() {
                    return Err(perr(
                        ln + 1,
                        format!("count mismatch: declared {n} atoms, found {a}"),
                    ));
                }
                return Err(perr(
                    ln + 1,
                    format!("expected {need} columns, found {}", toks.len()),
                ));
            }
            let mut t = 0;
            for col in &columns {
                let field = &toks[t..t + col.width];
                t += col.width;
                match (col.name.as_str(), col.kind) {
                    ("species", 'S') => {
                        let z = elements::atomic_number(field[0]).ok_or_else(|| {
                            perr(ln + 1, format!("unknown element `{}`", field[0]))
                        })?;
                        sys.atomic_numbers.push(z);
                    }
                    ("pos", 'R') => sys.positions.push(floats3(field, ln + 1)?),
                    ("forces", 'R') if col.width == 3 => {
                        let f = floats3(field, ln + 1)?;
                        sys.forces.as_mut().expect("declared").push(f);
                    }
                    ("vel", 'R') if col.width == 3 => {
                        let v = floats3(field, ln + 1)?;
                        velocities.as_mut().expect("declared").push(v);
                    }
                    (_, 'R') => {
                        for v in field {
                            v.parse::<f64>()
                                .map_err(|_| perr(ln + 1, format!("malformed float `{v}`")))?;
                        }
                    }
                    _ => {}
                }
            }
        }
        if sys.atomic_numbers.len() != n {
            return Err(perr(count_line + 1, "Properties lacks species:S:1"));
        }
        sys.validate()
            .map_err(|e| perr(count_line, e.to_string()))?;
        systems.push(XyzFrame {
            system: sys,
            velocities,
            time,
        });
        i += 2 + n;
    }
    Ok(systems)
}

fn floats3(field: &[&str], line: usize) -> Result<[f64; 3]> {
    let mut out = [0.0f64; 3];
    for (o, s) in out.iter_mut().zip(field) {
        *o = s
            .parse()
            .map_err(|_| perr(line, format!("malformed float `{s}`")))?;
        if !o.is_finite() {
            return Err(perr(line, format!("non-finite value `{s}`")));
        }
    }
    Ok(out)
}

fn symbol_of(z: u32) -> String {
    elements::symbol(z).map_or_else(|| format!("X{z}"), str::to_string)
}

/// Serialize systems; positions and forces with 12 decimals.
pub fn write_extended_xyz(systems: &[MolecularSystem]) -> String {
    let mut s = String::new();
    for sys in systems {
        let _ = writeln!(s, "{}", sys.n_atoms());
        let props = if sys.forces.is_some() {
            "species:S:1:pos:R:3:forces:R:3"
        } else {
            "species:S:1:pos:R:3"
        };
        let _ = write!(
            s,
            "Properties={props} charge={} spin={}",
            sys.charge, sys.spin
        );
        if let Some(e) = sys.energy {
            let _ = write!(s, " energy={e:.12}");
        }
        s.push('\n');
        for a in 0..sys.n_atoms() {
            let p = sys.positions[a];
            let _ = write!(
                s,
                "{} {:.12} {:.12} {:.12}",
                symbol_of(sys.atomic_numbers[a]),
                p[0],
                p[1],
                p[2]
            );
            if let Some(f) = &sys.forces {
                let _ = write!(s, " {:.12} {:.12} {:.12}", f[a][0], f[a][1], f[a][2]);
            }
            s.push('\n');
        }
    }
    s
}

/// One trajectory frame with velocities (Å/fs) and forces.
pub fn write_frame(
    out: &mut String,
    atomic_numbers: &[u32],
    positions: &[[f64; 3]],
    velocities: &[[f64; 3]],
    forces: &[[f64; 3]],
    time_fs: f64,
) {
    let _ = writeln!(out, "{}", atomic_numbers.len());
    let _ = writeln!(
        out,
        "Properties=species:S:1:pos:R:3:vel:R:3:forces:R:3 time={time_fs:.6}"
    );
    for a in 0..atomic_numbers.len() {
        let (p, v, f) = (positions[a], velocities[a], forces[a]);
        let _ = writeln!(
            out,
            "{} {:.10} {:.10} {:.10} {:.10e} {:.10e} {:.10e} {:.10e} {:.10e} {:.10e}",
            symbol_of(atomic_numbers[a]),
            p[0],
            p[1],
            p[2],
            v[0],
            v[1],
            v[2],
            f[0],
            f[1],
            f[2]
        );
    }
}
