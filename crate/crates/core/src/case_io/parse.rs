use std::collections::HashMap;

use super::{validate, Branch, Bus, BusKind, CaseError, Generator, Network, Severity};
use crate::Scalar;

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

struct Matrix {
    line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

/// Parses MATPOWER case text into a validated per-unit network.
pub fn parse_case<T: Scalar>(text: &str) -> Result<Network<T>, CaseError> {
    let (scalars, matrices) = scan(text)?;

    let base = match scalars.get("baseMVA") {
        Some(&(line, ref raw)) => raw.parse::<f64>().map_err(|_| CaseError::Syntax {
            line,
            message: format!("baseMVA is not a number: `{raw}`"),
        })?,
        None => return Err(CaseError::MissingBlock("baseMVA")),
    };
    if !(base > 0.0) {
        return Err(CaseError::Syntax { line: scalars["baseMVA"].0, message: "baseMVA must be positive".into() });
    }
    let bus_m = matrices.get("bus").ok_or(CaseError::MissingBlock("bus"))?;
    let gen_m = matrices.get("gen").ok_or(CaseError::MissingBlock("gen"))?;
    let branch_m = matrices.get("branch").ok_or(CaseError::MissingBlock("branch"))?;
    let cost_m = matrices.get("gencost");

    let pu = |v: f64| T::lit(v / base);

    let mut buses = Vec::new();
    for (line, row) in &bus_m.rows {
        need(row, BUS_COLS, *line, "bus")?;
        let kind = BusKind::from_code(row[1])
            .ok_or_else(|| CaseError::Syntax { line: *line, message: format!("unknown bus type {}", row[1]) })?;
        if kind == BusKind::Isolated {
            continue;
        }
        buses.push(Bus {
            id: id_of(row[0], *line)?,
            kind,
            pd: pu(row[2]),
            qd: pu(row[3]),
            gs: pu(row[4]),
            bs: pu(row[5]),
            vmax: T::lit(row[11]),
            vmin: T::lit(row[12]),
        });
    }
    let isolated: Vec<usize> = bus_m
        .rows
        .iter()
        .filter(|(_, r)| BusKind::from_code(r[1]) == Some(BusKind::Isolated))
        .map(|(_, r)| r[0] as usize)
        .collect();

    let costs = match cost_m {
        Some(m) => Some(parse_costs(m, gen_m.rows.len())?),
        None => None,
    };

    let mut gens = Vec::new();
    for (g, (line, row)) in gen_m.rows.iter().enumerate() {
        need(row, GEN_COLS, *line, "gen")?;
        let bus = id_of(row[0], *line)?;
        if row[7] <= 0.0 || isolated.contains(&bus) {
            continue;
        }
        let (c2, c1, c0) = costs.as_ref().map_or((0.0, 0.0, 0.0), |c| c[g]);
        gens.push(Generator {
            bus,
            qmax: pu(row[3]),
            qmin: pu(row[4]),
            pmax: pu(row[8]),
            pmin: pu(row[9]),
            c2: T::lit(c2),
            c1: T::lit(c1),
            c0: T::lit(c0),
        });
    }

    let mut branches = Vec::new();
    for (line, row) in &branch_m.rows {
        need(row, BRANCH_COLS, *line, "branch")?;
        let (from, to) = (id_of(row[0], *line)?, id_of(row[1], *line)?);
        if row[10] <= 0.0 || isolated.contains(&from) || isolated.contains(&to) {
            continue;
        }
        let tap = if row[8] == 0.0 { 1.0 } else { row[8] };
        branches.push(Branch {
            from,
            to,
            r: T::lit(row[2]),
            x: T::lit(row[3]),
            bc: T::lit(row[4]),
            smax: pu(row[5]),
            tap: T::lit(tap),
            shift: T::lit(row[9].to_radians()),
        });
    }

    let net = Network::new(T::lit(base), buses, gens, branches);
    for (g, gen) in net.gens.iter().enumerate() {
        if net.bus_index(gen.bus).is_none() {
            return Err(CaseError::DanglingBus { element: format!("generator {}", g + 1), bus: gen.bus });
        }
    }
    for (l, br) in net.branches.iter().enumerate() {
        for id in [br.from, br.to] {
            if net.bus_index(id).is_none() {
                return Err(CaseError::DanglingBus { element: format!("branch {}", l + 1), bus: id });
            }
        }
    }
    let errors: Vec<_> = validate(&net).into_iter().filter(|d| d.severity == Severity::Error).collect();
    if !errors.is_empty() {
        return Err(CaseError::Invalid(errors));
    }
    Ok(net)
}

fn need(row: &[f64], cols: usize, line: usize, block: &str) -> Result<(), CaseError> {
    if row.len() < cols {
        return Err(CaseError::Syntax {
            line,
            message: format!("{block} row has {} columns, expected at least {cols}", row.len()),
        });
    }
    Ok(())
}

fn id_of(v: f64, line: usize) -> Result<usize, CaseError> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(CaseError::Syntax { line, message: format!("`{v}` is not a bus id") })
    }
}

/// Returns `(c2, c1, c0)` for every generator row, in file order.
fn parse_costs(m: &Matrix, n_gen: usize) -> Result<Vec<(f64, f64, f64)>, CaseError> {
    if m.rows.len() < n_gen {
        return Err(CaseError::Syntax {
            line: m.line,
            message: format!("gencost has {} rows for {n_gen} generators", m.rows.len()),
        });
    }
    // Rows past n_gen hold reactive-power costs, which the model does not use.
    m.rows[..n_gen]
        .iter()
        .enumerate()
        .map(|(g, (line, row))| {
            need(row, 4, *line, "gencost")?;
            let gen = g + 1;
            if row[0] != 2.0 {
                return Err(CaseError::UnsupportedCost { gen, reason: format!("cost model {} (only polynomial model 2)", row[0]) });
            }
            let n = row[3] as usize;
            if n > 3 {
                return Err(CaseError::UnsupportedCost { gen, reason: format!("polynomial with {n} coefficients") });
            }
            need(row, 4 + n, *line, "gencost")?;
            let mut c = [0.0; 3];
            // Coefficients are listed from the highest degree down to c0.
            for (i, v) in row[4..4 + n].iter().enumerate() {
                c[3 - n + i] = *v;
            }
            if c[0] < 0.0 {
                return Err(CaseError::NonconvexCost { gen, c2: c[0] });
            }
            Ok((c[0], c[1], c[2]))
        })
        .collect()
}

type Scalars = HashMap<String, (usize, String)>;

/// Splits the text into `name = value` statements. Cell arrays, strings and the
/// `function` header are skipped.
fn scan(text: &str) -> Result<(Scalars, HashMap<String, Matrix>), CaseError> {
    let clean: Vec<char> = text
        .lines()
        .map(|l| {
            let body = l.split('%').next().unwrap_or("");
            if body.trim_start().starts_with("function") {
                ""
            } else {
                body
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        .chars()
        .collect();

    let mut scalars = HashMap::new();
    let mut matrices = HashMap::new();
    let mut pos = 0;
    let mut line = 1;
    let n = clean.len();

    let advance = |pos: &mut usize, line: &mut usize| {
        if clean[*pos] == '\n' {
            *line += 1;
        }
        *pos += 1;
    };

    while pos < n {
        let c = clean[pos];
        if c.is_whitespace() || c == ';' || c == ',' {
            advance(&mut pos, &mut line);
            continue;
        }
        if !(c.is_ascii_alphabetic() || c == '_') {
            return Err(CaseError::Syntax { line, message: format!("unexpected `{c}`") });
        }
        let start = pos;
        while pos < n && (clean[pos].is_ascii_alphanumeric() || clean[pos] == '_' || clean[pos] == '.') {
            pos += 1;
        }
        let name: String = clean[start..pos].iter().collect();
        let name = name.strip_prefix("mpc.").unwrap_or(&name).to_string();
        while pos < n && clean[pos] != '\n' && clean[pos].is_whitespace() {
            pos += 1;
        }
        if pos >= n || clean[pos] != '=' {
            return Err(CaseError::Syntax { line, message: format!("expected `=` after `{name}`") });
        }
        pos += 1;
        while pos < n && clean[pos].is_whitespace() {
            advance(&mut pos, &mut line);
        }
        if pos >= n {
            return Err(CaseError::Syntax { line, message: format!("missing value for `{name}`") });
        }
        match clean[pos] {
            '[' => {
                let open_line = line;
                pos += 1;
                let body_start = pos;
                while pos < n && clean[pos] != ']' {
                    if clean[pos] == '[' {
                        return Err(CaseError::Syntax { line, message: "nested `[`".into() });
                    }
                    advance(&mut pos, &mut line);
                }
                if pos >= n {
                    return Err(CaseError::Syntax { line: open_line, message: format!("unterminated `{name}` block") });
                }
                let body: String = clean[body_start..pos].iter().collect();
                pos += 1;
                matrices.insert(name, parse_matrix(&body, open_line)?);
            }
            '{' => {
                let open_line = line;
                while pos < n && clean[pos] != '}' {
                    advance(&mut pos, &mut line);
                }
                if pos >= n {
                    return Err(CaseError::Syntax { line: open_line, message: format!("unterminated `{name}` cell") });
                }
                pos += 1;
            }
            '\'' | '"' => {
                let quote = clean[pos];
                pos += 1;
                while pos < n && clean[pos] != quote && clean[pos] != '\n' {
                    pos += 1;
                }
                if pos >= n || clean[pos] != quote {
                    return Err(CaseError::Syntax { line, message: "unterminated string".into() });
                }
                pos += 1;
            }
            _ => {
                let start = pos;
                while pos < n && clean[pos] != ';' && clean[pos] != '\n' {
                    pos += 1;
                }
                let raw: String = clean[start..pos].iter().collect();
                scalars.insert(name, (line, raw.trim().to_string()));
            }
        }
    }
    Ok((scalars, matrices))
}

fn parse_matrix(body: &str, first_line: usize) -> Result<Matrix, CaseError> {
    let mut rows = Vec::new();
    for (offset, text_line) in body.split('\n').enumerate() {
        let line = first_line + offset;
        for chunk in text_line.split(';') {
            let mut row = Vec::new();
            for tok in chunk.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| CaseError::Syntax { line, message: format!("`{tok}` is not a number") })?;
                row.push(v);
            }
            if !row.is_empty() {
                rows.push((line, row));
            }
        }
    }
    Ok(Matrix { line: first_line, rows })
}
