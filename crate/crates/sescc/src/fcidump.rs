//! FCIDUMP reading and writing.
//!
//! Header `&FCI NORB=..,NELEC=..,MS2=..` (extra keys such as ORBSYM/ISYM are
//! accepted and ignored), closed by `&END` or `/`, then `value i j k l`
//! records with 1-based spatial indices.

use std::collections::HashMap;
use std::fmt::Write as _;

use sescc_core::integrals::TwoBodySymmetry;
use sescc_core::HamiltonianSpec;

use crate::error::CliError;

/// A parsed file: integrals plus the spin projection from the header.
#[derive(Clone, Debug, PartialEq)]
pub struct Fcidump {
    pub hamiltonian: HamiltonianSpec,
    pub ms2: i64,
}

fn err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Parse { line, msg: msg.into() }
}

struct Header {
    norb: usize,
    nelec: usize,
    ms2: i64,
    /// Line number of the first integral record.
    body_start: usize,
}

fn parse_header(lines: &[&str]) -> Result<Header, CliError> {
    let first = lines.iter().position(|l| !l.trim().is_empty()).ok_or_else(|| err(1, "empty file"))?;
    if !lines[first].trim_start().to_ascii_uppercase().starts_with("&FCI") {
        return Err(err(first + 1, "expected `&FCI` namelist header"));
    }
    let mut text = String::new();
    let mut end = None;
    for (k, raw) in lines.iter().enumerate().skip(first) {
        let upper = raw.to_ascii_uppercase();
        let (body, closed) = match (upper.find("&END"), upper.find('/')) {
            (Some(a), Some(b)) => (&upper[..a.min(b)], true),
            (Some(a), None) | (None, Some(a)) => (&upper[..a], true),
            (None, None) => (upper.as_str(), false),
        };
        text.push_str(body);
        text.push(',');
        if closed {
            end = Some(k);
            break;
        }
    }
    let end = end.ok_or_else(|| err(first + 1, "header is not closed by `&END` or `/`"))?;
    let text = text.trim_start().trim_start_matches("&FCI");

    let mut values: HashMap<String, String> = HashMap::new();
    let mut current: Option<String> = None;
    for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((key, value)) = token.split_once('=') {
            let key = key.trim().to_string();
            values.insert(key.clone(), value.trim().to_string());
            current = Some(key);
        } else if current.is_none() {
            return Err(err(first + 1, format!("stray header token `{token}`")));
        }
    }
    let int = |key: &str| -> Result<Option<i64>, CliError> {
        values
            .get(key)
            .map(|v| v.parse::<i64>().map_err(|_| err(first + 1, format!("{key}={v} is not an integer"))))
            .transpose()
    };
    let norb = int("NORB")?.ok_or_else(|| err(first + 1, "header lacks NORB"))?;
    let nelec = int("NELEC")?.ok_or_else(|| err(first + 1, "header lacks NELEC"))?;
    let ms2 = int("MS2")?.unwrap_or(0);
    if norb < 1 || nelec < 0 {
        return Err(err(first + 1, format!("invalid NORB={norb} or NELEC={nelec}")));
    }
    if (nelec - ms2).rem_euclid(2) != 0 || ms2.abs() > nelec {
        return Err(err(first + 1, format!("MS2={ms2} is incompatible with NELEC={nelec}")));
    }
    Ok(Header { norb: norb as usize, nelec: nelec as usize, ms2, body_start: end + 2 })
}

fn parse_real(token: &str) -> Option<f64> {
    let v: f64 = token.replace(['d', 'D'], "e").parse().ok()?;
    v.is_finite().then_some(v)
}

pub fn parse_fcidump(text: &str) -> Result<Fcidump, CliError> {
    let lines: Vec<&str> = text.lines().collect();
    let header = parse_header(&lines)?;
    let mut ham = HamiltonianSpec::new(header.norb, header.nelec, TwoBodySymmetry::EightFold)
        .map_err(|e| err(1, e.to_string()))?;

    let mut seen: HashMap<[usize; 4], (f64, usize)> = HashMap::new();
    for (k, raw) in lines.iter().enumerate().skip(header.body_start - 1) {
        let line = k + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(err(line, format!("expected `value i j k l`, found {} fields", tokens.len())));
        }
        let value = parse_real(tokens[0]).ok_or_else(|| err(line, format!("`{}` is not a real number", tokens[0])))?;
        let mut idx = [0usize; 4];
        for (slot, tok) in idx.iter_mut().zip(&tokens[1..]) {
            let i: usize = tok.parse().map_err(|_| err(line, format!("`{tok}` is not an orbital index")))?;
            if i > header.norb {
                return Err(err(line, format!("index {i} exceeds NORB={}", header.norb)));
            }
            *slot = i;
        }
        let key = match idx {
            [0, 0, 0, 0] => [0, 0, 0, 0],
            [i, j, 0, 0] if i > 0 && j > 0 => [i.max(j), i.min(j), 0, 0],
            [i, j, k, l] if i > 0 && j > 0 && k > 0 && l > 0 => {
                let c = TwoBodySymmetry::EightFold.canonical(i - 1, j - 1, k - 1, l - 1);
                [c[0] + 1, c[1] + 1, c[2] + 1, c[3] + 1]
            }
            _ => return Err(err(line, format!("invalid index pattern {idx:?}"))),
        };
        if let Some(&(prev, at)) = seen.get(&key) {
            if prev != value {
                return Err(err(line, format!("value {value} conflicts with {prev} given on line {at}")));
            }
            continue;
        }
        seen.insert(key, (value, line));
        let set = match key {
            [0, 0, 0, 0] => ham.set_core_energy(value),
            [i, j, 0, 0] => ham.set_one_body(i - 1, j - 1, value),
            [i, j, k, l] => ham.set_two_body(i - 1, j - 1, k - 1, l - 1, value),
        };
        set.map_err(|e| err(line, e.to_string()))?;
    }
    Ok(Fcidump { hamiltonian: ham, ms2: header.ms2 })
}

/// Writes every unique nonzero integral. Values use Rust's shortest
/// round-trip formatting, so parsing the output reproduces them exactly.
pub fn write_fcidump(ham: &HamiltonianSpec, ms2: i64) -> Result<String, CliError> {
    if !ham.is_eight_fold() {
        return Err(CliError::Config("FCIDUMP output needs eightfold two-body symmetry".into()));
    }
    let n = ham.n_spatial();
    let mut out = String::new();
    let orbsym = vec!["1"; n].join(",");
    let _ = writeln!(out, "&FCI NORB={n},NELEC={},MS2={ms2},", ham.n_electrons());
    let _ = writeln!(out, " ORBSYM={orbsym},");
    let _ = writeln!(out, " ISYM=1,");
    let _ = writeln!(out, "&END");
    for ([p, q, r, s], v) in ham.unique_two_body() {
        if v != 0.0 {
            let _ = writeln!(out, "{v:e} {} {} {} {}", p + 1, q + 1, r + 1, s + 1);
        }
    }
    for p in 0..n {
        for q in 0..=p {
            let v = ham.h(p, q);
            if v != 0.0 {
                let _ = writeln!(out, "{v:e} {} {} 0 0", p + 1, q + 1);
            }
        }
    }
    let _ = writeln!(out, "{:e} 0 0 0 0", ham.core_energy());
    Ok(out)
}
