//! Reading and writing trial datasets.
//!
//! Two encodings are supported: the JSON form of [`TrialDataset`] and a
//! rectangular text block with one study per row:
//!
//! ```text
//! #Data (1=placebo, 2=active)
//! list(ns=2,nt=2)
//! t[,1]  t[,2]  n[,1]  r[,1]  n[,2]  r[,2]  na[]
//! 1      2      21     14     24     7      2
//! 1      2      30     12     31     9      2
//! END
//! ```
//!
//! Fields may be separated by whitespace or commas. Normal data use
//! `y[,k]` and `se[,k]` columns instead of `r`/`n`, and `list()` may carry
//! `sigma=` for the individual-level SD. Unused arm cells hold `NA`.

use std::path::Path;

use crate::engine::{Arm, Likelihood, Study, TrialDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    T,
    R,
    N,
    Y,
    Se,
}

#[derive(Debug, Clone, Copy)]
enum Column {
    Arm(Field, usize),
    Na,
}

fn parse_column(tok: &str) -> Option<Column> {
    if tok == "na[]" {
        return Some(Column::Na);
    }
    let (name, rest) = tok.split_once("[,")?;
    let k: usize = rest.strip_suffix(']')?.parse().ok()?;
    let field = match name {
        "t" => Field::T,
        "r" => Field::R,
        "n" => Field::N,
        "y" => Field::Y,
        "se" => Field::Se,
        _ => return None,
    };
    (k >= 1).then_some(Column::Arm(field, k))
}

/// Splits a line into tokens with their 1-based starting columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut depth = 0usize;
    for (i, ch) in line.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            _ => {}
        }
        let sep = ch.is_whitespace() || (ch == ',' && depth == 0);
        match (sep, start) {
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn parse_names(body: &str) -> Vec<(usize, String)> {
    let inner = body
        .trim()
        .trim_start_matches('(')
        .trim_end_matches(')');
    let mut out: Vec<(usize, String)> = Vec::new();
    for piece in inner.split(',') {
        let piece_t = piece.trim();
        let entry = piece_t
            .split_once('=')
            .and_then(|(id, name)| id.trim().parse::<usize>().ok().map(|id| (id, name.trim().to_string())));
        match (entry, out.last_mut()) {
            (Some(e), _) => out.push(e),
            (None, Some(last)) => {
                last.1.push(',');
                last.1.push_str(piece);
            }
            (None, None) => {}
        }
    }
    out
}

#[derive(Default)]
struct Header {
    ns: Option<usize>,
    nt: Option<usize>,
    sigma: Option<f64>,
}

fn parse_list(line: &str, lineno: usize) -> Result<Header> {
    let inner = line
        .trim()
        .strip_prefix("list(")
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::parse(lineno, 1, "expected list(...)"))?;
    let mut h = Header::default();
    for part in inner.split(',') {
        let col = line.find(part).map_or(1, |c| c + 1);
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, col, format!("expected key=value, got '{}'", part.trim())))?;
        let value = value.trim();
        let bad = |e: &dyn std::fmt::Display| Error::parse(lineno, col, format!("{}: {e}", key.trim()));
        match key.trim() {
            "ns" => h.ns = Some(value.parse().map_err(|e| bad(&e))?),
            "nt" => h.nt = Some(value.parse().map_err(|e| bad(&e))?),
            "sigma" => h.sigma = Some(value.parse().map_err(|e| bad(&e))?),
            other => return Err(Error::parse(lineno, col, format!("unknown list entry '{other}'"))),
        }
    }
    Ok(h)
}

/// Parses either encoding, chosen by the first non-blank character.
pub fn parse_dataset(text: &str) -> Result<TrialDataset> {
    if text.trim_start().starts_with('{') {
        return Ok(serde_json::from_str(text)?);
    }
    parse_rectangular(text)
}

pub fn parse_rectangular(text: &str) -> Result<TrialDataset> {
    let mut names: Vec<(usize, String)> = Vec::new();
    let mut header: Option<Header> = None;
    let mut columns: Option<Vec<Column>> = None;
    let mut studies = Vec::new();
    let mut likelihood = None;
    let mut last_line = 0;
    let mut ended = false;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = raw.trim_end();
        let trimmed = line.trim_start();
        if trimmed.is_empty() {
            continue;
        }
        if ended {
            return Err(Error::parse(lineno, 1, "content after END"));
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(body) = comment.trim_start().strip_prefix("Data") {
                names = parse_names(body);
            }
            continue;
        }
        if trimmed.starts_with("list(") {
            header = Some(parse_list(trimmed, lineno)?);
            continue;
        }
        if trimmed == "END" {
            ended = true;
            continue;
        }
        let toks = tokens(line);
        let Some(cols) = &columns else {
            let parsed = toks
                .iter()
                .map(|&(c, t)| parse_column(t).ok_or_else(|| Error::parse(lineno, c, format!("unknown column '{t}'"))))
                .collect::<Result<Vec<_>>>()?;
            let has = |f: Field| parsed.iter().any(|c| matches!(c, Column::Arm(g, _) if *g == f));
            likelihood = Some(match (has(Field::R) || has(Field::N), has(Field::Y) || has(Field::Se)) {
                (true, false) => Likelihood::BinomialLogit,
                (false, true) => Likelihood::NormalIdentity,
                _ => return Err(Error::parse(lineno, 1, "header needs either r/n or y/se columns")),
            });
            if !has(Field::T) {
                return Err(Error::parse(lineno, 1, "header has no t[,k] columns"));
            }
            columns = Some(parsed);
            continue;
        };
        let header = header.as_ref().ok_or_else(|| Error::parse(lineno, 1, "data row before list(...)"))?;
        if toks.len() != cols.len() {
            return Err(Error::parse(
                lineno,
                toks.last().map_or(1, |t| t.0),
                format!("expected {} fields, found {}", cols.len(), toks.len()),
            ));
        }
        studies.push(parse_row(&toks, cols, lineno, header.nt, likelihood.expect("set with header"))?);
    }

    let header = header.ok_or_else(|| Error::parse(last_line.max(1), 1, "missing list(ns=..., nt=...)"))?;
    let likelihood = likelihood.ok_or_else(|| Error::parse(last_line.max(1), 1, "missing column header"))?;
    if studies.is_empty() {
        return Err(Error::parse(last_line.max(1), 1, "no study rows"));
    }
    if let Some(ns) = header.ns {
        if ns != studies.len() {
            return Err(Error::parse(last_line, 1, format!("list says ns={ns} but {} rows were read", studies.len())));
        }
    }
    let n_treatments = header.nt.unwrap_or_else(|| {
        studies
            .iter()
            .flat_map(|s: &Study| s.arms.iter().map(Arm::treatment))
            .max()
            .unwrap_or(0)
    });
    let mut treatment_names = Vec::new();
    if !names.is_empty() {
        treatment_names = (1..=n_treatments)
            .map(|k| {
                names
                    .iter()
                    .find(|(id, _)| *id == k)
                    .map(|(_, n)| n.clone())
                    .unwrap_or_else(|| format!("treatment {k}"))
            })
            .collect();
    }
    let ds = TrialDataset {
        n_treatments,
        likelihood,
        studies,
        sigma_individual: header.sigma,
        treatment_names,
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_row(toks: &[(usize, &str)], cols: &[Column], lineno: usize, nt: Option<usize>, lik: Likelihood) -> Result<Study> {
    let max_k = cols
        .iter()
        .filter_map(|c| match c {
            Column::Arm(_, k) => Some(*k),
            Column::Na => None,
        })
        .max()
        .unwrap_or(0);
    // cells[k][field] = (column, text)
    let mut cells: Vec<[Option<(usize, &str)>; 5]> = vec![[None; 5]; max_k + 1];
    let mut na = None;
    for (&(c, t), col) in toks.iter().zip(cols) {
        match *col {
            Column::Na => {
                na = Some(
                    t.parse::<usize>()
                        .map_err(|e| Error::parse(lineno, c, format!("na[]: {e}")))?,
                )
            }
            Column::Arm(f, k) => cells[k][f as usize] = Some((c, t)),
        }
    }
    let present: Vec<usize> = (1..=max_k)
        .filter(|&k| cells[k][Field::T as usize].is_some_and(|(_, t)| t != "NA"))
        .collect();
    let n_arms = na.unwrap_or(present.len());
    if n_arms > max_k {
        return Err(Error::parse(lineno, 1, format!("na[]={n_arms} exceeds the {max_k} arm columns")));
    }
    let get = |k: usize, f: Field| -> Result<(usize, &str)> {
        match cells[k][f as usize] {
            Some((c, "NA")) => Err(Error::parse(lineno, c, format!("arm {k} is within na[] but has NA"))),
            Some(cell) => Ok(cell),
            None => Err(Error::parse(lineno, 1, format!("missing column for arm {k}"))),
        }
    };
    let mut arms = Vec::with_capacity(n_arms);
    for k in 1..=n_arms {
        let (tc, tt) = get(k, Field::T)?;
        let treatment: usize = tt
            .parse()
            .map_err(|e| Error::parse(lineno, tc, format!("treatment id: {e}")))?;
        if treatment == 0 || nt.is_some_and(|nt| treatment > nt) {
            return Err(Error::parse(lineno, tc, format!("unknown treatment id {treatment}")));
        }
        let arm = match lik {
            Likelihood::BinomialLogit => {
                let int = |f: Field, name: &str| -> Result<(usize, u64)> {
                    let (c, t) = get(k, f)?;
                    t.parse::<u64>()
                        .map(|v| (c, v))
                        .map_err(|e| Error::parse(lineno, c, format!("{name}[,{k}]: {e}")))
                };
                let (rc, r) = int(Field::R, "r")?;
                let (_, n) = int(Field::N, "n")?;
                if n == 0 || r > n {
                    return Err(Error::parse(lineno, rc, format!("need 0 <= r <= n and n > 0, got r={r}, n={n}")));
                }
                Arm::Binomial { treatment, r, n }
            }
            Likelihood::NormalIdentity => {
                let float = |f: Field, name: &str| -> Result<(usize, f64)> {
                    let (c, t) = get(k, f)?;
                    t.parse::<f64>()
                        .map(|v| (c, v))
                        .map_err(|e| Error::parse(lineno, c, format!("{name}[,{k}]: {e}")))
                };
                let (_, y) = float(Field::Y, "y")?;
                let (sc, se) = float(Field::Se, "se")?;
                if !(se.is_finite() && se > 0.0) || !y.is_finite() {
                    return Err(Error::parse(lineno, sc, format!("need finite y and se > 0, got y={y}, se={se}")));
                }
                Arm::Normal { treatment, y, se }
            }
        };
        arms.push(arm);
    }
    Ok(Study { arms })
}

/// Renders the rectangular encoding; `parse_rectangular` inverts it.
pub fn to_rectangular(ds: &TrialDataset) -> String {
    let k = ds.max_arms();
    let mut out = String::new();
    if !ds.treatment_names.is_empty() {
        let names: Vec<String> = ds
            .treatment_names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{}={n}", i + 1))
            .collect();
        out.push_str(&format!("#Data ({})\n", names.join(", ")));
    }
    out.push_str(&format!("list(ns={},nt={}", ds.n_studies(), ds.n_treatments));
    if let Some(s) = ds.sigma_individual {
        out.push_str(&format!(",sigma={s}"));
    }
    out.push_str(")\n");
    let (a, b) = match ds.likelihood {
        Likelihood::BinomialLogit => ("r", "n"),
        Likelihood::NormalIdentity => ("y", "se"),
    };
    let mut head: Vec<String> = (1..=k).map(|j| format!("t[,{j}]")).collect();
    head.extend((1..=k).map(|j| format!("{a}[,{j}]")));
    head.extend((1..=k).map(|j| format!("{b}[,{j}]")));
    head.push("na[]".into());
    out.push_str(&head.join("\t"));
    out.push('\n');
    for s in &ds.studies {
        let cell = |j: usize, f: &dyn Fn(&Arm) -> String| s.arms.get(j).map_or("NA".to_string(), f);
        let mut row: Vec<String> = (0..k).map(|j| cell(j, &|arm| arm.treatment().to_string())).collect();
        row.extend((0..k).map(|j| {
            cell(j, &|arm| match *arm {
                Arm::Binomial { r, .. } => r.to_string(),
                Arm::Normal { y, .. } => y.to_string(),
            })
        }));
        row.extend((0..k).map(|j| {
            cell(j, &|arm| match *arm {
                Arm::Binomial { n, .. } => n.to_string(),
                Arm::Normal { se, .. } => se.to_string(),
            })
        }));
        row.push(s.arms.len().to_string());
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out.push_str("END\n");
    out
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrialDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text)
}

/// Writes JSON for a `.json` path and the rectangular form otherwise.
pub fn save_dataset(ds: &TrialDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = if path.extension().is_some_and(|e| e == "json") {
        serde_json::to_string_pretty(ds)? + "\n"
    } else {
        to_rectangular(ds)
    };
    std::fs::write(path, text)?;
    Ok(())
}
