//! Numeric table parsing, regressor recipes and moment files.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::moments::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    /// Whitespace-delimited.
    Prn,
    Csv,
}

impl TableFormat {
    /// Guesses from the file extension; anything but `.csv` is whitespace-delimited.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => TableFormat::Csv,
            _ => TableFormat::Prn,
        }
    }
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prn" | "txt" | "whitespace" => Ok(TableFormat::Prn),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::Config(format!("unknown table format {other:?}"))),
        }
    }
}

/// A rectangular table of finite numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    n_cols: usize,
    cells: Vec<f64>,
    pub source: Option<String>,
    pub had_header: bool,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.cells.len() / self.n_cols
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.cells[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.cells.chunks(self.n_cols.max(1))
    }

    /// Canonical CSV: comma-delimited, LF line endings, shortest
    /// round-trip number formatting, no header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("formatted numbers are ASCII")
    }
}

fn parse_number(token: &str, line: usize, column: usize) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Parse { line, column, token: token.to_string() }),
    }
}

/// `(line number, fields)` for each non-blank record.
fn records(text: &str, format: TableFormat) -> Result<Vec<(usize, Vec<String>)>> {
    match format {
        TableFormat::Prn => Ok(text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_string).collect()))
            .collect()),
        TableFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            let mut out = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                if rec.iter().all(|f| f.is_empty()) {
                    continue;
                }
                out.push((line, rec.iter().map(str::to_string).collect()));
            }
            Ok(out)
        }
    }
}

/// Parses a table from text. A first row made only of non-numeric tokens
/// is taken as a header and skipped.
pub fn parse_str(text: &str, format: TableFormat) -> Result<RawTable> {
    let mut recs = records(text, format)?.into_iter().peekable();
    let mut had_header = false;
    if let Some((_, first)) = recs.peek() {
        if first.iter().all(|t| t.parse::<f64>().is_err()) {
            had_header = true;
            recs.next();
        }
    }
    let mut n_cols = None;
    let mut cells = Vec::new();
    for (line, fields) in recs {
        let expected = *n_cols.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::RaggedRow { line, expected, got: fields.len() });
        }
        for (c, tok) in fields.iter().enumerate() {
            cells.push(parse_number(tok, line, c + 1)?);
        }
    }
    Ok(RawTable { n_cols: n_cols.unwrap_or(0), cells, source: None, had_header })
}

pub fn parse_table(path: &Path, format: TableFormat) -> Result<RawTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut t = parse_str(&text, format)?;
    t.source = Some(path.display().to_string());
    Ok(t)
}

/// One entry of a design vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    Column(usize),
    Product(usize, usize),
    Square(usize),
    Constant(f64),
}

impl Term {
    fn columns(&self) -> Vec<usize> {
        match *self {
            Term::Column(i) | Term::Square(i) => vec![i],
            Term::Product(i, j) => vec![i, j],
            Term::Constant(_) => vec![],
        }
    }

    fn eval(&self, row: &[f64]) -> f64 {
        match *self {
            Term::Column(i) => row[i],
            Term::Product(i, j) => row[i] * row[j],
            Term::Square(i) => row[i] * row[i],
            Term::Constant(c) => c,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Column(i) => write!(f, "column({i})"),
            Term::Product(i, j) => write!(f, "product({i},{j})"),
            Term::Square(i) => write!(f, "square({i})"),
            Term::Constant(c) => write!(f, "constant({c})"),
        }
    }
}

/// Ordered list of terms mapping a table row to a design vector.
///
/// Text form: terms separated by `;` or top-level commas, e.g.
/// `constant(1), column(0), product(0,1), square(1)`. Columns are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorRecipe {
    terms: Vec<Term>,
}

impl RegressorRecipe {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Config("a regressor recipe needs at least one term".into()));
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl fmt::Display for RegressorRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        f.write_str(&parts.join(", "))
    }
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' | ';' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts.into_iter().map(str::trim).filter(|p| !p.is_empty()).collect()
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse recipe term {s:?}"));
        let open = s.find('(').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let args: Vec<&str> = inner.split(',').map(str::trim).collect();
        let idx = |t: &str| t.parse::<usize>().map_err(|_| bad());
        match (s[..open].trim(), args.as_slice()) {
            ("column" | "col", [i]) => Ok(Term::Column(idx(i)?)),
            ("product" | "prod", [i, j]) => Ok(Term::Product(idx(i)?, idx(j)?)),
            ("square" | "sq", [i]) => Ok(Term::Square(idx(i)?)),
            ("constant" | "const", [c]) => {
                let c: f64 = c.parse().map_err(|_| bad())?;
                if c.is_finite() {
                    Ok(Term::Constant(c))
                } else {
                    Err(bad())
                }
            }
            _ => Err(bad()),
        }
    }
}

impl FromStr for RegressorRecipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let terms = split_top_level(s).into_iter().map(str::parse).collect::<Result<Vec<Term>>>()?;
        Self::new(terms)
    }
}

/// Maps each table row through `recipe`; row order is preserved.
pub fn build_design(table: &RawTable, recipe: &RegressorRecipe, response_col: Option<usize>) -> Result<DataMatrix> {
    let available = table.n_cols();
    for col in recipe.terms().iter().flat_map(Term::columns).chain(response_col) {
        if col >= available {
            return Err(Error::ColumnOutOfRange { column: col, available });
        }
    }
    if let Some(r) = response_col {
        if recipe.terms().iter().any(|t| t.columns().contains(&r)) {
            return Err(Error::Config(format!("response column {r} is also used as a regressor")));
        }
    }
    if table.n_rows() == 0 {
        return Err(Error::EmptyData);
    }
    let mut flat = Vec::with_capacity(table.n_rows() * recipe.len());
    for row in table.rows() {
        flat.extend(recipe.terms().iter().map(|t| t.eval(row)));
    }
    let responses = response_col.map(|r| table.rows().map(|row| row[r]).collect());
    DataMatrix::new(recipe.len(), flat, responses)
}

/// Second and fourth moment matrices read from a moments file.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentsFile {
    pub second_moment: SymMatrix,
    pub fourth_moment: SymMatrix,
    /// Largest `|A_ij - A_ji|` seen before symmetrizing either matrix.
    pub max_asymmetry: f64,
}

fn asymmetry(rows: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, r) in rows.iter().enumerate() {
        for (j, &x) in r.iter().enumerate().skip(i + 1) {
            worst = worst.max((x - rows[j][i]).abs());
        }
    }
    worst
}

/// Parses a moments file.
///
/// ```text
/// # comment
/// [second_moment]
/// 1 0
/// 0 1
/// [fourth_moment]
/// 4 0
/// 0 4
/// ```
///
/// Rows are whitespace- or comma-delimited. Slightly asymmetric input is
/// symmetrized.
pub fn parse_moments_str(text: &str) -> Result<MomentsFile> {
    let mut second: Option<Vec<Vec<f64>>> = None;
    let mut fourth: Option<Vec<Vec<f64>>> = None;
    let mut current: Option<&mut Vec<Vec<f64>>> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let slot = match name.trim() {
                "second_moment" => &mut second,
                "fourth_moment" => &mut fourth,
                other => return Err(Error::Config(format!("line {}: unknown section [{other}]", i + 1))),
            };
            if slot.is_some() {
                return Err(Error::Config(format!("line {}: duplicate section [{}]", i + 1, name.trim())));
            }
            current = Some(slot.insert(Vec::new()));
            continue;
        }
        let rows = current
            .as_deref_mut()
            .ok_or_else(|| Error::Config(format!("line {}: data before any section header", i + 1)))?;
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .enumerate()
            .map(|(c, t)| parse_number(t, i + 1, c + 1))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::RaggedRow { line: i + 1, expected: first.len(), got: row.len() });
            }
        }
        rows.push(row);
    }
    let missing = |n: &str| Error::Config(format!("moments file lacks a [{n}] section"));
    let second = second.ok_or_else(|| missing("second_moment"))?;
    let fourth = fourth.ok_or_else(|| missing("fourth_moment"))?;
    let max_asymmetry = asymmetry(&second).max(asymmetry(&fourth));
    Ok(MomentsFile {
        second_moment: SymMatrix::from_rows(&second)?,
        fourth_moment: SymMatrix::from_rows(&fourth)?,
        max_asymmetry,
    })
}

pub fn parse_moments_file(path: &Path) -> Result<MomentsFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_moments_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prn_two_by_two() {
        let t = parse_str("1 2\n3 4\n", TableFormat::Prn).unwrap();
        assert_eq!((t.n_rows(), t.n_cols()), (2, 2));
        assert_eq!(t.row(1), &[3.0, 4.0]);
        assert!(!t.had_header);
    }

    #[test]
    fn tabs_and_blank_lines() {
        let t = parse_str("\n1\t2.5\n\n-3e2   4\n", TableFormat::Prn).unwrap();
        assert_eq!(t.row(1), &[-300.0, 4.0]);
    }

    #[test]
    fn csv_with_header() {
        let t = parse_str("a,b\n1,2\n", TableFormat::Csv).unwrap();
        assert_eq!((t.n_rows(), t.n_cols()), (1, 2));
        assert!(t.had_header);
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse_str("1 2\n3\n", TableFormat::Prn).unwrap_err();
        assert_eq!(err, Error::RaggedRow { line: 2, expected: 2, got: 1 });
        let err = parse_str("1,2\n3\n", TableFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::RaggedRow { line: 2, .. }));
    }

    #[test]
    fn bad_token_reports_position() {
        let err = parse_str("1 2\n3 x4\n", TableFormat::Prn).unwrap_err();
        assert_eq!(err, Error::Parse { line: 2, column: 2, token: "x4".into() });
        assert!(parse_str("1 nan\n", TableFormat::Prn).is_err());
        assert!(parse_str("1,5\n2,3,5\n", TableFormat::Csv).is_err());
    }

    #[test]
    fn comma_decimal_is_rejected() {
        assert!(matches!(parse_str("1 2,5\n", TableFormat::Prn), Err(Error::Parse { .. })));
    }

    #[test]
    fn recipe_design() {
        let t = parse_str("2 3\n", TableFormat::Prn).unwrap();
        let r: RegressorRecipe = "column(0), column(1), product(0,1)".parse().unwrap();
        let d = build_design(&t, &r, None).unwrap();
        assert_eq!(d.row(0), &[2.0, 3.0, 6.0]);
    }

    #[test]
    fn recipe_constant_and_square() {
        let t = parse_str("2 3\n4 5\n", TableFormat::Prn).unwrap();
        let r: RegressorRecipe = "constant(1); square(1)".parse().unwrap();
        let d = build_design(&t, &r, Some(0)).unwrap();
        assert_eq!(d.row(1), &[1.0, 25.0]);
        assert_eq!(d.responses().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn recipe_errors() {
        let t = parse_str("2 3\n", TableFormat::Prn).unwrap();
        let r: RegressorRecipe = "column(9)".parse().unwrap();
        assert_eq!(build_design(&t, &r, None).unwrap_err(), Error::ColumnOutOfRange { column: 9, available: 2 });
        let r: RegressorRecipe = "column(0)".parse().unwrap();
        assert!(matches!(build_design(&t, &r, Some(0)), Err(Error::Config(_))));
        assert!("".parse::<RegressorRecipe>().is_err());
        assert!("cube(1)".parse::<RegressorRecipe>().is_err());
        assert!("product(1)".parse::<RegressorRecipe>().is_err());
    }

    #[test]
    fn recipe_display_round_trips() {
        let r: RegressorRecipe = "const(1), col(2), prod(0, 1), sq(3)".parse().unwrap();
        assert_eq!(r.to_string().parse::<RegressorRecipe>().unwrap(), r);
    }

    #[test]
    fn moments_file() {
        let text = "# test\n[second_moment]\n1 0.5\n0.5 2\n\n[fourth_moment]\n4, 1\n1.1, 9\n";
        let m = parse_moments_str(text).unwrap();
        assert_eq!(m.second_moment.get(0, 1), 0.5);
        assert!((m.fourth_moment.get(0, 1) - 1.05).abs() < 1e-15);
        assert!((m.max_asymmetry - 0.1).abs() < 1e-12);
        assert!(parse_moments_str("[second_moment]\n1\n").is_err());
        assert!(parse_moments_str("1 2\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            rows in prop::collection::vec(prop::collection::vec(-1e12f64..1e12, 3), 1..20),
            tiny in -1e-300f64..1e-300,
        ) {
            let mut text = String::new();
            for r in &rows {
                text.push_str(&format!("{} {} {}\n", r[0], r[1], r[2] * tiny));
            }
            let t = parse_str(&text, TableFormat::Prn).unwrap();
            let back = parse_str(&t.to_csv_string(), TableFormat::Csv).unwrap();
            prop_assert_eq!(&back.cells, &t.cells);
            prop_assert_eq!(back.n_cols(), 3);
        }

        #[test]
        fn design_preserves_row_order(vals in prop::collection::vec(-100.0f64..100.0, 2..40)) {
            let text: String = vals.iter().map(|v| format!("{v} {}\n", v * 2.0)).collect();
            let t = parse_str(&text, TableFormat::Prn).unwrap();
            let r: RegressorRecipe = "column(1), column(0)".parse().unwrap();
            let d = build_design(&t, &r, None).unwrap();
            for (k, v) in vals.iter().enumerate() {
                prop_assert_eq!(d.row(k), &[v * 2.0, *v][..]);
            }
        }
    }
}
