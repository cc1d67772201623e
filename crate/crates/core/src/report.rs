//! Benchmark models and the two summary tables: supremum gains per
//! criterion, and error bounds at the protocol gain.
//!
//! CSV schemas (all numbers full precision, infinity written `Inf`, empty
//! cell when a value could not be produced):
//!
//! * `table3.csv`: `criterion,1A,1B,1C,1D,2`, one row per criterion, sup a.
//! * `table3_cells.csv`: `example,criterion,sup_a,tolerance_limited,inapplicable,sim_gain,terminal_mse,classification,note,error`.
//! * `table4.csv`: `quantity,1A,1B,1C,1D`, rows `gain`, `chi_corollary2`,
//!   `chi_theorem1`, `bound_theorem1`, `bound_corollary2`, `bound_small_gain`, `simulation`.
//! * `table4_cells.csv`: `example,quantity,value,tolerance_limited,note,error`.
//!
//! `note` records planned omissions and flags; `error` records failures.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gainbound::{asymptotic_bound, max_chi, sup_gain, CriterionKind, SearchOptions};
use crate::ingest::{parse_moments_str, MomentsFile};
use crate::moments::{explicit_moment_model, gaussian_moment_model, GaussianSpec, MomentModel};
use crate::simulator::{run_lms, Classification, SimConfig, DEFAULT_ITERATIONS, DEFAULT_REPLICATIONS, DEFAULT_SEED, DEFAULT_SIGMA_EPS};

/// Printed moment matrices of the four-regressor data example.
pub const EXAMPLE2_MOMENTS: &str = include_str!("../../../fixtures/example2_moments.txt");

/// Default offset subtracted from a rounded sup a to get a run gain.
pub const DEFAULT_XI: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Example {
    #[serde(rename = "1A")]
    E1A,
    #[serde(rename = "1B")]
    E1B,
    #[serde(rename = "1C")]
    E1C,
    #[serde(rename = "1D")]
    E1D,
    #[serde(rename = "2")]
    E2,
}

impl Example {
    pub const ALL: [Example; 5] = [Example::E1A, Example::E1B, Example::E1C, Example::E1D, Example::E2];
    pub const GAUSSIAN: [Example; 4] = [Example::E1A, Example::E1B, Example::E1C, Example::E1D];

    pub fn name(self) -> &'static str {
        match self {
            Example::E1A => "1A",
            Example::E1B => "1B",
            Example::E1C => "1C",
            Example::E1D => "1D",
            Example::E2 => "2",
        }
    }

    /// `(σ₁, σ₂, ρ)` of the bivariate Gaussian examples.
    pub fn gaussian_params(self) -> Option<(f64, f64, f64)> {
        match self {
            Example::E1A => Some((1.0, 1.0, 0.0)),
            Example::E1B => Some((1.0, 2.0, 0.0)),
            Example::E1C => Some((1.0, 1.0, 0.5)),
            Example::E1D => Some((1.0, 1.0, 1.0)),
            Example::E2 => None,
        }
    }

    pub fn model(self) -> Result<MomentModel> {
        match self.gaussian_params() {
            Some((s1, s2, rho)) => gaussian_moment_model(&GaussianSpec::bivariate(s1, s2, rho)?),
            None => {
                let m = example2_moments()?;
                explicit_moment_model(m.second_moment, m.fourth_moment)
            }
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        let key = key.strip_prefix("EXAMPLE").unwrap_or(&key).trim();
        Example::ALL
            .into_iter()
            .find(|e| e.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown example {s:?} (expected 1A, 1B, 1C, 1D or 2)")))
    }
}

pub fn example2_moments() -> Result<MomentsFile> {
    parse_moments_str(EXAMPLE2_MOMENTS)
}

/// Run gain for a criterion: sup a rounded to four decimals, minus `xi`.
pub fn protocol_gain(sup_a: f64, xi: f64) -> f64 {
    (sup_a * 1e4).round() / 1e4 - xi
}

/// Renders a value the way the CSV files do.
pub fn format_value(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else {
        x.to_string()
    }
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_value).unwrap_or_default()
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportOptions {
    pub xi: f64,
    pub sigma_eps: f64,
    pub iterations: u64,
    pub replications: usize,
    pub seed: u64,
    pub simulate: bool,
    pub search: SearchOptions,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            xi: DEFAULT_XI,
            sigma_eps: DEFAULT_SIGMA_EPS,
            iterations: DEFAULT_ITERATIONS,
            replications: DEFAULT_REPLICATIONS,
            seed: DEFAULT_SEED,
            simulate: true,
            search: SearchOptions::default(),
        }
    }
}

impl ReportOptions {
    pub fn sim_config(&self, model: &MomentModel, gain: f64) -> SimConfig {
        SimConfig {
            sigma_eps: self.sigma_eps,
            iterations: self.iterations,
            replications: self.replications,
            master_seed: self.seed,
            ..SimConfig::standard(model.second_moment().clone(), gain)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table3Cell {
    pub example: String,
    pub criterion: CriterionKind,
    pub sup_a: Option<f64>,
    pub tolerance_limited: bool,
    pub inapplicable: bool,
    pub sim_gain: Option<f64>,
    pub terminal_mse: Option<f64>,
    pub classification: Option<Classification>,
    pub note: Option<String>,
    /// Set when a requested computation failed, as opposed to being skipped.
    #[serde(serialize_with = "serialize_error")]
    pub error: Option<Error>,
}

impl Table3Cell {
    /// `C` bounded, `N` diverged, `?` in between, `-` not simulated.
    pub fn annotation(&self) -> &'static str {
        match self.classification {
            Some(Classification::Bounded) => "C",
            Some(Classification::Diverged) => "N",
            Some(Classification::Indeterminate) => "?",
            None => "-",
        }
    }
}

fn serialize_error<S: serde::Serializer>(e: &Option<Error>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match e {
        Some(e) => s.serialize_some(&e.to_string()),
        None => s.serialize_none(),
    }
}

fn error_text(e: &Option<Error>) -> String {
    e.as_ref().map(|e| csv_escape(&e.to_string())).unwrap_or_default()
}

fn push_note(note: &mut Option<String>, msg: impl Into<String>) {
    let msg = msg.into();
    match note {
        Some(n) => {
            n.push_str("; ");
            n.push_str(&msg);
        }
        None => *note = Some(msg),
    }
}

pub fn table3_cell(example: Example, criterion: CriterionKind, opts: &ReportOptions) -> Table3Cell {
    let model = example.model();
    sup_gain_cell(example.name(), model.as_ref(), example.gaussian_params().is_some(), criterion, opts)
}

/// One sup-a cell for any model; `sampleable` says whether the model has a
/// Gaussian sampling law for the simulation.
pub fn sup_gain_cell(
    label: &str,
    model: std::result::Result<&MomentModel, &Error>,
    sampleable: bool,
    criterion: CriterionKind,
    opts: &ReportOptions,
) -> Table3Cell {
    let mut cell = Table3Cell {
        example: label.to_string(),
        criterion,
        sup_a: None,
        tolerance_limited: false,
        inapplicable: false,
        sim_gain: None,
        terminal_mse: None,
        classification: None,
        note: None,
        error: None,
    };
    let model = match model {
        Ok(m) => m,
        Err(e) => {
            cell.error = Some(e.clone());
            return cell;
        }
    };
    if criterion == CriterionKind::Theorem1 && !model.supports_general_operator() {
        cell.note = Some("skipped: needs a data-backed fourth-moment operator; only printed moment matrices are available".into());
        return cell;
    }
    match sup_gain(model, criterion, &opts.search) {
        Ok(r) => {
            cell.sup_a = Some(r.sup_a);
            cell.tolerance_limited = r.tolerance_limited;
            cell.inapplicable = r.inapplicable;
            if r.tolerance_limited {
                push_note(&mut cell.note, "tolerance-limited");
            }
            if let Some(d) = r.diagnostic {
                push_note(&mut cell.note, d);
            }
        }
        Err(e) => {
            cell.error = Some(e);
            return cell;
        }
    }
    if !opts.simulate {
        return cell;
    }
    if !sampleable {
        push_note(&mut cell.note, "not simulated: no sampling law for printed moments");
        return cell;
    }
    let gain = protocol_gain(cell.sup_a.unwrap_or(0.0), opts.xi);
    if gain <= 0.0 {
        push_note(&mut cell.note, "not simulated: gain is not positive");
        return cell;
    }
    cell.sim_gain = Some(gain);
    match run_lms(&opts.sim_config(model, gain)) {
        Ok(r) => {
            cell.terminal_mse = Some(r.terminal_mse);
            cell.classification = Some(r.classification);
        }
        Err(e) => cell.error = Some(e),
    }
    cell
}

pub fn build_table3(opts: &ReportOptions) -> Vec<Table3Cell> {
    let mut cells = Vec::new();
    for criterion in CriterionKind::ALL {
        for example in Example::ALL {
            cells.push(table3_cell(example, criterion, opts));
        }
    }
    cells
}

pub fn write_table3_csv<W: Write>(cells: &[Table3Cell], mut out: W) -> Result<()> {
    let header: Vec<&str> = std::iter::once("criterion").chain(Example::ALL.iter().map(|e| e.name())).collect();
    writeln!(out, "{}", header.join(","))?;
    for criterion in CriterionKind::ALL {
        let mut row = vec![criterion.name().to_string()];
        for example in Example::ALL {
            let v = cells.iter().find(|c| c.criterion == criterion && c.example == example.name()).and_then(|c| c.sup_a);
            row.push(format_opt(v));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_table3_cells_csv<W: Write>(cells: &[Table3Cell], mut out: W) -> Result<()> {
    writeln!(out, "example,criterion,sup_a,tolerance_limited,inapplicable,sim_gain,terminal_mse,classification,note,error")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.example,
            c.criterion,
            format_opt(c.sup_a),
            c.tolerance_limited,
            c.inapplicable,
            format_opt(c.sim_gain),
            format_opt(c.terminal_mse),
            c.annotation(),
            csv_escape(c.note.as_deref().unwrap_or("")),
            error_text(&c.error),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Gain,
    ChiCorollary2,
    ChiTheorem1,
    BoundTheorem1,
    BoundCorollary2,
    BoundSmallGain,
    Simulation,
}

impl Quantity {
    pub const ALL: [Quantity; 7] = [
        Quantity::Gain,
        Quantity::ChiCorollary2,
        Quantity::ChiTheorem1,
        Quantity::BoundTheorem1,
        Quantity::BoundCorollary2,
        Quantity::BoundSmallGain,
        Quantity::Simulation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Gain => "gain",
            Quantity::ChiCorollary2 => "chi_corollary2",
            Quantity::ChiTheorem1 => "chi_theorem1",
            Quantity::BoundTheorem1 => "bound_theorem1",
            Quantity::BoundCorollary2 => "bound_corollary2",
            Quantity::BoundSmallGain => "bound_small_gain",
            Quantity::Simulation => "simulation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table4Cell {
    pub example: String,
    pub quantity: Quantity,
    pub value: Option<f64>,
    pub tolerance_limited: bool,
    pub note: Option<String>,
    #[serde(serialize_with = "serialize_error")]
    pub error: Option<Error>,
}

/// Error bounds for one example at the corollary gain minus `xi`.
pub fn table4_column(example: Example, opts: &ReportOptions) -> Vec<Table4Cell> {
    let model = example.model();
    error_bound_column(example.name(), model.as_ref(), example.gaussian_params().is_some(), None, opts)
}

/// Error bounds for any model. The gain is `gain` when given, otherwise the
/// corollary sup a rounded and offset by `xi`.
pub fn error_bound_column(
    label: &str,
    model: std::result::Result<&MomentModel, &Error>,
    sampleable: bool,
    gain: Option<f64>,
    opts: &ReportOptions,
) -> Vec<Table4Cell> {
    let mut cells: Vec<Table4Cell> = Quantity::ALL
        .iter()
        .map(|&quantity| Table4Cell {
            example: label.to_string(),
            quantity,
            value: None,
            tolerance_limited: false,
            note: None,
            error: None,
        })
        .collect();
    let fail_all = |cells: &mut Vec<Table4Cell>, err: Error| {
        for c in cells.iter_mut().filter(|c| c.value.is_none()) {
            c.error = Some(err.clone());
        }
    };
    let model = match model {
        Ok(m) => m,
        Err(e) => {
            fail_all(&mut cells, e.clone());
            return cells;
        }
    };
    let sigma = model.second_moment().clone();
    let a = match gain {
        Some(a) => a,
        None => match sup_gain(model, CriterionKind::Corollary2, &opts.search) {
            Ok(r) => protocol_gain(r.sup_a, opts.xi),
            Err(e) => {
                fail_all(&mut cells, e);
                return cells;
            }
        },
    };
    if !(a > 0.0 && a.is_finite()) {
        fail_all(&mut cells, Error::Config(format!("gain {a} is not positive")));
        return cells;
    }
    cells[0].value = Some(a);

    match max_chi(model, CriterionKind::Corollary2, a, &opts.search) {
        Ok(mc) => {
            cells[1].value = Some(mc.chi);
            cells[1].tolerance_limited = mc.tolerance_limited;
            cells[4].tolerance_limited = mc.tolerance_limited;
            match asymptotic_bound(CriterionKind::Corollary2, a, mc.chi, &mc.p, &sigma, opts.sigma_eps) {
                Ok(b) => cells[4].value = Some(b),
                Err(e) => cells[4].error = Some(e),
            }
        }
        Err(e) => {
            cells[1].error = Some(e.clone());
            cells[4].error = Some(e);
        }
    }

    if model.supports_general_operator() {
        match max_chi(model, CriterionKind::Theorem1, a, &opts.search) {
            Ok(mc) => {
                cells[2].value = Some(mc.chi);
                cells[2].tolerance_limited = mc.tolerance_limited;
                cells[3].tolerance_limited = mc.tolerance_limited;
                match asymptotic_bound(CriterionKind::Theorem1, a, mc.chi, &mc.p, &sigma, opts.sigma_eps) {
                    Ok(b) => cells[3].value = Some(b),
                    Err(e) => cells[3].error = Some(e),
                }
            }
            Err(e) => {
                cells[2].error = Some(e.clone());
                cells[3].error = Some(e);
            }
        }
    } else {
        let msg = "skipped: needs a data-backed fourth-moment operator".to_string();
        cells[2].note = Some(msg.clone());
        cells[3].note = Some(msg);
    }

    match asymptotic_bound(CriterionKind::ZhuCriterion, a, 0.0, &sigma, &sigma, opts.sigma_eps) {
        Ok(b) => cells[5].value = Some(b),
        Err(e) => cells[5].error = Some(e),
    }

    if !opts.simulate {
        cells[6].note = Some("not simulated".into());
    } else if !sampleable {
        cells[6].note = Some("not simulated: no sampling law for printed moments".into());
    } else {
        match run_lms(&opts.sim_config(model, a)) {
            Ok(r) => cells[6].value = Some(r.terminal_mse),
            Err(e) => cells[6].error = Some(e),
        }
    }
    for c in cells.iter_mut().filter(|c| c.tolerance_limited) {
        push_note(&mut c.note, "tolerance-limited");
    }
    cells
}

pub fn build_table4(opts: &ReportOptions) -> Vec<Table4Cell> {
    Example::GAUSSIAN.iter().flat_map(|&e| table4_column(e, opts)).collect()
}

pub fn write_table4_csv<W: Write>(cells: &[Table4Cell], mut out: W) -> Result<()> {
    let header: Vec<&str> = std::iter::once("quantity").chain(Example::GAUSSIAN.iter().map(|e| e.name())).collect();
    writeln!(out, "{}", header.join(","))?;
    for q in Quantity::ALL {
        let mut row = vec![q.name().to_string()];
        for e in Example::GAUSSIAN {
            let v = cells.iter().find(|c| c.quantity == q && c.example == e.name()).and_then(|c| c.value);
            row.push(format_opt(v));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_table4_cells_csv<W: Write>(cells: &[Table4Cell], mut out: W) -> Result<()> {
    writeln!(out, "example,quantity,value,tolerance_limited,note,error")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.example,
            c.quantity.name(),
            format_opt(c.value),
            c.tolerance_limited,
            csv_escape(c.note.as_deref().unwrap_or("")),
            error_text(&c.error),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_sim() -> ReportOptions {
        ReportOptions { simulate: false, ..Default::default() }
    }

    #[test]
    fn example_names_parse() {
        for e in Example::ALL {
            assert_eq!(e.name().parse::<Example>().unwrap(), e);
        }
        assert_eq!("example1c".parse::<Example>().unwrap(), Example::E1C);
        assert!("3".parse::<Example>().is_err());
    }

    #[test]
    fn example2_fixture_loads() {
        let m = example2_moments().unwrap();
        assert_eq!(m.second_moment.dim(), 4);
        assert!((m.max_asymmetry - 0.001).abs() < 1e-9);
        assert!((m.second_moment.get(0, 3) - 2.1215).abs() < 1e-12);
        assert_eq!(Example::E2.model().unwrap().dim(), 4);
    }

    #[test]
    fn protocol_gain_rounds_then_offsets() {
        assert!((protocol_gain(0.153846, 1e-4) - 0.1537).abs() < 1e-12);
        assert!((protocol_gain(0.500004, 1e-4) - 0.4999).abs() < 1e-12);
        assert!((protocol_gain(1.0 / 3.0, 1e-4) - 0.3332).abs() < 1e-12);
    }

    #[test]
    fn format_inf() {
        assert_eq!(format_value(f64::INFINITY), "Inf");
        assert_eq!(format_value(0.25), "0.25");
    }

    #[test]
    fn corollary_row() {
        let want = [0.5, 0.1538, 0.4, 0.3333, 0.0716];
        for (e, w) in Example::ALL.into_iter().zip(want) {
            let c = table3_cell(e, CriterionKind::Corollary2, &no_sim());
            assert!((c.sup_a.unwrap() - w).abs() < 1e-3, "{e}: {:?}", c);
        }
    }

    #[test]
    fn example2_theorem_is_skipped_with_note() {
        let c = table3_cell(Example::E2, CriterionKind::Theorem1, &no_sim());
        assert!(c.sup_a.is_none());
        assert!(c.note.unwrap().starts_with("skipped"));
    }

    #[test]
    fn table4_example_1a() {
        let cells = table4_column(Example::E1A, &no_sim());
        let get = |q: Quantity| cells.iter().find(|c| c.quantity == q).unwrap().value;
        assert!((get(Quantity::Gain).unwrap() - 0.4999).abs() < 1e-12);
        assert!((get(Quantity::BoundCorollary2).unwrap() - 25.0).abs() < 0.25);
        assert!((get(Quantity::BoundTheorem1).unwrap() - 25.0).abs() < 0.25);
        assert!((get(Quantity::BoundSmallGain).unwrap() - 0.005).abs() < 1e-4);
        assert!(get(Quantity::Simulation).is_none());
    }

    #[test]
    fn csv_writers_have_fixed_schema() {
        let cells = vec![table3_cell(Example::E1D, CriterionKind::ZhuCriterion, &no_sim())];
        let mut buf = Vec::new();
        write_table3_cells_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0].split(',').count(), 10);
        assert!(lines[1].starts_with("1D,zhu_criterion,0,false,true"));
        let mut buf = Vec::new();
        write_table3_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("criterion,1A,1B,1C,1D,2\n"));
        assert!(text.contains("\nzhu_criterion,,,,0,\n"));
    }
}
