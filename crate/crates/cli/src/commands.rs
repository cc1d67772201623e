use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use lmsgain::gainbound::{sup_gain, CriterionKind, SearchMode, SearchOptions};
use lmsgain::ingest::{build_design, parse_moments_file, parse_table, RawTable, RegressorRecipe, TableFormat};
use lmsgain::linalg::SymMatrix;
use lmsgain::moments::{empirical_moment_model, explicit_moment_model, gaussian_moment_model, GaussianSpec, MomentModel};
use lmsgain::report::{
    build_table3, build_table4, error_bound_column, format_value, protocol_gain, write_table3_cells_csv,
    write_table3_csv, write_table4_cells_csv, write_table4_csv, Example, Quantity, ReportOptions, Table3Cell,
    Table4Cell,
};
use lmsgain::simulator::{batch_ls, run_lms, DesignSource, SimConfig};

use crate::config::{Format, Mode, ModelArgs, OutputArgs, ProtocolArgs};
use crate::CliError;

pub struct Context {
    model: ModelArgs,
    protocol: ProtocolArgs,
    output: OutputArgs,
    format: Format,
    opts: ReportOptions,
}

impl Context {
    pub fn new(model: ModelArgs, protocol: ProtocolArgs, output: OutputArgs) -> Result<Self, CliError> {
        let mut opts = ReportOptions::default();
        if let Some(xi) = protocol.xi {
            if !(xi > 0.0 && xi.is_finite()) {
                return Err(CliError::Config(format!("xi must be positive, got {xi}")));
            }
            opts.xi = xi;
        }
        if let Some(s) = protocol.sigma_eps {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(CliError::Config(format!("sigma_eps must be nonnegative, got {s}")));
            }
            opts.sigma_eps = s;
        }
        if let Some(r) = protocol.reps {
            if r == 0 {
                return Err(CliError::Config("reps must be positive".into()));
            }
            opts.replications = r;
        }
        if let Some(k) = protocol.iters {
            if k == 0 {
                return Err(CliError::Config("iters must be positive".into()));
            }
            opts.iterations = k;
        }
        if let Some(s) = protocol.seed {
            opts.seed = s;
        }
        opts.search = SearchOptions {
            mode: match protocol.mode.unwrap_or(Mode::Auto) {
                Mode::Strict => SearchMode::Strict,
                Mode::Relaxed => SearchMode::Relaxed,
                Mode::Auto => SearchMode::Auto,
            },
            ..SearchOptions::default()
        };
        if let Some(g) = protocol.gain {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(CliError::Config(format!("gain must be nonnegative, got {g}")));
            }
        }
        let format = output.format.unwrap_or(Format::Table);
        Ok(Self { model, protocol, output, format, opts })
    }

    fn criteria(&self, source: &Source) -> Result<Vec<CriterionKind>, CliError> {
        match &self.protocol.criteria {
            None => Ok(CriterionKind::ALL.to_vec()),
            Some(names) => {
                let kinds = names.iter().map(|n| n.parse::<CriterionKind>()).collect::<Result<Vec<_>, _>>()?;
                if kinds.contains(&CriterionKind::Theorem1) && !source.model.supports_general_operator() {
                    return Err(CliError::Config(
                        "theorem1 needs the full fourth-moment operator; use a gaussian or empirical source".into(),
                    ));
                }
                Ok(kinds)
            }
        }
    }
}

/// A resolved moment source.
pub struct Source {
    label: String,
    model: MomentModel,
    design: Option<DesignSource>,
    theta_star: Vec<f64>,
    table: Option<RawTable>,
}

fn table_format(m: &ModelArgs, path: &Path) -> Result<TableFormat, CliError> {
    match &m.table_format {
        Some(f) => Ok(f.parse()?),
        None => Ok(TableFormat::from_path(path)),
    }
}

fn resolve_source(m: &ModelArgs) -> Result<Source, CliError> {
    let gaussian = m.sigma1.is_some() || m.sigma2.is_some() || m.rho.is_some();
    let explicit = m.moments_file.is_some();
    let empirical = m.data.is_some() || m.recipe.is_some() || m.response_col.is_some() || m.table_format.is_some();
    let example = m.example.is_some();
    let present: Vec<&str> = [(gaussian, "gaussian"), (explicit, "explicit"), (empirical, "empirical"), (example, "example")]
        .into_iter()
        .filter_map(|(p, n)| p.then_some(n))
        .collect();
    let kind = match (&m.source, present.as_slice()) {
        (_, [a, b, ..]) => {
            return Err(CliError::Config(format!("exactly one moment source is allowed; got settings for {a} and {b}")))
        }
        (Some(s), [p]) if s != p => {
            return Err(CliError::Config(format!("--model {s} conflicts with {p} settings")));
        }
        (Some(s), _) => s.as_str(),
        (None, [p]) => p,
        (None, []) => {
            return Err(CliError::Config(
                "no moment source: give --sigma1/--sigma2/--rho, --moments-file, --data with --recipe, or --example".into(),
            ))
        }
    };
    match kind {
        "gaussian" => {
            let (s1, s2) = match (m.sigma1, m.sigma2) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(CliError::Config("gaussian source needs --sigma1 and --sigma2".into())),
            };
            let rho = m.rho.unwrap_or(0.0);
            let spec = GaussianSpec::bivariate(s1, s2, rho)?;
            let model = gaussian_moment_model(&spec)?;
            Ok(Source {
                label: format!("gaussian({s1}, {s2}, {rho})"),
                design: Some(DesignSource::Gaussian(model.second_moment().clone())),
                theta_star: vec![1.0; 2],
                model,
                table: None,
            })
        }
        "explicit" => {
            let path = m.moments_file.as_ref().ok_or_else(|| CliError::Config("explicit source needs --moments-file".into()))?;
            let f = parse_moments_file(path)?;
            if f.max_asymmetry > 0.0 {
                log::warn!("{}: symmetrized input (largest asymmetry {:e})", path.display(), f.max_asymmetry);
            }
            let model = explicit_moment_model(f.second_moment, f.fourth_moment)?;
            let m_dim = model.dim();
            Ok(Source { label: path.display().to_string(), model, design: None, theta_star: vec![1.0; m_dim], table: None })
        }
        "empirical" => {
            let path = m.data.as_ref().ok_or_else(|| CliError::Config("empirical source needs --data".into()))?;
            let recipe: RegressorRecipe = m
                .recipe
                .as_deref()
                .ok_or_else(|| CliError::Config("empirical source needs --recipe".into()))?
                .parse()?;
            let table = parse_table(path, table_format(m, path)?)?;
            let data = build_design(&table, &recipe, m.response_col)?;
            let model = empirical_moment_model(&data)?;
            let theta_star = match data.responses() {
                Some(_) => batch_ls(&data).unwrap_or_else(|_| vec![1.0; data.dim()]),
                None => vec![1.0; data.dim()],
            };
            Ok(Source {
                label: path.display().to_string(),
                model,
                design: Some(DesignSource::Replay(data)),
                theta_star,
                table: Some(table),
            })
        }
        "example" => {
            let e: Example = m
                .example
                .as_deref()
                .ok_or_else(|| CliError::Config("example source needs --example".into()))?
                .parse()?;
            let model = e.model()?;
            let design = e.gaussian_params().map(|_| DesignSource::Gaussian(model.second_moment().clone()));
            let m_dim = model.dim();
            Ok(Source { label: e.name().to_string(), model, design, theta_star: vec![1.0; m_dim], table: None })
        }
        other => Err(CliError::Config(format!("unknown model source {other:?}"))),
    }
}

fn fixed(x: f64, decimals: usize) -> String {
    if x.is_infinite() {
        format_value(x)
    } else {
        format!("{x:.decimals$}")
    }
}

/// Four significant digits, switching to exponent form for tiny values.
fn sig(x: f64) -> String {
    if !x.is_finite() {
        format_value(x)
    } else if x != 0.0 && x.abs() < 1e-3 {
        format!("{x:.3e}")
    } else {
        let digits = if x == 0.0 { 0 } else { (3 - x.abs().log10().floor() as i64).max(0) as usize };
        format!("{x:.digits$}")
    }
}

fn json_number(x: Option<f64>) -> (Option<f64>, bool) {
    match x {
        Some(v) if v.is_infinite() => (None, true),
        other => (other, false),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn worst(errors: impl IntoIterator<Item = lmsgain::Error>) -> Result<(), CliError> {
    let mut first: Option<CliError> = None;
    for e in errors {
        let e = CliError::from(e);
        let replace = match (&first, &e) {
            (None, _) => true,
            (Some(CliError::NonConvergence(_)), _) => false,
            (_, CliError::NonConvergence(_)) => true,
            _ => false,
        };
        if replace {
            first = Some(e);
        }
    }
    first.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct CertificateSummary {
    a: f64,
    chi: f64,
    slack: f64,
    lambda_min_p: f64,
    p: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct SupRow {
    model: String,
    criterion: CriterionKind,
    sup_a: Option<f64>,
    bisection_width: Option<f64>,
    tolerance_limited: bool,
    inapplicable: bool,
    certificate: Option<CertificateSummary>,
    note: Option<String>,
    error: Option<String>,
    #[serde(skip)]
    failure: Option<lmsgain::Error>,
}

pub fn supgain(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let src = resolve_source(&ctx.model)?;
    let kinds = ctx.criteria(&src)?;
    let rows: Vec<SupRow> = kinds
        .into_iter()
        .map(|kind| {
            let mut row = SupRow {
                model: src.label.clone(),
                criterion: kind,
                sup_a: None,
                bisection_width: None,
                tolerance_limited: false,
                inapplicable: false,
                certificate: None,
                note: None,
                error: None,
                failure: None,
            };
            if kind == CriterionKind::Theorem1 && !src.model.supports_general_operator() {
                row.note = Some("skipped: needs the full fourth-moment operator".into());
                return row;
            }
            match sup_gain(&src.model, kind, &ctx.opts.search) {
                Ok(r) => {
                    row.sup_a = Some(r.sup_a);
                    row.bisection_width = kind.is_certified().then_some(r.bisection_width);
                    row.tolerance_limited = r.tolerance_limited;
                    row.inapplicable = r.inapplicable;
                    row.note = r.diagnostic;
                    row.certificate = r.certificate.map(|c| CertificateSummary {
                        a: c.a,
                        chi: c.chi,
                        slack: c.slack,
                        lambda_min_p: c.p.lambda_min(),
                        p: c.p.rows(),
                    });
                }
                Err(e) => {
                    row.error = Some(e.to_string());
                    row.failure = Some(e);
                }
            }
            row
        })
        .collect();

    match ctx.format {
        Format::Table => {
            writeln!(out, "model: {}", src.label)?;
            writeln!(out, "{:<18} {:>8}  details", "criterion", "sup_a")?;
            for r in &rows {
                let mut details = Vec::new();
                if let Some(c) = &r.certificate {
                    details.push(format!("certified at a={} chi={} lambda_min(P)={}", sig(c.a), sig(c.chi), sig(c.lambda_min_p)));
                }
                if r.tolerance_limited {
                    details.push("tolerance-limited".into());
                }
                if r.inapplicable {
                    details.push("inapplicable".into());
                }
                details.extend(r.note.clone());
                details.extend(r.error.as_ref().map(|e| format!("error: {e}")));
                let sup = r.sup_a.map_or("-".to_string(), |v| fixed(v, 4));
                writeln!(out, "{:<18} {:>8}  {}", r.criterion.name(), sup, details.join("; "))?;
            }
        }
        Format::Csv => {
            writeln!(out, "model,criterion,sup_a,bisection_width,tolerance_limited,inapplicable,cert_a,cert_chi,cert_slack,cert_lambda_min_p,note,error")?;
            for r in &rows {
                let c = r.certificate.as_ref();
                let o = |x: Option<f64>| x.map(format_value).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    csv_field(&r.model),
                    r.criterion,
                    o(r.sup_a),
                    o(r.bisection_width),
                    r.tolerance_limited,
                    r.inapplicable,
                    o(c.map(|c| c.a)),
                    o(c.map(|c| c.chi)),
                    o(c.map(|c| c.slack)),
                    o(c.map(|c| c.lambda_min_p)),
                    csv_field(r.note.as_deref().unwrap_or("")),
                    csv_field(r.error.as_deref().unwrap_or("")),
                )?;
            }
        }
        Format::Jsonl => {
            for r in &rows {
                writeln!(out, "{}", serde_json::to_string(r).map_err(|e| CliError::Failed(e.to_string()))?)?;
            }
        }
    }
    worst(rows.into_iter().filter_map(|r| r.failure))
}

#[derive(Serialize)]
struct BoundRecord<'a> {
    model: &'a str,
    quantity: &'static str,
    value: Option<f64>,
    infinite: bool,
    tolerance_limited: bool,
    note: Option<&'a str>,
    error: Option<String>,
}

fn bound_records<'a>(cells: &'a [Table4Cell]) -> Vec<BoundRecord<'a>> {
    cells
        .iter()
        .map(|c| {
            let (value, infinite) = json_number(c.value);
            BoundRecord {
                model: &c.example,
                quantity: c.quantity.name(),
                value,
                infinite,
                tolerance_limited: c.tolerance_limited,
                note: c.note.as_deref(),
                error: c.error.as_ref().map(|e| e.to_string()),
            }
        })
        .collect()
}

pub fn errorbound(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let src = resolve_source(&ctx.model)?;
    let opts = ReportOptions { simulate: false, ..ctx.opts.clone() };
    let cells: Vec<Table4Cell> = error_bound_column(&src.label, Ok(&src.model), false, ctx.protocol.gain, &opts)
        .into_iter()
        .filter(|c| c.quantity != Quantity::Simulation)
        .collect();
    match ctx.format {
        Format::Table => {
            writeln!(out, "model: {}", src.label)?;
            for c in &cells {
                let v = match (c.quantity, c.value) {
                    (Quantity::Gain, Some(v)) => fixed(v, 4),
                    (_, Some(v)) => sig(v),
                    (_, None) => "-".into(),
                };
                let mut details: Vec<String> = c.note.iter().cloned().collect();
                details.extend(c.error.as_ref().map(|e| format!("error: {e}")));
                writeln!(out, "{:<18} {:>12}  {}", c.quantity.name(), v, details.join("; "))?;
            }
        }
        Format::Csv => {
            writeln!(out, "model,quantity,value,tolerance_limited,note,error")?;
            for c in &cells {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    csv_field(&c.example),
                    c.quantity.name(),
                    c.value.map(format_value).unwrap_or_default(),
                    c.tolerance_limited,
                    csv_field(c.note.as_deref().unwrap_or("")),
                    csv_field(&c.error.as_ref().map(|e| e.to_string()).unwrap_or_default()),
                )?;
            }
        }
        Format::Jsonl => {
            for r in bound_records(&cells) {
                writeln!(out, "{}", serde_json::to_string(&r).map_err(|e| CliError::Failed(e.to_string()))?)?;
            }
        }
    }
    worst(cells.into_iter().filter_map(|c| c.error))
}

#[derive(Serialize)]
struct SimSummary<'a> {
    model: &'a str,
    gain: f64,
    gain_from: String,
    sigma_eps: f64,
    theta_star: &'a [f64],
    init: &'static str,
    iterations: u64,
    replications: usize,
    master_seed: u64,
    terminal_mse: Option<f64>,
    terminal_mse_infinite: bool,
    classification: lmsgain::simulator::Classification,
    short_circuited: usize,
}

pub fn simulate(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let src = resolve_source(&ctx.model)?;
    let design = src
        .design
        .clone()
        .ok_or_else(|| CliError::Config(format!("{} has no sampling law; use a gaussian or data source", src.label)))?;
    let (gain, gain_from) = match (ctx.protocol.gain, &ctx.protocol.criterion) {
        (Some(g), _) => (g, "flag".to_string()),
        (None, Some(name)) => {
            let kind: CriterionKind = name.parse()?;
            let r = sup_gain(&src.model, kind, &ctx.opts.search)?;
            (protocol_gain(r.sup_a, ctx.opts.xi), format!("{kind} sup a {} minus xi", r.sup_a))
        }
        (None, None) => return Err(CliError::Config("simulate needs --gain or --criterion".into())),
    };
    let theta_star = ctx.protocol.theta_star.clone().unwrap_or(src.theta_star.clone());
    let cfg = SimConfig {
        design,
        theta_star,
        sigma_eps: ctx.opts.sigma_eps,
        iterations: ctx.opts.iterations,
        replications: ctx.opts.replications,
        master_seed: ctx.opts.seed,
        ..SimConfig::standard(src.model.second_moment().clone(), gain)
    };
    let result = run_lms(&cfg)?;
    if let Some(path) = &ctx.output.records {
        let f = File::create(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        result.write_jsonl(BufWriter::new(f))?;
    }
    let (mse, mse_inf) = json_number(Some(result.terminal_mse));
    let summary = SimSummary {
        model: &src.label,
        gain,
        gain_from,
        sigma_eps: cfg.sigma_eps,
        theta_star: &cfg.theta_star,
        init: "standard_normal",
        iterations: cfg.iterations,
        replications: cfg.replications,
        master_seed: cfg.master_seed,
        terminal_mse: mse,
        terminal_mse_infinite: mse_inf,
        classification: result.classification,
        short_circuited: result.short_circuited.iter().filter(|&&s| s).count(),
    };
    match ctx.format {
        Format::Table => {
            writeln!(out, "model            {}", summary.model)?;
            writeln!(out, "gain             {} ({})", summary.gain, summary.gain_from)?;
            writeln!(out, "sigma_eps        {}", summary.sigma_eps)?;
            writeln!(out, "theta_star       {:?}", summary.theta_star)?;
            writeln!(out, "iterations       {}", summary.iterations)?;
            writeln!(out, "replications     {}", summary.replications)?;
            writeln!(out, "seed             {}", summary.master_seed)?;
            writeln!(out, "terminal_mse     {}", sig(result.terminal_mse))?;
            writeln!(out, "classification   {:?}", summary.classification)?;
            writeln!(out, "short_circuited  {}", summary.short_circuited)?;
        }
        Format::Csv => {
            writeln!(out, "model,gain,sigma_eps,iterations,replications,seed,terminal_mse,classification,short_circuited")?;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{:?},{}",
                csv_field(summary.model),
                summary.gain,
                summary.sigma_eps,
                summary.iterations,
                summary.replications,
                summary.master_seed,
                format_value(result.terminal_mse),
                summary.classification,
                summary.short_circuited,
            )?;
        }
        Format::Jsonl => {
            writeln!(out, "{}", serde_json::to_string(&summary).map_err(|e| CliError::Failed(e.to_string()))?)?;
        }
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> lmsgain::Result<()>) -> Result<(), CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn render_table3(cells: &[Table3Cell], out: &mut dyn Write) -> std::io::Result<()> {
    write!(out, "{:<18}", "sup a")?;
    for e in Example::ALL {
        write!(out, " {:>12}", e.name())?;
    }
    writeln!(out)?;
    for kind in CriterionKind::ALL {
        write!(out, "{:<18}", kind.name())?;
        for e in Example::ALL {
            let text = match cells.iter().find(|c| c.criterion == kind && c.example == e.name()) {
                Some(c) => match c.sup_a {
                    Some(v) if c.classification.is_some() || c.inapplicable => format!("{} ({})", fixed(v, 4), c.annotation()),
                    Some(v) => fixed(v, 4),
                    None if c.error.is_some() => "error".into(),
                    None => "skipped".into(),
                },
                None => String::new(),
            };
            write!(out, " {text:>12}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn render_table4(cells: &[Table4Cell], out: &mut dyn Write) -> std::io::Result<()> {
    write!(out, "{:<18}", "")?;
    for e in Example::GAUSSIAN {
        write!(out, " {:>12}", e.name())?;
    }
    writeln!(out)?;
    for q in Quantity::ALL {
        write!(out, "{:<18}", q.name())?;
        for e in Example::GAUSSIAN {
            let text = match cells.iter().find(|c| c.quantity == q && c.example == e.name()) {
                Some(c) => match (q, c.value) {
                    (Quantity::Gain, Some(v)) => fixed(v, 4),
                    (_, Some(v)) if c.tolerance_limited => format!("{}*", sig(v)),
                    (_, Some(v)) => sig(v),
                    (_, None) if c.error.is_some() => "error".into(),
                    (_, None) => "-".into(),
                },
                None => String::new(),
            };
            write!(out, " {text:>12}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "* tolerance-limited")
}

pub fn report(ctx: &Context, simulate: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = ctx.output.out_dir.clone().unwrap_or_else(|| ".".into());
    fs::create_dir_all(&dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    let opts = ReportOptions { simulate, ..ctx.opts.clone() };
    let t3 = build_table3(&opts);
    let t4 = build_table4(&opts);
    write_file(&dir, "table3.csv", |w| write_table3_csv(&t3, w))?;
    write_file(&dir, "table3_cells.csv", |w| write_table3_cells_csv(&t3, w))?;
    write_file(&dir, "table4.csv", |w| write_table4_csv(&t4, w))?;
    write_file(&dir, "table4_cells.csv", |w| write_table4_cells_csv(&t4, w))?;
    match ctx.format {
        Format::Table => {
            render_table3(&t3, out)?;
            writeln!(out)?;
            render_table4(&t4, out)?;
            writeln!(out)?;
            writeln!(out, "wrote table3.csv, table3_cells.csv, table4.csv, table4_cells.csv to {}", dir.display())?;
        }
        Format::Csv => {
            write_table3_csv(&t3, &mut *out)?;
            writeln!(out)?;
            write_table4_csv(&t4, &mut *out)?;
        }
        Format::Jsonl => {
            for c in &t3 {
                let mut v = serde_json::to_value(c).map_err(|e| CliError::Failed(e.to_string()))?;
                v["table"] = "table3".into();
                writeln!(out, "{v}")?;
            }
            for r in bound_records(&t4) {
                let mut v = serde_json::to_value(&r).map_err(|e| CliError::Failed(e.to_string()))?;
                v["table"] = "table4".into();
                writeln!(out, "{v}")?;
            }
        }
    }
    worst(t3.into_iter().filter_map(|c| c.error).chain(t4.into_iter().filter_map(|c| c.error)))
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    source: &'a str,
    rows: usize,
    columns: usize,
    header_skipped: bool,
    design_dim: Option<usize>,
    second_moment: Option<Vec<Vec<f64>>>,
    second_moment_min_eigenvalue: Option<f64>,
    fourth_moment: Option<Vec<Vec<f64>>>,
    batch_ls: Option<Vec<f64>>,
}

pub fn ingest_check(ctx: &Context, canonical: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let path = ctx.model.data.as_ref().ok_or_else(|| CliError::Config("ingest-check needs --data".into()))?;
    let (table, design) = if ctx.model.recipe.is_some() {
        let src = resolve_source(&ctx.model)?;
        let design = match &src.design {
            Some(DesignSource::Replay(d)) => Some(d.clone()),
            _ => None,
        };
        (src.table.expect("empirical sources keep their table"), design.map(|d| (d, src.model)))
    } else {
        (parse_table(path, table_format(&ctx.model, path)?)?, None)
    };
    if let Some(p) = canonical {
        let f = File::create(p).map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?;
        let mut w = BufWriter::new(f);
        table.write_csv(&mut w)?;
        w.flush()?;
    }
    let rows_of = |m: &SymMatrix| m.rows();
    let source = path.display().to_string();
    let summary = IngestSummary {
        source: &source,
        rows: table.n_rows(),
        columns: table.n_cols(),
        header_skipped: table.had_header,
        design_dim: design.as_ref().map(|(d, _)| d.dim()),
        second_moment: design.as_ref().map(|(_, m)| rows_of(m.second_moment())),
        second_moment_min_eigenvalue: design.as_ref().map(|(_, m)| m.second_moment().lambda_min()),
        fourth_moment: design.as_ref().map(|(_, m)| rows_of(m.m4())),
        batch_ls: design.as_ref().and_then(|(d, _)| batch_ls(d).ok()),
    };
    match ctx.format {
        Format::Jsonl => {
            writeln!(out, "{}", serde_json::to_string(&summary).map_err(|e| CliError::Failed(e.to_string()))?)?;
        }
        Format::Table | Format::Csv => {
            writeln!(out, "source           {}", summary.source)?;
            writeln!(out, "rows             {}", summary.rows)?;
            writeln!(out, "columns          {}", summary.columns)?;
            writeln!(out, "header skipped   {}", summary.header_skipped)?;
            if let Some((d, m)) = &design {
                writeln!(out, "design dim       {}", d.dim())?;
                writeln!(out, "E[h h^T]")?;
                for r in m.second_moment().rows() {
                    writeln!(out, "  {}", r.iter().map(|x| format!("{x:>12.5e}")).collect::<Vec<_>>().join(" "))?;
                }
                writeln!(out, "E[h h^T h h^T]")?;
                for r in m.m4().rows() {
                    writeln!(out, "  {}", r.iter().map(|x| format!("{x:>12.5e}")).collect::<Vec<_>>().join(" "))?;
                }
                writeln!(out, "min eigenvalue   {}", sig(m.second_moment().lambda_min()))?;
                if let Some(t) = &summary.batch_ls {
                    writeln!(out, "batch LS         {:?}", t)?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_formatting() {
        assert_eq!(sig(25.0), "25.00");
        assert_eq!(sig(0.0071234), "0.007123");
        assert_eq!(sig(1.0e-9), "1.000e-9");
        assert_eq!(sig(f64::INFINITY), "Inf");
        assert_eq!(sig(327.4), "327.4");
    }

    #[test]
    fn source_must_be_unique() {
        let m = ModelArgs { sigma1: Some(1.0), sigma2: Some(1.0), example: Some("1A".into()), ..Default::default() };
        assert!(matches!(resolve_source(&m), Err(CliError::Config(_))));
        let m = ModelArgs { source: Some("explicit".into()), sigma1: Some(1.0), ..Default::default() };
        assert!(matches!(resolve_source(&m), Err(CliError::Config(_))));
        assert!(matches!(resolve_source(&ModelArgs::default()), Err(CliError::Config(_))));
    }

    #[test]
    fn gaussian_source_resolves() {
        let m = ModelArgs { sigma1: Some(1.0), sigma2: Some(2.0), ..Default::default() };
        let s = resolve_source(&m).unwrap();
        assert_eq!(s.model.second_moment().get(1, 1), 4.0);
        assert!(s.design.is_some());
    }
}
