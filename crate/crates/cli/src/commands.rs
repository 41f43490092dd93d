//! One function per subcommand. Each writes its artifacts and returns the bound violations it
//! observed; the caller turns a non-empty list into exit status 1.

use crate::config::RunConfig;
use crate::output::{contour, float, write_json, Csv, Svg};
use gelfand_core::assembly::{AssemblyOptions, GlobalApprox, Order};
use gelfand_core::diagnostics::{
    compare_to_oracle, radial_oracle, residual_report, residual_samples, sweep, t_lambda, Branch, SweepOptions, TLambdaOptions,
};
use gelfand_core::geometry::{ClosedCurve, DomainSpec, FourierCurve};
use gelfand_core::laplace::{conformal_potential, extract_gamma, verify_reflection, ReflectionReport, SplitDomain};
use gelfand_core::matching::{MatchReport, MatchedData, MatchingSetup};
use gelfand_core::{Error, C64};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const REFLECTION_LIMIT: f64 = 1e-5;
/// Identities and bracket lines hold exactly; anything above this is a solver failure.
pub const MATCHING_LIMIT: f64 = 1e-8;
const REFLECTION_CASES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerical(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Numerical(Error::Argument(_)) => 2,
            _ => 1,
        }
    }
}

pub type Flags = Vec<String>;

struct Out<'a> {
    dir: &'a Path,
    cfg: &'a RunConfig,
}

impl<'a> Out<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, CommandError> {
        let dir = cfg.output_dir.as_path();
        fs::create_dir_all(dir).map_err(|source| CommandError::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { dir, cfg })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn io(&self, name: &str, r: std::io::Result<()>) -> Result<(), CommandError> {
        r.map_err(|source| CommandError::Io { path: self.path(name), source })
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CommandError> {
        if self.cfg.emit.json {
            self.io(name, write_json(&self.path(name), value))?;
            log::info!("wrote {}", self.path(name).display());
        }
        Ok(())
    }

    fn csv(&self, name: &str, table: &Csv) -> Result<(), CommandError> {
        if self.cfg.emit.csv {
            self.io(name, table.write(&self.path(name)))?;
            log::info!("wrote {}", self.path(name).display());
        }
        Ok(())
    }

    fn svg(&self, name: &str, drawing: &Svg) -> Result<(), CommandError> {
        if self.cfg.emit.svg {
            self.io(name, drawing.write(&self.path(name)))?;
            log::info!("wrote {}", self.path(name).display());
        }
        Ok(())
    }
}

fn setup(cfg: &RunConfig) -> Result<Arc<MatchingSetup>, CommandError> {
    let domain = cfg.domain_spec()?;
    log::info!("building interface and harmonic fields ({} γ nodes)", cfg.nodes.gamma);
    Ok(Arc::new(MatchingSetup::new(domain, &cfg.setup_options())?))
}

fn matched(setup: &MatchingSetup, lambda: f64) -> Result<Arc<MatchedData>, CommandError> {
    log::info!("matching at λ = {lambda:e}");
    Ok(Arc::new(MatchedData::new(setup, lambda)?))
}

fn assemble_one(cfg: &RunConfig, setup: &Arc<MatchingSetup>, lambda: f64) -> Result<GlobalApprox, CommandError> {
    let opts = AssemblyOptions { m_override: cfg.m_override, l_window: cfg.l_window, strict_band: cfg.strict_band, order: Order::Two };
    let g = GlobalApprox::new(setup.clone(), matched(setup, lambda)?, &opts)?;
    if !g.cutoff.asymptotic {
        log::warn!("λ = {lambda:e}: M = {:.3} is below the required {} (band limited by the tube)", g.cutoff.m, g.cutoff.m_required);
    }
    Ok(g)
}

fn bounding_box(curve: &ClosedCurve) -> [f64; 4] {
    curve.nodes().iter().fold([f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY], |b, z| {
        [b[0].min(z.re), b[1].max(z.re), b[2].min(z.im), b[3].max(z.im)]
    })
}

fn stroke_width(domain: &DomainSpec) -> f64 {
    let [x0, x1, ..] = bounding_box(&domain.outer);
    0.004 * (x1 - x0)
}

fn domain_drawing(domain: &DomainSpec, title: &str) -> Svg {
    let [x0, x1, y0, y1] = bounding_box(&domain.outer);
    let mut svg = Svg::new(x0, x1, y0, y1);
    svg.closed_curve(&domain.outer, "black", stroke_width(domain));
    svg.closed_curve(&domain.inner, "black", stroke_width(domain));
    svg.title(title);
    svg
}

#[derive(Serialize)]
struct GammaReport {
    modulus: f64,
    flux: f64,
    nodes: usize,
    length: f64,
    tube_width: f64,
    resolution_warning: bool,
    reflection: ReflectionReport,
}

pub fn gamma(cfg: &RunConfig) -> Result<Flags, CommandError> {
    let out = Out::new(cfg)?;
    let domain = cfg.domain_spec()?;
    let potential = conformal_potential(&domain)?;
    let gamma = extract_gamma(&domain, &potential, cfg.nodes.gamma)?;
    let tube_width = gelfand_core::geometry::tube_width(&gamma, &domain)?;
    let split = SplitDomain::new(domain.clone(), gamma.clone())?;
    let reflection = verify_reflection(&split, REFLECTION_CASES, cfg.seed)?;

    let mut table = Csv::new(&["s", "x", "y", "k"]);
    for (j, z) in gamma.nodes().iter().enumerate() {
        table.numbers(&[gamma.param(j), z.re, z.im, gamma.curvature().values[j]]);
    }
    out.csv("gamma.csv", &table)?;

    let mut flags = Flags::new();
    let defect = reflection.dirichlet_defect.max(reflection.neumann_defect);
    if defect > REFLECTION_LIMIT {
        flags.push(format!("reflection defect {defect:.3e} exceeds {REFLECTION_LIMIT:e}"));
    }
    let report = GammaReport {
        modulus: potential.modulus,
        flux: potential.flux,
        nodes: gamma.len(),
        length: gamma.length,
        tube_width,
        resolution_warning: gamma.resolution_warning,
        reflection,
    };
    out.json("gamma.json", &report)?;

    if cfg.emit.svg {
        let mut svg = domain_drawing(&domain, &format!("interface, modulus {:.6}", potential.modulus));
        svg.closed_curve(&gamma, "crimson", stroke_width(&domain));
        out.svg("gamma.svg", &svg)?;
    }
    Ok(flags)
}

pub fn matching(cfg: &RunConfig) -> Result<Flags, CommandError> {
    let out = Out::new(cfg)?;
    let setup = setup(cfg)?;
    let mut reports: Vec<MatchReport> = Vec::new();
    let mut flags = Flags::new();
    let mut header = vec!["lambda".to_string(), "s".to_string()];
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &lambda in &cfg.lambdas {
        let md = matched(&setup, lambda)?;
        let r = &md.report;
        let ident = r.identities.worst();
        let bracket = r.brackets.value_line.max(r.brackets.delta_line) / r.gamma1.value;
        if ident > MATCHING_LIMIT {
            flags.push(format!("λ = {lambda:e}: exact identities off by {ident:.3e}"));
        }
        if bracket > MATCHING_LIMIT {
            flags.push(format!("λ = {lambda:e}: bracket lines off by {bracket:.3e} relative to Γ₁"));
        }
        let cols = md.boundary_columns();
        if header.len() == 2 {
            header.extend(cols.iter().map(|(name, _)| name.to_string()));
        }
        let n = cols[0].1.len();
        let ds = cols[0].1.spacing();
        for j in 0..n {
            let mut row = vec![lambda, j as f64 * ds];
            row.extend(cols.iter().map(|(_, p)| p.values[j]));
            rows.push(row);
        }
        reports.push(md.report.clone());
    }
    out.json("match.json", &reports)?;
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Csv::new(&header);
    for row in &rows {
        table.numbers(row);
    }
    out.csv("fields.csv", &table)?;
    Ok(flags)
}

#[derive(Serialize)]
struct AssembleSummary {
    lambda: f64,
    cutoff: gelfand_core::assembly::CutoffSpec,
    band_mismatch: gelfand_core::assembly::BandMismatch,
    grid_points_inside: usize,
    max_value: f64,
    argmax: [f64; 2],
}

pub fn assemble(cfg: &RunConfig) -> Result<Flags, CommandError> {
    let out = Out::new(cfg)?;
    let setup = setup(cfg)?;
    let mut table = Csv::new(&["lambda", "x", "y", "u_ap"]);
    let mut summaries = Vec::new();
    for (idx, &lambda) in cfg.lambdas.iter().enumerate() {
        let g = assemble_one(cfg, &setup, lambda)?;
        let grid = g.sample_grid(cfg.assemble.grid, cfg.assemble.grid);
        let nx = grid.xs.len();
        let (mut inside, mut max_value, mut argmax) = (0, f64::NEG_INFINITY, [0.0; 2]);
        for (k, v) in grid.values.iter().enumerate() {
            if let Some(u) = v {
                let (x, y) = (grid.xs[k % nx], grid.ys[k / nx]);
                table.numbers(&[lambda, x, y, *u]);
                inside += 1;
                if *u > max_value {
                    max_value = *u;
                    argmax = [x, y];
                }
            }
        }
        if cfg.emit.svg {
            let mut svg = domain_drawing(&setup.domain, &format!("u_ap at λ = {lambda:e}"));
            let w = 0.75 * stroke_width(&setup.domain);
            svg.closed_curve(setup.gamma(), "crimson", w);
            let levels = cfg.assemble.contours;
            for i in 1..=levels {
                let level = max_value * i as f64 / (levels + 1) as f64;
                svg.segments(&contour(&grid.xs, &grid.ys, &grid.values, level), "steelblue", w);
            }
            out.svg(&format!("u_ap_{idx}.svg"), &svg)?;
        }
        summaries.push(AssembleSummary {
            lambda,
            band_mismatch: g.band_mismatch(5)?,
            cutoff: g.cutoff.clone(),
            grid_points_inside: inside,
            max_value,
            argmax,
        });
    }
    out.csv("u_ap.csv", &table)?;
    out.json("assemble.json", &summaries)?;
    Ok(Flags::new())
}

#[derive(Serialize)]
struct ResidualFlags {
    paths_agree: bool,
    boundary_vanishes: bool,
    corrections_reduce_tube_residual: bool,
}

#[derive(Serialize)]
struct ResidualRun {
    report: gelfand_core::diagnostics::ResidualReport,
    cutoff: gelfand_core::assembly::CutoffSpec,
    boundary_sup: f64,
    flags: ResidualFlags,
}

fn boundary_sup(g: &GlobalApprox) -> Result<f64, CommandError> {
    let mut sup: f64 = 0.0;
    for curve in [&g.setup.domain.outer, &g.setup.domain.inner] {
        for z in curve.nodes() {
            sup = sup.max(g.eval(z)?.abs());
        }
    }
    Ok(sup)
}

pub fn residual(cfg: &RunConfig) -> Result<Flags, CommandError> {
    let out = Out::new(cfg)?;
    let setup = setup(cfg)?;
    let opts = cfg.sample_options();
    let mut runs = Vec::new();
    let mut flags = Flags::new();
    let mut table = Csv::new(&["lambda", "x", "y", "zone", "residual"]);
    for &lambda in &cfg.lambdas {
        let g = assemble_one(cfg, &setup, lambda)?;
        log::info!("sampling the residual at λ = {lambda:e}");
        let report = residual_report(&g, &opts)?;
        for smp in residual_samples(&g, &opts)? {
            table.row(&[float(lambda), float(smp.x), float(smp.y), format!("{:?}", smp.zone).to_lowercase(), float(smp.value)]);
        }
        let boundary = boundary_sup(&g)?;
        let checks = ResidualFlags {
            paths_agree: report.paths.max_relative_gap <= cfg.residual.path_tolerance,
            boundary_vanishes: boundary <= cfg.residual.boundary_tolerance,
            corrections_reduce_tube_residual: report.tube_by_order[2] < report.tube_by_order[0],
        };
        if !checks.paths_agree {
            flags.push(format!("λ = {lambda:e}: residual paths differ by {:.3e}", report.paths.max_relative_gap));
        }
        if !checks.boundary_vanishes {
            flags.push(format!("λ = {lambda:e}: |u_ap| = {boundary:.3e} on the boundary"));
        }
        if !checks.corrections_reduce_tube_residual {
            flags.push(format!("λ = {lambda:e}: corrections do not reduce the tube residual {:?}", report.tube_by_order));
        }
        runs.push(ResidualRun { report, cutoff: g.cutoff.clone(), boundary_sup: boundary, flags: checks });
    }
    out.json("residual.json", &runs)?;
    out.csv("residual_samples.csv", &table)?;
    Ok(flags)
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<Flags, CommandError> {
    let out = Out::new(cfg)?;
    let setup = setup(cfg)?;
    let opts = SweepOptions {
        lambdas: cfg.lambdas.clone(),
        m_override: cfg.m_override,
        l_window: cfg.l_window,
        samples: cfg.sample_options(),
        t_lambda: None,
        ..Default::default()
    };
    log::info!("sweeping {} values of λ", opts.lambdas.len());
    let rep = sweep(setup, &opts)?;
    let mut table = Csv::new(&["row", "rate", "lambda", "measured", "constant", "spread", "vanishing", "pass"]);
    for row in &rep.rows {
        for ((lambda, measured), constant) in rep.lambdas.iter().zip(&row.measured).zip(&row.constants) {
            table.row(&[
                row.name.clone(),
                format!("\"{}\"", row.rate),
                float(*lambda),
                float(*measured),
                float(*constant),
                float(row.spread),
                row.vanishing.to_string(),
                row.pass.to_string(),
            ]);
        }
    }
    out.json("sweep.json", &rep)?;
    out.csv("scaling.csv", &table)?;
    let mut flags: Flags = rep.rows.iter().filter(|r| !r.pass).map(|r| format!("{}: fitted constants spread {:.2}×", r.name, r.spread)).collect();
    for d in &rep.dropped {
        flags.push(format!("dropped {d}"));
    }
    if !rep.asymptotic {
        log::warn!("M = {:.3} is below the required multiplier; band rows are pre-asymptotic", rep.m);
    }
    Ok(flags)
}

/// Centre and radius when the curve is an exact circle.
fn as_circle(c: &FourierCurve) -> Option<(C64, f64)> {
    let coeff = |v: &[f64], j: usize| v.get(j).copied().unwrap_or(0.0);
    let r = coeff(&c.cos_coeffs_x, 1);
    let higher = [&c.cos_coeffs_x, &c.sin_coeffs_x, &c.cos_coeffs_y, &c.sin_coeffs_y].iter().all(|v| v.iter().skip(2).all(|&a| a == 0.0));
    let round = coeff(&c.sin_coeffs_y, 1) == r && coeff(&c.sin_coeffs_x, 1) == 0.0 && coeff(&c.cos_coeffs_y, 1) == 0.0;
    (higher && round && r > 0.0).then(|| (C64::new(coeff(&c.cos_coeffs_x, 0), coeff(&c.cos_coeffs_y, 0)), r))
}

#[derive(Serialize)]
struct RadialRow {
    lambda: f64,
    relative_gap: f64,
    profile_gap: f64,
    t_lambda_oracle: f64,
    t_lambda_approx: f64,
    oracle_slope: f64,
    oracle_max: f64,
    oracle_argmax: f64,
}

#[derive(Serialize)]
struct RadialReport {
    inner_radius: f64,
    outer_radius: f64,
    rays: usize,
    rows: Vec<RadialRow>,
    gap_decreasing: bool,
}

pub fn radial_check(cfg: &RunConfig) -> Result<Flags, CommandError> {
    let (Some((c_out, b)), Some((c_in, a))) = (as_circle(&cfg.domain.outer), as_circle(&cfg.domain.inner)) else {
        return Err(CommandError::Config("radial-check needs circular inner and outer boundaries".into()));
    };
    if c_out != c_in {
        return Err(CommandError::Config(format!("radial-check needs concentric circles, centres {c_in} and {c_out}")));
    }
    let out = Out::new(cfg)?;
    let setup = setup(cfg)?;
    let mut lambdas = cfg.lambdas.clone();
    lambdas.sort_by(|x, y| y.total_cmp(x));
    let mut rows = Vec::new();
    for &lambda in &lambdas {
        log::info!("shooting the radial large branch at λ = {lambda:e}");
        let oracle = radial_oracle(a, b, lambda, Branch::Large)?;
        let g = assemble_one(cfg, &setup, lambda)?;
        let cmp = compare_to_oracle(&g, &oracle, c_in, cfg.radial.rays)?;
        let tl = t_lambda(&g, &TLambdaOptions::default())?;
        rows.push(RadialRow {
            lambda,
            relative_gap: cmp.relative_gap,
            profile_gap: cmp.profile_gap,
            t_lambda_oracle: oracle.t_lambda,
            t_lambda_approx: tl.total,
            oracle_slope: oracle.slope,
            oracle_max: oracle.max_value,
            oracle_argmax: oracle.argmax,
        });
    }
    let gap_decreasing = rows.windows(2).all(|w| w[1].relative_gap < w[0].relative_gap);
    let mut table = Csv::new(&["lambda", "relative_gap", "profile_gap", "t_lambda_oracle", "t_lambda_approx"]);
    for r in &rows {
        table.numbers(&[r.lambda, r.relative_gap, r.profile_gap, r.t_lambda_oracle, r.t_lambda_approx]);
    }
    let mut flags = Flags::new();
    if !gap_decreasing {
        flags.push("oracle gap does not decrease as λ decreases".into());
    }
    out.json("radial.json", &RadialReport { inner_radius: a, outer_radius: b, rays: cfg.radial.rays, rows, gap_decreasing })?;
    out.csv("radial.csv", &table)?;
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circles_are_recognised() {
        assert_eq!(as_circle(&FourierCurve::circle(0.5, -1.0, 2.0)), Some((C64::new(0.5, -1.0), 2.0)));
        assert_eq!(as_circle(&FourierCurve::ellipse(0.0, 0.0, 2.0, 1.0)), None);
        let mut wobbly = FourierCurve::circle(0.0, 0.0, 1.0);
        wobbly.cos_coeffs_x.push(0.1);
        assert_eq!(as_circle(&wobbly), None);
    }

    #[test]
    fn argument_errors_map_to_config_status() {
        assert_eq!(CommandError::Numerical(Error::Argument("x".into())).exit_code(), 2);
        assert_eq!(CommandError::Config("x".into()).exit_code(), 2);
        assert_eq!(CommandError::Numerical(Error::Solver("x".into())).exit_code(), 1);
    }
}
