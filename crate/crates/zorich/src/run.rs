//! Experiment execution: configuration, dispatch and artifacts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use zorich_core::dimension::{
    eta, karpinska_cover_stats, nested_dimension_bound, omega_absorption, q_probe, BoxCount, CoverStats, Density,
    McMullen, NestedLevel,
};
use zorich_core::experiments::{
    access_path, build_annulus_family, circle_dynamics, classify_orbit, family_orbit, fixed_point_from,
    fixed_point_xi, local_attraction_check, AnnulusParams, FixedPointKind, Verdict,
};
use zorich_core::geometry::sample_lipschitz;
use zorich_core::hairs::{conjugacy_residual, endpoint_orbit, Hair, HairConstants};
use zorich_core::map::{branch_contraction, derive_constants, dilatation_estimate, envelope_check};
use zorich_core::sampling::{substream, Aabb};
use zorich_core::symbolic::{endpoint_param, Itinerary, DEFAULT_DEPTH};
use zorich_core::{MapConfig, Vec3};

use crate::args::{ParamRange, Plane, Window};
use crate::boxdim::{calibration_count, dyadic_scales, julia_count, julia_window, tube_count, Calibration};
use crate::error::{RunError, RunResult};
use crate::io::{write_csv, write_json, write_pgm};
use crate::render::{render_planar, render_slice, SliceGeometry, VerdictCounts};
use crate::report::{Constants, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Derive,
    RenderSlice,
    TraceHair,
    Endpoint,
    Classify,
    Boxdim,
    Mcmullen,
    Karpinska,
    AccessPath,
    Family7,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Derive,
        Experiment::RenderSlice,
        Experiment::TraceHair,
        Experiment::Endpoint,
        Experiment::Classify,
        Experiment::Boxdim,
        Experiment::Mcmullen,
        Experiment::Karpinska,
        Experiment::AccessPath,
        Experiment::Family7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Derive => "derive",
            Experiment::RenderSlice => "render-slice",
            Experiment::TraceHair => "trace-hair",
            Experiment::Endpoint => "endpoint",
            Experiment::Classify => "classify",
            Experiment::Boxdim => "boxdim",
            Experiment::Mcmullen => "mcmullen",
            Experiment::Karpinska => "karpinska",
            Experiment::AccessPath => "access-path",
            Experiment::Family7 => "family7",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment {s:?}"))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the map comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSource {
    Derive { alpha: f64, resolution: usize },
    Config(MapConfig),
}

impl Default for MapSource {
    fn default() -> Self {
        MapSource::Derive { alpha: 0.5, resolution: 512 }
    }
}

impl MapSource {
    pub fn resolve(&self) -> RunResult<MapConfig> {
        match self {
            MapSource::Derive { alpha, resolution } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(RunError::Config(format!("alpha must lie in (0,1), got {alpha}")));
                }
                derive_constants(*alpha, *resolution).map_err(RunError::config)
            }
            MapSource::Config(cfg) => {
                cfg.validate().map_err(RunError::config)?;
                Ok(*cfg)
            }
        }
    }
}

/// Experiment-specific inputs; each experiment reads the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub plane: Option<String>,
    pub window: Option<String>,
    pub pixels: Option<usize>,
    pub budget: Option<usize>,
    pub itinerary: Option<Itinerary>,
    pub t: Option<String>,
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    pub k_max: Option<usize>,
    pub depth: Option<usize>,
    pub rho: Option<f64>,
    /// Box-count target: `calibration`, `julia` or `tube`.
    pub set: Option<String>,
    /// Dyadic exponents `lo:hi` of the box-count scales.
    pub scales: Option<String>,
    pub points: Option<Vec<[f64; 3]>>,
    pub annulus: Option<AnnulusParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub map: MapSource,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub params: Params,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        RunConfig { experiment, map: MapSource::default(), seed: default_seed(), out: default_out(), params: Params::default() }
    }

    pub fn from_json(text: &str) -> RunResult<Self> {
        serde_json::from_str(text).map_err(|e| RunError::Config(format!("config: {e}")))
    }
}

/// Outcome of a run that produced its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub passed: bool,
    pub summary: String,
    pub report: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

struct Ctx {
    cfg: MapConfig,
    seed: u64,
    out: PathBuf,
    params: Params,
    constants: Constants,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn itinerary(&self) -> Itinerary {
        self.params.itinerary.clone().unwrap_or_else(Itinerary::zero)
    }

    fn parse<T: FromStr<Err = String>>(&self, value: &Option<String>, default: &str, what: &str) -> RunResult<T> {
        value.as_deref().unwrap_or(default).parse().map_err(|e| RunError::Config(format!("{what}: {e}")))
    }

    fn positive(&self, value: Option<usize>, default: usize, what: &str) -> RunResult<usize> {
        match value.unwrap_or(default) {
            0 => Err(RunError::Config(format!("{what} must be positive"))),
            n => Ok(n),
        }
    }
}

/// An experiment's result before it is written.
struct Outcome<T: Serialize> {
    passed: bool,
    summary: String,
    result: T,
    artifacts: Vec<PathBuf>,
}

fn finish<T: Serialize>(ctx: &Ctx, exp: Experiment, o: Outcome<T>) -> RunResult<RunSummary> {
    let report = ctx.path(&format!("{}.json", exp.name()));
    let names = o.artifacts.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect();
    write_json(
        &report,
        &Report {
            experiment: exp.name().to_string(),
            seed: ctx.seed,
            map: ctx.cfg,
            constants: ctx.constants,
            passed: o.passed,
            artifacts: names,
            result: o.result,
        },
    )?;
    Ok(RunSummary { experiment: exp, passed: o.passed, summary: o.summary, report, artifacts: o.artifacts })
}

/// Runs the experiment and writes its artifacts. An invariant failure
/// still writes the report and returns `passed = false`.
pub fn run(config: &RunConfig) -> RunResult<RunSummary> {
    let cfg = config.map.resolve()?;
    let constants = Constants::compute(&cfg, config.seed)?;
    let ctx = Ctx { cfg, seed: config.seed, out: config.out.clone(), params: config.params.clone(), constants };
    let exp = config.experiment;
    match exp {
        Experiment::Derive => finish(&ctx, exp, derive(&ctx)?),
        Experiment::RenderSlice => finish(&ctx, exp, render(&ctx)?),
        Experiment::TraceHair => finish(&ctx, exp, trace(&ctx)?),
        Experiment::Endpoint => finish(&ctx, exp, endpoint(&ctx)?),
        Experiment::Classify => finish(&ctx, exp, classify(&ctx)?),
        Experiment::Boxdim => finish(&ctx, exp, boxdim(&ctx)?),
        Experiment::Mcmullen => finish(&ctx, exp, mcmullen(&ctx)?),
        Experiment::Karpinska => finish(&ctx, exp, karpinska(&ctx)?),
        Experiment::AccessPath => finish(&ctx, exp, access(&ctx)?),
        Experiment::Family7 => finish(&ctx, exp, family7(&ctx)?),
    }
}

#[derive(Serialize)]
struct DeriveResult {
    shift_admissible: bool,
    min_admissible_shift: f64,
    envelope: zorich_core::map::EnvelopeCheck,
    branch_contraction: f64,
    chart_lipschitz: zorich_core::geometry::LipschitzStats,
    dilatation: zorich_core::map::Dilatation,
}

fn derive(ctx: &Ctx) -> RunResult<Outcome<DeriveResult>> {
    let cfg = &ctx.cfg;
    let samples = ctx.positive(ctx.params.samples, 10_000, "samples")?;
    let envelope = envelope_check(cfg, samples, ctx.seed);
    let contraction = branch_contraction(cfg, samples, ctx.seed);
    let region = Aabb::new(Vec3::new(-3.0, -3.0, -2.0), Vec3::new(3.0, 3.0, 2.0));
    let r = DeriveResult {
        shift_admissible: cfg.shift >= cfg.min_admissible_shift(),
        min_admissible_shift: cfg.min_admissible_shift(),
        envelope,
        branch_contraction: contraction,
        chart_lipschitz: sample_lipschitz(256).map_err(RunError::experiment)?,
        dilatation: dilatation_estimate(samples.min(10_000), &region, ctx.seed),
    };
    let map_path = ctx.path("map.json");
    write_json(&map_path, cfg)?;
    let passed = r.shift_admissible
        && envelope.low_violations == 0
        && envelope.high_violations == 0
        && contraction <= cfg.alpha;
    let summary = format!(
        "a = {:.3}, m = {:.4}, M = {:.4}, alpha = {}, envelope violations {}/{}",
        cfg.shift,
        cfg.low_level,
        cfg.high_level,
        cfg.alpha,
        envelope.low_violations + envelope.high_violations,
        2 * samples
    );
    Ok(Outcome { passed, summary, result: r, artifacts: vec![map_path] })
}

#[derive(Serialize)]
struct RenderResult {
    geometry: SliceGeometry,
    budget: usize,
    counts: VerdictCounts,
    oracle_agreement: Option<f64>,
}

fn render(ctx: &Ctx) -> RunResult<Outcome<RenderResult>> {
    let plane: Plane = ctx.parse(&ctx.params.plane, "x2=0", "plane")?;
    let window: Window = ctx.parse(&ctx.params.window, "-3:3,-1:5", "window")?;
    if window.0.len() != 2 {
        return Err(RunError::Config("a slice window has two intervals".into()));
    }
    let pixels = ctx.positive(ctx.params.pixels, 512, "pixels")?;
    let budget = ctx.positive(ctx.params.budget, 60, "budget")?;
    let geometry = SliceGeometry { plane, u: window.0[0], v: window.0[1], width: pixels, height: pixels };
    let main = render_slice(geometry, budget, &ctx.cfg);
    let path = ctx.path("render-slice.pgm");
    write_pgm(&path, &main.image())?;
    let mut artifacts = vec![path];
    let mut agreement = None;
    if let Some(oracle) = render_planar(geometry, budget, &ctx.cfg) {
        let p = ctx.path("render-slice-planar.pgm");
        write_pgm(&p, &oracle.image())?;
        artifacts.push(p);
        agreement = Some(main.agreement(&oracle));
    }
    let counts = main.counts();
    let passed = agreement.is_none_or(|a| a >= 0.99);
    let summary = format!(
        "{}x{} slice {plane}: basin {}, julia evidence {}, undecided {}{}",
        pixels,
        pixels,
        counts.basin,
        counts.julia_evidence,
        counts.undecided,
        agreement.map(|a| format!(", planar agreement {:.4}", a)).unwrap_or_default()
    );
    Ok(Outcome { passed, summary, result: RenderResult { geometry, budget, counts, oracle_agreement: agreement }, artifacts })
}

#[derive(Serialize)]
struct TraceRow {
    t: f64,
    x1: f64,
    x2: f64,
    x3: f64,
    depth: usize,
    error_bound: f64,
    flagged: bool,
}

#[derive(Serialize)]
struct TraceResult {
    itinerary: Itinerary,
    range: ParamRange,
    t_s: f64,
    injective: bool,
    monotone_x3: bool,
    strip_width: f64,
    max_strip_distance: f64,
    flagged: usize,
    max_error_bound: f64,
}

fn trace(ctx: &Ctx) -> RunResult<Outcome<TraceResult>> {
    let s = ctx.itinerary();
    let range: ParamRange = ctx.parse(&ctx.params.t, "1:5:200", "t")?;
    let tol = ctx.params.tol.unwrap_or(1e-8);
    let hair = Hair::new(s.clone(), &ctx.cfg).map_err(RunError::config)?;
    let t_s = endpoint_param(&s, DEFAULT_DEPTH).t_s;
    if range.lo < t_s - 1e-9 {
        return Err(RunError::Config(format!("t range must start at or above t_s = {t_s}")));
    }
    let mut rows = Vec::with_capacity(range.n);
    for t in range.values() {
        let p = hair.point(t, tol).map_err(RunError::experiment)?;
        rows.push(TraceRow {
            t,
            x1: p.point.x1,
            x2: p.point.x2,
            x3: p.point.x3,
            depth: p.depth,
            error_bound: p.error_bound,
            flagged: p.flagged,
        });
    }
    let s0 = s.cell_at(0).ok_or_else(|| RunError::Config("itinerary has no first entry".into()))?;
    let c9 = HairConstants::new(&ctx.cfg).c9;
    let tau1 = hair.tau(1);
    let max_strip = rows
        .iter()
        .filter(|r| r.t >= tau1)
        .map(|r| Vec3::new(r.x1, r.x2, r.x3).dist(Vec3::new(2.0 * s0.r1 as f64, 2.0 * s0.r2 as f64, r.t)))
        .fold(0.0, f64::max);
    let monotone = rows.windows(2).all(|w| w[1].x3 >= w[0].x3 - w[0].error_bound - w[1].error_bound);
    let injective = rows.windows(2).all(|w| {
        let (a, b) = (Vec3::new(w[0].x1, w[0].x2, w[0].x3), Vec3::new(w[1].x1, w[1].x2, w[1].x3));
        a.dist(b) > w[0].error_bound + w[1].error_bound
    });
    let flagged = rows.iter().filter(|r| r.flagged).count();
    let max_err = rows.iter().map(|r| r.error_bound).fold(0.0, f64::max);
    let path = ctx.path("trace-hair.csv");
    write_csv(&path, &rows)?;
    let passed = monotone && injective && flagged == 0 && max_strip <= c9;
    let summary = format!(
        "{} points on [{}, {}], max error bound {:.2e}, strip distance {:.3} (c9 = {:.3})",
        rows.len(),
        range.lo,
        range.hi,
        max_err,
        max_strip,
        c9
    );
    let result = TraceResult {
        itinerary: s,
        range,
        t_s,
        injective,
        monotone_x3: monotone,
        strip_width: c9,
        max_strip_distance: max_strip,
        flagged,
        max_error_bound: max_err,
    };
    Ok(Outcome { passed, summary, result, artifacts: vec![path] })
}

#[derive(Serialize)]
struct EndpointResult {
    itinerary: Itinerary,
    t_s: f64,
    t_s_converged: bool,
    endpoint: zorich_core::hairs::Endpoint,
    orbit: Vec<zorich_core::hairs::Endpoint>,
    /// `|f(e_k) - e_{k+1}|` along the orbit.
    orbit_residuals: Vec<f64>,
}

fn endpoint(ctx: &Ctx) -> RunResult<Outcome<EndpointResult>> {
    let s = ctx.itinerary();
    let tol = ctx.params.tol.unwrap_or(1e-10);
    let depth = ctx.params.depth.unwrap_or(5);
    let param = endpoint_param(&s, DEFAULT_DEPTH);
    let e = Hair::new(s.clone(), &ctx.cfg)
        .and_then(|h| h.endpoint(tol))
        .map_err(RunError::experiment)?;
    let orbit = if depth > 0 && s.is_bounded() {
        endpoint_orbit(&s, depth, tol, &ctx.cfg).map_err(RunError::experiment)?
    } else {
        Vec::new()
    };
    let residuals: Vec<f64> = orbit
        .windows(2)
        .map(|w| zorich_core::map::eval_f(w[0].point, &ctx.cfg).map(|y| y.dist(w[1].point)).unwrap_or(f64::INFINITY))
        .collect();
    let bound_ok = e.error_bound < tol || e.evidence_only;
    let orbit_ok = orbit.windows(2).zip(&residuals).all(|(w, r)| {
        // f stretches the endpoint error by at most c2 e^{x3}
        *r <= ctx.cfg.deriv_upper * w[0].point.x3.exp() * w[0].error_bound + w[1].error_bound + 1e-9 * w[1].point.norm()
    });
    let summary = format!(
        "endpoint ({:.6}, {:.6}, {:.6}) at t_s = {:.6}, bound {:.1e}",
        e.point.x1, e.point.x2, e.point.x3, param.t_s, e.error_bound
    );
    let result = EndpointResult {
        itinerary: s,
        t_s: param.t_s,
        t_s_converged: param.converged,
        endpoint: e,
        orbit,
        orbit_residuals: residuals,
    };
    Ok(Outcome { passed: bound_ok && orbit_ok, summary, result, artifacts: Vec::new() })
}

#[derive(Serialize)]
struct ClassifyRow {
    x1: f64,
    x2: f64,
    x3: f64,
    verdict: &'static str,
    index: Option<usize>,
    last_x3: f64,
}

#[derive(Serialize)]
struct ClassifyResult {
    xi: zorich_core::experiments::FixedPoint,
    /// Largest distance to `xi` of the limits from the seeded starts.
    seeded_spread: f64,
    seeded_starts: usize,
    budget: usize,
}

fn classify(ctx: &Ctx) -> RunResult<Outcome<ClassifyResult>> {
    let cfg = &ctx.cfg;
    let budget = ctx.positive(ctx.params.budget, 100, "budget")?;
    let xi = fixed_point_xi(cfg, 1e-15).map_err(RunError::experiment)?;
    let mut rng = substream(ctx.seed, 5);
    let starts = 20;
    let mut spread: f64 = 0.0;
    for _ in 0..starts {
        let x0 = Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..cfg.high_level));
        let p = fixed_point_from(x0, cfg, 1e-15).map_err(RunError::experiment)?;
        spread = spread.max(p.point.dist(xi.point));
    }
    let points: Vec<Vec3> = match &ctx.params.points {
        Some(p) => p.iter().map(|&a| Vec3::from_array(a)).collect(),
        None => vec![
            xi.point,
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(2.0, 0.0, 3.0),
            Vec3::new(0.5, 0.5, 2.5),
            Vec3::new(0.0, 0.0, 30.0),
        ],
    };
    let rows: Vec<ClassifyRow> = points
        .iter()
        .map(|&x| {
            let v = classify_orbit(x, budget, cfg);
            let (verdict, index) = match v.kind {
                Verdict::Basin { exit } => ("basin", Some(exit)),
                Verdict::JuliaEvidence { index } => ("julia_evidence", Some(index)),
                Verdict::Undecided => ("undecided", None),
            };
            ClassifyRow { x1: x.x1, x2: x.x2, x3: x.x3, verdict, index, last_x3: v.orbit.last().map_or(x.x3, |p| p.x3) }
        })
        .collect();
    let path = ctx.path("classify.csv");
    write_csv(&path, &rows)?;
    let passed = xi.residual < 1e-12 && xi.point.x3 <= cfg.low_level && spread < 1e-10;
    let summary = format!(
        "xi = ({:.3e}, {:.3e}, {:.12}), residual {:.1e}, spread over {starts} starts {:.1e}; {} points classified",
        xi.point.x1,
        xi.point.x2,
        xi.point.x3,
        xi.residual,
        spread,
        rows.len()
    );
    Ok(Outcome { passed, summary, result: ClassifyResult { xi, seeded_spread: spread, seeded_starts: starts, budget }, artifacts: vec![path] })
}

#[derive(Serialize)]
struct CountRow {
    set: String,
    scale: f64,
    count: u64,
    flagged: u64,
}

#[derive(Serialize)]
struct BoxdimEntry {
    set: String,
    count: BoxCount,
    /// Expected slope for calibration sets.
    expected: Option<f64>,
    points: Option<usize>,
}

#[derive(Serialize)]
struct BoxdimResult {
    entries: Vec<BoxdimEntry>,
}

fn parse_exponents(text: &str) -> RunResult<(u32, u32)> {
    let bad = || RunError::Config(format!("scales: expected lo:hi exponents, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let (lo, hi): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if !(lo < hi && hi <= 12) {
        return Err(RunError::Config("scales: need lo < hi <= 12".into()));
    }
    Ok((lo, hi))
}

fn boxdim(ctx: &Ctx) -> RunResult<Outcome<BoxdimResult>> {
    let set = ctx.params.set.as_deref().unwrap_or("calibration");
    let mut entries = Vec::new();
    let passed;
    match set {
        "calibration" => {
            let (lo, hi) = parse_exponents(ctx.params.scales.as_deref().unwrap_or("2:6"))?;
            let scales = dyadic_scales(lo, hi);
            for c in Calibration::ALL {
                let count = calibration_count(c, &scales)?;
                let name = serde_json::to_value(c)?.as_str().unwrap_or_default().to_string();
                entries.push(BoxdimEntry { set: name, count, expected: Some(c.dimension()), points: None });
            }
            passed = entries.iter().all(|e| (e.count.slope - e.expected.unwrap_or(0.0)).abs() <= 0.1);
        }
        "julia" => {
            let (lo, hi) = parse_exponents(ctx.params.scales.as_deref().unwrap_or("3:7"))?;
            let budget = ctx.positive(ctx.params.budget, 40, "budget")?;
            let count = julia_count(&julia_window(), &dyadic_scales(lo, hi), budget, &ctx.cfg)?;
            passed = count.slope > 2.5;
            entries.push(BoxdimEntry { set: set.into(), count, expected: None, points: None });
        }
        "tube" => {
            let (lo, hi) = parse_exponents(ctx.params.scales.as_deref().unwrap_or("3:7"))?;
            let (count, n) = tube_count(&julia_window(), &dyadic_scales(lo, hi), &ctx.cfg)?;
            passed = count.slope < 1.8;
            entries.push(BoxdimEntry { set: set.into(), count, expected: None, points: Some(n) });
        }
        other => return Err(RunError::Config(format!("unknown box-count set {other:?}"))),
    }
    let rows: Vec<CountRow> = entries
        .iter()
        .flat_map(|e| {
            e.count.scales.iter().zip(&e.count.counts).zip(&e.count.flagged).map(|((&scale, &count), &flagged)| CountRow {
                set: e.set.clone(),
                scale,
                count,
                flagged,
            })
        })
        .collect();
    let path = ctx.path("boxdim.csv");
    write_csv(&path, &rows)?;
    let slopes: Vec<String> = entries.iter().map(|e| format!("{} {:.3}", e.set, e.count.slope)).collect();
    let summary = format!("slopes: {}", slopes.join(", "));
    Ok(Outcome { passed, summary, result: BoxdimResult { entries }, artifacts: vec![path] })
}

#[derive(Serialize)]
struct LevelRow {
    k: usize,
    density: f64,
    density_se: f64,
    neglog_diam: f64,
    neglog_envelope: f64,
    within_envelope: bool,
    bound: Option<f64>,
}

#[derive(Serialize)]
struct McMullenResult {
    q: f64,
    base_level: i64,
    proxy_level: i64,
    eta: f64,
    /// Densities at the base level and the four above it.
    level_densities: Vec<Density>,
    levels: Vec<NestedLevel>,
    bounds: Vec<f64>,
    diagnostics: Vec<String>,
}

fn mcmullen(ctx: &Ctx) -> RunResult<Outcome<McMullenResult>> {
    let samples = ctx.positive(ctx.params.samples, 100_000, "samples")?;
    let k_max = ctx.params.k_max.unwrap_or(3);
    if !(1..=4).contains(&k_max) {
        return Err(RunError::Config("k_max must lie in 1..=4".into()));
    }
    let rep = nested_dimension_bound(&ctx.cfg, k_max, samples, ctx.seed).map_err(RunError::experiment)?;
    let lab = McMullen::new(&ctx.cfg, q_probe(1000)).map_err(RunError::experiment)?;
    let level_densities: Vec<Density> =
        (0..=4).map(|j| lab.density(rep.base_level + j, samples, ctx.seed.wrapping_add(j as u64))).collect();
    let delta = rep.base_density.value;
    let se = rep.base_density.relative_se();
    let eta = eta(&ctx.cfg);
    let densities_ok = level_densities.iter().all(|d| d.value > 0.0 && d.relative_se() < 0.1);
    let floors_ok = rep.levels.iter().all(|l| l.density.value >= eta.powi(l.k as i32 + 1) * delta * (1.0 - 3.0 * se));
    let envelope_ok = rep.levels.iter().filter(|l| l.k <= 3).all(|l| l.within_envelope());
    let bounds = rep.bounds();
    let increasing = bounds.windows(2).all(|w| w[1] > w[0]);
    let rows: Vec<LevelRow> = rep
        .levels
        .iter()
        .map(|l| LevelRow {
            k: l.k,
            density: l.density.value,
            density_se: l.density.se,
            neglog_diam: l.neglog_diam.ln_value().exp(),
            neglog_envelope: l.neglog_envelope.ln_value().exp(),
            within_envelope: l.within_envelope(),
            bound: l.bound,
        })
        .collect();
    let path = ctx.path("mcmullen.csv");
    write_csv(&path, &rows)?;
    let shown: Vec<String> = bounds.iter().map(|b| format!("{b:.4}")).collect();
    let summary = format!(
        "delta = {:.4} (rel. SE {:.3}) at level {}, bounds [{}]",
        delta,
        se,
        rep.base_level,
        shown.join(", ")
    );
    let result = McMullenResult {
        q: rep.q,
        base_level: rep.base_level,
        proxy_level: rep.proxy_level,
        eta: rep.eta,
        level_densities,
        levels: rep.levels,
        bounds,
        diagnostics: rep.diagnostics,
    };
    Ok(Outcome { passed: densities_ok && floors_ok && envelope_ok && increasing, summary, result, artifacts: vec![path] })
}

#[derive(Serialize)]
struct KarpinskaRow {
    k: usize,
    log_n: f64,
    log_d: f64,
    log_r: f64,
    log_ratio: f64,
}

#[derive(Serialize)]
struct KarpinskaResult {
    itinerary: Itinerary,
    t: f64,
    rho: f64,
    stats: Vec<CoverStats>,
    decreasing: bool,
    below_one: bool,
    absorption_entry: Option<usize>,
}

fn karpinska(ctx: &Ctx) -> RunResult<Outcome<KarpinskaResult>> {
    let s = ctx.itinerary();
    let t = match &ctx.params.t {
        Some(text) => text.parse::<f64>().map_err(|_| RunError::Config(format!("t: expected a number, got {text:?}")))?,
        None => 1.0,
    };
    let rho = ctx.params.rho.unwrap_or(1.2);
    let k_max = ctx.params.k_max.unwrap_or(4);
    let stats = (1..=k_max)
        .map(|k| karpinska_cover_stats(&s, t, k, rho, &ctx.cfg))
        .collect::<Result<Vec<_>, _>>()
        .map_err(RunError::config)?;
    let decreasing = stats.windows(2).all(|w| w[1].log_ratio < w[0].log_ratio);
    let below_one = stats.last().is_some_and(|c| c.log_ratio < 0.0);
    let absorption = omega_absorption(&s, t, 6, 1e-10, &ctx.cfg).map_err(RunError::experiment)?;
    let rows: Vec<KarpinskaRow> = stats
        .iter()
        .map(|c| KarpinskaRow { k: c.k, log_n: c.log_n, log_d: c.log_d, log_r: c.log_r, log_ratio: c.log_ratio })
        .collect();
    let path = ctx.path("karpinska.csv");
    write_csv(&path, &rows)?;
    let ratios: Vec<String> = stats.iter().map(|c| format!("{:.3e}", c.ratio())).collect();
    let summary = format!("ratio for k = 1..{k_max}: [{}]", ratios.join(", "));
    let result = KarpinskaResult {
        itinerary: s,
        t,
        rho,
        stats,
        decreasing,
        below_one,
        absorption_entry: absorption.first_entry,
    };
    Ok(Outcome { passed: decreasing && below_one, summary, result, artifacts: vec![path] })
}

#[derive(Serialize)]
struct PathRow {
    k: usize,
    length: f64,
    length_bound: f64,
    dist_to_target: f64,
    dist_bound: f64,
    ball_clearance: f64,
    non_basin_samples: usize,
}

#[derive(Serialize)]
struct AccessResult {
    itinerary: Itinerary,
    target: Vec3,
    eta: f64,
    mu: f64,
    decay_rate: Option<f64>,
    all_basin: bool,
    diagnostics: Vec<String>,
}

fn access(ctx: &Ctx) -> RunResult<Outcome<AccessResult>> {
    let s = ctx.itinerary();
    let depth = ctx.positive(ctx.params.depth, 12, "depth")?;
    let budget = ctx.positive(ctx.params.budget, 100, "budget")?;
    let path = access_path(&s, depth, &ctx.cfg).map_err(RunError::config)?;
    let alpha = ctx.cfg.alpha;
    let rows: Vec<PathRow> = path
        .segments
        .iter()
        .map(|seg| PathRow {
            k: seg.k,
            length: seg.length,
            length_bound: seg.length_bound,
            dist_to_target: path.dist_to_target(seg.k).unwrap_or(f64::INFINITY),
            dist_bound: 4.0 * alpha.powi(seg.k as i32),
            ball_clearance: seg.ball_clearance,
            non_basin_samples: seg
                .points
                .iter()
                .filter(|p| !matches!(zorich_core::experiments::orbit_verdict(**p, budget, &ctx.cfg), Verdict::Basin { .. }))
                .count(),
        })
        .collect();
    let all_basin = rows.iter().all(|r| r.non_basin_samples == 0);
    let decay = path.decay_rate();
    let passed = all_basin
        && rows.len() == depth
        && rows.iter().all(|r| r.dist_to_target <= r.dist_bound && r.length <= r.length_bound)
        && decay.is_some_and(|d| d <= alpha + 0.05);
    let csv_path = ctx.path("access-path.csv");
    write_csv(&csv_path, &rows)?;
    let summary = format!(
        "{} levels to ({:.6}, {:.6}, {:.6}), decay ratio {:.3}, all sampled points in the basin: {}",
        rows.len(),
        path.target.x1,
        path.target.x2,
        path.target.x3,
        decay.unwrap_or(f64::NAN),
        all_basin
    );
    let result = AccessResult {
        itinerary: s,
        target: path.target,
        eta: path.constants.eta,
        mu: path.constants.mu,
        decay_rate: decay,
        all_basin,
        diagnostics: path.diagnostics,
    };
    Ok(Outcome { passed, summary, result, artifacts: vec![csv_path] })
}

#[derive(Serialize)]
struct FixedRow {
    n: usize,
    phi: f64,
    residual: f64,
    multiplier: f64,
    multiplier_fd: f64,
    kind: FixedPointKind,
}

/// Orbit of a perturbed fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perturbation {
    pub n: usize,
    pub final_dist_to_circle: f64,
    pub final_dist_to_fixed_point: f64,
    pub final_angle: f64,
}

#[derive(Serialize)]
struct FamilyResult {
    family: zorich_core::experiments::AnnulusFamilyConfig,
    chart_lipschitz: zorich_core::geometry::LipschitzStats,
    invariance_error: f64,
    radial_derivative_fd: f64,
    radial_derivative_exact: f64,
    vertical_derivative_fd: f64,
    contraction: zorich_core::experiments::ContractionReport,
    attracting: Perturbation,
    saddle: Perturbation,
}

/// Orbits of 200 steps from `u_6 + 1e-3 (1,1,1)` and from `u_5` moved
/// radially by `1e-3` with a `1e-10` angular seed.
pub fn perturbations(fam: &zorich_core::experiments::AnnulusFamilyConfig) -> (Perturbation, Perturbation) {
    let finish = |n: usize, x: Vec3| {
        let end = *family_orbit(fam, x, 200).last().expect("orbit is non-empty");
        let u = fam.circle_point(1.0 / n as f64);
        Perturbation {
            n,
            final_dist_to_circle: fam.dist_to_circle(end),
            final_dist_to_fixed_point: end.dist(u),
            final_angle: fam.angle(end),
        }
    };
    let u6 = fam.circle_point(1.0 / 6.0);
    let s = fam.params.s + 1e-3;
    let phi: f64 = 0.2 + 1e-10;
    (finish(6, u6 + Vec3::new(1e-3, 1e-3, 1e-3)), finish(5, Vec3::new(s * phi.cos(), s * phi.sin(), fam.w)))
}

fn family7(ctx: &Ctx) -> RunResult<Outcome<FamilyResult>> {
    let params = ctx.params.annulus.unwrap_or_default();
    let (fam, _) = build_annulus_family(params, &ctx.cfg).map_err(RunError::config)?;
    let samples = ctx.positive(ctx.params.samples, 10_000, "samples")?;
    let dynamics = circle_dynamics(&fam, 5, 12, samples).map_err(RunError::experiment)?;
    let contraction = local_attraction_check(&fam, 0.02, samples, ctx.seed).map_err(RunError::experiment)?;
    let (attracting, saddle) = perturbations(&fam);
    let rows: Vec<FixedRow> = dynamics
        .fixed_points
        .iter()
        .map(|f| FixedRow {
            n: f.n,
            phi: 1.0 / f.n as f64,
            residual: f.residual,
            multiplier: f.multiplier,
            multiplier_fd: f.multiplier_fd,
            kind: f.kind,
        })
        .collect();
    let path = ctx.path("family7.csv");
    write_csv(&path, &rows)?;
    let oscillating = matches!(params.circle_map, zorich_core::experiments::CircleMap::Oscillating);
    let classes_ok = !oscillating
        || dynamics.fixed_points.iter().all(|f| {
            let want = if f.n % 2 == 0 { FixedPointKind::Attracting } else { FixedPointKind::Saddle };
            f.kind == want
        });
    let saddle_drift = (saddle.final_angle - 0.2).abs() > 1e-3 && saddle.final_dist_to_circle < 1e-8;
    let passed = dynamics.invariance_error <= 1e-10
        && classes_ok
        && (!oscillating || (attracting.final_dist_to_fixed_point < 1e-8 && saddle_drift))
        && contraction.max_ratio <= 0.55;
    let summary = format!(
        "w = {:.5}, a = {:.5}, invariance error {:.1e}, u_6 perturbation ends {:.1e} away, u_5 perturbation drifts to angle {:.4}",
        fam.w, fam.a, dynamics.invariance_error, attracting.final_dist_to_fixed_point, saddle.final_angle
    );
    let phi = 0.3;
    let result = FamilyResult {
        family: fam,
        chart_lipschitz: fam.lipschitz(256).map_err(RunError::experiment)?,
        invariance_error: dynamics.invariance_error,
        radial_derivative_fd: fam.radial_derivative_fd(phi),
        radial_derivative_exact: fam.radial_derivative_exact(),
        vertical_derivative_fd: fam.vertical_derivative_fd(phi),
        contraction,
        attracting,
        saddle,
    };
    Ok(Outcome { passed, summary, result, artifacts: vec![path] })
}

/// Conjugacy residuals along a hair, for reports and tests.
pub fn conjugacy_table(s: &Itinerary, ts: &[f64], k_max: usize, cfg: &MapConfig) -> RunResult<Vec<(f64, usize, f64, f64)>> {
    let mut out = Vec::new();
    for &t in ts {
        for k in 1..=k_max {
            let r = conjugacy_residual(s, t, k, 1e-10, cfg).map_err(RunError::experiment)?;
            out.push((t, r.k, r.residual, r.bound));
        }
    }
    Ok(out)
}

/// Reads a map configuration written by the `derive` experiment.
pub fn load_map(path: &Path) -> RunResult<MapSource> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let cfg: MapConfig = serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    Ok(MapSource::Config(cfg))
}
