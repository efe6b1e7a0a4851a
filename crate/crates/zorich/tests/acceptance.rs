//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the run;
//! every other failure makes the binary exit non-zero.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use zorich::args::Plane;
use zorich::boxdim::{calibration_count, dyadic_scales, julia_count, julia_window, tube_count, Calibration};
use zorich::parallel::pool;
use zorich::planar::planar_hair_point;
use zorich::render::{render_planar, render_slice, SliceGeometry};
use zorich::run::perturbations;
use zorich::{run, Experiment, RunConfig};
use zorich_core::dimension::{eta, karpinska_cover_stats, nested_dimension_bound, q_probe, McMullen};
use zorich_core::experiments::{
    access_path, build_annulus_family, circle_dynamics, fixed_point_from, fixed_point_xi, local_attraction_check,
    orbit_verdict, AnnulusParams, CircleMap, Verdict,
};
use zorich_core::geometry::{hemisphere_to_square, square_to_hemisphere, SquarePoint};
use zorich_core::hairs::{conjugacy_residual, Hair, HairConstants, DEPTH_CAP};
use zorich_core::map::{branch_contraction, derive_constants, envelope_check, eval_F, eval_f, lambda};
use zorich_core::sampling::substream;
use zorich_core::symbolic::{endpoint_param, GrowthRule, Itinerary, DEFAULT_DEPTH};
use zorich_core::{CellIndex, MapConfig, Vec3};

/// Criteria that are expected to fail at these parameters.
const KNOWN_RED: &[u32] = &[11];

const SEED: u64 = 20_240_611;

fn cfg() -> &'static MapConfig {
    static CFG: OnceLock<MapConfig> = OnceLock::new();
    CFG.get_or_init(|| derive_constants(0.5, 512).expect("constants derive"))
}

struct Verdict_ {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict_ {
    Verdict_ { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn c(r1: i64, r2: i64) -> CellIndex {
    CellIndex::new(r1, r2)
}

fn geometry_roundtrip() -> Verdict_ {
    let start = Instant::now();
    let mut rng = substream(SEED, 1);
    let (mut worst, mut norm_err, mut below) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..100_000 {
        let p = SquarePoint::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)).unwrap();
        let u = square_to_hemisphere(p).unwrap();
        norm_err = norm_err.max((u.to_vec3().norm() - 1.0).abs());
        below += usize::from(u.u3 < 0.0);
        let q = hemisphere_to_square(u).unwrap();
        worst = worst.max((q.p1 - p.p1).abs().max((q.p2 - p.p2).abs()));
    }
    let t = start.elapsed();
    verdict(
        worst <= 1e-12 && norm_err <= 1e-12 && below == 0 && within(t, 1.0),
        format!("max roundtrip error {worst:.1e}, max | |h|-1 | {norm_err:.1e}, below equator {below}, {:.2}s", t.as_secs_f64()),
    )
}

fn map_identities() -> Verdict_ {
    let start = Instant::now();
    let cfg = cfg();
    let mut rng = substream(SEED, 2);
    let (mut modulus, mut period, mut glue) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let x = Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-5.0..5.0));
        let y = eval_F(x, cfg).unwrap();
        modulus = modulus.max((y.norm() / x.x3.exp() - 1.0).abs());
    }
    for _ in 0..10_000 {
        let x = Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-5.0..5.0));
        let (k, l) = (rng.gen_range(-5..=5) as f64, rng.gen_range(-5..=5) as f64);
        let a = eval_F(x, cfg).unwrap();
        let b = eval_F(Vec3::new(x.x1 + 4.0 * k, x.x2 + 4.0 * l, x.x3), cfg).unwrap();
        period = period.max(a.dist(b) / x.x3.exp());
    }
    for _ in 0..10_000 {
        // a point on a face x1 = 2j + 1 or x2 = 2j + 1, approached from both sides
        let face = 2.0 * rng.gen_range(-10..10) as f64 + 1.0;
        let along = rng.gen_range(-20.0..20.0);
        let x3 = rng.gen_range(-5.0..5.0);
        let h = 1e-13;
        let (a, b) = if rng.gen_bool(0.5) {
            (Vec3::new(face - h, along, x3), Vec3::new(face + h, along, x3))
        } else {
            (Vec3::new(along, face - h, x3), Vec3::new(along, face + h, x3))
        };
        glue = glue.max(eval_F(a, cfg).unwrap().dist(eval_F(b, cfg).unwrap()) / x3.exp());
    }
    let t = start.elapsed();
    verdict(
        modulus <= 1e-12 && period <= 1e-10 && glue <= 1e-10 && within(t, 5.0),
        format!(
            "| |F|/e^x3 - 1 | {modulus:.1e}, period defect {period:.1e}, face jump {glue:.1e} (relative to e^x3), {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn constants() -> Verdict_ {
    let cfg = cfg();
    let need = cfg.low_level.exp().max(0.0) * 0.0 + cfg.high_level.exp() - cfg.low_level;
    let env = envelope_check(cfg, 10_000, SEED);
    verdict(
        cfg.shift >= need && env.low_violations == 0 && env.high_violations == 0,
        format!(
            "a = {:.3} >= e^M - m = {:.4}; max |DF| below m {:.4} <= {}, min l(DF) above M {:.4} >= {}; violations {}+{} of 2x10^4",
            cfg.shift,
            need,
            env.max_norm_low,
            cfg.alpha,
            env.min_stretch_high,
            1.0 / cfg.alpha,
            env.low_violations,
            env.high_violations
        ),
    )
}

fn inverse_branch() -> Verdict_ {
    let cfg = cfg();
    let mut rng = substream(SEED, 4);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let r1: i64 = rng.gen_range(-30..=30);
        let r = c(r1, rng.gen_range(-15..=15) * 2 + (r1 & 1));
        let y = Vec3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), cfg.high_level + rng.gen_range(0.0..50.0));
        let x = lambda(y, r, cfg).unwrap();
        worst = worst.max(eval_f(x, cfg).unwrap().dist(y) / y.norm());
    }
    let contraction = branch_contraction(cfg, 10_000, SEED);
    let mut axis = 0.0f64;
    for r in [c(0, 0), c(2, 0), c(-3, 5), c(7, 1)] {
        for y in [cfg.high_level, 3.0, 10.0, 1e3, 1e8] {
            let x = lambda(Vec3::new(0.0, 0.0, y), r, cfg).unwrap();
            let want = Vec3::new(2.0 * r.r1 as f64, 2.0 * r.r2 as f64, (y + cfg.shift).ln());
            axis = axis.max(x.dist(want));
        }
    }
    verdict(
        worst <= 1e-10 && contraction <= cfg.alpha && axis <= 1e-12,
        format!("max |f(L(y)) - y|/|y| {worst:.1e}, sampled contraction {contraction:.4} <= {}, axis error {axis:.1e}", cfg.alpha),
    )
}

fn fixed_point() -> Verdict_ {
    let cfg = cfg();
    let start = Instant::now();
    let xi = fixed_point_xi(cfg, 1e-15).unwrap();
    let mut rng = substream(SEED, 5);
    let mut spread = 0.0f64;
    for _ in 0..20 {
        let x0 = Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..cfg.high_level));
        spread = spread.max(fixed_point_from(x0, cfg, 1e-15).unwrap().point.dist(xi.point));
    }
    let t = start.elapsed();
    verdict(
        xi.residual < 1e-12 && xi.point.x3 <= cfg.low_level && spread <= 1e-10 && within(t, 1.0),
        format!(
            "xi3 = {:.12} <= m, residual {:.1e}, spread over 20 starts {spread:.1e}, {:.3}s",
            xi.point.x3,
            xi.residual,
            t.as_secs_f64()
        ),
    )
}

/// The five traced hairs with their parameter ranges.
fn traced_hairs() -> Vec<(&'static str, Itinerary, f64, f64)> {
    let tower = |base, scale| Itinerary::generator(GrowthRule::Tower { base, scale }).unwrap();
    let mut out = vec![
        ("zero", Itinerary::zero(), 0.5, 4.0),
        ("period 2", Itinerary::periodic(vec![c(0, 0), c(2, 0)]).unwrap(), 0.5, 4.0),
        ("period 3", Itinerary::periodic(vec![c(2, 0), c(0, 2), c(-2, 0)]).unwrap(), 0.5, 4.0),
    ];
    for (name, s) in [("tower 1/0.5", tower(1.0, 0.5)), ("tower 0.7/3", tower(0.7, 3.0))] {
        let ts = endpoint_param(&s, DEFAULT_DEPTH).t_s;
        out.push((name, s, ts + 0.25, ts + 3.0));
    }
    out
}

fn hair_convergence() -> Verdict_ {
    let cfg = cfg();
    let start = Instant::now();
    let c9 = HairConstants::new(cfg).c9;
    let (mut worst_rate, mut worst_bound, mut worst_strip, mut max_depth) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    let (mut rated, mut worst_step) = (0usize, 0.0f64);
    for (_, s, lo, hi) in traced_hairs() {
        let hair = Hair::new(s.clone(), cfg).unwrap();
        let s0 = s.cell_at(0).unwrap();
        for t in zorich_core::hairs::param_grid(lo, hi, 50) {
            if let Some(r) = hair.depth_fit_rate(t, 30).unwrap() {
                worst_rate = worst_rate.max(r);
                rated += 1;
            }
            if let Some(r) = hair.depth_rate(t, 30).unwrap() {
                worst_step = worst_step.max(r);
            }
            let p = hair.point(t, 1e-8).unwrap();
            worst_bound = worst_bound.max(p.error_bound);
            max_depth = max_depth.max(p.depth);
            if t >= hair.tau(1) {
                worst_strip = worst_strip.max(p.point.dist(Vec3::new(2.0 * s0.r1 as f64, 2.0 * s0.r2 as f64, t)));
            }
        }
    }
    let t = start.elapsed();
    verdict(
        worst_rate <= cfg.alpha + 0.05 && worst_bound < 1e-8 && max_depth <= DEPTH_CAP && worst_strip <= c9 && within(t, 30.0),
        format!(
            "max fitted depth rate {worst_rate:.3} over {rated} rated samples (worst single step {worst_step:.3}), max error bound {worst_bound:.1e} at depth <= {max_depth}, strip distance {worst_strip:.3} <= c9 = {c9:.2}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn conjugacy() -> Verdict_ {
    let cfg = cfg();
    let (mut checked, mut bad, mut worst_ratio) = (0usize, 0usize, 0.0f64);
    for (_, s, lo, hi) in traced_hairs() {
        for t in zorich_core::hairs::param_grid(lo, hi, 8) {
            for k in 1..=5 {
                let r = conjugacy_residual(&s, t, k, 1e-10, cfg).unwrap();
                checked += 1;
                bad += usize::from(!(r.residual <= r.bound));
                worst_ratio = worst_ratio.max(r.residual / r.bound);
            }
        }
    }
    verdict(bad == 0, format!("{checked} residuals, {bad} above their bounds, worst residual/bound {worst_ratio:.2e}"))
}

fn planar_oracle() -> Verdict_ {
    let cfg = cfg();
    let planar = [
        Itinerary::zero(),
        Itinerary::constant(c(2, 0)).unwrap(),
        Itinerary::periodic(vec![c(0, 0), c(2, 0)]).unwrap(),
        Itinerary::periodic(vec![c(-2, 0), c(4, 0), c(0, 0)]).unwrap(),
    ];
    let mut worst = 0.0f64;
    for s in &planar {
        let hair = Hair::new(s.clone(), cfg).unwrap();
        for t in zorich_core::hairs::param_grid(1.0, 4.0, 61) {
            let p = hair.point(t, 1e-11).unwrap().point;
            let (x1, x3) = planar_hair_point(s, t, DEPTH_CAP, cfg).unwrap();
            worst = worst.max(p.dist(Vec3::new(x1, 0.0, x3)));
        }
    }
    let geometry = SliceGeometry { plane: Plane { axis: 1, value: 0.0 }, u: (-3.0, 3.0), v: (-1.0, 5.0), width: 512, height: 512 };
    let main = render_slice(geometry, 60, cfg);
    let oracle = render_planar(geometry, 60, cfg).unwrap();
    let agreement = main.agreement(&oracle);
    verdict(
        worst <= 1e-8 && agreement >= 0.99,
        format!("max hair distance to the planar oracle {worst:.1e}, slice agreement {:.4} of 512^2", agreement),
    )
}

fn mcmullen() -> Verdict_ {
    let cfg = cfg();
    let start = Instant::now();
    let rep = nested_dimension_bound(cfg, 3, 100_000, SEED).unwrap();
    let lab = McMullen::new(cfg, q_probe(1000)).unwrap();
    let dens: Vec<_> = (0..=4).map(|j| lab.density(rep.base_level + j, 100_000, SEED + j as u64)).collect();
    let delta = rep.base_density.value;
    let se = rep.base_density.relative_se();
    let eta = eta(cfg);
    let dens_ok = dens.iter().all(|d| d.value > 0.0 && d.relative_se() < 0.1);
    let floors_ok = rep.levels.iter().all(|l| l.density.value >= eta.powi(l.k as i32 + 1) * delta * (1.0 - 3.0 * se));
    let env_ok = rep.levels.iter().filter(|l| l.k <= 3).all(|l| l.within_envelope());
    let bounds = rep.bounds();
    let increasing = bounds.windows(2).all(|w| w[1] > w[0]);
    let t = start.elapsed();
    let shown: Vec<String> = dens.iter().map(|d| format!("{:.4}", d.value)).collect();
    let bshown: Vec<String> = bounds.iter().map(|b| format!("{b:.4}")).collect();
    verdict(
        dens_ok && floors_ok && env_ok && increasing && within(t, 300.0),
        format!(
            "delta_hat at levels {}..{}: [{}], max rel. SE {:.3}; Delta_k floors {}, envelopes {}; bounds [{}], {:.1}s",
            rep.base_level,
            rep.base_level + 4,
            shown.join(", "),
            dens.iter().map(|d| d.relative_se()).fold(0.0, f64::max),
            if floors_ok { "hold" } else { "fail" },
            if env_ok { "hold" } else { "fail" },
            bshown.join(", "),
            t.as_secs_f64()
        ),
    )
}

fn box_counts() -> Verdict_ {
    let cfg = cfg();
    let cal_scales = dyadic_scales(2, 6);
    let mut cal = Vec::new();
    for set in Calibration::ALL {
        let n = calibration_count(set, &cal_scales).unwrap();
        cal.push((set.dimension(), n.slope));
    }
    let scales = dyadic_scales(3, 7);
    let julia = julia_count(&julia_window(), &scales, 40, cfg).unwrap();
    let (tube, points) = tube_count(&julia_window(), &scales, cfg).unwrap();
    let cal_ok = cal.iter().all(|(d, s)| (d - s).abs() <= 0.1);
    let shown: Vec<String> = cal.iter().map(|(d, s)| format!("{d}->{s:.3}")).collect();
    verdict(
        cal_ok && julia.slope > 2.5 && tube.slope < 1.8,
        format!(
            "calibration [{}]; Julia window {:.3} (> 2.5, {} flagged); tube cloud of {points} points {:.3} (< 1.8)",
            shown.join(", "),
            julia.slope,
            julia.flagged.iter().sum::<u64>(),
            tube.slope
        ),
    )
}

fn karpinska() -> Verdict_ {
    let cfg = cfg();
    let start = Instant::now();
    let stats: Vec<_> = (1..=4).map(|k| karpinska_cover_stats(&Itinerary::zero(), 1.0, k, 1.2, cfg).unwrap()).collect();
    let t = start.elapsed();
    let decreasing = stats.windows(2).all(|w| w[1].log_ratio < w[0].log_ratio);
    let below = stats.last().unwrap().log_ratio < 0.0;
    let shown: Vec<String> = stats.iter().map(|s| format!("{:.3e}", s.ratio())).collect();
    verdict(
        decreasing && below && within(t, 1.0),
        format!("ratio for k = 1..4: [{}]; decreasing {decreasing}, below 1 {below}, {:.4}s", shown.join(", "), t.as_secs_f64()),
    )
}

fn accessibility() -> Verdict_ {
    let cfg = cfg();
    let targets = [
        Itinerary::zero(),
        Itinerary::periodic(vec![c(0, 0), c(2, 0)]).unwrap(),
        Itinerary::periodic(vec![c(2, 0), c(0, 2), c(-2, 0)]).unwrap(),
    ];
    let (mut ok, mut details) = (true, Vec::new());
    for s in &targets {
        let p = access_path(s, 12, cfg).unwrap();
        let mut non_basin = 0usize;
        let mut dist_ok = p.segments.len() == 12;
        for seg in &p.segments {
            // endpoints of each piece are where gamma_k meets its neighbours; test the interior
            for q in &seg.points[1..seg.points.len() - 1] {
                non_basin += usize::from(!matches!(orbit_verdict(*q, 100, cfg), Verdict::Basin { .. }));
            }
            dist_ok &= p.dist_to_target(seg.k).unwrap() <= 4.0 * cfg.alpha.powi(seg.k as i32);
        }
        let decay = p.decay_rate().unwrap_or(f64::INFINITY);
        ok &= non_basin == 0 && dist_ok && decay <= cfg.alpha + 0.05;
        details.push(format!("decay {decay:.3}, non-basin {non_basin}, dist {}", if dist_ok { "ok" } else { "fail" }));
    }
    verdict(ok, details.join("; "))
}

fn family7() -> Verdict_ {
    let cfg = cfg();
    let params = AnnulusParams::default();
    let (fam, _) = build_annulus_family(params, cfg).unwrap();
    let (s, t) = (params.s, params.t);
    let a_direct = s * (1.0 - t * t).sqrt() / t - (s / t).ln();
    let consts_ok = (fam.w - (-1.50408)).abs() <= 1e-5
        && (fam.a - a_direct).abs() <= 1e-5
        && (fam.vertical_value - 0.22222).abs() <= 1e-5
        && (fam.radial_value - 0.22246).abs() <= 1e-5;
    let dynamics = circle_dynamics(&fam, 5, 12, 10_000).unwrap();
    let m = CircleMap::Oscillating;
    let mult_ok = (m.derivative(1.0 / 6.0) - (1.0 - std::f64::consts::PI / 6.0)).abs() <= 1e-12
        && (m.derivative(0.2) - (1.0 + std::f64::consts::PI / 5.0)).abs() <= 1e-12;
    let (attract, saddle) = perturbations(&fam);
    let tube = local_attraction_check(&fam, 0.02, 10_000, SEED).unwrap();
    let dyn_ok = attract.final_dist_to_fixed_point < 1e-8
        && saddle.final_dist_to_circle < 1e-8
        && (saddle.final_angle - 0.2).abs() > 1e-3
        && tube.max_ratio <= 0.55;
    verdict(
        consts_ok && dynamics.invariance_error <= 1e-10 && mult_ok && dyn_ok,
        format!(
            "w {:.6}, a {:.6} (listed 1.60093 is {:.1e} off), s/t {:.6}, radial value {:.6}; invariance {:.1e}; u_6 ends {:.1e} away, u_5 drifts to angle {:.4}; tube ratio {:.3}",
            fam.w,
            fam.a,
            (fam.a - 1.60093).abs(),
            fam.vertical_value,
            fam.radial_value,
            dynamics.invariance_error,
            attract.final_dist_to_fixed_point,
            saddle.final_angle,
            tube.max_ratio
        ),
    )
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.insert(rel, std::fs::read(&entry).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn determinism() -> Verdict_ {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (i, dir) in dirs.iter().enumerate() {
        // worker counts differ between the two runs
        let workers = if i == 0 { 1 } else { 3 };
        let pool = pool(Some(workers)).unwrap();
        for exp in Experiment::ALL {
            let mut rc = RunConfig::new(exp);
            rc.seed = SEED;
            rc.out = dir.path().join(exp.name());
            if exp == Experiment::Boxdim {
                rc.params.set = Some("julia".into());
            }
            pool.install(|| run(&rc)).unwrap();
        }
    }
    let (a, b) = (read_dir(dirs[0].path()), read_dir(dirs[1].path()));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    verdict(
        a.len() == b.len() && differing.is_empty() && !a.is_empty(),
        format!("{} artifacts from {} experiments, {} differ between 1 and 3 workers", a.len(), Experiment::ALL.len(), differing.len()),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict_); 14] = [
        (1, "geometry roundtrip", geometry_roundtrip),
        (2, "map identities", map_identities),
        (3, "constants", constants),
        (4, "inverse branch", inverse_branch),
        (5, "fixed point", fixed_point),
        (6, "hair convergence", hair_convergence),
        (7, "conjugacy", conjugacy),
        (8, "planar oracle", planar_oracle),
        (9, "nested boxes", mcmullen),
        (10, "box counting", box_counts),
        (11, "covering ratio", karpinska),
        (12, "accessibility", accessibility),
        (13, "annulus family", family7),
        (14, "determinism", determinism),
    ];
    let filter: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    cfg();
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let known = KNOWN_RED.contains(&id);
        let tag = match (v.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} {id:>2} {name}: {} [{:.2}s]", v.detail, start.elapsed().as_secs_f64());
        if !v.pass && !known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
