//! One function per subcommand: read the job config, compute, build a report.

use ergodic_core::computable::{
    build_specker_system, halting_sum, rate_from_limit_norm, recover_halting_bits, rounding_oracle,
    specker_norm, specker_norm_by_orbits, DEFAULT_PROBE_LIMIT, DEFAULT_TRACE_CAP,
};
use ergodic_core::mean_bounds::{find_stable_n, max_deviation, met_bound, verify_witness, BoundMode, MeanBoundParams};
use ergodic_core::pointwise::{
    chebyshev_measure, find_pointwise_stable_n, maximal_set_measure, maximal_theorem_check, pet_bound,
    PointwiseParams,
};
use ergodic_core::scalar::{biguint_to_rational, decimal_digits, ratio, scalar_text};
use ergodic_core::upcrossings::{
    bishop_check, compare_bounds, count_fluctuations, crossing_profile, ivanov_check, ComparisonInput,
    DEFAULT_KACHUROVSKII_CONSTANT,
};
use ergodic_core::{Error, Rational, Result, Scalar};
use serde_json::{json, Value};

use crate::config::{positive, require, scalar_value, ExperimentConfig, ScalarKind};
use crate::report::{self, Report, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CommandName {
    StabilitySearch,
    MeanBound,
    PointwiseSearch,
    PetBound,
    MaximalCheck,
    Upcrossings,
    CompareBounds,
    RateFromNorm,
    Specker,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::StabilitySearch => "stability-search",
            CommandName::MeanBound => "mean-bound",
            CommandName::PointwiseSearch => "pointwise-search",
            CommandName::PetBound => "pet-bound",
            CommandName::MaximalCheck => "maximal-check",
            CommandName::Upcrossings => "upcrossings",
            CommandName::CompareBounds => "compare-bounds",
            CommandName::RateFromNorm => "rate-from-norm",
            CommandName::Specker => "specker",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub verify: bool,
    pub full: bool,
}

pub fn run(command: CommandName, cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    let mut report = match command {
        CommandName::StabilitySearch => stability_search(cfg, opts)?,
        CommandName::MeanBound => mean_bound(cfg, opts)?,
        CommandName::PointwiseSearch => match cfg.scalar_or(ScalarKind::Rational) {
            ScalarKind::Rational => pointwise_search::<Rational>(cfg, opts)?,
            ScalarKind::F64 => pointwise_search::<f64>(cfg, opts)?,
        },
        CommandName::PetBound => pet(cfg, opts)?,
        CommandName::MaximalCheck => match cfg.scalar_or(ScalarKind::Rational) {
            ScalarKind::Rational => maximal_check::<Rational>(cfg, opts)?,
            ScalarKind::F64 => maximal_check::<f64>(cfg, opts)?,
        },
        CommandName::Upcrossings => match cfg.scalar_or(ScalarKind::Rational) {
            ScalarKind::Rational => upcrossings::<Rational>(cfg, opts)?,
            ScalarKind::F64 => upcrossings::<f64>(cfg, opts)?,
        },
        CommandName::CompareBounds => compare(cfg, opts)?,
        CommandName::RateFromNorm => rate_from_norm(cfg, opts)?,
        CommandName::Specker => specker(cfg, opts)?,
    };
    if let Value::Object(map) = &mut report.body {
        map.insert("command".into(), json!(command.as_str()));
    }
    Ok(report)
}

fn system_json(cfg: &ExperimentConfig) -> Value {
    cfg.system
        .as_ref()
        .map_or(Value::Null, |s| serde_json::to_value(s).expect("recipe serializes"))
}

fn reject_scalar(cfg: &ExperimentConfig, name: &str) -> Result<()> {
    if cfg.scalar == Some(ScalarKind::Rational) {
        return Err(Error::InvalidArgument(format!("{name} needs square roots and runs in f64 only")));
    }
    Ok(())
}

fn stability_search(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    reject_scalar(cfg, "stability-search")?;
    let system = cfg.system::<f64>()?;
    let f = cfg.element(&system)?;
    let eps: f64 = scalar_value(cfg.eps.as_ref(), "eps")?;
    let k = cfg.growth_fn()?;
    let horizon = cfg.horizon.unwrap_or(10_000);
    let search = find_stable_n(&system.operator, &f, eps, &k, horizon)?;
    let w = &search.witness;
    let body = json!({
        "system": system_json(cfg),
        "eps": eps,
        "K": k.describe(),
        "horizon": horizon,
        "found": search.found,
        "criterion": "max over m in [n, K(n)] of |A_m f - A_n f| <= eps",
        "witness_n": w.n,
        "interval_end": w.interval_end,
        "max_deviation": w.max_deviation,
        "argmax_m": w.argmax_m,
        "candidates_checked": search.candidates_checked,
        "cache_limited": search.cache_limited,
    });
    let mut table = Table::new(&["found", "n", "interval_end", "max_deviation", "argmax_m"]);
    table.push(vec![
        search.found.to_string(),
        w.n.to_string(),
        w.interval_end.to_string(),
        w.max_deviation.to_string(),
        w.argmax_m.to_string(),
    ]);
    let mut out = Report::new(body).with_table(table).exhausted_if(!search.found);
    if opts.verify {
        let ok = if search.found {
            verify_witness(&system.operator, &f, eps, &k, w)?
        } else {
            let (dev, _) = max_deviation(&system.operator, &f, w.n, w.interval_end)?;
            (dev - w.max_deviation).abs() <= 1e-12 * (1.0 + dev) && dev > eps
        };
        out = out.verified(ok, json!(["max deviation recomputed over [n, K(n)]"]));
    }
    Ok(out)
}

fn mode(cfg: &ExperimentConfig) -> BoundMode {
    cfg.mode.unwrap_or(BoundMode::Isometry)
}

/// `‖f‖²` from `norm_f`, or from the system's `f`.
fn norm_sq(cfg: &ExperimentConfig) -> Result<Rational> {
    if let Some(n) = &cfg.norm_f {
        let n = n.to_rational()?;
        if n < Rational::from_integer(0.into()) {
            return Err(Error::InvalidArgument("`norm_f` must be nonnegative".into()));
        }
        return Ok(&n * &n);
    }
    if cfg.system.is_some() && cfg.f.is_some() {
        let system = cfg.system::<Rational>()?;
        return Ok(cfg.element(&system)?.norm_sq());
    }
    Err(Error::InvalidArgument("give `norm_f`, or `system` and `f`".into()))
}

/// `ρ` is the least integer with `ρ² ≥ x`.
fn is_ceil_sqrt(rho: &ergodic_core::BigUint, x: &Rational) -> bool {
    let r = biguint_to_rational(rho);
    let below = &r - Rational::from_integer(1.into());
    &r * &r >= *x && (below < Rational::from_integer(0.into()) || &below * &below < *x)
}

fn mean_bound(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    let norm_sq = norm_sq(cfg)?;
    let eps = positive(cfg.eps.as_ref(), "eps")?;
    let k = cfg.growth_fn()?;
    let params = MeanBoundParams::from_norm_sq(norm_sq.clone(), eps.clone(), mode(cfg))?;
    let bound = met_bound(&params, &k, &cfg.budget()?);
    let step_formula = match params.mode {
        BoundMode::Isometry => "Khat(i) = i + 2^13 rho^4 K((i+1) K(1) rho^2)",
        BoundMode::Nonexpansive => "Kbar(i) = i + 2^13 rho^4 K((i+1) K(2 i rho) rho^2)",
    };
    let body = json!({
        "norm_sq": report::rational(&norm_sq),
        "eps": report::rational(&eps),
        "mode": params.mode,
        "K": k.describe(),
        "rho": report::integer(&params.rho, opts.full),
        "e": report::integer(&params.e, opts.full),
        "formulas": {
            "rho": "rho = ceil(|f| / eps)",
            "e": "e = 2^9 rho^2",
            "step": step_formula,
            "bound": "some n <= step^e(1) is eps-stable on [n, K(n)]",
        },
        "step": bound.step,
        "bound": report::iteration(&bound.run, opts.full),
        "bound_digits": bound.run.is_complete().then(|| decimal_digits(&bound.run.value)),
    });
    let mut out = Report::new(body).exhausted_if(!bound.run.is_complete());
    if opts.verify {
        let ratio_sq = &norm_sq / (&eps * &eps);
        let rho_ok = is_ceil_sqrt(&params.rho, &ratio_sq);
        let e_ok = params.e == ergodic_core::BigUint::from(512u32) * &params.rho * &params.rho;
        out = out.verified(rho_ok && e_ok, json!({ "rho_is_ceiling": rho_ok, "e_is_2^9_rho^2": e_ok }));
    }
    Ok(out)
}

fn pointwise_search<S: Scalar>(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    let system = cfg.system::<S>()?;
    let f = cfg.element(&system)?;
    let l1: S = S::from_rational(&positive(cfg.lambda1.as_ref(), "lambda1")?);
    let l2: S = S::from_rational(&positive(cfg.lambda2.as_ref(), "lambda2")?);
    let k = cfg.growth_fn()?;
    let horizon = cfg.horizon.unwrap_or(1_000);
    let search = find_pointwise_stable_n(&system.operator, &f, &l1, &l2, &k, horizon)?;
    let r = &search.report;
    let body = json!({
        "system": system_json(cfg),
        "lambda1": report::scalar(&l1),
        "lambda2": report::scalar(&l2),
        "K": k.describe(),
        "horizon": horizon,
        "found": search.found,
        "criterion": "measure of {x : max over m in [n, K(n)] of |A_m f(x) - A_n f(x)| > lambda1} <= lambda2",
        "witness": {
            "n": r.n,
            "window_end": r.k,
            "exceptional_measure": report::scalar(&r.exceptional_measure),
            "exceptional_atoms": r.exceptional_atoms,
        },
        "candidates_checked": search.candidates_checked,
    });
    let mut out = Report::new(body).exhausted_if(!search.found);
    if opts.verify {
        let again = r.recompute(&system.operator, &f)?;
        out = out.verified(again == *r, json!(["exceptional set recomputed from scratch"]));
    }
    Ok(out)
}

fn pet(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    let norm_sq = norm_sq(cfg)?;
    let l1 = positive(cfg.lambda1.as_ref(), "lambda1")?;
    let l2 = positive(cfg.lambda2.as_ref(), "lambda2")?;
    let k = cfg.growth_fn()?;
    let params = PointwiseParams::from_norm_sq(norm_sq.clone(), l1.clone(), l2.clone())?;
    let bound = pet_bound(&params, &k, &cfg.budget()?);
    let body = json!({
        "norm_sq": report::rational(&norm_sq),
        "lambda1": report::rational(&l1),
        "lambda2": report::rational(&l2),
        "K": k.describe(),
        "rho": report::integer(&params.rho, opts.full),
        "e": report::integer(&params.e, opts.full),
        "formulas": {
            "rho": "rho = ceil(|f|_2 / (lambda1 sqrt(lambda2)))",
            "e": "e = ceil(2^7 |f|_2^2 / (lambda1 sqrt(lambda2)))",
            "step": "Khat(i) = i + 2^34 rho^6 K(2^12 K(1)^3 i^2 rho^4)",
            "bound": "some n <= step^e(1) has an exceptional set of measure <= lambda2",
        },
        "step": bound.step,
        "bound": report::iteration(&bound.run, opts.full),
        "bound_digits": bound.run.is_complete().then(|| decimal_digits(&bound.run.value)),
    });
    let mut out = Report::new(body).exhausted_if(!bound.run.is_complete());
    if opts.verify {
        let denom = &l1 * &l1 * &l2;
        let rho_ok = is_ceil_sqrt(&params.rho, &(&norm_sq / &denom));
        let scaled = Rational::from_integer(128.into()) * &norm_sq;
        let e_ok = is_ceil_sqrt(&params.e, &(&scaled * &scaled / &denom));
        out = out.verified(rho_ok && e_ok, json!({ "rho_is_ceiling": rho_ok, "e_is_ceiling": e_ok }));
    }
    Ok(out)
}

fn maximal_check<S: Scalar>(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    let system = cfg.system::<S>()?;
    let f = cfg.element(&system)?;
    let n = *require(cfg.n.as_ref(), "n")?;
    let check = maximal_theorem_check(&system.operator, &f, n)?;
    let mut body = json!({
        "system": system_json(cfg),
        "n": n,
        "maximal_theorem": {
            "statement": "A = {x : max over i <= n of sum_{j<i} T^j f(x) > 0} has integral of f over A >= 0",
            "set": check.set,
            "measure": report::scalar(&check.measure),
            "integral": report::scalar(&check.integral),
            "holds": check.holds,
        },
    });
    let mut holds = check.holds;
    if let Some(lambda) = &cfg.lambda {
        let lambda: S = lambda.to_scalar()?;
        let cor = maximal_set_measure(&system.operator, &f, n, &lambda)?;
        let cheb = chebyshev_measure(&f, &lambda)?;
        holds &= cor.holds && cheb.holds;
        body["lambda"] = report::scalar(&lambda);
        body["maximal_measure"] = json!({
            "statement": "measure of {x : max over 1 <= i <= n of |A_i f(x)| > lambda} <= |f|_1 / lambda",
            "measure": report::scalar(&cor.measure),
            "bound": report::scalar(&cor.bound),
            "holds": cor.holds,
        });
        body["chebyshev"] = json!({
            "statement": "measure of {x : |f(x)| >= lambda} <= |f|_2^2 / lambda^2",
            "measure": report::scalar(&cheb.measure),
            "bound": report::scalar(&cheb.bound),
            "holds": cheb.holds,
        });
    }
    body["holds"] = json!(holds);
    let mut out = Report::new(body);
    if opts.verify {
        let again = maximal_theorem_check(&system.operator, &f, n)?;
        out = out.verified(again == check && holds, json!(["maximal set recomputed", "all inequalities hold"]));
    }
    Ok(out)
}

fn upcrossings<S: Scalar>(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    let system = cfg.system::<S>()?;
    let f = cfg.element(&system)?;
    let alpha: S = scalar_value(cfg.alpha.as_ref(), "alpha")?;
    let beta: S = scalar_value(cfg.beta.as_ref(), "beta")?;
    if !(alpha < beta) {
        return Err(Error::InvalidArgument("need alpha < beta".into()));
    }
    let horizon = cfg.horizon.unwrap_or(256);
    let op = &system.operator;
    let profile = crossing_profile(op, &f, &alpha, &beta, horizon)?;
    let bishop = bishop_check(op, &f, &alpha, &beta, horizon)?;
    let mut body = json!({
        "system": system_json(cfg),
        "alpha": report::scalar(&alpha),
        "beta": report::scalar(&beta),
        "horizon": horizon,
        "mean_upcrossings": report::scalar(&profile.mean_upcrossings()),
        "max_upcrossings": profile.up.iter().max(),
        "max_downcrossings": profile.down.iter().max(),
        "bishop": {
            "statement": "integral of upcrossing count <= integral of (f - alpha)^+ / (beta - alpha)",
            "lhs": report::scalar(&bishop.lhs),
            "rhs": report::scalar(&bishop.rhs),
            "holds": bishop.holds,
        },
    });
    let mut holds = bishop.holds;
    if let Some(k) = cfg.downcrossings {
        let ivanov = ivanov_check(op, &f, &alpha, &beta, k, horizon)?;
        holds &= ivanov.holds;
        body["ivanov"] = json!({
            "statement": "measure of {x : at least k downcrossings} <= (alpha / beta)^k, for f >= 0",
            "k": k,
            "measure": report::scalar(&ivanov.measure),
            "bound": report::scalar(&ivanov.bound),
            "holds": ivanov.holds,
        });
    }
    if let Some(eps) = &cfg.eps {
        let eps: S = eps.to_scalar()?;
        let flucts = count_fluctuations(op, &f, &eps, horizon)?;
        body["fluctuations"] = json!({
            "eps": report::scalar(&eps),
            "count": flucts.count,
            "pairs": flucts.pairs,
        });
    }
    body["holds"] = json!(holds);
    let mut table = Table::new(&["atom", "weight", "up", "down"]);
    for (x, ((w, up), down)) in profile.weights.iter().zip(&profile.up).zip(&profile.down).enumerate() {
        table.push(vec![x.to_string(), scalar_text(w), up.to_string(), down.to_string()]);
    }
    let mut out = Report::new(body).with_table(table);
    if opts.verify {
        let again = crossing_profile(op, &f, &alpha, &beta, horizon)?;
        out = out.verified(again == profile && holds, json!(["profile recomputed", "inequalities hold"]));
    }
    Ok(out)
}

fn compare(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    let norm_sq = norm_sq(cfg)?;
    let norm_inf = match &cfg.norm_inf {
        Some(v) => v.to_rational()?,
        None if cfg.system.is_some() && cfg.f.is_some() => {
            let system = cfg.system::<Rational>()?;
            cfg.element(&system)?.norm_inf()
        }
        None => return Err(Error::InvalidArgument("missing parameter `norm_inf`".into())),
    };
    let input = ComparisonInput {
        norm_sq: norm_sq.clone(),
        norm_inf: norm_inf.clone(),
        lambda1: positive(cfg.lambda1.as_ref(), "lambda1")?,
        lambda2: positive(cfg.lambda2.as_ref(), "lambda2")?,
        eps: cfg.eps.as_ref().map(|e| e.to_rational()).transpose()?,
        kachurovskii_constant: cfg.kachurovskii_constant.unwrap_or(DEFAULT_KACHUROVSKII_CONSTANT),
        mode: mode(cfg),
    };
    let k = cfg.growth_fn()?;
    let rows = compare_bounds(&input, &k, &cfg.budget()?)?;
    let mut table = Table::new(&["method", "iterations", "step", "bound_digits", "bound"]);
    let mut json_rows = Vec::new();
    for row in &rows {
        let bound = row.bound.as_ref().map(|b| report::integer(b, opts.full));
        json_rows.push(json!({
            "method": row.method,
            "iterations": report::integer(&row.iterations, opts.full),
            "step": row.step,
            "bound_digits": row.bound_digits,
            "bound": bound,
        }));
        table.push(vec![
            row.method.to_string(),
            row.iterations.to_string(),
            row.step.clone(),
            row.bound_digits.map_or(String::new(), |d| d.to_string()),
            row.bound.as_ref().map_or(String::new(), |b| {
                let text = b.to_string();
                if opts.full || text.len() <= report::LEADING_DIGITS {
                    text
                } else {
                    format!("{}...", &text[..report::LEADING_DIGITS])
                }
            }),
        ]);
    }
    let exhausted = rows.iter().any(|r| r.bound.is_none());
    let body = json!({
        "norm_sq": report::rational(&norm_sq),
        "norm_inf": report::rational(&norm_inf),
        "lambda1": report::rational(&input.lambda1),
        "lambda2": report::rational(&input.lambda2),
        "eps": input.eps.as_ref().map(report::rational),
        "K": k.describe(),
        "kachurovskii_constant": input.kachurovskii_constant,
        "kachurovskii_constant_note": "the fluctuation constant is not explicit; rows using it are indicative",
        "formulas": {
            "pointwise_projection": "Khat^e(1) with e = ceil(2^7 |f|_2^2 / (lambda1 sqrt(lambda2)))",
            "pointwise_upcrossing": "K^e(1) with e = ceil(16 |f|_inf^2 / (lambda1^2 lambda2))",
            "mean_projection": "Khat^e(1) or Kbar^e(1) with e = 2^9 ceil(|f| / eps)^2",
            "mean_fluctuation": "K^k(1) with k = ceil(C r^4 (1 + ln r)), r = |f|_inf / eps",
        },
        "rows": json_rows,
    });
    let mut out = Report::new(body).with_table(table).exhausted_if(exhausted);
    if opts.verify {
        let again = compare_bounds(&input, &k, &cfg.budget()?)?;
        out = out.verified(again == rows, json!(["rows recomputed"]));
    }
    Ok(out)
}

fn rate_from_norm(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    reject_scalar(cfg, "rate-from-norm")?;
    let system = cfg.system::<f64>()?;
    let f = cfg.element(&system)?;
    let norm_fstar: f64 = scalar_value(cfg.norm_fstar.as_ref(), "norm_fstar")?;
    let eps: f64 = scalar_value(cfg.eps.as_ref(), "eps")?;
    let trace_cap = cfg.trace_cap.unwrap_or(DEFAULT_TRACE_CAP);
    let probe_limit = cfg.probe_limit.unwrap_or(DEFAULT_PROBE_LIMIT);
    let cert = rate_from_limit_norm(&system.operator, &f, norm_fstar, eps, trace_cap, probe_limit)?;
    let mut body = serde_json::to_value(&cert).expect("certificate serializes");
    body["system"] = system_json(cfg);
    body["norm_fstar"] = json!(norm_fstar);
    body["formulas"] = json!({
        "a": "a = sqrt(|f|^2 - |f*|^2)",
        "stop": "first i with 2 sqrt(2 (a - a_i) |f|) < eps / 2",
        "m": "m = max(ceil(8 |u_i| / eps), 1)",
        "guarantee": "|A_m f - A_n f| <= eps for all n >= m",
    });
    let mut out = Report::new(body).with_table(Table::flatten(&serde_json::to_value(&cert).expect("serializes")));
    if opts.verify {
        let (dev, _) = max_deviation(&system.operator, &f, cert.m, cert.probe_end)?;
        let ok = dev <= eps + 1e-8 && (dev - cert.max_deviation).abs() <= 1e-12 * (1.0 + dev);
        out = out.verified(ok, json!(["deviation over [m, probe_end] recomputed"]));
    }
    Ok(out)
}

fn specker(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    let table = require(cfg.table.as_ref(), "table")?;
    let blocks = *require(cfg.blocks.as_ref(), "N")?;
    let system = build_specker_system(table, blocks)?;
    let norm = specker_norm(&system);
    let r = halting_sum(table, blocks);
    let bits = recover_halting_bits(rounding_oracle(r.clone()), table, blocks)?;
    let body = json!({
        "table": table,
        "N": blocks,
        "norm_sq": report::rational(&norm),
        "r": report::rational(&r),
        "bits": bits.iter().map(|&b| u8::from(b)).collect::<Vec<_>>(),
        "orders": system.orders,
        "atoms": system.space.atom_count(),
        "formulas": {
            "norm_sq": "|f*|^2 = sum over halting i of 2^-(i+3) + sum over other i of 2^-(i+2) + 2^-(N+1)",
            "r": "r = sum over halting i of 2^-(i+3) = 1/2 - |f*|^2",
        },
    });
    let mut csv = Table::new(&["machine", "halts_at", "bit"]);
    for (i, bit) in bits.iter().enumerate() {
        let at = table.halts_at(i).map_or(String::new(), |j| j.to_string());
        csv.push(vec![i.to_string(), at, u8::from(*bit).to_string()]);
    }
    let mut out = Report::new(body).with_table(csv);
    if opts.verify {
        let by_orbits = specker_norm_by_orbits(&system)?;
        let orbit_ok = by_orbits == norm;
        let deficit_ok = ratio(1, 2) - &norm == r;
        let bits_ok = bits == table.bits(blocks);
        out = out.verified(
            orbit_ok && deficit_ok && bits_ok,
            json!({ "orbit_average_matches": orbit_ok, "deficit_is_r": deficit_ok, "bits_match_table": bits_ok }),
        );
    }
    Ok(out)
}
