//! Subcommand implementations. Each command loads the effective config,
//! runs its computation, writes CSV/JSON outputs through the single
//! reporter, prints a human summary, and maps failures to exit codes.

use bergman_core::berezin::{decay_profile, fit_last_decade, DecayQuantity};
use bergman_core::compactness::{equivalence_suite, schur_bound_check, SchurParams, Verdict};
use bergman_core::geometry::BallPoint;
use bergman_core::operators::evaluate_expression;
use bergman_core::quadrature::{f_integral, j_integral};
use num_complex::Complex64;
use std::path::Path;

use crate::battery::run_battery;
use crate::config::ExperimentConfig;
use crate::output::Reporter;
use crate::Failure;

/// A human-readable `f64` that round-trips exactly (shortest form).
fn num(x: f64) -> String {
    format!("{x}")
}

/// `verify-lemmas`: run the invariant battery, print one line per check.
pub fn cmd_verify(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let checks = run_battery(cfg)?;
    let tolerances: Vec<(String, f64)> = checks
        .iter()
        .map(|c| (c.name.to_string(), c.tolerance))
        .collect();
    let reporter = Reporter::new(out, cfg.digest(), tolerances)?;
    let rows: Vec<String> = checks
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{}",
                c.name,
                num(c.observed),
                num(c.tolerance),
                if c.pass() { "pass" } else { "fail" }
            )
        })
        .collect();
    reporter.write_csv("lemma_checks.csv", "check,observed,tolerance,status", &rows)?;

    let mut failed = 0usize;
    for c in &checks {
        let status = if c.pass() { "pass" } else { "FAIL" };
        println!(
            "{status}  {name:<28} observed {obs:>12.3e}  tolerance {tol:.1e}",
            name = c.name,
            obs = c.observed,
            tol = c.tolerance
        );
        if !c.pass() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure::Invariant(format!(
            "{failed} of {} invariant checks failed",
            checks.len()
        )));
    }
    println!("all {} invariant checks passed", checks.len());
    Ok(())
}

/// `equivalence`: the four-way boundary-decay comparison.
pub fn cmd_equivalence(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let params = cfg.params()?;
    let expr = cfg.build_expression()?;
    let suite = cfg.suite_config()?;
    let tolerances = vec![
        ("sigma_drift_tol".to_string(), suite.sigma_drift_tol),
        ("rank_eps_fraction".to_string(), suite.rank_eps_fraction),
        ("decay_ratio".to_string(), suite.decay_ratio),
        ("persist_ratio".to_string(), suite.persist_ratio),
    ];
    let reporter = Reporter::new(out, cfg.digest(), tolerances)?;

    let report = equivalence_suite(&params, &expr, &suite)?;

    let mut spectrum_rows = Vec::new();
    for (degree, values) in &report.spectrum.per_degree {
        for (k, sigma) in values.iter().enumerate() {
            spectrum_rows.push(format!("{degree},{k},{}", num(*sigma)));
        }
    }
    reporter.write_csv("equivalence_spectrum.csv", "degree,k,sigma", &spectrum_rows)?;

    let mut profile_rows = Vec::new();
    for track in &report.tracks {
        for per in &track.per_degree {
            for (ri, value) in per.values.iter().enumerate() {
                profile_rows.push(format!(
                    "{},{},{},{}",
                    track.quantity,
                    per.degree,
                    num(report.radii[ri]),
                    num(*value)
                ));
            }
        }
    }
    reporter.write_csv(
        "equivalence_profiles.csv",
        "condition,degree,r,value",
        &profile_rows,
    )?;
    reporter.write_json("equivalence_report.json", report.to_json())?;

    for (name, verdict) in &report.verdicts {
        println!("{name:<12} {verdict}");
    }
    println!(
        "agreement: {}",
        if report.agreement { "yes" } else { "no" }
    );
    if report
        .verdicts
        .iter()
        .any(|(_, v)| matches!(v, Verdict::Inconclusive))
    {
        return Err(Failure::Instability(
            "at least one equivalence condition is inconclusive at these truncation degrees"
                .into(),
        ));
    }
    if !report.agreement {
        return Err(Failure::Invariant(
            "the four conditions returned conflicting verdicts".into(),
        ));
    }
    Ok(())
}

/// `profile`: one boundary functional along every configured ray.
pub fn cmd_profile(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let expr = cfg.build_expression()?;
    let degree = *cfg.degrees.last().expect("validated nonempty");
    let space = cfg.space_at(degree)?;
    let t = evaluate_expression(&space, &expr)?;
    let radii = cfg.profile_radii();
    let directions = cfg.ray_directions()?;
    let d = space.params().d;

    // Which (quantity, label) pairs this run profiles: pnorm fans out
    // over the constant-section slots, the others are single sweeps.
    let quantities: Vec<(DecayQuantity, String)> = match cfg.profile.quantity.as_str() {
        "berezin-sup" => vec![(DecayQuantity::BerezinSup, "berezin-sup".to_string())],
        "weak-pairing" => vec![(
            DecayQuantity::WeakPairingMax {
                max_order: cfg.profile.max_order,
            },
            format!("weak-pairing(order<={})", cfg.profile.max_order),
        )],
        "pnorm" => (0..d)
            .map(|e| {
                (
                    DecayQuantity::PNorm {
                        p: cfg.profile.p,
                        e,
                    },
                    format!("pnorm(p={};slot={e})", cfg.profile.p),
                )
            })
            .collect(),
        other => {
            return Err(Failure::Config(format!(
                "unknown profile quantity {other:?}; use \"berezin-sup\", \"weak-pairing\", or \"pnorm\""
            )))
        }
    };

    let reporter = Reporter::new(out, cfg.digest(), Vec::new())?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (di, dir) in directions.iter().enumerate() {
        for (quantity, label) in &quantities {
            let profile = decay_profile(&t, dir, &radii, quantity)?;
            for ((r, v), tail) in profile
                .radii
                .iter()
                .zip(&profile.values)
                .zip(&profile.tails)
            {
                rows.push(format!(
                    "{di},{label},{},{},{}",
                    num(*r),
                    num(*v),
                    num(*tail)
                ));
            }
            if let Some(slope) = profile.fitted_exponent {
                println!(
                    "direction {di} {label}: fitted exponent {slope:.4} over the last decade"
                );
            } else {
                println!("direction {di} {label}: no positive tail to fit");
            }
            summaries.push(serde_json::json!({
                "direction_index": di,
                "quantity": label,
                "profile": profile.to_json(),
            }));
        }
    }
    reporter.write_csv(
        "profile_values.csv",
        "direction_index,quantity,r,value,tail_bound",
        &rows,
    )?;
    reporter.write_json(
        "profile_summary.json",
        serde_json::json!({
            "degree": degree,
            "profiles": summaries,
        }),
    )?;
    Ok(())
}

/// `special`: tables of the two model integrals against their predicted
/// boundary behavior; optionally the Schur bound check on an expression.
pub fn cmd_special(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let params = cfg.params()?;
    let resolution = cfg.resolution.max(64);
    let radii = &cfg.special.radii;
    if radii.len() < 3 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Failure::Config(
            "special.radii must be at least three strictly increasing values".into(),
        ));
    }
    let points: Vec<BallPoint> = radii
        .iter()
        .map(|&r| match cfg.n {
            1 => BallPoint::one_dim(Complex64::new(r, 0.0)),
            _ => {
                let c = Complex64::new(r / 2f64.sqrt(), 0.0);
                BallPoint::new(&[c, c])
            }
        })
        .collect::<Result<_, _>>()?;

    let reporter = Reporter::new(out, cfg.digest(), Vec::new())?;
    let mut f_rows = Vec::new();
    let mut f_fits = Vec::new();
    for &s in &cfg.special.s_list {
        for &t in &cfg.special.t_list {
            let values: Vec<f64> = points
                .iter()
                .map(|z| f_integral(cfg.n, s, t, z, resolution))
                .collect::<Result<_, _>>()?;
            for (r, v) in radii.iter().zip(&values) {
                f_rows.push(format!("{},{},{},{}", num(s), num(t), num(*r), num(*v)));
            }
            // Boundedness exponent: 0 when s < n+1+t, else the deficit.
            let expected = (cfg.n as f64 + 1.0 + t - s).min(0.0);
            let fitted = fit_last_decade(radii, &values);
            let band = values.iter().fold(f64::MIN, |a, &b| a.max(b))
                / values.iter().fold(f64::MAX, |a, &b| a.min(b)).max(1e-300);
            match fitted {
                Some(slope) => println!(
                    "F(s={s}, t={t}): fitted exponent {slope:.4}, predicted {expected}, max/min {band:.3}"
                ),
                None => println!("F(s={s}, t={t}): no fit, predicted {expected}"),
            }
            f_fits.push(serde_json::json!({
                "s": s, "t": t,
                "fitted_exponent": fitted,
                "expected_exponent": expected,
                "band_ratio": band,
            }));
        }
    }
    reporter.write_csv("special_f.csv", "s,t,r,value", &f_rows)?;

    let mut j_rows = Vec::new();
    let mut j_fits = Vec::new();
    for &c in &cfg.special.c_list {
        for &t in &cfg.special.t_list {
            let values: Vec<f64> = points
                .iter()
                .map(|z| j_integral(&params, c, t, z, resolution))
                .collect::<Result<_, _>>()?;
            for (r, v) in radii.iter().zip(&values) {
                j_rows.push(format!("{},{},{},{}", num(c), num(t), num(*r), num(*v)));
            }
            let expected = -c.max(0.0);
            let fitted = fit_last_decade(radii, &values);
            let band = values.iter().fold(f64::MIN, |a, &b| a.max(b))
                / values.iter().fold(f64::MAX, |a, &b| a.min(b)).max(1e-300);
            match fitted {
                Some(slope) => println!(
                    "J(c={c}, t={t}): fitted exponent {slope:.4}, predicted {expected}, max/min {band:.3}"
                ),
                None => println!("J(c={c}, t={t}): no fit, predicted {expected}"),
            }
            j_fits.push(serde_json::json!({
                "c": c, "t": t,
                "fitted_exponent": fitted,
                "expected_exponent": expected,
                "band_ratio": band,
            }));
        }
    }
    reporter.write_csv("special_j.csv", "c,t,r,value", &j_rows)?;

    let mut summary = serde_json::json!({
        "resolution": resolution,
        "f_table": f_fits,
        "j_table": j_fits,
    });

    if cfg.schur.run {
        let schur = match cfg.schur.epsilon {
            Some(eps) => SchurParams::new(cfg.n, cfg.schur.p, eps)?,
            None => SchurParams::midpoint(cfg.n, cfg.schur.p)?,
        };
        let expr = cfg.build_expression()?;
        let degree = *cfg.degrees.last().expect("validated nonempty");
        let space = cfg.space_at(degree)?;
        let t = evaluate_expression(&space, &expr)?;
        let report = schur_bound_check(
            &t,
            &schur,
            cfg.schur.shell_radius,
            cfg.schur.grid_radii,
            cfg.schur.grid_angles,
            resolution,
        )?;
        println!(
            "schur: forward ratio {:.4}, adjoint ratio {:.4}, sup|J|^(1/p) {:.4}, refinement gap {:.2e}",
            report.forward_ratio, report.adjoint_ratio, report.j_sup, report.refinement_gap
        );
        summary["schur"] = serde_json::json!({
            "p": schur.p,
            "epsilon": schur.epsilon,
            "a": schur.a,
            "b": schur.b,
            "q": schur.q,
            "report": report.to_json(),
        });
        // Write before judging so a failing run retains its evidence.
        reporter.write_json("special_summary.json", summary)?;
        if !report.j_sup.is_finite() {
            return Err(Failure::Instability(
                "sup |J|^(1/p) did not evaluate finite".into(),
            ));
        }
        if report.refinement_gap > cfg.schur.max_refinement_gap {
            return Err(Failure::Instability(format!(
                "Schur quadrature refinement moved the peak integral by {:.3e} (allowed {:.1e})",
                report.refinement_gap, cfg.schur.max_refinement_gap
            )));
        }
        if report.forward_ratio > cfg.schur.max_ratio
            || report.adjoint_ratio > cfg.schur.max_ratio
        {
            return Err(Failure::Invariant(format!(
                "Schur inequality ratio exceeded {}: forward {:.4}, adjoint {:.4}",
                cfg.schur.max_ratio, report.forward_ratio, report.adjoint_ratio
            )));
        }
        return Ok(());
    }

    reporter.write_json("special_summary.json", summary)?;
    Ok(())
}

/// `assemble`: build the configured operator and dump its matrix.
pub fn cmd_assemble(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let expr = cfg.build_expression()?;
    let degree = *cfg.degrees.last().expect("validated nonempty");
    let space = cfg.space_at(degree)?;
    let t = evaluate_expression(&space, &expr)?;
    let m = t.matrix();
    let description = format!(
        "sum of {} product(s), {} factor(s) total",
        expr.terms.len(),
        expr.terms.iter().map(Vec::len).sum::<usize>()
    );

    let reporter = Reporter::new(out, cfg.digest(), Vec::new())?;
    let mut rows = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            rows.push(format!("{r},{c},{},{}", num(v.re), num(v.im)));
        }
    }
    reporter.write_csv("operator_matrix.csv", "row,col,re,im", &rows)?;
    reporter.write_json(
        "operator_summary.json",
        serde_json::json!({
            "expression": description,
            "degree": degree,
            "dim": m.nrows(),
            "scalar_dim": space.dim_scalar(),
            "operator_norm": t.operator_norm(),
            "frobenius_norm": m.norm(),
        }),
    )?;
    println!(
        "assembled {description} at degree {degree}: {}x{} matrix, operator norm {:.6}",
        m.nrows(),
        m.ncols(),
        t.operator_norm()
    );
    Ok(())
}
