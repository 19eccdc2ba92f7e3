//! The acceptance gate: nine end-to-end criteria, one printed pass/fail
//! line each, tolerances pinned in this file. Numeric criteria go
//! through the library's public API; command-level criteria drive the
//! compiled binary.

use bergman_core::basis::{build_space, TruncatedSpace};
use bergman_core::berezin::{
    berezin_composition, covariance_check, decay_profile, default_directions, default_radii,
    spectral_norm, DecayQuantity,
};
use bergman_core::compactness::{
    equivalence_suite, frobenius_domination, hs_norm_kernel, radial_truncation,
    schur_bound_check, SchurParams, SuiteConfig, Verdict,
};
use bergman_core::geometry::{BallPoint, SpaceParams};
use bergman_core::operators::{assemble_toeplitz, conjugate_tz, evaluate_expression, OperatorExpression};
use bergman_core::quadrature::{build_rule_seeded, f_integral};
use bergman_core::symbols::{MatrixSymbol, PolyTerm};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

struct Outcome {
    index: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome) -> String {
    format!(
        "ACCEPTANCE {} [{}] {}: {}",
        o.index,
        if o.pass { "PASS" } else { "FAIL" },
        o.name,
        o.detail
    )
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("acceptance-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("create scratch dir");
    dir
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bergman"))
}

fn space(alpha: f64, d: usize, degree: usize, resolution: usize) -> Arc<TruncatedSpace> {
    let params = SpaceParams::new(1, alpha, d).expect("params");
    let resolution = resolution.max(2 * degree + 1).next_multiple_of(8);
    let rule = build_rule_seeded(&params, resolution, 7).expect("rule");
    Arc::new(build_space(&params, degree, rule).expect("space"))
}

fn sample_matrix(d: usize, seed: u64) -> DMatrix<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(d, d, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

fn one_dim(re: f64, im: f64) -> BallPoint {
    BallPoint::one_dim(Complex64::new(re, im)).expect("inside ball")
}

/// Criterion 1: the involutive change of variables satisfies its three
/// identities to 1e-8 at both weights, within a minute (binary route:
/// the battery fixes N = 16, d = 2, 20 seeded draws, the four centers).
fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut pass = true;
    let mut notes = Vec::new();
    for (tag, alpha_arg) in [("alpha0", None), ("alpha2.5", Some("2.5"))] {
        let out = scratch_dir(&format!("c1-{tag}"));
        let mut cmd = binary();
        cmd.arg("verify-lemmas").arg("--out").arg(&out);
        if let Some(a) = alpha_arg {
            cmd.arg("--alpha").arg(a);
        }
        let status = cmd.output().expect("run verify-lemmas");
        if !status.status.success() {
            pass = false;
            notes.push(format!("{tag}: exit {:?}", status.status.code()));
            continue;
        }
        let csv = std::fs::read_to_string(out.join("lemma_checks.csv")).expect("csv");
        let mut seen = 0;
        for row in csv.lines().filter(|l| l.starts_with("uz-")) {
            let fields: Vec<&str> = row.split(',').collect();
            let observed: f64 = fields[1].parse().expect("observed");
            worst = worst.max(observed);
            seen += 1;
            if observed > 1e-8 {
                pass = false;
                notes.push(format!("{tag}: {} observed {observed:e}", fields[0]));
            }
        }
        if seen != 3 {
            pass = false;
            notes.push(format!("{tag}: expected 3 uz rows, found {seen}"));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed > 60.0 {
        pass = false;
        notes.push(format!("took {elapsed:.1}s > 60s"));
    }
    Outcome {
        index: 1,
        name: "involution identities at both weights",
        pass,
        detail: if notes.is_empty() {
            format!("worst deviation {worst:.3e} <= 1e-8 in {elapsed:.1}s")
        } else {
            notes.join("; ")
        },
    }
}

/// Criterion 2: conjugating the operator equals assembling the composed
/// symbol, relative error <= 1e-6, over five catalog symbols and centers
/// up to |z| = 0.7, within two minutes.
fn criterion_2() -> Outcome {
    let started = Instant::now();
    let sp = space(0.0, 2, 16, 40);
    let params = *sp.params();
    let symbols = vec![
        MatrixSymbol::identity(&params),
        MatrixSymbol::constant(&params, sample_matrix(2, 11)).expect("constant"),
        MatrixSymbol::polynomial(
            &params,
            vec![
                PolyTerm {
                    w_pow: [1, 0],
                    w_conj_pow: [0, 0],
                    abs_sq_pow: 0,
                    coeff: sample_matrix(2, 12),
                },
                PolyTerm {
                    w_pow: [0, 0],
                    w_conj_pow: [1, 0],
                    abs_sq_pow: 1,
                    coeff: sample_matrix(2, 13),
                },
            ],
        )
        .expect("polynomial"),
        MatrixSymbol::boundary_vanishing(&params, 1.0, sample_matrix(2, 14)).expect("bv"),
        MatrixSymbol::rotation(&params, 2, sample_matrix(2, 15)).expect("rotation"),
    ];
    let centers = [
        one_dim(0.0, 0.0),
        one_dim(0.35, 0.0),
        one_dim(0.0, 0.6),
        one_dim(-0.55, 0.2),
        one_dim(0.49, -0.49),
    ];
    let mut worst = 0.0f64;
    for u in &symbols {
        let t = assemble_toeplitz(&sp, u).expect("assemble");
        for z in &centers {
            let (tz, _) = conjugate_tz(&t, z).expect("conjugate");
            let direct =
                assemble_toeplitz(&sp, &u.compose_moebius(z).expect("compose")).expect("assemble");
            let rel = (tz.matrix() - direct.matrix()).norm() / direct.matrix().norm().max(1e-300);
            worst = worst.max(rel);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst <= 1e-6 && elapsed <= 120.0;
    Outcome {
        index: 2,
        name: "conjugation matches composed assembly",
        pass,
        detail: format!(
            "worst relative gap {worst:.3e} <= 1e-6 over 5 symbols x 5 centers in {elapsed:.1}s"
        ),
    }
}

/// Criterion 3: transform covariance under conjugation, gap <= 1e-5, for
/// a two-term two-factor expression at centers up to |z| = 0.6.
fn criterion_3() -> Outcome {
    let sp = space(0.0, 2, 24, 40);
    let params = *sp.params();
    let expr = OperatorExpression {
        terms: vec![
            vec![
                MatrixSymbol::boundary_vanishing(&params, 1.0, sample_matrix(2, 21)).expect("bv"),
                MatrixSymbol::rotation(&params, 1, sample_matrix(2, 22)).expect("rotation"),
            ],
            vec![
                MatrixSymbol::polynomial(
                    &params,
                    vec![PolyTerm {
                        w_pow: [1, 0],
                        w_conj_pow: [1, 0],
                        abs_sq_pow: 0,
                        coeff: sample_matrix(2, 23),
                    }],
                )
                .expect("poly"),
                MatrixSymbol::boundary_vanishing(&params, 2.0, sample_matrix(2, 24)).expect("bv"),
            ],
        ],
    };
    let t = evaluate_expression(&sp, &expr).expect("assemble");
    let centers = [
        one_dim(0.3, 0.0),
        one_dim(0.0, 0.45),
        one_dim(-0.5, 0.1),
        one_dim(0.36, -0.48),
        one_dim(0.6, 0.0),
    ];
    let mut grid = vec![BallPoint::origin(1).expect("origin")];
    for k in 0..6 {
        let theta = std::f64::consts::PI * k as f64 / 3.0;
        grid.push(BallPoint::one_dim(Complex64::from_polar(0.12, theta)).expect("grid"));
    }
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for z in &centers {
        let report = covariance_check(&t, z, &grid).expect("covariance");
        worst = worst.max(report.max_gap);
        checked += report.checked;
    }
    Outcome {
        index: 3,
        name: "transform covariance under conjugation",
        pass: worst <= 1e-5,
        detail: format!(
            "worst two-route gap {worst:.3e} <= 1e-5 across {checked} grid evaluations"
        ),
    }
}

/// Criterion 4: the model integral stays in a bounded band for
/// (s, t) = (2, 1) and follows the predicted exponent -1 (within 0.05)
/// for (4, 1) as |z| runs through [0.9, 0.999], within a minute.
fn criterion_4() -> Outcome {
    let started = Instant::now();
    let radii: Vec<f64> = (0..10)
        .map(|k| 1.0 - 0.1 * (0.001f64 / 0.1).powf(k as f64 / 9.0))
        .collect();
    let eval = |s: f64| -> Vec<f64> {
        radii
            .iter()
            .map(|&r| f_integral(1, s, 1.0, &one_dim(r, 0.0), 64).expect("F"))
            .collect()
    };
    let bounded = eval(2.0);
    let band = bounded.iter().cloned().fold(f64::MIN, f64::max)
        / bounded.iter().cloned().fold(f64::MAX, f64::min);
    let growing = eval(4.0);
    let slope = bergman_core::berezin::fit_loglog(
        &radii.iter().map(|r| 1.0 - r * r).collect::<Vec<_>>(),
        &growing,
    )
    .expect("slope");
    let elapsed = started.elapsed().as_secs_f64();
    let pass = band <= 2.0 && (slope + 1.0).abs() <= 0.05 && elapsed <= 60.0;
    Outcome {
        index: 4,
        name: "model integral boundary behavior",
        pass,
        detail: format!(
            "band ratio {band:.3} <= 2 for (s,t)=(2,1); exponent {slope:.4} within -1 +/- 0.05 for (4,1); {elapsed:.1}s"
        ),
    }
}

/// Criterion 5: an expression whose every factor vanishes at the boundary
/// decays in all four conditions across N in {16, 24, 32}; the
/// single-factor transform profile fits exponent 1 +/- 0.1; matched
/// singular values drift at most 5%.
fn criterion_5() -> Outcome {
    let params = SpaceParams::new(1, 0.0, 2).expect("params");
    let a = sample_matrix(2, 31);
    let b = sample_matrix(2, 32);
    let all_vanishing = OperatorExpression {
        terms: vec![
            vec![
                MatrixSymbol::boundary_vanishing(&params, 1.0, a.clone()).expect("bv"),
                MatrixSymbol::boundary_vanishing(&params, 1.0, b.clone()).expect("bv"),
            ],
            vec![
                MatrixSymbol::boundary_vanishing(&params, 2.0, b).expect("bv"),
                MatrixSymbol::boundary_vanishing(&params, 1.0, a.clone()).expect("bv"),
            ],
        ],
    };
    let mut config = SuiteConfig::standard(1);
    config.degrees = vec![16, 24, 32];
    let report = equivalence_suite(&params, &all_vanishing, &config).expect("suite");
    let all_decay = report
        .verdicts
        .iter()
        .all(|(_, v)| matches!(v, Verdict::Decays));
    let drift = report.spectrum.max_drift;

    // Single-factor profile on the composition route at the largest degree.
    let sp = space(0.0, 2, 32, config.resolution);
    let single =
        OperatorExpression::single(MatrixSymbol::boundary_vanishing(&params, 1.0, a).expect("bv"));
    let t = evaluate_expression(&sp, &single).expect("assemble");
    let dir = &default_directions(1)[0];
    let profile =
        decay_profile(&t, dir, &default_radii(), &DecayQuantity::BerezinSup).expect("profile");
    let slope = profile.fitted_exponent.expect("fit");

    let pass = all_decay && drift <= 0.05 && (slope - 1.0).abs() <= 0.1;
    Outcome {
        index: 5,
        name: "boundary-vanishing expression decays four ways",
        pass,
        detail: format!(
            "verdicts {}; sigma drift {drift:.4} <= 0.05; transform exponent {slope:.4} within 1 +/- 0.1",
            report
                .verdicts
                .iter()
                .map(|(n, v)| format!("{n}={v}"))
                .collect::<Vec<_>>()
                .join(",")
        ),
    }
}

/// Criterion 6: the identity symbol persists in all four conditions and
/// its transform equals the identity matrix to 1e-9 at every profiled z.
fn criterion_6() -> Outcome {
    let params = SpaceParams::new(1, 0.0, 2).expect("params");
    let expr = OperatorExpression::single(MatrixSymbol::identity(&params));
    let mut config = SuiteConfig::standard(1);
    config.degrees = vec![12, 16];
    config.resolution = 40;
    let report = equivalence_suite(&params, &expr, &config).expect("suite");
    let all_persist = report
        .verdicts
        .iter()
        .all(|(_, v)| matches!(v, Verdict::Persists));

    let sp = space(0.0, 2, 16, 40);
    let eye = DMatrix::<Complex64>::identity(2, 2);
    let mut worst = 0.0f64;
    for dir in &config.directions {
        for &r in &config.radii {
            let z = BallPoint::one_dim(dir[0] * r).expect("ray point");
            let bt = berezin_composition(&sp, &expr, &z).expect("transform");
            worst = worst.max(spectral_norm(&(bt - eye.clone())));
        }
    }
    let pass = all_persist && worst <= 1e-9;
    Outcome {
        index: 6,
        name: "identity symbol persists with flat transform",
        pass,
        detail: format!(
            "verdicts {}; worst |B - I| {worst:.3e} <= 1e-9 at {} ray points",
            report
                .verdicts
                .iter()
                .map(|(n, v)| format!("{n}={v}"))
                .collect::<Vec<_>>()
                .join(","),
            config.directions.len() * config.radii.len()
        ),
    }
}

/// Criterion 7: the two Hilbert-Schmidt routes agree within 1% on radial
/// truncations at t in {0.5, 0.8}, and the Frobenius domination holds
/// pointwise to 1e-10.
fn criterion_7() -> Outcome {
    let sp = space(0.0, 2, 16, 40);
    let params = *sp.params();
    let u = MatrixSymbol::boundary_vanishing(&params, 1.0, sample_matrix(2, 41)).expect("bv");
    let t = assemble_toeplitz(&sp, &u).expect("assemble");
    let mut worst_rel = 0.0f64;
    for radius in [0.5f64, 0.8] {
        let cut = radial_truncation(&t, radius).expect("truncation");
        let realized = cut.hs_norm_realized();
        let via_kernel = hs_norm_kernel(&t, radius, 40).expect("kernel route");
        worst_rel = worst_rel.max((realized - via_kernel).abs() / realized.max(1e-300));
    }
    let pairs = [
        (one_dim(0.3, 0.0), one_dim(0.0, 0.5)),
        (one_dim(0.0, 0.6), one_dim(-0.4, 0.2)),
        (one_dim(0.5, 0.2), one_dim(0.7, 0.0)),
        (one_dim(-0.25, -0.55), one_dim(0.1, 0.1)),
    ];
    let mut worst_gap = 0.0f64;
    for (z, w) in &pairs {
        worst_gap = worst_gap.max(frobenius_domination(&t, z, w).expect("domination").gap());
    }
    let pass = worst_rel <= 0.01 && worst_gap <= 1e-10;
    Outcome {
        index: 7,
        name: "Hilbert-Schmidt routes and Frobenius domination",
        pass,
        detail: format!(
            "worst route disagreement {worst_rel:.3e} <= 1e-2; worst domination gap {worst_gap:.3e} <= 1e-10"
        ),
    }
}

/// Criterion 8: the weighted Schur bound holds with ratio <= 1.05 on a
/// 10x10 grid at the window midpoint for p = 1.1, the controlling
/// integral is finite, and an epsilon pushing the weight exponent past
/// -1 is rejected with exit code 2.
fn criterion_8() -> Outcome {
    let sp = space(0.0, 2, 12, 32);
    let params = *sp.params();
    let expr = OperatorExpression::single(
        MatrixSymbol::boundary_vanishing(&params, 1.0, sample_matrix(2, 51)).expect("bv"),
    );
    let t = evaluate_expression(&sp, &expr).expect("assemble");
    let schur = SchurParams::midpoint(1, 1.1).expect("midpoint");
    let report = schur_bound_check(&t, &schur, 0.7, 10, 10, 32).expect("schur");

    let out = scratch_dir("c8");
    let config_path = out.join("bad_epsilon.json");
    std::fs::write(
        &config_path,
        serde_json::to_string(&serde_json::json!({
            "degrees": [8],
            "resolution": 24,
            "catalog": {"v": {"kind": "boundary-vanishing", "exponent": 1.0,
                "matrix": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]}},
            "expression": {"sum": [{"product": ["v"]}]},
            "schur": {"run": true, "epsilon": 0.95}
        }))
        .expect("json"),
    )
    .expect("write config");
    let status = binary()
        .arg("special")
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(out.join("out"))
        .output()
        .expect("run special");
    let rejected = status.status.code() == Some(2);

    let pass = report.forward_ratio <= 1.05
        && report.adjoint_ratio <= 1.05
        && report.j_sup.is_finite()
        && report.checked_points == 100
        && rejected;
    Outcome {
        index: 8,
        name: "weighted Schur bound and window rejection",
        pass,
        detail: format!(
            "forward {:.4} and adjoint {:.4} <= 1.05 on 100 points; sup|J|^(1/p) = {:.3} finite; out-of-window epsilon exits {}",
            report.forward_ratio,
            report.adjoint_ratio,
            report.j_sup,
            status.status.code().map_or("none".into(), |c| c.to_string())
        ),
    }
}

/// Criterion 9: rerunning the equivalence command with 1, 4, and 8
/// worker threads produces byte-identical CSV files.
fn criterion_9() -> Outcome {
    let base = scratch_dir("c9");
    let config_path = base.join("suite.json");
    std::fs::write(
        &config_path,
        serde_json::to_string(&serde_json::json!({
            "degrees": [8, 12],
            "resolution": 16,
            "radii": [0.5, 0.7, 0.85, 0.95],
            "catalog": {"v": {"kind": "boundary-vanishing", "exponent": 1.0,
                "matrix": [[[0.8, 0.0], [0.1, 0.2]], [[0.1, -0.2], [0.5, 0.0]]]}},
            "expression": {"sum": [{"product": ["v"]}]}
        }))
        .expect("json"),
    )
    .expect("write config");

    let mut bytes: Vec<(String, Vec<u8>)> = Vec::new();
    let mut pass = true;
    let mut notes = Vec::new();
    for threads in [1usize, 4, 8] {
        let out = base.join(format!("threads-{threads}"));
        let status = binary()
            .arg("equivalence")
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .arg("--threads")
            .arg(threads.to_string())
            .output()
            .expect("run equivalence");
        if !status.status.success() {
            pass = false;
            notes.push(format!("threads={threads} exit {:?}", status.status.code()));
            continue;
        }
        for name in ["equivalence_spectrum.csv", "equivalence_profiles.csv"] {
            let payload = std::fs::read(out.join(name)).expect("csv bytes");
            match bytes.iter().find(|(n, _)| n == name) {
                None => bytes.push((name.to_string(), payload)),
                Some((_, reference)) => {
                    if reference != &payload {
                        pass = false;
                        notes.push(format!("{name} differs at threads={threads}"));
                    }
                }
            }
        }
    }
    Outcome {
        index: 9,
        name: "thread-count determinism of CSV outputs",
        pass,
        detail: if notes.is_empty() {
            "both CSVs byte-identical across 1, 4, and 8 threads".into()
        } else {
            notes.join("; ")
        },
    }
}

#[test]
fn acceptance_criteria() {
    let outcomes = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ];
    let mut all = true;
    for o in &outcomes {
        println!("{}", line(o));
        all &= o.pass;
    }
    assert!(
        all,
        "acceptance failures:\n{}",
        outcomes
            .iter()
            .filter(|o| !o.pass)
            .map(line)
            .collect::<Vec<_>>()
            .join("\n")
    );
}
