//! Acceptance suite: one PASS/FAIL line per criterion, with its runtime.
//!
//! Runs without the libtest harness so the lines show up in plain
//! `cargo test` output. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use latent_controls::autodiff::{compose, directional_check, vjp_check, MapRef};
use latent_controls::config::{RunConfig, Session};
use latent_controls::counterfactual::{cf_optimize, difference_map, mass_inside, CounterfactualConfig, CounterfactualResult};
use latent_controls::criteria::{frequency_split, CriterionContext, CriterionSpec};
use latent_controls::eval::{attenuation_curve, manipulation_metrics};
use latent_controls::image::Image;
use latent_controls::linalg::{max_principal_angle, orthonormalize, sub, sym_eig, Matrix};
use latent_controls::rng::{normal_vec, stream};
use latent_controls::subspace::{
    build_subspace, discover, eigen_split, gram_direct, gram_trick, intersect_suppress, named_plan, sort_by_activation,
    BuildContext, FormulationPlan, Subspace, DEFAULT_EPS,
};
use latent_controls::synth::layout::{TRANSLATE_X, TRANSLATE_Y};
use latent_controls::synth::models::CLASSIFIERS;
use latent_controls::synth::LatentSpace;
use latent_controls::Result;

type Verdict = Result<(bool, String)>;

fn session() -> Session {
    Session::new(RunConfig::default()).unwrap()
}

fn plan(name: &str) -> FormulationPlan {
    FormulationPlan::parse(named_plan(name).unwrap()).unwrap()
}

fn build_ctx(contexts: &[CriterionContext]) -> BuildContext<'_> {
    BuildContext {
        contexts,
        method: latent_controls::subspace::MethodChoice::Auto,
        alpha: 1e-3,
        default_eps: DEFAULT_EPS,
    }
}

fn rel_fro(a: &Matrix, b: &Matrix) -> f64 {
    let d = a.sub(b).unwrap();
    fro(&d) / fro(b)
}

fn fro(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn gradient_fidelity() -> Verdict {
    let s = session();
    let gen = &s.gen;
    let n = 3 * gen.size() * gen.size();
    let zs = gen.sample_codes(LatentSpace::Input, 10, 1.0, 1, "fidelity");
    let mapper = gen.mapper();
    let specs = ["mp[mouth]", "fl[mouth]", "ap[face]", "id", "mac[lip]", "res[!lip]", "low", "high[face]"];
    let mut worst: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut record = |name: &str, err: f64, tol: f64| {
        let e = worst.entry(name.to_string()).or_insert((0.0, tol));
        e.0 = e.0.max(err);
    };
    for (i, z) in zs.iter().enumerate() {
        let w = mapper.eval(z)?;
        let i = i as u64;
        let cot = normal_vec(&mut stream(i, "image cotangent"), n, 1.0);
        record("renderer", vjp_check(gen.renderer().as_ref(), &w, &cot, 1e-5)?, 1e-4);
        record("input generator", vjp_check(gen.map(LatentSpace::Input).as_ref(), z, &cot, 1e-5)?, 1e-4);
        let mcot = normal_vec(&mut stream(i, "mapper cotangent"), w.len(), 1.0);
        record("mapper", vjp_check(mapper.as_ref(), z, &mcot, 1e-5)?, 1e-4);

        let ctx = CriterionContext::new(gen.clone(), s.models.clone(), LatentSpace::Style, w.clone(), 1)?;
        let mut rng = stream(i, "directions");
        let dirs: Vec<Vec<f64>> = (0..4).map(|_| normal_vec(&mut rng, w.len(), 1.0)).collect();
        let mut check = |name: String, h: MapRef, tol: f64| -> Result<()> {
            let c = normal_vec(&mut stream(i, &name), h.out_dim(), 1.0);
            record(&name, directional_check(h.as_ref(), &w, &c, &dirs, 1e-5)?, tol);
            Ok(())
        };
        for spec in specs {
            let soft = spec.starts_with("fl") || spec.starts_with("ap");
            check(spec.to_string(), ctx.build(&spec.parse::<CriterionSpec>()?)?, if soft { 1e-3 } else { 1e-4 })?;
        }
        for name in CLASSIFIERS {
            let tol = if name == "lip_redness" { 1e-4 } else { 1e-3 };
            check(name.to_string(), ctx.classifier(name)?, tol)?;
        }
    }
    let ok = worst.values().all(|(e, t)| e <= t);
    let failing: Vec<String> = worst
        .iter()
        .filter(|(_, (e, t))| e > t)
        .map(|(k, (e, t))| format!("{k} {e:.2e}>{t:.0e}"))
        .collect();
    let max = worst.values().map(|v| v.0).fold(0.0, f64::max);
    let detail = if ok {
        format!("{} maps x 10 codes, worst relative error {max:.2e}", worst.len())
    } else {
        format!("failing: {}", failing.join(", "))
    };
    Ok((ok, detail))
}

fn gram_equivalence() -> Verdict {
    let s = session();
    let codes = s.train_codes(LatentSpace::Style)?;
    let codes: Vec<Vec<f64>> = codes
        .into_iter()
        .chain(s.eval_codes(LatentSpace::Style)?.into_iter().take(1))
        .collect();
    let contexts = s.contexts(LatentSpace::Style, &codes)?;
    let mut ok = true;
    let (mut worst3, mut worst_ratio) = (0.0f64, 0.0f64);
    for ctx in &contexts {
        for spec in ["fl[mouth]", "id", "mac[lip]"] {
            let h = ctx.build(&spec.parse::<CriterionSpec>()?)?;
            let direct = gram_direct(h.as_ref(), &ctx.code)?;
            let e3 = rel_fro(&gram_trick(h.as_ref(), &ctx.code, 1e-3)?, &direct);
            let e4 = rel_fro(&gram_trick(h.as_ref(), &ctx.code, 1e-4)?, &direct);
            ok &= e3 <= 1e-2 && e4 <= 0.6 * e3;
            worst3 = worst3.max(e3);
            worst_ratio = worst_ratio.max(e4 / e3);
        }
    }
    Ok((ok, format!("max error at 1e-3 {worst3:.2e}, max error ratio 1e-4/1e-3 {worst_ratio:.3}")))
}

fn frame(n: usize, seed: u64) -> Matrix {
    let raw = Matrix::new(n, n, normal_vec(&mut stream(seed, "frame"), n * n, 1.0)).unwrap();
    orthonormalize(&raw, 1e-12).unwrap().basis
}

fn gram_on(q: &Matrix, cols: &[usize], lambdas: &[f64]) -> Matrix {
    let mut g = Matrix::zeros(q.rows(), q.rows());
    for (&c, &l) in cols.iter().zip(lambdas) {
        let v = q.col(c);
        for i in 0..q.rows() {
            for j in 0..q.rows() {
                g[(i, j)] += l * v[i] * v[j];
            }
        }
    }
    g
}

fn intersection_oracle() -> Verdict {
    let mut worst = (0.0f64, 0.0f64);
    let mut ok = true;
    for seed in 0..20 {
        let q = frame(8, seed);
        // activate on q0..q3, suppress on q3..q6: the answer is span(q0, q1, q2)
        let g0 = gram_on(&q, &[0, 1, 2, 3], &[4.0, 3.0, 2.0, 5.0]);
        let g1 = gram_on(&q, &[3, 4, 5, 6], &[1.0, 2.0, 0.5, 3.0]);
        let b = intersect_suppress(&Matrix::identity(8), &g1, DEFAULT_EPS)?;
        let (s, lambdas) = sort_by_activation(&b, &g0, DEFAULT_EPS)?;
        let analytic = q.select_cols(&[0, 1, 2]);
        let a = max_principal_angle(&s, &analytic)?;
        let v0 = eigen_split(&g0, DEFAULT_EPS)?.v;
        let w1 = eigen_split(&g1, DEFAULT_EPS)?.w;
        let prior = orthonormalize(&w1.matmul(&w1.tr_matmul(&v0)?)?, 1e-8)?.basis;
        let p = max_principal_angle(&s, &prior)?;
        ok &= s.cols() == 3 && a < 1e-8 && p < 1e-8;
        ok &= lambdas.iter().zip([4.0, 3.0, 2.0]).all(|(l, e)| (l - e).abs() < 1e-10);
        worst = (worst.0.max(a), worst.1.max(p));
    }
    Ok((ok, format!("20 frames, max angle to analytic {:.1e}, to prior formula {:.1e}", worst.0, worst.1)))
}

fn suppression_guarantee() -> Verdict {
    let s = session();
    let codes = s.train_codes(LatentSpace::Style)?;
    let contexts = s.contexts(LatentSpace::Style, &codes)?;
    let d = discover(&plan("mouth_photometry"), &build_ctx(&contexts))?;
    let g = &d.suppress[0].matrix;
    let bound = DEFAULT_EPS * sym_eig(g)?.top();
    let hs: Vec<MapRef> = contexts
        .iter()
        .map(|c| c.build(&"mp[!mouth]".parse::<CriterionSpec>()?))
        .collect::<Result<_>>()?;
    let alpha = 1e-3;
    let (mut worst_q, mut worst_fd) = (0.0f64, 0.0f64);
    for k in 0..d.subspace.dim() {
        let v = d.subspace.component(k)?;
        worst_q = worst_q.max(g.quad_form(&v)? / bound);
        let mut change = 0.0;
        for (h, c) in hs.iter().zip(&contexts) {
            let moved: Vec<f64> = c.code.iter().zip(&v).map(|(u, e)| u + alpha * e).collect();
            let dh = sub(&h.eval(&moved)?, &h.eval(&c.code)?);
            change += dh.iter().map(|x| x * x).sum::<f64>();
        }
        worst_fd = worst_fd.max(change / (alpha * alpha) / bound);
    }
    let ok = d.subspace.dim() >= 1 && worst_q < 1.0 && worst_fd < 1.0;
    Ok((
        ok,
        format!(
            "{} directions, max vGv/(eps l0) {worst_q:.3}, max |dh|^2/(alpha^2 eps l0) {worst_fd:.3}",
            d.subspace.dim()
        ),
    ))
}

fn aligned_photometry() -> Verdict {
    let s = session();
    let mut codes = vec![vec![0.0; s.config.generator.style_dim]];
    codes.extend(s.eval_codes(LatentSpace::Style)?.into_iter().take(2));
    let shifts = [
        (0.1, 0.0),
        (0.0, 0.1),
        (0.25, -0.25),
        (0.5, 0.0),
        (1.0, 0.0),
        (0.0, -1.5),
        (2.0, 0.0),
        (0.0, 2.0),
        (-1.0, 1.0),
        (1.5, 1.0),
        (-0.7, -1.3),
    ];
    let mut worst = 0.0f64;
    let mut recon = 0.0f64;
    for code in &codes {
        let ctx = CriterionContext::new(s.gen.clone(), s.models.clone(), LatentSpace::Style, code.clone(), 1)?;
        let ap = ctx.build(&"ap[face]".parse::<CriterionSpec>()?)?;
        let mp = ctx.build(&"mp[face]".parse::<CriterionSpec>()?)?;
        let (a0, m0) = (ap.eval(code)?, mp.eval(code)?);
        for (tx, ty) in shifts {
            let mut u = code.clone();
            u[TRANSLATE_X] += tx;
            u[TRANSLATE_Y] += ty;
            let da = latent_controls::linalg::norm(&sub(&ap.eval(&u)?, &a0));
            let dm = latent_controls::linalg::norm(&sub(&mp.eval(&u)?, &m0));
            worst = worst.max(da / dm);
        }
        let g = s.gen.map(LatentSpace::Style);
        let (low, high) = frequency_split(g.clone(), s.gen.size(), 4)?;
        let (l, h, x) = (low.eval(code)?, high.eval(code)?, g.eval(code)?);
        recon = recon.max(l.iter().zip(&h).zip(&x).map(|((a, b), c)| (a + b - c).abs()).fold(0.0, f64::max));
    }
    let ok = worst <= 0.05 && recon <= 1e-12;
    Ok((
        ok,
        format!("max |dh_ap|/|dh_mp| {worst:.4} over {} shifts x 3 codes, low+high reconstruction error {recon:.1e}", shifts.len()),
    ))
}

fn counterfactual_behavior() -> Verdict {
    let s = session();
    let codes = s.train_codes(LatentSpace::Style)?;
    let contexts = s.contexts(LatentSpace::Style, &codes)?;
    let lip = build_subspace(&plan("lip_color"), &build_ctx(&contexts))?;
    let bg = build_subspace(&plan("background_photometry"), &build_ctx(&contexts))?;
    let map = s.gen.map(LatentSpace::Style);
    let clf = compose(s.models.classifier("lip_redness")?, map.clone())?;
    let size = s.gen.size();
    let render = |u: &[f64]| Image::new(size, size, map.eval(u)?);
    let cfg = CounterfactualConfig::default();
    let run = |u: &[f64], sub: &Subspace| cf_optimize(clf.as_ref(), &render, u, sub, &cfg);
    let monotone = |r: &CounterfactualResult| r.trajectory.windows(2).all(|w| w[1].1 >= w[0].1);
    let mut ok = true;
    let (mut min_ratio, mut min_mass, mut max_resid, mut min_gain, mut max_out) = (f64::INFINITY, 1.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    for u in s.eval_codes(LatentSpace::Style)?.iter().take(5) {
        let a = run(u, &lip)?;
        let b = run(u, &bg)?;
        let mask = s.models.parse(&a.before).mask("lip")?;
        let mass = mass_inside(&difference_map(&a.before, &a.after)?, &mask);
        let (mut out, mut cnt) = (0.0, 0usize);
        for (p, &m) in mask.bits.iter().enumerate() {
            if !m {
                out += (0..3).map(|c| (a.before.values[3 * p + c] - a.after.values[3 * p + c]).abs()).sum::<f64>();
                cnt += 3;
            }
        }
        let out = out / cnt as f64;
        let resid = a.containment_residual(&lip)?.max(b.containment_residual(&bg)?);
        let ratio = if b.gain() > 0.0 { a.gain() / b.gain() } else { f64::INFINITY };
        ok &= ratio >= 10.0 && resid < 1e-9 && monotone(&a) && monotone(&b) && mass >= 0.8;
        ok &= a.gain() >= 1.0 && out <= 0.02;
        min_ratio = min_ratio.min(ratio);
        min_mass = min_mass.min(mass);
        max_resid = max_resid.max(resid);
        min_gain = min_gain.min(a.gain());
        max_out = max_out.max(out);
    }
    Ok((
        ok,
        format!(
            "5 codes: min gain ratio {min_ratio:.1}, min lip gain {min_gain:.3}, max outside change {max_out:.4}, \
             max residual {max_resid:.1e}, min lip mass {min_mass:.3}, trajectories monotone"
        ),
    ))
}

fn attenuation_dominance() -> Verdict {
    let s = session();
    let mut curves = Vec::new();
    for space in [LatentSpace::Input, LatentSpace::Style] {
        let codes = s.train_codes(space)?;
        let contexts = s.contexts(space, &codes)?;
        curves.push(attenuation_curve(&plan("mouth_photometry"), &build_ctx(&contexts))?);
    }
    let shared = curves[0].ratios.len().min(curves[1].ratios.len());
    Ok((
        curves[1].dominates(&curves[0]) && shared >= 1,
        format!(
            "{shared} shared components, style {:?} vs input {:?}",
            fmt_list(&curves[1].ratios[..shared]),
            fmt_list(&curves[0].ratios[..shared])
        ),
    ))
}

fn fmt_list(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{x:.2e}")).collect()
}

fn identity_ordering() -> Verdict {
    let s = session();
    let codes = s.train_codes(LatentSpace::Style)?;
    let contexts = s.contexts(LatentSpace::Style, &codes)?;
    let evals = s.eval_codes(LatentSpace::Style)?;
    assert_eq!(evals.len(), 64);
    let mut rows = Vec::new();
    for name in ["mouth_photometry", "mouth_photometry_id"] {
        let sub = build_subspace(&plan(name), &build_ctx(&contexts))?;
        rows.push(manipulation_metrics(&sub, sub.dim().min(4), 10.0, &evals, "mouth", &s.gen, &s.models, name)?);
    }
    let ok = rows.iter().all(|r| r.inside > r.outside) && rows[1].identity > rows[0].identity;
    Ok((
        ok,
        rows.iter()
            .map(|r| format!("{}: in {:.4} out {:.4} id {:.4}", r.plan, r.inside, r.outside, r.identity))
            .collect::<Vec<_>>()
            .join("; "),
    ))
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, RunConfig::default().to_toml()?).unwrap();
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let sub = out.join("subspace");
        let steps: [Vec<&str>; 5] = [
            vec!["discover"],
            vec!["manipulate", "--subspace", sub.to_str().unwrap(), "--component", "0", "--magnitude", "-10,0,10"],
            vec!["counterfactual", "--plan", "lip_color"],
            vec!["compare-spaces"],
            vec!["evaluate", "--subspace", sub.to_str().unwrap(), "--magnitude", "3,10"],
        ];
        for args in steps {
            let st = Command::new(env!("CARGO_BIN_EXE_latctl"))
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .args(&args)
                .output()
                .unwrap();
            if !st.status.success() {
                return Ok((false, format!("`{}` failed: {}", args[0], String::from_utf8_lossy(&st.stderr))));
            }
        }
        trees.push(tree(&out));
    }
    let bytes: usize = trees[0].values().map(Vec::len).sum();
    let differing: Vec<&String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let same = trees[0] == trees[1];
    let detail = if same {
        format!("{} files, {bytes} bytes, byte-identical across runs", trees[0].len())
    } else {
        format!("differing files: {differing:?}")
    };
    Ok((same, detail))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Verdict); 9] = [
        ("gradient fidelity", 60, gradient_fidelity),
        ("gram equivalence", 120, gram_equivalence),
        ("intersection oracle", 5, intersection_oracle),
        ("suppression guarantee", 60, suppression_guarantee),
        ("aligned photometry", 30, aligned_photometry),
        ("counterfactual behavior", 60, counterfactual_behavior),
        ("attenuation dominance", 120, attenuation_dominance),
        ("identity ordering", 300, identity_ordering),
        ("cli determinism", u64::MAX, cli_determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let verdict = f();
        let took = t.elapsed();
        let in_time = took <= Duration::from_secs(limit);
        let (pass, detail) = match verdict {
            Ok((p, d)) => (p && in_time, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget = if limit == u64::MAX { String::new() } else { format!(", limit {limit} s") };
        let late = if in_time { "" } else { " [over time limit]" };
        println!(
            "{} {name} ({:.1} s{budget}){late}: {detail}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        failed += usize::from(!pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
