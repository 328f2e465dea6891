//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL/SKIP line; exits non-zero on any FAIL.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::Rng;

use ssrlda::adapt_global::{encode_global, problem_stats, solve_mda_ad, GlobalAdaptProblem};
use ssrlda::adapt_local::{class_stats, encode_local, partition_by_class, solve_class, solve_mmda, ClassSubset};
use ssrlda::classify::{predict, train_linear};
use ssrlda::config::{AdaptConfig, Preset};
use ssrlda::dataio::{make_domain_pair, stack_rows};
use ssrlda::denoiser::{expected_stats, gradient, objective, solve_mda, LayerWeights, NoiseSpec};
use ssrlda::eval::{distance_from_error, load_pair, proxy_a_distance};
use ssrlda::mmd::{build_conditional_mmd, build_marginal_mmd, mmd_squared_linear, MmdMatrix};
use ssrlda::pipeline::{run_variant, Variant};
use ssrlda::synthetic::{identical_domains, shifted_gaussian_pair, ShiftedGaussianSpec};

use common::*;

type Criterion = (&'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return Outcome::Fail(format!("error: {e}")),
        }
    };
}

/// The canonical synthetic configuration: the shift energy in `XᵀX` grows
/// with `n`, so `β` must be of the same order to align the domains.
fn synthetic_config() -> AdaptConfig {
    AdaptConfig::from_kv_str("noise=0.3; layers=3; lambda=10; beta=10000; seed=0").expect("valid config")
}

fn monte_carlo_oracle() -> Outcome {
    const K: usize = 200_000;
    let (n, d, p, lambda) = (20, 8, 0.5, 1.0);
    let x = uniform_matrix(n, d, 11);
    let started = Instant::now();

    let mut r = rng(12);
    let mut q = vec![0.0; d * d];
    let mut pc = vec![0.0; d * d];
    let mut kept = vec![0.0; d];
    for _ in 0..K {
        for i in 0..n {
            for (j, k) in kept.iter_mut().enumerate() {
                *k = if r.random::<f64>() < p { 0.0 } else { x[[i, j]] };
            }
            for a in 0..d {
                let ka = kept[a];
                if ka == 0.0 {
                    continue;
                }
                for b in 0..d {
                    q[a * d + b] += ka * kept[b];
                    pc[a * d + b] += ka * x[[i, b]];
                }
            }
        }
    }
    let q = Array2::from_shape_vec((d, d), q).unwrap() / K as f64;
    let pc = Array2::from_shape_vec((d, d), pc).unwrap() / K as f64;
    let w_mc = gauss_solve(&(&q + &(Array2::<f64>::eye(d) * lambda)), &pc);

    let noise = tri!(NoiseSpec::new(p, 0));
    let stats = tri!(expected_stats(&x.view(), &noise, None));
    let w = tri!(solve_mda(&x.view(), &noise, lambda)).w;
    let secs = started.elapsed().as_secs_f64();
    let (err_w, err_q) = (rel_frobenius(&w, &w_mc), rel_frobenius(&stats.q, &q));
    check(
        err_w <= 2e-2 && err_q <= 2e-2 && secs <= 60.0,
        format!("rel ‖W−W_mc‖ = {err_w:.2e}, rel ‖E[Q]−Q_mc‖ = {err_q:.2e} (≤ 2e-2), {secs:.1}s (≤ 60s)"),
    )
}

struct GradientCase {
    name: &'static str,
    stats: ssrlda::denoiser::ExpectationStats,
    w: Array2<f64>,
    lambda: f64,
    beta: f64,
}

fn gradient_checks() -> Outcome {
    let mut cases = Vec::new();

    let noise = tri!(NoiseSpec::new(0.4, 0));
    let x = normal_matrix(10, 4, 21);
    cases.push(GradientCase {
        name: "mda",
        stats: tri!(expected_stats(&x.view(), &noise, None)),
        w: tri!(solve_mda(&x.view(), &noise, 0.5)).w,
        lambda: 0.5,
        beta: 0.0,
    });

    let x = normal_matrix(10, 4, 22);
    let src = [0, 1, 0, 1, 1];
    let tgt = [1, 0, 0, 1, 0];
    let problem = GlobalAdaptProblem {
        x: x.view(),
        source_labels: &src,
        target_pseudo_labels: &tgt,
        noise,
        lambda: 0.5,
        beta: 3.0,
        class_count: 2,
        append_bias: false,
    };
    cases.push(GradientCase {
        name: "mda_ad",
        stats: tri!(problem_stats(&problem)),
        w: tri!(solve_mda_ad(&problem)).weights.w,
        lambda: 0.5,
        beta: 3.0,
    });

    let subset = ClassSubset {
        class: 0,
        data: normal_matrix(8, 3, 23),
        n_source: 4,
        origin_index: (0..8).collect(),
    };
    cases.push(GradientCase {
        name: "mmda",
        stats: tri!(class_stats(&subset, &noise)),
        w: tri!(solve_class(&subset, &noise, 0.5, 3.0, false)).w,
        lambda: 0.5,
        beta: 3.0,
    });

    let mut details = Vec::new();
    let mut ok = true;
    for (i, c) in cases.iter().enumerate() {
        let at_opt = frobenius(&gradient(&c.stats, &c.w.view(), c.lambda, c.beta)) / frobenius(&c.stats.p_cross);
        let probe = normal_matrix(c.w.nrows(), c.w.ncols(), 100 + i as u64);
        let analytic = gradient(&c.stats, &probe.view(), c.lambda, c.beta);
        let fd = finite_difference(&probe, 1e-5, |w| objective(&c.stats, &w.view(), c.lambda, c.beta));
        let fd_err = rel_frobenius(&fd, &analytic);
        ok &= at_opt <= 1e-8 && fd_err <= 1e-4;
        details.push(format!("{} ‖∇‖ {at_opt:.1e}, fd {fd_err:.1e}", c.name));
    }
    check(ok, details.join("; "))
}

fn reduction_identities() -> Outcome {
    let noise = tri!(NoiseSpec::new(0.6, 0));
    let x = uniform_matrix(12, 5, 31);
    let src = [0, 1, 1, 0, 1, 0];
    let tgt = [1, 1, 0, 0, 0, 1];
    let problem = |noise: NoiseSpec, lambda: f64| GlobalAdaptProblem {
        x: x.view(),
        source_labels: &src,
        target_pseudo_labels: &tgt,
        noise,
        lambda,
        beta: 0.0,
        class_count: 2,
        append_bias: false,
    };
    let mda = tri!(solve_mda(&x.view(), &noise, 2.0)).w;
    let ad = tri!(solve_mda_ad(&problem(noise, 2.0))).weights.w;
    let d_global = max_abs_diff(&ad, &mda);

    let single = tri!(partition_by_class(&x.view(), &[0; 6], &[0; 6], 1));
    let local = tri!(solve_mmda(&single, &noise, 2.0, 0.0, false));
    let d_local = max_abs_diff(&local.per_class[&0].w, &mda);

    let clean = tri!(NoiseSpec::new(0.0, 0));
    let full_rank = normal_matrix(20, 5, 32);
    let xw = GlobalAdaptProblem {
        x: full_rank.view(),
        source_labels: &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
        target_pseudo_labels: &[1, 0, 1, 0, 1, 0, 1, 0, 1, 0],
        noise: clean,
        lambda: 0.0,
        beta: 0.0,
        class_count: 2,
        append_bias: false,
    };
    let eye = Array2::eye(5);
    let d_identity = max_abs_diff(&tri!(solve_mda_ad(&xw)).weights.w, &eye)
        .max(max_abs_diff(&tri!(solve_mda(&full_rank.view(), &clean, 0.0)).w, &eye));

    check(
        d_global <= 1e-12 && d_local <= 1e-12 && d_identity <= 1e-8,
        format!(
            "β=0 global {d_global:.1e}, single-class local {d_local:.1e} (≤ 1e-12); identity {d_identity:.1e} (≤ 1e-8)"
        ),
    )
}

fn mmd_structure() -> Outcome {
    let mut r = rng(41);
    let (mut trace_err, mut row_sum, mut min_rayleigh) = (0.0f64, 0.0f64, f64::INFINITY);
    for trial in 0..20 {
        let n_s = r.random_range(2..10);
        let n_t = r.random_range(2..10);
        let d = r.random_range(2..6);
        let k = r.random_range(1..4);
        let x = normal_matrix(n_s + n_t, d, 1000 + trial);
        let w = normal_matrix(d, k, 2000 + trial);
        let xw = x.dot(&w);

        let m0 = tri!(build_marginal_mmd(n_s, n_t));
        let dense = m0.to_dense();
        let trace = (xw.t().dot(&dense).dot(&xw)).diag().sum();
        let src: Vec<usize> = (0..n_s).collect();
        let tgt: Vec<usize> = (n_s..n_s + n_t).collect();
        let diff = mean_of_rows(&xw, &src) - mean_of_rows(&xw, &tgt);
        trace_err = trace_err.max((trace - diff.dot(&diff)).abs() / diff.dot(&diff).max(1.0));

        let ls: Vec<usize> = (0..n_s).map(|_| r.random_range(0..3)).collect();
        let lt: Vec<usize> = (0..n_t).map(|_| r.random_range(0..3)).collect();
        let mut matrices: Vec<MmdMatrix> = vec![m0];
        for c in 0..3 {
            match build_conditional_mmd(&ls, &lt, c, 3) {
                Ok(m) => matrices.push(m),
                Err(ssrlda::Error::EmptyClass { .. }) => {}
                Err(e) => return Outcome::Fail(format!("error: {e}")),
            }
        }
        for m in &matrices {
            let dense = m.to_dense();
            for row in dense.outer_iter() {
                row_sum = row_sum.max(row.sum().abs());
            }
            for _ in 0..10 {
                let z = normal_vector(n_s + n_t, &mut r);
                min_rayleigh = min_rayleigh.min(z.dot(&dense.dot(&z)) / z.dot(&z));
            }
        }
    }
    check(
        trace_err <= 1e-10 && row_sum <= 1e-14 && min_rayleigh >= -1e-10,
        format!("trace vs mean-difference {trace_err:.1e} (≤ 1e-10), |row sum| {row_sum:.1e} (≤ 1e-14), min Rayleigh {min_rayleigh:.1e} (≥ −1e-10)"),
    )
}

fn row_alignment() -> Outcome {
    let mut r = rng(51);
    let noise = tri!(NoiseSpec::new(0.5, 0));
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    let mut trial = 0;
    while trial < 50 {
        let n_s = r.random_range(4..30);
        let n_t = r.random_range(4..30);
        let classes = r.random_range(2..5);
        let d = 3;
        let ls: Vec<usize> = (0..n_s).map(|_| r.random_range(0..classes)).collect();
        let lt: Vec<usize> = (0..n_t).map(|_| r.random_range(0..classes)).collect();
        let n = n_s + n_t;
        // column 0 carries a unique tag per instance
        let mut x = normal_matrix(n, d, 5000 + trial as u64);
        for i in 0..n {
            x[[i, 0]] = (i + 1) as f64 / (n + 1) as f64;
        }
        let partition = match partition_by_class(&x.view(), &ls, &lt, classes) {
            Ok(p) => p,
            Err(ssrlda::Error::AllClassesSkipped) => continue,
            Err(e) => return Outcome::Fail(format!("error: {e}")),
        };
        trial += 1;
        let labels: Vec<usize> = ls.iter().chain(&lt).copied().collect();

        // identity maps: tags must survive at their original rows in both blocks
        let eye = LayerWeights::from_matrix(Array2::eye(d));
        let h1 = tri!(encode_global(&x.view(), &eye));
        let identity_local = ssrlda::adapt_local::LocalWeights {
            per_class: partition.subsets.iter().map(|s| (s.class, eye.clone())).collect(),
        };
        let (h2, zero_rows) = tri!(encode_local(&partition, &identity_local, n));
        if zero_rows != partition.uncovered_rows() {
            mismatches += 1;
        }
        for i in 0..n {
            checked += 1;
            let covered = !zero_rows.contains(&i);
            let tag = ((i + 1) as f64 / (n + 1) as f64).tanh();
            if h1[[i, 0]] != tag
                || (covered && h2[[i, 0]] != h1[[i, 0]])
                || (!covered && h2.row(i).iter().any(|&v| v != 0.0))
            {
                mismatches += 1;
            }
        }

        // learned maps: row i of the local block is tanh(x_i W^(label_i))
        let learned = tri!(solve_mmda(&partition, &noise, 1.0, 5.0, false));
        let (h2, zero_rows) = tri!(encode_local(&partition, &learned, n));
        for i in 0..n {
            if zero_rows.contains(&i) {
                continue;
            }
            let w = &learned.per_class[&labels[i]].w;
            for j in 0..w.ncols() {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += x[[i, k]] * w[[k, j]];
                }
                if (acc.tanh() - h2[[i, j]]).abs() > 1e-12 {
                    mismatches += 1;
                }
            }
        }
    }
    check(
        mismatches == 0,
        format!("50 partitions, {checked} tagged rows, {mismatches} mismatches"),
    )
}

fn synthetic_adaptation() -> Outcome {
    let started = Instant::now();
    let spec = ShiftedGaussianSpec::default();
    let (source, target) = shifted_gaussian_pair(&spec);
    let pair = tri!(make_domain_pair(source, target, 2));
    let truth = pair.held_out_target_labels.clone().expect("labeled target");
    let cfg = synthetic_config();

    let xs = pair.source.dense();
    let xt = pair.target.dense();
    let baseline_model = tri!(train_linear(&xs.view(), pair.source_labels(), &cfg.svm));
    let pseudo = tri!(predict(&baseline_model, &xt.view()));
    let baseline = tri!(ssrlda::classify::accuracy(&pseudo, &truth));
    let out = tri!(run_variant(&pair, &cfg, Variant::Full));
    let adapted = tri!(out.accuracy(&truth));

    let x = tri!(stack_rows(&xs.view(), &xt.view()));
    let n_s = xs.nrows();
    let mut encoded_mmd = Vec::new();
    for beta in [0.0, 10.0] {
        let problem = GlobalAdaptProblem {
            x: x.view(),
            source_labels: pair.source_labels(),
            target_pseudo_labels: &pseudo,
            noise: tri!(cfg.noise_spec()),
            lambda: cfg.lambda,
            beta,
            class_count: 2,
            append_bias: false,
        };
        let h = tri!(encode_global(&x.view(), &tri!(solve_mda_ad(&problem)).weights));
        encoded_mmd.push(tri!(mmd_squared_linear(
            &h.slice(s![..n_s, ..]),
            &h.slice(s![n_s.., ..])
        )));
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        adapted >= baseline + 0.05 && encoded_mmd[1] <= encoded_mmd[0] && secs <= 120.0,
        format!(
            "seed {}: SSRLDA {adapted:.3} vs SVM {baseline:.3} (need +0.05); encoded MMD β=10 {:.4} ≤ β=0 {:.4}; {secs:.1}s (≤ 120s)",
            spec.seed, encoded_mmd[1], encoded_mmd[0]
        ),
    )
}

fn proxy_a_endpoints() -> Outcome {
    let (e0, e25) = (distance_from_error(0.0), distance_from_error(0.25));
    let (a, b) = identical_domains(200, 10, 61);
    let pad = tri!(proxy_a_distance(&a.view(), &b.view(), 5, &Default::default()));
    check(
        e0 == 2.0 && e25 == 1.0 && pad.distance <= 0.3,
        format!(
            "d_A(0) = {e0}, d_A(0.25) = {e25}, identical domains d_A = {:.3} (≤ 0.3)",
            pad.distance
        ),
    )
}

fn dataset_task(name: &str, env: &str, preset: Preset, top_features: Option<usize>, published: f64) -> Outcome {
    let (Some(src), Some(tgt)) = (
        std::env::var_os(format!("{env}_SOURCE")),
        std::env::var_os(format!("{env}_TARGET")),
    ) else {
        return Outcome::Skip(format!("set {env}_SOURCE and {env}_TARGET to run {name}"));
    };
    let mut cfg = AdaptConfig::default();
    preset.apply(&mut cfg);
    cfg.top_features = top_features;
    let pair = tri!(load_pair(&PathBuf::from(src), &PathBuf::from(tgt), &cfg));
    let Some(truth) = pair.held_out_target_labels.clone() else {
        return Outcome::Fail("target file has no labels".into());
    };
    let acc = tri!(tri!(run_variant(&pair, &cfg, Variant::Full)).accuracy(&truth));
    check(
        (acc - published).abs() <= 0.03,
        format!("{name}: {:.2}% vs published {:.2}% ± 3", 100.0 * acc, 100.0 * published),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("closed form matches Monte-Carlo ridge", monte_carlo_oracle),
        ("gradients vanish and match finite differences", gradient_checks),
        ("reduction identities", reduction_identities),
        ("MMD trace form, row sums and PSD", mmd_structure),
        ("h1/h2 row alignment", row_alignment),
        ("end-to-end synthetic adaptation", synthetic_adaptation),
        ("proxy-A-distance endpoints", proxy_a_endpoints),
        ("dataset tier: Reuters Orgs->People", || {
            dataset_task("Orgs->People", "SSRLDA_ORGS_PEOPLE", Preset::Reuters, None, 0.9826)
        }),
        ("dataset tier: 20 Newsgroups Comp->Sci", || {
            dataset_task("Comp->Sci", "SSRLDA_COMP_SCI", Preset::Newsgroups, Some(5000), 0.9252)
        }),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Outcome::Fail("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("PASS  {name} [{secs:.1}s]: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1}s]: {d}");
            }
            Outcome::Skip(d) => println!("SKIP  {name}: {d}"),
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
