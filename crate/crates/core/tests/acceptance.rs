//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::process::ExitCode;
use std::time::Instant;

use cropcritic::egf::{build_mask, dependency_scores_against, select_pivotal, DependencyHistogram, DependencyProfile};
use cropcritic::experiments::{ablation_csv, arm_mean_srcc, collect_dependencies, find_arm, run_arm, AblationRow};
use cropcritic::grpo::{
    advantages, collect_group, curve_csv, distorted_images, gradient, heldout_images, importance_ratio, objective,
    train, GroupBatch, TrainConfig, TrainingReport,
};
use cropcritic::metrics::{acc_loc, evaluate, evidence_perturb_eval, plcc, random_tool_acc_loc, srcc};
use cropcritic::pcr::{reward_for_error, sharpness, RewardConfig, RewardSchedule, RewardShape};
use cropcritic::pig::{artifact_threshold, iteration_rows, refine_loop, Critic, SyntheticEditor, DEFAULT_STRENGTH, Verdict, ITERATION_HEADER};
use cropcritic::policy::{PolicyParams, NUM_PARAMS};
use cropcritic::rng;
use cropcritic::synthenv::{generate, generate_with, BBox, DistortionKind, DistortionPatch, IMAGE_SIZE};
use cropcritic::trajectory::{generated_indices, Role, FEATURE_DIM, VOCAB_SIZE};
use rand::seq::SliceRandom;
use rand::Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const HELDOUT: usize = 200;
const PIG_IMAGES: usize = 100;
const PIG_ROUNDS: usize = 3;
const TRAIN_BUDGET_SECS: f64 = 300.0;

type Check = Result<String, String>;

fn pass_if(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_params(r: &mut impl Rng, scale: f64) -> PolicyParams {
    PolicyParams::from_flat((0..NUM_PARAMS).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn criterion_1() -> Check {
    let schedule = RewardSchedule::default();
    let total = schedule.total_steps;
    let with = |shape| RewardConfig {
        shape,
        ..RewardConfig::default()
    };
    let sig = with(RewardShape::Sigmoid);
    let exp = with(RewardShape::Exponential);
    for k in [0.0, 1.0, 5.0, 15.0, 25.0] {
        if reward_for_error(&sig, k, 0.0) != 1.0 {
            return Err(format!("sigmoid at e=0, k={k} is not 1"));
        }
        if reward_for_error(&exp, k, 0.0) != 1.0 + exp.epsilon {
            return Err(format!("exponential at e=0, k={k} is not 1+eps"));
        }
    }
    let t_mid = (schedule.tau * total as f64).round() as usize;
    let k_mid = sharpness(&schedule, t_mid);
    if (k_mid - 15.0).abs() > 1e-12 {
        return Err(format!("k(tau T) = {k_mid}"));
    }
    let ts: Vec<usize> = linspace(0.0, total as f64, 100).iter().map(|t| t.round() as usize).collect();
    let es = linspace(0.0, 1.0, 100);
    let mut last_k = f64::NEG_INFINITY;
    for &t in &ts {
        let k = sharpness(&schedule, t);
        let closed = 5.0 + 20.0 / (1.0 + (-(10.0 * (t as f64 / total as f64 - 0.5))).exp());
        if (k - closed).abs() > 1e-12 || k < last_k {
            return Err(format!("k({t}) = {k}, closed form {closed}, previous {last_k}"));
        }
        last_k = k;
        for cfg in [&sig, &exp] {
            let mut last_r = f64::INFINITY;
            for &e in &es {
                let r = reward_for_error(cfg, k, e);
                if r > last_r {
                    return Err(format!("{:?} reward rises at t={t}, e={e}", cfg.shape));
                }
                last_r = r;
            }
        }
    }
    Ok(format!("k(tau T)={k_mid}, monotone on 100x100 grid"))
}

fn batch_under(seed: u64, old: &PolicyParams, config: &TrainConfig) -> GroupBatch {
    let img = generate(seed, (seed % 4) as usize);
    collect_group(config, &config.effective_reward(), old, img, seed, seed as usize, None).unwrap()
}

fn criterion_2() -> Check {
    let h = 1e-5;
    let mut r = rng::seeded(2024);
    let mut worst_policy = 0.0f64;
    for _ in 0..20 {
        let p = random_params(&mut r, 0.5);
        let x: Vec<f64> = (0..FEATURE_DIM).map(|_| r.gen_range(-1.0..1.0)).collect();
        let a = r.gen_range(0..VOCAB_SIZE);
        let g = p.grad_logprob(&x, a).unwrap();
        for i in 0..NUM_PARAMS {
            let mut q = p.clone();
            q.flat_mut()[i] += h;
            let up = q.logprob(&x, a).unwrap();
            q.flat_mut()[i] -= 2.0 * h;
            let dn = q.logprob(&x, a).unwrap();
            worst_policy = worst_policy.max(rel_err(g[i], (up - dn) / (2.0 * h)));
        }
    }
    let config = TrainConfig {
        beta_kl: 0.05,
        ..TrainConfig::default()
    };
    let mut worst_full = 0.0f64;
    let mut clipped = 0;
    for case in 0..20u64 {
        let old = random_params(&mut r, 0.3);
        let b = batch_under(1000 + case, &old, &config);
        let theta = random_params(&mut r, 0.3);
        let reference = random_params(&mut r, 0.3);
        let any_clipped = b.trajectories.iter().zip(&b.masks).any(|(t, m)| {
            generated_indices(t).into_iter().any(|i| {
                let ratio = importance_ratio(&theta, t, i).unwrap();
                m.mask[i] && (ratio < 1.0 - config.clip_eps || ratio > 1.0 + config.clip_eps)
            })
        });
        clipped += usize::from(any_clipped);
        let g = gradient(&theta, &reference, &b, &config).unwrap();
        for i in 0..NUM_PARAMS {
            let mut q = theta.clone();
            q.flat_mut()[i] += h;
            let up = objective(&q, &reference, &b, &config).unwrap();
            q.flat_mut()[i] -= 2.0 * h;
            let dn = objective(&q, &reference, &b, &config).unwrap();
            worst_full = worst_full.max(rel_err(g[i], (up - dn) / (2.0 * h)));
        }
    }
    pass_if(
        worst_policy < 1e-4 && worst_full < 1e-3 && clipped > 0,
        format!("policy max rel {worst_policy:.2e}, objective max rel {worst_full:.2e}, {clipped}/20 batches clipped"),
    )
}

fn criterion_3() -> Check {
    let mut r = rng::seeded(33);
    let config = TrainConfig {
        beta_kl: 0.0,
        ..TrainConfig::default()
    };
    let mut worst_ratio = 0.0f64;
    let mut worst_sum = 0.0f64;
    for case in 0..20u64 {
        let old = random_params(&mut r, 0.3);
        let b = batch_under(2000 + case, &old, &config);
        for t in &b.trajectories {
            for i in generated_indices(t) {
                worst_ratio = worst_ratio.max((importance_ratio(&old, t, i).unwrap() - 1.0).abs());
            }
        }
        worst_sum = worst_sum.max(b.advantages.iter().sum::<f64>().abs());
        let rewards: Vec<f64> = (0..8).map(|_| r.gen_range(-3.0..3.0)).collect();
        worst_sum = worst_sum.max(advantages(&rewards).iter().sum::<f64>().abs());
    }
    let old = random_params(&mut r, 0.3);
    let mut b = batch_under(2100, &old, &config);
    b.rewards = vec![0.61; b.trajectories.len()];
    b.advantages = advantages(&b.rewards);
    let theta = random_params(&mut r, 0.3);
    let g = gradient(&theta, &old, &b, &config).unwrap();
    let max_g = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    pass_if(
        worst_ratio <= 1e-12 && worst_sum <= 1e-10 && max_g == 0.0,
        format!("max |r-1| {worst_ratio:.1e}, max |sum A| {worst_sum:.1e}, equal-reward grad max {max_g:.1e}"),
    )
}

fn criterion_4(trained: &PolicyParams, config: &TrainConfig) -> Check {
    let mut r = rng::seeded(44);
    for case in 0..20u64 {
        let img = generate(3000 + case, (case % 4) as usize);
        let traj = cropcritic::trajectory::rollout(trained, &img, &mut r, config.max_len).unwrap();
        let prof = dependency_scores_against(trained, &traj, &img, &img, config.max_len).unwrap();
        if prof.scores.iter().any(|&s| s != 0.0) {
            return Err(format!("nonzero dependency with identical images (case {case})"));
        }
        let every: Vec<usize> = (0..traj.len()).collect();
        for keep in [false, true] {
            let m = build_mask(&traj, &every, keep);
            if traj.tokens.iter().zip(&m.mask).any(|(t, &b)| b && t.role == Role::Observation) {
                return Err(format!("mask sets an observation position (case {case})"));
            }
        }
    }
    for _ in 0..100 {
        let positions: Vec<usize> = {
            let mut p: Vec<usize> = (0..30).collect();
            p.shuffle(&mut r);
            let mut p = p[..10].to_vec();
            p.sort_unstable();
            p
        };
        let scores: Vec<f64> = (0..10).map(|_| f64::from(r.gen_range(0..6u8)) * 0.1).collect();
        let picked = select_pivotal(
            &DependencyProfile {
                positions: positions.clone(),
                scores: scores.clone(),
            },
            0.4,
        );
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut oracle: Vec<usize> = order[..4].iter().map(|&i| positions[i]).collect();
        oracle.sort_unstable();
        if picked != oracle {
            return Err(format!("select_pivotal {picked:?} vs oracle {oracle:?}"));
        }
    }
    let images = heldout_images(config, 0, HELDOUT);
    let dep = collect_dependencies(trained, &images, 0, config).unwrap();
    let (pre, post) = (dep.pre_tool_mean(), dep.post_observation_mean());
    pass_if(
        post > pre,
        format!(
            "post-observation mean {post:.4e} ({} tokens) vs pre-tool mean {pre:.4e} ({} tokens)",
            dep.post_observation.len(),
            dep.pre_tool.len()
        ),
    )
}

fn brute_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&v| v < x).count() as f64;
            let equal = xs.iter().filter(|&&v| v == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(a, b)| a * b).sum();
    let sxx: f64 = xs.iter().map(|a| a * a).sum();
    let syy: f64 = ys.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Small integers when `tied`, so repeated values are common.
fn draw(r: &mut impl Rng, tied: bool) -> f64 {
    if tied {
        f64::from(r.gen_range(0..5u8))
    } else {
        r.gen_range(-2.0..2.0)
    }
}

fn random_box(r: &mut impl Rng) -> BBox {
    let x0 = r.gen_range(0..IMAGE_SIZE);
    let y0 = r.gen_range(0..IMAGE_SIZE);
    BBox::new(x0, y0, r.gen_range(x0 + 1..=IMAGE_SIZE), r.gen_range(y0 + 1..=IMAGE_SIZE))
}

fn criterion_5() -> Check {
    let mut r = rng::seeded(55);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = r.gen_range(5..60);
        let tied = case % 2 == 0;
        let xs: Vec<f64> = (0..n).map(|_| draw(&mut r, tied)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + draw(&mut r, tied)).collect();
        let want_p = brute_pearson(&xs, &ys);
        let want_s = brute_pearson(&brute_ranks(&xs), &brute_ranks(&ys));
        if !(want_p.is_finite() && want_s.is_finite()) {
            continue;
        }
        worst = worst.max((plcc(&xs, &ys).unwrap() - want_p).abs());
        worst = worst.max((srcc(&xs, &ys).unwrap() - want_s).abs());
    }
    if worst > 1e-10 {
        return Err(format!("correlation max abs err {worst:.2e}"));
    }
    for case in 0..100 {
        let crops: Vec<BBox> = (0..r.gen_range(1..5)).map(|_| random_box(&mut r)).collect();
        let patches: Vec<DistortionPatch> = (0..r.gen_range(0..5))
            .map(|_| DistortionPatch {
                bbox: random_box(&mut r),
                kind: DistortionKind::Noise,
                intensity: 0.5,
                salt: 0,
            })
            .collect();
        let gt: HashSet<(usize, usize)> = patches
            .iter()
            .flat_map(|p| (p.bbox.y0..p.bbox.y1).flat_map(move |y| (p.bbox.x0..p.bbox.x1).map(move |x| (x, y))))
            .collect();
        let seen: HashSet<(usize, usize)> = crops
            .iter()
            .flat_map(|c| (c.y0..c.y1).flat_map(move |y| (c.x0..c.x1).map(move |x| (x, y))))
            .collect();
        let want = if gt.is_empty() {
            0.0
        } else {
            gt.intersection(&seen).count() as f64 / gt.len() as f64
        };
        let got = acc_loc(&crops, &patches);
        if got != want {
            return Err(format!("acc_loc case {case}: {got} vs {want}"));
        }
    }
    Ok(format!("correlation max abs err {worst:.2e}; acc_loc exact on 100 configs"))
}

struct SeedRun {
    seed: u64,
    report: TrainingReport,
    train_secs: f64,
    srcc_drop: f64,
    clean_srcc: f64,
    perturbed_srcc: f64,
    acc_loc: f64,
    random_acc_loc: f64,
    pig_trace: Vec<f64>,
    pig_max_edits: usize,
    clean_early_stop: f64,
    theta_art: f64,
}

struct Pipeline {
    runs: Vec<SeedRun>,
    ablation_rows: Vec<AblationRow>,
    csvs: BTreeMap<String, String>,
}

fn seed_run(config: &TrainConfig, seed: u64, csvs: &mut BTreeMap<String, String>) -> SeedRun {
    let start = Instant::now();
    let report = train(config, seed).expect("training");
    let train_secs = start.elapsed().as_secs_f64();
    let params = &report.params;
    csvs.insert(format!("{seed}/curve.csv"), curve_csv(&report.curve));
    csvs.insert(
        format!("{seed}/eval_records.csv"),
        report.final_eval.as_ref().expect("final eval").records_csv(),
    );

    let heldout = heldout_images(config, seed, HELDOUT);
    let ep = evidence_perturb_eval(params, &heldout, seed, &config.env, &config.egf.perturb, config.max_len).unwrap();
    csvs.insert(format!("{seed}/eval_perturbed_records.csv"), ep.perturbed.records_csv());

    let distorted = distorted_images(config, seed, HELDOUT);
    let loc = evaluate(params, &distorted, &config.env, None, config.max_len).unwrap();
    let random_acc_loc = random_tool_acc_loc(&loc, &distorted, seed);
    csvs.insert(format!("{seed}/grounding_records.csv"), loc.records_csv());

    let mut critic = Critic::new(params.clone(), artifact_threshold(&config.env, seed));
    critic.max_len = config.max_len;
    let editor = SyntheticEditor { env: config.env.clone() };
    let mut pig_csv = format!("{ITERATION_HEADER}\n");
    let mut trace = vec![0.0; PIG_ROUNDS + 1];
    let mut max_edits = 0;
    let pig_images = distorted_images(config, seed, PIG_IMAGES);
    for img in &pig_images {
        let out = refine_loop(&critic, &editor, &config.env, img, PIG_ROUNDS, DEFAULT_STRENGTH).unwrap();
        pig_csv.push_str(&iteration_rows(img.seed, &out));
        for (acc, v) in trace.iter_mut().zip(out.score_trace(PIG_ROUNDS)) {
            *acc += v / pig_images.len() as f64;
        }
        max_edits = max_edits.max(out.edits());
    }
    csvs.insert(format!("{seed}/pig_iterations.csv"), pig_csv);
    let stops = (0..PIG_IMAGES)
        .filter(|&i| {
            let clean = generate_with(&config.env, rng::derive_seed(seed, "pig-clean", i as u64), 0);
            let out = refine_loop(&critic, &editor, &config.env, &clean, PIG_ROUNDS, DEFAULT_STRENGTH).unwrap();
            out.history[0].diagnosis.verdict == Verdict::Satisfactory
        })
        .count();

    SeedRun {
        seed,
        train_secs,
        srcc_drop: ep.srcc_drop(),
        clean_srcc: ep.clean.srcc,
        perturbed_srcc: ep.perturbed.srcc,
        acc_loc: loc.acc_loc,
        random_acc_loc,
        pig_trace: trace,
        pig_max_edits: max_edits,
        clean_early_stop: stops as f64 / PIG_IMAGES as f64,
        theta_art: critic.theta_art,
        report,
    }
}

fn pipeline(config: &TrainConfig) -> Pipeline {
    let mut csvs = BTreeMap::new();
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| seed_run(config, s, &mut csvs)).collect();

    let arms: Vec<_> = ["egf_pcr", "egf_gauss", "binary"].iter().map(|n| find_arm(n).unwrap()).collect();
    assert_eq!(arms[0].apply(config), *config, "the full method arm must be the default config");
    let mut rows: Vec<AblationRow> = runs
        .iter()
        .map(|r| {
            let e = r.report.final_eval.as_ref().unwrap();
            AblationRow {
                arm: arms[0].name.clone(),
                seed: r.seed,
                plcc: e.plcc,
                srcc: e.srcc,
                acc_loc: e.acc_loc,
            }
        })
        .collect();
    for arm in &arms[1..] {
        for &s in &SEEDS {
            rows.push(run_arm(config, arm, s).unwrap());
        }
    }
    csvs.insert("ablation.csv".into(), ablation_csv(&arms, &rows));

    let dep = collect_dependencies(&runs[0].report.params, &heldout_images(config, 0, HELDOUT), 0, config).unwrap();
    csvs.insert("0/dependency_histogram.csv".into(), DependencyHistogram::build(&dep.all, 20, 0.2, 0.01).to_csv());
    Pipeline {
        runs,
        ablation_rows: rows,
        csvs,
    }
}

fn criterion_6(p: &Pipeline) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &p.runs {
        let untrained = r.report.untrained_eval.as_ref().unwrap().srcc;
        let trained = r.report.final_eval.as_ref().unwrap().srcc;
        ok &= trained >= untrained + 0.3 && trained >= 0.6 && r.train_secs <= TRAIN_BUDGET_SECS;
        parts.push(format!("seed {}: {untrained:.3} -> {trained:.3} in {:.1}s", r.seed, r.train_secs));
    }
    pass_if(ok, parts.join("; "))
}

fn criterion_7(p: &Pipeline) -> Check {
    let pcr = arm_mean_srcc(&p.ablation_rows, "egf_pcr");
    let gauss = arm_mean_srcc(&p.ablation_rows, "egf_gauss");
    let binary = arm_mean_srcc(&p.ablation_rows, "binary");
    pass_if(
        pcr >= gauss && gauss >= binary && pcr - binary >= 0.02,
        format!("mean SRCC pcr+egf {pcr:.4}, gauss+egf {gauss:.4}, binary {binary:.4}, margin {:.4}", pcr - binary),
    )
}

fn criterion_8(p: &Pipeline) -> Check {
    let ok = p.runs.iter().all(|r| r.srcc_drop > 0.0);
    let parts: Vec<String> = p
        .runs
        .iter()
        .map(|r| format!("seed {}: {:.4} -> {:.4} (drop {:.4})", r.seed, r.clean_srcc, r.perturbed_srcc, r.srcc_drop))
        .collect();
    pass_if(ok, parts.join("; "))
}

fn criterion_9(p: &Pipeline) -> Check {
    let ok = p.runs.iter().all(|r| r.acc_loc >= 0.4 && r.acc_loc >= 2.0 * r.random_acc_loc);
    let parts: Vec<String> = p
        .runs
        .iter()
        .map(|r| format!("seed {}: acc_loc {:.3} vs random {:.3}", r.seed, r.acc_loc, r.random_acc_loc))
        .collect();
    pass_if(ok, parts.join("; "))
}

fn criterion_10(p: &Pipeline) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &p.runs {
        let t = &r.pig_trace;
        let nondecreasing = t.windows(2).all(|w| w[1] >= w[0]);
        let gain = t[PIG_ROUNDS] - t[0];
        ok &= nondecreasing && gain >= 0.3 && r.pig_max_edits <= PIG_ROUNDS && r.clean_early_stop >= 0.9;
        parts.push(format!(
            "seed {}: trace {} gain {gain:.3}, max edits {}, clean early stop {:.0}%, theta_art {:.3e}",
            r.seed,
            t.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join("/"),
            r.pig_max_edits,
            100.0 * r.clean_early_stop,
            r.theta_art
        ));
    }
    pass_if(ok, parts.join("; "))
}

fn criterion_11(a: &Pipeline, b: &Pipeline) -> Check {
    let differing: Vec<&String> = a.csvs.keys().filter(|k| a.csvs.get(*k) != b.csvs.get(*k)).collect();
    pass_if(
        differing.is_empty() && a.csvs.len() == b.csvs.len(),
        if differing.is_empty() {
            format!("{} CSV files byte-identical across reruns", a.csvs.len())
        } else {
            format!("differing: {differing:?}")
        },
    )
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--list`; there is nothing to list.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let mut results: Vec<(u32, Check)> = Vec::new();
    let mut report = |n: u32, c: Check| {
        match &c {
            Ok(d) => println!("criterion {n}: PASS {d}"),
            Err(d) => println!("criterion {n}: FAIL {d}"),
        }
        results.push((n, c));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(5, criterion_5());

    let config = TrainConfig::default();
    let first = pipeline(&config);
    report(4, criterion_4(&first.runs[0].report.params, &config));
    report(6, criterion_6(&first));
    report(7, criterion_7(&first));
    report(8, criterion_8(&first));
    report(9, criterion_9(&first));
    report(10, criterion_10(&first));
    let second = pipeline(&config);
    report(11, criterion_11(&first, &second));

    results.sort_by_key(|(n, _)| *n);
    let failed: Vec<u32> = results.iter().filter(|(_, c)| c.is_err()).map(|(n, _)| *n).collect();
    println!("\nacceptance summary ({:.0}s):", start.elapsed().as_secs_f64());
    for (n, c) in &results {
        println!("  criterion {n}: {}", if c.is_ok() { "PASS" } else { "FAIL" });
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
