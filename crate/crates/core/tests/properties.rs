use cropcritic::egf::{build_mask, select_pivotal, DependencyProfile};
use cropcritic::grpo::advantages;
use cropcritic::metrics::{acc_loc, srcc};
use cropcritic::pcr::{reward_for_error, sharpness, RewardConfig, RewardSchedule, RewardShape};
use cropcritic::pig::{EditInstruction, Editor, SyntheticEditor};
use cropcritic::policy::{Checkpoint, PolicyParams, NUM_PARAMS};
use cropcritic::rng;
use cropcritic::synthenv::{generate, true_score, BBox, EnvConfig, CELL_SIZE, IMAGE_SIZE, NUM_CELLS};
use cropcritic::trajectory::{generated_indices, rollout, Role, DEFAULT_MAX_LEN, MAX_TOOL_CALLS};
use proptest::prelude::*;

fn params_from(seed: u64, scale: f64) -> PolicyParams {
    use rand::Rng;
    let mut r = rng::seeded(seed);
    PolicyParams::from_flat((0..NUM_PARAMS).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

fn cell_of(x: usize, y: usize) -> usize {
    (y / CELL_SIZE) * (IMAGE_SIZE / CELL_SIZE) + x / CELL_SIZE
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn srcc_ignores_monotone_transforms(xs in prop::collection::vec(-10.0f64..10.0, 3..40), seed in any::<u64>()) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x + ((seed.wrapping_add(i as u64) % 7) as f64)).collect();
        prop_assume!(xs.iter().any(|&x| x != xs[0]) && ys.iter().any(|&y| y != ys[0]));
        let a = srcc(&xs, &ys).unwrap();
        let warped: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        let b = srcc(&warped, &ys).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!((srcc(&ys, &xs).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(-5.0f64..5.0, 2..16)) {
        let a = advantages(&rewards);
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
        let var = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        if rewards.iter().all(|&r| r == rewards[0]) {
            prop_assert!(a.iter().all(|&v| v == 0.0));
        } else {
            prop_assert!(var <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn rewards_stay_in_range(k in 0.0f64..40.0, e in 0.0f64..16.0) {
        let sig = RewardConfig { shape: RewardShape::Sigmoid, ..RewardConfig::default() };
        let exp = RewardConfig::default();
        let rs = reward_for_error(&sig, k, e);
        let re = reward_for_error(&exp, k, e);
        prop_assert!(rs >= 0.0 && rs <= 1.0);
        prop_assert!(re >= exp.epsilon && re <= 1.0 + exp.epsilon);
    }

    #[test]
    fn sharpness_is_bounded_and_nondecreasing(total in 1usize..5000, a in 0usize..6000, b in 0usize..6000) {
        let s = RewardSchedule { total_steps: total, ..RewardSchedule::default() };
        let (lo, hi) = (a.min(b), a.max(b));
        let (kl, kh) = (sharpness(&s, lo), sharpness(&s, hi));
        prop_assert!(kl <= kh);
        prop_assert!(kl >= s.k_min && kh <= s.k_max);
    }

    #[test]
    fn acc_loc_grows_with_more_crops(seed in any::<u64>(), n in 1usize..5, cells in prop::collection::vec(0usize..NUM_CELLS, 1..6)) {
        let img = generate(seed, n);
        let boxes: Vec<BBox> = cells.iter().map(|&c| BBox::cell(c)).collect();
        let mut prev = 0.0;
        for i in 1..=boxes.len() {
            let v = acc_loc(&boxes[..i], &img.patches);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(v >= prev);
            prev = v;
        }
        let all: Vec<BBox> = (0..NUM_CELLS).map(BBox::cell).collect();
        prop_assert_eq!(acc_loc(&all, &img.patches), 1.0);
    }

    #[test]
    fn rollouts_respect_the_protocol(img_seed in any::<u64>(), n in 0usize..4, p_seed in any::<u64>(), scale in 0.0f64..2.0) {
        let img = generate(img_seed, n);
        let policy = params_from(p_seed, scale);
        let traj = rollout(&policy, &img, &mut rng::seeded(p_seed ^ img_seed), DEFAULT_MAX_LEN).unwrap();
        traj.check(DEFAULT_MAX_LEN).unwrap();
        prop_assert!(traj.tool_calls <= MAX_TOOL_CALLS);
        prop_assert!(traj.len() <= DEFAULT_MAX_LEN);
        for t in &traj.tokens {
            let obs = t.role == Role::Observation;
            prop_assert_eq!(obs, !t.loss_mask);
            prop_assert_eq!(obs, t.logprob_old.is_none());
        }
        if let Some(y) = traj.predicted_score {
            prop_assert!((1.0..=5.0).contains(&y));
        }
        let every: Vec<usize> = (0..traj.len()).collect();
        let m = build_mask(&traj, &every, true);
        for (t, &b) in traj.tokens.iter().zip(&m.mask) {
            prop_assert!(!(b && t.role == Role::Observation));
        }
        prop_assert_eq!(m.count(), generated_indices(&traj).len());
    }

    #[test]
    fn pivotal_count_is_ceiling(scores in prop::collection::vec(0.0f64..1.0, 1..40), k in 0.01f64..1.0) {
        let n = scores.len();
        let prof = DependencyProfile { positions: (0..n).map(|i| 2 * i).collect(), scores };
        let picked = select_pivotal(&prof, k);
        prop_assert_eq!(picked.len(), ((k * n as f64).ceil() as usize).min(n));
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn edits_only_touch_target_cells(seed in any::<u64>(), n in 1usize..5, targets in prop::collection::btree_set(0usize..NUM_CELLS, 1..4), strength in 0.05f64..1.0) {
        let img = generate(seed, n);
        let editor = SyntheticEditor { env: EnvConfig::default() };
        let targets: Vec<usize> = targets.into_iter().collect();
        let out = editor.edit(&img, &EditInstruction { target_cells: targets.clone(), strength }).unwrap();
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                if !targets.contains(&cell_of(x, y)) {
                    prop_assert_eq!(out.pixels.get(x, y).to_bits(), img.pixels.get(x, y).to_bits());
                }
            }
        }
        prop_assert!(true_score(&out) >= true_score(&img));
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), step in 0u64..100_000) {
        let p = params_from(seed, 3.0);
        let c = Checkpoint::new(&p, step, seed);
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.params().unwrap(), p);
    }
}
