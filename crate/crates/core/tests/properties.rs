use optlab::harness::{clip_gradients, global_norm, resolve, RunConfig};
use optlab::numerics::{gram_rows, matmul, Matrix};
use optlab::optim::{
    lion_step, sfadamw_step, signum_step, LionHyper, ScheduleFreeHyper, ScheduleFreeState, SignState, SignumHyper,
};
use optlab::schedules::{lr_at, ScheduleFamily, ScheduleSpec};
use optlab::OptimizerKind;
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = OptimizerKind> {
    (0..OptimizerKind::ALL.len()).prop_map(|i| OptimizerKind::ALL[i])
}

fn family() -> impl Strategy<Value = ScheduleFamily> {
    prop_oneof![
        Just(ScheduleFamily::Constant),
        Just(ScheduleFamily::Cosine),
        Just(ScheduleFamily::Linear),
        Just(ScheduleFamily::Wsd),
    ]
}

fn grads(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_text_and_json_round_trip(
        kind in kind(),
        fam in family(),
        steps in 20u64..5000,
        seed in any::<u64>(),
        lr_exp in -5.0..0.0f64,
        warmup_frac in 0.0..0.5f64,
        wd in 0.0..1.0f64,
        clip in prop::option::of(0.1..10.0f64),
        mlp in any::<bool>(),
        halve in any::<bool>(),
    ) {
        let mut text = format!(
            "steps = {steps}\nseed = {seed}\noptimizer = {}\nlr = {:?}\nweight_decay = {wd:?}\n\
             schedule.kind = {fam}\nschedule.warmup = {}\nschedule.halve_for_wsd = {halve}\n",
            kind.name(),
            10f64.powf(lr_exp),
            (warmup_frac * steps as f64) as u64,
        );
        if let Some(c) = clip {
            text.push_str(&format!("clip = {c:?}\n"));
        }
        if mlp {
            text.push_str("problem.kind = mlp\n");
        }
        let config = resolve::<&str>(Some(&text), &[]).unwrap().config;
        let again = resolve::<&str>(Some(&config.to_kv()), &[]).unwrap().config;
        prop_assert_eq!(&again, &config);
        prop_assert_eq!(again.hash(), config.hash());
        let json = serde_json::to_string(&config).unwrap();
        prop_assert_eq!(RunConfig::from_json(&json).unwrap(), config);
    }

    #[test]
    fn schedule_stays_within_peak(
        fam in family(),
        total in 1u64..3000,
        warmup_frac in 0.0..0.9f64,
        peak in 1e-6..10.0f64,
    ) {
        let warmup = (warmup_frac * total as f64) as u64;
        let spec = ScheduleSpec::new(fam, peak, warmup, total);
        let mut prev = 0.0;
        for t in 1..=total {
            let lr = lr_at(&spec, t).unwrap();
            prop_assert!(lr > 0.0 && lr <= peak * (1.0 + 1e-12), "lr {lr} at {t}");
            if t <= warmup {
                prop_assert!(lr >= prev);
            }
            prev = lr;
        }
    }

    #[test]
    fn schedule_free_average_is_convex(
        gs in prop::collection::vec(grads(5), 1..40),
        warmup in 0u64..10,
        wd in 0.0..0.2f64,
    ) {
        let h = ScheduleFreeHyper { lr: 0.05, weight_decay: wd, eps: 1e-8, beta1: 0.9, beta2: 0.999, warmup_steps: warmup };
        let mut x = vec![0.5; 5];
        let mut st = ScheduleFreeState::new(&x);
        for g in &gs {
            let before = st.x_avg.clone();
            sfadamw_step(&mut x, g, &mut st, &h).unwrap();
            for i in 0..5 {
                let (lo, hi) = (before[i].min(st.z[i]), before[i].max(st.z[i]));
                let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                prop_assert!(st.x_avg[i] >= lo - slack && st.x_avg[i] <= hi + slack);
                let (ylo, yhi) = (st.x_avg[i].min(st.z[i]), st.x_avg[i].max(st.z[i]));
                prop_assert!(x[i] >= ylo - slack && x[i] <= yhi + slack);
            }
        }
    }

    #[test]
    fn sign_rules_ignore_power_of_two_gradient_scale(
        gs in prop::collection::vec(grads(6), 1..30),
        k in -20i32..20,
        nesterov in any::<bool>(),
    ) {
        let c = 2f64.powi(k);
        let lion = LionHyper { lr: 1e-2, weight_decay: 0.0, beta1: 0.9, beta2: 0.99 };
        let signum = SignumHyper {
            lr: 1e-2,
            weight_decay: 0.0,
            momentum: 0.9,
            dampening: 0.9,
            nesterov,
            coupled_weight_decay: false,
        };
        let (mut xa, mut xb, mut ya, mut yb) = (vec![1.0; 6], vec![1.0; 6], vec![1.0; 6], vec![1.0; 6]);
        let (mut la, mut lb, mut sa, mut sb) = (SignState::new(6), SignState::new(6), SignState::new(6), SignState::new(6));
        for g in &gs {
            let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
            lion_step(&mut xa, g, &mut la, &lion);
            lion_step(&mut xb, &scaled, &mut lb, &lion);
            signum_step(&mut ya, g, &mut sa, &signum);
            signum_step(&mut yb, &scaled, &mut sb, &signum);
        }
        prop_assert_eq!(xa, xb);
        prop_assert_eq!(ya, yb);
    }

    #[test]
    fn clipping_keeps_direction_and_bounds_norm(
        blocks in prop::collection::vec(grads(4), 1..4),
        threshold in 0.01..50.0f64,
    ) {
        let mut clipped = blocks.clone();
        let before = clip_gradients(&mut clipped, threshold).unwrap();
        prop_assert_eq!(before, global_norm(&blocks));
        let after = global_norm(&clipped);
        prop_assert!(after <= threshold * (1.0 + 1e-12) || after == before);
        let scale = if before > threshold { threshold / before } else { 1.0 };
        for (a, b) in clipped.iter().flatten().zip(blocks.iter().flatten()) {
            prop_assert!((a - scale * b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn gram_matches_explicit_product(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>()) {
        let mut rng = optlab::Rng::new(seed);
        let a = Matrix::new(rows, cols, rng.normals(rows * cols)).unwrap();
        let g = gram_rows(&a);
        let explicit = matmul(&a, &a.transpose()).unwrap();
        prop_assert_eq!(g.data(), explicit.data());
    }
}
