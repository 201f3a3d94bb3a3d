use platesmith_core::ddpm::{
    gaussian, sample_loop, sample_rng, training_loss, DiffusionSample, NoiseSchedule, ScheduleConfig,
};

/// For data N(m, s^2) the optimal noise prediction is known in closed form:
/// eps* = sqrt(1 - abar) (x_t - sqrt(abar) m) / (abar s^2 + 1 - abar).
fn exact_predictor(sched: &NoiseSchedule<f64>, m: f64, s: f64) -> impl Fn(&[f64], usize) -> Vec<f64> + Sync + '_ {
    move |xt: &[f64], t: usize| {
        let a = sched.alpha_bar(t);
        let var = a * s * s + 1.0 - a;
        xt.iter().map(|x| (1.0 - a).sqrt() * (x - a.sqrt() * m) / var).collect()
    }
}

#[test]
fn analytic_score_recovers_gaussian() {
    let sched: NoiseSchedule<f64> = ScheduleConfig::default().build().unwrap();
    let (m, s) = (1.5, 0.4);
    let n = 4000;
    let out = sample_loop(&exact_predictor(&sched, m, s), &sched, n, 1, 3).unwrap();
    let mean = out.iter().map(|x| x[0]).sum::<f64>() / n as f64;
    let var = out.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - m).abs() < 4.0 * s / (n as f64).sqrt(), "mean {mean}");
    assert!((var - s * s).abs() / (s * s) < 0.1, "variance {var}");
}

#[test]
fn analytic_score_on_shortened_chain() {
    let sched: NoiseSchedule<f64> = ScheduleConfig::shortened(100).unwrap().build().unwrap();
    let (m, s) = (-0.5, 0.8);
    let n = 4000;
    let out = sample_loop(&exact_predictor(&sched, m, s), &sched, n, 1, 4).unwrap();
    let mean = out.iter().map(|x| x[0]).sum::<f64>() / n as f64;
    let var = out.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - m).abs() < 4.0 * s / (n as f64).sqrt(), "mean {mean}");
    assert!((var - s * s).abs() / (s * s) < 0.1, "variance {var}");
}

#[test]
fn sampling_is_reproducible_per_index() {
    let sched: NoiseSchedule<f64> = ScheduleConfig::shortened(20).unwrap().build().unwrap();
    let pred = exact_predictor(&sched, 0.0, 1.0);
    let a = sample_loop(&pred, &sched, 5, 3, 11).unwrap();
    let b = sample_loop(&pred, &sched, 8, 3, 11).unwrap();
    assert_eq!(a[..], b[..5]);
    assert_ne!(a, sample_loop(&pred, &sched, 5, 3, 12).unwrap());
}

#[test]
fn loss_matches_scripted_recomputation() {
    let sched: NoiseSchedule<f64> = ScheduleConfig::shortened(50).unwrap().build().unwrap();
    let mut rng = sample_rng(5, 0);
    let batch: Vec<DiffusionSample<f64>> = (0..6)
        .map(|i| {
            let x0 = gaussian(&mut rng, 7);
            let eps = gaussian(&mut rng, 7);
            DiffusionSample::new(x0, 1 + 9 * i, eps, &sched).unwrap()
        })
        .collect();
    let pred = |xt: &[f64], t: usize| xt.iter().map(|x| 0.5 * x - 0.01 * t as f64).collect::<Vec<_>>();
    let got = training_loss(&pred, &batch, &sched).unwrap();

    let mut total = 0.0;
    for s in &batch {
        let a = sched.alpha_bar(s.t);
        for k in 0..7 {
            let xt = a.sqrt() * s.x0[k] + (1.0 - a).sqrt() * s.eps[k];
            assert!((xt - s.xt[k]).abs() < 1e-15);
            total += (s.eps[k] - (0.5 * xt - 0.01 * s.t as f64)).powi(2);
        }
    }
    assert!((got - total / 42.0).abs() < 1e-12);
}
