use std::f64::consts::PI;

use trapsim::asymptotics::range_cdf_1d;
use trapsim::parallel::substream;
use trapsim::survival::{annealed_direct, annealed_range, annealed_softrange, SurvivalEstimate};
use trapsim::{JumpKernel, KillRate, ModelParams, Site, WalkPath};

/// `E|Range_t|` of the d = 1 simple walk from its exact law.
fn exact_mean_range(kappa: f64, t: f64) -> f64 {
    let cap = (8.0 * t.sqrt() + 20.0) as u32 * 4;
    (0..cap).map(|r| 1.0 - range_cdf_1d(r, kappa, t)).sum()
}

#[test]
fn mean_range_follows_square_root_law() {
    let t = 400.0;
    let kernel = JumpKernel::simple(1, 1.0).unwrap();
    let n = 10_000;
    let mut rng = substream(4_000, 0);
    let sizes: Vec<f64> = (0..n)
        .map(|_| WalkPath::sample(&kernel, Site::ORIGIN, t, &mut rng).range_size() as f64)
        .collect();
    let mean = sizes.iter().sum::<f64>() / n as f64;
    let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var / n as f64).sqrt();

    let exact = exact_mean_range(1.0, t);
    assert!((mean - exact).abs() <= 3.0 * se, "sampled {mean}±{se} vs exact {exact}");
    let law = (8.0 * t / PI).sqrt();
    assert!((mean / law - 1.0).abs() < 0.05, "sampled {mean} vs {law}");
}

#[test]
fn exact_mean_range_at_short_times() {
    // one jump adds one site; two or more jumps have probability O(t²)
    let t = 1e-3;
    let m = exact_mean_range(1.0, t);
    assert!((m - (1.0 + t)).abs() < 1e-5, "{m}");
}

fn spread_kernel() -> JumpKernel {
    let support = [1, -1, 3, -3].into_iter().map(|x| (Site::at(x), 0.25)).collect();
    JumpKernel::new(1, support, 1.0).unwrap()
}

fn agree(a: &SurvivalEstimate, b: &SurvivalEstimate) {
    let z = a.z_score(b);
    assert!(
        z <= 3.0,
        "{} {:.5}±{:.5} vs {} {:.5}±{:.5}",
        a.estimator.as_str(),
        a.value,
        a.std_error,
        b.estimator.as_str(),
        b.value,
        b.std_error
    );
}

#[test]
fn estimators_agree_on_a_non_nearest_neighbour_kernel() {
    let hard = ModelParams::new(KillRate::Hard, spread_kernel(), spread_kernel(), 0.7).unwrap();
    let soft = hard.with_gamma(KillRate::Finite(1.0));
    for (i, t) in [1.0, 3.0].into_iter().enumerate() {
        let s = 10 * i as u64;
        agree(
            &annealed_direct(&hard, t, 20_000, 1, s).unwrap(),
            &annealed_range(&hard, t, 1_500, 300, s + 1).unwrap(),
        );
        agree(
            &annealed_direct(&soft, t, 20_000, 1, s + 2).unwrap(),
            &annealed_softrange(&soft, t, 1_500, 300, s + 3).unwrap(),
        );
    }
}
