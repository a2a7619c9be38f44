//! Distribution-metric oracles: Fréchet distance against closed forms,
//! the chi-squared CDF against adaptive quadrature, and conditional
//! p-values against their defining uniformity property.

mod common;

use vaelab::metrics::{
    chi2_cdf, conditional_p_value, frechet_distance, mahalanobis_sq, quartiles, GaussianStats,
};
use vaelab::rng::{Rng, Stream};

fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
    let n = mean.len();
    GaussianStats::from_parts(mean, cov, n + 1).unwrap()
}

#[test]
fn frechet_of_identical_gaussians_is_zero() {
    let mut rng = Rng::new(50, Stream::Stats, 0);
    for dim in [3, 10] {
        let cov = common::random_psd(dim, 1.0, &mut rng);
        let mean: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let a = stats(mean.clone(), cov.clone());
        let b = stats(mean, cov);
        let d = frechet_distance(&a, &b).unwrap();
        assert!(d.abs() <= 1e-8, "expected 0, got {d:.3e}");
    }
}

#[test]
fn frechet_with_equal_covariance_is_the_squared_mean_shift() {
    let mut rng = Rng::new(51, Stream::Stats, 0);
    for _ in 0..10 {
        let dim = 6;
        let cov = common::random_psd(dim, 0.8, &mut rng);
        let ma: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let mb: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let expected: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();
        let d = frechet_distance(&stats(ma, cov.clone()), &stats(mb, cov.clone())).unwrap();
        assert!((d - expected).abs() <= 1e-6, "got {d}, expected {expected}");
    }
}

#[test]
fn frechet_of_diagonal_gaussians_matches_the_closed_form() {
    let mut rng = Rng::new(52, Stream::Stats, 0);
    for _ in 0..10 {
        let dim = 8;
        let va: Vec<f64> = (0..dim).map(|_| 0.2 + 2.0 * rng.next_f64()).collect();
        let vb: Vec<f64> = (0..dim).map(|_| 0.2 + 2.0 * rng.next_f64()).collect();
        let ma: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let mb: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let diag = |v: &[f64]| {
            let mut c = vec![0.0; dim * dim];
            for i in 0..dim {
                c[i * dim + i] = v[i];
            }
            c
        };
        let expected: f64 = ma
            .iter()
            .zip(&mb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            + va.iter()
                .zip(&vb)
                .map(|(a, b)| (a.sqrt() - b.sqrt()) * (a.sqrt() - b.sqrt()))
                .sum::<f64>();
        let d = frechet_distance(&stats(ma, diag(&va)), &stats(mb, diag(&vb))).unwrap();
        assert!((d - expected).abs() <= 1e-6, "got {d}, expected {expected}");
    }
}

#[test]
fn frechet_is_symmetric_and_nonnegative() {
    let mut rng = Rng::new(53, Stream::Stats, 0);
    for _ in 0..50 {
        let dim = 5;
        let a = stats(
            (0..dim).map(|_| rng.next_normal()).collect(),
            common::random_psd(dim, 1.0, &mut rng),
        );
        let b = stats(
            (0..dim).map(|_| rng.next_normal()).collect(),
            common::random_psd(dim, 1.0, &mut rng),
        );
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!(ab >= 0.0 && ba >= 0.0);
        assert!((ab - ba).abs() <= 1e-8, "asymmetry {:.3e}", (ab - ba).abs());
    }
}

#[test]
fn chi2_cdf_matches_quadrature() {
    for k in [2, 4, 10] {
        for i in 1..=100 {
            let x = i as f64 * 0.5;
            let ours = chi2_cdf(x, k).unwrap();
            let reference = common::chi2_cdf_quadrature(x, k);
            assert!(
                (ours - reference).abs() <= 1e-6,
                "k={k} x={x}: {ours} vs {reference}"
            );
        }
    }
    assert_eq!(chi2_cdf(0.0, 10).unwrap(), 0.0);
}

#[test]
fn zero_distance_gives_p_exactly_one() {
    let mut rng = Rng::new(54, Stream::Stats, 0);
    let mean: Vec<f64> = (0..10).map(|_| rng.next_normal()).collect();
    let cov = common::random_psd(10, 1.0, &mut rng);
    let s = stats(mean.clone(), cov);
    assert_eq!(mahalanobis_sq(&mean, &s).unwrap(), 0.0);
    let p = 1.0 - chi2_cdf(0.0, 10).unwrap();
    assert_eq!(p, 1.0);
}

#[test]
fn conditional_p_values_are_uniform_for_synthetic_gaussians() {
    // Ten synthetic "classes", each a Gaussian whose mean has a large
    // coordinate at its own index so the argmax routes samples back to the
    // generating class. Scoring a sample against its own Gaussian makes
    // the Mahalanobis distance exactly chi-squared(10), so p ~ U(0, 1).
    let mut rng = Rng::new(55, Stream::Stats, 0);
    let dim = 10;
    let per_class: Vec<GaussianStats> = (0..dim)
        .map(|j| {
            let mut mean: Vec<f64> = (0..dim).map(|_| rng.next_normal() * 0.5).collect();
            mean[j] += 20.0;
            stats(mean, common::random_psd(dim, 0.6, &mut rng))
        })
        .collect();

    let n = 10_000;
    let mut ps = Vec::with_capacity(n);
    for i in 0..n {
        let j = i % dim;
        let s = &per_class[j];
        let x = common::sample_gaussian(s.mean(), s.cov(), 1, &mut rng).remove(0);
        let r = conditional_p_value(&x, &per_class).unwrap();
        assert_eq!(r.label, j, "sample routed to the wrong class");
        ps.push(r.p);
    }
    let ks = common::ks_uniform(&ps);
    println!("conditional p-value KS statistic at n={n}: {ks:.4}");
    assert!(ks < 0.02, "KS {ks:.4} exceeds 0.02");

    let q = quartiles(&ps).unwrap();
    assert!((q.median - 0.5).abs() < 0.03, "median {:.3}", q.median);
}

#[test]
fn mahalanobis_is_invariant_under_coordinate_scaling() {
    // Scaling coordinate i of both the sample and the Gaussian by c leaves
    // the Mahalanobis distance unchanged.
    let mut rng = Rng::new(56, Stream::Stats, 0);
    let dim = 6;
    let mean: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
    let cov = common::random_psd(dim, 1.0, &mut rng);
    let x: Vec<f64> = (0..dim).map(|_| rng.next_normal() * 2.0).collect();
    let d0 = mahalanobis_sq(&x, &stats(mean.clone(), cov.clone())).unwrap();

    let scales: Vec<f64> = (0..dim).map(|i| 0.5 + i as f64).collect();
    let mean_s: Vec<f64> = mean.iter().zip(&scales).map(|(m, c)| m * c).collect();
    let x_s: Vec<f64> = x.iter().zip(&scales).map(|(v, c)| v * c).collect();
    let mut cov_s = cov.clone();
    for i in 0..dim {
        for j in 0..dim {
            cov_s[i * dim + j] *= scales[i] * scales[j];
        }
    }
    let d1 = mahalanobis_sq(&x_s, &stats(mean_s, cov_s)).unwrap();
    assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0), "{d0} vs {d1}");
}
