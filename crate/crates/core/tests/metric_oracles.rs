use forge_core::metrics::{frechet_distance, frechet_from_moments, inception_score};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Closed form for 2×2 PSD M: Tr(√M) = √(Tr M + 2√det M).
fn trace_sqrt_2x2(m: [[f64; 2]; 2]) -> f64 {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    (m[0][0] + m[1][1] + 2.0 * det.max(0.0).sqrt()).sqrt()
}

fn mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut o = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

/// Analytic distance between N(μa, Σa) and N(μb, Σb) in 2-D. The eigenvalues
/// of ΣaΣb are real and non-negative, so Tr((ΣaΣb)^{1/2}) follows from its
/// trace and determinant.
fn analytic(mu_a: [f64; 2], ca: [[f64; 2]; 2], mu_b: [f64; 2], cb: [[f64; 2]; 2]) -> f64 {
    let d2 = (mu_a[0] - mu_b[0]).powi(2) + (mu_a[1] - mu_b[1]).powi(2);
    let cross = trace_sqrt_2x2(mul(ca, cb));
    d2 + ca[0][0] + ca[1][1] + cb[0][0] + cb[1][1] - 2.0 * cross
}

fn draw(n: usize, mu: [f64; 2], cov: [[f64; 2]; 2], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    // Cholesky by hand
    let l00 = cov[0][0].sqrt();
    let l10 = cov[1][0] / l00;
    let l11 = (cov[1][1] - l10 * l10).sqrt();
    (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            vec![mu[0] + l00 * a, mu[1] + l10 * a + l11 * b]
        })
        .collect()
}

#[test]
fn moments_form_matches_closed_form() {
    let ca = [[2.0, 0.7], [0.7, 1.0]];
    let cb = [[0.5, -0.2], [-0.2, 3.0]];
    let got = frechet_from_moments(
        &DVector::from_vec(vec![1.0, 2.0]),
        &DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]),
        &DVector::from_vec(vec![-1.0, 0.5]),
        &DMatrix::from_row_slice(2, 2, &[0.5, -0.2, -0.2, 3.0]),
    )
    .unwrap();
    let want = analytic([1.0, 2.0], ca, [-1.0, 0.5], cb);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn sampled_gaussians_within_five_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mu_a, ca) = ([0.0, 0.0], [[1.0, 0.3], [0.3, 1.5]]);
    let (mu_b, cb) = ([2.0, -1.0], [[2.0, -0.4], [-0.4, 0.8]]);
    let a = draw(10_000, mu_a, ca, &mut rng);
    let b = draw(10_000, mu_b, cb, &mut rng);
    let got = frechet_distance(&a, &b).unwrap();
    let want = analytic(mu_a, ca, mu_b, cb);
    assert!((got - want).abs() / want < 0.05, "{got} vs {want}");
}

#[test]
fn identical_sets_have_zero_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = draw(500, [1.0, 1.0], [[1.0, 0.9], [0.9, 1.0]], &mut rng);
    assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
}

#[test]
fn rank_deficient_covariance_is_accepted() {
    // second coordinate is an exact copy of the first
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            vec![v, v]
        })
        .collect();
    let b = draw(300, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], &mut rng);
    assert!(frechet_distance(&a, &b).unwrap().is_finite());
}

#[test]
fn inception_score_extremes() {
    // confident and evenly spread over k classes → k
    let k = 4;
    let rows: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 50.0 } else { 0.0 }).collect()).collect();
    assert!((inception_score(&rows).unwrap() - k as f64).abs() < 1e-6);
    // identical predictions → 1
    let same = vec![vec![0.3, 1.2, -0.5]; 10];
    assert!((inception_score(&same).unwrap() - 1.0).abs() < 1e-12);
}
