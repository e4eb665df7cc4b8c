//! Marginal laws of leaves and roots over many independent seeds.

use ers::dst::{AnyDst, DistValue, TargetDist};
use ers::poisson2d::PoissonErs2D;
use ers::randomness::MasterSeed;
use ers::universe::{Range1D, RangeD};

const SEEDS: u64 = 100_000;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn sample(dist: TargetDist, log2_delta: u32, seed: u64, r: Range1D) -> f64 {
    let mut t = AnyDst::new(dist, log2_delta, &MasterSeed::from_u64(seed)).unwrap();
    t.range_sum(r).unwrap().as_f64()
}

#[test]
fn gaussian_root_over_four_cells_has_variance_four() {
    let xs: Vec<f64> = (0..SEEDS).map(|s| sample(TargetDist::Gaussian, 2, s, Range1D { lo: 0, hi: 4 })).collect();
    let (m, v) = mean_var(&xs);
    assert!(m.abs() < 5.0 * (4.0 / SEEDS as f64).sqrt(), "mean {m}");
    assert!((3.9..=4.1).contains(&v), "variance {v}");
}

#[test]
fn gaussian_leaves_are_standard_and_uncorrelated() {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for s in 0..SEEDS {
        let mut t = AnyDst::new(TargetDist::Gaussian, 3, &MasterSeed::from_u64(s)).unwrap();
        a.push(t.range_sum(Range1D { lo: 2, hi: 3 }).unwrap().as_f64());
        b.push(t.range_sum(Range1D { lo: 5, hi: 6 }).unwrap().as_f64());
    }
    let (ma, va) = mean_var(&a);
    let (mb, _) = mean_var(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (SEEDS as f64 - 1.0);
    let tol = 5.0 / (SEEDS as f64).sqrt();
    assert!(ma.abs() < tol && (va - 1.0).abs() < 5.0 * (2.0 / SEEDS as f64).sqrt(), "mean {ma} var {va}");
    assert!(cov.abs() < tol, "cov {cov}");
}

#[test]
fn poisson_leaf_has_mean_and_variance_lambda() {
    let lambda = 1.5;
    let xs: Vec<f64> =
        (0..SEEDS).map(|s| sample(TargetDist::Poisson { lambda }, 3, s, Range1D { lo: 3, hi: 4 })).collect();
    let (m, v) = mean_var(&xs);
    assert!((m - lambda).abs() < 5.0 * (lambda / SEEDS as f64).sqrt(), "mean {m}");
    assert!((v - lambda).abs() < 0.05, "variance {v}");
}

#[test]
fn rademacher_leaves_are_fair_signs() {
    let mut plus = 0u64;
    for s in 0..SEEDS {
        let mut t = AnyDst::new(TargetDist::Rademacher, 3, &MasterSeed::from_u64(s)).unwrap();
        match t.range_sum(Range1D { lo: 6, hi: 7 }).unwrap() {
            DistValue::Signed(1) => plus += 1,
            DistValue::Signed(-1) => {}
            other => panic!("leaf {other:?}"),
        }
    }
    let z = (plus as f64 - SEEDS as f64 / 2.0) / (SEEDS as f64 / 4.0).sqrt();
    assert!(z.abs() < 5.0, "z = {z}");
}

#[test]
fn cauchy_leaf_has_unit_median_absolute_value() {
    let mut xs: Vec<f64> =
        (0..SEEDS).map(|s| sample(TargetDist::Cauchy, 3, s, Range1D { lo: 1, hi: 2 }).abs()).collect();
    xs.sort_by(f64::total_cmp);
    let median = xs[xs.len() / 2];
    // |X| has density 2/(π(1+x²)), so the sample median's sd is π/(2√n)
    assert!((median - 1.0).abs() < 5.0 * std::f64::consts::PI / (2.0 * (SEEDS as f64).sqrt()), "median {median}");
}

#[test]
fn poisson_2d_cells_are_independent_poisson() {
    let lambda = 0.5;
    let n = 20_000u64;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let cell =
        |i: u64, j: u64| RangeD::from_axes(vec![Range1D { lo: i, hi: i + 1 }, Range1D { lo: j, hi: j + 1 }]).unwrap();
    for s in 0..n {
        let mut p = PoissonErs2D::new(2, lambda, &MasterSeed::from_u64(s)).unwrap();
        a.push(p.range_sum_2d(&cell(1, 2)).unwrap() as f64);
        b.push(p.range_sum_2d(&cell(1, 3)).unwrap() as f64);
    }
    let (ma, va) = mean_var(&a);
    let (mb, _) = mean_var(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n as f64 - 1.0);
    assert!((ma - lambda).abs() < 5.0 * (lambda / n as f64).sqrt(), "mean {ma}");
    assert!((va - lambda).abs() < 0.05, "variance {va}");
    assert!(cov.abs() < 5.0 * lambda / (n as f64).sqrt(), "cov {cov}");
}
