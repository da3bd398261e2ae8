use nearfield::channel::CartesianPoint;
use nearfield::metrics::{l1_distance, match_paths, mean, median, nmse, nmse_db, to_db, wing_loss, MATCH_GATE_LAMBDA, NMSE_FLOOR_DB};
use nearfield::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const L: f64 = 0.05;

fn cvec() -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b)| Complex64::new(a, b)), 1..24)
}

fn p(z: f64, x: f64) -> CartesianPoint {
    CartesianPoint::new(z, x)
}

#[test]
fn nmse_examples() {
    let h = vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 3.0), Complex64::new(-1.0, 0.0)];
    assert_eq!(nmse(&h, &h).unwrap(), 0.0);
    assert_eq!(nmse_db(&h, &h).unwrap(), NMSE_FLOOR_DB);
    assert_eq!(NMSE_FLOOR_DB, -300.0);
    let zero = vec![Complex64::new(0.0, 0.0); 3];
    assert_eq!(nmse(&zero, &h).unwrap(), 1.0);
    assert_eq!(nmse_db(&zero, &h).unwrap(), 0.0);
    let twice: Vec<Complex64> = h.iter().map(|v| v * 2.0).collect();
    assert!((nmse(&twice, &h).unwrap() - 1.0).abs() < 1e-15);
    let tenth: Vec<Complex64> = h.iter().map(|v| v * 1.1).collect();
    assert!((nmse_db(&tenth, &h).unwrap() + 20.0).abs() < 1e-9);
    assert!(matches!(nmse(&h, &zero), Err(Error::Undefined(_))));
    assert!(matches!(nmse(&h[..2], &h), Err(Error::DimensionMismatch { .. })));
    assert_eq!(to_db(1e-40), NMSE_FLOOR_DB);
    assert_eq!(to_db(-1.0), NMSE_FLOOR_DB);
}

proptest! {
    #[test]
    fn nmse_is_nonnegative_and_zero_only_at_equality(h in cvec(), d in cvec()) {
        prop_assume!(h.iter().any(|v| v.norm() > 1e-3));
        let n = h.len().min(d.len());
        let (h, d) = (&h[..n], &d[..n]);
        let h_hat: Vec<Complex64> = h.iter().zip(d).map(|(a, b)| a + b).collect();
        let v = nmse(&h_hat, h).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, d.iter().all(|b| *b == Complex64::new(0.0, 0.0)));
    }
}

#[test]
fn l1_examples() {
    let truth = [p(10.0, 1.0), p(12.0, -3.0)];
    let s = l1_distance(&truth, &truth, L, MATCH_GATE_LAMBDA).unwrap();
    assert_eq!(s.l1_lambda, Some(0.0));
    assert_eq!((s.matched, s.recall(), s.precision()), (2, 1.0, 1.0));
    let s = l1_distance(&[p(10.0 + L, 1.0 + L)], &[p(10.0, 1.0)], L, MATCH_GATE_LAMBDA).unwrap();
    assert!((s.l1_lambda.unwrap() - 2.0).abs() < 1e-9);
    let far = l1_distance(&[p(10.0 + 101.0 * L, 1.0)], &[p(10.0, 1.0)], L, MATCH_GATE_LAMBDA).unwrap();
    assert_eq!((far.l1_lambda, far.matched, far.recall(), far.precision()), (None, 0, 0.0, 0.0));
    let extra = l1_distance(&[p(10.0, 1.0), p(20.0, 0.0)], &[p(10.0, 1.0)], L, MATCH_GATE_LAMBDA).unwrap();
    assert_eq!((extra.matched, extra.recall(), extra.precision()), (1, 1.0, 0.5));
    let none = l1_distance(&[], &[], L, MATCH_GATE_LAMBDA).unwrap();
    assert_eq!((none.l1_lambda, none.recall(), none.precision()), (None, 1.0, 1.0));
    let too_many: Vec<CartesianPoint> = (0..17).map(|i| p(i as f64, 0.0)).collect();
    assert!(match_paths(&too_many, &too_many, 1.0).is_err());
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for k in 0..n {
            let mut q = perm.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Gated optimum by exhaustive search: most pairs, then least total distance.
fn brute_match(est: &[CartesianPoint], truth: &[CartesianPoint], gate: f64) -> (usize, f64) {
    let n = est.len().max(truth.len());
    let mut best = (0usize, 0.0f64);
    for perm in permutations(n) {
        let mut cnt = 0;
        let mut cost = 0.0;
        for (j, &i) in perm.iter().enumerate() {
            if i < est.len() && j < truth.len() {
                let d = (est[i].z - truth[j].z).hypot(est[i].x - truth[j].x);
                if d <= gate {
                    cnt += 1;
                    cost += d;
                }
            }
        }
        if cnt > best.0 || (cnt == best.0 && cost < best.1) {
            best = (cnt, cost);
        }
    }
    best
}

#[test]
fn l1_is_invariant_under_all_six_estimate_orders() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for _ in 0..200 {
        let truth: Vec<CartesianPoint> = (0..3).map(|_| p(rng.random_range(5.0..25.0), rng.random_range(-10.0..10.0))).collect();
        let est: Vec<CartesianPoint> = truth.iter().map(|t| p(t.z + rng.random_range(-3.0..3.0), t.x + rng.random_range(-3.0..3.0))).collect();
        let base = l1_distance(&est, &truth, L, MATCH_GATE_LAMBDA).unwrap();
        let perms = permutations(3);
        assert_eq!(perms.len(), 6);
        for perm in perms {
            let shuffled: Vec<CartesianPoint> = perm.iter().map(|&i| est[i]).collect();
            let s = l1_distance(&shuffled, &truth, L, MATCH_GATE_LAMBDA).unwrap();
            assert_eq!(s.matched, base.matched);
            match (s.l1_lambda, base.l1_lambda) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9 * b.max(1.0)),
                (a, b) => assert_eq!(a, b),
            }
        }
    }
}

#[test]
fn matching_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let gate = 2.0;
    for _ in 0..500 {
        let n_est = rng.random_range(0..5);
        let n_truth = rng.random_range(0..5);
        let est: Vec<CartesianPoint> = (0..n_est).map(|_| p(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0))).collect();
        let truth: Vec<CartesianPoint> = (0..n_truth).map(|_| p(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0))).collect();
        let pairs = match_paths(&est, &truth, gate).unwrap();
        let cost: f64 = pairs.iter().map(|&(i, j)| (est[i].z - truth[j].z).hypot(est[i].x - truth[j].x)).sum();
        let (want_n, want_cost) = brute_match(&est, &truth, gate);
        assert_eq!(pairs.len(), want_n);
        assert!((cost - want_cost).abs() < 1e-9, "{cost} vs {want_cost}");
        let mut used_e: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        used_e.sort_unstable();
        used_e.dedup();
        assert_eq!(used_e.len(), pairs.len());
        assert!(pairs.windows(2).all(|w| w[0].1 < w[1].1));
    }
}

#[test]
fn wing_loss_example_continuity_and_gradient() {
    let want = 10.0 + 10.0 * 3f64.ln();
    assert!((wing_loss(20.0, 10.0, 5.0) - want).abs() < 1e-12);
    assert!((want - 20.986).abs() < 1e-3);
    assert_eq!(wing_loss(0.0, 10.0, 5.0), 0.0);
    assert_eq!(wing_loss(-7.0, 10.0, 5.0), wing_loss(7.0, 10.0, 5.0));
    for (w, eps) in [(10.0, 5.0), (1.0, 0.5), (3.0, 2.0)] {
        let below = wing_loss(w * (1.0 - 1e-12), w, eps);
        let at = wing_loss(w, w, eps);
        assert!((below - at).abs() <= 1e-9, "jump at w={w}: {below} vs {at}");
        // Analytic slope: w/(eps+|x|) below the kink, 1 above.
        for x in [0.3 * w, 0.7 * w, 1.5 * w, 4.0 * w] {
            let h = 1e-6;
            let fd = (wing_loss(x + h, w, eps) - wing_loss(x - h, w, eps)) / (2.0 * h);
            let slope = if x < w { w / (eps + x) } else { 1.0 };
            assert!((fd - slope).abs() <= 1e-5, "x={x}: {fd} vs {slope}");
        }
    }
}

#[test]
fn summary_statistics() {
    assert_eq!(median(&[]), None);
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    assert_eq!(mean(&[]), None);
    assert_eq!(mean(&[1.0, 2.0, 6.0]), Some(3.0));
}
