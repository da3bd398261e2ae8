use nearfield::io::{EstimateFile, SceneFile};
use nearfield::profile::Profile;
use nearfield_py::{refine_json, simulate_scene};

#[test]
fn simulate_then_refine_from_truth_is_exact() {
    let p = Profile::desk();
    let (scene_json, y) = simulate_scene(&p, false, 3, 7, None, true).unwrap();
    let scene: SceneFile = serde_json::from_str(&scene_json).unwrap();
    assert_eq!(scene.paths.len(), p.s_fixed);
    assert_eq!(y.len(), p.array.n_antennas);
    let coarse = serde_json::json!({
        "domain": "cartesian",
        "positions": scene.paths.iter().map(|q| [q.z, q.x]).collect::<Vec<_>>(),
    });
    let est: EstimateFile = serde_json::from_str(&refine_json(&coarse.to_string(), &y, r#"{"profile":"desk"}"#).unwrap()).unwrap();
    assert_eq!(est.entries.len(), p.s_fixed);
    assert!(est.residual_power <= 1e-12 * y.iter().map(|v| v.norm_sqr()).sum::<f64>());
}

#[test]
fn fixed_snr_and_determinism() {
    let p = Profile::desk();
    let a = simulate_scene(&p, true, 1, 2, Some(14.0), false).unwrap();
    let b = simulate_scene(&p, true, 1, 2, Some(14.0), false).unwrap();
    assert_eq!(a, b);
    let scene: SceneFile = serde_json::from_str(&a.0).unwrap();
    assert_eq!(scene.snr_db, 14.0);
    assert!((1..=p.s_max).contains(&scene.paths.len()));
}

#[test]
fn refine_rejects_bad_documents() {
    let y = vec![num_complex::Complex64::new(1.0, 0.0); 128];
    assert!(refine_json("{}", &y, r#"{"profile":"desk"}"#).is_err());
    assert!(refine_json(r#"{"domain":"cart","positions":[[10.0,0.0]]}"#, &y, r#"{"profile":"lab"}"#).is_err());
}
