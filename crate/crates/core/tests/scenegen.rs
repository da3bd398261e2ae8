use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nearfield::codebook::{build_codebook, Domain};
use nearfield::imaging::{ChannelImage, LabelRecord};
use nearfield::profile::Profile;
use nearfield::scenegen::{emit_dataset, sample_scene, DatasetSpec, Manifest, PathCount, SceneGenConfig, MANIFEST_SCHEMA};
use nearfield::Error;

fn fixed4() -> (Profile, SceneGenConfig) {
    let p = Profile::desk();
    let cfg = p.scene_gen(PathCount::Fixed { s: 4 }, 3);
    (p, cfg)
}

#[test]
fn strips_are_disjoint_and_guarded() {
    let (_, cfg) = fixed4();
    let width = (cfg.region.x_max - cfg.region.x_min) / 4.0;
    for s in 0..4 {
        let (lo, hi) = cfg.strip_bounds(s);
        let strip_lo = cfg.region.x_min + s as f64 * width;
        assert!((lo - strip_lo - cfg.guard_margin()).abs() < 1e-12);
        assert!((strip_lo + width - hi - cfg.guard_margin()).abs() < 1e-12);
        if s > 0 {
            assert!(lo > cfg.strip_bounds(s - 1).1);
        }
    }
}

#[test]
fn paper_strip_example() {
    let p = Profile::paper();
    let l = p.wavelength();
    let cfg = p.scene_gen(PathCount::Fixed { s: 4 }, 0);
    assert!((cfg.h_interval() / l - 640.0).abs() < 1e-9);
    assert!((cfg.guard_margin() / l - 320.0).abs() < 1e-9);
    assert!((cfg.strip_bounds(0).0 / l + 2240.0).abs() < 1e-9);
}

#[test]
fn paper_preset_values() {
    let p = Profile::paper();
    assert_eq!(p.split, [1800, 600, 120]);
    assert_eq!(p.snr_range_db, [10.0, 26.0]);
    assert_eq!(p.array.n_antennas, 1024);
    assert_eq!((p.region.n_z, p.region.n_x), (512, 512));
    assert_eq!(p.image, (512, 512));
    assert_eq!((p.s_fixed, p.s_max), (4, 6));
}

#[test]
fn fixed_mode_draws_respect_strips_depth_gains_and_snr() {
    let (p, cfg) = fixed4();
    let (z_lo, z_hi) = cfg.z_bounds();
    for i in 0..10_000u64 {
        let s = sample_scene(&cfg, &p.array, i).unwrap();
        assert_eq!(s.scene.paths.len(), 4);
        assert_eq!(s.strips, vec![0, 1, 2, 3]);
        assert_eq!(s.scene.paths.iter().filter(|q| q.is_los).count(), 1);
        for (path, &strip) in s.scene.paths.iter().zip(&s.strips) {
            let (lo, hi) = cfg.strip_bounds(strip);
            assert!(path.position.x >= lo && path.position.x <= hi);
            assert!(path.position.z >= z_lo && path.position.z <= z_hi);
            let g = path.gain.norm();
            if path.is_los {
                assert!((g - 1.0).abs() < 1e-12);
            } else {
                assert!((0.3 - 1e-12..=0.9 + 1e-12).contains(&g));
            }
        }
        assert!((10.0..=26.0).contains(&s.scene.snr_db));
    }
}

#[test]
fn flexible_count_is_uniform() {
    let p = Profile::desk();
    let cfg = p.scene_gen(PathCount::Flexible { s_max: 6 }, 9);
    let n = 10_000u64;
    let mut hist = [0usize; 6];
    for i in 0..n {
        let s = sample_scene(&cfg, &p.array, i).unwrap();
        let k = s.scene.paths.len();
        assert!((1..=6).contains(&k));
        assert!(s.strips.windows(2).all(|w| w[0] < w[1]) && *s.strips.last().unwrap() < 6);
        hist[k - 1] += 1;
    }
    let mean = n as f64 / 6.0;
    let sd = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
    for (k, &h) in hist.iter().enumerate() {
        assert!((h as f64 - mean).abs() <= 3.0 * sd, "count {} seen {h} times", k + 1);
    }
}

#[test]
fn draws_are_deterministic_per_index() {
    let (p, cfg) = fixed4();
    assert_eq!(sample_scene(&cfg, &p.array, 17).unwrap(), sample_scene(&cfg, &p.array, 17).unwrap());
    assert_ne!(sample_scene(&cfg, &p.array, 17).unwrap(), sample_scene(&cfg, &p.array, 18).unwrap());
}

#[test]
fn invalid_generator_configs() {
    let (p, cfg) = fixed4();
    for bad in [
        SceneGenConfig { h_ratio: 0.0, ..cfg },
        SceneGenConfig { h_ratio: 1.5, ..cfg },
        SceneGenConfig { count_mode: PathCount::Fixed { s: 0 }, ..cfg },
        SceneGenConfig { snr_range_db: [20.0, 10.0], ..cfg },
        SceneGenConfig { nlos_gain: [0.0, 0.5], ..cfg },
    ] {
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))), "{bad:?}");
        assert!(sample_scene(&bad, &p.array, 0).is_err());
    }
}

fn small_dataset(out: &Path) -> Manifest {
    let (p, cfg) = fixed4();
    let region = nearfield::codebook::RegionSpec { n_z: 32, n_x: 32, ..p.region };
    let cfg = SceneGenConfig { region, ..cfg };
    let cb = build_codebook(&p.array, &region, Domain::Cartesian).unwrap();
    emit_dataset(&cfg, &cb, &DatasetSpec { split: [4, 2, 1], i_h: 24, i_w: 24 }, out).unwrap()
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn dataset_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_dataset(a.path());
    small_dataset(b.path());
    let ta = read_tree(a.path());
    assert_eq!(ta.len(), 4 + 2 + 1 + 3 + 1);
    assert_eq!(ta, read_tree(b.path()));
}

#[test]
fn dataset_layout_manifest_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_dataset(dir.path());
    assert_eq!(m.schema, MANIFEST_SCHEMA);
    assert_eq!(MANIFEST_SCHEMA, "nfds-1");
    let on_disk: Manifest = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m);
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    for key in ["schema", "seed", "generator", "array", "domain", "i_h", "i_w", "train", "val", "test"] {
        assert!(raw.get(key).is_some(), "manifest lacks {key}");
    }
    let mut indices = Vec::new();
    for (split, count) in [(&m.train, 4), (&m.val, 2), (&m.test, 1)] {
        assert_eq!(split.count, count);
        assert_eq!(split.samples.len(), count);
        let text = fs::read_to_string(dir.path().join(&split.labels)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), count);
        for (line, sample) in lines.iter().zip(&split.samples) {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["keypoints_px", "positions", "present"] {
                assert!(v.get(key).is_some(), "label lacks {key}");
            }
            let rec: LabelRecord = serde_json::from_value(v).unwrap();
            assert_eq!(rec.keypoints_px.len(), 4);
            assert_eq!(rec.present, vec![true; 4]);
            assert_eq!(sample.paths, 4);
            for kp in &rec.keypoints_px {
                assert!(kp[0] >= 0.0 && kp[0] <= 24.0 && kp[1] >= 0.0 && kp[1] <= 24.0);
            }
            let bytes = fs::read(dir.path().join(&sample.image)).unwrap();
            assert!(bytes.starts_with(b"P5\n#"));
            let img = ChannelImage::read_pgm(bytes.as_slice()).unwrap();
            assert_eq!((img.i_h, img.i_w), (24, 24));
            assert_eq!(img.domain, Domain::Cartesian);
            indices.push(sample.index);
        }
    }
    assert_eq!(indices, (0..7).collect::<Vec<u64>>());
}
