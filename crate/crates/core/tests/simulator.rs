use tep_core::classification::area_ratio;
use tep_core::config::FusionConfig;
use tep_core::dataset::{write_synthetic_dataset, Dataset, Manifest};
use tep_core::geometry::{Dims, Mask};
use tep_core::metrics::{classify_phases, Phase};
use tep_core::simulator::{generate, object_id, scenario_suite, Identity, ScenarioSpec, Suite, SUITE_SIZE};
use tep_core::Error;

#[test]
fn suites_are_pure_in_the_seed() {
    for s in Suite::ALL {
        let a = scenario_suite(s, 7);
        assert_eq!(a.len(), SUITE_SIZE);
        assert_eq!(a, scenario_suite(s, 7));
        assert_ne!(a, scenario_suite(s, 8));
        let names: Vec<String> = (0..SUITE_SIZE).map(|i| format!("{}-{i:02}", s.name())).collect();
        assert_eq!(a.iter().map(|x| x.name.clone()).collect::<Vec<_>>(), names);
        for spec in a.iter().take(2) {
            assert_eq!(generate(&spec.name, spec).unwrap().frames, generate(&spec.name, spec).unwrap().frames);
        }
    }
}

#[test]
fn ground_truth_is_the_visible_label_region() {
    for s in Suite::ALL {
        let spec = &scenario_suite(s, 1)[0];
        let v = generate(&spec.name, spec).unwrap();
        let targets: Vec<_> = spec.actors.iter().filter(|a| a.identity == Identity::Target).collect();
        assert_eq!(v.gt.len(), targets.len());
        for a in targets {
            let seq = &v.gt[&object_id(a.id)];
            assert_eq!(seq.len(), spec.num_frames);
            for (t, m) in seq.iter().enumerate() {
                assert_eq!(*m, v.frames[t].mask_of(a.id));
                if !a.visible_at(t) {
                    assert!(m.is_empty());
                }
            }
        }
    }
}

#[test]
fn suite_families_have_their_stress_properties() {
    let cfg = FusionConfig::default();
    for spec in scenario_suite(Suite::DriftTiny, 0) {
        let v = generate(&spec.name, &spec).unwrap();
        let o = &v.manifest_entry.objects[0];
        assert!(area_ratio(&o.first_mask, v.manifest_entry.dims()) < cfg.tiny_area_ratio);
        assert!(spec.actors[0].drift.is_some());
    }
    for spec in scenario_suite(Suite::DistractorSemantic, 0) {
        let look_alikes = spec.actors.iter().filter(|a| a.identity == Identity::Distractor).count();
        assert!((3..=5).contains(&look_alikes));
        assert!(spec.actor(1).unwrap().attribute.is_some());
        assert_eq!(spec.actor(1).unwrap().confusions.len(), 1);
    }
    for spec in scenario_suite(Suite::Reappear, 0) {
        let v = generate(&spec.name, &spec).unwrap();
        for seq in v.gt.values() {
            let phases: Vec<Phase> = classify_phases(seq).iter().map(|s| s.phase).collect();
            assert!(phases.contains(&Phase::Disappeared));
            assert!(phases.contains(&Phase::Reappeared));
        }
    }
}

#[test]
fn spec_json_round_trip() {
    for s in Suite::ALL {
        let spec = &scenario_suite(s, 3)[4];
        let text = serde_json::to_string(spec).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(&back, spec);
    }
}

#[test]
fn dataset_on_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let videos: Vec<_> = scenario_suite(Suite::Crowded, 0)
        .iter()
        .take(2)
        .map(|s| generate(&s.name, s).unwrap())
        .collect();
    let manifest = write_synthetic_dataset(dir.path(), &videos).unwrap();
    let ds = Dataset::load(&manifest).unwrap();
    assert_eq!(ds.manifest.videos.len(), 2);
    for (entry, v) in ds.manifest.videos.iter().zip(&videos) {
        assert_eq!(entry, &v.manifest_entry);
        assert_eq!(ds.load_gt(entry).unwrap().unwrap(), v.gt);
        let (spec, frames) = ds.load_frames(&entry.video_id).unwrap();
        assert_eq!(spec, v.spec);
        assert_eq!(frames, v.frames);
    }
}

fn manifest_with(edit: impl FnOnce(&mut Manifest)) -> Result<Dataset, Error> {
    let dir = tempfile::tempdir().unwrap();
    let spec = &scenario_suite(Suite::DriftTiny, 0)[0];
    let v = generate("a", spec).unwrap();
    let path = write_synthetic_dataset(dir.path(), std::slice::from_ref(&v)).unwrap();
    let mut m: Manifest = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    edit(&mut m);
    std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    Dataset::load(&path)
}

#[test]
fn manifest_validation() {
    let expect = |r: Result<Dataset, Error>, needle: &str| match r {
        Err(Error::ManifestError(msg)) => assert!(msg.contains(needle), "{msg}"),
        other => panic!("expected ManifestError with {needle}, got {other:?}"),
    };
    assert!(manifest_with(|_| {}).is_ok());
    expect(manifest_with(|m| m.videos.clear()), "no videos");
    expect(manifest_with(|m| m.videos.push(m.videos[0].clone())), "duplicate video");
    expect(
        manifest_with(|m| {
            let o = m.videos[0].objects[0].clone();
            m.videos[0].objects.push(o);
        }),
        "duplicate object",
    );
    expect(manifest_with(|m| m.videos[0].objects[0].first_frame_index = 40), "after the last frame");
    expect(
        manifest_with(|m| m.videos[0].objects[0].first_mask = Mask::empty(Dims::new(200, 150))),
        "empty first mask",
    );
    expect(
        manifest_with(|m| m.videos[0].objects[0].first_mask = Mask::from_fn(Dims::new(3, 3), |_, _| true)),
        "wrong size",
    );
    expect(manifest_with(|m| m.videos[0].frame_count = 0), "empty video");
}

#[test]
fn malformed_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    std::fs::write(&path, "{\"videos\": 3}").unwrap();
    assert!(matches!(Dataset::load(&path), Err(Error::ManifestError(_))));
    assert_eq!(Dataset::load(&dir.path().join("nope.json")).unwrap_err().kind(), "IoError");
}
