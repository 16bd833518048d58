use std::path::PathBuf;

use softbody_core::collision::Collider;
use softbody_core::engine::{Series, SimInstance};
use softbody_core::forces::ExternalInput;
use softbody_core::model::{create_default_soft_body, CreationParams, Dimension};
use softbody_core::persistence::*;
use softbody_core::registry::Catalog;
use softbody_core::Vec3;

fn testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata").join(name)
}

/// Compare against a checked-in file; `SOFTBODY_BLESS=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = testdata(name);
    if std::env::var_os("SOFTBODY_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the golden copy");
}

fn positions_bits(frames: &[Vec<Vec3>]) -> Vec<u64> {
    frames
        .iter()
        .flatten()
        .flat_map(|v| v.to_array())
        .map(f64::to_bits)
        .collect()
}

/// 1-D default chain pushed along x for three steps, recorded.
fn golden_scenario(cat: &Catalog) -> (SimInstance, Series) {
    let cp = CreationParams::default_for(Dimension::One);
    let mut i = SimInstance::from_creation(1, cp, cat).unwrap();
    i.resume().unwrap();
    i.start_recording(1, None).unwrap();
    i.apply_user_force(ExternalInput::impulse(vec![0], Vec3::new(-2.0, 0.0, 0.0), 2))
        .unwrap();
    for _ in 0..3 {
        i.step(cat).unwrap();
    }
    let series = i.stop_recording().unwrap();
    i.pause().unwrap();
    (i, series)
}

#[test]
fn golden_files_are_byte_exact() {
    let cat = Catalog::with_builtins();
    let body = create_default_soft_body(Dimension::One);
    golden(
        "default_1d.sbobj",
        &export_object(&body, Some(&CreationParams::default_for(Dimension::One))),
    );
    let (inst, series) = golden_scenario(&cat);
    golden("chain_1d.sbstate", &save_state_string(&inst));
    golden("chain_1d.sbseries", &save_series_string(&series).unwrap());
    let mut csv = Vec::new();
    export_csv(&series, &mut csv).unwrap();
    golden("chain_1d.csv", &String::from_utf8(csv).unwrap());
    let mut env = EnvironmentDocument::new(vec![
        Collider::ground(),
        Collider::sphere(Vec3::new(0.0, 0.5, 0.0), 0.25).with_constants(2000.0, 10.0),
    ]);
    env.display_hints = serde_json::json!({"background": "#202020"});
    golden("ground_and_ball.sbenv", &to_canonical_string(&env));
}

#[test]
fn golden_files_load() {
    let cat = Catalog::with_builtins();
    let obj = load_object(&testdata("default_1d.sbobj")).unwrap();
    assert_eq!(obj.body.particle_count(), 8);
    let state = load_state(&testdata("chain_1d.sbstate"), 7, &cat).unwrap();
    assert_eq!(state.instance.tick, 3);
    assert!(state.warnings.is_empty());
    let series = load_series(&testdata("chain_1d.sbseries")).unwrap();
    assert_eq!(series.frames.len(), 3);
    let env = load_environment(&testdata("ground_and_ball.sbenv")).unwrap();
    assert_eq!(env.colliders.len(), 2);
}

#[test]
fn save_load_save_is_byte_identical() {
    let cat = Catalog::with_builtins();
    for dim in [Dimension::One, Dimension::Two, Dimension::Three] {
        let mut i = SimInstance::from_creation(1, CreationParams::default_for(dim), &cat).unwrap();
        i.params.time_step_override = Some(0.001);
        i.resume().unwrap();
        for _ in 0..25 {
            i.step(&cat).unwrap();
        }
        let first = save_state_string(&i);
        let loaded = load_state_str(&first, 2, &cat).unwrap().instance;
        assert_eq!(save_state_string(&loaded), first);
    }
}

#[test]
fn resume_from_saved_state_is_bitwise_identical() {
    let cat = Catalog::with_builtins();
    let mut direct = SimInstance::from_creation(1, CreationParams::default_for(Dimension::Two), &cat).unwrap();
    direct.resume().unwrap();
    for _ in 0..40 {
        direct.step(&cat).unwrap();
    }
    direct
        .apply_user_force(ExternalInput::drag(vec![2], Vec3::new(1.0, 2.0, 0.0), 10.0, 30))
        .unwrap();
    let saved = save_state_string(&direct);
    let mut resumed = load_state_str(&saved, 2, &cat).unwrap().instance;
    assert_eq!(resumed.status(), softbody_core::engine::Status::Paused);
    resumed.resume().unwrap();
    let run = |i: &mut SimInstance| {
        (0..100)
            .map(|_| i.step(&cat).unwrap().positions)
            .collect::<Vec<_>>()
    };
    assert_eq!(positions_bits(&run(&mut direct)), positions_bits(&run(&mut resumed)));
    assert_eq!(direct.sim_time.to_bits(), resumed.sim_time.to_bits());
}

#[test]
fn unknown_version_and_algorithms() {
    let cat = Catalog::with_builtins();
    let i = SimInstance::from_creation(1, CreationParams::default_for(Dimension::Two), &cat).unwrap();
    let text = save_state_string(&i);
    let future = text.replacen("\"formatVersion\": 1", "\"formatVersion\": 999", 1);
    assert_eq!(load_state_str(&future, 2, &cat).unwrap_err().code(), "SCHEMA_MISMATCH");
    let foo = text.replace("\"semiImplicitEuler\"", "\"foo\"");
    let loaded = load_state_str(&foo, 2, &cat).unwrap();
    assert_eq!(loaded.instance.integrator, "semiImplicitEuler");
    assert_eq!(loaded.warnings.len(), 1);
    assert!(loaded.warnings[0].contains("foo"));
    assert_eq!(load_state_str("{\"formatVersion\": 1", 2, &cat).unwrap_err().code(), "CORRUPT_DOCUMENT");
}

#[test]
fn series_ticks_must_increase() {
    let cat = Catalog::with_builtins();
    let (_, series) = golden_scenario(&cat);
    let mut doc = series_document(&series);
    doc.frames.swap(0, 1);
    let text = to_canonical_string(&doc);
    assert_eq!(load_series_str(&text).unwrap_err().code(), "SCHEMA_MISMATCH");
    let mut empty = series.clone();
    empty.frames.clear();
    assert_eq!(save_series_string(&empty).unwrap_err().code(), "EMPTY_SERIES");
}

#[test]
fn recorded_series_plays_back_verbatim_after_reload() {
    let cat = Catalog::with_builtins();
    let mut i = SimInstance::from_creation(1, CreationParams::default_for(Dimension::Two), &cat).unwrap();
    i.resume().unwrap();
    i.start_recording(1, None).unwrap();
    let mut emitted = Vec::new();
    for _ in 0..100 {
        emitted.push(i.step(&cat).unwrap().positions);
    }
    let text = save_series_string(&i.stop_recording().unwrap()).unwrap();
    let series = load_series_str(&text).unwrap();
    let mut p = SimInstance::new(9, create_default_soft_body(Dimension::Two), &cat);
    p.start_playback(series).unwrap();
    let played: Vec<_> = (0..100).map(|_| p.step_playback().unwrap().positions).collect();
    assert_eq!(positions_bits(&played), positions_bits(&emitted));
}

#[test]
fn csv_rows_and_precision() {
    let cat = Catalog::with_builtins();
    let (_, series) = golden_scenario(&cat);
    let mut out = Vec::new();
    export_csv(&series, &mut out).unwrap();
    let mut rdr = csv::Reader::from_reader(out.as_slice());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), series.frames.len() * 8);
    for (r, row) in rows.iter().enumerate() {
        let frame = &series.frames[r / 8];
        let p = frame.positions[r % 8];
        let x: f64 = row[3].parse().unwrap();
        assert_eq!(x.to_bits(), p.x.to_bits());
    }

    let mut empty = series.clone();
    empty.frames.clear();
    let mut out = Vec::new();
    export_csv(&empty, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "tick,sim_time,particle_id,x,y,z,vx,vy,vz\n");
}

#[test]
fn two_frames_three_particles_make_six_rows() {
    let cat = Catalog::with_builtins();
    let mut b = softbody_core::model::SoftBody::new(Dimension::Three);
    for k in 0..3 {
        b.add_particle(1.0, Vec3::new(k as f64, 1.0, 0.0)).unwrap();
    }
    b.pressure_coefficient = Some(0.0);
    let mut i = SimInstance::new(1, b, &cat);
    i.environment.clear();
    i.resume().unwrap();
    i.start_recording(1, None).unwrap();
    i.step(&cat).unwrap();
    i.step(&cat).unwrap();
    let mut out = Vec::new();
    export_csv(&i.stop_recording().unwrap(), &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 7);
}

#[test]
fn import_object_cases() {
    let minimal = r#"{"formatVersion": 1, "dimension": 3, "particles": [{"id": 42, "mass": 2.0, "position": [0, 1, 0]}]}"#;
    let body = import_object(minimal).unwrap().body;
    assert_eq!(body.particle_count(), 1);
    assert_eq!(body.particles[0].id, 0);
    assert!(body.springs.is_empty());

    let with_face = r#"{"formatVersion": 1, "dimension": 1,
        "particles": [
            {"id": 0, "mass": 1, "position": [0, 0, 0]},
            {"id": 1, "mass": 1, "position": [1, 0, 0]},
            {"id": 2, "mass": 1, "position": [2, 0, 0]}],
        "faces": [{"id": 0, "vertices": [0, 1, 2]}]}"#;
    assert_eq!(import_object(with_face).unwrap_err().code(), "INVARIANT_VIOLATION");

    let triangle = with_face.replace("\"dimension\": 1", "\"dimension\": 2").replace("[2, 0, 0]", "[0, 1, 0]");
    let body = import_object(&triangle).unwrap().body;
    assert_eq!((body.faces.len(), body.springs.len()), (1, 3));

    let default2 = create_default_soft_body(Dimension::Two);
    let back = import_object(&export_object(&default2, None)).unwrap().body;
    assert_eq!(back.particles, default2.particles);
    assert_eq!(back.springs, default2.springs);
    assert_eq!(back.layers, default2.layers);
}

#[test]
fn unwritable_sink_is_io_failure() {
    let cat = Catalog::with_builtins();
    let i = SimInstance::from_creation(1, CreationParams::default_for(Dimension::One), &cat).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("x.sbstate");
    assert_eq!(save_state(&path, &i).unwrap_err().code(), "IO_FAILURE");
    assert_eq!(load_state(&path, 1, &cat).unwrap_err().code(), "IO_FAILURE");
}
