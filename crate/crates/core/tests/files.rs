use std::path::Path;

use proptest::prelude::*;
use reclearn::io::manifest::{load_session, save_session, SessionManifest};
use reclearn::io::recording_file::{
    read_recording, read_recording_with_meta, read_samples, write_recording, write_recording_for, write_samples,
};
use reclearn::session::Stage;
use reclearn::types::{
    cue_schedule_with, label_samples, ArmCondition, EmgSample, Intent, Recording, Role, SAMPLE_RATE_HZ,
};
use reclearn::{Session, SessionConfig, SimulatedSubject, SubjectMeta, SubjectProfile};

fn condition() -> impl Strategy<Value = ArmCondition> {
    (0usize..5).prop_map(|i| if i == 4 { ArmCondition::Free } else { ArmCondition::FIXED[i] })
}

fn samples() -> impl Strategy<Value = Vec<EmgSample>> {
    prop::collection::vec(
        (
            1u64..500,
            prop::array::uniform8(prop_oneof![-1e6f64..1e6, 0.0f64..1200.0, Just(0.0), Just(-0.0), Just(1e-300)]),
            prop::option::of(0u8..3),
        ),
        0..200,
    )
    .prop_map(|rows| {
        let mut t = 0;
        rows.into_iter()
            .map(|(dt, channels, cue)| {
                t += dt;
                EmgSample::new(t, channels, cue.and_then(Intent::from_code))
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recordings_round_trip(samples in samples(), condition in condition(), iteration in 1u32..5, test in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rec = Recording {
            id: format!("rec-{iteration}"),
            iteration,
            condition,
            role: if test { Role::Test } else { Role::Train },
            samples,
            sample_rate_hz: SAMPLE_RATE_HZ,
        };
        write_recording_for(&rec, "subject-7", &path).unwrap();
        let (back, meta) = read_recording_with_meta(&path).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(meta.subject_id, "subject-7");
        for (a, b) in back.samples.iter().zip(&rec.samples) {
            for (x, y) in a.channels.iter().zip(&b.channels) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn sample_body_round_trips_in_memory(samples in samples()) {
        let mut buf = Vec::new();
        write_samples(&samples, &mut buf).unwrap();
        prop_assert_eq!(read_samples(buf.as_slice()).unwrap(), samples);
    }
}

#[test]
fn full_length_recording_round_trips() {
    let mut subject = SimulatedSubject::new(SubjectProfile::default_adaptive().with_seed(2));
    let schedule = cue_schedule_with(5000, 3);
    let samples = (0..3250u64)
        .map(|i| {
            let t = i * 20;
            let cue = schedule.intent_at(t).unwrap();
            let mut s = subject.emit(cue, ArmCondition::FIXED[2], t);
            s.cue = None;
            s
        })
        .collect();
    let raw = Recording {
        id: "full".into(),
        iteration: 1,
        condition: ArmCondition::FIXED[2],
        role: Role::Train,
        samples,
        sample_rate_hz: SAMPLE_RATE_HZ,
    };
    let rec = label_samples(&raw, &schedule, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("full.csv");
    write_recording(&rec, &path).unwrap();
    assert_eq!(read_recording(&path).unwrap(), rec);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3251);
    assert!(text.starts_with("t_ms,ch0,ch1,ch2,ch3,ch4,ch5,ch6,ch7,cue\n"));
}

fn manifest_counts(path: &Path, iteration: u32) -> (usize, usize) {
    let m = SessionManifest::read(path).unwrap();
    let e = m.iteration(iteration).unwrap();
    (e.count(Role::Train), e.count(Role::Test))
}

#[test]
fn session_saves_after_each_stage_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    let mut session = Session::new(SubjectMeta::simulated("resume"), SessionConfig::default());
    session.persist_to(&manifest).unwrap();
    let mut subject = SimulatedSubject::new(SubjectProfile::default_adaptive().with_seed(4));

    session.begin_stage(Stage::Collect).unwrap();
    session.run_collection(&mut subject).unwrap();
    assert_eq!(manifest_counts(&manifest, 1), (4, 4));
    assert_eq!(SessionManifest::read(&manifest).unwrap().completed, Some(Stage::Collect));

    // Resume in a fresh process-equivalent and continue from the saved stage.
    let mut resumed = load_session(&manifest).unwrap();
    assert_eq!(resumed.datasets(), session.datasets());
    resumed.persist_to(&manifest).unwrap();
    resumed.begin_stage(Stage::Train).unwrap();
    let model = resumed.train_iteration().unwrap();
    resumed.begin_stage(Stage::Evaluate).unwrap();
    let report = resumed.evaluate_iteration().unwrap();

    let again = load_session(&manifest).unwrap();
    assert_eq!(again.models()[&1].as_ref(), model.as_ref());
    assert_eq!(again.reports()[&1], report);
    assert_eq!(again.completed_stage(), Some(Stage::Evaluate));

    resumed.begin_stage(Stage::Practice).unwrap();
    resumed.run_practice(&mut subject, 5000).unwrap();
    resumed.begin_stage(Stage::Collect).unwrap();
    resumed.run_collection(&mut subject).unwrap();
    assert_eq!(manifest_counts(&manifest, 2), (2, 2));
    let m = SessionManifest::read(&manifest).unwrap();
    assert!(m.iteration(1).unwrap().practice.is_some());
    assert_eq!(m.iteration, 2);
}

#[test]
fn saving_twice_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    let mut session = Session::new(SubjectMeta::simulated("twice"), SessionConfig::default());
    let mut subject = SimulatedSubject::new(SubjectProfile::default_static());
    session.iterate(&mut subject, 1).unwrap();
    let first = save_session(&session, &manifest).unwrap();
    let second = save_session(&session, &manifest).unwrap();
    assert_eq!(first, second);
}
