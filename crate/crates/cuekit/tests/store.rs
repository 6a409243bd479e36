mod support;

use std::fs;

use axum::http::Method;
use cuekit::project::{ProjectStore, Stage, StoreError};
use support::{app, project_at};

#[tokio::test]
async fn artifacts_round_trip_and_tampering_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = project_at(&app, "render").await;
    let store = ProjectStore::new(dir.path().join("projects"));
    let p = store.load(&id).unwrap();
    assert_eq!(p.stage, Stage::Rendered);
    store.save(&p).unwrap();
    assert_eq!(store.load(&id).unwrap(), p);

    fs::write(store.dir(&id).join("melody.mid"), b"MThd garbage").unwrap();
    match store.load(&id) {
        Err(StoreError::Corrupt { file, .. }) => assert_eq!(file, "melody.mid"),
        other => panic!("expected a corrupt melody, got {other:?}"),
    }
    let list = support::call(&app, Method::GET, "/projects", None, None).await.json();
    assert!(list.to_string().contains(&id));
}

#[tokio::test]
async fn scheme_is_optional_before_arranging() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = project_at(&app, "assess").await;
    let store = ProjectStore::new(dir.path().join("projects"));
    assert!(!store.dir(&id).join("scheme.json").exists());
    assert_eq!(store.load(&id).unwrap().stage, Stage::Assessed);
}

#[test]
fn ids_count_up_and_unknown_ids_are_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let engine = cuekit::pipeline::Engine::new(cuekit::demo::demo_config(dir.path())).unwrap();
    let clip = || cuekit::project::ClipRef { source: None, duration: 3.0, frame_rate: None };
    let a = engine.create_with_spots("a", vec![1.0], clip()).unwrap();
    let b = engine.create_with_spots("b", vec![1.0, 2.0], clip()).unwrap();
    assert_eq!((a.id.as_str(), b.id.as_str()), ("p0001", "p0002"));
    assert_eq!(engine.store.list().unwrap(), vec!["p0001", "p0002"]);
    assert!(matches!(engine.store.load("../etc"), Err(StoreError::NotFound(_))));
}
