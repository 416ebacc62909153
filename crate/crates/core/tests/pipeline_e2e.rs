// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::sync::Arc;

use shellgate_core::classify::{CentroidClassifier, CoastClassifier};
use shellgate_core::embed::{Embedder, ReferenceEmbedder, INPUT_SIZE};
use shellgate_core::pipeline::{batch_triage, triage, TriageInput};
use shellgate_core::synth::{ood_image, shell_image};
use shellgate_core::{
    build_index, Coast, EmbeddingVector, GateConfig, Status, TriageContext, VectorIndex,
    VerdictJson,
};

const DIM: usize = 1000;

fn planted_index() -> VectorIndex {
    let e = ReferenceEmbedder::new(DIM).unwrap();
    let mut items: Vec<(String, Coast, EmbeddingVector)> = Vec::new();
    for coast in Coast::ALL {
        for v in 0..20 {
            let img = shell_image(coast, v, INPUT_SIZE);
            items.push((format!("{coast}-{v:03}"), coast, e.embed(&img).unwrap()));
        }
    }
    build_index(items).unwrap()
}

fn context() -> TriageContext {
    let index = Arc::new(planted_index());
    let classifier: Arc<dyn CoastClassifier> =
        Arc::new(CentroidClassifier::from_index(&index, 1.0).unwrap());
    TriageContext::new(
        Arc::new(ReferenceEmbedder::new(DIM).unwrap()),
        index,
        GateConfig::default(),
        classifier,
    )
    .unwrap()
}

fn suite() -> Vec<TriageInput> {
    vec![
        TriageInput {
            request_id: "pacific".into(),
            bytes: shell_image(Coast::Pacific, 1000, INPUT_SIZE).to_png(),
        },
        TriageInput {
            request_id: "caribbean".into(),
            bytes: shell_image(Coast::Caribbean, 1000, INPUT_SIZE).to_png(),
        },
        TriageInput {
            request_id: "far".into(),
            bytes: ood_image(1, INPUT_SIZE).to_png(),
        },
    ]
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_verdicts.json")
}

#[test]
fn three_image_suite() {
    let ctx = context();
    let verdicts: Vec<VerdictJson> = suite()
        .iter()
        .map(|i| triage(&i.bytes, &i.request_id, &ctx).to_wire())
        .collect();

    assert_eq!(verdicts[0].status, Status::Valid);
    assert_eq!(verdicts[0].label, Some(Coast::Pacific));
    assert_eq!(verdicts[1].status, Status::Valid);
    assert_eq!(verdicts[1].label, Some(Coast::Caribbean));
    assert_eq!(verdicts[2].status, Status::Anomaly);
    assert_eq!(verdicts[2].label, None);
    for v in &verdicts {
        v.validate().unwrap();
        assert_eq!((v.lambda, v.k), (0.955, 5));
    }

    let content: Vec<VerdictJson> = verdicts.iter().map(|v| v.without_timings()).collect();
    let text = serde_json::to_string_pretty(&content).unwrap() + "\n";
    if std::env::var_os("SHELLGATE_UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &text).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden verdict file");
    assert_eq!(text, golden);
}

#[test]
fn anomalies_skip_the_classifier_and_each_image_is_embedded_once() {
    let ctx = context();
    let inputs = suite();
    let out = batch_triage(&inputs, &ctx, 1).unwrap();
    let valid = out.iter().filter(|v| v.status == Status::Valid).count();
    assert_eq!(ctx.instrumentation().embed_calls(), 3);
    assert_eq!(ctx.instrumentation().classify_calls(), valid);
    assert_eq!(valid, 2);
}

#[test]
fn batch_equals_single_triage() {
    let ctx = context();
    let inputs: Vec<TriageInput> = (0..100u64)
        .map(|i| TriageInput {
            request_id: format!("img-{i:03}"),
            bytes: match i % 3 {
                0 => shell_image(Coast::Pacific, 500 + i, 64).to_png(),
                1 => shell_image(Coast::Caribbean, 500 + i, 96).to_jpeg(),
                _ => ood_image(i, 48).to_png(),
            },
        })
        .collect();
    let single: Vec<VerdictJson> = inputs
        .iter()
        .map(|i| {
            triage(&i.bytes, &i.request_id, &ctx)
                .to_wire()
                .without_timings()
        })
        .collect();
    for p in [1, 4] {
        let batch: Vec<VerdictJson> = batch_triage(&inputs, &ctx, p)
            .unwrap()
            .iter()
            .map(|v| v.to_wire().without_timings())
            .collect();
        assert_eq!(batch, single, "parallelism {p}");
    }
    assert!(batch_triage(&inputs, &ctx, 0).is_err());
}

#[test]
fn bad_uploads_become_error_verdicts() {
    let ctx = context();
    for (id, bytes) in [
        ("empty", Vec::new()),
        ("garbage", b"definitely not an image".to_vec()),
        ("gif", b"GIF89a\x01\x00\x01\x00\x00\x00\x00;".to_vec()),
        (
            "truncated",
            shell_image(Coast::Pacific, 1, 64).to_png()[..40].to_vec(),
        ),
    ] {
        let v = triage(&bytes, id, &ctx).to_wire();
        assert_eq!(v.status, Status::Error, "{id}");
        assert_eq!(v.request_id, id);
        assert!(v.score.is_none() && v.label.is_none());
        assert!(v.error.is_some());
        v.validate().unwrap();
    }
}

#[test]
fn timings_are_reported() {
    let ctx = context();
    let v = triage(&suite()[0].bytes, "t", &ctx);
    let t = v.timings;
    assert!(t.total_ms >= t.stage_sum() - 1e-6);
    assert!(t.embed_ms > 0.0);
}

#[test]
fn small_index_clamps_k() {
    let e = ReferenceEmbedder::new(DIM).unwrap();
    let items: Vec<_> = (0..3u64)
        .map(|v| {
            let c = Coast::ALL[(v % 2) as usize];
            (
                format!("s{v}"),
                c,
                e.embed(&shell_image(c, v, INPUT_SIZE)).unwrap(),
            )
        })
        .collect();
    let index = Arc::new(build_index(items).unwrap());
    let classifier: Arc<dyn CoastClassifier> =
        Arc::new(CentroidClassifier::from_index(&index, 1.0).unwrap());
    let ctx = TriageContext::new(Arc::new(e), index, GateConfig::default(), classifier).unwrap();
    let v = triage(
        &shell_image(Coast::Pacific, 0, INPUT_SIZE).to_png(),
        "x",
        &ctx,
    );
    assert!(v.gate.as_ref().unwrap().k_clamped);
    assert_eq!(v.gate.unwrap().neighbors.len(), 3);
}

#[test]
fn mismatched_dims_refused() {
    let index = Arc::new(planted_index());
    let classifier: Arc<dyn CoastClassifier> =
        Arc::new(CentroidClassifier::from_index(&index, 1.0).unwrap());
    let err = TriageContext::new(
        Arc::new(ReferenceEmbedder::new(64).unwrap()),
        index,
        GateConfig::default(),
        classifier,
    )
    .unwrap_err();
    assert!(matches!(
        err,
        shellgate_core::Error::DimensionMismatch { .. }
    ));
}

#[cfg(feature = "onnx")]
#[test]
fn model_backends_in_the_pipeline() {
    use shellgate_core::{ClassifierSpec, EmbedderSpec};
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let spec = EmbedderSpec::external(fixtures.join("embedder.onnx"), 8);
    let e = shellgate_core::embed::build_embedder(&spec).unwrap();
    let items: Vec<_> = (0..10u64)
        .map(|v| {
            let c = Coast::ALL[(v % 2) as usize];
            (
                format!("m{v}"),
                c,
                e.embed(&shell_image(c, v, INPUT_SIZE)).unwrap(),
            )
        })
        .collect();
    let index = Arc::new(build_index(items).unwrap());
    let ctx = TriageContext::from_specs(
        &spec,
        index,
        GateConfig::new(0.5, 3).unwrap(),
        &ClassifierSpec::external(fixtures.join("classifier_embedding.onnx")),
    )
    .unwrap();
    let v = triage(
        &shell_image(Coast::Pacific, 77, INPUT_SIZE).to_png(),
        "m",
        &ctx,
    )
    .to_wire();
    v.validate().unwrap();
    assert_ne!(v.status, Status::Error, "{:?}", v.error);
}
