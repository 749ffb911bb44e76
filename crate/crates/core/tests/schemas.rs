//! Every document the crate writes validates against the shipped schemas.

use std::path::Path;

use jsonschema::{Registry, Validator};
use serde_json::{json, Value};
use subedge::app::{cmd_fit, run_compare, ExperimentSpec};
use subedge::pipeline::{Method, PipelineConfig};
use subedge::simdata::{NoiseSpec, SquareSpec};

const SCHEMAS: [&str; 7] = [
    "model",
    "metrics",
    "fit-report",
    "truth",
    "noise",
    "experiment-spec",
    "compare-report",
];

fn load(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn validator(name: &str) -> Validator {
    let mut registry = Registry::new();
    for s in SCHEMAS {
        let doc = load(s);
        let id = doc["$id"].as_str().unwrap().to_string();
        registry = registry.add(id, doc).unwrap();
    }
    let registry = registry.prepare().unwrap();
    jsonschema::options()
        .with_registry(&registry)
        .build(&load(name))
        .unwrap()
}

fn assert_valid(name: &str, doc: &Value) {
    let v = validator(name);
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{doc:#}");
}

#[test]
fn fit_outputs_validate() {
    let (img, truth) = SquareSpec::default().render().unwrap();
    for method in [Method::Stochastic, Method::Classical] {
        let (model, run) = cmd_fit(&img, Some(&truth), method, &PipelineConfig::default()).unwrap();
        assert_valid("model", &serde_json::to_value(&model).unwrap());
        let run = serde_json::to_value(&run).unwrap();
        assert_valid("fit-report", &run);
        assert_eq!(run["method"], method.as_str());
    }
    assert_valid("truth", &serde_json::to_value(&truth).unwrap());
}

#[test]
fn experiment_documents_validate() {
    let spec = ExperimentSpec {
        noise: vec![
            NoiseSpec::None,
            NoiseSpec::SaltPepper {
                p0: 0.2,
                gamma: 0.3,
            },
        ],
        trials: 2,
        ..Default::default()
    };
    assert_valid("experiment-spec", &serde_json::to_value(&spec).unwrap());
    let report = run_compare(&spec).unwrap();
    assert_valid("compare-report", &serde_json::to_value(&report).unwrap());
}

#[test]
fn minimal_spec_validates_and_parses() {
    let doc = json!({"noise": [{"kind": "gaussian", "sigma": 0.1}], "trials": 3});
    assert_valid("experiment-spec", &doc);
    let spec: ExperimentSpec = serde_json::from_value(doc).unwrap();
    assert_eq!(spec.trials, 3);
}

#[test]
fn schemas_reject_malformed_documents() {
    let model = validator("model");
    assert!(!model.is_valid(&json!({"degree": 3, "closed": true, "knots": [0, 1]})));
    let truth = validator("truth");
    assert!(
        !truth.is_valid(&json!({"type": "circle", "corners": [[0, 0], [1, 0], [1, 1], [0, 1]]}))
    );
    let report = validator("fit-report");
    assert!(!report.is_valid(&json!({"energy_trace": [], "residual_rms": 0.1})));
    let spec = validator("experiment-spec");
    assert!(!spec.is_valid(&json!({"trials": 0})));
    assert!(!spec.is_valid(&json!({"noise": []})));
}
