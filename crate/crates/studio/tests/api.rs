use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use hdsa_core::hyper_init::InitOptions;
use hdsa_studio::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(AppState::new(InitOptions {
        mc_eig: 2000,
        ..InitOptions::default()
    }))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn session(app: &Router, config: Value) -> String {
    let (status, body) = call(app, Method::POST, "/session", Some(config)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

fn lowest_frequency_median(overview: &Value) -> f64 {
    let bins = overview["bins"].as_array().unwrap();
    let bin = bins.iter().rev().find(|b| b["count"].as_u64().unwrap() > 0).unwrap();
    bin["quantiles"][2].as_f64().unwrap()
}

fn flat(values: &Value) -> Vec<f64> {
    match values {
        Value::Array(a) if a.first().is_some_and(Value::is_array) => a.iter().flat_map(flat).collect(),
        Value::Array(a) => a.iter().map(|v| v.as_f64().unwrap()).collect(),
        _ => panic!("not an array"),
    }
}

#[tokio::test]
async fn review_round_trip() {
    let app = app();
    let id = session(&app, json!({"problem": "stationary-1d", "n_space": 33})).await;

    let (status, hyper) = call(&app, Method::GET, &format!("/session/{id}/hyperparams"), None).await;
    assert_eq!(status, StatusCode::OK);
    let alpha_z = hyper["hyperparams"]["alpha_z"].as_f64().unwrap();
    assert!(alpha_z > 0.0);

    let (status, gen) = call(&app, Method::POST, &format!("/session/{id}/samples"), Some(json!({"q": 50, "seed": 7}))).await;
    assert_eq!(status, StatusCode::OK, "{gen}");
    let p = gen["p"].as_u64().unwrap();
    assert_eq!(gen["records"].as_u64().unwrap(), 50 * p);

    let (status, ov) = call(&app, Method::GET, &format!("/session/{id}/overview?view=control"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ov["stale"], json!(false));
    let counts: u64 = ov["bins"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(counts, 50 * p);
    let before = lowest_frequency_median(&ov);

    // Clicking a listed point fetches fields that reproduce its metric.
    let bin = ov["bins"].as_array().unwrap().iter().find(|b| b["points"].as_array().is_some_and(|p| !p.is_empty())).unwrap();
    let point = &bin["points"][0];
    let (i, k) = (point["i"].as_u64().unwrap(), point["k"].as_u64().unwrap());
    let (status, rec) = call(&app, Method::GET, &format!("/session/{id}/sample/{i}/{k}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let recomputed = flat(&rec["difference"]["values"]).iter().fold(0.0f64, |a, x| a.max(x.abs()));
    assert_eq!(recomputed, point["value"].as_f64().unwrap());
    assert_eq!(rec["dz"]["dim"], json!(1));
    assert_eq!(rec["dz"]["nodes"].as_array().unwrap().len(), 33);

    let (status, patched) = call(
        &app,
        Method::PATCH,
        &format!("/session/{id}/hyperparams"),
        Some(json!({"alpha_z": alpha_z / 4.0})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(patched["stale"], json!(true));
    assert_eq!(patched["audit"].as_array().unwrap().len(), 1);

    let (_, stale) = call(&app, Method::GET, &format!("/session/{id}/overview?view=control"), None).await;
    assert_eq!(stale["stale"], json!(true));

    call(&app, Method::POST, &format!("/session/{id}/samples"), Some(json!({"q": 50, "seed": 7}))).await;
    let (_, ov2) = call(&app, Method::GET, &format!("/session/{id}/overview?view=control"), None).await;
    assert_eq!(ov2["stale"], json!(false));
    let after = lowest_frequency_median(&ov2);
    assert!((after / before - 0.5).abs() < 1e-12, "{before} -> {after}");

    let (status, state) = call(&app, Method::GET, &format!("/session/{id}/overview?view=state"), None).await;
    assert_eq!(status, StatusCode::OK);
    let counts: u64 = state["bins"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(counts, 50);
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let app = app();
    let missing = "00000000-0000-4000-8000-000000000000";
    let (status, body) = call(&app, Method::GET, &format!("/session/{missing}/hyperparams"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], json!("not-found"));

    let (status, _) = call(&app, Method::POST, "/session", Some(json!({"problem": "stationary-1d", "n_space": 2}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let id = session(&app, json!({"problem": "stationary-1d", "n_space": 17})).await;
    let (status, body) = call(&app, Method::GET, &format!("/session/{id}/overview"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], json!("no-data"));

    let (status, body) = call(&app, Method::PATCH, &format!("/session/{id}/hyperparams"), Some(json!({"beta_u": -1.0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], json!("validation-error"));

    let (status, body) = call(&app, Method::PATCH, &format!("/session/{id}/hyperparams"), Some(json!({}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["audit"].as_array().unwrap().len(), 1);
    assert_eq!(body["audit"][0]["before"], body["audit"][0]["after"]);

    call(&app, Method::POST, &format!("/session/{id}/samples"), Some(json!({"q": 5}))).await;
    let (status, _) = call(&app, Method::GET, &format!("/session/{id}/sample/5/0"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call(&app, Method::GET, &format!("/session/{id}/timeseries"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], json!("unsupported-view"));
    let (status, _) = call(&app, Method::GET, &format!("/session/{id}/overview?view=both"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, &format!("/session/{id}/samples"), Some(json!({"q": 0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn transient_timeseries_and_time_major_fields() {
    let app = app();
    let id = session(&app, json!({"problem": "transient-1d", "n_space": 17, "n_time": 16})).await;
    call(&app, Method::POST, &format!("/session/{id}/samples"), Some(json!({"q": 8, "seed": 1}))).await;
    let (status, ts) = call(&app, Method::GET, &format!("/session/{id}/timeseries"), None).await;
    assert_eq!(status, StatusCode::OK, "{ts}");
    let curves = ts["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 8);
    assert!(curves.iter().all(|c| c.as_array().unwrap().len() == 16));
    assert_eq!(ts["data"].as_array().unwrap().len(), 16);

    let (_, rec) = call(&app, Method::GET, &format!("/session/{id}/sample/0/0"), None).await;
    let rows = rec["delta"]["values"].as_array().unwrap();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows[0].as_array().unwrap().len(), 17);
    assert_eq!(rec["dz"]["values"].as_array().unwrap().len(), 17);
}

#[tokio::test]
async fn posterior_and_snapshot_import() {
    let app = app();
    let id = session(&app, json!({"problem": "stationary-1d", "n_space": 17})).await;
    let (status, post) = call(&app, Method::GET, &format!("/session/{id}/posterior?n=12&seed=3"), None).await;
    assert_eq!(status, StatusCode::OK, "{post}");
    assert_eq!(post["samples"].as_array().unwrap().len(), 12);
    assert_eq!(flat(&post["highfi_optimum"]["values"]).len(), 17);

    call(&app, Method::PATCH, &format!("/session/{id}/hyperparams"), Some(json!({"beta_z": 0.02}))).await;
    call(&app, Method::POST, &format!("/session/{id}/samples"), Some(json!({"q": 6, "seed": 2}))).await;
    let (_, ov) = call(&app, Method::GET, &format!("/session/{id}/overview"), None).await;
    let (status, snap) = call(&app, Method::GET, &format!("/session/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["audit"].as_array().unwrap().len(), 1);

    let (status, created) = call(&app, Method::POST, "/session/import", Some(snap.clone())).await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    assert_eq!(created["id"], snap["id"]);
    assert_eq!(created["hyperparams"], snap["hyperparams"]);
    let (_, ov2) = call(&app, Method::GET, &format!("/session/{id}/overview"), None).await;
    assert_eq!(ov, ov2);
}

#[tokio::test(flavor = "multi_thread")]
async fn live_server_round_trip() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app()).await.unwrap() });
    let base = format!("http://{addr}");
    let client = reqwest::Client::new();

    let created: Value = client
        .post(format!("{base}/session"))
        .json(&json!({"problem": "stationary-1d", "n_space": 33}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let id = created["id"].as_str().unwrap();
    let alpha_z = created["hyperparams"]["alpha_z"].as_f64().unwrap();
    let gen: Value = client
        .post(format!("{base}/session/{id}/samples"))
        .json(&json!({"q": 50, "seed": 11}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let ov: Value = client
        .get(format!("{base}/session/{id}/overview?view=control"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let counts: u64 = ov["bins"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(counts, gen["records"].as_u64().unwrap());

    let point = &ov["bins"].as_array().unwrap().iter().rev().find(|b| b["count"].as_u64().unwrap() > 0).unwrap()["points"][0];
    let rec: Value = client
        .get(format!("{base}/session/{id}/sample/{}/{}", point["i"], point["k"]))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let recomputed = flat(&rec["difference"]["values"]).iter().fold(0.0f64, |a, x| a.max(x.abs()));
    assert_eq!(recomputed, point["value"].as_f64().unwrap());

    let resp = client
        .patch(format!("{base}/session/{id}/hyperparams"))
        .json(&json!({"alpha_z": alpha_z / 4.0}))
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_success());
    client
        .post(format!("{base}/session/{id}/samples"))
        .json(&json!({"q": 50, "seed": 11}))
        .send()
        .await
        .unwrap();
    let ov2: Value = client
        .get(format!("{base}/session/{id}/overview?view=control"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(ov2["stale"], json!(false));
    let ratio = lowest_frequency_median(&ov2) / lowest_frequency_median(&ov);
    assert!((ratio - 0.5).abs() < 1e-12);
}
