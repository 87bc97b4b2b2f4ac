use caltv_wasm::*;
use serde_json::Value;

#[test]
fn capped_poisson_is_a_distribution() {
    for rate in [0.0, 0.3, 2.0, 9.0] {
        let p = capped_poisson(rate, 5);
        assert_eq!(p.len(), 6);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
    }
    assert_eq!(capped_poisson(0.0, 3), vec![1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn reconstruction_matches_uncapped_for_small_rates() {
    let mut rates = vec![0.0; 11];
    rates[4] = 1e-3; // price 30
    let r = reconstruct(&ReconstructRequest { rates, cap: None }).unwrap();
    assert!((r.uncapped - 0.03).abs() < 1e-12);
    assert!((r.ltv - r.uncapped).abs() < 1e-9);

    // a huge rate saturates at cap * price
    let mut rates = vec![0.0; 11];
    rates[10] = 500.0;
    let r = reconstruct(&ReconstructRequest {
        rates,
        cap: Some(5),
    })
    .unwrap();
    assert!((r.ltv - 5.0 * 648.0).abs() < 1e-6);
    assert!((r.uncapped / r.ltv - 100.0).abs() < 1e-6);
}

#[test]
fn reconstruct_rejects_bad_input() {
    assert!(reconstruct_json(r#"{"rates": [1.0]}"#).is_err());
    assert!(reconstruct_json(r#"{"rates": [-1,0,0,0,0,0,0,0,0,0,0]}"#).is_err());
    assert!(reconstruct_json("not json")
        .unwrap_err()
        .starts_with("bad request"));
}

#[test]
fn explore_summarizes_dataset() {
    let out = explore_json(r#"{"n_samples": 5000, "seed": 3}"#).unwrap();
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["n_samples"], 5000);
    let hist: usize = v["histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["count"].as_u64().unwrap() as usize)
        .sum();
    assert_eq!(hist, v["window_payers"].as_u64().unwrap() as usize);
    assert_eq!(v["categories"].as_array().unwrap().len(), 11);
    let (t1, t10) = (
        v["top1_share"].as_f64().unwrap(),
        v["top10_share"].as_f64().unwrap(),
    );
    assert!(0.0 < t1 && t1 <= t10 && t10 <= 1.0);
    assert_eq!(
        out,
        explore_json(r#"{"n_samples": 5000, "seed": 3}"#).unwrap()
    );
    assert!(explore_json(r#"{"n_samples": 10000000}"#).is_err());
}

#[test]
fn compare_reports_three_models() {
    let r = compare(&CompareRequest {
        n_samples: 4000,
        epochs: 2,
        seed: 1,
    })
    .unwrap();
    assert_eq!(r.models.len(), 3);
    assert!(r.evaluated > 0);
    for m in &r.models {
        let a = m.aulc.unwrap();
        assert!((0.0..=1.0).contains(&a), "{}: {a}", m.model);
        assert_eq!(m.decile_bias.len(), 10);
        assert_eq!(m.lorenz.first(), Some(&[0.0, 0.0]));
        assert_eq!(m.lorenz.last().unwrap()[1], 1.0);
    }
}
