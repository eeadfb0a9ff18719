use cagr_demo::{attention_demo, centrality_demo, noise_demo};

#[test]
fn demo_outputs_are_json_with_expected_keys() {
    let c = centrality_demo("a b\nb c\nc a\nc d", 3).unwrap();
    assert_eq!(c["users"].as_array().unwrap().len(), 4);
    for m in ["pagerank", "eigenvector", "closeness", "betweenness"] {
        assert_eq!(c["measures"][m]["scores"].as_array().unwrap().len(), 4);
    }
    let n = noise_demo("1 0 2\n0 1 0", "1", 0.5).unwrap();
    let total: f64 = n["group_aware"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let a = attention_demo("1 2\n3 4\n5 6", 1, 0, true).unwrap();
    assert_eq!(a["attention"][0].as_array().unwrap().len(), 3);
}

#[test]
fn attention_demo_is_seeded() {
    let a = attention_demo("1 2 3 4\n4 3 2 1", 2, 9, false).unwrap();
    let b = attention_demo("1 2 3 4\n4 3 2 1", 2, 9, false).unwrap();
    let c = attention_demo("1 2 3 4\n4 3 2 1", 2, 10, false).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
