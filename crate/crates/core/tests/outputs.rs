use std::collections::BTreeMap;
use std::path::Path;

use christoffel_refine::harness::{compute_experiment, parse_float, preset, Overrides, Study};

fn files(name: &str, k_max: u64, reps: usize) -> BTreeMap<String, String> {
    let mut spec = preset(name).unwrap();
    spec.apply(&Overrides {
        repetitions: Some(reps),
        k_max: Some(k_max),
        ..Overrides::default()
    });
    if let Study::WeightedLs { settings } = &mut spec.study {
        settings.n_grid.truncate(2);
    }
    compute_experiment(&spec, Path::new("unused")).unwrap().files.into_iter().collect()
}

fn rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let body = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, body)
}

#[test]
fn cd_tables_have_the_plotting_layout() {
    let out = files("cd", 3, 2);
    let (header, body) = rows(&out["cd.csv"]);
    assert_eq!(header, ["x", "f_true", "f_d_exact", "f_d_refined"]);
    assert!(!body.is_empty());
    let xs: Vec<f64> = body.iter().map(|r| parse_float(&r[0]).unwrap()).collect();
    assert!(xs.windows(2).all(|w| w[0] < w[1]));
    for row in &body {
        for field in row {
            assert!(parse_float(field).unwrap().is_finite(), "{field}");
        }
    }

    let (header, body) = rows(&out["cd_repetitions.csv"]);
    assert_eq!(header, ["rep", "step", "kn", "max_error", "gamma"]);
    assert_eq!(body.len(), 2);

    for name in ["levels_exact.csv", "levels_initial.csv", "levels_refined.csv"] {
        let (header, body) = rows(&out[name]);
        assert_eq!(header[0], "x");
        let ys: Vec<f64> = header[1..].iter().map(|y| parse_float(y).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] < w[1]));
        assert!(body.iter().all(|r| r.len() == header.len()));
    }
    assert!(out.contains_key("manifest.json"));
}

#[test]
fn weighted_ls_tables_have_the_plotting_layout() {
    let out = files("weighted-ls", 1, 3);
    let (header, body) = rows(&out["weighted_ls.csv"]);
    assert_eq!(header, ["target", "n", "rep", "method", "rel_error"]);
    let methods: std::collections::BTreeSet<&str> = body.iter().map(|r| r[3].as_str()).collect();
    assert_eq!(methods.into_iter().collect::<Vec<_>>(), ["naive", "optimal"]);
    assert!(body.iter().all(|r| parse_float(&r[4]).unwrap() >= 0.0));

    let (header, body) = rows(&out["weighted_ls_quantiles.csv"]);
    assert_eq!(header, ["target", "method", "n", "level", "rel_error"]);
    assert!(!body.is_empty());
}

#[test]
fn repetition_tables_cover_every_run() {
    let out = files("step", 12, 2);
    let (header, body) = rows(&out["step-n1-exact_repetitions.csv"]);
    assert_eq!(header, ["rep", "step", "kn", "gamma"]);
    let reps: std::collections::BTreeSet<&str> = body.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(reps.len(), 2);
    let last_steps: Vec<&Vec<String>> = body.iter().filter(|r| r[1] == "12").collect();
    assert_eq!(last_steps.len(), 2);
}
