use std::fs;
use std::path::Path;

use nirbench::data::Task;
use nirbench::report::{write_artifacts, ReportOptions};
use nirbench::runner::{cell_file, dataset_file, CellRecord, CellStatus, DatasetRecord, RunInfo};
use nirbench::search::Family;

fn cell(dataset: &str, database: &str, model: &str, rmsep: f64) -> CellRecord {
    CellRecord {
        dataset: dataset.into(),
        database: database.into(),
        model: model.into(),
        task: Task::Regression,
        family: Family::Linear,
        status: CellStatus::Ok,
        error: None,
        pipeline: Some("snv".into()),
        params: Some("n_components=3".into()),
        cv_score: Some(rmsep),
        test_score: Some(rmsep),
        effective_components: None,
        counts: None,
        test_evaluations: 1,
        predictions: vec![],
        trials: vec![],
        started_at: 0.0,
        wall_ms: 1.0,
    }
}

fn save<T: serde::Serialize>(path: &Path, value: &T) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, serde_json::to_string(value).unwrap()).unwrap();
}

/// 23 databases: 18 ridge wins, 1 tie, 4 losses against pls; the last loss
/// is extreme.
fn crafted_run(dir: &Path) -> Vec<(String, f64, f64)> {
    let mut rows = Vec::new();
    for i in 0..23 {
        let ds = format!("ds{i:02}");
        let reference = 1.0 + 0.1 * i as f64;
        let ridge = match i {
            0..=17 => reference * (0.9 - 0.005 * i as f64),
            18 => reference,
            19..=21 => reference * (1.05 + 0.01 * i as f64),
            _ => reference * 60.0,
        };
        rows.push((ds, reference, ridge));
    }
    let names: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    for (i, (ds, reference, ridge)) in rows.iter().enumerate() {
        let db = format!("db{i:02}");
        save(&cell_file(dir, ds, "pls"), &cell(ds, &db, "pls", *reference));
        save(&cell_file(dir, ds, "ridge"), &cell(ds, &db, "ridge", *ridge));
        save(
            &cell_file(dir, ds, "knn"),
            &cell(ds, &db, "knn", reference * (1.0 + 0.3 * ((i % 5) as f64 - 2.0) / 10.0)),
        );
        let record = DatasetRecord {
            name: ds.clone(),
            database: db,
            task: Task::Regression,
            n_samples: 50 + i,
            n_features: 100,
            train: vec![],
            test: vec![],
            y_test: vec![],
            outliers: None,
            a95: None,
            t2_threshold: None,
            outlier_error: None,
            extrapolation: vec![],
        };
        save(&dataset_file(dir, ds), &record);
    }
    let info = RunInfo {
        seed: 0,
        folds: 3,
        models: vec!["knn".into(), "pls".into(), "ridge".into()],
        datasets: names,
        engine_version: "test".into(),
    };
    save(&dir.join("run.json"), &info);
    rows
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn report_tables_from_a_crafted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = crafted_run(tmp.path());
    write_artifacts(tmp.path(), &ReportOptions::default()).unwrap();

    let wl = fs::read_to_string(tmp.path().join("winloss.csv")).unwrap();
    assert!(
        wl.lines().any(|l| l == "regression,ridge,pls,18,1,4,0.818,0.826"),
        "{wl}"
    );

    // results.csv keeps every dataset, relative values recomputed here
    let results = csv(&tmp.path().join("results.csv"));
    for (ds, reference, ridge) in &rows {
        let row = results.iter().find(|r| &r[0] == ds && r[3] == "ridge").unwrap();
        let expected = 100.0 * (reference - ridge) / reference;
        let got: f64 = row[10].parse().unwrap();
        assert!((got - expected).abs() < 1e-9, "{ds}: {got} vs {expected}");
    }

    let plot = csv(&tmp.path().join("plot_data.csv"));
    let ridge_rows: Vec<&Vec<String>> = plot.iter().filter(|r| r[2] == "ridge").collect();
    assert_eq!(ridge_rows.len(), 23);
    let hidden: Vec<&str> = ridge_rows
        .iter()
        .filter(|r| r[5] == "false")
        .map(|r| r[1].as_str())
        .collect();
    assert_eq!(hidden, vec!["ds22"]);

    let svg = fs::read_to_string(tmp.path().join("cd_diagram.svg")).unwrap();
    for m in ["knn", "pls", "ridge"] {
        assert!(svg.contains(&format!(">{m} (")), "label {m} missing");
    }
}
