use std::fs;

use nirbench::data::write_dataset_csv;
use nirbench::runner::{cell_file, load_run, run, RunOptions};
use nirbench::synthetic::DerivativeScatter;

#[test]
fn resume_recomputes_only_missing_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let mut manifest = String::from("models = [\"pls\"]\nseed = 0\n");
    for i in 0..2 {
        let name = format!("syn{i}");
        let ds = DerivativeScatter {
            seed: 100 + i,
            n: 40,
            ..Default::default()
        }
        .dataset(&name, &format!("db{i}"))
        .unwrap();
        write_dataset_csv(&ds, &tmp.path().join(format!("{name}.csv")), "y").unwrap();
        manifest.push_str(&format!(
            "\n[[datasets]]\nname = \"{name}\"\ndatabase = \"db{i}\"\npath = \"{name}.csv\"\ntarget = \"y\"\n\
             task = \"regression\"\nsplit = {{ method = \"spxy\", test_fraction = 0.25 }}\n"
        ));
    }
    let config = tmp.path().join("manifest.toml");
    fs::write(&config, manifest).unwrap();
    let out = tmp.path().join("run");
    let mut opts = RunOptions::new(&config, &out);
    opts.workers = Some(2);

    let first = run(&opts).unwrap();
    assert_eq!((first.ok, first.resumed), (2, 0));
    let (_, _, before) = load_run(&out).unwrap();

    fs::remove_file(cell_file(&out, "syn1", "pls")).unwrap();
    opts.resume = true;
    let second = run(&opts).unwrap();
    assert_eq!((second.ok, second.resumed), (2, 1));
    let (_, _, after) = load_run(&out).unwrap();

    assert_eq!(before[0], after[0]);
    assert_ne!(before[1].started_at, after[1].started_at);
    assert_eq!(before[1].test_score, after[1].test_score);
    assert_eq!(before[1].pipeline, after[1].pipeline);
}
