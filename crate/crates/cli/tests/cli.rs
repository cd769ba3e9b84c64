use std::fs;
use std::path::Path;

use pmd_cli::{cli_main, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use pmd_core::pmd::PmdRunRecord;
use pmd_core::report::ComparisonReport;

fn run(args: &[&str], out: &Path) -> i32 {
    let mut argv = vec!["mirror-pmd".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.extend(["--output-dir".to_string(), out.display().to_string()]);
    cli_main(argv)
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cli_main(["mirror-pmd"]), EXIT_USAGE);
    assert_eq!(cli_main(["mirror-pmd", "bogus"]), EXIT_USAGE);
    assert_eq!(run(&["run-pmd", "--eta", "fast"], tmp.path()), EXIT_USAGE);
    assert_eq!(run(&["run-pmd", "--env", "no-such-layout"], tmp.path()), EXIT_USAGE);
    assert_eq!(run(&["run-pmd", "--maps", "missing.potential"], tmp.path()), EXIT_USAGE);
    assert_eq!(run(&["run-pmd", "--set", "pmd.nope=1"], tmp.path()), EXIT_USAGE);
    assert_eq!(run(&["evolve", "--strategy", "openai-es", "--population", "5"], tmp.path()), EXIT_USAGE);
    assert_eq!(cli_main(["mirror-pmd", "--help"]), EXIT_OK);
}

#[test]
fn compare_writes_report_figures_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let code = run(
        &["compare", "--maps", "negentropy,l2", "--env", "two-rooms", "--seeds", "8", "--iterations", "6", "--envs", "8"],
        tmp.path(),
    );
    assert_eq!(code, EXIT_OK);
    let report = ComparisonReport::from_json(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.maps, vec!["negentropy", "l2"]);
    assert_eq!(report.seeds, 8);
    for kind in ["value", "q_error", "update_distance"] {
        let svg = fs::read_to_string(tmp.path().join(format!("{kind}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<polygon"));
    }
    // band half-width is the sample std over the 8 seed records divided by sqrt 8
    let entry = report.entry("two-rooms", "negentropy").unwrap();
    let records: Vec<PmdRunRecord> = (0..8)
        .map(|k| {
            let path = tmp.path().join(format!("runs/two-rooms__negentropy__seed{k}.json"));
            PmdRunRecord::from_json(&fs::read_to_string(path).unwrap()).unwrap()
        })
        .collect();
    for t in 0..6 {
        let xs: Vec<f64> = records.iter().map(|r| r.next_values()[t]).collect();
        let mean = xs.iter().sum::<f64>() / 8.0;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 7.0).sqrt();
        assert!((entry.value.se[t] - sd / 8f64.sqrt()).abs() < 1e-12);
        assert!((entry.value.mean[t] - mean).abs() < 1e-12);
    }
    // final values are the values of the stored final policies
    let grid = pmd_core::gridworld::held_out("two-rooms").unwrap().compile().unwrap();
    for r in &records {
        let v = pmd_core::mdp::exact_v(&grid, &r.final_policy).unwrap();
        assert!((pmd_core::mdp::value_of(&v, grid.start_dist()) - r.final_value).abs() < 1e-10);
    }
}

#[test]
fn check_bounds_with_exact_q_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = run(
        &["check-bounds", "--env", "open-field", "--map", "negentropy", "--exact-q", "--iterations", "40"],
        tmp.path(),
    );
    assert_eq!(code, EXIT_OK);
    let bounds = fs::read_to_string(tmp.path().join("open-field__negentropy.bounds.json")).unwrap();
    assert!(bounds.contains("\"improvement_violations\": []"));
    let csv = fs::read_to_string(tmp.path().join("open-field__negentropy.csv")).unwrap();
    assert!(csv.starts_with(&pmd_core::pmd::CSV_COLUMNS.join(",")));
    assert!(!csv.lines().nth(1).unwrap().ends_with(",,,"));
}

#[test]
fn evolve_writes_every_checkpoint_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "evolve", "--family", "piecewise", "--strategy", "sep-cma", "--population", "6", "--grid-size", "3",
        "--exact-q", "--update", "closed-form", "--iterations", "8", "--episodes", "2", "--segments", "10",
    ];
    let full = tmp.path().join("full");
    let mut a = args.to_vec();
    a.extend(["--generations", "10"]);
    assert_eq!(run(&a, &full), EXIT_OK);
    for g in 0..=10 {
        assert!(full.join(format!("gen-{g:05}.ckpt")).exists());
    }
    assert!(full.join("best.potential").exists() && full.join("manifest.txt").exists());

    let split = tmp.path().join("split");
    let mut first = args.to_vec();
    first.extend(["--generations", "4"]);
    assert_eq!(run(&first, &split), EXIT_OK);
    let mut rest = args.to_vec();
    rest.extend(["--generations", "10", "--resume"]);
    assert_eq!(run(&rest, &split), EXIT_OK);
    for name in ["gen-00010.ckpt", "best.potential", "evolution.csv"] {
        assert_eq!(fs::read(full.join(name)).unwrap(), fs::read(split.join(name)).unwrap(), "{name}");
    }
    // resuming from a directory without a run is a runtime error
    let mut bad = args.to_vec();
    bad.push("--resume");
    assert_eq!(run(&bad, &tmp.path().join("empty")), EXIT_FAILURE);
}

#[test]
fn corrupt_inputs_fail_with_a_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = tmp.path().join("bad.grid");
    fs::write(&grid, "gamma = 0.9\n[map]\nS.\n.").unwrap();
    let pot = tmp.path().join("bad.potential");
    let text = pmd_core::potential::Potential::builtin("piecewise").unwrap().to_text();
    fs::write(&pot, &text[..text.len() / 2]).unwrap();
    let out = tmp.path().join("out");
    assert_ne!(run(&["run-pmd", "--env", grid.to_str().unwrap()], &out), EXIT_OK);
    assert_ne!(run(&["run-pmd", "--maps", pot.to_str().unwrap(), "--exact-q"], &out), EXIT_OK);
    let ckpt_dir = tmp.path().join("ckpt");
    fs::create_dir_all(&ckpt_dir).unwrap();
    fs::write(ckpt_dir.join("manifest.txt"), "schema_version = 1\nstrategy = sep").unwrap();
    assert_ne!(
        run(&["evolve", "--resume", "--grid-size", "3", "--iterations", "2", "--exact-q"], &ckpt_dir),
        EXIT_OK
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.conf");
    fs::write(&config, "seed = 4\nenv = sample:2\n[pmd]\neta = 0.5\niterations = 3\nq = exact\nupdate = closed-form\n").unwrap();
    let out = tmp.path().join("out");
    assert_eq!(
        run(&["run-pmd", "--config", config.to_str().unwrap(), "--iterations", "5"], &out),
        EXIT_OK
    );
    let record =
        PmdRunRecord::from_json(&fs::read_to_string(out.join("sample-2__negentropy.json")).unwrap()).unwrap();
    assert_eq!(record.num_iterations(), 5);
    assert_eq!(record.config.eta, 0.5);
    assert_eq!(record.config.seed, 4);
}
