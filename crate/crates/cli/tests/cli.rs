use std::path::{Path, PathBuf};

use coalsis::io::{read_finite_sample, read_ism};
use coalsis_cli::commands::{self, allowed_keys};
use coalsis_cli::config::Config;
use coalsis_cli::output::Table;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn cfg(cmd: &str, text: &str) -> coalsis::Result<Config> {
    Config::parse(text, &allowed_keys(cmd))
}

#[test]
fn config_errors_name_the_problem() {
    let e = cfg("surface", "version = 1\nthetagrid = 1\n").unwrap_err().to_string();
    assert!(e.contains("line 2") && e.contains("thetagrid"), "{e}");
    let e = cfg("surface", "theta_grid = 1\n").unwrap_err().to_string();
    assert!(e.contains("version"), "{e}");

    let dir = tempfile::tempdir().unwrap();
    let base = format!("version = 1\nmodel = finite\ndata = {}\nsites = 20\n", data("bench_50.txt").display());
    let c = cfg("surface", &format!("{base}theta_grid = 0.5, 0.2\n")).unwrap();
    let e = commands::surface(&c, dir.path(), None).unwrap_err().to_string();
    assert!(e.contains("increasing"), "{e}");
    let c = cfg("surface", &format!("{base}theta_grid = x\n")).unwrap();
    let e = commands::surface(&c, dir.path(), None).unwrap_err().to_string();
    assert!(e.contains("theta_grid") && e.contains("line 5"), "{e}");
    let c = cfg("varcurve", "version = 1\ndata = nowhere.txt\nsites = 20\ntheta = 1\n").unwrap();
    let e = commands::varcurve(&c, dir.path(), None).unwrap_err().to_string();
    assert!(e.contains("nowhere.txt"), "{e}");
    let c = cfg("surface", &format!("{base}theta_grid = 0.5\nschedules = s9\n")).unwrap();
    assert!(commands::surface(&c, dir.path(), None).is_err());
}

#[test]
fn malformed_data_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "3 0.5\n0 2\n1 two\n").unwrap();
    let c = cfg("varcurve", &format!("version = 1\ndata = {}\nmatrix = m.txt\ntheta = 1\n", bad.display())).unwrap();
    let e = commands::varcurve(&c, dir.path(), None).unwrap_err().to_string();
    assert!(e.contains("line 3") && e.contains("column 3"), "{e}");
}

#[test]
fn makedata_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("makedata", "version = 1\nkind = finite\nsites = 4\ntheta = 0.5\nsize = 1\nname = one\n").unwrap();
    let files = commands::makedata(&c, dir.path()).unwrap();
    let d = read_finite_sample(&files[0]).unwrap();
    assert_eq!(d.sample.size(), 1);

    let c = cfg("makedata", "version = 1\nkind = finite\nsites = 3\ntheta = 1\nsize = 40\nnested = 10, 20\nseed = 4\n").unwrap();
    let files = commands::makedata(&c, dir.path()).unwrap();
    let sizes: Vec<u32> = files.iter().map(|f| read_finite_sample(f).unwrap().sample.size()).collect();
    assert_eq!(sizes, vec![40, 20, 10]);
    let big = read_finite_sample(&files[0]).unwrap().sample;
    let small = read_finite_sample(&files[2]).unwrap().sample;
    assert!((0..big.dim()).all(|i| small.count(i) <= big.count(i)));

    let c = cfg("makedata", "version = 1\nkind = ism\ntheta = 2\nsize = 12\nsegregating = 5\nname = i\n").unwrap();
    let files = commands::makedata(&c, dir.path()).unwrap();
    assert_eq!(read_ism(&files[0]).unwrap().r(), 5);

    let c = cfg("makedata", "version = 1\nkind = finite\nsites = 3\ntheta = 1\nsize = 10\nnested = 11\n").unwrap();
    assert!(commands::makedata(&c, dir.path()).is_err());
}

#[test]
fn csv_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(
        "surface",
        &format!(
            "version = 1\nmodel = ism\ndata = {}\nproposal = sd\ntheta_grid = 2, 4\ngamma = 10\nbig_gamma = 50\n",
            data("ism_55.txt").display()
        ),
    )
    .unwrap();
    let t = commands::surface(&c, dir.path(), Some(2)).unwrap();
    let back = Table::read(&dir.path().join("surface.csv")).unwrap();
    assert_eq!(back, t);
    let est: Vec<f64> = back.values("log_estimate").unwrap();
    assert_eq!(est.len(), 2);
    assert!(est.iter().all(|x| x.is_finite()));
    assert!(dir.path().join("surface.svg").exists());
    assert!(dir.path().join("surface.timing.csv").exists());
}

#[test]
fn varcurve_flags_zero_variance_rows() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(
        "varcurve",
        &format!("version = 1\nmodel = ism\ndata = {}\nproposal = huw\ntheta = 5\nreplicates = 50\n", data("ism_55.txt").display()),
    )
    .unwrap();
    let t = commands::varcurve(&c, dir.path(), None).unwrap();
    assert_eq!(t.rows[0][0], "55");
    assert_eq!(t.rows[0][2], "-inf");
    assert_eq!(t.rows[0][3], "zero");
    assert_eq!(t.rows.last().unwrap()[0], "1");
}

#[test]
fn huw_table_is_reused_when_present() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.huw");
    commands::huwtable(3.0, 60, "carriers", &table).unwrap();
    let text = format!(
        "version = 1\nmodel = ism\ndata = {}\nhuw_table = {}\ntheta_grid = 3\ngamma = 10\nbig_gamma = 20\n",
        data("ism_55.txt").display(),
        table.display()
    );
    assert!(commands::surface(&cfg("surface", &text).unwrap(), dir.path(), None).is_ok());
    commands::huwtable(3.0, 20, "carriers", &table).unwrap();
    let e = commands::surface(&cfg("surface", &text).unwrap(), dir.path(), None).unwrap_err().to_string();
    assert!(e.contains("20"), "{e}");
}
