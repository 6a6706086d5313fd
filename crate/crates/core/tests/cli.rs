//! End-to-end runs of the `hj-track` binary on a small configuration.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use hj_track::basis::{build_dictionary, CoefficientTimeline};
use hj_track::config::RunConfig;
use hj_track::hamiltonian::Pcr3bpTracking;
use hj_track::hj::time_march;
use hj_track::nominal::NominalTrajectory;
use hj_track::points::{generate_points, scale_to_domain, test_points};

const SMALL: &str = r#"
output_dir = "unused"

[system]
mu = 0.0122
lu_km = 384400.0
tu_s = 375190.0

[transfer]
x0 = [0.810796, -0.158270, -0.129473, 0.319169]
xf = [1.175974, -0.134272, -0.153277, -0.295254]
tf_days = 5.0

[domain]
position_km = 100.0
velocity_m_per_s = 2.0
costate = [0.02, 0.03, 0.005, 0.005]

[basis]
degree = 2

[points]
scheme = "lhs"
count = 90
seed = 3
test_count = 40
test_seed = 5

[solver]
steps = 40
mode = "l2"
marching = "rk4"

[tracking]
cases = ["I", "IV"]
velocity_seed = 1

[navigation]
position_km = 10.0
velocity_m_per_s = 0.5
interval_days = 1.0
seed = 11

[sweep]
position_km = [0.0, 50.0]
interval_days = [0.5, 1.0]
seeds = 2
base_seed = 100
workers = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hj-track"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn pipeline(out: &Path, config: &Path) {
    ok(run(&["nominal"], config, out));
    ok(run(&["train"], config, out));
}

/// Nominal and timeline for the small config, computed once per test binary.
fn trained() -> &'static (PathBuf, PathBuf) {
    static DIR: OnceLock<(PathBuf, PathBuf)> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = scratch("trained");
        let cfg = write_config(&dir, SMALL);
        pipeline(&dir, &cfg);
        (dir, cfg)
    })
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e != "toml"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn nominal_file_starts_and_ends_on_the_boundary_states() {
    let (dir, cfg_path) = trained();
    let cfg = RunConfig::load(cfg_path).unwrap();
    let nom = NominalTrajectory::read_from(BufReader::new(fs::File::open(dir.join("nominal.txt")).unwrap())).unwrap();
    let (x0, xf) = cfg.boundary_states();
    assert_eq!(nom.states[0], x0);
    assert!((nom.states.last().unwrap() - xf).norm() < 1e-9);
}

#[test]
fn missing_field_is_a_schema_error_naming_it() {
    let dir = scratch("missing_field");
    let cfg = write_config(&dir, &SMALL.replace("tf_days = 5.0\n", ""));
    let o = run(&["nominal"], &cfg, &dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tf_days"));
}

#[test]
fn degree_zero_basis_is_rejected() {
    let dir = scratch("degree_zero");
    let cfg = write_config(&dir, &SMALL.replace("degree = 2", "degree = 0"));
    let o = run(&["train"], &cfg, &dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degree"));
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = scratch("missing_inputs");
    let o = run(&["nominal"], &dir.join("absent.toml"), &dir);
    assert_eq!(o.status.code(), Some(4));
    let cfg = write_config(&dir, SMALL);
    let o = run(&["track"], &cfg, &dir);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nominal.txt"));
}

#[test]
fn unreachable_bvp_tolerance_is_a_solver_error() {
    let dir = scratch("bvp_failure");
    let text = SMALL.replace("[basis]", "[nominal]\ntol = 1e-30\nmax_iter = 2\n\n[basis]");
    let cfg = write_config(&dir, &text);
    let o = run(&["nominal"], &cfg, &dir);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stored_timeline_matches_the_in_memory_march_bit_for_bit() {
    let (dir, cfg_path) = trained();
    let cfg = RunConfig::load(cfg_path).unwrap();
    let nom = NominalTrajectory::read_from(BufReader::new(fs::File::open(dir.join("nominal.txt")).unwrap())).unwrap();
    let ps = generate_points(&cfg.point_request().unwrap()).unwrap();
    let bx = cfg.domain_box();
    let train = scale_to_domain(&ps, &bx);
    let test = test_points(&bx, cfg.points.test_count, cfg.points.test_seed, &train);
    let dict = build_dictionary(8, cfg.basis.degree)
        .unwrap()
        .with_half_widths(&cfg.half_widths())
        .unwrap();
    let model = Pcr3bpTracking::new(&nom, cfg.weights().unwrap(), cfg.system);
    let gf = time_march(&model, &dict, &train, &ps.weights, &test, &ps.scheme.to_string(), &cfg.solver_config()).unwrap();

    let stored =
        CoefficientTimeline::read_from(BufReader::new(fs::File::open(dir.join("coefficients.txt")).unwrap())).unwrap();
    assert_eq!(stored.times.len(), gf.timeline.times.len());
    for (a, b) in stored.times.iter().zip(&gf.timeline.times) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    for (a, b) in stored.coeffs.iter().zip(&gf.timeline.coeffs) {
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let mut bytes = Vec::new();
    stored.write_to(&mut bytes).unwrap();
    assert_eq!(bytes, fs::read(dir.join("coefficients.txt")).unwrap());
}

#[test]
fn case_flag_sets_the_documented_position_offset() {
    let (dir, cfg) = trained();
    let out = scratch("case_flag");
    for f in ["nominal.txt", "coefficients.txt"] {
        fs::copy(dir.join(f), out.join(f)).unwrap();
    }
    ok(run(&["track", "--case", "I"], cfg, &out));
    let rows = csv_rows(&out.join("track_summary.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "I");
    let dx: f64 = rows[1][column(&rows, "dx_km")].parse().unwrap();
    let dy: f64 = rows[1][column(&rows, "dy_km")].parse().unwrap();
    assert!((dx - 100.0).abs() < 1e-9 && (dy - 100.0).abs() < 1e-9);
    let dvx: f64 = rows[1][column(&rows, "dvx_m_per_s")].parse().unwrap();
    assert!(dvx.abs() <= 2.0);
}

#[test]
fn on_nominal_start_without_navigation_stays_on_target() {
    let (dir, _) = trained();
    let out = scratch("on_nominal");
    for f in ["nominal.txt", "coefficients.txt"] {
        fs::copy(dir.join(f), out.join(f)).unwrap();
    }
    let (head, tail) = SMALL.split_once("[navigation]").unwrap();
    let text = format!("{head}{}", &tail[tail.find("[sweep]").unwrap()..]);
    let cfg = write_config(&out, &text);
    ok(run(&["track", "--dx0", "0,0,0,0"], &cfg, &out));
    let rows = csv_rows(&out.join("track_summary.csv"));
    let err: f64 = rows[1][column(&rows, "terminal_pos_km")].parse().unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn reruns_are_byte_identical_and_seeds_matter() {
    let a = scratch("rerun_a");
    let b = scratch("rerun_b");
    let ca = write_config(&a, SMALL);
    let cb = write_config(&b, SMALL);
    for (dir, cfg) in [(&a, &ca), (&b, &cb)] {
        pipeline(dir, cfg);
        ok(run(&["track"], cfg, dir));
        ok(run(&["sweep"], cfg, dir));
    }
    let fa = files_in(&a);
    let fb = files_in(&b);
    assert!(fa.len() >= 10);
    assert_eq!(fa.iter().map(|f| &f.0).collect::<Vec<_>>(), fb.iter().map(|f| &f.0).collect::<Vec<_>>());
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        assert!(x == y, "{name} differs between reruns");
    }

    let before = fs::read(a.join("track_I.csv")).unwrap();
    ok(run(&["track", "--case", "I", "--seed", "12"], &ca, &a));
    assert_ne!(before, fs::read(a.join("track_I.csv")).unwrap());
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let (dir, cfg) = trained();
    let out = scratch("sweep_rows");
    for f in ["nominal.txt", "coefficients.txt"] {
        fs::copy(dir.join(f), out.join(f)).unwrap();
    }
    ok(run(&["sweep"], cfg, &out));
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 1 + 4);
    let seeds = column(&rows, "seed_count");
    let failed = column(&rows, "failed_seeds");
    for r in &rows[1..] {
        let n: usize = r[seeds].parse().unwrap();
        let f: usize = r[failed].parse().unwrap();
        assert_eq!(n + f, 2);
    }
}

#[test]
fn empty_sweep_grid_is_rejected() {
    let (dir, _) = trained();
    let cfg = write_config(
        &scratch("empty_grid"),
        &SMALL.replace("position_km = [0.0, 50.0]", "position_km = []"),
    );
    let o = run(&["sweep"], &cfg, dir);
    assert_eq!(o.status.code(), Some(2));
}
