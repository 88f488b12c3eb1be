use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ott_core::synthetic::{generate, SyntheticSpec};

const START: i64 = 1_609_459_200;
const STEP: i64 = 300;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// Synthetic 5-minute candles for `codes` (a subset of CAD/EUR/GBP/USD).
    fn new(codes: &[&str], n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        std::fs::create_dir_all(&data).unwrap();
        let m = generate(&SyntheticSpec::four_currencies(11, n)).unwrap();
        for code in codes {
            let c = m.index_of(code).unwrap();
            let mut f = std::fs::File::create(data.join(format!("ETH{code}_5.csv"))).unwrap();
            for (t, ts) in m.timestamps().iter().enumerate() {
                let p = m.value(c, t);
                writeln!(f, "{ts},{p},{p},{p},{p},1.5,3").unwrap();
            }
        }
        Workspace { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Formation over the first `f` intervals, trading over the next `t`.
    fn config(&self, name: &str, codes: &[&str], f: i64, t: i64, extra: &str) -> PathBuf {
        let list: Vec<String> = codes.iter().map(|c| format!("\"{c}\"")).collect();
        let body = format!(
            "data_dir = \"data\"\ncurrencies = [{}]\nbase = \"{}\"\ninterval = 300\n\
             formation_start = {START}\nformation_end = {}\ntrading_start = {}\ntrading_end = {}\n\
             k_open = 2\nk_close = 0.5\nscreen_window = 86400\nrun_name = \"{name}\"\n{extra}\n",
            list.join(", "),
            codes.last().unwrap(),
            START + f * STEP,
            START + f * STEP,
            START + (f + t) * STEP,
        );
        let path = self.path().join(format!("{name}.toml"));
        std::fs::write(&path, body).unwrap();
        path
    }

    fn run(&self, cmd: &str, config: &Path, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ott"))
            .arg(cmd)
            .arg("--config")
            .arg(config)
            .args(extra)
            .output()
            .unwrap()
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path().join(rel)).unwrap()
    }
}

const FOUR: [&str; 4] = ["CAD", "EUR", "GBP", "USD"];

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn screen_reports_every_pair() {
    let ws = Workspace::new(&FOUR, 2_000);
    let cfg = ws.config("s4", &FOUR, 1_500, 400, "");
    let o = ws.run("screen", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = ws.read("runs/s4/screening.csv");
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("pair,mean_corr,coint_pass_rate,windows\n"));
    assert!(!csv.contains('\r'));
    assert_eq!(ws.read("runs/s4/bucket.txt").lines().count(), 4);

    let two = ["CAD", "USD"];
    let cfg = ws.config("s2", &two, 1_500, 400, "");
    assert_eq!(code(&ws.run("screen", &cfg, &[])), 0);
    assert_eq!(ws.read("runs/s2/screening.csv").lines().count(), 2);
}

#[test]
fn impossible_screen_thresholds_fail() {
    let ws = Workspace::new(&FOUR, 2_000);
    let cfg = ws.config("bad", &FOUR, 1_500, 400, "corr_min = 0.99\ncoint_min = 1.01");
    let o = ws.run("screen", &cfg, &[]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("screening"));
}

#[test]
fn tune_grid_and_single_cell() {
    let ws = Workspace::new(&FOUR, 2_000);
    let cfg = ws.config("grid", &FOUR, 1_500, 400, "");
    let o = ws.run("tune", &cfg, &["--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let heat = ws.read("runs/grid/heatmap.csv");
    assert_eq!(heat.lines().count(), 1 + 55);
    let best: serde_json::Value = serde_json::from_str(&ws.read("runs/grid/best.json")).unwrap();
    assert!(best["k_open"].as_f64().unwrap() > best["k_close"].as_f64().unwrap());

    let cfg = ws.config("one", &FOUR, 1_500, 400, "tune_k_open = [3, 4]\ntune_k_close = [1, 2]");
    assert_eq!(code(&ws.run("tune", &cfg, &[])), 0);
    let best: serde_json::Value = serde_json::from_str(&ws.read("runs/one/best.json")).unwrap();
    assert_eq!(
        (best["k_open"].as_f64(), best["k_close"].as_f64()),
        (Some(3.0), Some(1.0))
    );
}

#[test]
fn tune_with_every_cell_failing_exits_nonzero() {
    let ws = Workspace::new(&FOUR, 200);
    // 40 formation samples split in half leaves 20, below the minimum.
    let cfg = ws.config("fail", &FOUR, 40, 100, "");
    let o = ws.run("tune", &cfg, &[]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid cells failed"));
}

#[test]
fn backtest_is_byte_identical_across_runs() {
    let ws = Workspace::new(&FOUR, 3_000);
    let cfg = ws.config("det", &FOUR, 1_500, 1_500, "");
    let files = ["trades.csv", "equity.csv", "summary.json"];
    let first = ws.path().join("first");
    let second = ws.path().join("second");
    for out in [&first, &second] {
        let o = ws.run("backtest", &cfg, &["--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in files {
        let a = std::fs::read(first.join("det").join(f)).unwrap();
        let b = std::fs::read(second.join("det").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    assert!(ws.read("first/det/trades.csv").lines().count() > 1);
    assert_eq!(ws.read("first/det/equity.csv").lines().count(), 1 + 1_500);
}

#[test]
fn baselines_and_report() {
    let ws = Workspace::new(&FOUR, 3_000);
    for (name, strategy) in [("ott", "OTT"), ("dm", "DM"), ("bh", "BH")] {
        let cfg = ws.config(
            name,
            &FOUR,
            1_500,
            1_500,
            &format!("strategy = \"{strategy}\"\nlambda = 0.5"),
        );
        let o = ws.run("backtest", &cfg, &[]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    // Buy-hold logs only the entry/exit conversion per currency.
    assert_eq!(ws.read("runs/bh/trades.csv").lines().count(), 1 + 4);
    // Distance method spends a third of a currency's starting balance per leg.
    let dm = ws.read("runs/dm/trades.csv");
    let first: Vec<&str> = dm.lines().nth(1).expect("DM traded").split(',').collect();
    assert!((first[5].parse::<f64>().unwrap() - 10_000.0 / 3.0).abs() < 1e-6);

    let cfg = ws.path().join("ott.toml");
    let o = ws.run("report", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = ws.read("runs/comparison.csv");
    let strategies: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(strategies, ["BH", "DM", "OTT"]);
}

#[test]
fn report_prefers_latest_duplicate() {
    let ws = Workspace::new(&FOUR, 3_000);
    let cfg = ws.config("dup", &FOUR, 1_500, 1_500, "");
    assert_eq!(code(&ws.run("backtest", &cfg, &[])), 0);
    let runs = ws.path().join("runs");
    std::fs::create_dir_all(runs.join("dup_copy")).unwrap();
    let mut summary: serde_json::Value = serde_json::from_str(&ws.read("runs/dup/summary.json")).unwrap();
    summary["total_return"] = serde_json::json!(0.123456);
    std::thread::sleep(std::time::Duration::from_millis(20));
    std::fs::write(
        runs.join("dup_copy/summary.json"),
        serde_json::to_string(&summary).unwrap(),
    )
    .unwrap();

    let o = ws.run("report", &cfg, &[]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate run name"));
    let table = ws.read("runs/comparison.csv");
    assert_eq!(table.lines().count(), 2);
    assert!(table.contains("0.123456"));
}

#[test]
fn report_on_empty_dir_fails() {
    let ws = Workspace::new(&FOUR, 10);
    let cfg = ws.config("none", &FOUR, 4, 4, "");
    std::fs::create_dir_all(ws.path().join("runs")).unwrap();
    assert_eq!(code(&ws.run("report", &cfg, &[])), 3);
}

#[test]
fn exit_codes_for_validation_and_data() {
    let ws = Workspace::new(&["CAD", "USD"], 500);
    let cfg = ws.config("v", &["CAD", "USD"], 300, 100, "");
    let text = std::fs::read_to_string(&cfg).unwrap();
    let overlap = text.replace(
        &format!("trading_start = {}", START + 300 * STEP),
        &format!("trading_start = {}", START + 200 * STEP),
    );
    std::fs::write(&cfg, overlap).unwrap();
    let o = ws.run("backtest", &cfg, &[]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("trading_start") && err.contains("formation_end"), "{err}");

    let cfg = ws.config("missing", &["CAD", "EUR", "USD"], 300, 100, "");
    assert_eq!(code(&ws.run("backtest", &cfg, &[])), 3);
}
