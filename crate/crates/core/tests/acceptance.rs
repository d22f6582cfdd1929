//! Acceptance gate. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{brute_force_prices, random_instance, Instance};
use price_impact::analytic::BachelierSpec;
use price_impact::contract::{ClaimSpec, SimpleDemand, UtilityParams};
use price_impact::expansion::residual;
use price_impact::lattice::{LatticeModel, TimeGrid};
use price_impact::pricing::price_under_demand;
use price_impact::verify::{check_convergence, check_equilibrium, check_optimality, decay_factors, OptimalityOptions};

const INSTANCES: u64 = 50;
const LADDER: [usize; 5] = [10, 32, 100, 316, 1000];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn instances() -> Vec<Instance> {
    (0..INSTANCES).map(|s| random_instance(1000 + s)).collect()
}

fn unit_bachelier(n: usize) -> (LatticeModel, ClaimSpec, SimpleDemand, UtilityParams) {
    (
        LatticeModel::recombining(TimeGrid::uniform(1.0, n).unwrap()).unwrap(),
        ClaimSpec::parse("b", None).unwrap(),
        SimpleDemand::constant(vec![0.0, 1.0], 1.0).unwrap(),
        UtilityParams::new(1.0, 0.0).unwrap(),
    )
}

fn bachelier_reproduction() -> Outcome {
    let start = Instant::now();
    let spec = BachelierSpec::new(1.0, 1.0, 1.0, 1.0).unwrap();
    let study = check_convergence(&spec, &LADDER, 5e-4).unwrap();
    let order = study.order_report((0.9, 1.1));
    let elapsed = start.elapsed().as_secs_f64();
    let last = study.rows.last().unwrap();
    let lattice_gap = (last.root_price - spec.lattice_root_price(1000)).abs();
    outcome(
        study.report.pass && order.pass && lattice_gap <= 1e-12 && elapsed < 5.0,
        format!(
            "root(n=1000)={:.10} |err|={:.3e} order={:.4} lattice-closed-form gap={:.1e} time={elapsed:.2}s",
            last.root_price,
            last.error,
            study.order.unwrap_or(f64::NAN),
            lattice_gap
        ),
    )
}

fn oracle_equivalence(set: &[Instance]) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut endpoint: f64 = 0.0;
    let mut max_steps = 0;
    for inst in set {
        let lat = inst.lattice();
        max_steps = max_steps.max(lat.steps());
        let surface = price_under_demand(&lat, &inst.claim(), &inst.demand(), &inst.utility()).unwrap();
        let oracle = brute_force_prices(inst);
        endpoint = endpoint.max(oracle.endpoint_gap);
        for k in 0..=lat.steps() {
            for (a, b) in surface.prices(k).iter().zip(&oracle.prices[k]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && endpoint <= 1e-12 && max_steps <= 6 && elapsed < 10.0,
        format!(
            "{} instances, max steps {max_steps}, max |engine-oracle|={worst:.2e}, endpoint gap={endpoint:.2e}, time={elapsed:.2}s",
            set.len()
        ),
    )
}

fn martingale_suite(set: &[Instance]) -> Outcome {
    let mut worst = [0.0f64; 3];
    let mut pass = true;
    let mut count = 0;
    let mut run = |reports: Vec<price_impact::verify::VerificationReport>| {
        for (w, r) in worst.iter_mut().zip(&reports) {
            *w = w.max(r.max_violation);
            pass &= r.pass && r.tolerance <= 1e-12;
        }
        count += 1;
    };
    for &n in &LADDER {
        let (lat, claim, demand, u) = unit_bachelier(n);
        run(check_equilibrium(&lat, &claim, &demand, &u, n as u64).unwrap());
    }
    for (seed, inst) in set.iter().enumerate() {
        run(check_equilibrium(&inst.lattice(), &inst.claim(), &inst.demand(), &inst.utility(), seed as u64).unwrap());
    }
    outcome(
        pass,
        format!(
            "{count} instances, martingale {:.2e}, equivalence {:.2e}, density {:.2e} (tol 1e-12)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn optimality(set: &[Instance]) -> Outcome {
    let mut first: f64 = 0.0;
    let mut gain: f64 = 0.0;
    let mut pass = true;
    for inst in set {
        let [fo, max] = check_optimality(
            &inst.lattice(),
            &inst.claim(),
            &inst.demand(),
            &inst.utility(),
            OptimalityOptions::default(),
        )
        .unwrap();
        first = first.max(fo.max_violation / fo.tolerance);
        gain = gain.max(max.max_violation);
        pass &= fo.pass && max.pass;
    }
    outcome(
        pass,
        format!("max first-order derivative / tolerance = {first:.3}, max utility gain = {gain:.2e}"),
    )
}

fn residual_decay() -> Outcome {
    let ladder = [0.2, 0.1, 0.05, 0.025];

    let lat = LatticeModel::path_tree(TimeGrid::uniform(1.0, 1).unwrap()).unwrap();
    let claim = ClaimSpec::parse("b", None).unwrap();
    let demand = SimpleDemand::constant(vec![0.0, 1.0], 1.0).unwrap();
    let u = UtilityParams::new(1.0, 0.0).unwrap();
    let rows = residual(&lat, &claim, &demand, &u, &ladder).unwrap();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio_root()).collect();
    let factors = decay_factors(&ratios);
    let exact_gap = rows.iter().map(|r| (r.xi_root() - (r.epsilon.tanh() - r.epsilon)).abs()).fold(0.0, f64::max);
    let one_step = factors.iter().all(|&f| f >= 3.0) && exact_gap <= 1e-12;

    // lattice Bachelier: xi must sit under (gamma theta)^3 T^2 eps^3 + C/n eps
    let n = 1000;
    let (lat, claim, demand, u) = unit_bachelier(n);
    let rows = residual(&lat, &claim, &demand, &u, &ladder).unwrap();
    let floor = |eps: f64| eps.powi(3);
    let fitted_c = rows
        .iter()
        .map(|r| ((r.xi_root().abs() - floor(r.epsilon)) * n as f64 / r.epsilon).max(0.0))
        .fold(0.0, f64::max);
    let bachelier = fitted_c == 0.0;
    let worst_share = rows.iter().map(|r| r.xi_root().abs() / floor(r.epsilon)).fold(0.0, f64::max);

    outcome(
        one_step && bachelier,
        format!(
            "one-step decay factors {:?}, |xi - (tanh(eps)-eps)| <= {exact_gap:.1e}; Bachelier n={n}: max |xi|/floor = {worst_share:.2e}, fitted C = {fitted_c}",
            factors.iter().map(|f| (f * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn scale_invariance(set: &[Instance]) -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in set {
        let lat = inst.lattice();
        let base = price_under_demand(&lat, &inst.claim(), &inst.demand(), &inst.utility()).unwrap();
        for c in [0.1, 10.0] {
            let u = UtilityParams::new(inst.gamma / c, 0.0).unwrap();
            let s = price_under_demand(&lat, &inst.claim(), &inst.demand().scaled(c), &u).unwrap();
            for k in 0..=lat.steps() {
                for (a, b) in base.prices(k).iter().zip(s.prices(k)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-13, format!("c in {{0.1, 10}}, max node change {worst:.2e}"))
}

fn configs() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut list: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    list.sort();
    list
}

fn cli(args: &[&str], config: &Path, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_price-impact"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap_or(-1)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut pass = true;
    let list = configs();
    for config in &list {
        let name = config.file_stem().unwrap().to_string_lossy().into_owned();
        for cmd in ["price", "verify"] {
            let a = tmp.path().join(format!("{name}-{cmd}-a"));
            let b = tmp.path().join(format!("{name}-{cmd}-b"));
            let (ca, cb) = (cli(&[cmd], config, &a), cli(&[cmd], config, &b));
            let same = ca == 0 && cb == 0 && snapshot(&a) == snapshot(&b) && !snapshot(&a).is_empty();
            if !same {
                notes.push(format!("{name}/{cmd} exit {ca},{cb}"));
            }
            pass &= same;
        }
    }

    let one_step = list.iter().find(|p| p.ends_with("one_step.json")).unwrap();
    let fault_root = cli(&["verify", "--inject-fault", "corrupt-root"], one_step, &tmp.path().join("fault-root"));
    let fault_hold = cli(&["verify", "--inject-fault", "reverse-holding"], one_step, &tmp.path().join("fault-hold"));
    let bad = tmp.path().join("bad.json");
    let text = fs::read_to_string(one_step).unwrap().replace("\"theta\": \"1\"", "\"theta\": \"2 ** b\"");
    fs::write(&bad, text).unwrap();
    let malformed = cli(&["price"], &bad, &tmp.path().join("bad"));
    pass &= fault_root == 1 && fault_hold == 1 && malformed == 2;

    outcome(
        pass,
        format!(
            "{} configs x {{price, verify}} byte-identical{}; exit codes: fault {fault_root}/{fault_hold}, malformed {malformed}",
            list.len(),
            if notes.is_empty() { String::new() } else { format!(" except {}", notes.join(", ")) }
        ),
    )
}

fn main() {
    let set = instances();
    let results = [
        ("1 bachelier reproduction", bachelier_reproduction()),
        ("2 oracle equivalence", oracle_equivalence(&set)),
        ("3 martingale and density", martingale_suite(&set)),
        ("4 market-maker optimality", optimality(&set)),
        ("5 residual decay", residual_decay()),
        ("6 scale invariance", scale_invariance(&set)),
        ("7 cli determinism and exit codes", cli_determinism()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        println!("criterion {name}: {} ({})", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.pass);
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
