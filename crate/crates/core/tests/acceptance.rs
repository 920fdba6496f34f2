//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use common::{grad, invariants, oracle, stats};
use edain::harness::{
    plan_experiment, run_ablation, run_with_plan, AblationReport, DataSource, ExperimentConfig, Method,
    MetricsReport, Preset,
};
use edain::synthgen::SynthConfig;

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn criterion(id: usize, title: &str, f: impl FnOnce() -> String) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {id} PASS  {title}: {detail} [{secs:.1}s]");
            true
        }
        Err(e) => {
            println!("criterion {id} FAIL  {title}: {} [{secs:.1}s]", panic_message(&*e));
            false
        }
    }
}

fn gradient_suite() -> String {
    let start = Instant::now();
    grad::WORST.lock().unwrap().clear();
    for check in grad::ALL {
        check();
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "suite took {secs:.1}s");
    let worst = grad::WORST.lock().unwrap().clone();
    let parts: Vec<String> = worst.iter().map(|(n, e, _)| format!("{n} {e:.1e}")).collect();
    format!("{} checks x {} trials, worst relative errors: {}", worst.len(), grad::TRIALS, parts.join(", "))
}

/// Desk-scale replication shared by criteria 2 and 3.
struct Replication {
    ablation: AblationReport,
    extra: BTreeMap<Method, MetricsReport>,
}

fn replicate() -> Replication {
    let mut config = ExperimentConfig::new(
        DataSource::Synthetic(SynthConfig::builtin(5000, 0)),
        Method::EdainGlobal,
        Preset::SyntheticDesk,
    );
    config.repetitions = 5;
    config.seed = 0;
    let ablation = run_ablation(&config).unwrap();
    let plan = plan_experiment(&config).unwrap();
    let mut extra = BTreeMap::new();
    for method in [Method::CdfInversion, Method::EdainLocal] {
        let c = ExperimentConfig {
            method,
            ..config.clone()
        };
        extra.insert(method, run_with_plan(&c, &plan).unwrap().0);
    }
    Replication { ablation, extra }
}

fn row<'a>(r: &'a Replication, name: &str) -> &'a MetricsReport {
    &r.ablation.rows.iter().find(|row| row.name == name).unwrap().report
}

fn mean_loss(report: &MetricsReport) -> f64 {
    assert_eq!(report.incomplete_folds, 0, "{} has failed folds", report.config.method);
    report.mean("loss").unwrap()
}

fn fingerprints(report: &MetricsReport) -> Vec<u64> {
    report.folds.iter().map(|f| f.split_fingerprint).collect()
}

fn table_one(r: &Replication) -> String {
    let zscore = mean_loss(row(r, "zscore"));
    let global = mean_loss(row(r, "om+shift+scale+pt"));
    let local = mean_loss(&r.extra[&Method::EdainLocal]);
    let cdf = mean_loss(&r.extra[&Method::CdfInversion]);
    let reference = fingerprints(row(r, "zscore"));
    for rep in r.extra.values() {
        assert_eq!(fingerprints(rep), reference, "folds differ between methods");
    }
    let detail = format!("BCE zscore {zscore:.4}, edain_global {global:.4}, edain_local {local:.4}, cdf_inversion {cdf:.4}");
    assert!(global <= zscore - 0.005, "global-aware EDAIN not 0.005 below z-score; {detail}");
    assert!(local > zscore, "local-aware EDAIN not above z-score; {detail}");
    assert!(cdf <= zscore, "CDF inversion above z-score; {detail}");
    detail
}

fn table_four(r: &Replication) -> String {
    let reference = fingerprints(&r.ablation.rows[0].report);
    for row in &r.ablation.rows {
        assert_eq!(fingerprints(&row.report), reference, "row {} uses different folds", row.name);
    }
    let parts: Vec<String> = r
        .ablation
        .rows
        .iter()
        .map(|row| format!("{} {:.4}", row.name, mean_loss(&row.report)))
        .collect();
    let full = mean_loss(row(r, "om+shift+scale+pt"));
    let base = mean_loss(row(r, "shift+scale"));
    assert!(full <= base, "full EDAIN {full:.4} above shift+scale {base:.4}");
    format!("shared folds; {}", parts.join(", "))
}

fn kl_criterion() -> String {
    let worst = invariants::kl_round_trip_on_random_bijectors();
    format!("random bijectors round trip {worst:.1e}; {}", invariants::kl_fit_reduces_skew_and_nll())
}

fn oracle_criterion() -> String {
    oracle::amex_matches_brute_force();
    oracle::kappa_and_macro_f1_match_brute_force();
    format!(
        "amex, Gini, kappa and macro-F1 agree on {} instances each (tolerance {:.0e})",
        oracle::INSTANCES,
        oracle::TOL
    )
}

fn generator_criterion() -> String {
    format!(
        "{}; {}",
        stats::label_balance_over_a_panel_of_datasets(),
        stats::marginals_pass_chi_square_at_one_percent()
    )
}

fn order_criterion() -> String {
    invariants::global_edain_preserves_order_for_random_parameters();
    invariants::static_transforms_preserve_order();
    invariants::local_edain_can_reverse_order();
    format!(
        "{} draws each for global EDAIN and static transforms; local-aware counterexample reverses order",
        invariants::DRAWS
    )
}

fn determinism_criterion() -> String {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_edain"))
            .args(args)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["generate", "--builtin", "synth3", "--n", "400", "--seed", "3", "--out", "d.csv"]);
    let mut checked = Vec::new();
    for (cmd, method) in [("train", "edain_global"), ("train", "dain"), ("train", "edain_kl"), ("ablate", "edain_local")] {
        let mut reports = Vec::new();
        for out in ["a.json", "b.json"] {
            run(&[cmd, "--data", "d.csv", "--method", method, "--cv", "kfold:3", "--epochs", "3", "--seed", "11", "--out", out]);
            reports.push(std::fs::read(dir.path().join(out)).unwrap());
        }
        assert_eq!(reports[0], reports[1], "{cmd} {method}: reports differ");
        checked.push(format!("{cmd} {method}"));
    }
    format!("byte-identical reports for {}", checked.join(", "))
}

fn main() {
    panic::set_hook(Box::new(|_| {}));
    let replication = RefCell::new(None);
    let with_replication = |f: fn(&Replication) -> String| {
        let mut slot = replication.borrow_mut();
        let r = slot.get_or_insert_with(replicate);
        f(r)
    };
    let results = [
        criterion(1, "gradient master suite", gradient_suite),
        criterion(2, "synthetic directional replication", || with_replication(table_one)),
        criterion(3, "ablation direction", || with_replication(table_four)),
        criterion(4, "EDAIN-KL bijectivity and fit", kl_criterion),
        criterion(5, "metric oracles", oracle_criterion),
        criterion(6, "generator statistics", generator_criterion),
        criterion(7, "order preservation", order_criterion),
        criterion(8, "CLI determinism", determinism_criterion),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
