//! Generator statistics against the target densities, integrated
//! independently with Simpson's rule.

use edain::synthgen::{generate_dataset, FeatureSpec, SynthConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const BINS: usize = 20;

/// Normalised CDF at every grid point `lower + i h`, from per-cell Simpson
/// integrals of the density.
pub fn simpson_cdf(f: &FeatureSpec, cells: usize) -> Vec<f64> {
    let h = (f.upper - f.lower) / cells as f64;
    let pdf = |x: f64| edain::synthgen::eval_pdf(&f.pdf, x).unwrap();
    let mut cdf = vec![0.0];
    let mut acc = 0.0;
    for i in 0..cells {
        let a = f.lower + i as f64 * h;
        let b = a + h;
        acc += h / 6.0 * (pdf(a) + 4.0 * pdf(0.5 * (a + b)) + pdf(b));
        cdf.push(acc);
    }
    cdf.iter().map(|c| c / acc).collect()
}

pub fn cells(f: &FeatureSpec) -> usize {
    ((f.upper - f.lower) / f.delta()).round() as usize
}

/// Returns one `chi2/critical` summary per feature.
pub fn marginals_pass_chi_square_at_one_percent() -> String {
    let mut summary = Vec::new();
    let n = 10_000;
    let config = SynthConfig::builtin(n, 2024);
    let data = generate_dataset(&config).unwrap();
    let critical = ChiSquared::new((BINS - 1) as f64).unwrap().inverse_cdf(0.99);
    for (k, f) in config.features.iter().enumerate() {
        let m = cells(f);
        let h = (f.upper - f.lower) / m as f64;
        let cdf = simpson_cdf(f, m);
        // Bin edges are grid indices; bin j holds indices in (edge[j], edge[j + 1]].
        let mut edges = vec![-1i64];
        for j in 1..BINS {
            let q = j as f64 / BINS as f64;
            edges.push(cdf.partition_point(|&c| c < q) as i64);
        }
        edges.push(m as i64);
        edges.dedup();
        let mass = |e: i64| if e < 0 { 0.0 } else { cdf[e as usize] };
        let mut counts = vec![0usize; edges.len() - 1];
        for i in 0..n {
            let idx = ((data.batch.get(i, k, 0) - f.lower) / h).round() as i64;
            let b = edges.partition_point(|&e| e < idx) - 1;
            counts[b] += 1;
        }
        let stat: f64 = counts
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let e = n as f64 * (mass(edges[j + 1]) - mass(edges[j]));
                (c as f64 - e).powi(2) / e
            })
            .sum();
        summary.push(format!("f{}: chi2 {stat:.1}", k + 1));
        assert_eq!(counts.len(), BINS);
        assert!(stat < critical, "feature {k}: chi2 {stat} exceeds {critical}");
    }
    format!("{} (critical {critical:.1})", summary.join(", "))
}

/// Each dataset draws its own response coefficients, so a single dataset can
/// be far from balanced. Across the panel the positive rate averages one
/// half.
pub fn label_balance_over_a_panel_of_datasets() -> String {
    let (datasets, n) = (2000u64, 500);
    let rates: Vec<f64> = (0..datasets)
        .map(|seed| {
            let d = generate_dataset(&SynthConfig::builtin(n, seed)).unwrap();
            d.labels.iter().sum::<usize>() as f64 / n as f64
        })
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let first: Vec<String> = rates.iter().take(10).map(|r| format!("{r:.3}")).collect();
    assert!((mean - 0.5).abs() <= 0.05, "panel positive rate {mean}");
    format!("panel positive rate {mean:.4} over {datasets} datasets (first: {})", first.join(" "))
}
