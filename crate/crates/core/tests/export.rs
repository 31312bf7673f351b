//! Campaign export round-trips: what lands on disk agrees with the in-memory table.

use std::collections::BTreeMap;
use std::path::Path;

use risloc::harness::{
    export, percentile_nearest_rank, read_trials_csv, run_campaign, sigma2_label, CampaignConfig, Metric, RisMode,
    ResultTable, TRIALS_HEADER,
};
use risloc::sampler::NutsConfig;

fn small_campaign(out: &Path) -> (CampaignConfig, ResultTable) {
    let cfg = CampaignConfig {
        sigma2_list: vec![1e-3, 1e-4],
        ris_modes: vec![RisMode::On, RisMode::Off],
        n_trials: 4,
        nuts: NutsConfig { tune: 150, draws: 150, ..NutsConfig::fast() },
        root_seed: 31,
        output_dir: out.to_path_buf(),
        ..CampaignConfig::default()
    };
    let table = run_campaign(&cfg).unwrap();
    export(&table, out).unwrap();
    (cfg, table)
}

fn parse(v: &str) -> f64 {
    v.parse().unwrap()
}

#[test]
fn exported_files_agree_with_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, table) = small_campaign(dir.path());

    for name in ["trials.csv", "timings.csv", "summary.json", "bounds.csv", "plot.py"] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }

    let rows = read_trials_csv(&dir.path().join("trials.csv")).unwrap();
    assert_eq!(rows.len(), cfg.n_trials * cfg.cells().len());
    for col in TRIALS_HEADER {
        assert!(rows[0].contains_key(col), "trials.csv lacks column {col}");
    }
    assert!(!rows[0].contains_key("wall_time_s"));

    // p90 recomputed from the CSV matches summary.json for every cell.
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for metric in [Metric::Position, Metric::Rotation] {
        let col = format!("{}_error", metric.label());
        for (sigma2, ris) in cfg.cells() {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| parse(&r["sigma2"]) == sigma2 && r["ris"] == ris.label() && !r[&col].is_empty())
                .map(|r| parse(&r[&col]))
                .collect();
            let from_csv = percentile_nearest_rank(&errs, 0.9).unwrap();
            let from_json = summary["p90"][metric.label()][ris.label()][sigma2_label(sigma2)].as_f64().unwrap();
            assert_eq!(from_csv, from_json);
            assert_eq!(Some(from_csv), table.p90(metric, sigma2, ris));
        }
    }
    assert_eq!(summary["cells"].as_array().unwrap().len(), 2 * cfg.cells().len());
}

#[test]
fn bounds_scale_by_sqrt_ten_between_decades_and_cdfs_are_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = small_campaign(dir.path());

    // Poses are shared across cells, so trial i sees the same geometry at both variances.
    let mut peb: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    let mut r = csv::Reader::from_path(dir.path().join("bounds.csv")).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        peb.entry((rec[1].to_string(), rec[2].to_string())).or_default().insert(rec[0].to_string(), parse(&rec[3]));
    }
    assert_eq!(peb.len(), 2 * cfg.n_trials);
    for by_sigma in peb.values() {
        let (lo, hi) = (by_sigma["0.0001"], by_sigma["0.001"]);
        assert!((hi / lo - 10f64.sqrt()).abs() < 1e-12, "ratio {}", hi / lo);
    }

    for metric in [Metric::Position, Metric::Rotation] {
        for (sigma2, ris) in cfg.cells() {
            let path = dir.path().join(format!("cdf_{}_{}_{}.csv", metric.label(), ris.label(), sigma2_label(sigma2)));
            let mut r = csv::Reader::from_path(&path).unwrap();
            let pts: Vec<(f64, f64)> = r.records().map(|rec| rec.unwrap()).map(|rec| (parse(&rec[0]), parse(&rec[1]))).collect();
            assert!(!pts.is_empty());
            assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1), "{}", path.display());
            assert_eq!(pts.last().unwrap().1, 1.0);
        }
    }
}
