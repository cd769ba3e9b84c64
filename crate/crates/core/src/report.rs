//! Multi-seed comparisons of mirror maps and their SVG figures.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ampo::run_ampo;
use crate::error::{Error, Result};
use crate::gridworld::GridSpec;
use crate::pmd::{run_pmd, PmdConfig, PmdRunRecord};
use crate::potential::Potential;
use crate::rng::derive_seed;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Columns of the comparison CSV, in order.
pub const COMPARE_CSV_COLUMNS: [&str; 9] = [
    "environment",
    "map",
    "x",
    "value_mean",
    "value_se",
    "q_error_mean",
    "q_error_se",
    "update_distance_mean",
    "update_distance_se",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    Value,
    QError,
    UpdateDistance,
}

impl FigureKind {
    pub const ALL: [FigureKind; 3] = [FigureKind::Value, FigureKind::QError, FigureKind::UpdateDistance];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Value => "value",
            Self::QError => "q_error",
            Self::UpdateDistance => "update_distance",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Self::Value => "value V(mu)",
            Self::QError => "Q estimation error (max abs)",
            Self::UpdateDistance => "update distance (max TV)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Pmd,
    Ampo,
}

impl Algorithm {
    pub fn run(self, grid: &GridSpec, pot: &Potential, config: &PmdConfig) -> Result<PmdRunRecord> {
        let mdp = grid.compile()?;
        match self {
            Self::Pmd => run_pmd(&mdp, pot.as_dyn(), config),
            Self::Ampo => run_ampo(&mdp, pot.as_dyn(), config),
        }
    }
}

/// Mean and standard error of the mean at each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

/// Sample mean and `std / sqrt(n)` with the `n - 1` sample variance; the
/// standard error is 0 for a single sample.
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl Curve {
    fn from_series(series: &[Vec<f64>]) -> Self {
        let len = series[0].len();
        let (mean, se) = (0..len)
            .map(|t| mean_and_se(&series.iter().map(|s| s[t]).collect::<Vec<_>>()))
            .unzip();
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub environment: String,
    pub map: String,
    pub seeds: usize,
    /// Environment steps after each iteration, or iteration counts when no
    /// samples are drawn.
    pub x: Vec<f64>,
    /// `V^{t+1}(mu)`, so the last point is the value of the final policy.
    pub value: Curve,
    pub q_error: Curve,
    pub update_distance: Curve,
    pub final_values: Vec<f64>,
    pub final_mean: f64,
    pub final_se: f64,
}

impl ComparisonEntry {
    pub fn from_records(environment: &str, map: &str, records: &[PmdRunRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidInput(format!("no runs for {map} on {environment}")))?;
        let len = first.num_iterations();
        if records.iter().any(|r| r.num_iterations() != len) {
            return Err(Error::Dimension("runs in one comparison cell differ in length".into()));
        }
        let x = if first.config.steps_per_iteration() == 0 {
            (1..=len).map(|t| t as f64).collect()
        } else {
            first.env_steps().into_iter().map(|s| s as f64).collect()
        };
        let collect = |f: &dyn Fn(&PmdRunRecord) -> Vec<f64>| records.iter().map(f).collect::<Vec<_>>();
        let final_values: Vec<f64> = records.iter().map(|r| r.final_value).collect();
        let (final_mean, final_se) = mean_and_se(&final_values);
        Ok(Self {
            environment: environment.to_string(),
            map: map.to_string(),
            seeds: records.len(),
            x,
            value: Curve::from_series(&collect(&|r| r.next_values())),
            q_error: Curve::from_series(&collect(&|r| r.q_errors.clone())),
            update_distance: Curve::from_series(&collect(&|r| r.update_distances.clone())),
            final_values,
            final_mean,
            final_se,
        })
    }

    pub fn curve(&self, kind: FigureKind) -> &Curve {
        match kind {
            FigureKind::Value => &self.value,
            FigureKind::QError => &self.q_error,
            FigureKind::UpdateDistance => &self.update_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub x_label: String,
    pub seeds: usize,
    pub environments: Vec<String>,
    pub maps: Vec<String>,
    /// Environment-major, then map, in input order.
    pub entries: Vec<ComparisonEntry>,
}

impl ComparisonReport {
    pub fn entry(&self, environment: &str, map: &str) -> Option<&ComparisonEntry> {
        self.entries.iter().find(|e| e.environment == environment && e.map == map)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::persist::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = crate::persist::from_json(text, REPORT_SCHEMA_VERSION)?;
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let n = e.x.len();
            let aligned = [&e.value, &e.q_error, &e.update_distance]
                .iter()
                .all(|c| c.mean.len() == n && c.se.len() == n);
            if e.seeds == 0 || !aligned || e.final_values.len() != e.seeds {
                return Err(Error::Validation(format!(
                    "comparison entry {} / {} is inconsistent",
                    e.environment, e.map
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        writer.write_record(COMPARE_CSV_COLUMNS).map_err(err)?;
        for e in &self.entries {
            for t in 0..e.x.len() {
                writer
                    .write_record([
                        e.environment.clone(),
                        e.map.clone(),
                        format!("{:?}", e.x[t]),
                        format!("{:?}", e.value.mean[t]),
                        format!("{:?}", e.value.se[t]),
                        format!("{:?}", e.q_error.mean[t]),
                        format!("{:?}", e.q_error.se[t]),
                        format!("{:?}", e.update_distance.mean[t]),
                        format!("{:?}", e.update_distance.se[t]),
                    ])
                    .map_err(err)?;
            }
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// One run of a comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub environment: String,
    pub map: String,
    pub seed_index: usize,
    pub record: PmdRunRecord,
}

/// Seed of run `index` in a comparison with base seed `seed`.
pub fn comparison_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[0x636d_70, index as u64])
}

/// Runs every (environment, map, seed) combination in parallel and
/// aggregates them. Results are ordered by input index, so the output does
/// not depend on scheduling.
pub fn run_comparison(
    environments: &[(String, GridSpec)],
    maps: &[(String, Potential)],
    config: &PmdConfig,
    seeds: usize,
    algorithm: Algorithm,
) -> Result<(ComparisonReport, Vec<ComparisonRun>)> {
    if environments.is_empty() || maps.is_empty() || seeds == 0 {
        return Err(Error::InvalidInput(
            "a comparison needs at least one environment, map and seed".into(),
        ));
    }
    config.validate()?;
    let mdps = environments
        .iter()
        .map(|(_, g)| g.compile())
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..environments.len())
        .flat_map(|e| (0..maps.len()).flat_map(move |m| (0..seeds).map(move |s| (e, m, s))))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(e, m, s)| {
            let cfg = PmdConfig {
                seed: comparison_seed(config.seed, s),
                ..config.clone()
            };
            let pot = maps[m].1.as_dyn();
            let record = match algorithm {
                Algorithm::Pmd => run_pmd(&mdps[e], pot, &cfg),
                Algorithm::Ampo => run_ampo(&mdps[e], pot, &cfg),
            }?;
            Ok(ComparisonRun {
                environment: environments[e].0.clone(),
                map: maps[m].0.clone(),
                seed_index: s,
                record,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    for (chunk, (e, m)) in records
        .chunks(seeds)
        .zip((0..environments.len()).flat_map(|e| (0..maps.len()).map(move |m| (e, m))))
    {
        let recs: Vec<PmdRunRecord> = chunk.iter().map(|r| r.record.clone()).collect();
        entries.push(ComparisonEntry::from_records(&environments[e].0, &maps[m].0, &recs)?);
    }
    let x_label = if config.steps_per_iteration() == 0 { "iterations" } else { "environment steps" };
    let report = ComparisonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        algorithm,
        x_label: x_label.into(),
        seeds,
        environments: environments.iter().map(|(n, _)| n.clone()).collect(),
        maps: maps.iter().map(|(n, _)| n.clone()).collect(),
        entries,
    };
    Ok((report, records))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        let pad = 0.5 * hi.abs().max(1e-3);
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders one panel per environment with a mean line and a shaded band of
/// plus or minus one standard error for every map.
pub fn emit_figure(report: &ComparisonReport, kind: FigureKind) -> Result<String> {
    if report.entries.is_empty() || report.environments.is_empty() {
        return Err(Error::InvalidInput("cannot plot an empty report".into()));
    }
    report.validate()?;
    let band = report.entries.iter().all(|e| e.seeds > 1);
    let panels = report.environments.len() as f64;
    let legend_h = 20.0 * (report.maps.len() as f64 + if band { 0.0 } else { 1.0 }) + 10.0;
    let width = PANEL_W * panels;
    let height = PANEL_H + legend_h;
    let mut svg = String::new();
    let w = &mut svg;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    )
    .expect("write to string");
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("write to string");
    for (p, env) in report.environments.iter().enumerate() {
        let entries: Vec<&ComparisonEntry> = report.entries.iter().filter(|e| &e.environment == env).collect();
        let x0 = PANEL_W * p as f64;
        let (xmin, xmax) = range(entries.iter().flat_map(|e| e.x.iter().copied()).chain([0.0]));
        let (ymin, ymax) = range(entries.iter().flat_map(|e| {
            let c = e.curve(kind);
            c.mean.iter().zip(&c.se).flat_map(|(m, s)| [m - s, m + s])
        }));
        let px = |x: f64| x0 + MARGIN_L + (x - xmin) / (xmax - xmin) * (PANEL_W - MARGIN_L - MARGIN_R);
        let py = |y: f64| {
            let y = y.clamp(ymin, ymax);
            MARGIN_T + (ymax - y) / (ymax - ymin) * (PANEL_H - MARGIN_T - MARGIN_B)
        };
        let (left, right, top, bottom) = (px(xmin), px(xmax), py(ymax), py(ymin));
        writeln!(
            w,
            r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{} ({})</text>"#,
            (left + right) / 2.0,
            escape(env),
            kind.title()
        )
        .expect("write to string");
        writeln!(
            w,
            r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            right - left,
            bottom - top
        )
        .expect("write to string");
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (xmin + f * (xmax - xmin), ymin + f * (ymax - ymin));
            writeln!(
                w,
                r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"#,
                px(xv),
                bottom,
                bottom + 4.0,
                bottom + 16.0,
                tick_label(xv)
            )
            .expect("write to string");
            writeln!(
                w,
                r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="black"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"#,
                left - 4.0,
                py(yv),
                left,
                left - 6.0,
                py(yv) + 4.0,
                tick_label(yv)
            )
            .expect("write to string");
        }
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (left + right) / 2.0,
            bottom + 34.0,
            escape(&report.x_label)
        )
        .expect("write to string");
        for e in entries {
            let color = PALETTE[report.maps.iter().position(|m| m == &e.map).unwrap_or(0) % PALETTE.len()];
            let c = e.curve(kind);
            let pts: Vec<usize> = (0..e.x.len()).filter(|&t| c.mean[t].is_finite() && c.se[t].is_finite()).collect();
            if band && !pts.is_empty() {
                let mut poly = String::new();
                for &t in &pts {
                    write!(poly, "{:.2},{:.2} ", px(e.x[t]), py(c.mean[t] + c.se[t])).expect("write to string");
                }
                for &t in pts.iter().rev() {
                    write!(poly, "{:.2},{:.2} ", px(e.x[t]), py(c.mean[t] - c.se[t])).expect("write to string");
                }
                writeln!(
                    w,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    poly.trim_end()
                )
                .expect("write to string");
            }
            let line: Vec<String> = pts
                .iter()
                .map(|&t| format!("{:.2},{:.2}", px(e.x[t]), py(c.mean[t])))
                .collect();
            writeln!(
                w,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                line.join(" ")
            )
            .expect("write to string");
        }
    }
    let mut y = PANEL_H + 15.0;
    for (i, map) in report.maps.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        writeln!(
            w,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="{color}" stroke-width="3"/><text x="{3:.2}" y="{4:.2}">{5}</text>"#,
            MARGIN_L,
            y,
            MARGIN_L + 24.0,
            MARGIN_L + 30.0,
            y + 4.0,
            escape(map)
        )
        .expect("write to string");
        y += 20.0;
    }
    if !band {
        writeln!(
            w,
            r#"<text x="{MARGIN_L:.2}" y="{:.2}" font-style="italic">single seed: standard-error band omitted</text>"#,
            y + 4.0
        )
        .expect("write to string");
    }
    writeln!(w, "</svg>").expect("write to string");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{sample_task, GridDistribution};

    fn fake_record(values: &[f64]) -> PmdRunRecord {
        let grid = sample_task(&GridDistribution::square(3), 0).unwrap();
        let mut config = PmdConfig::exact(0.1, values.len());
        config.seed = 0;
        let mut rec = run_pmd(&grid.compile().unwrap(), Potential::negentropy().as_dyn(), &config).unwrap();
        rec.values = values[..values.len() - 1].to_vec();
        rec.values.insert(0, 0.0);
        rec.final_value = *values.last().unwrap();
        rec
    }

    fn report_with(seeds: &[Vec<f64>], maps: &[&str]) -> ComparisonReport {
        let records: Vec<PmdRunRecord> = seeds.iter().map(|v| fake_record(v)).collect();
        ComparisonReport {
            schema_version: REPORT_SCHEMA_VERSION,
            algorithm: Algorithm::Pmd,
            x_label: "iterations".into(),
            seeds: seeds.len(),
            environments: vec!["e".into()],
            maps: maps.iter().map(|m| m.to_string()).collect(),
            entries: maps
                .iter()
                .map(|m| ComparisonEntry::from_records("e", m, &records).unwrap())
                .collect(),
        }
    }

    #[test]
    fn standard_error_matches_sample_formula() {
        let (mean, se) = mean_and_se(&[1.0, 2.0, 3.0, 6.0]);
        assert_eq!(mean, 3.0);
        // sample variance (4 + 1 + 0 + 9) / 3
        assert!((se - (14.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_se(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn value_curve_ends_at_final_value() {
        let report = report_with(&[vec![0.1, 0.2, 0.5], vec![0.3, 0.4, 0.7]], &["a"]);
        let e = report.entry("e", "a").unwrap();
        assert_eq!(e.value.mean.len(), 3);
        assert!((e.value.mean[2] - 0.6).abs() < 1e-15);
        assert!((e.final_mean - 0.6).abs() < 1e-15);
        assert!((e.value.se[0] - 0.1).abs() < 1e-15);
        assert_eq!(e.x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn identical_maps_give_coincident_curves() {
        let report = report_with(&[vec![0.1, 0.2], vec![0.3, 0.5]], &["a", "b"]);
        let svg = emit_figure(&report, FigureKind::Value).unwrap();
        let lines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<polyline")).collect();
        assert_eq!(lines.len(), 2);
        let points = |l: &str| l.split('"').nth(1).unwrap().to_string();
        assert_eq!(points(lines[0]), points(lines[1]));
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn single_seed_omits_band() {
        let report = report_with(&[vec![0.1, 0.2]], &["a"]);
        let svg = emit_figure(&report, FigureKind::QError).unwrap();
        assert_eq!(svg.matches("<polygon").count(), 0);
        assert!(svg.contains("band omitted"));
    }

    #[test]
    fn empty_report_is_an_error() {
        let mut report = report_with(&[vec![0.1, 0.2]], &["a"]);
        report.entries.clear();
        assert!(emit_figure(&report, FigureKind::Value).is_err());
    }

    #[test]
    fn json_round_trip_and_csv_shape() {
        let report = report_with(&[vec![0.1, 0.2], vec![0.3, 0.5]], &["a", "b"]);
        let back = ComparisonReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
        let csv = report.to_csv().unwrap();
        assert_eq!(csv.lines().next().unwrap(), COMPARE_CSV_COLUMNS.join(","));
        assert_eq!(csv.lines().count(), 1 + 2 * 2);
    }

    #[test]
    fn comparison_is_ordered_and_reproducible() {
        let envs = vec![("g".to_string(), sample_task(&GridDistribution::square(3), 1).unwrap())];
        let maps = vec![
            ("negentropy".to_string(), Potential::negentropy()),
            ("l2".to_string(), Potential::l2()),
        ];
        let mut config = PmdConfig::default();
        config.num_iterations = 4;
        config.num_envs = 4;
        config.unroll_length = 8;
        config.inner_epochs = 4;
        let (a, runs) = run_comparison(&envs, &maps, &config, 3, Algorithm::Pmd).unwrap();
        let (b, _) = run_comparison(&envs, &maps, &config, 3, Algorithm::Pmd).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(runs.len(), 6);
        assert_eq!((runs[3].map.as_str(), runs[3].seed_index), ("l2", 0));
        let e = a.entry("g", "l2").unwrap();
        assert_eq!(e.x, vec![32.0, 64.0, 96.0, 128.0]);
        let mdp = envs[0].1.compile().unwrap();
        for run in &runs {
            let v = crate::mdp::value_of(&crate::mdp::exact_v(&mdp, &run.record.final_policy).unwrap(), mdp.start_dist());
            assert!((v - run.record.final_value).abs() < 1e-12);
        }
    }
}
