//! Report types and the CSV/JSON/SVG exporters.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EwcError, Result};
use crate::harness::bounds::BoundRecord;
use crate::harness::config::{ExperimentConfig, PolicyKind};

/// One policy's curves for one seed, summed over test users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCurve {
    pub policy: PolicyKind,
    pub seed: u64,
    /// Entry `t` is the realized loss accumulated through round `t + 1`.
    pub cumulative_loss: Vec<f64>,
    /// `cumulative_loss` minus the Oracle θ cumulative loss.
    pub cumulative_regret: Vec<f64>,
    /// Cumulative `<p, l>`, only for Hedge policies.
    pub expected_cumulative_loss: Option<Vec<f64>>,
    pub per_user_loss: Vec<f64>,
    /// SHA-256 over the (context, choice) stream the policy consumed.
    pub stream_digest: String,
}

impl PolicyCurve {
    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyKind>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub curves: Vec<PolicyCurve>,
    pub bounds: Vec<BoundRecord>,
    pub metadata: ReportMetadata,
}

impl RegretReport {
    pub fn curves_for(&self, policy: PolicyKind) -> impl Iterator<Item = &PolicyCurve> + '_ {
        self.curves.iter().filter(move |c| c.policy == policy)
    }

    /// Median over seeds of the final cumulative regret.
    pub fn median_final_regret(&self, policy: PolicyKind) -> Option<f64> {
        let finals: Vec<f64> = self.curves_for(policy).map(PolicyCurve::final_regret).collect();
        (!finals.is_empty()).then(|| median(&finals))
    }
}

/// Median with the midpoint convention for even lengths; 0 for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Round-wise median over seeds of a policy's cumulative regret.
pub fn median_curve(report: &RegretReport, policy: PolicyKind) -> Option<Vec<f64>> {
    let curves: Vec<&PolicyCurve> = report.curves_for(policy).collect();
    if curves.is_empty() {
        return None;
    }
    let rounds = curves.iter().map(|c| c.cumulative_regret.len()).min().unwrap_or(0);
    Some(
        (0..rounds)
            .map(|t| median(&curves.iter().map(|c| c.cumulative_regret[t]).collect::<Vec<_>>()))
            .collect(),
    )
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| EwcError::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| EwcError::InvalidInput(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        EwcError::io(path, e)
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RegretRow {
    policy: PolicyKind,
    round: usize,
    cumulative_loss: f64,
    cumulative_regret_vs_oracle: f64,
    seed: u64,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>, path: &Path) -> Result<Vec<u8>> {
    let wrap = |source| EwcError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| wrap(e.into_error().into()))
}

pub fn regret_csv(report: &RegretReport) -> Result<Vec<u8>> {
    let rows = report.curves.iter().flat_map(|c| {
        c.cumulative_loss
            .iter()
            .zip(&c.cumulative_regret)
            .enumerate()
            .map(|(t, (&loss, &regret))| RegretRow {
                policy: c.policy,
                round: t + 1,
                cumulative_loss: loss,
                cumulative_regret_vs_oracle: regret,
                seed: c.seed,
            })
    });
    csv_bytes(rows, Path::new("regret.csv"))
}

/// `config.json` contents: the effective config plus hash and stream digests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub stream_digests: Vec<StreamDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDigest {
    pub policy: PolicyKind,
    pub seed: u64,
    pub digest: String,
}

/// Paths written by [`export_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFiles {
    pub regret_csv: PathBuf,
    pub bounds_csv: PathBuf,
    pub config_json: PathBuf,
    pub regret_svg: PathBuf,
}

pub fn export_report(report: &RegretReport, config: &ExperimentConfig, dir: &Path) -> Result<ExportedFiles> {
    fs::create_dir_all(dir).map_err(|e| EwcError::io(dir, e))?;
    let files = ExportedFiles {
        regret_csv: dir.join("regret.csv"),
        bounds_csv: dir.join("bounds.csv"),
        config_json: dir.join("config.json"),
        regret_svg: dir.join("regret.svg"),
    };
    write_atomic(&files.regret_csv, &regret_csv(report)?)?;
    write_atomic(&files.bounds_csv, &csv_bytes(&report.bounds, &files.bounds_csv)?)?;
    let echo = ConfigEcho {
        config: config.clone(),
        config_hash: report.metadata.config_hash.clone(),
        stream_digests: report
            .curves
            .iter()
            .map(|c| StreamDigest {
                policy: c.policy,
                seed: c.seed,
                digest: c.stream_digest.clone(),
            })
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&echo).map_err(|source| EwcError::Json {
        path: files.config_json.clone(),
        source,
    })?;
    json.push(b'\n');
    write_atomic(&files.config_json, &json)?;
    write_atomic(&files.regret_svg, render_svg(report).as_bytes())?;
    Ok(files)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| EwcError::io(path, e))?;
    csv::Reader::from_reader(std::io::BufReader::new(file))
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|source| EwcError::Csv {
            path: path.to_path_buf(),
            source,
        })
}

/// Rebuilds a report from an export directory. Per-user losses, expected
/// losses and digests are not part of the CSVs and come back empty.
pub fn load_report(dir: &Path) -> Result<(RegretReport, ConfigEcho)> {
    let config_path = dir.join("config.json");
    let text = fs::read_to_string(&config_path).map_err(|e| EwcError::io(&config_path, e))?;
    let echo: ConfigEcho = serde_json::from_str(&text).map_err(|source| EwcError::Json {
        path: config_path.clone(),
        source,
    })?;
    let rows: Vec<RegretRow> = read_csv(&dir.join("regret.csv"))?;
    let bounds: Vec<BoundRecord> = read_csv(&dir.join("bounds.csv"))?;

    let mut curves: Vec<PolicyCurve> = Vec::new();
    for row in rows {
        let idx = match curves.iter().position(|c| c.policy == row.policy && c.seed == row.seed) {
            Some(i) => i,
            None => {
                curves.push(PolicyCurve {
                    policy: row.policy,
                    seed: row.seed,
                    cumulative_loss: Vec::new(),
                    cumulative_regret: Vec::new(),
                    expected_cumulative_loss: None,
                    per_user_loss: Vec::new(),
                    stream_digest: String::new(),
                });
                curves.len() - 1
            }
        };
        let c = &mut curves[idx];
        if row.round != c.cumulative_loss.len() + 1 {
            return Err(EwcError::Data(format!(
                "regret.csv: rounds for {} seed {} are not consecutive",
                row.policy, row.seed
            )));
        }
        c.cumulative_loss.push(row.cumulative_loss);
        c.cumulative_regret.push(row.cumulative_regret_vs_oracle);
    }
    for c in &mut curves {
        if let Some(d) = echo
            .stream_digests
            .iter()
            .find(|d| d.policy == c.policy && d.seed == c.seed)
        {
            c.stream_digest = d.digest.clone();
        }
    }
    let report = RegretReport {
        curves,
        bounds,
        metadata: ReportMetadata {
            seeds: echo.config.seeds.clone(),
            policies: echo.config.policies.clone(),
            config_hash: echo.config_hash.clone(),
        },
    };
    Ok((report, echo))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

/// Line chart of the median cumulative regret per policy.
pub fn render_svg(report: &RegretReport) -> String {
    const W: f64 = 760.0;
    const H: f64 = 440.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 170.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 50.0;

    let mut policies: Vec<PolicyKind> = Vec::new();
    for c in &report.curves {
        if !policies.contains(&c.policy) {
            policies.push(c.policy);
        }
    }
    let series: Vec<(PolicyKind, Vec<f64>)> = policies
        .iter()
        .filter_map(|&p| median_curve(report, p).map(|c| (p, c)))
        .collect();
    let rounds = series.iter().map(|(_, c)| c.len()).max().unwrap_or(0).max(1);
    let mut y_min = series.iter().flat_map(|(_, c)| c.iter().copied()).fold(0.0, f64::min);
    let mut y_max = series.iter().flat_map(|(_, c)| c.iter().copied()).fold(0.0, f64::max);
    if y_max - y_min < 1e-9 {
        y_max = y_min + 1.0;
    }
    let step = nice_step(y_max - y_min);
    y_min = (y_min / step).floor() * step;
    y_max = (y_max / step).ceil() * step;

    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let x_of = |t: usize| LEFT + plot_w * (t as f64 - 1.0) / ((rounds - 1).max(1) as f64);
    let y_of = |v: f64| TOP + plot_h * (1.0 - (v - y_min) / (y_max - y_min));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);

    let mut v = y_min;
    while v <= y_max + step * 1e-6 {
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0,
            format_tick(v)
        );
        v += step;
    }
    let x_step = (nice_step(rounds as f64).round() as usize).max(1);
    let mut ticks = vec![1];
    ticks.extend((x_step..=rounds).step_by(x_step));
    for t in ticks {
        let x = x_of(t);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        LEFT + plot_w / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">median cumulative regret</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, (policy, curve)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(t, &v)| format!("{:.2},{:.2}", x_of(t + 1), y_of(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 16.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{policy}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v.fract().abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(policy: PolicyKind, seed: u64, loss: &[f64], oracle: &[f64]) -> PolicyCurve {
        PolicyCurve {
            policy,
            seed,
            cumulative_loss: loss.to_vec(),
            cumulative_regret: loss.iter().zip(oracle).map(|(a, b)| a - b).collect(),
            expected_cumulative_loss: None,
            per_user_loss: vec![],
            stream_digest: "00".into(),
        }
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested").join("a.txt");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"second");
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn svg_has_one_line_per_policy() {
        let oracle = [0.0, 0.0, 0.0];
        let report = RegretReport {
            curves: vec![
                curve(PolicyKind::Ewc, 0, &[1.0, 2.0, 2.0], &oracle),
                curve(PolicyKind::Ftl, 0, &[1.0, 2.0, 3.0], &oracle),
                curve(PolicyKind::OracleTheta, 0, &oracle, &oracle),
            ],
            bounds: vec![],
            metadata: ReportMetadata {
                seeds: vec![0],
                policies: vec![],
                config_hash: String::new(),
            },
        };
        let svg = render_svg(&report);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains(">oracle-theta</text>"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
