//! CSV artifacts. Files are written to a temporary sibling and renamed into
//! place, so a failed run never leaves a partial file behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use mixlqc::harness::{envelope, EpisodeResult, MethodMetrics};

/// Decimal rendering with 9 significant digits; empty for missing values.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return String::new();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit (9.9999999996 -> 10.00000000)
    let digits = s.chars().filter(char::is_ascii_digit).count();
    let leading_zeros = s
        .trim_start_matches('-')
        .chars()
        .take_while(|c| *c == '0' || *c == '.')
        .filter(|c| *c == '0')
        .count();
    if digits - leading_zeros > 9 && decimals > 0 {
        let decimals = decimals - 1;
        return format!("{x:.decimals$}");
    }
    s
}

pub const SUMMARY_HEADER: [&str; 8] = ["method", "mae", "mse", "rmse", "volume", "trace", "runs", "seed"];

pub fn summary_csv(metrics: &[MethodMetrics], seed: u64) -> csv::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for m in metrics {
        w.write_record([
            m.method.name().to_string(),
            fmt_sig9(m.mae),
            fmt_sig9(m.mse),
            fmt_sig9(m.rmse),
            fmt_sig9(m.volume),
            fmt_sig9(m.trace),
            m.runs.to_string(),
            seed.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

fn indexed(prefix: &str, count: usize) -> Vec<String> {
    if count == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=count).map(|i| format!("{prefix}{i}")).collect()
    }
}

fn trajectory_header(n: usize, m: usize, r: usize) -> Vec<String> {
    let mut h = vec!["step".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend(indexed("z", m));
    h.extend((1..=n).map(|i| format!("xhat{i}")));
    h.extend(["trace_P", "trace_M", "volume"].map(String::from));
    h.extend(indexed("u", r));
    h.push("cost".to_string());
    h
}

/// One row per step `0..=N`; `z` is empty at step 0 and `u` at step N.
pub fn trajectory_csv(result: &EpisodeResult) -> csv::Result<String> {
    let n = result.states[0].len();
    let m = result
        .measurements
        .iter()
        .flatten()
        .next()
        .map_or(1, |z| z.len());
    let r = result.controls.first().map_or(1, |u| u.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(trajectory_header(n, m, r))?;
    for step in 0..result.states.len() {
        let mut row = vec![step.to_string()];
        row.extend(result.states[step].iter().map(|v| fmt_sig9(*v)));
        match &result.measurements[step] {
            Some(z) => row.extend(z.iter().map(|v| fmt_sig9(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        row.extend(result.centers[step].iter().map(|v| fmt_sig9(*v)));
        row.push(fmt_sig9(result.trace_p[step]));
        row.push(fmt_sig9(result.trace_m[step]));
        row.push(fmt_sig9(result.set_volume[step]));
        match result.controls.get(step) {
            Some(u) => row.extend(u.iter().map(|v| fmt_sig9(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), r)),
        }
        row.push(fmt_sig9(result.stage_cost[step]));
        w.write_record(row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

/// Wide per-step envelope: `step,x1_min,x1_max,x1_mean,x2_min,…`.
pub fn envelope_csv(results: &[EpisodeResult]) -> csv::Result<String> {
    let rows = envelope(results);
    let n = results.first().map_or(0, |r| r.states[0].len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string()];
    for i in 1..=n {
        header.extend(["min", "max", "mean"].map(|s| format!("x{i}_{s}")));
    }
    w.write_record(&header)?;
    for chunk in rows.chunks(n.max(1)) {
        let mut row = vec![chunk[0].step.to_string()];
        for c in chunk {
            row.extend([fmt_sig9(c.min), fmt_sig9(c.max), fmt_sig9(c.mean)]);
        }
        w.write_record(row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Renders every artifact of a benchmark in memory, as `(relative path, contents)`.
pub fn render_artifacts(
    runs: &[mixlqc::harness::MethodRun],
    seed: u64,
) -> csv::Result<Vec<(PathBuf, String)>> {
    let mut files = Vec::new();
    let metrics: Vec<MethodMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    files.push((PathBuf::from("summary.csv"), summary_csv(&metrics, seed)?));
    for run in runs {
        let name = run.metrics.method.name().to_lowercase();
        files.push((PathBuf::from(format!("envelope_{name}.csv")), envelope_csv(&run.episodes)?));
        for e in &run.episodes {
            files.push((
                PathBuf::from("trajectories").join(format!("{name}_{:04}.csv", e.episode)),
                trajectory_csv(e)?,
            ));
        }
    }
    Ok(files)
}
