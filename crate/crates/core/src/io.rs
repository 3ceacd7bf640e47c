//! Trajectory CSV files and JSON sidecars.
//!
//! Columns: `t`, `x_*`, optional `v_*`, `u_*`, `V`, `avg`, `z_norm`,
//! `sat_count`, then any extra columns. Planar states use `x_<i>_x`,
//! `x_<i>_y`. Floats are written in shortest round-trip form, so reading a
//! file back gives bit-identical values. An empty `z_norm` cell means the
//! quantity was not recorded.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{Diagnostics, Sample, Trajectory};

fn agent_columns(prefix: &str, count: usize, dim: usize) -> Vec<String> {
    let axes = ["x", "y", "z"];
    (0..count)
        .map(|k| {
            if dim == 1 {
                format!("{prefix}_{}", k + 1)
            } else {
                format!(
                    "{prefix}_{}_{}",
                    k / dim + 1,
                    axes.get(k % dim).copied().unwrap_or("w")
                )
            }
        })
        .collect()
}

pub fn csv_header(traj: &Trajectory) -> Vec<String> {
    let first = traj.first();
    let m = first.x.len();
    let mut h = vec!["t".to_string()];
    h.extend(agent_columns("x", m, traj.dim));
    if first.v.is_some() {
        h.extend(agent_columns("v", m, traj.dim));
    }
    h.extend(agent_columns("u", m, traj.dim));
    h.extend(["V", "avg", "z_norm", "sat_count"].map(String::from));
    h.extend(traj.extra_names.iter().cloned());
    h
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_trajectory_csv<W: std::io::Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(traj))?;
    let mut row: Vec<String> = Vec::new();
    for s in &traj.samples {
        row.clear();
        row.push(fmt(s.t));
        row.extend(s.x.iter().copied().map(fmt));
        if let Some(v) = &s.v {
            row.extend(v.iter().copied().map(fmt));
        }
        row.extend(s.u.iter().copied().map(fmt));
        row.push(fmt(s.diag.lyapunov));
        row.push(fmt(s.diag.avg));
        row.push(s.diag.z_norm.map(fmt).unwrap_or_default());
        row.push(s.diag.saturations.to_string());
        row.extend(s.extra.iter().copied().map(fmt));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn trajectory_to_csv_string(traj: &Trajectory) -> Result<String> {
    let mut buf = Vec::new();
    write_trajectory_csv(traj, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn save_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectory_csv(traj, std::io::BufWriter::new(file))
}

pub fn read_trajectory_csv<R: std::io::Read>(input: R, source_name: &str) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let perr = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let pos = |name: &str| header.iter().position(|h| h == name);
    if header.first().map(String::as_str) != Some("t") {
        return Err(perr(1, "first column must be `t`".into()));
    }
    let (vi, ai, zi, si) = match (pos("V"), pos("avg"), pos("z_norm"), pos("sat_count")) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => return Err(perr(1, "missing one of V, avg, z_norm, sat_count".into())),
    };
    // Extra columns may reuse the `x_`/`v_` prefixes, so only look left of V.
    let count = |p: &str| header[..vi].iter().filter(|h| h.starts_with(p)).count();
    let m = count("x_");
    let dim = if header.get(1).is_some_and(|h| h.matches('_').count() == 2) {
        let axes = header[1..=m]
            .iter()
            .filter(|h| h.starts_with("x_1_"))
            .count();
        axes.max(1)
    } else {
        1
    };
    let has_v = count("v_") == m && m > 0;
    let u_at = 1 + m + if has_v { m } else { 0 };
    if m == 0 || u_at + m != vi {
        return Err(perr(
            1,
            "column layout does not match t, x_*, [v_*], u_*, V".into(),
        ));
    }
    let extra_names = header[si + 1..].to_vec();
    let mut samples = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(perr(
                line,
                format!("expected {} fields, got {}", header.len(), rec.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            let s = rec[i].trim();
            s.parse::<f64>()
                .map_err(|_| perr(line, format!("bad number `{s}` in column {}", header[i])))
        };
        let range = |a: usize, b: usize| -> Result<Vec<f64>> { (a..b).map(num).collect() };
        let z = rec[zi].trim();
        samples.push(Sample {
            t: num(0)?,
            x: range(1, 1 + m)?,
            v: if has_v {
                Some(range(1 + m, 1 + 2 * m)?)
            } else {
                None
            },
            u: range(u_at, u_at + m)?,
            diag: Diagnostics {
                lyapunov: num(vi)?,
                avg: num(ai)?,
                z_norm: if z.is_empty() { None } else { Some(num(zi)?) },
                saturations: rec[si]
                    .trim()
                    .parse()
                    .map_err(|_| perr(line, format!("bad sat_count `{}`", &rec[si])))?,
            },
            extra: range(si + 1, header.len())?,
        });
    }
    if samples.is_empty() {
        return Err(perr(1, "no samples".into()));
    }
    if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(perr(1, "sample times are not strictly increasing".into()));
    }
    Ok(Trajectory {
        dim,
        samples,
        extra_names,
    })
}

pub fn load_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectory_csv(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
