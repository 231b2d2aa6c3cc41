//! CSV emission and the binary ensemble checkpoint.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{FieldState, NormTrace};
use crate::mixing::{DistanceCurve, MixingReport, RateRow};
use crate::model::{ModelParams, NoiseSpec};

/// Shortest round-trip text for `v`, in exponent form outside `[1e-4, 1e15)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn num(v: f64) -> String {
    fmt_f64(v)
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// Generic CSV table with a mandatory header row.
pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,l2,lm,linf,w1p`; `lm` is empty when not configured.
pub fn write_norm_trace(path: &Path, trace: &NormTrace) -> Result<()> {
    write_rows(
        path,
        &["t", "l2", "lm", "linf", "w1p"],
        (0..trace.len()).map(|i| {
            vec![
                num(trace.times[i]),
                num(trace.l2[i]),
                opt(trace.lm.as_ref().map(|v| v[i])),
                num(trace.linf[i]),
                num(trace.w1p[i]),
            ]
        }),
    )
}

/// `z,value` in one dimension, `z,y,value` in two.
pub fn write_field(path: &Path, u: &FieldState) -> Result<()> {
    let two = u.params.dim == 2;
    let header: &[&str] = if two { &["z", "y", "value"] } else { &["z", "value"] };
    write_rows(
        path,
        header,
        u.values.iter().enumerate().map(|(i, v)| {
            let (x, y) = u.params.node_coords(i);
            if two {
                vec![num(x), num(y), num(*v)]
            } else {
                vec![num(x), num(*v)]
            }
        }),
    )
}

/// `t,w_raw,w_se,w_env`.
pub fn write_curve(path: &Path, c: &DistanceCurve) -> Result<()> {
    write_rows(
        path,
        &["t", "w_raw", "w_se", "w_env"],
        (0..c.len()).map(|i| vec![num(c.times[i]), num(c.raw[i]), num(c.se[i]), num(c.envelope[i])]),
    )
}

/// `eps,tau,bound_upper,bound_lower,fit_family,fit_param,source`.
///
/// `tau` is empty beyond the horizon. The bound columns take the tightest
/// applicable bound of each side; `fit_family` is `poly`, `log` or
/// `inconclusive`, and `fit_param` the preferred fit's slope. `source` is the
/// tag of the rate-table row the experiment checks.
pub fn write_report(path: &Path, rep: &MixingReport, source: &str) -> Result<()> {
    let (family, param) = match &rep.fit {
        Some(f) => match f.preferred {
            Some(crate::mixing::ScalingFamily::Polynomial) => ("poly".to_string(), num(f.polynomial.slope)),
            Some(crate::mixing::ScalingFamily::Logarithmic) => ("log".to_string(), num(f.logarithmic.slope)),
            None => ("inconclusive".to_string(), String::new()),
        },
        None => ("insufficient".to_string(), String::new()),
    };
    write_rows(
        path,
        &["eps", "tau", "bound_upper", "bound_lower", "fit_family", "fit_param", "source"],
        rep.eps_grid.iter().enumerate().map(|(i, &e)| {
            let side = |s: crate::mixing::BoundSide| {
                let vals = rep.bounds[i].iter().filter(|b| b.side == s).filter_map(|b| b.value);
                match s {
                    crate::mixing::BoundSide::Upper => vals.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v)))),
                    crate::mixing::BoundSide::Lower => vals.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))),
                }
            };
            vec![
                num(e),
                opt(rep.tau[i]),
                opt(side(crate::mixing::BoundSide::Upper)),
                opt(side(crate::mixing::BoundSide::Lower)),
                family.clone(),
                param.clone(),
                source.to_string(),
            ]
        }),
    )
}

/// `p_range,noise,rate,upper_bound,source`.
pub fn write_rate_table(path: &Path, rows: &[RateRow]) -> Result<()> {
    write_rows(
        path,
        &["p_range", "noise", "rate", "upper_bound", "source"],
        rows.iter().map(|r| {
            vec![
                r.p_range.to_string(),
                r.noise.tag().to_string(),
                r.rate.to_string(),
                r.upper_bound.to_string(),
                r.source.to_string(),
            ]
        }),
    )
}

/// `pair_id,r,w_assign,w_upper,w_lower`, one pair per curve time.
pub fn write_transport_results(path: &Path, c: &DistanceCurve, r: f64) -> Result<()> {
    write_rows(
        path,
        &["pair_id", "r", "w_assign", "w_upper", "w_lower"],
        (0..c.len()).map(|i| vec![i.to_string(), num(r), num(c.raw[i]), num(c.coupling_upper[i]), num(c.mean_lower[i])]),
    )
}

/// `t,value`.
pub fn write_scalar_path(path: &Path, times: &[f64], values: &[f64]) -> Result<()> {
    write_rows(path, &["t", "value"], times.iter().zip(values).map(|(t, v)| vec![num(*t), num(*v)]))
}

/// `z,pdf,cdf`.
pub fn write_density_table(path: &Path, d: &crate::scalar::InvariantDensity) -> Result<()> {
    write_rows(path, &["z", "pdf", "cdf"], d.table().into_iter().map(|(z, p, c)| vec![num(z), num(p), num(c)]))
}

/// One sample per row, one column per coordinate.
pub fn write_samples(path: &Path, samples: &[Vec<f64>]) -> Result<()> {
    let dim = samples.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(path, &header, samples.iter().map(|s| s.iter().map(|v| num(*v)).collect()))
}

pub fn read_samples(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::InvalidParams(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Nodal values read from a field CSV (last column).
pub fn read_field_values(path: &Path) -> Result<Vec<f64>> {
    Ok(read_samples(path)?
        .into_iter()
        .filter_map(|row| row.last().copied())
        .collect())
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PLMX";
pub const CHECKPOINT_VERSION: u32 = 1;

/// 64-bit digest of the parameters, noise and any extra run identity.
pub fn params_hash(params: &ModelParams, noise: &NoiseSpec, extra: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(params.p.to_le_bytes());
    h.update((params.dim as u32).to_le_bytes());
    h.update(params.length.to_le_bytes());
    h.update((params.n_grid as u32).to_le_bytes());
    h.update(params.dt.to_le_bytes());
    h.update(params.eps_reg.to_le_bytes());
    h.update(params.r_order.to_le_bytes());
    h.update((noise.coeffs.len() as u32).to_le_bytes());
    for b in &noise.coeffs {
        h.update(b.to_le_bytes());
    }
    h.update(extra.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Saved ensemble: every path's state after `step` steps at time `time`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub params_hash: u64,
    pub seed: u64,
    pub step: u64,
    pub time: f64,
    /// Per-path step counts, for runs whose step sizes depend on the state.
    pub path_steps: Vec<u64>,
    pub states: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let n_nodes = self.states.first().map_or(0, Vec::len);
        if self.states.iter().any(|s| s.len() != n_nodes) || self.path_steps.len() != self.states.len() {
            return Err(Error::Checkpoint("ragged ensemble".into()));
        }
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let p = &self.params;
        w.write_all(&p.p.to_le_bytes())?;
        w.write_all(&(p.dim as u32).to_le_bytes())?;
        w.write_all(&p.length.to_le_bytes())?;
        w.write_all(&(p.n_grid as u32).to_le_bytes())?;
        w.write_all(&p.dt.to_le_bytes())?;
        w.write_all(&p.eps_reg.to_le_bytes())?;
        w.write_all(&p.r_order.to_le_bytes())?;
        w.write_all(&self.params_hash.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        w.write_all(&(self.states.len() as u64).to_le_bytes())?;
        w.write_all(&(n_nodes as u64).to_le_bytes())?;
        for k in &self.path_steps {
            w.write_all(&k.to_le_bytes())?;
        }
        for s in &self.states {
            for v in s {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let params = ModelParams {
            p: read_f64(&mut r)?,
            dim: read_u32(&mut r)? as usize,
            length: read_f64(&mut r)?,
            n_grid: read_u32(&mut r)? as usize,
            dt: read_f64(&mut r)?,
            eps_reg: read_f64(&mut r)?,
            r_order: read_f64(&mut r)?,
        };
        let params_hash = read_u64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let step = read_u64(&mut r)?;
        let time = read_f64(&mut r)?;
        let n_traj = read_u64(&mut r)? as usize;
        let n_nodes = read_u64(&mut r)? as usize;
        if n_traj > 1 << 32 || n_nodes > 1 << 32 {
            return Err(Error::Checkpoint("implausible ensemble size".into()));
        }
        let path_steps = (0..n_traj).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut states = Vec::with_capacity(n_traj);
        for _ in 0..n_traj {
            states.push((0..n_nodes).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            params,
            params_hash,
            seed,
            step,
            time,
            path_steps,
            states,
        })
    }
}

fn read_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_bytes(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_bytes(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            params: ModelParams::default(),
            params_hash: 0xdead_beef,
            seed: 7,
            step: 12,
            time: 0.5,
            path_steps: vec![12, 14],
            states: vec![vec![1.0, -2.5], vec![f64::MIN_POSITIVE, 3.0]],
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let c = sample();
        c.write(&path).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), c);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        sample().write(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::read(&path), Err(Error::CheckpointVersion { found: 9, expected: 1 })));
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::read(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn hash_tracks_parameters() {
        let a = params_hash(&ModelParams::default(), &NoiseSpec::new(vec![1.0]), "");
        let b = params_hash(&ModelParams { p: 2.5, ..Default::default() }, &NoiseSpec::new(vec![1.0]), "");
        let c = params_hash(&ModelParams::default(), &NoiseSpec::new(vec![1.0]), "");
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = vec![vec![0.1, 2.0], vec![-3.5, 1e-300]];
        write_samples(&path, &s).unwrap();
        assert_eq!(read_samples(&path).unwrap(), s);
    }
}
