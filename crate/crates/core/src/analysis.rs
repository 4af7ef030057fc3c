//! Spectral analysis of latents and latent sequences.
//!
//! - [`verify_theorem`] measures whether the blended basis `Û` (built with
//!   `ρ = 1`) is closer to `U_x` than to `U_z`.
//! - [`geodesic_trajectory`] tracks the Grassmannian distance between the
//!   leading singular subspaces of successive latents.
//! - [`singular_value_trajectory`] tabulates singular values per step.
//! - [`mobility_trace`] matches singular vectors across steps and follows
//!   how their rank positions move.
//!
//! Sequences are ordered as given; labels come from each latent's
//! `time_step` when present and its position otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avi::build_attribute_bases;
use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::linalg::{geodesic_distance, svd, Matrix, Norm, SvdTriple};

pub const DEFAULT_SUBSPACE_DIM: usize = 4;

fn check_same_shapes(latents: &[&LatentTensor]) -> Result<()> {
    if let Some(first) = latents.first() {
        for (i, t) in latents.iter().enumerate().skip(1) {
            if t.shape() != first.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "latent {i} is {} but latent 0 is {}",
                    t.shape(),
                    first.shape()
                )));
            }
        }
    }
    Ok(())
}

fn check_sequence(latents: &[LatentTensor], min: usize) -> Result<()> {
    if latents.len() < min {
        return Err(Error::InvalidArgument(format!("need at least {min} latents, got {}", latents.len())));
    }
    check_same_shapes(&latents.iter().collect::<Vec<_>>())
}

fn labels(latents: &[LatentTensor]) -> Vec<String> {
    latents
        .iter()
        .enumerate()
        .map(|(i, t)| match t.meta.time_step {
            Some(ts) => ts.to_string(),
            None => i.to_string(),
        })
        .collect()
}

fn channel_svds(t: &LatentTensor) -> Result<Vec<SvdTriple>> {
    (0..t.shape().channels).into_par_iter().map(|c| svd(&t.channel(c))).collect()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// ---------------------------------------------------------------------------
// Basis distance inequality

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremChannel {
    pub channel: usize,
    /// `‖Û − U_x‖_F`
    pub frobenius_to_x: f64,
    /// `‖Û − U_z‖_F`
    pub frobenius_to_z: f64,
    /// `‖Û − U_x‖_2`
    pub spectral_to_x: f64,
    /// `‖Û − U_z‖_2`
    pub spectral_to_z: f64,
    pub sigma_max_x: f64,
    pub sigma_max_z: f64,
    /// `σ_max(x) ≤ σ_max(z)`
    pub precondition: bool,
    /// The inequality under the report's norm.
    pub holds: bool,
}

impl TheoremChannel {
    pub fn distances(&self, norm: Norm) -> (f64, f64) {
        match norm {
            Norm::Frobenius => (self.frobenius_to_x, self.frobenius_to_z),
            Norm::Spectral => (self.spectral_to_x, self.spectral_to_z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub k: usize,
    pub norm: Norm,
    /// `k = N/2`.
    pub in_regime: bool,
    pub channels: Vec<TheoremChannel>,
    /// Fraction of channels where the inequality holds.
    pub rate: f64,
}

/// Distances from `Û` (with `ρ = 1`) to `U_x` and `U_z` for every channel,
/// in both norms; `holds` and `rate` use `norm`.
pub fn verify_theorem(x: &LatentTensor, z: &LatentTensor, k: usize, norm: Norm) -> Result<TheoremReport> {
    check_same_shapes(&[x, z])?;
    let shape = x.shape();
    if shape.height != shape.width {
        return Err(Error::ShapeMismatch(format!("channels must be square, got {shape}")));
    }
    let channels: Vec<TheoremChannel> = (0..shape.channels)
        .into_par_iter()
        .map(|c| {
            let (xc, zc) = (x.channel(c), z.channel(c));
            let (sx, sz) = (svd(&xc)?, svd(&zc)?);
            let (u_hat, _) = build_attribute_bases(&sx, &sz, k, 1.0)?;
            let frobenius_to_x = Norm::Frobenius.distance(&u_hat, &sx.u)?;
            let frobenius_to_z = Norm::Frobenius.distance(&u_hat, &sz.u)?;
            let spectral_to_x = Norm::Spectral.distance(&u_hat, &sx.u)?;
            let spectral_to_z = Norm::Spectral.distance(&u_hat, &sz.u)?;
            let (to_x, to_z) = match norm {
                Norm::Frobenius => (frobenius_to_x, frobenius_to_z),
                Norm::Spectral => (spectral_to_x, spectral_to_z),
            };
            Ok(TheoremChannel {
                channel: c,
                frobenius_to_x,
                frobenius_to_z,
                spectral_to_x,
                spectral_to_z,
                sigma_max_x: sx.max_singular_value(),
                sigma_max_z: sz.max_singular_value(),
                precondition: sx.max_singular_value() <= sz.max_singular_value(),
                holds: to_x <= to_z,
            })
        })
        .collect::<Result<_>>()?;
    let rate = channels.iter().filter(|c| c.holds).count() as f64 / channels.len() as f64;
    Ok(TheoremReport { k, norm, in_regime: 2 * k == shape.height, channels, rate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub reports: Vec<TheoremReport>,
    /// Fraction of all channels, over all pairs, where the inequality holds.
    pub rate: f64,
    /// The same fraction restricted to channels meeting the precondition;
    /// `None` when no channel does.
    pub rate_given_precondition: Option<f64>,
}

/// [`verify_theorem`] over a list of pairs. Rates are summed sequentially
/// in pair order.
pub fn verify_corpus(pairs: &[(LatentTensor, LatentTensor)], k: usize, norm: Norm) -> Result<CorpusReport> {
    let reports: Vec<TheoremReport> =
        pairs.par_iter().map(|(x, z)| verify_theorem(x, z, k, norm)).collect::<Result<_>>()?;
    let all: Vec<&TheoremChannel> = reports.iter().flat_map(|r| &r.channels).collect();
    if all.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let rate = all.iter().filter(|c| c.holds).count() as f64 / all.len() as f64;
    let pre: Vec<_> = all.iter().filter(|c| c.precondition).collect();
    let rate_given_precondition =
        (!pre.is_empty()).then(|| pre.iter().filter(|c| c.holds).count() as f64 / pre.len() as f64);
    Ok(CorpusReport { reports, rate, rate_given_precondition })
}

/// Columns: `pair,channel,frobenius_to_x,frobenius_to_z,spectral_to_x,
/// spectral_to_z,sigma_max_x,sigma_max_z,precondition,holds`.
pub fn theorem_csv(reports: &[TheoremReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "pair",
        "channel",
        "frobenius_to_x",
        "frobenius_to_z",
        "spectral_to_x",
        "spectral_to_z",
        "sigma_max_x",
        "sigma_max_z",
        "precondition",
        "holds",
    ])?;
    for (p, r) in reports.iter().enumerate() {
        for c in &r.channels {
            w.write_record([
                p.to_string(),
                c.channel.to_string(),
                c.frobenius_to_x.to_string(),
                c.frobenius_to_z.to_string(),
                c.spectral_to_x.to_string(),
                c.spectral_to_z.to_string(),
                c.sigma_max_x.to_string(),
                c.sigma_max_z.to_string(),
                c.precondition.to_string(),
                c.holds.to_string(),
            ])?;
        }
    }
    csv_string(w)
}

// ---------------------------------------------------------------------------
// Geodesic trajectories

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeodesicMode {
    /// Distance between each latent and the next.
    #[default]
    Consecutive,
    /// Distance between the first latent and each later one.
    AgainstFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubspaceSide {
    /// Leading left singular vectors (columns of `U`).
    #[default]
    Left,
    /// Leading right singular vectors (rows of `V`).
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicStep {
    pub from: String,
    pub to: String,
    pub distances: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSeries {
    pub p: usize,
    pub mode: GeodesicMode,
    pub side: SubspaceSide,
    pub steps: Vec<GeodesicStep>,
}

fn subspace(t: &LatentTensor, c: usize, side: SubspaceSide) -> Result<Matrix> {
    let sv = svd(&t.channel(c))?;
    Ok(match side {
        SubspaceSide::Left => sv.u,
        SubspaceSide::Right => sv.v.transpose(),
    })
}

/// Per-channel geodesic distances between the leading `p`-dimensional
/// singular subspaces, with the mean and (population) variance across
/// channels at every step.
pub fn geodesic_trajectory(
    latents: &[LatentTensor],
    p: usize,
    mode: GeodesicMode,
    side: SubspaceSide,
) -> Result<GeodesicSeries> {
    check_sequence(latents, 2)?;
    let channels = latents[0].shape().channels;
    let bases: Vec<Vec<Matrix>> =
        latents.par_iter().map(|t| (0..channels).map(|c| subspace(t, c, side)).collect()).collect::<Result<_>>()?;
    let names = labels(latents);
    let pairs: Vec<(usize, usize)> = match mode {
        GeodesicMode::Consecutive => (1..latents.len()).map(|i| (i - 1, i)).collect(),
        GeodesicMode::AgainstFirst => (1..latents.len()).map(|i| (0, i)).collect(),
    };
    let steps = pairs
        .par_iter()
        .map(|&(a, b)| {
            let distances =
                (0..channels).map(|c| geodesic_distance(&bases[a][c], &bases[b][c], p)).collect::<Result<Vec<_>>>()?;
            let (mean, variance) = mean_var(&distances);
            Ok(GeodesicStep { from: names[a].clone(), to: names[b].clone(), distances, mean, variance })
        })
        .collect::<Result<_>>()?;
    Ok(GeodesicSeries { p, mode, side, steps })
}

/// Mean and variance per step over several series of equal length, pooling
/// every channel of every series.
pub fn pool_series(series: &[GeodesicSeries]) -> Result<Vec<(f64, f64)>> {
    let len = series.first().ok_or_else(|| Error::InvalidArgument("no series to pool".into()))?.steps.len();
    if series.iter().any(|s| s.steps.len() != len) {
        return Err(Error::ShapeMismatch("series lengths differ".into()));
    }
    Ok((0..len)
        .map(|i| {
            let all: Vec<f64> = series.iter().flat_map(|s| s.steps[i].distances.iter().copied()).collect();
            mean_var(&all)
        })
        .collect())
}

/// Columns: `step,from,to,mean,variance,c0,…,c{C-1}`.
pub fn geodesic_csv(series: &GeodesicSeries) -> Result<String> {
    let channels = series.steps.first().map_or(0, |s| s.distances.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["step", "from", "to", "mean", "variance"].map(String::from).into();
    header.extend((0..channels).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for (i, s) in series.steps.iter().enumerate() {
        let mut row = vec![i.to_string(), s.from.clone(), s.to.clone(), s.mean.to_string(), s.variance.to_string()];
        row.extend(s.distances.iter().map(|d| d.to_string()));
        w.write_record(&row)?;
    }
    csv_string(w)
}

// ---------------------------------------------------------------------------
// Singular value trajectories

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvTrace {
    pub labels: Vec<String>,
    /// `values[step][channel][i]`
    pub values: Vec<Vec<Vec<f64>>>,
    /// `deltas[step - 1][channel][i] = values[step] − values[step − 1]`
    pub deltas: Vec<Vec<Vec<f64>>>,
}

pub fn singular_value_trajectory(latents: &[LatentTensor]) -> Result<SvTrace> {
    check_sequence(latents, 1)?;
    let values: Vec<Vec<Vec<f64>>> =
        latents.par_iter().map(|t| Ok(channel_svds(t)?.into_iter().map(|s| s.s).collect())).collect::<Result<_>>()?;
    let deltas = values
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b.iter().zip(a).map(|(b, a)| b - a).collect()).collect())
        .collect();
    Ok(SvTrace { labels: labels(latents), values, deltas })
}

/// Long format, columns `step,label,channel,index,sigma,delta`; `delta` is
/// empty on the first step.
pub fn svtrace_csv(trace: &SvTrace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "label", "channel", "index", "sigma", "delta"])?;
    for (t, step) in trace.values.iter().enumerate() {
        for (c, vals) in step.iter().enumerate() {
            for (i, v) in vals.iter().enumerate() {
                let delta = match t {
                    0 => String::new(),
                    _ => trace.deltas[t - 1][c][i].to_string(),
                };
                w.write_record([
                    t.to_string(),
                    trace.labels[t].clone(),
                    c.to_string(),
                    i.to_string(),
                    v.to_string(),
                    delta,
                ])?;
            }
        }
    }
    csv_string(w)
}

// ---------------------------------------------------------------------------
// Order mobility

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    /// Repeatedly take the largest remaining `|cos|`; ties go to the lower
    /// row, then the lower column.
    #[default]
    Greedy,
    /// Assignment maximizing the summed `|cos|`.
    Hungarian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMobility {
    pub channel: usize,
    /// `perms[t][i]`: rank at step `t + 1` matched to rank `i` at step `t`.
    pub perms: Vec<Vec<usize>>,
    /// `|cos|` of each match in `perms`.
    pub cosines: Vec<Vec<f64>>,
    /// `ranks[i][t]`: rank at step `t` of the vector that has rank `i` at
    /// the first step.
    pub ranks: Vec<Vec<usize>>,
    /// Final rank minus initial rank for each initial rank.
    pub net_shift: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityTrace {
    pub labels: Vec<String>,
    pub matching: Matching,
    pub channels: Vec<ChannelMobility>,
}

/// `|a_iᵀ b_j|` for the columns of `a` and `b`.
fn abs_cosines(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut m = a.transpose().matmul(b)?;
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.abs().min(1.0));
    Ok(m)
}

fn greedy_match(score: &Matrix) -> Vec<usize> {
    let n = score.rows();
    let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    entries.sort_by(|&(i1, j1), &(i2, j2)| {
        score[(i2, j2)].total_cmp(&score[(i1, j1)]).then(i1.cmp(&i2)).then(j1.cmp(&j2))
    });
    let mut perm = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    let mut left = n;
    for (i, j) in entries {
        if perm[i] == usize::MAX && !taken[j] {
            perm[i] = j;
            taken[j] = true;
            left -= 1;
            if left == 0 {
                break;
            }
        }
    }
    perm
}

/// Maximum-weight perfect matching (shortest augmenting paths with
/// potentials) on the square score matrix.
fn hungarian_match(score: &Matrix) -> Vec<usize> {
    let n = score.rows();
    let cost = |i: usize, j: usize| -score[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    perm
}

/// Matches the left singular vectors of consecutive latents per channel
/// and follows each vector's rank through the sequence.
pub fn mobility_trace(latents: &[LatentTensor], matching: Matching) -> Result<MobilityTrace> {
    check_sequence(latents, 2)?;
    let svds: Vec<Vec<SvdTriple>> = latents.par_iter().map(channel_svds).collect::<Result<_>>()?;
    let channels = latents[0].shape().channels;
    let steps = latents.len();
    let channels = (0..channels)
        .into_par_iter()
        .map(|c| {
            let mut perms = Vec::with_capacity(steps - 1);
            let mut cosines = Vec::with_capacity(steps - 1);
            for t in 0..steps - 1 {
                let score = abs_cosines(&svds[t][c].u, &svds[t + 1][c].u)?;
                let perm = match matching {
                    Matching::Greedy => greedy_match(&score),
                    Matching::Hungarian => hungarian_match(&score),
                };
                cosines.push(perm.iter().enumerate().map(|(i, &j)| score[(i, j)]).collect());
                perms.push(perm);
            }
            let n = perms[0].len();
            let ranks: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    let mut r = vec![i];
                    for p in &perms {
                        r.push(p[*r.last().unwrap()]);
                    }
                    r
                })
                .collect();
            let net_shift = ranks.iter().map(|r| *r.last().unwrap() as i64 - r[0] as i64).collect();
            Ok(ChannelMobility { channel: c, perms, cosines, ranks, net_shift })
        })
        .collect::<Result<_>>()?;
    Ok(MobilityTrace { labels: labels(latents), matching, channels })
}

/// One row per match, columns `channel,step,from,to,index,matched,cosine`.
pub fn mobility_matches_csv(trace: &MobilityTrace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["channel", "step", "from", "to", "index", "matched", "cosine"])?;
    for ch in &trace.channels {
        for (t, (perm, cos)) in ch.perms.iter().zip(&ch.cosines).enumerate() {
            for (i, (j, c)) in perm.iter().zip(cos).enumerate() {
                w.write_record([
                    ch.channel.to_string(),
                    t.to_string(),
                    trace.labels[t].clone(),
                    trace.labels[t + 1].clone(),
                    i.to_string(),
                    j.to_string(),
                    c.to_string(),
                ])?;
            }
        }
    }
    csv_string(w)
}

/// One row per tracked vector, columns `channel,index,r_<label>…,net_shift`.
pub fn mobility_ranks_csv(trace: &MobilityTrace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["channel".into(), "index".into()];
    header.extend(trace.labels.iter().map(|l| format!("r_{l}")));
    header.push("net_shift".into());
    w.write_record(&header)?;
    for ch in &trace.channels {
        for (i, r) in ch.ranks.iter().enumerate() {
            let mut row = vec![ch.channel.to_string(), i.to_string()];
            row.extend(r.iter().map(|v| v.to_string()));
            row.push(ch.net_shift[i].to_string());
            w.write_record(&row)?;
        }
    }
    csv_string(w)
}
