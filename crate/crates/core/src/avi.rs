//! Attribute vector integration.
//!
//! Given the channel SVDs `x = U_x·diag(S_x)·V_x` and `z = U_z·diag(S_z)·V_z`
//! (right singular vectors as rows), the blended bases are
//!
//! ```text
//! U'_z = U_z with columns reversed        V'_z = V_z with rows reversed
//! Û = [ U_x[:, :k] | (1-ρ)·U_x[:, k:] + ρ·U'_z[:, :k] ]
//! V̂ = [ V_x[:k, :] ; (1-ρ)·V_x[k:, :] + ρ·V'_z[:k, :] ]
//! ŷ = Û·diag(S)·V̂
//! ỹ = Ũ·diag(S + Δs)·Ṽ,   Ũ = Û with columns reversed, Ṽ = V̂ with rows reversed
//! ```
//!
//! When `k < N/2` the tail block is wider than `k`; the `U'_z` block is then
//! zero-padded on the right (and `V'_z` at the bottom), so tail columns
//! beyond `2k` are `(1-ρ)·U_x` columns.
//!
//! The inference output is `y_pred = Û·diag(S)·V̂`, the same composition as
//! `ŷ` evaluated at the user's `ρ`. Channels are edited independently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentMeta, LatentTensor};
use crate::linalg::{reconstruct, reverse_columns, reverse_rows, svd, Matrix, SvdTriple};

pub const RHO_MAX: f64 = 1.5;
pub const DEFAULT_K: usize = 32;
pub const EDIT_TAG: &str = "avi-edit";

/// Loss weights `(λ1, λ2, λ3, λ4)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas(pub [f64; 4]);

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas([3.0, 10.0, 10.0, 10.0])
    }
}

impl Lambdas {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and >= 0, got {:?}", self.0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AviConfig {
    pub k: usize,
    pub rho: f64,
    pub lambdas: Lambdas,
}

impl Default for AviConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K, rho: 1.0, lambdas: Lambdas::default() }
    }
}

impl AviConfig {
    /// Checks `ρ` and the loss weights; `k` is checked against the channel
    /// size when bases are built.
    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        self.lambdas.validate()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.is_finite() && (0.0..=RHO_MAX).contains(&rho)) {
        return Err(Error::RhoOutOfRange(rho));
    }
    if rho > 1.0 {
        log::warn!("rho = {rho} > 1 extrapolates past the target basis");
    }
    Ok(())
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || 2 * k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range for {n}x{n} channels (need 1 <= k <= {})",
            n / 2
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Training,
    Inference,
}

#[derive(Debug, Clone)]
pub struct TrainingOutput {
    pub y_hat: Matrix,
    pub y_tilde: Matrix,
    pub s_x: Vec<f64>,
    pub s: Vec<f64>,
    pub delta_s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    pub u_hat: Matrix,
    pub v_hat: Matrix,
    pub s: Vec<f64>,
    pub s_x: Vec<f64>,
    pub delta_s: Vec<f64>,
    pub y_pred: Matrix,
}

#[derive(Debug, Clone)]
pub enum AviOutput {
    Training(TrainingOutput),
    Inference(InferenceOutput),
}

/// Builds `(Û, V̂)` from the two channel SVDs.
pub fn build_attribute_bases(svd_x: &SvdTriple, svd_z: &SvdTriple, k: usize, rho: f64) -> Result<(Matrix, Matrix)> {
    let n = svd_x.u.rows();
    for (name, m) in [("U_x", &svd_x.u), ("V_x", &svd_x.v), ("U_z", &svd_z.u), ("V_z", &svd_z.v)] {
        if m.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!("{name} is {}x{}, expected {n}x{n}", m.rows(), m.cols())));
        }
    }
    check_k(k, n)?;
    if !rho.is_finite() {
        return Err(Error::RhoOutOfRange(rho));
    }
    let (ux, vx, uz, vz) = (&svd_x.u, &svd_x.v, &svd_z.u, &svd_z.v);
    let u_hat = Matrix::from_fn(n, n, |i, j| {
        if j < k {
            ux[(i, j)]
        } else {
            let t = j - k;
            let z = if t < k { uz[(i, n - 1 - t)] } else { 0.0 };
            (1.0 - rho) * ux[(i, j)] + rho * z
        }
    });
    let v_hat = Matrix::from_fn(n, n, |i, j| {
        if i < k {
            vx[(i, j)]
        } else {
            let t = i - k;
            let z = if t < k { vz[(n - 1 - t, j)] } else { 0.0 };
            (1.0 - rho) * vx[(i, j)] + rho * z
        }
    });
    Ok((u_hat, v_hat))
}

/// Per-item squared Frobenius losses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
}

impl LossParts {
    pub fn as_array(&self) -> [f64; 4] {
        [self.l1, self.l2, self.l3, self.l4]
    }

    pub fn total(&self, lambdas: &Lambdas) -> f64 {
        loss_total(self.as_array(), lambdas)
    }

    pub fn scaled(&self, w: f64) -> LossParts {
        LossParts { l1: self.l1 * w, l2: self.l2 * w, l3: self.l3 * w, l4: self.l4 * w }
    }

    pub fn add(&mut self, o: &LossParts) {
        self.l1 += o.l1;
        self.l2 += o.l2;
        self.l3 += o.l3;
        self.l4 += o.l4;
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{what}: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `‖ŷ − z‖²_F`
pub fn loss_l1(y_hat: &Matrix, z: &Matrix) -> Result<f64> {
    y_hat.check_same_shape(z)?;
    Ok(sq_dist(y_hat.as_slice(), z.as_slice()))
}

/// `‖ỹ − x‖²_F`
pub fn loss_l2(y_tilde: &Matrix, x: &Matrix) -> Result<f64> {
    y_tilde.check_same_shape(x)?;
    Ok(sq_dist(y_tilde.as_slice(), x.as_slice()))
}

/// `‖S − S_z‖²`
pub fn loss_l3(s: &[f64], s_z: &[f64]) -> Result<f64> {
    check_len(s, s_z, "S vs S_z")?;
    Ok(sq_dist(s, s_z))
}

/// `‖S + Δs − S_x‖²`
pub fn loss_l4(s: &[f64], delta_s: &[f64], s_x: &[f64]) -> Result<f64> {
    check_len(s, delta_s, "S vs Δs")?;
    check_len(s, s_x, "S vs S_x")?;
    Ok(s.iter().zip(delta_s).zip(s_x).map(|((a, d), b)| (a + d - b).powi(2)).sum())
}

/// `λ1·L1 + λ2·L2 + λ3·L3 + λ4·L4`
pub fn loss_total(parts: [f64; 4], lambdas: &Lambdas) -> f64 {
    parts.iter().zip(lambdas.0.iter()).map(|(p, l)| p * l).sum()
}

/// Everything about one `(x, z)` channel pair that does not depend on the
/// predicted singular values: both SVDs and the blended bases.
#[derive(Debug, Clone)]
pub struct AviPlan {
    pub x: Matrix,
    pub z: Matrix,
    pub s_x: Vec<f64>,
    pub s_z: Vec<f64>,
    pub u_hat: Matrix,
    pub v_hat: Matrix,
}

/// Gradients of one item's `L_AVI` with respect to `S` and `Δs`.
#[derive(Debug, Clone)]
pub struct OutputGrad {
    pub s: Vec<f64>,
    pub delta_s: Vec<f64>,
}

impl AviPlan {
    pub fn new(x: &Matrix, z: &Matrix, k: usize, rho: f64) -> Result<Self> {
        if !x.is_square() {
            return Err(Error::ShapeMismatch(format!("channels must be square, got {}x{}", x.rows(), x.cols())));
        }
        if x.shape() != z.shape() {
            return Err(Error::ShapeMismatch(format!(
                "x channel {}x{} vs z channel {}x{}",
                x.rows(),
                x.cols(),
                z.rows(),
                z.cols()
            )));
        }
        check_k(k, x.rows())?;
        let svd_x = svd(x)?;
        let svd_z = svd(z)?;
        Self::from_svds(x.clone(), z.clone(), &svd_x, &svd_z, k, rho)
    }

    pub fn from_svds(x: Matrix, z: Matrix, svd_x: &SvdTriple, svd_z: &SvdTriple, k: usize, rho: f64) -> Result<Self> {
        let (u_hat, v_hat) = build_attribute_bases(svd_x, svd_z, k, rho)?;
        Ok(Self { x, z, s_x: svd_x.s.clone(), s_z: svd_z.s.clone(), u_hat, v_hat })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    fn check_values(&self, s: &[f64], delta_s: &[f64]) -> Result<()> {
        let n = self.n();
        if s.len() != n || delta_s.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "S has {} and Δs {} entries, expected {n}",
                s.len(),
                delta_s.len()
            )));
        }
        if s.iter().chain(delta_s).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    fn y_hat(&self, s: &[f64]) -> Matrix {
        reconstruct(&self.u_hat, s, &self.v_hat).expect("plan shapes are consistent")
    }

    fn y_tilde(&self, s: &[f64], delta_s: &[f64]) -> Matrix {
        let u_tilde = reverse_columns(&self.u_hat);
        let v_tilde = reverse_rows(&self.v_hat);
        let w: Vec<f64> = s.iter().zip(delta_s).map(|(a, b)| a + b).collect();
        reconstruct(&u_tilde, &w, &v_tilde).expect("plan shapes are consistent")
    }

    pub fn training(&self, s: &[f64], delta_s: &[f64]) -> Result<TrainingOutput> {
        self.check_values(s, delta_s)?;
        Ok(TrainingOutput {
            y_hat: self.y_hat(s),
            y_tilde: self.y_tilde(s, delta_s),
            s_x: self.s_x.clone(),
            s: s.to_vec(),
            delta_s: delta_s.to_vec(),
        })
    }

    pub fn inference(&self, s: &[f64], delta_s: &[f64]) -> Result<InferenceOutput> {
        self.check_values(s, delta_s)?;
        Ok(InferenceOutput {
            u_hat: self.u_hat.clone(),
            v_hat: self.v_hat.clone(),
            s: s.to_vec(),
            s_x: self.s_x.clone(),
            delta_s: delta_s.to_vec(),
            y_pred: self.y_hat(s),
        })
    }

    pub fn losses(&self, out: &TrainingOutput) -> Result<LossParts> {
        Ok(LossParts {
            l1: loss_l1(&out.y_hat, &self.z)?,
            l2: loss_l2(&out.y_tilde, &self.x)?,
            l3: loss_l3(&out.s, &self.s_z)?,
            l4: loss_l4(&out.s, &out.delta_s, &self.s_x)?,
        })
    }

    /// Loss parts and the exact gradient of `L_AVI` with respect to `S`
    /// and `Δs`, with `Û`, `V̂` held fixed.
    pub fn loss_and_grad(&self, s: &[f64], delta_s: &[f64], lambdas: &Lambdas) -> Result<(LossParts, OutputGrad)> {
        let out = self.training(s, delta_s)?;
        let parts = self.losses(&out)?;
        let n = self.n();
        let [l1, l2, l3, l4] = lambdas.0;

        // ∂‖Σ wᵢ aᵢ bᵢ − t‖²/∂wᵢ = 2 aᵢᵀ R bᵢ
        let r1 = out.y_hat.sub(&self.z)?;
        let g1 = diag_sandwich(&self.u_hat, &r1, &self.v_hat, false);
        let r2 = out.y_tilde.sub(&self.x)?;
        // Ũ column i is Û column n−1−i; likewise for Ṽ rows.
        let g2 = diag_sandwich(&self.u_hat, &r2, &self.v_hat, true);

        let mut gs = vec![0.0; n];
        let mut gd = vec![0.0; n];
        for i in 0..n {
            let comp = s[i] + delta_s[i] - self.s_x[i];
            let shared = l2 * 2.0 * g2[i] + l4 * 2.0 * comp;
            gs[i] = l1 * 2.0 * g1[i] + l3 * 2.0 * (s[i] - self.s_z[i]) + shared;
            gd[i] = shared;
        }
        Ok((parts, OutputGrad { s: gs, delta_s: gd }))
    }
}

/// `g[i] = u_iᵀ R v_i` where `u_i` is column `i` of `u` and `v_i` row `i`
/// of `v`; with `reversed`, index `i` reads column/row `n−1−i`.
fn diag_sandwich(u: &Matrix, r: &Matrix, v: &Matrix, reversed: bool) -> Vec<f64> {
    let n = u.cols();
    // T = Uᵀ R, then g[i] = Σ_b T[c, b] V[c, b] with c the source index.
    let t = u.transpose().matmul(r).expect("square channel");
    (0..n)
        .map(|i| {
            let c = if reversed { n - 1 - i } else { i };
            t.row(c).iter().zip(v.row(c)).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Alg. 1 on one channel pair (both SVDs computed here).
pub fn avi_forward(
    x: &Matrix,
    z: &Matrix,
    s: &[f64],
    delta_s: &[f64],
    cfg: &AviConfig,
    stage: Stage,
) -> Result<AviOutput> {
    cfg.validate()?;
    let plan = AviPlan::new(x, z, cfg.k, cfg.rho)?;
    match stage {
        Stage::Training => plan.training(s, delta_s).map(AviOutput::Training),
        Stage::Inference => plan.inference(s, delta_s).map(AviOutput::Inference),
    }
}

/// Source of `(S, Δs)` for a channel.
pub trait SingularValuePredictor: Sync {
    /// Flattened channel length the predictor expects.
    fn input_len(&self) -> Option<usize>;

    fn predict(&self, channel: &Matrix) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Predicts `S = S_x` and `Δs = 0`: the identity configuration, useful for
/// debugging and checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct SourceSpectrum;

impl SingularValuePredictor for SourceSpectrum {
    fn input_len(&self) -> Option<usize> {
        None
    }

    fn predict(&self, channel: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = svd(channel)?.s;
        let d = vec![0.0; s.len()];
        Ok((s, d))
    }
}

fn check_pair(x: &LatentTensor, z: &LatentTensor) -> Result<()> {
    if x.shape() != z.shape() {
        return Err(Error::ShapeMismatch(format!("x is {} but z is {}", x.shape(), z.shape())));
    }
    Ok(())
}

/// Inference-stage outputs for every channel of a latent pair.
pub fn infer_channels(
    x: &LatentTensor,
    z: &LatentTensor,
    predictor: &dyn SingularValuePredictor,
    cfg: &AviConfig,
) -> Result<Vec<InferenceOutput>> {
    check_pair(x, z)?;
    cfg.validate()?;
    let shape = x.shape();
    if let Some(len) = predictor.input_len() {
        if len != shape.channel_len() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {len} inputs but channels have {}",
                shape.channel_len()
            )));
        }
    }
    (0..shape.channels)
        .into_par_iter()
        .map(|c| {
            let xc = x.channel(c);
            let plan = AviPlan::new(&xc, &z.channel(c), cfg.k, cfg.rho)?;
            let (s, d) = predictor.predict(&xc)?;
            plan.inference(&s, &d)
        })
        .collect()
}

/// Edits `x` toward `z`: returns `y_pred` assembled channel by channel, with
/// `x`'s metadata and the tag `avi-edit`.
pub fn edit_latent(
    x: &LatentTensor,
    z: &LatentTensor,
    predictor: &dyn SingularValuePredictor,
    cfg: &AviConfig,
) -> Result<LatentTensor> {
    let outs = infer_channels(x, z, predictor, cfg)?;
    let channels: Vec<Matrix> = outs.into_iter().map(|o| o.y_pred).collect();
    let meta = LatentMeta { tag: Some(EDIT_TAG.to_string()), ..x.meta.clone() };
    LatentTensor::from_channels(&channels, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(n: usize, seed: u64) -> Matrix {
        let mut r = Rng::new(seed);
        Matrix::from_fn(n, n, |_, _| r.normal())
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        crate::linalg::frobenius_distance(a, b).unwrap() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn rho_zero_keeps_source_bases() {
        let (x, z) = (random(8, 1), random(8, 2));
        let (sx, sz) = (svd(&x).unwrap(), svd(&z).unwrap());
        let (u, v) = build_attribute_bases(&sx, &sz, 3, 0.0).unwrap();
        assert_eq!(u, sx.u);
        assert_eq!(v, sx.v);
    }

    #[test]
    fn four_by_four_assembly() {
        let (x, z) = (random(4, 3), random(4, 4));
        let (sx, sz) = (svd(&x).unwrap(), svd(&z).unwrap());
        let (u, v) = build_attribute_bases(&sx, &sz, 2, 1.0).unwrap();
        let ucols = [sx.u.column(0), sx.u.column(1), sz.u.column(3), sz.u.column(2)];
        let vrows = [sx.v.row(0), sx.v.row(1), sz.v.row(3), sz.v.row(2)];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(u[(i, j)], ucols[j][i]);
                assert_eq!(v[(j, i)], vrows[j][i]);
            }
        }
    }

    #[test]
    fn k_range_enforced() {
        let x = random(8, 5);
        let t = svd(&x).unwrap();
        assert!(build_attribute_bases(&t, &t, 0, 1.0).is_err());
        assert!(build_attribute_bases(&t, &t, 5, 1.0).is_err());
        assert!(build_attribute_bases(&t, &t, 4, 1.0).is_ok());
    }

    #[test]
    fn narrow_k_pads_target_block() {
        let (x, z) = (random(8, 6), random(8, 7));
        let (sx, sz) = (svd(&x).unwrap(), svd(&z).unwrap());
        let (u, _) = build_attribute_bases(&sx, &sz, 2, 0.25).unwrap();
        for i in 0..8 {
            assert_eq!(u[(i, 2)], 0.75 * sx.u[(i, 2)] + 0.25 * sz.u[(i, 7)]);
            assert_eq!(u[(i, 6)], 0.75 * sx.u[(i, 6)]);
        }
    }

    #[test]
    fn identity_configuration() {
        let (x, z) = (random(16, 8), random(16, 9));
        let s_x = svd(&x).unwrap().s;
        let zeros = vec![0.0; 16];
        let cfg = AviConfig { k: 8, rho: 0.0, ..Default::default() };
        let AviOutput::Training(out) = avi_forward(&x, &z, &s_x, &zeros, &cfg, Stage::Training).unwrap() else {
            panic!()
        };
        assert!(rel(&out.y_hat, &x) < 1e-5);

        // Δs = reverse(S_x) − S_x makes ỹ reproduce x.
        let rev: Vec<f64> = s_x.iter().rev().copied().collect();
        let ds: Vec<f64> = rev.iter().zip(&s_x).map(|(r, s)| r - s).collect();
        let AviOutput::Training(out) = avi_forward(&x, &z, &s_x, &ds, &cfg, Stage::Training).unwrap() else { panic!() };
        assert!(rel(&out.y_tilde, &x) < 1e-5);
    }

    #[test]
    fn loss_examples() {
        let z = random(3, 1);
        assert_eq!(loss_l1(&z, &z).unwrap(), 0.0);
        assert_eq!(loss_l3(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(loss_l4(&[1.0, 1.0], &[0.5, -0.5], &[1.5, 0.5]).unwrap(), 0.0);
        let l = Lambdas::default();
        assert_eq!(loss_total([1.0; 4], &l), 33.0);
        assert_eq!(loss_total([0.0; 4], &l), 0.0);
        assert_eq!(loss_total([2.0, 0.0, 0.0, 0.0], &l), 6.0);
        assert!(loss_l3(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn stage_outputs() {
        let (x, z) = (random(8, 10), random(8, 11));
        let s = vec![1.0; 8];
        let cfg = AviConfig { k: 4, rho: 0.5, ..Default::default() };
        match avi_forward(&x, &z, &s, &s, &cfg, Stage::Inference).unwrap() {
            AviOutput::Inference(o) => {
                assert_eq!(o.u_hat.shape(), (8, 8));
                assert_eq!(o.y_pred, reconstruct(&o.u_hat, &s, &o.v_hat).unwrap());
            }
            AviOutput::Training(_) => panic!("wrong stage"),
        }
        assert!(avi_forward(&x, &z, &s[..7], &s, &cfg, Stage::Training).is_err());
        let bad = vec![f64::NAN; 8];
        assert!(matches!(avi_forward(&x, &z, &bad, &s, &cfg, Stage::Training), Err(Error::NonFinite)));
    }

    #[test]
    fn rho_validation() {
        let cfg = AviConfig { rho: 2.0, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().to_string(), "rho out of range: 2 (allowed [0, 1.5])");
        assert!(AviConfig { rho: 1.5, ..Default::default() }.validate().is_ok());
        assert!(AviConfig { rho: -0.1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, z) = (random(6, 12), random(6, 13));
        let plan = AviPlan::new(&x, &z, 3, 0.7).unwrap();
        let mut r = Rng::new(14);
        let s: Vec<f64> = (0..6).map(|_| r.normal()).collect();
        let d: Vec<f64> = (0..6).map(|_| r.normal()).collect();
        let lam = Lambdas::default();
        let (_, g) = plan.loss_and_grad(&s, &d, &lam).unwrap();
        let f = |s: &[f64], d: &[f64]| plan.loss_and_grad(s, d, &lam).unwrap().0.total(&lam);
        let h = 1e-6;
        for i in 0..6 {
            let (mut sp, mut sm) = (s.clone(), s.clone());
            sp[i] += h;
            sm[i] -= h;
            let num = (f(&sp, &d) - f(&sm, &d)) / (2.0 * h);
            assert!((num - g.s[i]).abs() <= 1e-5 * num.abs().max(1.0), "dS[{i}] {num} vs {}", g.s[i]);
            let (mut dp, mut dm) = (d.clone(), d.clone());
            dp[i] += h;
            dm[i] -= h;
            let num = (f(&s, &dp) - f(&s, &dm)) / (2.0 * h);
            assert!((num - g.delta_s[i]).abs() <= 1e-5 * num.abs().max(1.0));
        }
    }

    #[test]
    fn edit_with_source_spectrum_reproduces_x() {
        use crate::latent::{synth_latent, GenSpec, Shape};
        let x = synth_latent(&GenSpec::new(Shape::new(2, 8, 8), 1)).unwrap();
        let z = synth_latent(&GenSpec::new(Shape::new(2, 8, 8), 2)).unwrap();
        let cfg = AviConfig { k: 4, rho: 0.0, ..Default::default() };
        let y = edit_latent(&x, &z, &SourceSpectrum, &cfg).unwrap();
        assert_eq!(y.meta.tag.as_deref(), Some(EDIT_TAG));
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        let small = synth_latent(&GenSpec::new(Shape::new(2, 4, 4), 2)).unwrap();
        assert!(matches!(edit_latent(&x, &small, &SourceSpectrum, &cfg), Err(Error::ShapeMismatch(_))));
    }
}
