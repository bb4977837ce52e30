//! Steady-state magnitude signal models and the Rician mean map.
//!
//! Latent parameters are `x = (M0, T1, T2)` and the single known parameter is
//! the flip-angle scaling `κ`. Times are in milliseconds, angles in degrees.
//! Every model is linear in `M0`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of latent parameters (M0, T1, T2).
pub const LATENT_DIM: usize = 3;
/// Number of known parameters (κ).
pub const KNOWN_DIM: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    pub m0: f64,
    pub t1: f64,
    pub t2: f64,
}

impl LatentParams {
    pub fn new(m0: f64, t1: f64, t2: f64) -> Result<Self> {
        let x = LatentParams { m0, t1, t2 };
        x.validate()?;
        Ok(x)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m0.is_finite() && self.t1.is_finite() && self.t2.is_finite()) {
            return Err(Error::invalid(format!("non-finite latent parameters {self:?}")));
        }
        if self.m0 < 0.0 || self.t1 <= 0.0 || self.t2 <= 0.0 {
            return Err(Error::invalid(format!(
                "latent parameters outside domain (need m0 >= 0, t1 > 0, t2 > 0): {self:?}"
            )));
        }
        if self.t2 > self.t1 {
            log::debug!("t2 > t1 is physically implausible: {self:?}");
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; LATENT_DIM] {
        [self.m0, self.t1, self.t2]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Error::check_len(LATENT_DIM, v.len())?;
        Ok(LatentParams { m0: v[0], t1: v[1], t2: v[2] })
    }

    fn with_component(mut self, l: usize, value: f64) -> Self {
        match l {
            0 => self.m0 = value,
            1 => self.t1 = value,
            _ => self.t2 = value,
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownParams {
    pub kappa: f64,
}

impl KnownParams {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::invalid(format!("kappa must be positive and finite, got {kappa}")));
        }
        Ok(KnownParams { kappa })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanKind {
    Spgr,
    Dess,
}

impl ScanKind {
    /// Signals produced per excitation.
    pub fn n_signals(self) -> usize {
        match self {
            ScanKind::Spgr => 1,
            ScanKind::Dess => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub kind: ScanKind,
    pub flip_deg: f64,
    pub tr_ms: f64,
    pub te_ms: f64,
}

impl ScanSpec {
    pub fn new(kind: ScanKind, flip_deg: f64, tr_ms: f64, te_ms: f64) -> Result<Self> {
        let s = ScanSpec { kind, flip_deg, tr_ms, te_ms };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.flip_deg > 0.0
            && self.flip_deg < 180.0
            && self.tr_ms > 0.0
            && self.te_ms >= 0.0
            && self.te_ms < self.tr_ms
            && self.tr_ms.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid scan {self:?}")))
        }
    }

    fn flip_rad(&self, nu: &KnownParams) -> f64 {
        nu.kappa * self.flip_deg.to_radians()
    }
}

/// An ordered list of scans. Dataset order downstream follows scan order, with
/// DESS contributing two consecutive datasets (first echo, then second).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub scans: Vec<ScanSpec>,
}

impl Acquisition {
    pub fn new(scans: Vec<ScanSpec>) -> Result<Self> {
        if scans.is_empty() {
            return Err(Error::invalid("acquisition has no scans"));
        }
        for s in &scans {
            s.validate()?;
        }
        Ok(Acquisition { scans })
    }

    /// Two SPGR scans (5° and 15°, TR 12.2 ms) and one DESS scan (30°,
    /// TR 17.5 ms), all with TE 4.67 ms. Yields four datasets.
    pub fn brain_relaxometry() -> Self {
        Acquisition {
            scans: vec![
                ScanSpec { kind: ScanKind::Spgr, flip_deg: 5.0, tr_ms: 12.2, te_ms: 4.67 },
                ScanSpec { kind: ScanKind::Spgr, flip_deg: 15.0, tr_ms: 12.2, te_ms: 4.67 },
                ScanSpec { kind: ScanKind::Dess, flip_deg: 30.0, tr_ms: 17.5, te_ms: 4.67 },
            ],
        }
    }

    pub fn n_datasets(&self) -> usize {
        self.scans.iter().map(|s| s.kind.n_signals()).sum()
    }
}

/// Per-dataset noise standard deviations. `sigma` is the standard deviation of
/// each of the real and imaginary noise components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigmas: Vec<f64>,
}

impl NoiseModel {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid(format!("noise sigmas must be finite and >= 0: {sigmas:?}")));
        }
        Ok(NoiseModel { sigmas })
    }

    pub fn isotropic(d: usize, sigma: f64) -> Result<Self> {
        NoiseModel::new(vec![sigma; d])
    }

    pub fn noiseless(d: usize) -> Self {
        NoiseModel { sigmas: vec![0.0; d] }
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
}

/// A map from (latent, known) parameters to `D` noiseless signal amplitudes.
pub trait SignalModel: Sync {
    fn n_datasets(&self) -> usize;

    /// Writes the `D` amplitudes into `out`.
    fn signals_into(&self, x: &LatentParams, nu: &KnownParams, out: &mut [f64]) -> Result<()>;

    fn signals(&self, x: &LatentParams, nu: &KnownParams) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_datasets()];
        self.signals_into(x, nu, &mut out)?;
        Ok(out)
    }
}

impl SignalModel for Acquisition {
    fn n_datasets(&self) -> usize {
        Acquisition::n_datasets(self)
    }

    fn signals_into(&self, x: &LatentParams, nu: &KnownParams, out: &mut [f64]) -> Result<()> {
        Error::check_len(Acquisition::n_datasets(self), out.len())?;
        let mut d = 0;
        for scan in &self.scans {
            match scan.kind {
                ScanKind::Spgr => {
                    out[d] = spgr_signal(x, nu, scan)?;
                    d += 1;
                }
                ScanKind::Dess => {
                    let (e1, e2) = dess_signals(x, nu, scan)?;
                    out[d] = e1;
                    out[d + 1] = e2;
                    d += 2;
                }
            }
        }
        Ok(())
    }
}

/// Mono-exponential decay `s_d = M0·exp(-TE_d/T2)`, one dataset per echo time.
/// Independent of T1 and κ; useful where closed-form answers are wanted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonoExp {
    pub echo_times_ms: Vec<f64>,
}

impl SignalModel for MonoExp {
    fn n_datasets(&self) -> usize {
        self.echo_times_ms.len()
    }

    fn signals_into(&self, x: &LatentParams, _nu: &KnownParams, out: &mut [f64]) -> Result<()> {
        Error::check_len(self.echo_times_ms.len(), out.len())?;
        x.validate()?;
        for (o, te) in out.iter_mut().zip(&self.echo_times_ms) {
            *o = x.m0 * (-te / x.t2).exp();
        }
        Ok(())
    }
}

fn check_inputs(x: &LatentParams, nu: &KnownParams, scan: &ScanSpec, kind: ScanKind) -> Result<()> {
    if scan.kind != kind {
        return Err(Error::invalid(format!("expected a {kind:?} scan, got {:?}", scan.kind)));
    }
    x.validate()?;
    if !(nu.kappa.is_finite() && nu.kappa >= 0.0) {
        return Err(Error::invalid(format!("invalid kappa {}", nu.kappa)));
    }
    Ok(())
}

/// Spoiled gradient-echo amplitude (Ernst steady state with T2 echo decay).
pub fn spgr_signal(x: &LatentParams, nu: &KnownParams, scan: &ScanSpec) -> Result<f64> {
    check_inputs(x, nu, scan, ScanKind::Spgr)?;
    let a = scan.flip_rad(nu);
    let e1 = (-scan.tr_ms / x.t1).exp();
    let s = x.m0 * a.sin() * (1.0 - e1) / (1.0 - e1 * a.cos()) * (-scan.te_ms / x.t2).exp();
    Ok(s.abs())
}

/// Analytic gradient of [`spgr_signal`] with respect to (M0, T1, T2).
pub fn spgr_gradient(x: &LatentParams, nu: &KnownParams, scan: &ScanSpec) -> Result<[f64; LATENT_DIM]> {
    check_inputs(x, nu, scan, ScanKind::Spgr)?;
    let a = scan.flip_rad(nu);
    let (sa, ca) = a.sin_cos();
    let e1 = (-scan.tr_ms / x.t1).exp();
    let decay = (-scan.te_ms / x.t2).exp();
    let denom = 1.0 - e1 * ca;
    let unit = sa * (1.0 - e1) / denom * decay;
    // magnitude: flip sign when sin(κα) < 0
    let sign = if unit < 0.0 { -1.0 } else { 1.0 };
    let d_m0 = unit;
    let d_e1 = (ca - 1.0) / (denom * denom);
    let d_t1 = x.m0 * sa * decay * d_e1 * e1 * scan.tr_ms / (x.t1 * x.t1);
    let d_t2 = x.m0 * unit * scan.te_ms / (x.t2 * x.t2);
    Ok([sign * d_m0, sign * d_t1, sign * d_t2])
}

/// Dual-echo steady-state amplitudes `(echo 1, echo 2)`.
///
/// Echo 1 is sampled `TE` after excitation; echo 2 is the refocused pathway
/// sampled `TE` before the next excitation. Both come from the unspoiled
/// steady state of a gradient-dephased isochromat ensemble.
pub fn dess_signals(x: &LatentParams, nu: &KnownParams, scan: &ScanSpec) -> Result<(f64, f64)> {
    check_inputs(x, nu, scan, ScanKind::Dess)?;
    let a = scan.flip_rad(nu);
    let c = a.cos();
    let e1 = (-scan.tr_ms / x.t1).exp();
    let e2 = (-scan.tr_ms / x.t2).exp();
    let p = 1.0 - e1 * c - e2 * e2 * (e1 - c);
    let q = e2 * (1.0 - e1) * (1.0 + c);
    let root = (p * p - q * q).sqrt();
    let r = (1.0 - e2 * e2) / root;
    let t = (a / 2.0).tan();
    let fisp = x.m0 * t * (1.0 - (e1 - c) * r);
    let echo1 = fisp * (-scan.te_ms / x.t2).exp();
    // 1 - (1 - E1 cos a) r, rearranged so the O(E2^2) result carries no
    // cancellation; the E2^2 factor absorbs exp(+TE/T2).
    let sin2 = a.sin().powi(2);
    let u = 1.0 - e1 * c;
    let psif_ratio = (1.0 - e2 * e2) * (1.0 - e1 * e1) * sin2 / (root * (root + u * (1.0 - e2 * e2)));
    let echo2 = x.m0 * t * psif_ratio * (-(2.0 * scan.tr_ms - scan.te_ms) / x.t2).exp();
    Ok((echo1.abs(), echo2.abs()))
}

/// Concatenated amplitudes for every scan of `acq`, in dataset order.
pub fn acquisition_signal(x: &LatentParams, nu: &KnownParams, acq: &Acquisition) -> Result<Vec<f64>> {
    acq.signals(x, nu)
}

/// High-SNR mean of Rician magnitudes: `sqrt(s_d² + σ_d²)`.
pub fn rician_mean(s: &[f64], noise: &NoiseModel) -> Result<Vec<f64>> {
    Error::check_len(s.len(), noise.len())?;
    Ok(s.iter().zip(&noise.sigmas).map(|(s, sg)| s.hypot(*sg)).collect())
}

/// Floor on the finite-difference step scale.
const FD_FLOOR: f64 = 1e-6;
const FD_REL_STEP: f64 = 1e-5;

/// Jacobian `∂s_d/∂x_l` (D×L) of a model's noiseless amplitudes by central
/// differences. Near the lower edge of a parameter's domain the step becomes
/// one-sided.
pub fn signal_gradient<M: SignalModel + ?Sized>(model: &M, x: &LatentParams, nu: &KnownParams) -> Result<Array2<f64>> {
    x.validate()?;
    let d = model.n_datasets();
    let base = x.to_array();
    let mut jac = Array2::zeros((d, LATENT_DIM));
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for l in 0..LATENT_DIM {
        let h = FD_REL_STEP * base[l].abs().max(FD_FLOOR);
        // m0 may reach 0; t1, t2 must stay strictly positive
        let lower_ok = if l == 0 { base[l] - h >= 0.0 } else { base[l] - h > 0.0 };
        model.signals_into(&x.with_component(l, base[l] + h), nu, &mut plus)?;
        if lower_ok {
            model.signals_into(&x.with_component(l, base[l] - h), nu, &mut minus)?;
            for i in 0..d {
                jac[[i, l]] = (plus[i] - minus[i]) / (2.0 * h);
            }
        } else {
            model.signals_into(x, nu, &mut minus)?;
            for i in 0..d {
                jac[[i, l]] = (plus[i] - minus[i]) / h;
            }
        }
    }
    Ok(jac)
}
