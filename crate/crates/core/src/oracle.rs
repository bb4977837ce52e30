//! Brute-force isochromat simulation of SPGR and DESS steady states.
//!
//! Each isochromat is a magnetization vector that is tipped by instantaneous
//! RF rotations about x and relaxes exactly between events. Gradient spoiling
//! is modelled by rotating isochromat `j` about z by its dephasing phase once
//! per TR, between the two DESS readouts, so that the sample taken at TR−TE
//! is the pathway that refocuses at the next excitation. Ideal spoiling
//! zeroes transverse magnetization before each excitation.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{dess_signals, spgr_signal, KnownParams, LatentParams, ScanKind, ScanSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spoiling {
    Ideal,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsochromatConfig {
    pub n_spins: usize,
    pub n_reps: usize,
    /// Stop once the relative change of every echo between successive
    /// repetitions drops below this.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Dephasing phases are equispaced over [0, 2π); when set, each is
    /// jittered uniformly within its slot using the simulation seed.
    #[serde(default)]
    pub jitter: bool,
    /// Constant added to every isochromat's dephasing phase.
    #[serde(default)]
    pub phase_offset: f64,
}

fn default_tol() -> f64 {
    1e-9
}

/// Relative change above which a run counts as not converged.
pub const CONVERGENCE_LIMIT: f64 = 1e-6;

impl Default for IsochromatConfig {
    fn default() -> Self {
        IsochromatConfig { n_spins: 256, n_reps: 20_000, tol: default_tol(), jitter: false, phase_offset: 0.0 }
    }
}

impl IsochromatConfig {
    fn validate(&self) -> Result<()> {
        if self.n_spins == 0 || self.n_reps == 0 {
            return Err(Error::invalid("isochromat config needs n_spins >= 1 and n_reps >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("isochromat tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Spin {
    mx: f64,
    my: f64,
    mz: f64,
}

struct Relax {
    e1: f64,
    e2: f64,
}

impl Relax {
    fn over(dt: f64, x: &LatentParams) -> Self {
        Relax { e1: (-dt / x.t1).exp(), e2: (-dt / x.t2).exp() }
    }

    fn apply(&self, s: &mut Spin, m0: f64) {
        s.mx *= self.e2;
        s.my *= self.e2;
        s.mz = s.mz * self.e1 + m0 * (1.0 - self.e1);
    }
}

fn mean_transverse(spins: &[Spin]) -> f64 {
    let (sx, sy) = spins.iter().fold((0.0, 0.0), |(a, b), s| (a + s.mx, b + s.my));
    let n = spins.len() as f64;
    (sx / n).hypot(sy / n)
}

/// Simulates repeated excitations until the echo amplitudes stop changing.
/// Returns one amplitude for SPGR (ideal spoiling) and two for DESS
/// (gradient spoiling).
pub fn simulate_steady_state(
    x: &LatentParams,
    nu: &KnownParams,
    scan: &ScanSpec,
    cfg: &IsochromatConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    x.validate()?;
    scan.validate()?;
    let spoiling = match scan.kind {
        ScanKind::Spgr => Spoiling::Ideal,
        ScanKind::Dess => Spoiling::Gradient,
    };
    let n_echo = scan.kind.n_signals();
    let n = cfg.n_spins;

    let mut rng = rng::stream(seed, 0);
    let phases: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let slot = if cfg.jitter { rng.random::<f64>() } else { 0.0 };
            let phi = TAU * (j as f64 + slot) / n as f64 + cfg.phase_offset;
            phi.sin_cos()
        })
        .collect();

    let a = nu.kappa * scan.flip_deg.to_radians();
    let (sa, ca) = a.sin_cos();
    let te = scan.te_ms;
    let tr = scan.tr_ms;
    // DESS: excite | TE | echo 1, dephase | TR-2TE | echo 2 | TE | next excitation
    let to_echo1 = Relax::over(te, x);
    let (mid, tail) = match spoiling {
        Spoiling::Ideal => (Relax::over(tr - te, x), Relax::over(0.0, x)),
        Spoiling::Gradient => (Relax::over(tr - 2.0 * te, x), Relax::over(te, x)),
    };

    let mut spins = vec![Spin { mx: 0.0, my: 0.0, mz: x.m0 }; n];
    let mut prev = vec![f64::NAN; n_echo];
    let mut echoes = vec![0.0; n_echo];
    let mut change = f64::INFINITY;
    for rep in 0..cfg.n_reps {
        for s in spins.iter_mut() {
            if spoiling == Spoiling::Ideal {
                s.mx = 0.0;
                s.my = 0.0;
            }
            let my = s.my * ca + s.mz * sa;
            let mz = -s.my * sa + s.mz * ca;
            s.my = my;
            s.mz = mz;
            to_echo1.apply(s, x.m0);
        }
        echoes[0] = mean_transverse(&spins);
        if spoiling == Spoiling::Gradient {
            for (s, &(sp, cp)) in spins.iter_mut().zip(&phases) {
                let mx = s.mx * cp - s.my * sp;
                let my = s.mx * sp + s.my * cp;
                s.mx = mx;
                s.my = my;
                mid.apply(s, x.m0);
            }
            echoes[1] = mean_transverse(&spins);
            for s in spins.iter_mut() {
                tail.apply(s, x.m0);
            }
        } else {
            for s in spins.iter_mut() {
                mid.apply(s, x.m0);
            }
        }

        // normalized by the largest echo so a vanishing second echo cannot stall detection
        let scale = echoes.iter().chain(&prev).fold(0.0f64, |m, v| m.max(v.abs()));
        change = if prev.iter().any(|p| p.is_nan()) {
            f64::INFINITY
        } else if scale == 0.0 {
            0.0
        } else {
            echoes.iter().zip(&prev).map(|(e, p)| (e - p).abs()).fold(0.0, f64::max) / scale
        };
        if change < cfg.tol && rep > 0 {
            return Ok(echoes);
        }
        prev.copy_from_slice(&echoes);
    }
    if change > CONVERGENCE_LIMIT {
        return Err(Error::NotConverged { reps: cfg.n_reps, change });
    }
    Ok(echoes)
}

/// Analytic amplitudes of one scan, in the same layout as the simulator.
pub fn analytic_amplitudes(x: &LatentParams, nu: &KnownParams, scan: &ScanSpec) -> Result<Vec<f64>> {
    match scan.kind {
        ScanKind::Spgr => Ok(vec![spgr_signal(x, nu, scan)?]),
        ScanKind::Dess => {
            let (a, b) = dess_signals(x, nu, scan)?;
            Ok(vec![a, b])
        }
    }
}

/// One row of an oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub x: LatentParams,
    pub nu: KnownParams,
    pub scan: usize,
    pub echo: usize,
    pub analytic: f64,
    pub simulated: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    /// Index into `rows` of the worst relative error.
    pub worst: usize,
}

impl OracleReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows[self.worst].rel_err
    }
}

fn rel_err(analytic: f64, simulated: f64) -> f64 {
    let scale = analytic.abs().max(simulated.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - simulated).abs() / scale
    }
}

/// Compares analytic amplitudes with the simulator over every scan of `scans`
/// at every grid point.
pub fn oracle_grid_check(
    scans: &[ScanSpec],
    grid: &[(LatentParams, KnownParams)],
    cfg: &IsochromatConfig,
    seed: u64,
) -> Result<OracleReport> {
    oracle_grid_check_with(scans, grid, cfg, seed, analytic_amplitudes)
}

/// As [`oracle_grid_check`], with a caller-supplied analytic model.
pub fn oracle_grid_check_with<F>(
    scans: &[ScanSpec],
    grid: &[(LatentParams, KnownParams)],
    cfg: &IsochromatConfig,
    seed: u64,
    analytic: F,
) -> Result<OracleReport>
where
    F: Fn(&LatentParams, &KnownParams, &ScanSpec) -> Result<Vec<f64>> + Sync,
{
    if grid.is_empty() || scans.is_empty() {
        return Err(Error::invalid("oracle grid check needs at least one point and one scan"));
    }
    let per_point: Vec<Vec<OracleRow>> = grid
        .par_iter()
        .map(|(x, nu)| {
            let mut rows = Vec::new();
            for (si, scan) in scans.iter().enumerate() {
                let sim = simulate_steady_state(x, nu, scan, cfg, seed)?;
                let an = analytic(x, nu, scan)?;
                Error::check_len(sim.len(), an.len())?;
                for (echo, (a, s)) in an.iter().zip(&sim).enumerate() {
                    rows.push(OracleRow {
                        x: *x,
                        nu: *nu,
                        scan: si,
                        echo,
                        analytic: *a,
                        simulated: *s,
                        rel_err: rel_err(*a, *s),
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<OracleRow> = per_point.into_iter().flatten().collect();
    let worst = rows.iter().enumerate().fold(0, |w, (i, r)| if r.rel_err > rows[w].rel_err { i } else { w });
    Ok(OracleReport { rows, worst })
}

/// Log-spaced (T1, T2) × linearly spaced κ grid with M0 = 1.
pub fn support_grid(
    t1: (f64, f64, usize),
    t2: (f64, f64, usize),
    kappa: (f64, f64, usize),
) -> Vec<(LatentParams, KnownParams)> {
    let mut out = Vec::new();
    for t1v in crate::util::logspace(t1.0, t1.1, t1.2) {
        for t2v in crate::util::logspace(t2.0, t2.1, t2.2) {
            for k in crate::util::linspace(kappa.0, kappa.1, kappa.2) {
                out.push((LatentParams { m0: 1.0, t1: t1v, t2: t2v }, KnownParams { kappa: k }));
            }
        }
    }
    out
}
