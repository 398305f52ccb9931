//! Channel realizations: Rayleigh BS→user links, Rician BS→IRS and IRS→user
//! links with far-field array steering vectors, and the combined channel
//! seen by each user for a given IRS phase configuration.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cis, ComplexMatrix, ComplexVector};
use num_complex::Complex64;

pub type Point3 = [f64; 3];

/// Placement of the base station, the IRS and the users.
///
/// The BS array axis is the global x axis. The IRS grid rows run along the
/// global y axis and its columns along the z axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub bs_position: Point3,
    pub irs_position: Point3,
    pub user_positions: Vec<Point3>,
    /// Hz. Spacings are expressed in wavelengths, so this is informational.
    pub carrier_frequency: f64,
    /// Wavelengths.
    pub bs_antenna_spacing: f64,
    /// Wavelengths.
    pub irs_element_spacing: f64,
    /// `(rows, cols)`; `None` picks `rows = ⌊√M⌋` and the smallest `cols` covering M.
    pub irs_grid: Option<(usize, usize)>,
}

impl Default for Geometry {
    fn default() -> Self {
        let c = 25.0 * 2f64.sqrt();
        Self {
            bs_position: [0.0, 0.0, 10.0],
            irs_position: [c, c, 10.0],
            user_positions: two_user_preset(),
            carrier_frequency: 2.5e9,
            bs_antenna_spacing: 0.5,
            irs_element_spacing: 0.125,
            irs_grid: None,
        }
    }
}

/// The two fixed user positions used for the single-drop rate comparison.
pub fn two_user_preset() -> Vec<Point3> {
    vec![[32.52, 23.48, 1.5], [48.45, 19.55, 1.5]]
}

impl Geometry {
    /// Grid shape for an IRS with `m` elements.
    pub fn grid_for(&self, m: usize) -> Result<(usize, usize)> {
        match self.irs_grid {
            Some((r, c)) if r * c == m => Ok((r, c)),
            Some((r, c)) => Err(Error::Contract(format!(
                "IRS grid {r}x{c} does not have {m} elements"
            ))),
            None => Ok(default_grid(m)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |p: &Point3| p.iter().all(|x| x.is_finite());
        if !finite(&self.bs_position)
            || !finite(&self.irs_position)
            || !self.user_positions.iter().all(finite)
        {
            return Err(Error::Config("positions must be finite".into()));
        }
        if !(self.bs_antenna_spacing > 0.0 && self.irs_element_spacing > 0.0) {
            return Err(Error::Config("array spacings must be positive".into()));
        }
        Ok(())
    }
}

/// Default IRS grid: `rows = ⌊√M⌋`, `cols = M / rows`. Falls back to a single
/// row when `M` is not divisible.
pub fn default_grid(m: usize) -> (usize, usize) {
    if m == 0 {
        return (0, 0);
    }
    let rows = (m as f64).sqrt().floor() as usize;
    if m.is_multiple_of(rows) {
        (rows, m / rows)
    } else {
        (1, m)
    }
}

/// Large-scale fading parameters and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Linear power gain at 1 m.
    pub pathloss_ref_gain: f64,
    pub exponent_bs_user: f64,
    pub exponent_bs_irs: f64,
    pub exponent_irs_user: f64,
    /// Rician factor of the BS→IRS link (linear).
    pub rician_k1: f64,
    /// Rician factor of the IRS→user links (linear).
    pub rician_k2: f64,
    /// Watts.
    pub noise_power: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            pathloss_ref_gain: 1e-3,
            exponent_bs_user: 4.0,
            exponent_bs_irs: 2.0,
            exponent_irs_user: 2.5,
            rician_k1: 10.0,
            rician_k2: 10.0,
            noise_power: dbm_to_watts(-114.0),
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pathloss_ref_gain > 0.0
            && self.exponent_bs_user > 0.0
            && self.exponent_bs_irs > 0.0
            && self.exponent_irs_user > 0.0
            && self.rician_k1 >= 0.0
            && self.rician_k2 >= 0.0
            && self.noise_power > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid channel parameters".into()))
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// IRS phase shifts, optionally with the lifted SDR matrix they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    /// Radians in `[0, 2π)`.
    pub theta: Vec<f64>,
    /// `(M+1)×(M+1)` PSD matrix `E`.
    pub lifted: Option<ComplexMatrix>,
}

impl PhaseConfig {
    pub fn zeros(m: usize) -> Self {
        Self {
            theta: vec![0.0; m],
            lifted: None,
        }
    }

    pub fn from_theta(theta: Vec<f64>) -> Self {
        Self {
            theta: theta.into_iter().map(wrap_phase).collect(),
            lifted: None,
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `ē = [e^{-jθ₁}, …, e^{-jθ_M}, 1]`, so that `h_k^H = ē^H Γ_k`.
    pub fn lifted_vector(&self) -> ComplexVector {
        let m = self.theta.len();
        ComplexVector::from_iterator(
            m + 1,
            self.theta.iter().map(|&t| cis(-t)).chain(std::iter::once(Complex64::new(1.0, 0.0))),
        )
    }

    /// Inverse of [`lifted_vector`](Self::lifted_vector) for a vector whose
    /// last entry is nonzero: phases are read off after normalizing by it.
    pub fn from_lifted_vector(e: &ComplexVector) -> Self {
        let m = e.len() - 1;
        let last = e[m];
        let theta = (0..m).map(|i| wrap_phase(-(e[i] / last).arg())).collect();
        Self {
            theta,
            lifted: None,
        }
    }
}

/// Reduce a phase to `[0, 2π)`.
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let r = x.rem_euclid(two_pi);
    if r >= two_pi {
        0.0
    } else {
        r
    }
}

/// One realization of every link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// BS→IRS, `M×N`.
    pub f: ComplexMatrix,
    /// IRS→user, K vectors of length M.
    pub g: Vec<ComplexVector>,
    /// BS→user, K vectors of length N.
    pub v: Vec<ComplexVector>,
    /// Watts.
    pub noise_power: f64,
}

impl ChannelSet {
    pub fn new(
        f: ComplexMatrix,
        g: Vec<ComplexVector>,
        v: Vec<ComplexVector>,
        noise_power: f64,
    ) -> Result<Self> {
        let (m, n) = f.shape();
        if g.len() != v.len() {
            return Err(Error::Contract("g and v must have one entry per user".into()));
        }
        if g.iter().any(|x| x.len() != m) || v.iter().any(|x| x.len() != n) {
            return Err(Error::Contract(format!(
                "channel dimensions inconsistent with M={m}, N={n}"
            )));
        }
        if !(noise_power > 0.0) {
            return Err(Error::Domain("noise power must be positive".into()));
        }
        Ok(Self {
            f,
            g,
            v,
            noise_power,
        })
    }

    pub fn elements(&self) -> usize {
        self.f.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.f.ncols()
    }

    pub fn users(&self) -> usize {
        self.v.len()
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.users() {
            Err(Error::Contract(format!(
                "user index {user} out of range for K={}",
                self.users()
            )))
        } else {
            Ok(())
        }
    }

    /// `Γ_k = [diag(g_k^H) F; v_k^H]`, `(M+1)×N`.
    pub fn lifted_gamma(&self, user: usize) -> Result<ComplexMatrix> {
        self.check_user(user)?;
        let (m, n) = self.f.shape();
        let g = &self.g[user];
        let v = &self.v[user];
        Ok(ComplexMatrix::from_fn(m + 1, n, |r, c| {
            if r < m {
                g[r].conj() * self.f[(r, c)]
            } else {
                v[c].conj()
            }
        }))
    }

    /// Combined channel `h_k`, the column vector with
    /// `h_k^H = g_k^H Θ F + v_k^H`.
    pub fn combined_channel(&self, phases: &PhaseConfig, user: usize) -> Result<ComplexVector> {
        self.check_user(user)?;
        let (m, n) = self.f.shape();
        if phases.len() != m {
            return Err(Error::Contract(format!(
                "phase vector has length {}, expected {m}",
                phases.len()
            )));
        }
        let g = &self.g[user];
        let mut row = self.v[user].adjoint();
        for i in 0..m {
            let coef = g[i].conj() * cis(phases.theta[i]);
            for c in 0..n {
                row[c] += coef * self.f[(i, c)];
            }
        }
        Ok(row.adjoint())
    }

    /// `‖h_k‖²` at the given phases.
    pub fn strength(&self, phases: &PhaseConfig, user: usize) -> Result<f64> {
        Ok(self.combined_channel(phases, user)?.norm_squared())
    }

    /// Same links with the IRS removed (M = 0).
    pub fn without_irs(&self) -> Self {
        let n = self.antennas();
        Self {
            f: ComplexMatrix::zeros(0, n),
            g: vec![ComplexVector::zeros(0); self.users()],
            v: self.v.clone(),
            noise_power: self.noise_power,
        }
    }

    /// Channels with users rearranged so that position `i` holds user `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.users();
        let mut seen = vec![false; k];
        for &p in perm {
            if p >= k || seen[p] {
                return Err(Error::Contract("not a permutation of the users".into()));
            }
            seen[p] = true;
        }
        if perm.len() != k {
            return Err(Error::Contract("not a permutation of the users".into()));
        }
        Ok(Self {
            f: self.f.clone(),
            g: perm.iter().map(|&p| self.g[p].clone()).collect(),
            v: perm.iter().map(|&p| self.v[p].clone()).collect(),
            noise_power: self.noise_power,
        })
    }
}

/// Pathloss `ref_gain · d^(-exponent)`.
pub fn pathloss(distance: f64, exponent: f64, ref_gain: f64) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    Ok(ref_gain * distance.powf(-exponent))
}

/// ULA response: element `i` is `exp(j 2π d i sin(angle))`.
pub fn steering_ula(angle: f64, n: usize, spacing: f64) -> ComplexVector {
    ula_from_direction_cosine(angle.sin(), n, spacing)
}

fn ula_from_direction_cosine(cosine: f64, n: usize, spacing: f64) -> ComplexVector {
    ComplexVector::from_iterator(n, (0..n).map(|i| cis(2.0 * PI * spacing * i as f64 * cosine)))
}

/// URA response: Kronecker product of the row-axis ULA (direction cosine
/// `sin(az)·cos(el)`) and the column-axis ULA (direction cosine `sin(el)`),
/// flattened row-major.
pub fn steering_ura(azimuth: f64, elevation: f64, grid: (usize, usize), spacing: f64) -> ComplexVector {
    let (rows, cols) = grid;
    let a = ula_from_direction_cosine(azimuth.sin() * elevation.cos(), rows, spacing);
    let b = ula_from_direction_cosine(elevation.sin(), cols, spacing);
    a.kronecker(&b)
}

fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm3(a: &Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    norm3(&sub(a, b))
}

/// Azimuth/elevation of the unit direction `u` in the IRS frame
/// (rows along y, columns along z).
fn irs_angles(u: &Point3) -> (f64, f64) {
    let el = u[2].clamp(-1.0, 1.0).asin();
    let c = el.cos();
    let az = if c > 1e-12 { (u[1] / c).clamp(-1.0, 1.0).asin() } else { 0.0 };
    (az, el)
}

fn unit(a: &Point3) -> Point3 {
    let n = norm3(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Deterministic seed derivation: splitmix64 folded over a path of stream ids.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state);
    for &p in path {
        state = out ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        out = splitmix64(&mut state);
    }
    out
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Circularly-symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub fn complex_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize, variance: f64) -> ComplexVector {
    ComplexVector::from_iterator(n, (0..n).map(|_| complex_gaussian(rng, variance)))
}

const STREAM_BS_IRS: u64 = 1;
const STREAM_IRS_USER: u64 = 2;
const STREAM_BS_USER: u64 = 3;

/// Draw one channel realization.
///
/// Each link draws from its own substream, so a user's channels do not
/// depend on how many other users are present.
pub fn sample_channels(
    geometry: &Geometry,
    params: &ChannelParams,
    k_users: usize,
    m_elements: usize,
    n_antennas: usize,
    seed: u64,
) -> Result<ChannelSet> {
    geometry.validate()?;
    params.validate()?;
    if k_users == 0 || n_antennas == 0 {
        return Err(Error::Contract("need K ≥ 1 and N ≥ 1".into()));
    }
    if geometry.user_positions.len() < k_users {
        return Err(Error::Contract(format!(
            "geometry has {} user positions, need {k_users}",
            geometry.user_positions.len()
        )));
    }
    let m = m_elements;
    let n = n_antennas;
    let grid = geometry.grid_for(m)?;
    let beta = params.pathloss_ref_gain;

    let bs_to_irs = sub(&geometry.irs_position, &geometry.bs_position);
    let kappa = pathloss(norm3(&bs_to_irs), params.exponent_bs_irs, beta)?;
    let dep = unit(&bs_to_irs);
    let arr = unit(&sub(&geometry.bs_position, &geometry.irs_position));
    let (az, el) = irs_angles(&arr);
    let a_irs = steering_ura(az, el, grid, geometry.irs_element_spacing);
    let a_bs = ula_from_direction_cosine(dep[0], n, geometry.bs_antenna_spacing);
    let f_los = &a_irs * a_bs.adjoint();

    let k1 = params.rician_k1;
    let mut rng = rng_from(derive_seed(seed, &[STREAM_BS_IRS]));
    let f_nlos = ComplexMatrix::from_fn(m, n, |_, _| complex_gaussian(&mut rng, 1.0));
    let (w_los, w_nlos) = rician_weights(k1, kappa);
    let f = f_los * Complex64::from(w_los) + f_nlos * Complex64::from(w_nlos);

    let mut g = Vec::with_capacity(k_users);
    let mut v = Vec::with_capacity(k_users);
    for (k, pos) in geometry.user_positions.iter().take(k_users).enumerate() {
        let irs_to_user = sub(pos, &geometry.irs_position);
        let beta_k = pathloss(norm3(&irs_to_user), params.exponent_irs_user, beta)?;
        let (az, el) = irs_angles(&unit(&irs_to_user));
        let g_los = steering_ura(az, el, grid, geometry.irs_element_spacing);
        let mut rng = rng_from(derive_seed(seed, &[STREAM_IRS_USER, k as u64]));
        let g_nlos = complex_gaussian_vector(&mut rng, m, 1.0);
        let (w_los, w_nlos) = rician_weights(params.rician_k2, beta_k);
        g.push(g_los * Complex64::from(w_los) + g_nlos * Complex64::from(w_nlos));

        let rho_k = pathloss(distance(pos, &geometry.bs_position), params.exponent_bs_user, beta)?;
        let mut rng = rng_from(derive_seed(seed, &[STREAM_BS_USER, k as u64]));
        v.push(complex_gaussian_vector(&mut rng, n, rho_k));
    }
    ChannelSet::new(f, g, v, params.noise_power)
}

/// `(√(Kκ/(K+1)), √(κ/(K+1)))`; an infinite factor gives pure LoS.
fn rician_weights(k: f64, gain: f64) -> (f64, f64) {
    if k.is_infinite() {
        (gain.sqrt(), 0.0)
    } else {
        ((k * gain / (k + 1.0)).sqrt(), (gain / (k + 1.0)).sqrt())
    }
}
