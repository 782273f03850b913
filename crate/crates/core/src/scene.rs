//! Localization scene: RIS element grid, distances, steering vectors, channel
//! gains, EMI correlation and per-anchor noise power.
//!
//! Conventions used throughout the crate:
//!
//! * The RIS lies in the `z = 0` plane, centred at the origin. Rows run along
//!   `y` (element length `element_len_y`), columns along `x`
//!   (`element_len_x`). Element `n = row * cols + col`.
//! * Steering entries are `exp(-j k0 distance)`; no far-field approximation
//!   is made anywhere.
//! * All powers are linear (W) unless a field name says otherwise.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::PhaseProfile;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Distances below this are treated as coincident points.
const COINCIDENT_TOL: f64 = 1e-9;

pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PathlossModel {
    /// Free-space amplitude laws derived from the scene geometry.
    #[default]
    FreeSpaceAmplitude,
    /// All gains equal to one.
    UnitGain,
    /// Gains read from [`SceneConfig::pathloss_table`].
    UserTable,
}

/// Per-anchor complex gains, each entry `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathlossTable {
    pub alpha: Vec<[f64; 2]>,
    pub beta: Vec<[f64; 2]>,
    pub zeta: Vec<[f64; 2]>,
}

/// Everything needed to build a [`Scene`]. Field names double as the keys of
/// the `[scene]` table in configuration files; missing keys take the values
/// of [`SceneConfig::reference`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Carrier frequency (Hz).
    pub frequency: f64,
    pub anchor_positions: Vec<[f64; 3]>,
    pub agent_position: [f64; 3],
    pub ris_rows: usize,
    pub ris_cols: usize,
    /// Element length along `y` (m).
    pub element_len_y: f64,
    /// Element length along `x` (m).
    pub element_len_x: f64,
    /// Gap between adjacent elements (m).
    pub element_spacing: f64,
    pub pilot_count: usize,
    pub pilot_energy_per_sample: f64,
    /// Thermal noise variance per anchor (W).
    pub sigma2: Vec<f64>,
    pub emi_flux_dbw_per_m2: f64,
    pub pathloss_model: PathlossModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pathloss_table: Option<PathlossTable>,
    /// Relative standard deviation of the side information on the path
    /// gains. Zero means the gains carry no side information at all, which
    /// leaves the nuisance block of the FIM rank deficient.
    pub gain_prior_rel_std: f64,
    /// Extra loss on the agent-anchor direct path (dB), e.g. for a blocked
    /// line of sight.
    pub direct_path_loss_db: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl SceneConfig {
    /// The simulation setup used for the reference experiments: three
    /// anchors, 30 GHz, 1 cm elements with 1 cm gaps on a 0.8 m square plate,
    /// agent at (0, 0, 20) m, EMI flux -70 dBW/m^2, thermal noise -124 dBW.
    pub fn reference() -> Self {
        let mut cfg = SceneConfig {
            frequency: 30e9,
            anchor_positions: vec![[-20.0, 50.0, 30.0], [-15.0, 35.0, 40.0], [-15.0, 60.0, 35.0]],
            agent_position: [0.0, 0.0, 20.0],
            ris_rows: 1,
            ris_cols: 1,
            element_len_y: 0.01,
            element_len_x: 0.01,
            element_spacing: 0.01,
            pilot_count: 64,
            pilot_energy_per_sample: 1.0,
            sigma2: vec![dbw_to_watts(-124.0); 3],
            emi_flux_dbw_per_m2: -70.0,
            pathloss_model: PathlossModel::FreeSpaceAmplitude,
            pathloss_table: None,
            gain_prior_rel_std: 1e-3,
            direct_path_loss_db: 0.0,
        };
        cfg.set_plate(0.8, 0.8);
        cfg
    }

    /// Number of elements of length `element_len` (plus spacing) that fit in
    /// a plate side of `side` metres.
    pub fn elements_along(side: f64, element_len: f64, spacing: f64) -> usize {
        let ratio = side / (element_len + spacing);
        (ratio + 1e-9).floor().max(0.0) as usize
    }

    /// Resizes the grid to fill an `a` (along y) by `b` (along x) plate.
    pub fn set_plate(&mut self, a: f64, b: f64) {
        self.ris_rows = Self::elements_along(a, self.element_len_y, self.element_spacing);
        self.ris_cols = Self::elements_along(b, self.element_len_x, self.element_spacing);
    }

    pub fn element_count(&self) -> usize {
        self.ris_rows * self.ris_cols
    }

    pub fn anchor_count(&self) -> usize {
        self.anchor_positions.len()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }

    /// Pilot energy `E_x = sum_t |x_t|^2` of the constant pilot.
    pub fn pilot_energy(&self) -> f64 {
        self.pilot_count as f64 * self.pilot_energy_per_sample
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.frequency) {
            return Err(Error::config("frequency must be positive"));
        }
        if self.anchor_positions.is_empty() {
            return Err(Error::config("at least one anchor is required"));
        }
        if self.ris_rows == 0 || self.ris_cols == 0 {
            return Err(Error::config("ris_rows and ris_cols must be positive"));
        }
        for (name, v) in [
            ("element_len_y", self.element_len_y),
            ("element_len_x", self.element_len_x),
            ("element_spacing", self.element_spacing),
            ("pilot_energy_per_sample", self.pilot_energy_per_sample),
        ] {
            if !positive(v) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.pilot_count == 0 {
            return Err(Error::config("pilot_count must be at least 1"));
        }
        if self.agent_position[2] <= 0.0 {
            return Err(Error::config("agent must be in front of the RIS (z > 0)"));
        }
        if self.sigma2.len() != self.anchor_count() {
            return Err(Error::config(format!(
                "sigma2 has {} entries for {} anchors",
                self.sigma2.len(),
                self.anchor_count()
            )));
        }
        if self.sigma2.iter().any(|&s| !positive(s)) {
            return Err(Error::config("sigma2 entries must be positive"));
        }
        if !self.emi_flux_dbw_per_m2.is_finite() {
            return Err(Error::config("emi_flux_dbw_per_m2 must be finite"));
        }
        if !(self.gain_prior_rel_std >= 0.0 && self.gain_prior_rel_std.is_finite()) {
            return Err(Error::config("gain_prior_rel_std must be non-negative"));
        }
        if !self.direct_path_loss_db.is_finite() {
            return Err(Error::config("direct_path_loss_db must be finite"));
        }
        if self.pathloss_model == PathlossModel::UserTable {
            let table = self
                .pathloss_table
                .as_ref()
                .ok_or_else(|| Error::config("pathloss_model = user_table needs pathloss_table"))?;
            let m = self.anchor_count();
            if table.alpha.len() != m || table.beta.len() != m || table.zeta.len() != m {
                return Err(Error::config("pathloss_table needs one entry per anchor"));
            }
        }
        Ok(())
    }
}

/// Element centres of the RIS.
#[derive(Debug, Clone, PartialEq)]
pub struct RisGrid {
    pub rows: usize,
    pub cols: usize,
    pub pitch_x: f64,
    pub pitch_y: f64,
    /// `(t_n, u_n)` = `(x, y)` of every element, row-major.
    pub element_centers: Vec<[f64; 2]>,
}

impl RisGrid {
    pub fn len(&self) -> usize {
        self.element_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_centers.is_empty()
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Plate extent `(b, a)` along x and y covered by the lattice pitch.
    pub fn extent(&self) -> (f64, f64) {
        (self.cols as f64 * self.pitch_x, self.rows as f64 * self.pitch_y)
    }
}

pub fn build_grid(cfg: &SceneConfig) -> Result<RisGrid> {
    if cfg.ris_rows == 0 || cfg.ris_cols == 0 {
        return Err(Error::config("ris_rows and ris_cols must be positive"));
    }
    if !(cfg.element_len_x > 0.0 && cfg.element_len_y > 0.0 && cfg.element_spacing > 0.0) {
        return Err(Error::config("element dimensions and spacing must be positive"));
    }
    let pitch_x = cfg.element_len_x + cfg.element_spacing;
    let pitch_y = cfg.element_len_y + cfg.element_spacing;
    let x0 = (cfg.ris_cols as f64 - 1.0) / 2.0;
    let y0 = (cfg.ris_rows as f64 - 1.0) / 2.0;
    let mut element_centers = Vec::with_capacity(cfg.ris_rows * cfg.ris_cols);
    for row in 0..cfg.ris_rows {
        for col in 0..cfg.ris_cols {
            element_centers.push([(col as f64 - x0) * pitch_x, (row as f64 - y0) * pitch_y]);
        }
    }
    Ok(RisGrid {
        rows: cfg.ris_rows,
        cols: cfg.ris_cols,
        pitch_x,
        pitch_y,
        element_centers,
    })
}

/// Distances between agent, anchors and elements, plus their gradients with
/// respect to the agent position.
#[derive(Debug, Clone)]
pub struct GeometryTables {
    /// Element -> agent, length N.
    pub rho: DVector<f64>,
    /// Anchor -> agent, length M.
    pub r: DVector<f64>,
    /// Anchor -> element, M x N.
    pub d: DMatrix<f64>,
    /// Row n is the unit vector d rho_n / d q.
    pub drho_dq: DMatrix<f64>,
    /// Row m is the unit vector d r_m / d q.
    pub dr_dq: DMatrix<f64>,
    /// Agent -> RIS centroid.
    pub rho_centroid: f64,
    /// Anchor -> RIS centroid, length M.
    pub d_centroid: DVector<f64>,
}

pub fn geometry(cfg: &SceneConfig, grid: &RisGrid) -> Result<GeometryTables> {
    let q = Vector3::from(cfg.agent_position);
    let n = grid.len();
    let m = cfg.anchor_count();
    let mut rho = DVector::zeros(n);
    let mut drho_dq = DMatrix::zeros(n, 3);
    for (i, c) in grid.element_centers.iter().enumerate() {
        let delta = q - Vector3::new(c[0], c[1], 0.0);
        let dist = delta.norm();
        if dist < COINCIDENT_TOL {
            return Err(Error::CoincidentPoint {
                what: format!("RIS element {i}"),
                distance: dist,
            });
        }
        rho[i] = dist;
        for k in 0..3 {
            drho_dq[(i, k)] = delta[k] / dist;
        }
    }
    let mut r = DVector::zeros(m);
    let mut dr_dq = DMatrix::zeros(m, 3);
    let mut d = DMatrix::zeros(m, n);
    let mut d_centroid = DVector::zeros(m);
    for (a, p) in cfg.anchor_positions.iter().enumerate() {
        let p = Vector3::from(*p);
        let delta = q - p;
        let dist = delta.norm();
        if dist < COINCIDENT_TOL {
            return Err(Error::CoincidentPoint {
                what: format!("anchor {a}"),
                distance: dist,
            });
        }
        r[a] = dist;
        for k in 0..3 {
            dr_dq[(a, k)] = delta[k] / dist;
        }
        for (i, c) in grid.element_centers.iter().enumerate() {
            let dist = (p - Vector3::new(c[0], c[1], 0.0)).norm();
            if dist < COINCIDENT_TOL {
                return Err(Error::CoincidentPoint {
                    what: format!("anchor {a} and RIS element {i}"),
                    distance: dist,
                });
            }
            d[(a, i)] = dist;
        }
        d_centroid[a] = p.norm();
    }
    Ok(GeometryTables {
        rho,
        r,
        d,
        drho_dq,
        dr_dq,
        rho_centroid: q.norm(),
        d_centroid,
    })
}

/// Channel quantities of one anchor.
#[derive(Debug, Clone)]
pub struct AnchorChannel {
    /// Cascaded (agent -> RIS -> anchor) gain.
    pub alpha: Complex64,
    /// Direct-path gain.
    pub beta: Complex64,
    /// RIS -> anchor gain.
    pub zeta: Complex64,
    /// RIS -> anchor steering vector.
    pub a2: DVector<Complex64>,
    /// `alpha * (a1 .* a2)`.
    pub h_ris: DVector<Complex64>,
    /// `beta * exp(-j k0 r_m)`.
    pub h_dp: Complex64,
    /// `zeta * a2`, the diagonal of `H_{m,2}`.
    pub h2: DVector<Complex64>,
}

#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// Agent -> RIS steering vector (identical for every anchor).
    pub a1: DVector<Complex64>,
    pub anchors: Vec<AnchorChannel>,
}

fn steering(k0: f64, dist: impl Iterator<Item = f64>) -> DVector<Complex64> {
    DVector::from_vec(dist.map(|x| Complex64::from_polar(1.0, -k0 * x)).collect())
}

/// `(alpha, beta, zeta)` for anchor `m` under the configured pathloss model.
pub fn pathloss_gains(cfg: &SceneConfig, geom: &GeometryTables, m: usize) -> Result<[Complex64; 3]> {
    let c = |v: [f64; 2]| Complex64::new(v[0], v[1]);
    Ok(match cfg.pathloss_model {
        PathlossModel::UnitGain => [Complex64::new(1.0, 0.0); 3],
        PathlossModel::UserTable => {
            let t = cfg
                .pathloss_table
                .as_ref()
                .ok_or_else(|| Error::config("missing pathloss_table"))?;
            [c(t.alpha[m]), c(t.beta[m]), c(t.zeta[m])]
        }
        PathlossModel::FreeSpaceAmplitude => {
            let lambda = cfg.wavelength();
            let four_pi = 4.0 * std::f64::consts::PI;
            let beta = lambda / (four_pi * geom.r[m]);
            let zeta = lambda / (four_pi * geom.d_centroid[m]);
            let aperture = (cfg.element_len_x * cfg.element_len_y).sqrt() / lambda;
            let alpha = zeta * lambda / (four_pi * geom.rho_centroid) * aperture;
            [
                Complex64::new(alpha, 0.0),
                Complex64::new(beta, 0.0),
                Complex64::new(zeta, 0.0),
            ]
        }
    })
}

pub fn channels(cfg: &SceneConfig, grid: &RisGrid, geom: &GeometryTables) -> Result<ChannelSet> {
    let k0 = cfg.wavenumber();
    let n = grid.len();
    let a1 = steering(k0, geom.rho.iter().copied());
    let mut anchors = Vec::with_capacity(cfg.anchor_count());
    for m in 0..cfg.anchor_count() {
        let [alpha, beta, zeta] = pathloss_gains(cfg, geom, m)?;
        let beta = beta * 10f64.powf(-cfg.direct_path_loss_db / 20.0);
        let a2 = steering(k0, (0..n).map(|i| geom.d[(m, i)]));
        let h_ris = a1.component_mul(&a2) * alpha;
        let h_dp = beta * Complex64::from_polar(1.0, -k0 * geom.r[m]);
        let h2 = &a2 * zeta;
        anchors.push(AnchorChannel {
            alpha,
            beta,
            zeta,
            a2,
            h_ris,
            h_dp,
            h2,
        });
    }
    Ok(ChannelSet { a1, anchors })
}

/// Spatial correlation of the EMI field over the RIS elements.
#[derive(Debug, Clone)]
pub struct EmiModel {
    /// N x N real symmetric correlation matrix (W).
    pub r: DMatrix<f64>,
    /// Flux density in W/m^2.
    pub emi_flux_linear: f64,
    /// Element area `l1 * l2` (m^2).
    pub effective_area: f64,
}

impl EmiModel {
    /// Power captured by one element, the diagonal of `R`.
    pub fn element_power(&self) -> f64 {
        self.emi_flux_linear * self.effective_area
    }

    pub fn zeros(n: usize) -> Self {
        EmiModel {
            r: DMatrix::zeros(n, n),
            emi_flux_linear: 0.0,
            effective_area: 0.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmiModel {
            r: &self.r * factor,
            emi_flux_linear: self.emi_flux_linear * factor,
            effective_area: self.effective_area,
        }
    }

    /// Smallest eigenvalue of `R`; fails when it is below
    /// `-1e-10 * trace(R) / N`.
    pub fn check_psd(&self) -> Result<f64> {
        let n = self.r.nrows();
        if n == 0 {
            return Ok(0.0);
        }
        let eig = SymmetricEigen::new(self.r.clone());
        let min = eig.eigenvalues.min();
        let tol = -1e-10 * self.r.trace() / n as f64;
        if min < tol {
            return Err(Error::NonPsdEmi { value: min });
        }
        Ok(min)
    }

    /// `v^T R conj(v)` together with `R v`. The form is real because `R` is
    /// real symmetric.
    pub(crate) fn quadratic_form(&self, v: &DVector<Complex64>) -> (f64, DVector<Complex64>) {
        let re = v.map(|z| z.re);
        let im = v.map(|z| z.im);
        let r_re = &self.r * &re;
        let r_im = &self.r * &im;
        let value = re.dot(&r_re) + im.dot(&r_im);
        let rv = DVector::from_fn(v.len(), |i, _| Complex64::new(r_re[i], r_im[i]));
        (value, rv)
    }
}

pub fn emi_correlation(cfg: &SceneConfig, grid: &RisGrid) -> EmiModel {
    let lambda = cfg.wavelength();
    let effective_area = cfg.element_len_x * cfg.element_len_y;
    let emi_flux_linear = dbw_to_watts(cfg.emi_flux_dbw_per_m2);
    let pe = emi_flux_linear * effective_area;
    let n = grid.len();
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = pe;
        let [ti, ui] = grid.element_centers[i];
        for j in (i + 1)..n {
            let [tj, uj] = grid.element_centers[j];
            let dist = ((ti - tj).powi(2) + (ui - uj).powi(2)).sqrt();
            let v = pe * sinc(2.0 * dist / lambda);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    EmiModel {
        r,
        emi_flux_linear,
        effective_area,
    }
}

/// Noise-plus-interference power `P_m = w^T H2^T R H2^* w^* + sigma2_m`.
pub fn noise_power(
    w: &PhaseProfile,
    channels: &ChannelSet,
    emi: &EmiModel,
    sigma2: f64,
    m: usize,
) -> Result<f64> {
    let anchor = channels
        .anchors
        .get(m)
        .ok_or_else(|| Error::Dimension(format!("anchor index {m} out of range")))?;
    let v = anchor.h2.component_mul(w.as_vector());
    let (quad, _) = emi.quadratic_form(&v);
    if quad < -1e-10 * sigma2 {
        return Err(Error::NonPsdEmi { value: quad });
    }
    Ok(quad.max(0.0) + sigma2)
}

/// A fully assembled, immutable scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub grid: RisGrid,
    pub geometry: GeometryTables,
    pub channels: ChannelSet,
    pub emi: EmiModel,
}

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let grid = build_grid(&config)?;
        let geometry = geometry(&config, &grid)?;
        let channels = channels(&config, &grid, &geometry)?;
        let emi = emi_correlation(&config, &grid);
        Ok(Scene {
            config,
            grid,
            geometry,
            channels,
            emi,
        })
    }

    pub fn element_count(&self) -> usize {
        self.grid.len()
    }

    pub fn anchor_count(&self) -> usize {
        self.channels.anchors.len()
    }

    pub fn wavelength(&self) -> f64 {
        self.config.wavelength()
    }

    pub fn wavenumber(&self) -> f64 {
        self.config.wavenumber()
    }

    /// Same scene with `sigma2` and `R` multiplied by `factor`.
    pub fn with_noise_scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.config.sigma2 {
            *s *= factor;
        }
        out.emi = self.emi.scaled(factor);
        out
    }

    pub fn noise_power(&self, w: &PhaseProfile, m: usize) -> Result<f64> {
        noise_power(w, &self.channels, &self.emi, self.config.sigma2[m], m)
    }

    /// Noiseless per-anchor amplitude `s_m / x` for an agent at `q`, with the
    /// path gains held at the values stored in the channel set.
    pub fn response_at(&self, q: &Vector3<f64>, w: &PhaseProfile) -> Vec<Complex64> {
        let gains: Vec<_> = self.channels.anchors.iter().map(|ch| (ch.alpha, ch.beta)).collect();
        self.response_with_gains(q, w.as_vector(), &gains)
    }

    /// `s_m / x` for an agent at `q` with explicit `(alpha_m, beta_m)` and
    /// any complex coefficient vector `w`.
    pub fn response_with_gains(
        &self,
        q: &Vector3<f64>,
        w: &DVector<Complex64>,
        gains: &[(Complex64, Complex64)],
    ) -> Vec<Complex64> {
        let k0 = self.wavenumber();
        let rho: Vec<f64> = self
            .grid
            .element_centers
            .iter()
            .map(|c| (q - Vector3::new(c[0], c[1], 0.0)).norm())
            .collect();
        self.config
            .anchor_positions
            .iter()
            .zip(gains)
            .enumerate()
            .map(|(m, (p, &(alpha, beta)))| {
                let ris: Complex64 = (0..rho.len())
                    .map(|i| w[i] * Complex64::from_polar(1.0, -k0 * (rho[i] + self.geometry.d[(m, i)])))
                    .sum();
                let r = (q - Vector3::from(*p)).norm();
                alpha * ris + beta * Complex64::from_polar(1.0, -k0 * r)
            })
            .collect()
    }

    /// One-screen summary used by `scene dump`.
    pub fn summary(&self) -> String {
        let g = &self.geometry;
        let mut out = String::new();
        out.push_str(&format!("N (elements)        : {}\n", self.element_count()));
        out.push_str(&format!("grid rows x cols    : {} x {}\n", self.grid.rows, self.grid.cols));
        out.push_str(&format!("M (anchors)         : {}\n", self.anchor_count()));
        out.push_str(&format!("pitch x, y (m)      : {:.6}, {:.6}\n", self.grid.pitch_x, self.grid.pitch_y));
        out.push_str(&format!("wavelength (m)      : {:.6e}\n", self.wavelength()));
        out.push_str(&format!(
            "rho min/mean/max (m): {:.6} / {:.6} / {:.6}\n",
            g.rho.min(),
            g.rho.mean(),
            g.rho.max()
        ));
        for m in 0..self.anchor_count() {
            let row = g.d.row(m);
            let ch = &self.channels.anchors[m];
            out.push_str(&format!(
                "anchor {m}: r = {:.6} m, d min/max = {:.6}/{:.6} m, |alpha| = {:.4e}, |beta| = {:.4e}, |zeta| = {:.4e}\n",
                g.r[m],
                row.min(),
                row.max(),
                ch.alpha.norm(),
                ch.beta.norm(),
                ch.zeta.norm()
            ));
        }
        out.push_str(&format!("EMI element power   : {:.6e} W\n", self.emi.element_power()));
        out
    }
}
