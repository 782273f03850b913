//! Fisher information over `eta = [q; Re(gamma); Im(gamma)]`, the effective
//! position FIM obtained by Schur complement, the CRB objective and its
//! Wirtinger gradient with respect to `conj(w)`.
//!
//! Parameter layout (length `3 + 4M`):
//!
//! ```text
//! [q1 q2 q3 | Re a_1..a_M | Re b_1..b_M | Im a_1..a_M | Im b_1..b_M]
//! ```
//!
//! With a constant pilot every derivative `d s_m / d eta_i` is a complex
//! scalar times `x`, so the FIM is computed from scalar coefficients and the
//! pilot energy `E_x` only.
//!
//! The gain block carries an additive side-information term (see
//! [`SceneConfig::gain_prior_rel_std`](crate::scene::SceneConfig)): without
//! it the nuisance block is rank deficient for every scene, because each
//! anchor observes one complex number but carries four real gain unknowns.

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_condition, MAX_CONDITION};
use crate::manifold::PhaseProfile;
use crate::scene::Scene;

/// Which noise power enters the FIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `P_m` includes the EMI quadratic form.
    #[default]
    EmiAware,
    /// `P_m = sigma2_m`.
    ThermalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Differentiates every FIM block, including the Schur correction.
    #[default]
    Exact,
    /// Differentiates only `J_qq` (ignores the w-dependence of the Schur
    /// correction).
    #[serde(alias = "paper")]
    QqOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainPart {
    ReAlpha,
    ReBeta,
    ImAlpha,
    ImBeta,
}

/// Index of a gain component of anchor `m` inside `eta`.
pub fn param_index(anchors: usize, m: usize, part: GainPart) -> usize {
    let block = match part {
        GainPart::ReAlpha => 0,
        GainPart::ReBeta => 1,
        GainPart::ImAlpha => 2,
        GainPart::ImBeta => 3,
    };
    3 + block * anchors + m
}

pub fn param_count(anchors: usize) -> usize {
    3 + 4 * anchors
}

/// w-independent sensitivity tables of one anchor.
#[derive(Debug, Clone)]
struct AnchorTables {
    /// `exp(-j k0 (rho_n + d_mn))`.
    phase: DVector<Complex64>,
    /// `A_mni`, N x 3.
    a: DMatrix<Complex64>,
    /// `c_mi`.
    c: [Complex64; 3],
    /// `exp(-j k0 r_m)`.
    g_beta: Complex64,
}

/// Derivative coefficients of one anchor's signal at a given `w`.
#[derive(Debug, Clone)]
pub struct AnchorJacobian<'a> {
    /// `A_mni` (N x 3).
    pub a: &'a DMatrix<Complex64>,
    /// `c_mi`.
    pub c: [Complex64; 3],
    /// `sum_n w_n exp(-j k0 (rho_n + d_mn))`.
    pub g_alpha: Complex64,
    /// `exp(-j k0 r_m)`.
    pub g_beta: Complex64,
    /// `sum_n w_n A_mni + c_mi`, the coefficient of `d s_m / d q_i`.
    pub dq: [Complex64; 3],
}

impl AnchorJacobian<'_> {
    /// The seven non-zero derivative coefficients, ordered
    /// `[q1, q2, q3, Re a, Re b, Im a, Im b]`.
    pub fn coefficients(&self) -> [Complex64; 7] {
        let j = Complex64::i();
        [
            self.dq[0],
            self.dq[1],
            self.dq[2],
            self.g_alpha,
            self.g_beta,
            j * self.g_alpha,
            j * self.g_beta,
        ]
    }
}

/// Scalar form of `d s_m / d eta`; the T-vector is the coefficient times the
/// pilot `x`.
#[derive(Debug, Clone)]
pub struct SignalJacobian<'a> {
    pub pilot_energy: f64,
    pub anchors: Vec<AnchorJacobian<'a>>,
}

impl SignalJacobian<'_> {
    /// `eta` indices matching [`AnchorJacobian::coefficients`].
    pub fn indices(&self, m: usize) -> [usize; 7] {
        let mm = self.anchors.len();
        [
            0,
            1,
            2,
            param_index(mm, m, GainPart::ReAlpha),
            param_index(mm, m, GainPart::ReBeta),
            param_index(mm, m, GainPart::ImAlpha),
            param_index(mm, m, GainPart::ImBeta),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct FimBundle {
    /// Total information `J_data + prior`, `(3+4M)^2`.
    pub j: DMatrix<f64>,
    /// Data part `sum_m J_m`.
    pub j_data: DMatrix<f64>,
    /// Square-root information `A` with `A^T A = J`, columns in `eta` order.
    pub sqrt_info: DMatrix<f64>,
    /// Diagonal of the gain side-information term (length `4M`).
    pub prior: DVector<f64>,
    pub j_qq: Matrix3<f64>,
    pub j_qg: DMatrix<f64>,
    pub j_gg: DMatrix<f64>,
    /// Effective FIM `J_qq - J_qg J_gg^-1 J_qg^T`.
    pub j_f: Matrix3<f64>,
    pub j_f_inv: Matrix3<f64>,
    /// `tr(J_f^-1)`.
    pub crb: f64,
    pub noise_powers: Vec<f64>,
    /// `J_gg^-1 J_qg^T`, kept for the gradient.
    gain_solve: DMatrix<f64>,
}

impl FimBundle {
    pub fn rcrb(&self) -> f64 {
        self.crb.sqrt()
    }
}

/// Per-anchor noise power and, when EMI-aware, `d P_m / d conj(w)`.
struct NoiseTerms {
    power: f64,
    grad: Option<DVector<Complex64>>,
}

/// CRB objective of one scene.
#[derive(Debug, Clone)]
pub struct CrbProblem<'s> {
    scene: &'s Scene,
    tables: Vec<AnchorTables>,
    prior: DVector<f64>,
    noise: NoiseModel,
    gradient_mode: GradientMode,
}

impl<'s> CrbProblem<'s> {
    pub fn new(scene: &'s Scene, noise: NoiseModel) -> Result<Self> {
        let k0 = scene.wavenumber();
        let g = &scene.geometry;
        let n = scene.element_count();
        let mm = scene.anchor_count();
        let minus_jk0 = Complex64::new(0.0, -k0);
        let mut tables = Vec::with_capacity(mm);
        for (m, ch) in scene.channels.anchors.iter().enumerate() {
            let phase = DVector::from_fn(n, |i, _| {
                Complex64::from_polar(1.0, -k0 * (g.rho[i] + g.d[(m, i)]))
            });
            let a = DMatrix::from_fn(n, 3, |i, k| minus_jk0 * ch.alpha * phase[i] * g.drho_dq[(i, k)]);
            let g_beta = Complex64::from_polar(1.0, -k0 * g.r[m]);
            let c = [0, 1, 2].map(|k| minus_jk0 * ch.beta * g_beta * g.dr_dq[(m, k)]);
            tables.push(AnchorTables { phase, a, c, g_beta });
        }

        let kappa = scene.config.gain_prior_rel_std;
        let mut prior = DVector::zeros(4 * mm);
        if kappa > 0.0 {
            for (m, ch) in scene.channels.anchors.iter().enumerate() {
                for (gain, parts) in [
                    (ch.alpha, [GainPart::ReAlpha, GainPart::ImAlpha]),
                    (ch.beta, [GainPart::ReBeta, GainPart::ImBeta]),
                ] {
                    let std = kappa * gain.norm();
                    if std <= 0.0 {
                        return Err(Error::config(format!(
                            "anchor {m}: zero path gain cannot carry a relative gain prior"
                        )));
                    }
                    for p in parts {
                        prior[param_index(mm, m, p) - 3] = 2.0 / (std * std);
                    }
                }
            }
        }

        Ok(CrbProblem {
            scene,
            tables,
            prior,
            noise,
            gradient_mode: GradientMode::Exact,
        })
    }

    pub fn with_gradient_mode(mut self, mode: GradientMode) -> Self {
        self.gradient_mode = mode;
        self
    }

    pub fn scene(&self) -> &'s Scene {
        self.scene
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.noise
    }

    pub fn gradient_mode(&self) -> GradientMode {
        self.gradient_mode
    }

    pub fn element_count(&self) -> usize {
        self.scene.element_count()
    }

    fn check_len(&self, w: &DVector<Complex64>) -> Result<()> {
        if w.len() != self.scene.element_count() {
            return Err(Error::Dimension(format!(
                "coefficient vector has {} entries, scene has {} elements",
                w.len(),
                self.scene.element_count()
            )));
        }
        Ok(())
    }

    /// Derivative coefficients of every anchor's signal. Accepts any complex
    /// vector (not only unit-modulus ones), so `w = 0` can be probed.
    pub fn signal_jacobian_raw(&self, w: &DVector<Complex64>) -> SignalJacobian<'_> {
        let anchors = self
            .tables
            .iter()
            .map(|t| {
                let g_alpha: Complex64 = w.iter().zip(t.phase.iter()).map(|(a, b)| a * b).sum();
                let aw = t.a.transpose() * w;
                AnchorJacobian {
                    a: &t.a,
                    c: t.c,
                    g_alpha,
                    g_beta: t.g_beta,
                    dq: [aw[0] + t.c[0], aw[1] + t.c[1], aw[2] + t.c[2]],
                }
            })
            .collect();
        SignalJacobian {
            pilot_energy: self.scene.config.pilot_energy(),
            anchors,
        }
    }

    pub fn signal_jacobian(&self, w: &PhaseProfile) -> SignalJacobian<'_> {
        self.signal_jacobian_raw(w.as_vector())
    }

    fn noise_terms(&self, w: &DVector<Complex64>, with_grad: bool) -> Result<Vec<NoiseTerms>> {
        let sigma2 = &self.scene.config.sigma2;
        match self.noise {
            NoiseModel::ThermalOnly => Ok(sigma2.iter().map(|&s| NoiseTerms { power: s, grad: None }).collect()),
            NoiseModel::EmiAware => self
                .scene
                .channels
                .anchors
                .iter()
                .zip(sigma2)
                .map(|(ch, &s)| {
                    let v = ch.h2.component_mul(w);
                    let (quad, rv) = self.scene.emi.quadratic_form(&v);
                    if quad < -1e-10 * s {
                        return Err(Error::NonPsdEmi { value: quad });
                    }
                    let grad = with_grad.then(|| ch.h2.zip_map(&rv, |h, r| h.conj() * r));
                    Ok(NoiseTerms {
                        power: quad.max(0.0) + s,
                        grad,
                    })
                })
                .collect(),
        }
    }

    fn assemble(&self, jac: &SignalJacobian<'_>, powers: Vec<f64>) -> Result<FimBundle> {
        let mm = jac.anchors.len();
        let dim = param_count(mm);
        let mut j_data = DMatrix::zeros(dim, dim);
        for (m, anchor) in jac.anchors.iter().enumerate() {
            let scale = 2.0 * jac.pilot_energy / powers[m];
            let u = anchor.coefficients();
            let idx = jac.indices(m);
            for a in 0..7 {
                for b in 0..7 {
                    j_data[(idx[a], idx[b])] += scale * (u[a].conj() * u[b]).re;
                }
            }
        }
        let mut j = j_data.clone();
        for (k, p) in self.prior.iter().enumerate() {
            j[(3 + k, 3 + k)] += p;
        }

        let j_qq = j.fixed_view::<3, 3>(0, 0).into_owned();
        let j_qg = j.view((0, 3), (3, 4 * mm)).into_owned();
        let j_gg = j.view((3, 3), (4 * mm, 4 * mm)).into_owned();
        check_condition(&j_gg, "J_gamma_gamma", MAX_CONDITION)?;

        // Square-root information: J = A^T A with columns ordered
        // [gains | q]. QR of A gives J_f = R_qq^T R_qq and
        // J_gg^-1 J_gq = R_gg^-1 R_gq without forming the cancelling
        // difference J_qq - J_qg J_gg^-1 J_gq.
        let ng = 4 * mm;
        let col = |k: usize| if k < 3 { ng + k } else { k - 3 };
        let mut a = DMatrix::zeros((2 * mm + ng).max(dim), dim);
        for (m, anchor) in jac.anchors.iter().enumerate() {
            let s = (2.0 * jac.pilot_energy / powers[m]).sqrt();
            let u = anchor.coefficients();
            for (k, &i) in jac.indices(m).iter().enumerate() {
                a[(2 * m, col(i))] += s * u[k].re;
                a[(2 * m + 1, col(i))] += s * u[k].im;
            }
        }
        for (k, p) in self.prior.iter().enumerate() {
            a[(2 * mm + k, k)] = p.sqrt();
        }
        let sqrt_info = DMatrix::from_fn(a.nrows(), dim, |i, k| a[(i, col(k))]);
        let r = a.qr().r();
        let r_gg = r.view((0, 0), (ng, ng)).into_owned();
        let r_gq = r.view((0, ng), (ng, 3)).into_owned();
        let r_qq = Matrix3::from_fn(|i, k| r[(ng + i, ng + k)]);
        let gain_solve = r_gg
            .solve_upper_triangular(&r_gq)
            .ok_or_else(|| Error::DegenerateGeometry {
                block: "J_gamma_gamma",
                condition: f64::INFINITY,
                matrix: j_gg.clone(),
            })?;
        let j_f = r_qq.transpose() * r_qq;
        let j_f_dyn = DMatrix::from_iterator(3, 3, j_f.iter().copied());
        check_condition(&j_f_dyn, "J_f", MAX_CONDITION)?;
        let r_qq_inv = r_qq.try_inverse().ok_or_else(|| Error::DegenerateGeometry {
            block: "J_f",
            condition: f64::INFINITY,
            matrix: j_f_dyn.clone(),
        })?;
        let j_f_inv = r_qq_inv * r_qq_inv.transpose();
        let crb = j_f_inv.trace();
        Ok(FimBundle {
            j,
            j_data,
            sqrt_info,
            prior: self.prior.clone(),
            j_qq,
            j_qg,
            j_gg,
            j_f,
            j_f_inv,
            crb,
            noise_powers: powers,
            gain_solve,
        })
    }

    pub fn fim(&self, w: &PhaseProfile) -> Result<FimBundle> {
        self.fim_ambient(w.as_vector())
    }

    /// FIM at any complex coefficient vector, unit modulus or not.
    pub fn fim_ambient(&self, w: &DVector<Complex64>) -> Result<FimBundle> {
        self.check_len(w)?;
        let powers = self.noise_terms(w, false)?.into_iter().map(|t| t.power).collect();
        self.assemble(&self.signal_jacobian_raw(w), powers)
    }

    pub fn crb_ambient(&self, w: &DVector<Complex64>) -> Result<f64> {
        Ok(self.fim_ambient(w)?.crb)
    }

    /// `tr(J_f^-1)`.
    pub fn crb(&self, w: &PhaseProfile) -> Result<f64> {
        Ok(self.fim(w)?.crb)
    }

    pub fn rcrb(&self, w: &PhaseProfile) -> Result<f64> {
        Ok(self.crb(w)?.sqrt())
    }

    /// CRB value and `d f / d conj(w)` in the configured gradient mode.
    pub fn value_and_gradient(&self, w: &PhaseProfile) -> Result<(f64, DVector<Complex64>)> {
        self.wirtinger_gradient(w, self.gradient_mode)
    }

    /// CRB value and its Wirtinger gradient `d f / d conj(w)`.
    ///
    /// With `W = Y Y^T`, `Y = J^-1 E` (E selects the position coordinates),
    /// `d f = -<W, dJ>`, so for each anchor
    /// `d f / d conj(w_g) -= s_m d(u^H W u)/d conj(w_g) - (s_m / P_m) u^H W u d P_m / d conj(w_g)`
    /// with `s_m = 2 E_x / P_m`. `QqOnly` keeps only the `J_qq` block of
    /// `W`, i.e. `W = diag(J_f^-2, 0)`.
    pub fn wirtinger_gradient(&self, w: &PhaseProfile, mode: GradientMode) -> Result<(f64, DVector<Complex64>)> {
        self.check_len(w.as_vector())?;
        let noise = self.noise_terms(w.as_vector(), true)?;
        let jac = self.signal_jacobian(w);
        let bundle = self.assemble(&jac, noise.iter().map(|t| t.power).collect())?;

        let mm = jac.anchors.len();
        let dim = param_count(mm);
        let jf_inv = &bundle.j_f_inv;
        let mut y = DMatrix::<f64>::zeros(dim, 3);
        y.fixed_view_mut::<3, 3>(0, 0).copy_from(jf_inv);
        if mode == GradientMode::Exact {
            let lower = -(&bundle.gain_solve * DMatrix::from_iterator(3, 3, jf_inv.iter().copied()));
            y.view_mut((3, 0), (4 * mm, 3)).copy_from(&lower);
        }

        let n = w.len();
        let mut grad = DVector::<Complex64>::zeros(n);
        for (m, anchor) in jac.anchors.iter().enumerate() {
            let power = noise[m].power;
            let scale = 2.0 * jac.pilot_energy / power;
            let u = anchor.coefficients();
            let idx = jac.indices(m);
            // t = Y_sub^T u, Wu = Y_sub t
            let mut t = [Complex64::new(0.0, 0.0); 3];
            for a in 0..7 {
                for (k, tk) in t.iter_mut().enumerate() {
                    *tk += u[a] * y[(idx[a], k)];
                }
            }
            let wu: [Complex64; 7] = std::array::from_fn(|a| (0..3).map(|k| t[k] * y[(idx[a], k)]).sum());
            let phi: f64 = t.iter().map(|z| z.norm_sqr()).sum();

            let tables = &self.tables[m];
            let alpha_coeff = wu[3] - Complex64::i() * wu[5];
            for g in 0..n {
                let mut term = tables.phase[g].conj() * alpha_coeff;
                for (k, wk) in wu.iter().take(3).enumerate() {
                    term += tables.a[(g, k)].conj() * wk;
                }
                grad[g] -= term * scale;
            }
            if let Some(dp) = &noise[m].grad {
                let c = scale / power * phi;
                for g in 0..n {
                    grad[g] += dp[g] * c;
                }
            }
        }
        Ok((bundle.crb, grad))
    }
}

/// Convenience wrapper: EMI-aware FIM of `w` in `scene`.
pub fn fim(w: &PhaseProfile, scene: &Scene, noise: NoiseModel) -> Result<FimBundle> {
    CrbProblem::new(scene, noise)?.fim(w)
}

pub fn crb(w: &PhaseProfile, scene: &Scene, noise: NoiseModel) -> Result<f64> {
    CrbProblem::new(scene, noise)?.crb(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{PathlossModel, SceneConfig};

    fn small_scene() -> Scene {
        let mut cfg = SceneConfig::reference();
        cfg.ris_rows = 3;
        cfg.ris_cols = 2;
        cfg.emi_flux_dbw_per_m2 = 5.0;
        Scene::new(cfg).unwrap()
    }

    #[test]
    fn zero_w_leaves_direct_path_only() {
        let scene = small_scene();
        let p = CrbProblem::new(&scene, NoiseModel::EmiAware).unwrap();
        let jac = p.signal_jacobian_raw(&DVector::zeros(scene.element_count()));
        for a in &jac.anchors {
            assert_eq!(a.dq, a.c);
            assert_eq!(a.g_alpha, Complex64::new(0.0, 0.0));
            assert!((a.g_beta.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn a_coefficients_rebuild_from_scene() {
        let scene = small_scene();
        let p = CrbProblem::new(&scene, NoiseModel::EmiAware).unwrap();
        let jac = p.signal_jacobian(&PhaseProfile::ones(scene.element_count()));
        let k0 = scene.wavenumber();
        let g = &scene.geometry;
        for (m, a) in jac.anchors.iter().enumerate() {
            let alpha = scene.channels.anchors[m].alpha;
            for n in 0..scene.element_count() {
                for i in 0..3 {
                    let expect = Complex64::new(0.0, -k0)
                        * alpha
                        * Complex64::from_polar(1.0, -k0 * (g.rho[n] + g.d[(m, n)]))
                        * g.drho_dq[(n, i)];
                    assert!((a.a[(n, i)] - expect).norm() <= 1e-14 * expect.norm().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn gain_block_is_block_diagonal() {
        let scene = small_scene();
        let p = CrbProblem::new(&scene, NoiseModel::EmiAware).unwrap();
        let b = p.fim(&PhaseProfile::ones(scene.element_count())).unwrap();
        let mm = scene.anchor_count();
        for m in 0..mm {
            for m2 in 0..mm {
                if m == m2 {
                    continue;
                }
                for p1 in [GainPart::ReAlpha, GainPart::ReBeta, GainPart::ImAlpha, GainPart::ImBeta] {
                    for p2 in [GainPart::ReAlpha, GainPart::ReBeta, GainPart::ImAlpha, GainPart::ImBeta] {
                        assert_eq!(b.j[(param_index(mm, m, p1), param_index(mm, m2, p2))], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn without_gain_prior_the_fim_is_degenerate() {
        let mut cfg = small_scene().config;
        cfg.gain_prior_rel_std = 0.0;
        let scene = Scene::new(cfg).unwrap();
        let p = CrbProblem::new(&scene, NoiseModel::EmiAware).unwrap();
        let err = p.fim(&PhaseProfile::ones(scene.element_count())).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { block: "J_gamma_gamma", .. }));
    }

    #[test]
    fn unit_gain_scene_builds() {
        let mut cfg = small_scene().config;
        cfg.pathloss_model = PathlossModel::UnitGain;
        let scene = Scene::new(cfg).unwrap();
        let p = CrbProblem::new(&scene, NoiseModel::ThermalOnly).unwrap();
        let crb = p.crb(&PhaseProfile::ones(scene.element_count())).unwrap();
        assert!(crb.is_finite() && crb > 0.0);
    }
}
