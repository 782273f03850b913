//! Complex circle manifold `{w in C^N : |w_n| = 1}`.
//!
//! The metric is the real inner product `Re<u, v> = Re(sum conj(u_n) v_n)`,
//! which makes [`project`] the orthogonal projection onto the tangent space.

use std::f64::consts::FRAC_PI_2;
use std::ops::Index;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Inverse retraction is refused once a phase difference reaches
/// `pi/2 - INJECTIVITY_MARGIN`.
pub const INJECTIVITY_MARGIN: f64 = 1e-6;

const RETRACT_MIN_MODULUS: f64 = 1e-14;

/// A point on the manifold. Construction always renormalizes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile(DVector<Complex64>);

impl PhaseProfile {
    /// Projects every entry onto the unit circle. Zero entries map to `1`.
    pub fn new(w: DVector<Complex64>) -> Self {
        PhaseProfile(w.map(|z| {
            let m = z.norm();
            if m > 0.0 {
                z / m
            } else {
                Complex64::new(1.0, 0.0)
            }
        }))
    }

    pub fn from_phases(phases: &[f64]) -> Self {
        PhaseProfile(DVector::from_iterator(
            phases.len(),
            phases.iter().map(|&p| Complex64::from_polar(1.0, p)),
        ))
    }

    pub fn ones(n: usize) -> Self {
        PhaseProfile(DVector::from_element(n, Complex64::new(1.0, 0.0)))
    }

    /// i.i.d. uniform phases.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let phases: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        Self::from_phases(&phases)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<Complex64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<Complex64> {
        self.0
    }

    pub fn phases(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.arg()).collect()
    }

    /// Largest deviation `||w_n| - 1|`.
    pub fn modulus_error(&self) -> f64 {
        self.0.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// CSV with columns `index,re,im,phase_rad`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,re,im,phase_rad\n");
        for (i, z) in self.0.iter().enumerate() {
            out.push_str(&format!("{i},{:e},{:e},{:e}\n", z.re, z.im, z.arg()));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("index") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 3 {
                return Err(Error::Dimension(format!("line {}: expected index,re,im", line_no + 1)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Dimension(format!("line {}: {e}", line_no + 1)))
            };
            values.push(Complex64::new(parse(cols[1])?, parse(cols[2])?));
        }
        Ok(PhaseProfile::new(DVector::from_vec(values)))
    }
}

impl Index<usize> for PhaseProfile {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

/// A tangent vector together with its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    pub base: PhaseProfile,
    pub v: DVector<Complex64>,
}

impl TangentVec {
    pub fn zero(base: &PhaseProfile) -> Self {
        TangentVec {
            base: base.clone(),
            v: DVector::zeros(base.len()),
        }
    }

    pub fn norm(&self) -> f64 {
        self.v.norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        TangentVec {
            base: self.base.clone(),
            v: &self.v * Complex64::new(s, 0.0),
        }
    }

    /// Largest `|Re(v_n conj(w_n))|`.
    pub fn tangency_error(&self) -> f64 {
        self.v
            .iter()
            .zip(self.base.as_vector().iter())
            .map(|(v, w)| (v * w.conj()).re.abs())
            .fold(0.0, f64::max)
    }
}

/// `Re<u, v>`.
pub fn inner(u: &DVector<Complex64>, v: &DVector<Complex64>) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

/// `v - Re{v .* conj(w)} .* w`.
pub fn project(w: &PhaseProfile, v: &DVector<Complex64>) -> TangentVec {
    let out = v.zip_map(w.as_vector(), |vi, wi| vi - wi * (vi * wi.conj()).re);
    TangentVec {
        base: w.clone(),
        v: out,
    }
}

/// Riemannian gradient from the Wirtinger gradient `d f / d conj(w)`.
pub fn riemannian_grad(w: &PhaseProfile, egrad: &DVector<Complex64>) -> TangentVec {
    project(w, egrad)
}

/// `(w + v) ./ |w + v|`.
pub fn retract(w: &PhaseProfile, v: &DVector<Complex64>) -> Result<PhaseProfile> {
    if v.len() != w.len() {
        return Err(Error::Dimension(format!("retract: {} vs {}", w.len(), v.len())));
    }
    let mut out = DVector::zeros(w.len());
    for i in 0..w.len() {
        let z = w[i] + v[i];
        let m = z.norm();
        if m < RETRACT_MIN_MODULUS {
            return Err(Error::ZeroDenominator { index: i, modulus: m });
        }
        out[i] = z / m;
    }
    Ok(PhaseProfile(out))
}

/// Phase of `w_next` relative to `w`, wrapped to `(-pi, pi]`.
pub fn phase_difference(w: &PhaseProfile, w_next: &PhaseProfile) -> Vec<f64> {
    w.as_vector()
        .iter()
        .zip(w_next.as_vector().iter())
        .map(|(a, b)| (b * a.conj()).arg())
        .collect()
}

/// `j w .* tan(arg(w_next) - arg(w))`, the tangent vector that [`retract`]
/// maps back onto `w_next`.
pub fn inverse_retract(w: &PhaseProfile, w_next: &PhaseProfile) -> Result<TangentVec> {
    if w.len() != w_next.len() {
        return Err(Error::Dimension(format!(
            "inverse_retract: {} vs {}",
            w.len(),
            w_next.len()
        )));
    }
    let limit = FRAC_PI_2 - INJECTIVITY_MARGIN;
    let mut v = DVector::zeros(w.len());
    for (i, delta) in phase_difference(w, w_next).into_iter().enumerate() {
        if delta.abs() >= limit {
            return Err(Error::OutsideInjectivity { index: i, delta });
        }
        v[i] = Complex64::i() * w[i] * delta.tan();
    }
    Ok(TangentVec { base: w.clone(), v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn project_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = PhaseProfile::random(8, &mut rng);
        let t = project(&w, w.as_vector());
        assert!(t.norm() < 1e-15);

        let jw = w.as_vector() * Complex64::i();
        let t = project(&w, &jw);
        assert!((&t.v - &jw).norm() < 1e-15);

        let ones = PhaseProfile::ones(3);
        let v = DVector::from_vec(vec![c(1.5, -2.0), c(-0.3, 0.7), c(0.0, 4.0)]);
        let t = project(&ones, &v);
        for i in 0..3 {
            assert_eq!(t.v[i], c(0.0, v[i].im));
        }
    }

    #[test]
    fn radial_gradient_vanishes() {
        let w = PhaseProfile::from_phases(&[0.3, -1.2, 2.9]);
        let g = riemannian_grad(&w, w.as_vector());
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn retract_examples() {
        let w = PhaseProfile::ones(1);
        let out = retract(&w, &DVector::from_element(1, Complex64::i())).unwrap();
        let expected = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
        assert!((out[0] - expected).norm() < 1e-15);

        let w = PhaseProfile::from_phases(&[0.1, 0.2]);
        assert_eq!(retract(&w, &DVector::zeros(2)).unwrap(), w);
    }

    #[test]
    fn retract_rejects_cancellation() {
        let w = PhaseProfile::ones(2);
        let v = DVector::from_vec(vec![c(0.0, 0.0), c(-1.0, 0.0)]);
        assert!(matches!(retract(&w, &v), Err(Error::ZeroDenominator { index: 1, .. })));
    }

    #[test]
    fn retract_angle_is_atan_of_tangent_length() {
        let w = PhaseProfile::from_phases(&[0.4, -2.0, 3.0]);
        let s = [0.3, -0.7, 0.95];
        let v = DVector::from_fn(3, |i, _| Complex64::i() * w[i] * s[i]);
        let out = retract(&w, &v).unwrap();
        let d = phase_difference(&w, &out);
        for i in 0..3 {
            assert!((d[i] - s[i].atan()).abs() < 1e-14);
        }
    }

    #[test]
    fn inverse_retract_examples() {
        let w = PhaseProfile::from_phases(&[0.5, 1.5]);
        assert!(inverse_retract(&w, &w).unwrap().norm() < 1e-15);

        let w = PhaseProfile::ones(1);
        let next = PhaseProfile::from_phases(&[std::f64::consts::FRAC_PI_4]);
        let v = inverse_retract(&w, &next).unwrap();
        assert!((v.v[0] - Complex64::i()).norm() < 1e-15);
    }

    #[test]
    fn inverse_retract_guards_quarter_turn() {
        let w = PhaseProfile::ones(2);
        let next = PhaseProfile::from_phases(&[0.0, FRAC_PI_2]);
        assert!(matches!(
            inverse_retract(&w, &next),
            Err(Error::OutsideInjectivity { index: 1, .. })
        ));
        // wrapped difference: 3pi/2 is -pi/2
        let next = PhaseProfile::from_phases(&[0.0, 1.5 * std::f64::consts::PI]);
        assert!(inverse_retract(&w, &next).is_err());
    }

    #[test]
    fn local_rigidity_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = PhaseProfile::random(20, &mut rng);
        let amb = DVector::from_fn(20, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let v = project(&w, &amb).v;
        let err = |t: f64| {
            let step = &v * c(t, 0.0);
            (retract(&w, &step).unwrap().as_vector() - (w.as_vector() + step)).norm()
        };
        let e = [err(1e-2), err(1e-3), err(1e-4)];
        for k in 0..2 {
            let ratio = e[k] / e[k + 1];
            assert!((ratio - 100.0).abs() < 5.0, "ratio {ratio}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let w = PhaseProfile::from_phases(&[0.1, -3.0, 2.5]);
        let back = PhaseProfile::from_csv(&w.to_csv()).unwrap();
        assert!((back.as_vector() - w.as_vector()).norm() < 1e-15);
    }
}
