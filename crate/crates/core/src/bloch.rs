//! Closed-form single-qubit math for ensemble tokens.
//!
//! A token is a pure state on the Bloch sphere, read out through a diagonal
//! observable with eigenvalues `n0` (for `|0>`) and `n1` (for `|1>`). All
//! functions here are deterministic; the stochastic side lives in
//! [`crate::measurement`].

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Tolerance applied before clamping `arccos` arguments into `[-1, 1]`.
pub const ARCCOS_TOLERANCE: f64 = 1e-9;

/// A pure state `(theta, phi)` on the Bloch sphere.
///
/// `theta` is validated to lie in `[0, pi]`; `phi` is wrapped into `[0, 2pi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAngles", into = "RawAngles")]
pub struct BlochAngles {
    theta: f64,
    phi: f64,
}

#[derive(Serialize, Deserialize)]
struct RawAngles {
    theta: f64,
    phi: f64,
}

impl TryFrom<RawAngles> for BlochAngles {
    type Error = Error;
    fn try_from(raw: RawAngles) -> Result<Self> {
        BlochAngles::new(raw.theta, raw.phi)
    }
}

impl From<BlochAngles> for RawAngles {
    fn from(a: BlochAngles) -> Self {
        RawAngles {
            theta: a.theta,
            phi: a.phi,
        }
    }
}

impl BlochAngles {
    pub const NORTH: BlochAngles = BlochAngles { theta: 0.0, phi: 0.0 };
    pub const SOUTH: BlochAngles = BlochAngles { theta: PI, phi: 0.0 };

    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !(0.0..=PI).contains(&theta) {
            return Err(Error::InvalidAngle(format!("theta = {theta} is outside [0, pi]")));
        }
        if !phi.is_finite() {
            return Err(Error::InvalidAngle(format!("phi = {phi} is not finite")));
        }
        Ok(Self {
            theta,
            phi: wrap_phi(phi),
        })
    }

    /// Builds angles from `z = cos(theta)`.
    pub fn from_z(z: f64, phi: f64) -> Result<Self> {
        if !z.is_finite() || !(-1.0..=1.0).contains(&z) {
            return Err(Error::InvalidAngle(format!("z = {z} is outside [-1, 1]")));
        }
        Self::new(z.acos(), phi)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn z(&self) -> f64 {
        self.theta.cos()
    }

    /// Overlap term `cos(ta)cos(tb) + sin(ta)sin(tb)cos(pb - pa)`: the cosine
    /// of the angle between the two Bloch vectors.
    pub fn overlap(&self, other: &BlochAngles) -> f64 {
        self.theta.cos() * other.theta.cos()
            + self.theta.sin() * other.theta.sin() * (other.phi - self.phi).cos()
    }
}

/// Wraps an azimuth into `[0, 2pi)`.
pub fn wrap_phi(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// The readout observable: eigenvalues `n0`, `n1` and experimental noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableModel {
    pub n0: f64,
    pub n1: f64,
    pub sigma_exp: f64,
}

impl ObservableModel {
    pub fn new(n0: f64, n1: f64, sigma_exp: f64) -> Result<Self> {
        if !(n0.is_finite() && n1.is_finite() && sigma_exp.is_finite()) {
            return Err(Error::InvalidModel("parameters must be finite".into()));
        }
        if n0 < 0.0 || n1 < 0.0 {
            return Err(Error::InvalidModel(format!("eigenvalues must be >= 0 (n0 = {n0}, n1 = {n1})")));
        }
        if n0 + n1 <= 0.0 {
            return Err(Error::InvalidModel("n0 + n1 must be positive".into()));
        }
        if sigma_exp < 0.0 {
            return Err(Error::InvalidModel(format!("sigma_exp = {sigma_exp} is negative")));
        }
        Ok(Self { n0, n1, sigma_exp })
    }

    /// Model with total count scale `scale = n0 + n1`, contrast `c` and
    /// experimental noise given relative to the scale.
    pub fn from_contrast(c: f64, sigma_exp_norm: f64, scale: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&c) {
            return Err(Error::InvalidModel(format!("contrast {c} is outside [-1, 1]")));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidModel(format!("scale {scale} must be positive")));
        }
        Self::new(
            scale * (1.0 - c) / 2.0,
            scale * (1.0 + c) / 2.0,
            sigma_exp_norm * scale,
        )
    }

    pub fn scale(&self) -> f64 {
        self.n0 + self.n1
    }

    /// Normalized contrast `(n1 - n0) / (n0 + n1)`; negative when `|0>` is bright.
    pub fn contrast(&self) -> f64 {
        (self.n1 - self.n0) / self.scale()
    }

    pub fn sigma_exp_norm(&self) -> f64 {
        self.sigma_exp / self.scale()
    }

    /// Whether `|1>` is the bright state. Decides how counts map to the
    /// fraction of qubits found in `|0>`.
    pub fn one_is_bright(&self) -> bool {
        self.n1 >= self.n0
    }
}

/// `<N> = n0 cos^2(theta/2) + n1 sin^2(theta/2)`. Independent of `phi`.
pub fn expectation_n(model: &ObservableModel, state: &BlochAngles) -> f64 {
    let (p0, p1) = populations(state);
    model.n0 * p0 + model.n1 * p1
}

fn populations(state: &BlochAngles) -> (f64, f64) {
    let half = 0.5 * state.theta;
    let c = half.cos();
    let s = half.sin();
    (c * c, s * s)
}

/// The three variance contributions to a single readout of the observable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UncertaintyComponents {
    /// Projection noise `<N^2> - <N>^2`.
    pub quantum: f64,
    /// Poissonian counting noise, equal to `<N>`.
    pub shot: f64,
    pub experimental: f64,
}

impl UncertaintyComponents {
    pub fn total_variance(&self) -> f64 {
        self.quantum + self.shot + self.experimental
    }
}

pub fn uncertainty_components(model: &ObservableModel, state: &BlochAngles) -> UncertaintyComponents {
    let (p0, p1) = populations(state);
    let mean = model.n0 * p0 + model.n1 * p1;
    // p0 p1 (n1 - n0)^2 is <N^2> - <N>^2 without the cancellation.
    let quantum = p0 * p1 * (model.n1 - model.n0).powi(2);
    UncertaintyComponents {
        quantum,
        shot: mean,
        experimental: model.sigma_exp * model.sigma_exp,
    }
}

/// Total uncertainty `sigma_N`: projection, shot and experimental noise
/// added in quadrature.
pub fn total_uncertainty(model: &ObservableModel, state: &BlochAngles) -> f64 {
    uncertainty_components(model, state).total_variance().sqrt()
}

/// Fraction of qubits found in `|0>` when a token prepared at `bank` is
/// unrotated along `attack` and read with contrast `c`:
/// `(1 + c * overlap) / 2`.
///
/// Symmetric in its two angle arguments; with `attack` replaced by forged
/// angles it gives the bank's reading of a forged token.
pub fn attacker_fraction(c: f64, bank: &BlochAngles, attack: &BlochAngles) -> f64 {
    debug_assert!(c.abs() <= 1.0);
    0.5 * (1.0 + c * bank.overlap(attack))
}

const SPHERE_RULE_POINTS: usize = 32;

/// Average of [`attacker_fraction`] over bank states drawn uniformly from the
/// sphere, by a product Gauss-Legendre rule with measure
/// `sin(theta)/2 dtheta dphi / 2pi`. Always 1/2 up to rounding.
pub fn mean_attacker_fraction(c: f64, attack: &BlochAngles) -> f64 {
    let rule = GaussLegendre::new(SPHERE_RULE_POINTS);
    let phi_nodes: Vec<(f64, f64)> = rule.mapped(0.0, TAU).collect();
    let mut total = 0.0;
    for (theta, wt) in rule.mapped(0.0, PI) {
        let sin_t = theta.sin();
        let mut ring = 0.0;
        for &(phi, wp) in &phi_nodes {
            // Node angles are in range by construction.
            let bank = BlochAngles { theta, phi };
            ring += wp * attacker_fraction(c, &bank, attack);
        }
        total += wt * 0.5 * sin_t * ring / TAU;
    }
    total
}

/// Closed interval of admissible `z_f = cos(theta_f)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZInterval {
    pub lo: f64,
    pub hi: f64,
    /// Polar angles of the endpoints, `arccos(lo)` and `arccos(hi)`, computed
    /// directly. Near a pole they carry more precision than `lo`/`hi`.
    pub theta_at_lo: f64,
    pub theta_at_hi: f64,
}

impl ZInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, z: f64) -> bool {
        self.lo <= z && z <= self.hi
    }
}

/// Range of `z_f` for which the azimuth equation has a real solution, given
/// `alpha = (2 n_a - 1)/c` and the attack polar angle in `[0, pi]`. `None`
/// when empty.
///
/// The discriminant `alpha^2 cos^2 - alpha^2 - cos(2 theta_a)/2 + 1/2` equals
/// `sin^2(theta_a) (1 - alpha^2)`, so the interval is non-empty exactly when
/// `|alpha| <= 1` and its ends are `cos(theta_a +- arccos(alpha))`. Rounding
/// overshoot of `|alpha|` up to [`ARCCOS_TOLERANCE`] is clamped.
pub fn zf_interval(alpha: f64, theta_a: f64) -> Option<ZInterval> {
    if !(alpha.abs() <= 1.0 + ARCCOS_TOLERANCE) {
        return None;
    }
    let beta = alpha.clamp(-1.0, 1.0).acos();
    let theta_at_hi = (theta_a - beta).abs();
    let sum = theta_a + beta;
    let theta_at_lo = if sum > PI { TAU - sum } else { sum };
    Some(ZInterval {
        lo: theta_at_lo.cos(),
        hi: theta_at_hi.cos(),
        theta_at_lo,
        theta_at_hi,
    })
}

/// Argument of the `arccos` in the azimuth equation. Callers must ensure
/// neither `theta_a` nor `theta_f` sits on a pole.
pub fn phi_f_argument(alpha: f64, theta_a: f64, theta_f: f64) -> f64 {
    (alpha - theta_a.cos() * theta_f.cos()) / (theta_a.sin() * theta_f.sin())
}

/// The two forged azimuths `phi_a +- arccos(arg)`, wrapped into `[0, 2pi)`.
/// Returns `None` when `|arg|` exceeds 1 by more than [`ARCCOS_TOLERANCE`].
pub fn phi_f_solutions(alpha: f64, theta_a: f64, phi_a: f64, theta_f: f64) -> Option<(f64, f64)> {
    let arg = phi_f_argument(alpha, theta_a, theta_f);
    if !arg.is_finite() || arg.abs() > 1.0 + ARCCOS_TOLERANCE {
        return None;
    }
    let delta = arg.clamp(-1.0, 1.0).acos();
    Some((wrap_phi(phi_a + delta), wrap_phi(phi_a - delta)))
}

/// A normalized two-level state vector. Used to check the closed forms
/// against explicit matrix algebra.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector2 {
    pub amp0: Complex64,
    pub amp1: Complex64,
}

impl StateVector2 {
    pub fn new(amp0: Complex64, amp1: Complex64) -> Result<Self> {
        let norm = amp0.norm_sqr() + amp1.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidAngle(format!("state norm {norm} differs from 1")));
        }
        Ok(Self { amp0, amp1 })
    }

    /// `cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>`.
    pub fn from_angles(angles: &BlochAngles) -> Self {
        let half = 0.5 * angles.theta;
        Self {
            amp0: Complex64::new(half.cos(), 0.0),
            amp1: Complex64::from_polar(half.sin(), angles.phi),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp0.norm_sqr() + self.amp1.norm_sqr()
    }

    /// `<psi| diag(n0, n1) |psi>`.
    pub fn expectation(&self, model: &ObservableModel) -> f64 {
        model.n0 * self.amp0.norm_sqr() + model.n1 * self.amp1.norm_sqr()
    }

    /// `<psi| diag(n0^2, n1^2) |psi>`.
    pub fn second_moment(&self, model: &ObservableModel) -> f64 {
        model.n0 * model.n0 * self.amp0.norm_sqr() + model.n1 * model.n1 * self.amp1.norm_sqr()
    }

    fn apply(&self, m: &Matrix2) -> Self {
        Self {
            amp0: m[0][0] * self.amp0 + m[0][1] * self.amp1,
            amp1: m[1][0] * self.amp0 + m[1][1] * self.amp1,
        }
    }
}

/// Row-major 2x2 complex matrix.
pub type Matrix2 = [[Complex64; 2]; 2];

/// The rotation `R(theta, phi)` used to prepare tokens.
pub fn rotation(angles: &BlochAngles) -> Matrix2 {
    let half = 0.5 * angles.theta;
    let c = Complex64::new(half.cos(), 0.0);
    let s = half.sin();
    let minus_i = Complex64::new(0.0, -1.0);
    [
        [c, minus_i * Complex64::from_polar(s, -angles.phi)],
        [minus_i * Complex64::from_polar(s, angles.phi), c],
    ]
}

/// The inverse rotation `R^{-1}(theta, phi)`.
pub fn inverse_rotation(angles: &BlochAngles) -> Matrix2 {
    let half = 0.5 * angles.theta;
    let c = Complex64::new(half.cos(), 0.0);
    let s = half.sin();
    let i = Complex64::new(0.0, 1.0);
    [
        [c, i * Complex64::from_polar(s, -angles.phi)],
        [i * Complex64::from_polar(s, angles.phi), c],
    ]
}

/// `R^{-1}(unrotate) R(bank) |0>`. The global phase is left as computed.
pub fn compose_final_state(bank: &BlochAngles, unrotate: &BlochAngles) -> StateVector2 {
    let ground = StateVector2 {
        amp0: Complex64::new(1.0, 0.0),
        amp1: Complex64::new(0.0, 0.0),
    };
    ground.apply(&rotation(bank)).apply(&inverse_rotation(unrotate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn ang(theta: f64, phi: f64) -> BlochAngles {
        BlochAngles::new(theta, phi).unwrap()
    }

    fn model(n0: f64, n1: f64, s: f64) -> ObservableModel {
        ObservableModel::new(n0, n1, s).unwrap()
    }

    #[test]
    fn angle_construction_wraps_phi_and_rejects_theta() {
        let a = ang(1.0, -FRAC_PI_2);
        assert!((a.phi() - 3.0 * FRAC_PI_2).abs() < 1e-15);
        assert!((ang(0.3, 7.0 * PI).phi() - PI).abs() < 1e-12);
        assert!(BlochAngles::new(-1e-3, 0.0).is_err());
        assert!(BlochAngles::new(PI + 1e-9, 0.0).is_err());
        assert!(BlochAngles::new(f64::NAN, 0.0).is_err());
        assert!(BlochAngles::from_z(1.5, 0.0).is_err());
        assert_eq!(wrap_phi(TAU), 0.0);
    }

    #[test]
    fn serde_validates_angles() {
        let ok: BlochAngles = serde_json::from_str(r#"{"theta":1.0,"phi":7.0}"#).unwrap();
        assert!((ok.phi() - (7.0 - TAU)).abs() < 1e-15);
        assert!(serde_json::from_str::<BlochAngles>(r#"{"theta":4.0,"phi":0.0}"#).is_err());
    }

    #[test]
    fn model_validation() {
        assert!(ObservableModel::new(0.0, 0.0, 0.0).is_err());
        assert!(ObservableModel::new(-1.0, 2.0, 0.0).is_err());
        assert!(ObservableModel::new(1.0, 2.0, -0.1).is_err());
        let nv_like = model(100.0, 70.0, 1.0);
        assert!(nv_like.contrast() < 0.0);
        let m = ObservableModel::from_contrast(0.843, 0.270, 100.0).unwrap();
        assert!((m.n1 - 92.15).abs() < 1e-12);
        assert!((m.n0 - 7.85).abs() < 1e-12);
        assert!((m.sigma_exp - 27.0).abs() < 1e-12);
        assert!((m.contrast() - 0.843).abs() < 1e-15);
    }

    #[test]
    fn expectation_examples() {
        let m = model(0.0, 100.0, 0.0);
        assert_eq!(expectation_n(&m, &ang(0.0, 0.0)), 0.0);
        assert!((expectation_n(&m, &ang(PI, 0.0)) - 100.0).abs() < 1e-12);
        assert!((expectation_n(&m, &ang(FRAC_PI_2, 0.0)) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn uncertainty_examples() {
        let m = model(0.0, 100.0, 0.0);
        assert_eq!(total_uncertainty(&m, &ang(0.0, 0.0)), 0.0);
        assert!((total_uncertainty(&m, &ang(PI, 0.0)) - 10.0).abs() < 1e-12);
        // 50 * 101 - 50^2 = 2550
        assert!((total_uncertainty(&m, &ang(FRAC_PI_2, 0.0)) - 2550f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn uncertainty_decomposition_limits() {
        let equal = model(40.0, 40.0, 3.0);
        for k in 0..=20 {
            let s = ang(PI * k as f64 / 20.0, 0.3);
            assert!(uncertainty_components(&equal, &s).quantum.abs() < 1e-12);
        }
        let m = model(12.0, 85.0, 0.0);
        assert!((total_uncertainty(&m, &ang(0.0, 0.0)).powi(2) - 12.0).abs() < 1e-12);
        assert!((total_uncertainty(&m, &ang(PI, 0.0)).powi(2) - 85.0).abs() < 1e-9);
    }

    #[test]
    fn attacker_fraction_examples() {
        let b = ang(1.2, 0.4);
        assert!((attacker_fraction(0.896, &b, &b) - 0.948).abs() < 1e-12);
        let eq = ang(FRAC_PI_2, 0.0);
        assert!((attacker_fraction(0.37, &eq, &BlochAngles::NORTH) - 0.5).abs() < 1e-15);
        let anti = ang(PI - 1.2, 0.4 + PI);
        assert!(attacker_fraction(1.0, &b, &anti).abs() < 1e-12);
    }

    #[test]
    fn mean_attacker_fraction_examples() {
        assert!((mean_attacker_fraction(1.0, &BlochAngles::NORTH) - 0.5).abs() < 1e-9);
        assert!((mean_attacker_fraction(0.563, &ang(PI / 3.0, 1.1)) - 0.5).abs() < 1e-9);
        assert!((mean_attacker_fraction(0.0, &ang(2.0, 5.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zf_interval_examples() {
        let iv = zf_interval(0.5, 0.0).unwrap();
        assert!((iv.lo - 0.5).abs() < 1e-12 && (iv.hi - 0.5).abs() < 1e-12);
        let iv = zf_interval(0.0, FRAC_PI_2).unwrap();
        assert!((iv.lo + 1.0).abs() < 1e-15 && (iv.hi - 1.0).abs() < 1e-15);
        assert_eq!(zf_interval(2.0, 0.0), None);
        assert_eq!(zf_interval(f64::NAN, 0.3), None);
    }

    #[test]
    fn phi_f_examples() {
        let (p, m) = phi_f_solutions(0.5, FRAC_PI_2, 0.0, FRAC_PI_2).unwrap();
        assert!((p - PI / 3.0).abs() < 1e-12);
        assert!((m - 5.0 * PI / 3.0).abs() < 1e-12);
        // Forward check: the forged point reproduces n_a = 0.75 at c = 1.
        let a = ang(FRAC_PI_2, 0.0);
        assert!((attacker_fraction(1.0, &a, &ang(FRAC_PI_2, p)) - 0.75).abs() < 1e-12);
        let (p, m) = phi_f_solutions(0.0, FRAC_PI_2, 0.0, FRAC_PI_2).unwrap();
        assert!((p - FRAC_PI_2).abs() < 1e-12 && (m - 3.0 * FRAC_PI_2).abs() < 1e-12);
        assert_eq!(phi_f_solutions(1.5, FRAC_PI_2, 0.0, FRAC_PI_2), None);
    }

    #[test]
    fn compose_examples() {
        let b = ang(0.8, 2.1);
        let s = compose_final_state(&b, &b);
        assert!((s.amp0.norm() - 1.0).abs() < 1e-12 && s.amp1.norm() < 1e-12);

        let s = compose_final_state(&BlochAngles::SOUTH, &BlochAngles::NORTH);
        assert!((s.amp1.norm() - 1.0).abs() < 1e-12);

        let e = ang(FRAC_PI_2, 0.0);
        let s = compose_final_state(&e, &e);
        assert!((s.amp0.norm() - 1.0).abs() < 1e-12 && s.amp1.norm() < 1e-12);
    }

    #[test]
    fn rotation_inverse_cancels() {
        let a = ang(2.3, 4.0);
        let r = rotation(&a);
        let ri = inverse_rotation(&a);
        for i in 0..2 {
            for j in 0..2 {
                let v: Complex64 = (0..2).map(|k| ri[i][k] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((v - Complex64::new(expected, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn state_vector_rejects_unnormalized() {
        assert!(StateVector2::new(Complex64::new(1.0, 0.0), Complex64::new(0.1, 0.0)).is_err());
    }
}
