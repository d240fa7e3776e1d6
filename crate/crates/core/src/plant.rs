//! Controlled plants of the form `ẋ = f(x, u)` and the nonisothermal CSTR model.
//!
//! The CSTR state is the pair of dimensionless deviations (concentration,
//! temperature) from a nominal operating point, and the two inputs are the
//! inlet concentration and inlet temperature deviations. The model is
//!
//! ```text
//! f₁ = −φ₁x₁ + k₁e^{−κ} − k₁(x₁+1)^n̄ e^{−κ/(x₂+1)} + u₁
//! f₂ = −φ₂x₂ + k₂e^{−κ} − k₂(x₁+1)^n̄ e^{−κ/(x₂+1)} + u₂
//! ```
//!
//! on `D = {x₁ > −1, x₂ > −1}`. With this form the origin is an equilibrium
//! for `u = 0`. The [`ModelVariant::Unscaled`] variant drops the `kᵢ`
//! factor on the reaction term; it does not have the origin as an
//! equilibrium and is kept only for comparison.

use nalgebra::{Complex, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Plant state `(x₁, x₂)`.
pub type StateVec = Vector2<f64>;
/// Plant input `(u₁, u₂)`.
pub type InputVec = Vector2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("state ({x1}, {x2}) left the domain x1 > -1, x2 > -1")]
    Domain { x1: f64, x2: f64 },
    #[error(
        "steady-state solver did not converge after {iterations} iterations \
         (residual {residual:e}, last iterate ({x1}, {x2}))"
    )]
    NoConvergence {
        iterations: usize,
        residual: f64,
        x1: f64,
        x2: f64,
    },
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
    #[error("invalid plant dimensions n_x = {n_x}, n_u = {n_u}")]
    InvalidDims { n_x: usize, n_u: usize },
}

/// State and input dimensions of a plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantDims {
    pub n_x: usize,
    pub n_u: usize,
}

impl PlantDims {
    pub fn new(n_x: usize, n_u: usize) -> Result<Self, PlantError> {
        if n_x == 0 || n_u == 0 {
            return Err(PlantError::InvalidDims { n_x, n_u });
        }
        Ok(Self { n_x, n_u })
    }
}

/// A controlled vector field `ẋ = f(x, u)` with its state Jacobian.
///
/// The input enters additively for every plant in this crate, so `∂f/∂u`
/// is not part of the trait.
pub trait Plant {
    fn dims(&self) -> PlantDims;
    fn rhs(&self, x: &StateVec, u: &InputVec) -> Result<StateVec, PlantError>;
    fn jacobian(&self, x: &StateVec, u: &InputVec) -> Result<Matrix2<f64>, PlantError>;
    fn in_domain(&self, x: &StateVec) -> bool;
}

/// Parameters of the CSTR model and its admissible input box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrParams {
    pub n_bar: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub k1: f64,
    pub k2: f64,
    pub kappa: f64,
    pub u1_min: f64,
    pub u1_max: f64,
    pub u2_min: f64,
    pub u2_max: f64,
}

impl CstrParams {
    /// Hydrolysis of acetic anhydride with excess water.
    pub const NOMINAL: CstrParams = CstrParams {
        n_bar: 1.0,
        phi1: 1.0,
        phi2: 1.0,
        k1: 5.819e7,
        k2: -8.99e5,
        kappa: 17.77,
        u1_min: -1.798,
        u1_max: 1.798,
        u2_min: -0.06663,
        u2_max: 0.06663,
    };

    pub fn validate(&self) -> Result<(), PlantError> {
        let all = [
            self.n_bar,
            self.phi1,
            self.phi2,
            self.k1,
            self.k2,
            self.kappa,
            self.u1_min,
            self.u1_max,
            self.u2_min,
            self.u2_max,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::InvalidParams("non-finite parameter".into()));
        }
        if self.kappa <= 0.0 {
            return Err(PlantError::InvalidParams(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if self.u1_min >= self.u1_max || self.u2_min >= self.u2_max {
            return Err(PlantError::InvalidParams(
                "input bounds must satisfy u_min < u_max".into(),
            ));
        }
        Ok(())
    }

    pub fn u_min(&self) -> InputVec {
        InputVec::new(self.u1_min, self.u2_min)
    }

    pub fn u_max(&self) -> InputVec {
        InputVec::new(self.u1_max, self.u2_max)
    }

    /// Whether `u` lies in the admissible box `U`.
    pub fn input_in_box(&self, u: &InputVec) -> bool {
        (self.u1_min..=self.u1_max).contains(&u[0]) && (self.u2_min..=self.u2_max).contains(&u[1])
    }

    pub fn clamp_input(&self, u: &InputVec) -> InputVec {
        InputVec::new(
            u[0].clamp(self.u1_min, self.u1_max),
            u[1].clamp(self.u2_min, self.u2_max),
        )
    }
}

impl Default for CstrParams {
    fn default() -> Self {
        Self::NOMINAL
    }
}

/// Which form of the reaction term to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Reaction term scaled by `kᵢ`; the origin is an equilibrium at `u = 0`.
    #[default]
    Scaled,
    /// Reaction term without the `kᵢ` factor.
    Unscaled,
}

/// The two-state nonisothermal CSTR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrModel {
    pub params: CstrParams,
    pub variant: ModelVariant,
}

impl CstrModel {
    pub fn new(params: CstrParams, variant: ModelVariant) -> Result<Self, PlantError> {
        params.validate()?;
        Ok(Self { params, variant })
    }

    pub fn nominal() -> Self {
        Self {
            params: CstrParams::NOMINAL,
            variant: ModelVariant::Scaled,
        }
    }

    fn check_domain(x: &StateVec) -> Result<(), PlantError> {
        // NaN fails both comparisons and is reported as a domain error
        if x[0] > -1.0 && x[1] > -1.0 {
            Ok(())
        } else {
            Err(PlantError::Domain { x1: x[0], x2: x[1] })
        }
    }

    /// Reaction-term gains `(g₁, g₂)`: `(k₁, k₂)` or `(1, 1)`.
    fn reaction_gains(&self) -> (f64, f64) {
        match self.variant {
            ModelVariant::Scaled => (self.params.k1, self.params.k2),
            ModelVariant::Unscaled => (1.0, 1.0),
        }
    }
}

impl Plant for CstrModel {
    fn dims(&self) -> PlantDims {
        PlantDims { n_x: 2, n_u: 2 }
    }

    fn in_domain(&self, x: &StateVec) -> bool {
        Self::check_domain(x).is_ok()
    }

    fn rhs(&self, x: &StateVec, u: &InputVec) -> Result<StateVec, PlantError> {
        cstr_rhs(x, u, self)
    }

    fn jacobian(&self, x: &StateVec, u: &InputVec) -> Result<Matrix2<f64>, PlantError> {
        cstr_jacobian(x, u, self)
    }
}

/// Instantaneous state derivative of the CSTR.
pub fn cstr_rhs(x: &StateVec, u: &InputVec, model: &CstrModel) -> Result<StateVec, PlantError> {
    CstrModel::check_domain(x)?;
    let p = &model.params;
    let (g1, g2) = model.reaction_gains();
    let base = (-p.kappa).exp();
    let reaction = (x[0] + 1.0).powf(p.n_bar) * (-p.kappa / (x[1] + 1.0)).exp();
    Ok(StateVec::new(
        -p.phi1 * x[0] + p.k1 * base - g1 * reaction + u[0],
        -p.phi2 * x[1] + p.k2 * base - g2 * reaction + u[1],
    ))
}

/// Closed-form `∂f/∂x` of the CSTR.
pub fn cstr_jacobian(
    x: &StateVec,
    _u: &InputVec,
    model: &CstrModel,
) -> Result<Matrix2<f64>, PlantError> {
    CstrModel::check_domain(x)?;
    let p = &model.params;
    let (g1, g2) = model.reaction_gains();
    let s1 = x[0] + 1.0;
    let s2 = x[1] + 1.0;
    let arrhenius = (-p.kappa / s2).exp();
    // ∂/∂x₁ and ∂/∂x₂ of (x₁+1)^n̄ e^{−κ/(x₂+1)}
    let dr_dx1 = p.n_bar * s1.powf(p.n_bar - 1.0) * arrhenius;
    let dr_dx2 = s1.powf(p.n_bar) * arrhenius * p.kappa / (s2 * s2);
    Ok(Matrix2::new(
        -p.phi1 - g1 * dr_dx1,
        -g1 * dr_dx2,
        -g2 * dr_dx1,
        -p.phi2 - g2 * dr_dx2,
    ))
}

/// Jacobian, eigenvalues and Hurwitz verdict of a 2×2 linearization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralInfo {
    pub jacobian: Matrix2<f64>,
    pub eigenvalues: [Complex<f64>; 2],
    pub hurwitz: bool,
}

/// Eigenvalues of a 2×2 matrix from its trace and determinant.
///
/// Eigenvalues are ordered by decreasing real part (then imaginary part).
pub fn spectral_info(a: &Matrix2<f64>) -> SpectralInfo {
    let half_trace = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    // discriminant written as ((a-d)/2)² + bc to avoid cancellation in tr²/4 - det
    let half_diff = 0.5 * (a[(0, 0)] - a[(1, 1)]);
    let disc = half_diff * half_diff + a[(0, 1)] * a[(1, 0)];
    let eigenvalues = if disc >= 0.0 {
        let root = disc.sqrt();
        // larger-magnitude root first, the other from the product to keep accuracy
        let big = if half_trace >= 0.0 {
            half_trace + root
        } else {
            half_trace - root
        };
        let small = if big != 0.0 { det / big } else { half_trace - root };
        let (hi, lo) = if big >= small { (big, small) } else { (small, big) };
        [Complex::new(hi, 0.0), Complex::new(lo, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [Complex::new(half_trace, im), Complex::new(half_trace, -im)]
    };
    let hurwitz = eigenvalues.iter().all(|l| l.re < 0.0);
    SpectralInfo {
        jacobian: *a,
        eigenvalues,
        hurwitz,
    }
}

/// Settings for the damped Newton solve of `f(x, u) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            max_halvings: 30,
        }
    }
}

/// Equilibrium `ℓ(u)` of the plant for a constant input, starting Newton at `x = 0`.
pub fn steady_state_map<P: Plant>(
    u: &InputVec,
    plant: &P,
    tol: f64,
    max_iter: usize,
) -> Result<StateVec, PlantError> {
    let settings = NewtonSettings {
        tol,
        max_iter,
        ..NewtonSettings::default()
    };
    steady_state_from(u, &StateVec::zeros(), plant, &settings)
}

/// Damped Newton from an arbitrary initial iterate.
///
/// Each step is halved until the residual norm decreases (at most
/// `max_halvings` times); a step that cannot be made to decrease the
/// residual is taken at its smallest length.
pub fn steady_state_from<P: Plant>(
    u: &InputVec,
    guess: &StateVec,
    plant: &P,
    settings: &NewtonSettings,
) -> Result<StateVec, PlantError> {
    let mut x = *guess;
    let mut fx = plant.rhs(&x, u)?;
    let mut res = fx.norm();
    for _ in 0..settings.max_iter {
        if res <= settings.tol {
            return Ok(x);
        }
        let jac = plant.jacobian(&x, u)?;
        let Some(step) = jac.lu().solve(&(-fx)) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial = x + step * lambda;
            if plant.in_domain(&trial) {
                let f_trial = plant.rhs(&trial, u)?;
                let r_trial = f_trial.norm();
                if r_trial < res {
                    accepted = Some((trial, f_trial, r_trial));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xn, fn_, rn)) => {
                x = xn;
                fx = fn_;
                res = rn;
            }
            None => {
                // no decrease along the Newton direction: roundoff floor or a bad region
                let trial = x + step * lambda;
                CstrModel::check_domain(&trial)?;
                break;
            }
        }
    }
    if res <= settings.tol {
        return Ok(x);
    }
    Err(PlantError::NoConvergence {
        iterations: settings.max_iter,
        residual: res,
        x1: x[0],
        x2: x[1],
    })
}

/// Spectral data of the plant linearization at the equilibrium `ℓ(u)`.
pub fn steady_state_stability<P: Plant>(u: &InputVec, plant: &P) -> Result<SpectralInfo, PlantError> {
    let settings = NewtonSettings::default();
    let x = steady_state_from(u, &StateVec::zeros(), plant, &settings)?;
    Ok(spectral_info(&plant.jacobian(&x, u)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_jacobian(model: &CstrModel, x: &StateVec, u: &InputVec, h: f64) -> Matrix2<f64> {
        let mut j = Matrix2::zeros();
        for k in 0..2 {
            let mut xp = *x;
            let mut xm = *x;
            xp[k] += h;
            xm[k] -= h;
            let d = (cstr_rhs(&xp, u, model).unwrap() - cstr_rhs(&xm, u, model).unwrap()) / (2.0 * h);
            j.set_column(k, &d);
        }
        j
    }

    #[test]
    fn origin_is_equilibrium() {
        let m = CstrModel::nominal();
        let f = cstr_rhs(&StateVec::zeros(), &InputVec::zeros(), &m).unwrap();
        assert!(f.norm() <= 1e-14, "{f}");
    }

    #[test]
    fn input_enters_additively() {
        let m = CstrModel::nominal();
        let u = InputVec::new(1.798, 0.06663);
        let f = cstr_rhs(&StateVec::zeros(), &u, &m).unwrap();
        assert_relative_eq!(f, u, epsilon = 1e-14);
    }

    #[test]
    fn rhs_matches_extended_precision() {
        // 50-digit evaluation of the same formula (mpmath)
        let expected = [-0.02045867514883269251490348, -0.006679715604763694954959646];
        let m = CstrModel::nominal();
        let f = cstr_rhs(&StateVec::new(-0.065, 0.008), &InputVec::zeros(), &m).unwrap();
        for k in 0..2 {
            assert_relative_eq!(f[k], expected[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn printed_variant_misses_the_origin() {
        let m = CstrModel::new(CstrParams::NOMINAL, ModelVariant::Unscaled).unwrap();
        let f = cstr_rhs(&StateVec::zeros(), &InputVec::zeros(), &m).unwrap();
        // (k1 - 1) e^{-κ}, 50-digit reference
        assert_relative_eq!(f[0], 1.1154122409959738744, max_relative = 1e-12);
    }

    #[test]
    fn domain_violation_is_an_error() {
        let m = CstrModel::nominal();
        let u = InputVec::zeros();
        for x in [StateVec::new(-1.0, 0.0), StateVec::new(0.0, -1.5), StateVec::new(f64::NAN, 0.0)] {
            assert!(matches!(cstr_rhs(&x, &u, &m), Err(PlantError::Domain { .. })));
            assert!(matches!(cstr_jacobian(&x, &u, &m), Err(PlantError::Domain { .. })));
        }
    }

    #[test]
    fn jacobian_at_origin() {
        let j = cstr_jacobian(&StateVec::zeros(), &InputVec::zeros(), &CstrModel::nominal()).unwrap();
        let expected = Matrix2::new(-2.115412260, -19.82087587, 0.01723243894, -0.6937795600);
        for (a, b) in j.iter().zip(expected.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-6);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for variant in [ModelVariant::Scaled, ModelVariant::Unscaled] {
            let m = CstrModel::new(CstrParams::NOMINAL, variant).unwrap();
            for _ in 0..20 {
                let x = StateVec::new(rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2));
                let u = InputVec::new(rng.random_range(-1.798..1.798), rng.random_range(-0.06663..0.06663));
                let analytic = cstr_jacobian(&x, &u, &m).unwrap();
                let fd = fd_jacobian(&m, &x, &u, 1e-6);
                let scale = analytic.abs().max();
                for (a, b) in analytic.iter().zip(fd.iter()) {
                    assert!((a - b).abs() <= 1e-6 * scale, "{analytic} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn input_jacobian_is_identity() {
        let m = CstrModel::nominal();
        let x = StateVec::new(0.1, -0.02);
        let u = InputVec::new(0.3, 0.01);
        let h = 1e-6;
        for k in 0..2 {
            let mut up = u;
            let mut um = u;
            up[k] += h;
            um[k] -= h;
            let d = (cstr_rhs(&x, &up, &m).unwrap() - cstr_rhs(&x, &um, &m).unwrap()) / (2.0 * h);
            let e = if k == 0 { InputVec::x() } else { InputVec::y() };
            assert_relative_eq!(d, e, epsilon = 1e-8);
        }
    }

    #[test]
    fn spectral_examples() {
        let tabulated = Matrix2::new(-2.115412260, -19.82087587, 0.01723243894, -0.6937795600);
        let s = spectral_info(&tabulated);
        assert!(s.hurwitz);
        assert!(s.eigenvalues.iter().all(|l| l.im == 0.0));
        assert!((s.eigenvalues[0].re + 1.0).abs() < 1e-2);
        assert!((s.eigenvalues[1].re + 1.809).abs() < 1e-2);

        let id = spectral_info(&Matrix2::identity());
        assert_eq!(id.eigenvalues, [Complex::new(1.0, 0.0); 2]);
        assert!(!id.hurwitz);

        let rot = spectral_info(&Matrix2::new(0.0, -1.0, 1.0, 0.0));
        assert_eq!(rot.eigenvalues, [Complex::new(0.0, 1.0), Complex::new(0.0, -1.0)]);
        assert!(!rot.hurwitz);
    }

    #[test]
    fn steady_state_at_zero_input() {
        let m = CstrModel::nominal();
        let x = steady_state_map(&InputVec::zeros(), &m, 1e-12, 50).unwrap();
        assert_eq!(x, StateVec::zeros());
        assert!(steady_state_stability(&InputVec::zeros(), &m).unwrap().hurwitz);
    }

    #[test]
    fn steady_state_residual_on_samples() {
        let m = CstrModel::nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let u = InputVec::new(rng.random_range(-1.798..1.798), rng.random_range(-0.06663..0.06663));
            let x = steady_state_map(&u, &m, 1e-12, 50).unwrap();
            assert!(cstr_rhs(&x, &u, &m).unwrap().norm() <= 1e-12);
        }
    }

    #[test]
    fn box_corners_are_hurwitz() {
        let m = CstrModel::nominal();
        let p = m.params;
        for u in [
            InputVec::new(p.u1_min, p.u2_min),
            InputVec::new(p.u1_min, p.u2_max),
            InputVec::new(p.u1_max, p.u2_min),
            InputVec::new(p.u1_max, p.u2_max),
        ] {
            let info = steady_state_stability(&u, &m).unwrap();
            assert!(info.hurwitz, "corner {u}: {:?}", info.eigenvalues);
        }
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let m = CstrModel::nominal();
        let err = steady_state_map(&InputVec::new(0.5, 0.01), &m, 1e-12, 1).unwrap_err();
        assert!(matches!(err, PlantError::NoConvergence { iterations: 1, .. }));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = CstrParams::NOMINAL;
        p.kappa = 0.0;
        assert!(CstrModel::new(p, ModelVariant::Scaled).is_err());
        let mut p = CstrParams::NOMINAL;
        p.u1_min = 2.0;
        assert!(p.validate().is_err());
        assert!(PlantDims::new(0, 2).is_err());
    }

    #[test]
    fn steady_state_grid_is_continuous() {
        let m = CstrModel::nominal();
        let p = m.params;
        let n = 5;
        let grid = |i: usize, lo: f64, hi: f64| lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let sol: Vec<Vec<StateVec>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let u = InputVec::new(grid(i, p.u1_min, p.u1_max), grid(j, p.u2_min, p.u2_max));
                        steady_state_map(&u, &m, 1e-12, 50).unwrap()
                    })
                    .collect()
            })
            .collect();
        let du1 = (p.u1_max - p.u1_min) / (n - 1) as f64;
        let du2 = (p.u2_max - p.u2_min) / (n - 1) as f64;
        // ‖∂ℓ/∂u‖ = ‖A⁻¹‖ ≈ 11 near the origin, so compare against a gain-scaled step
        let gain = 1.0 / 0.0907;
        for i in 0..n {
            for j in 0..n {
                if i + 1 < n {
                    assert!((sol[i + 1][j] - sol[i][j]).norm() <= 10.0 * gain * du1);
                }
                if j + 1 < n {
                    assert!((sol[i][j + 1] - sol[i][j]).norm() <= 10.0 * gain * du2);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn translation_structure(x1 in -0.9..2.0f64, x2 in -0.5..1.0f64, u1 in -3.0..3.0f64, u2 in -0.2..0.2f64) {
            let m = CstrModel::nominal();
            let x = StateVec::new(x1, x2);
            let u = InputVec::new(u1, u2);
            let d = cstr_rhs(&x, &u, &m).unwrap() - cstr_rhs(&x, &InputVec::zeros(), &m).unwrap();
            let scale = 1.0 + cstr_rhs(&x, &InputVec::zeros(), &m).unwrap().abs().max();
            proptest::prop_assert!((d - u).abs().max() <= 1e-12 * scale);
        }

        #[test]
        fn eigenvalues_scale_linearly(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, d in -5.0..5.0f64, s in 0.1..10.0f64) {
            let m = Matrix2::new(a, b, c, d);
            let e1 = spectral_info(&m).eigenvalues;
            let e2 = spectral_info(&(m * s)).eigenvalues;
            for k in 0..2 {
                proptest::prop_assert!((e2[k] - e1[k] * s).norm() <= 1e-9 * (1.0 + s * e1[k].norm()));
            }
        }
    }
}
