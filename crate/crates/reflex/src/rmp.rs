//! Second-order motion-policy math: joint-space attractor, scalar task-space
//! repulsor with its metric, pullback into joint space, metric-weighted
//! combination, and semi-implicit Euler integration.

use serde::{Deserialize, Serialize};

use crate::{Matrix7, Vector7};

/// Relative singular-value cutoff for pseudoinverses.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Every scalar gain, length scale and regularizer of the policy pair, plus
/// integration settings. `r`, `ell_p`, `ell_d`, `ell_m` are in squared-meter
/// units because the repulsor task coordinate is a squared distance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RmpParams {
    /// Attractor stiffness (1/s^2).
    pub k_g: f64,
    /// Attractor damping (1/s).
    pub k_d: f64,
    /// Attractor metric weight.
    pub mu_g: f64,
    /// Repulsor magnitude.
    pub k_p: f64,
    /// Repulsor distance scale.
    pub ell_p: f64,
    /// Repulsor damping magnitude.
    pub k_v: f64,
    /// Velocity-sigmoid scale.
    pub l_v: f64,
    /// Damping distance scale.
    pub ell_d: f64,
    /// Damping regularizer.
    pub eps_d: f64,
    /// Repulsor metric weight.
    pub mu_r: f64,
    /// Metric distance scale.
    pub ell_m: f64,
    /// Metric regularizer.
    pub eps_m: f64,
    /// Metric cutoff radius (squared-distance units).
    pub r: f64,
    /// Euler sub-steps per control tick.
    pub n_int: u32,
    /// Sub-step duration (s).
    pub dt_int: f64,
}

impl Default for RmpParams {
    fn default() -> Self {
        RmpParams {
            k_g: 96.0,
            k_d: 20.0,
            mu_g: 1.0,
            k_p: 96.0,
            ell_p: 0.05,
            k_v: 12.0,
            l_v: 0.1,
            ell_d: 0.05,
            eps_d: 1e-3,
            mu_r: 48.0,
            ell_m: 0.05,
            eps_m: 1e-3,
            r: 0.09,
            n_int: 5,
            dt_int: 0.004,
        }
    }
}

impl RmpParams {
    pub fn validate(&self) -> crate::Result<()> {
        let positive = [
            ("ell_p", self.ell_p),
            ("l_v", self.l_v),
            ("ell_d", self.ell_d),
            ("ell_m", self.ell_m),
            ("eps_d", self.eps_d),
            ("eps_m", self.eps_m),
            ("r", self.r),
            ("mu_g", self.mu_g),
            ("dt_int", self.dt_int),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(crate::Error::invalid(format!("{name} must be > 0")));
            }
        }
        if self.n_int < 1 {
            return Err(crate::Error::invalid("n_int must be >= 1"));
        }
        Ok(())
    }

    /// Set one parameter by its field name; used for config-file and CLI
    /// overrides.
    pub fn set_field(&mut self, name: &str, value: f64) -> crate::Result<()> {
        let slot = match name {
            "k_g" => &mut self.k_g,
            "k_d" => &mut self.k_d,
            "mu_g" => &mut self.mu_g,
            "k_p" => &mut self.k_p,
            "ell_p" => &mut self.ell_p,
            "k_v" => &mut self.k_v,
            "l_v" => &mut self.l_v,
            "ell_d" => &mut self.ell_d,
            "eps_d" => &mut self.eps_d,
            "mu_r" => &mut self.mu_r,
            "ell_m" => &mut self.ell_m,
            "eps_m" => &mut self.eps_m,
            "r" => &mut self.r,
            "dt_int" => &mut self.dt_int,
            "n_int" => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(crate::Error::invalid("n_int must be a positive integer"));
                }
                self.n_int = value as u32;
                return Ok(());
            }
            other => {
                return Err(crate::Error::invalid(format!("unknown parameter '{other}'")))
            }
        };
        *slot = value;
        Ok(())
    }
}

/// A joint-space acceleration with its symmetric PSD metric.
#[derive(Clone, Debug)]
pub struct JointSpaceRmp {
    pub f: Vector7,
    pub m: Matrix7,
}

/// Scalar repulsor task state: squared distance, its rate, and the 1x7 task
/// Jacobian as a row vector.
#[derive(Clone, Copy, Debug)]
pub struct TaskSpaceRepulsor {
    pub x_r: f64,
    pub xdot_r: f64,
    pub j_r: Vector7,
}

/// Goal attractor: f = k_g (q_g - q) - k_d qdot, metric mu_g I.
pub fn attractor(q: &Vector7, qdot: &Vector7, q_g: &Vector7, params: &RmpParams) -> JointSpaceRmp {
    JointSpaceRmp {
        f: (q_g - q) * params.k_g - qdot * params.k_d,
        m: Matrix7::identity() * params.mu_g,
    }
}

/// 1 - logistic(v / l): 1 near fast approach (v << 0), 1/2 at rest, 0 when
/// the separation grows quickly.
pub fn sigma_bar(v: f64, l_v: f64) -> f64 {
    1.0 - 1.0 / (1.0 + (-v / l_v).exp())
}

/// Metric cutoff profile: (x - r)^2 / r^2 inside the radius, 0 outside.
pub fn cutoff_g(x: f64, r: f64) -> f64 {
    if x <= r {
        let d = x - r;
        d * d / (r * r)
    } else {
        0.0
    }
}

/// Scalar repulsor acceleration and metric at task state (x_r, xdot_r).
pub fn repulsor_task(x_r: f64, xdot_r: f64, params: &RmpParams) -> (f64, f64) {
    debug_assert!(x_r >= 0.0);
    let s = sigma_bar(xdot_r, params.l_v);
    let f = params.k_p * (-x_r / params.ell_p).exp()
        - params.k_v * s * xdot_r / (x_r / params.ell_d + params.eps_d);
    let m = s * cutoff_g(x_r, params.r) * params.mu_r / (x_r / params.ell_m + params.eps_m);
    (f, m)
}

/// Pull a scalar task-space policy into joint space through a 1x7 Jacobian:
/// M = J^T m J and f = (J^T m J)^+ J^T m f. For the rank-1 case the
/// pseudoinverse collapses to f = J^T f / |J|^2; a zero Jacobian or metric
/// leaves the policy inert.
pub fn pullback(f_task: f64, m_task: f64, j_r: &Vector7) -> JointSpaceRmp {
    let jj = j_r.norm_squared();
    if m_task <= 0.0 || jj == 0.0 {
        return JointSpaceRmp {
            f: Vector7::zeros(),
            m: Matrix7::zeros(),
        };
    }
    JointSpaceRmp {
        f: j_r * (f_task / jj),
        m: (j_r * j_r.transpose()) * m_task,
    }
}

/// Metric-weighted combination: qddot = (sum M_i)^+ (sum M_i f_i), with the
/// standard relative singular-value cutoff. All-zero metrics yield zero.
pub fn combine(rmps: &[JointSpaceRmp]) -> Vector7 {
    assert!(!rmps.is_empty());
    let mut m_sum = Matrix7::zeros();
    let mut f_sum = Vector7::zeros();
    for rmp in rmps {
        m_sum += rmp.m;
        f_sum += rmp.m * rmp.f;
    }
    pinv_apply(&m_sum, &f_sum)
}

/// Moore-Penrose pseudoinverse applied to a vector, cutting singular values
/// below `PINV_CUTOFF * sigma_max`. The input is symmetric PSD, so the
/// spectral decomposition is its SVD; the general-purpose SVD routine loses
/// accuracy on these nearly rank-1 matrices.
pub fn pinv_apply(m: &Matrix7, b: &Vector7) -> Vector7 {
    let eig = m.symmetric_eigen();
    let sigma_max = eig.eigenvalues.amax();
    if sigma_max <= 0.0 {
        return Vector7::zeros();
    }
    let cut = PINV_CUTOFF * sigma_max;
    let mut coeffs = eig.eigenvectors.transpose() * b;
    for i in 0..7 {
        let s = eig.eigenvalues[i];
        coeffs[i] = if s > cut { coeffs[i] / s } else { 0.0 };
    }
    eig.eigenvectors * coeffs
}

/// Semi-implicit Euler: `n_int` sub-steps of velocity-then-position update
/// under a constant acceleration (the caller re-evaluates the acceleration
/// once per control tick, not per sub-step).
pub fn euler_integrate(
    q: &Vector7,
    qdot: &Vector7,
    qddot: &Vector7,
    params: &RmpParams,
) -> (Vector7, Vector7) {
    let mut q = *q;
    let mut qdot = *qdot;
    for _ in 0..params.n_int {
        qdot += qddot * params.dt_int;
        q += qdot * params.dt_int;
    }
    (q, qdot)
}
