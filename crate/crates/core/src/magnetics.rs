//! Quasi-static magnetics for polygonal coil loops: Biot-Savart fields,
//! coil sensitivity, and reciprocity-based receive voltage.
//!
//! Each loop is a planar square described by its center, side length and unit
//! normal. Fields are evaluated with the exact analytic expression for a
//! straight finite segment, so there is no quadrature error; a brute-force
//! segment-integration oracle lives in the tests.

use nalgebra::Vector3;

use crate::error::{Result, SimError};

/// Vacuum permeability [H/m].
pub const MU0: f64 = 1.256_637_061_435_917_3e-6;
const MU0_OVER_4PI: f64 = 1e-7;

/// Points closer than this to a conductor segment are treated as singular [m].
pub const SINGULAR_DISTANCE: f64 = 1e-9;

/// Magnetic flux density vector [T].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl FieldVector {
    pub fn zero() -> Self {
        FieldVector::default()
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        FieldVector {
            bx: v.x,
            by: v.y,
            bz: v.z,
        }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.bx, self.by, self.bz)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn scale(&self, factor: f64) -> Self {
        FieldVector {
            bx: self.bx * factor,
            by: self.by * factor,
            bz: self.bz * factor,
        }
    }

    pub fn dot(&self, v: &Vector3<f64>) -> f64 {
        self.bx * v.x + self.by * v.y + self.bz * v.z
    }

    pub fn is_finite(&self) -> bool {
        self.bx.is_finite() && self.by.is_finite() && self.bz.is_finite()
    }
}

/// One planar square current loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareLoop {
    /// Loop center [m].
    pub center: Vector3<f64>,
    /// Side length [m].
    pub side: f64,
    /// Unit normal; current circulates right-handed about it.
    pub normal: Vector3<f64>,
}

impl SquareLoop {
    /// Corner positions in circulation order (right-handed about `normal`).
    ///
    /// The in-plane orientation of the square is fixed by a deterministic
    /// frame construction; it does not affect on-axis fields.
    pub fn corners(&self) -> [Vector3<f64>; 4] {
        let (u, v) = plane_basis(&self.normal);
        let h = 0.5 * self.side;
        [
            self.center + (u - v) * h,
            self.center + (u + v) * h,
            self.center + (-u + v) * h,
            self.center + (-u - v) * h,
        ]
    }
}

/// Orthonormal in-plane basis (u, v) with u x v = n.
fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    // Pick the world axis least aligned with n to seed the frame.
    let seed = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vector3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let u = (seed - n * seed.dot(n)).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// One array coil channel: loop geometry plus lumped electrical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilChannel {
    pub loops: Vec<SquareLoop>,
    pub turns_per_loop: u32,
    /// Self-inductance L1 [H].
    pub inductance: f64,
    /// Series resistance R1 [ohm].
    pub resistance: f64,
    pub label: String,
}

impl CoilChannel {
    /// Square Helmholtz-like pair: two coaxial loops along +z, centered on the
    /// origin, `spacing` apart, with co-directed currents.
    pub fn square_helmholtz_pair(
        side: f64,
        spacing: f64,
        turns_per_loop: u32,
        inductance: f64,
        resistance: f64,
        label: impl Into<String>,
    ) -> Self {
        let normal = Vector3::z();
        CoilChannel {
            loops: vec![
                SquareLoop {
                    center: Vector3::new(0.0, 0.0, -0.5 * spacing),
                    side,
                    normal,
                },
                SquareLoop {
                    center: Vector3::new(0.0, 0.0, 0.5 * spacing),
                    side,
                    normal,
                },
            ],
            turns_per_loop,
            inductance,
            resistance,
            label: label.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.loops.is_empty() {
            return Err(SimError::invalid_field("coil.loops", "at least one loop required"));
        }
        for (i, l) in self.loops.iter().enumerate() {
            if !(l.side > 0.0) {
                return Err(SimError::invalid_field(
                    format!("coil.loops[{i}].side"),
                    "side length must be > 0",
                ));
            }
            if (l.normal.norm() - 1.0).abs() > 1e-12 {
                return Err(SimError::invalid_field(
                    format!("coil.loops[{i}].normal"),
                    "normal must be a unit vector",
                ));
            }
        }
        if self.turns_per_loop < 1 {
            return Err(SimError::invalid_field("coil.turns", "turns must be >= 1"));
        }
        if !(self.inductance > 0.0) {
            return Err(SimError::invalid_field("coil.inductance", "L1 must be > 0"));
        }
        if !(self.resistance > 0.0) {
            return Err(SimError::invalid_field("coil.resistance", "R1 must be > 0"));
        }
        Ok(())
    }
}

/// Field of one straight segment carrying unit current, from `a` to `b`,
/// evaluated at `p`. Returns the geometric factor; multiply by
/// `MU0_OVER_4PI * I` for tesla.
///
/// Uses the compact two-endpoint form: with R1 = p - a, R2 = p - b,
/// B ∝ (R1 x R2) (|R1| + |R2|) / (|R1||R2| (|R1||R2| + R1.R2)).
fn segment_factor(a: &Vector3<f64>, b: &Vector3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    let r1 = p - a;
    let r2 = p - b;
    let n1 = r1.norm();
    let n2 = r2.norm();
    let denom = n1 * n2 * (n1 * n2 + r1.dot(&r2));
    r1.cross(&r2) * ((n1 + n2) / denom)
}

/// Distance from `p` to the segment `a`..`b`.
fn segment_distance(a: &Vector3<f64>, b: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Magnetic flux density of `coil` at `point` for the given drive `current`.
///
/// Linear in `current` by construction: the geometric sum is evaluated once
/// and scaled by `MU0/(4 pi) * N * I`.
pub fn field_at(coil: &CoilChannel, point: Vector3<f64>, current: f64) -> Result<FieldVector> {
    let mut sum = Vector3::zeros();
    for l in &coil.loops {
        let c = l.corners();
        for k in 0..4 {
            let a = c[k];
            let b = c[(k + 1) % 4];
            if segment_distance(&a, &b, &point) <= SINGULAR_DISTANCE {
                return Err(SimError::SingularFieldPoint {
                    distance: segment_distance(&a, &b, &point),
                });
            }
            sum += segment_factor(&a, &b, &point);
        }
    }
    let scale = MU0_OVER_4PI * coil.turns_per_loop as f64 * current;
    Ok(FieldVector::from_vector(sum * scale))
}

/// Coil sensitivity [T/A]: the field at `point` per ampere of drive current.
///
/// By reciprocity this is also the flux coupling of a unit dipole at `point`.
pub fn sensitivity(coil: &CoilChannel, point: Vector3<f64>) -> Result<FieldVector> {
    field_at(coil, point, 1.0)
}

/// Receive voltage induced in `coil` by a point dipole whose moment changes
/// at `dipole_moment_rate` [A m^2/s].
///
/// Sign convention: v = -S . dm/dt where S is the coil sensitivity at the
/// dipole position (flux linkage = S . m, v = -d(flux)/dt).
pub fn induced_voltage(
    coil: &CoilChannel,
    dipole_position: Vector3<f64>,
    dipole_moment_rate: Vector3<f64>,
) -> Result<f64> {
    let s = sensitivity(coil, dipole_position)?;
    Ok(induced_voltage_from_sensitivity(&s, dipole_moment_rate))
}

/// Same as [`induced_voltage`] with a precomputed sensitivity vector; used by
/// the sequencer, where the dipole position is fixed for a whole run.
pub fn induced_voltage_from_sensitivity(
    sens: &FieldVector,
    dipole_moment_rate: Vector3<f64>,
) -> f64 {
    -sens.dot(&dipole_moment_rate)
}

/// On-axis field of a single square loop (side `a`, unit current, one turn)
/// at distance `z` from the loop plane. Closed form used by tests and by the
/// scenario tooling to pick turn counts.
pub fn square_loop_axis_field(side: f64, z: f64) -> f64 {
    let a2 = side * side;
    let z4 = 4.0 * z * z;
    4.0 * MU0 * a2 / (std::f64::consts::PI * (z4 + a2) * (z4 + 2.0 * a2).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn single_loop(side: f64) -> CoilChannel {
        CoilChannel {
            loops: vec![SquareLoop {
                center: Vector3::zeros(),
                side,
                normal: Vector3::z(),
            }],
            turns_per_loop: 1,
            inductance: 730e-6,
            resistance: 3.38,
            label: "test".into(),
        }
    }

    fn paper_pair(turns: u32) -> CoilChannel {
        CoilChannel::square_helmholtz_pair(0.095, 0.107, turns, 730e-6, 3.38, "x")
    }

    /// Brute-force Biot-Savart by subdividing every edge into short segments.
    fn quadrature_field(coil: &CoilChannel, p: Vector3<f64>, current: f64, n_sub: usize) -> Vector3<f64> {
        let mut b = Vector3::zeros();
        for l in &coil.loops {
            let c = l.corners();
            for k in 0..4 {
                let a = c[k];
                let e = c[(k + 1) % 4];
                let dl = (e - a) / n_sub as f64;
                for j in 0..n_sub {
                    let mid = a + dl * (j as f64 + 0.5);
                    let r = p - mid;
                    let rn = r.norm();
                    b += dl.cross(&r) / (rn * rn * rn);
                }
            }
        }
        b * (MU0_OVER_4PI * coil.turns_per_loop as f64 * current)
    }

    #[test]
    fn center_field_matches_closed_form() {
        // ||B|| at the center of a square loop = 2 sqrt(2) mu0 I / (pi a)
        let a = 0.095;
        let coil = single_loop(a);
        let b = field_at(&coil, Vector3::zeros(), 1.0).unwrap();
        let expect = 2.0 * 2f64.sqrt() * MU0 / (PI * a);
        assert_relative_eq!(b.norm(), expect, max_relative = 1e-12);
        assert_relative_eq!(b.bz, expect, max_relative = 1e-12);
        assert!(b.bx.abs() < 1e-18 && b.by.abs() < 1e-18);
    }

    #[test]
    fn analytic_matches_segment_quadrature() {
        let coil = paper_pair(1);
        for p in [
            Vector3::zeros(),
            Vector3::new(0.01, -0.02, 0.03),
            Vector3::new(0.2, 0.1, -0.05),
        ] {
            let exact = field_at(&coil, p, 2.5).unwrap().as_vector();
            let approx_b = quadrature_field(&coil, p, 2.5, 20_000);
            assert_relative_eq!(exact.x, approx_b.x, max_relative = 1e-6, epsilon = 1e-16);
            assert_relative_eq!(exact.y, approx_b.y, max_relative = 1e-6, epsilon = 1e-16);
            assert_relative_eq!(exact.z, approx_b.z, max_relative = 1e-6, epsilon = 1e-16);
        }
    }

    #[test]
    fn zero_current_gives_zero_field() {
        let coil = paper_pair(41);
        let b = field_at(&coil, Vector3::new(0.01, 0.0, 0.0), 0.0).unwrap();
        assert_eq!(b, FieldVector::zero());
    }

    #[test]
    fn pair_midpoint_field_matches_on_axis_formula() {
        // 95 mm sides, 107 mm apart, 1 turn each, 1 A -> ~8.2 uT at midpoint.
        let coil = paper_pair(1);
        let b = field_at(&coil, Vector3::zeros(), 1.0).unwrap();
        let expect = 2.0 * square_loop_axis_field(0.095, 0.107 / 2.0);
        assert_relative_eq!(b.norm(), expect, max_relative = 1e-12);
        assert_relative_eq!(b.norm(), 8.21e-6, max_relative = 0.01);
    }

    #[test]
    fn sensitivity_equals_unit_current_field_and_scales_with_turns() {
        let one = sensitivity(&paper_pair(1), Vector3::zeros()).unwrap();
        let many = sensitivity(&paper_pair(41), Vector3::zeros()).unwrap();
        assert_relative_eq!(many.bz, 41.0 * one.bz, max_relative = 1e-12);
        let direct = field_at(&paper_pair(41), Vector3::zeros(), 1.0).unwrap();
        assert_eq!(many, direct);
    }

    #[test]
    fn default_turns_give_paper_sensitivity() {
        // N = 41 reproduces ~333 uT/A (180 uT at 540 mA).
        let s = sensitivity(&paper_pair(41), Vector3::zeros()).unwrap();
        assert_relative_eq!(s.norm(), 333e-6, max_relative = 0.02);
        assert_relative_eq!(s.norm() * 0.54, 180e-6, max_relative = 0.02);
    }

    #[test]
    fn far_field_decays_as_dipole() {
        let coil = paper_pair(1);
        // magnitude should fall by ~8x per doubling of distance, within 5%
        let mut prev = field_at(&coil, Vector3::new(0.0, 0.0, 2.0), 1.0).unwrap().norm();
        for z in [4.0, 8.0] {
            let cur = field_at(&coil, Vector3::new(0.0, 0.0, z), 1.0).unwrap().norm();
            let ratio = prev / cur;
            assert!((ratio - 8.0).abs() / 8.0 < 0.05, "ratio {ratio} at z {z}");
            prev = cur;
        }
    }

    #[test]
    fn point_on_segment_is_singular() {
        let coil = single_loop(0.1);
        // midpoint of an edge lies on the conductor
        let corner = coil.loops[0].corners();
        let on_edge = (corner[0] + corner[1]) * 0.5;
        match field_at(&coil, on_edge, 1.0) {
            Err(SimError::SingularFieldPoint { .. }) => {}
            other => panic!("expected singularity error, got {other:?}"),
        }
    }

    #[test]
    fn static_and_orthogonal_dipoles_induce_nothing() {
        let coil = paper_pair(41);
        let pos = Vector3::zeros();
        assert_eq!(induced_voltage(&coil, pos, Vector3::zeros()).unwrap(), 0.0);
        // at the pair center the sensitivity is axial; a transverse rate couples nothing
        let v = induced_voltage(&coil, pos, Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let s = sensitivity(&coil, pos).unwrap();
        assert!(v.abs() < 1e-9 * s.norm());
    }

    #[test]
    fn sinusoidal_moment_peak_voltage() {
        // peak v = S m theta0 omega ~ 2.8 mV for the paper-like numbers
        let coil = paper_pair(41);
        let s = sensitivity(&coil, Vector3::zeros()).unwrap();
        let (m, theta0, omega) = (0.0335, 0.2, 2.0 * PI * 200.0);
        // moment swings about x, rate peaks along z with magnitude m theta0 omega
        let rate = Vector3::new(0.0, 0.0, m * theta0 * omega);
        let v = induced_voltage(&coil, Vector3::zeros(), rate).unwrap();
        assert_relative_eq!(v.abs(), s.norm() * m * theta0 * omega, max_relative = 1e-12);
        assert_relative_eq!(v.abs(), 2.8e-3, max_relative = 0.02);
    }

    #[test]
    fn midplane_transverse_components_vanish() {
        let coil = paper_pair(7);
        let b = field_at(&coil, Vector3::zeros(), 1.0).unwrap();
        assert!(b.bx.abs() < 1e-9 * b.bz.abs());
        assert!(b.by.abs() < 1e-9 * b.bz.abs());
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        let mut coil = paper_pair(41);
        coil.loops[0].normal *= 2.0;
        assert!(coil.validate().is_err());
        let mut coil = paper_pair(41);
        coil.inductance = 0.0;
        assert!(coil.validate().is_err());
        let mut coil = paper_pair(41);
        coil.turns_per_loop = 0;
        assert!(coil.validate().is_err());
        assert!(paper_pair(41).validate().is_ok());
    }
}
