//! Small math utilities shared across the crate: vector aliases, the golden
//! ratio constant, spherical coordinates, and a dense 6x6 matrix exponential.

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Vec6 = nalgebra::Vector6<f64>;
pub type Mat6 = nalgebra::Matrix6<f64>;

pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

/// Unit vector for polar angle `theta` (from the +z pole) and azimuth `phi`.
pub fn spherical_dir(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

/// Matrix exponential by scaling-and-squaring with a Taylor kernel.
///
/// Robust for arbitrary real matrices, including defective ones where an
/// eigenbasis does not exist; agrees with diagonalization wherever that is
/// defined. Accuracy is far below the 10% agreement budget its caller needs.
pub fn expm(m: &Mat6) -> Mat6 {
    let norm = m.amax();
    // Scale until the Taylor series of the scaled matrix converges quickly.
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scaled = m / f64::powi(2.0, squarings as i32);

    let mut result = Mat6::identity();
    let mut term = Mat6::identity();
    for k in 1..=24 {
        term = (term * scaled) / k as f64;
        result += term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result * result;
    }
    result
}
