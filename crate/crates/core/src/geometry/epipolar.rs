use nalgebra::{Matrix3, Vector3};

use super::GeometryError;

/// Minimum stereo baseline (m).
const MIN_BASELINE: f64 = 1e-9;

/// Fundamental matrix of a camera pair.
///
/// Built as `K_l⁻ᵀ [t]ₓ R K_r⁻¹` where `(R, t)` maps right-camera coordinates
/// into the left camera (`X_l = R X_r + t`), so corresponding pixels satisfy
/// `c_lᵀ F c_r = 0`. `F · c_r` is the epipolar line in the left image and
/// `Fᵀ · c_l` the line in the right image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// The same pair with the image roles swapped.
    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `c_lᵀ F c_r`.
    pub fn residual(&self, left: (f64, f64), right: (f64, f64)) -> f64 {
        let l = Vector3::new(left.0, left.1, 1.0);
        let r = Vector3::new(right.0, right.1, 1.0);
        l.dot(&(self.0 * r))
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0 * k)
    }
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

pub fn fundamental_matrix(
    k_l: &Matrix3<f64>,
    k_r: &Matrix3<f64>,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Result<FundamentalMatrix, GeometryError> {
    let baseline = t.norm();
    if !(baseline >= MIN_BASELINE) {
        return Err(GeometryError::DegenerateBaseline(baseline));
    }
    let kl_inv = k_l.try_inverse().ok_or(GeometryError::SingularIntrinsics)?;
    let kr_inv = k_r.try_inverse().ok_or(GeometryError::SingularIntrinsics)?;
    Ok(FundamentalMatrix(kl_inv.transpose() * skew(t) * r * kr_inv))
}

/// Image line `a·u + b·v + c = 0` with `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2D {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2D {
    pub fn from_coeffs(a: f64, b: f64, c: f64) -> Result<Self, GeometryError> {
        let n = a.hypot(b);
        let scale = a.abs().max(b.abs()).max(c.abs());
        if !(n > 1e-12 * scale) || !n.is_finite() || scale == 0.0 {
            return Err(GeometryError::ZeroLine);
        }
        Ok(Self { a: a / n, b: b / n, c: c / n })
    }
}

/// `normalize(F · (u, v, 1)ᵀ)`.
pub fn epipolar_line(f: &FundamentalMatrix, pixel: (f64, f64)) -> Result<Line2D, GeometryError> {
    let l = f.0 * Vector3::new(pixel.0, pixel.1, 1.0);
    Line2D::from_coeffs(l.x, l.y, l.z)
}

pub fn point_line_distance(line: &Line2D, pixel: (f64, f64)) -> f64 {
    (line.a * pixel.0 + line.b * pixel.1 + line.c).abs()
}
