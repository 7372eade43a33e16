//! Obstacle localisation from two radial ranges, precision dilution, and
//! fusion of a direction estimate with the ranges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::music::DoaEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorPose {
    pub x: f64,
    pub y: f64,
}

impl SensorPose {
    pub fn new(x: f64, y: f64) -> Self {
        SensorPose { x, y }
    }
}

/// A range reading; a non-finite or non-positive range marks it missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub sensor: SensorPose,
    pub range_m: f64,
    pub sigma_r: f64,
}

impl RangeMeasurement {
    pub fn new(sensor: SensorPose, range_m: f64, sigma_r: f64) -> Self {
        RangeMeasurement {
            sensor,
            range_m,
            sigma_r,
        }
    }

    pub fn missing(sensor: SensorPose, sigma_r: f64) -> Self {
        Self::new(sensor, f64::NAN, sigma_r)
    }

    pub fn is_valid(&self) -> bool {
        self.range_m.is_finite() && self.range_m > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEllipse {
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Direction of the major axis, degrees counter-clockwise from +x.
    pub orientation_deg: f64,
    /// Standard deviations along x and y.
    pub sigma_x: f64,
    pub sigma_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixSource {
    Triangulation,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    pub x: f64,
    pub y: f64,
    pub ellipse: ErrorEllipse,
    pub source: FixSource,
}

/// Intersection points of the two range circles, forward (larger `y`) first.
pub fn intersect_two_circles(m1: &RangeMeasurement, m2: &RangeMeasurement) -> Result<Vec<(f64, f64)>> {
    let (p1, p2) = (m1.sensor, m2.sensor);
    let (dx, dy) = (p2.x - p1.x, p2.y - p1.y);
    let d = dx.hypot(dy);
    if d == 0.0 {
        return Err(Error::CoincidentSensors);
    }
    if !(m1.is_valid() && m2.is_valid()) {
        return Err(Error::NoIntersection);
    }
    let (r1, r2) = (m1.range_m, m2.range_m);
    let tol = 1e-12 * (r1 + r2 + d);
    if d > r1 + r2 + tol || d < (r1 - r2).abs() - tol {
        return Err(Error::NoIntersection);
    }
    // Along-baseline distance from sensor 1, then the perpendicular offset.
    let a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
    let h2 = r1 * r1 - a * a;
    let h = if h2 > 0.0 { h2.sqrt() } else { 0.0 };
    let (ux, uy) = (dx / d, dy / d);
    let (bx, by) = (p1.x + a * ux, p1.y + a * uy);
    let q1 = (bx - h * uy, by + h * ux);
    let q2 = (bx + h * uy, by - h * ux);
    if h == 0.0 {
        return Ok(vec![q1]);
    }
    let mut pts = vec![q1, q2];
    pts.sort_by(|p, q| q.1.total_cmp(&p.1));
    Ok(pts)
}

/// Eigen-axes of a symmetric 2x2 covariance `[[sxx, sxy], [sxy, syy]]`.
fn ellipse_from_cov(sxx: f64, sxy: f64, syy: f64) -> ErrorEllipse {
    let mean = 0.5 * (sxx + syy);
    let disc = (0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy).sqrt();
    let (l1, l2) = (mean + disc, (mean - disc).max(0.0));
    let orientation = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    ErrorEllipse {
        semi_major: l1.sqrt(),
        semi_minor: l2.sqrt(),
        orientation_deg: orientation.to_degrees(),
        sigma_x: sxx.max(0.0).sqrt(),
        sigma_y: syy.max(0.0).sqrt(),
    }
}

/// Linearised position uncertainty `sigma_r^2 (J^T J)^-1`, where the rows of
/// `J` are unit lines of sight from each sensor to the point.
pub fn dilution_ellipse(m1: &RangeMeasurement, m2: &RangeMeasurement, point: (f64, f64)) -> Result<ErrorEllipse> {
    let mut rows = [(0.0, 0.0); 2];
    for (row, m) in rows.iter_mut().zip([m1, m2]) {
        let (dx, dy) = (point.0 - m.sensor.x, point.1 - m.sensor.y);
        let r = dx.hypot(dy);
        if r == 0.0 {
            return Err(Error::SingularGeometry);
        }
        *row = (dx / r, dy / r);
    }
    let det = rows[0].0 * rows[1].1 - rows[0].1 * rows[1].0;
    if det.abs() < 1e-12 {
        return Err(Error::SingularGeometry);
    }
    // J is square, so (J^T J)^-1 = J^-1 J^-T; per-row sigmas enter as W = diag(sigma^2).
    let (s1, s2) = (m1.sigma_r * m1.sigma_r, m2.sigma_r * m2.sigma_r);
    let inv = [
        [rows[1].1 / det, -rows[0].1 / det],
        [-rows[1].0 / det, rows[0].0 / det],
    ];
    let sxx = inv[0][0] * inv[0][0] * s1 + inv[0][1] * inv[0][1] * s2;
    let syy = inv[1][0] * inv[1][0] * s1 + inv[1][1] * inv[1][1] * s2;
    let sxy = inv[0][0] * inv[1][0] * s1 + inv[0][1] * inv[1][1] * s2;
    Ok(ellipse_from_cov(sxx, sxy, syy))
}

/// Places the obstacle on the ray from the sensor midpoint at the estimated
/// angle, at the mean of the valid ranges.
///
/// Aliased estimates pick the ambiguity member nearest the circle
/// intersection when one exists, else the member closest to broadside.
/// A fallback estimate degrades to plain triangulation.
pub fn fuse_doa_with_ranges(
    doa: &DoaEstimate,
    m1: &RangeMeasurement,
    m2: &RangeMeasurement,
    sigma_theta_deg: f64,
) -> Result<PositionFix> {
    let intersection = intersect_two_circles(m1, m2).ok().map(|p| p[0]);
    if doa.is_fallback() {
        let point = intersection.ok_or(Error::UnusableFallback)?;
        return Ok(PositionFix {
            x: point.0,
            y: point.1,
            ellipse: dilution_ellipse(m1, m2, point)?,
            source: FixSource::Triangulation,
        });
    }
    let valid: Vec<&RangeMeasurement> = [m1, m2].into_iter().filter(|m| m.is_valid()).collect();
    if valid.is_empty() {
        return Err(Error::InvalidScenario("no valid range".into()));
    }
    let r_mean = valid.iter().map(|m| m.range_m).sum::<f64>() / valid.len() as f64;
    let sigma_r = valid.iter().map(|m| m.sigma_r).sum::<f64>() / valid.len() as f64;
    let origin = (0.5 * (m1.sensor.x + m2.sensor.x), 0.5 * (m1.sensor.y + m2.sensor.y));
    let ray_point = |theta_deg: f64| {
        let t = theta_deg.to_radians();
        (origin.0 + r_mean * t.sin(), origin.1 + r_mean * t.cos())
    };

    let candidates = if doa.ambiguity.is_empty() {
        vec![doa.angle_deg]
    } else {
        doa.ambiguity.clone()
    };
    let theta = if candidates.len() == 1 {
        candidates[0]
    } else if let Some(p) = intersection {
        *candidates
            .iter()
            .min_by(|a, b| {
                let (pa, pb) = (ray_point(**a), ray_point(**b));
                let da = (pa.0 - p.0).hypot(pa.1 - p.1);
                let db = (pb.0 - p.0).hypot(pb.1 - p.1);
                da.total_cmp(&db)
            })
            .unwrap()
    } else {
        *candidates
            .iter()
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap()
    };

    let (x, y) = ray_point(theta);
    let transverse = r_mean * sigma_theta_deg.to_radians().tan().abs();
    let radial = sigma_r / (valid.len() as f64).sqrt();
    // Radial axis along the ray (sin t, cos t); transverse perpendicular to it.
    let t = theta.to_radians();
    let (ux, uy) = (t.sin(), t.cos());
    let (vx, vy) = (uy, -ux);
    let (rr, tt) = (radial * radial, transverse * transverse);
    let sxx = rr * ux * ux + tt * vx * vx;
    let syy = rr * uy * uy + tt * vy * vy;
    let sxy = rr * ux * uy + tt * vx * vy;
    Ok(PositionFix {
        x,
        y,
        ellipse: ellipse_from_cov(sxx, sxy, syy),
        source: FixSource::Fused,
    })
}
