//! Spherical-earth geodesy: great-circle distance, initial bearing and
//! the antenna-relative angle used to project RTD ranges onto a cell pair.
//!
//! Degrees are converted to radians as `pi * x / 180` everywhere so the
//! arithmetic follows the haversine formulation term by term.

use thiserror::Error;

use crate::scalar::Scalar;

/// Mean earth radius used by default, in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("earth radius must be positive, got {0}")]
    Radius(f64),
    #[error("bearing undefined between coincident points")]
    CoincidentPoints,
}

/// A geodetic position in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint<F> {
    lat: F,
    lon: F,
}

impl<F: Scalar> GeoPoint<F> {
    pub fn new(lat: F, lon: F) -> Result<Self, GeoError> {
        let ninety = F::lit(90.0);
        let one_eighty = F::lit(180.0);
        if !(lat >= -ninety && lat <= ninety) {
            return Err(GeoError::Latitude(lat.to_f64_lossy()));
        }
        if !(lon >= -one_eighty && lon <= one_eighty) {
            return Err(GeoError::Longitude(lon.to_f64_lossy()));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> F {
        self.lat
    }

    pub fn lon(&self) -> F {
        self.lon
    }

    pub fn cast<G: Scalar>(&self) -> GeoPoint<G> {
        GeoPoint {
            lat: G::lit(self.lat.to_f64_lossy()),
            lon: G::lit(self.lon.to_f64_lossy()),
        }
    }
}

/// Spherical earth with a fixed radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthModel<F> {
    radius_km: F,
}

impl<F: Scalar> EarthModel<F> {
    pub fn new(radius_km: F) -> Result<Self, GeoError> {
        if !radius_km.is_finite() || radius_km <= F::zero() {
            return Err(GeoError::Radius(radius_km.to_f64_lossy()));
        }
        Ok(Self { radius_km })
    }

    pub fn radius_km(&self) -> F {
        self.radius_km
    }
}

impl<F: Scalar> Default for EarthModel<F> {
    fn default() -> Self {
        Self {
            radius_km: F::lit(EARTH_RADIUS_KM),
        }
    }
}

#[inline]
fn to_rad<F: Scalar>(deg: F) -> F {
    F::PI() * deg / F::lit(180.0)
}

#[inline]
fn to_deg<F: Scalar>(rad: F) -> F {
    rad * F::lit(180.0) / F::PI()
}

/// Wraps any finite angle into `[0, 360)`.
pub fn normalize_deg<F: Scalar>(deg: F) -> F {
    let full = F::lit(360.0);
    let mut d = deg % full;
    if d < F::zero() {
        d = d + full;
    }
    if d >= full {
        d = F::zero();
    }
    d
}

/// Great-circle distance between two points (haversine), in kilometres.
pub fn haversine_km<F: Scalar>(a: GeoPoint<F>, b: GeoPoint<F>, earth: EarthModel<F>) -> F {
    let two = F::lit(2.0);
    let d_phi = to_rad(a.lat - b.lat);
    let d_lambda = to_rad(a.lon - b.lon);
    let s_phi = (d_phi / two).sin();
    let s_lambda = (d_lambda / two).sin();
    let h = s_phi * s_phi + to_rad(a.lat).cos() * to_rad(b.lat).cos() * s_lambda * s_lambda;
    // rounding can push h a hair outside [0, 1]
    let h = h.max(F::zero()).min(F::one());
    two * earth.radius_km * h.sqrt().atan2((F::one() - h).sqrt())
}

/// Initial great-circle bearing from `from` to `to`, clockwise from true north, in `[0, 360)`.
pub fn bearing_deg<F: Scalar>(from: GeoPoint<F>, to: GeoPoint<F>) -> Result<F, GeoError> {
    if from == to {
        return Err(GeoError::CoincidentPoints);
    }
    let phi1 = to_rad(from.lat);
    let phi2 = to_rad(to.lat);
    let d_lambda = to_rad(to.lon - from.lon);
    let y = d_lambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * d_lambda.cos();
    Ok(normalize_deg(to_deg(y.atan2(x))))
}

/// Smallest absolute angle between an antenna azimuth and a bearing, in `[0, 180]`.
pub fn azimuth_offset_deg<F: Scalar>(antenna_azimuth: F, bearing_to_other: F) -> F {
    let full = F::lit(360.0);
    let diff = (normalize_deg(antenna_azimuth) - normalize_deg(bearing_to_other)).abs();
    diff.min(full - diff)
}

/// Point reached by travelling `distance_km` along the great circle leaving `from` at `bearing`.
pub fn destination<F: Scalar>(
    from: GeoPoint<F>,
    bearing: F,
    distance_km: F,
    earth: EarthModel<F>,
) -> GeoPoint<F> {
    let delta = distance_km / earth.radius_km;
    let theta = to_rad(bearing);
    let phi1 = to_rad(from.lat);
    let lambda1 = to_rad(from.lon);
    let sin_phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos())
        .max(-F::one())
        .min(F::one());
    let phi2 = sin_phi2.asin();
    let lambda2 =
        lambda1 + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);
    let lon = normalize_deg(to_deg(lambda2) + F::lit(180.0)) - F::lit(180.0);
    let lat = to_deg(phi2).max(F::lit(-90.0)).min(F::lit(90.0));
    GeoPoint { lat, lon }
}
