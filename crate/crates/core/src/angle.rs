use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Signed shortest difference `a - b`, wrapped.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}
