//! Physical constants (SI, CODATA 2018 exact where defined).

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK / (2.0 * std::f64::consts::PI);
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Mass of a ⁸⁵Rb atom, kg.
pub const RB85_MASS: f64 = 84.911_789_738 * ATOMIC_MASS_UNIT;
/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.806_65;
