//! Analytic vector fields used for forcing, initial data and test functions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::Rect;

/// A vector field on the domain, in coordinates relative to the domain box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Zero,
    Constant { value: [f64; 2] },
    /// `sin(k1 pi x~) sin(k2 pi y~) * amplitude`, with `x~, y~` in `[0, 1]`.
    SineProduct { k: [u32; 2], amplitude: [f64; 2] },
    Sum { terms: Vec<FieldSpec> },
}

impl FieldSpec {
    pub fn sine(k: [u32; 2], amplitude: [f64; 2]) -> Self {
        Self::SineProduct { k, amplitude }
    }

    pub fn eval(&self, domain: &Rect, x: [f64; 2]) -> [f64; 2] {
        match self {
            Self::Zero => [0.0; 2],
            Self::Constant { value } => *value,
            Self::SineProduct { k, amplitude } => {
                let s = sine_profile(domain, *k, x);
                [s * amplitude[0], s * amplitude[1]]
            }
            Self::Sum { terms } => terms.iter().fold([0.0; 2], |acc, t| {
                let v = t.eval(domain, x);
                [acc[0] + v[0], acc[1] + v[1]]
            }),
        }
    }

    /// Gradient `g[i][j] = d f_i / d x_j`.
    pub fn gradient(&self, domain: &Rect, x: [f64; 2]) -> [[f64; 2]; 2] {
        match self {
            Self::Zero | Self::Constant { .. } => [[0.0; 2]; 2],
            Self::SineProduct { k, amplitude } => {
                let (lx, ly) = (domain.width(), domain.height());
                let (a1, a2) = (k[0] as f64 * PI / lx, k[1] as f64 * PI / ly);
                let (xr, yr) = (x[0] - domain.min[0], x[1] - domain.min[1]);
                let d = [(a1 * xr).cos() * a1 * (a2 * yr).sin(), (a1 * xr).sin() * (a2 * yr).cos() * a2];
                [[amplitude[0] * d[0], amplitude[0] * d[1]], [amplitude[1] * d[0], amplitude[1] * d[1]]]
            }
            Self::Sum { terms } => terms.iter().fold([[0.0; 2]; 2], |mut acc, t| {
                let g = t.gradient(domain, x);
                for i in 0..2 {
                    for j in 0..2 {
                        acc[i][j] += g[i][j];
                    }
                }
                acc
            }),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Constant { value } => *value == [0.0; 2],
            Self::SineProduct { amplitude, .. } => *amplitude == [0.0; 2],
            Self::Sum { terms } => terms.iter().all(Self::is_zero),
        }
    }
}

fn sine_profile(domain: &Rect, k: [u32; 2], x: [f64; 2]) -> f64 {
    let xr = (x[0] - domain.min[0]) / domain.width();
    let yr = (x[1] - domain.min[1]) / domain.height();
    (k[0] as f64 * PI * xr).sin() * (k[1] as f64 * PI * yr).sin()
}

/// Scalar time factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant,
    /// `a + b t`
    Affine { a: f64, b: f64 },
    /// `a exp(rate t)`
    Exponential { a: f64, rate: f64 },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Self::Constant => 1.0,
            Self::Affine { a, b } => a + b * t,
            Self::Exponential { a, rate } => a * (rate * t).exp(),
        }
    }
}

/// Separable forcing `f(t, x) = sum_i a_i(t) F_i(x)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Forcing {
    pub terms: Vec<(FieldSpec, TimeProfile)>,
}

impl Forcing {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn steady(field: FieldSpec) -> Self {
        Self { terms: vec![(field, TimeProfile::Constant)] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|(f, _)| f.is_zero())
    }

    pub fn eval(&self, domain: &Rect, t: f64, x: [f64; 2]) -> [f64; 2] {
        self.terms.iter().fold([0.0; 2], |acc, (f, p)| {
            let v = f.eval(domain, x);
            let a = p.eval(t);
            [acc[0] + a * v[0], acc[1] + a * v[1]]
        })
    }
}

/// Weak-error test functions: two symmetric single-component modes and one asymmetric mode.
pub fn default_test_functions() -> Vec<FieldSpec> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        FieldSpec::sine([1, 1], [1.0, 0.0]),
        FieldSpec::sine([1, 1], [0.0, 1.0]),
        FieldSpec::sine([2, 1], [r, r]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_difference() {
        let d = Rect { min: [0.0, 0.0], max: [2.0, 1.0] };
        let f = FieldSpec::Sum { terms: vec![FieldSpec::sine([1, 2], [1.0, -0.5]), FieldSpec::Constant { value: [3.0, 0.0] }] };
        let x = [0.7, 0.3];
        let g = f.gradient(&d, x);
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (f.eval(&d, xp), f.eval(&d, xm));
            for i in 0..2 {
                assert!((g[i][j] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn forcing_is_separable() {
        let f = Forcing { terms: vec![(FieldSpec::sine([1, 1], [1.0, 1.0]), TimeProfile::Affine { a: 1.0, b: 2.0 })] };
        let v = f.eval(&Rect::unit(), 0.5, [0.5, 0.5]);
        assert!((v[0] - 2.0).abs() < 1e-14 && (v[1] - 2.0).abs() < 1e-14);
        assert!(Forcing::none().is_zero());
    }

    #[test]
    fn serde_round_trip() {
        let f = FieldSpec::sine([2, 1], [0.5, 0.5]);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<FieldSpec>(&s).unwrap(), f);
    }
}
