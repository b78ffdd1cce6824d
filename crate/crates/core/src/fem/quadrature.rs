//! Quadrature rules on the reference triangle and the unit interval.

/// Seven-point degree-5 rule on a triangle. Barycentric points, weights sum to 1
/// (multiply by the triangle area).
pub const TRI7: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_769_82;
    const B1: f64 = 0.470_142_064_105_115_1;
    const W1: f64 = 0.132_394_152_788_506_2;
    const A2: f64 = 0.797_426_985_353_087_3;
    const B2: f64 = 0.101_286_507_323_456_3;
    const W2: f64 = 0.125_939_180_544_827_1;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Three-point Gauss-Legendre rule on [0, 1]; weights sum to 1.
pub const GAUSS3: [(f64, f64); 3] = {
    const D: f64 = 0.387_298_334_620_741_7; // sqrt(3/5) / 2
    [(0.5 - D, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + D, 5.0 / 18.0)]
};

#[inline]
pub fn bary_to_point(p: [[f64; 2]; 3], l: [f64; 3]) -> [f64; 2] {
    [
        l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
        l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
    ]
}

#[inline]
pub fn lerp(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_exact(i: u32, j: u32) -> f64 {
        // integral of x^i y^j over the unit right triangle = i! j! / (i+j+2)!
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        f(i) * f(j) / f(i + j + 2)
    }

    #[test]
    fn tri7_is_exact_to_degree_five() {
        for i in 0..=5u32 {
            for j in 0..=(5 - i) {
                let q: f64 = TRI7
                    .iter()
                    .map(|(l, w)| 0.5 * w * l[1].powi(i as i32) * l[2].powi(j as i32))
                    .sum();
                assert!((q - monomial_exact(i, j)).abs() < 1e-15, "x^{i} y^{j}");
            }
        }
    }

    #[test]
    fn gauss3_is_exact_to_degree_five() {
        for k in 0..=5 {
            let q: f64 = GAUSS3.iter().map(|(s, w)| w * s.powi(k)).sum();
            assert!((q - 1.0 / f64::from(k as u32 + 1)).abs() < 1e-15);
        }
    }
}
