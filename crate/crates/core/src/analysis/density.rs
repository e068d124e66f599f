use serde::Serialize;

use super::quantiles::{quantile_sorted, sorted_copy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityCurve {
    pub parameter: String,
    pub bandwidth: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

/// Silverman's rule-of-thumb bandwidth `0.9 min(sd, IQR/1.34) n^(-1/5)`.
/// Falls back to the sd (or 1) when the IQR or sd is zero.
pub fn silverman_bandwidth(draws: &[f64]) -> f64 {
    let n = draws.len() as f64;
    let s = sorted_copy(draws);
    let m = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let iqr = (quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 1.0,
    };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density estimate on `points` equally spaced values
/// spanning the draws plus three bandwidths on each side.
pub fn kde(parameter: &str, draws: &[f64], points: usize) -> DensityCurve {
    let h = silverman_bandwidth(draws);
    let lo = draws.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (points.max(2) - 1) as f64;
    let norm = 1.0 / (draws.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..points.max(2)).map(|i| lo + step * i as f64).collect();
    let density = x
        .iter()
        .map(|xi| {
            norm * draws
                .iter()
                .map(|d| {
                    let u = (xi - d) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    DensityCurve {
        parameter: parameter.to_string(),
        bandwidth: h,
        x,
        density,
    }
}

/// Long-format CSV `parameter,x,density`.
pub fn density_csv(curves: &[DensityCurve]) -> String {
    let mut out = String::from("parameter,x,density\n");
    for c in curves {
        for (x, d) in c.x.iter().zip(&c.density) {
            out.push_str(&format!("{},{x:?},{d:?}\n", c.parameter));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_to_one() {
        let draws: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let c = kde("x", &draws, 400);
        let step = c.x[1] - c.x[0];
        let area: f64 = c.density.iter().sum::<f64>() * step;
        assert!((area - 1.0).abs() < 1e-3, "{area}");
    }
}
