//! Direct evaluation of setup effects and MDEs from their analysis-group definitions.

use super::{bisect, normal_cdf_by_quadrature};
use demlab::pse::{Group, PseScenario};

/// z_{0.975} − z_{0.2} from a quadrature CDF.
pub fn oracle_z() -> f64 {
    let q = |p: f64| bisect(&|x| normal_cdf_by_quadrature(x) - p, -10.0, 10.0);
    q(0.975) - q(0.2)
}

/// Analysis group as (size, mean, variance), built as the size-weighted mixture of its cells.
pub fn arm(cells: &[(f64, f64, f64)]) -> (f64, f64, f64) {
    let n: f64 = cells.iter().map(|c| c.0).sum();
    let mu = cells.iter().map(|c| c.0 * c.1).sum::<f64>() / n;
    let var = cells.iter().map(|c| c.0 * c.2).sum::<f64>() / n;
    (n, mu, var)
}

/// Δ and θ* from the analysis-group definitions: difference of group means and the
/// z-test MDE z·√(Σ σ²_X/n_X).
pub fn oracle(setup: u8, s: &PseScenario, z: f64) -> (f64, f64) {
    use Group::*;
    let c = |g: Group, n: f64| (n, s.mu(g), s.var(g));
    let (n0, n1, n2, n3) = (s.n0, s.n1, s.n2, s.n3);
    let groups = match setup {
        1 => vec![arm(&[c(IPhi, n3 / 2.0)]), arm(&[c(IPsi, n3 / 2.0)])],
        2 => vec![
            arm(&[
                c(C0, n0 / 2.0),
                c(I1, n1 / 2.0),
                c(C2, n2 / 2.0),
                c(IPhi, n3 / 2.0),
            ]),
            arm(&[
                c(C0, n0 / 2.0),
                c(C1, n1 / 2.0),
                c(I2, n2 / 2.0),
                c(IPsi, n3 / 2.0),
            ]),
        ],
        3 => vec![
            arm(&[c(I1, n1 / 2.0), c(C2, n2 / 2.0), c(IPhi, n3 / 2.0)]),
            arm(&[c(C1, n1 / 2.0), c(I2, n2 / 2.0), c(IPsi, n3 / 2.0)]),
        ],
        _ => vec![
            arm(&[c(C1, n1 / 4.0), c(C3, n3 / 4.0)]),
            arm(&[c(I1, n1 / 4.0), c(IPhi, n3 / 4.0)]),
            arm(&[c(C2, n2 / 4.0), c(C3, n3 / 4.0)]),
            arm(&[c(I2, n2 / 4.0), c(IPsi, n3 / 4.0)]),
        ],
    };
    let delta = if setup == 4 {
        (groups[3].1 - groups[2].1) - (groups[1].1 - groups[0].1)
    } else {
        groups[1].1 - groups[0].1
    };
    let theta = z * groups.iter().map(|g| g.2 / g.0).sum::<f64>().sqrt();
    (delta, theta)
}

/// Gain-over-loss superiority of (Δa, θa) over (Δb, θb) after the swap convention.
pub fn oracle_superior(a: (f64, f64), b: (f64, f64)) -> Option<bool> {
    let sign = if a.0 <= 0.0 && b.0 <= 0.0 { -1.0 } else { 1.0 };
    let gain = sign * (a.0 - b.0) - (a.1 - b.1);
    if gain > 0.0 {
        Some(true)
    } else if gain < 0.0 {
        Some(false)
    } else {
        None
    }
}
