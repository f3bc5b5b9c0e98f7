/// Gradient error when a parent with several children runs one blinded
/// two-party session per child instead of the sharing group.
///
/// Each child `j` contributes `r_j (Q_j + c / m)` with `c = -Q_i - q_i` split
/// evenly over the `m` children, and the blinded penalty weight `eta_prime`
/// replaces `eta`. The result is `sum_j (eta - eta_prime r_j)(Q_j + c / m)`.
pub fn deviation_check(
    eta: f64,
    eta_prime: f64,
    coefficients: &[f64],
    child_flows: &[f64],
    own_flow: f64,
    own_injection: f64,
) -> f64 {
    assert_eq!(coefficients.len(), child_flows.len(), "one coefficient per child");
    let m = child_flows.len() as f64;
    let shared = (-own_flow - own_injection) / m;
    coefficients
        .iter()
        .zip(child_flows)
        .map(|(r, q)| (eta - eta_prime * r) * (q + shared))
        .sum()
}

/// Coefficient that cancels the deviation when every child uses it.
pub fn consensus_coefficient(eta: f64, eta_prime: f64) -> f64 {
    eta / eta_prime
}
