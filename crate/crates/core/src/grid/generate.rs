//! Bundled and generated case documents.
//!
//! Parameters are drawn from a seeded ChaCha stream and rounded to four
//! decimals, so regenerating a case from its stored seed reproduces the file.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{BusSpec, CaseDocument, MarketSpec, PartnerSpec, ProsumerSpec};

const V_MIN_TIGHT: f64 = 0.9025;
const V_MAX_TIGHT: f64 = 1.1025;

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn draw(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    round4(rng.gen_range(lo..=hi))
}

fn line_bus(id: usize, parent: usize, r_pu: f64, x_pu: f64, v: (f64, f64), flow: f64) -> BusSpec {
    BusSpec {
        id,
        parent: Some(parent),
        r_pu,
        x_pu,
        v_min: v.0,
        v_max: v.1,
        p_flow_min: -flow,
        p_flow_max: flow,
        q_flow_min: -flow,
        q_flow_max: flow,
    }
}

fn root_bus() -> BusSpec {
    BusSpec {
        id: 0,
        parent: None,
        r_pu: 0.0,
        x_pu: 0.0,
        v_min: 0.0,
        v_max: 0.0,
        p_flow_min: 0.0,
        p_flow_max: 0.0,
        q_flow_min: 0.0,
        q_flow_max: 0.0,
    }
}

/// Buyer or seller with utility and discomfort parameters in the usual ranges.
fn draw_prosumer(rng: &mut ChaCha20Rng, bus: usize, buyer: bool) -> ProsumerSpec {
    let (alpha, beta) = if buyer {
        (draw(rng, 0.01, 0.1), draw(rng, 1.0, 3.0))
    } else {
        (draw(rng, 0.02, 0.1), draw(rng, 0.1, 0.8))
    };
    let epsilon = draw(rng, 2.5, 3.5);
    let magnitude = draw(rng, 10.0, 40.0);
    let p_desired = if buyer { -magnitude } else { magnitude };
    let (p_min, p_max) = if buyer { (round4(1.5 * p_desired), 0.0) } else { (0.0, round4(1.5 * p_desired)) };
    ProsumerSpec { bus, alpha, beta, epsilon, p_desired, p_min, p_max, q_min: -10.0, q_max: 10.0 }
}

/// Three buses in a line: utility, a buyer, a seller.
pub fn toy_3bus() -> CaseDocument {
    let v = (V_MIN_TIGHT, V_MAX_TIGHT);
    CaseDocument {
        name: Some("toy-3bus".into()),
        buses: vec![root_bus(), line_bus(1, 0, 0.01, 0.01, v, 100.0), line_bus(2, 1, 0.01, 0.01, v, 100.0)],
        prosumers: vec![
            ProsumerSpec {
                bus: 1,
                alpha: 0.01,
                beta: 2.0,
                epsilon: 3.0,
                p_desired: -10.0,
                p_min: -15.0,
                p_max: 0.0,
                q_min: -5.0,
                q_max: 5.0,
            },
            ProsumerSpec {
                bus: 2,
                alpha: 0.012,
                beta: 0.5,
                epsilon: 3.0,
                p_desired: 8.0,
                p_min: 0.0,
                p_max: 12.0,
                q_min: -5.0,
                q_max: 5.0,
            },
        ],
        market: MarketSpec { omega_b: 8.0, omega_s: 3.0, partners: PartnerSpec::default() },
        seed: 0,
        base_kva: 1000.0,
        v0: 1.0,
    }
}

/// Parent of buses 1..=15 on the bundled 15-bus feeder.
pub const BUS15_PARENTS: [usize; 15] = [0, 1, 2, 3, 4, 3, 6, 3, 8, 2, 10, 11, 1, 13, 14];

pub const BUS15_BUYERS: [usize; 7] = [1, 5, 6, 9, 11, 13, 15];

pub fn ieee15(seed: u64) -> CaseDocument {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let v = (V_MIN_TIGHT, V_MAX_TIGHT);
    let mut buses = vec![root_bus()];
    for (k, &parent) in BUS15_PARENTS.iter().enumerate() {
        let r = draw(&mut rng, 0.005, 0.02);
        let x = draw(&mut rng, 0.005, 0.02);
        buses.push(line_bus(k + 1, parent, r, x, v, 1000.0));
    }
    let prosumers = (1..=15)
        .map(|b| draw_prosumer(&mut rng, b, BUS15_BUYERS.contains(&b)))
        .collect();
    CaseDocument {
        name: Some("feeder-15bus".into()),
        buses,
        prosumers,
        market: MarketSpec { omega_b: 8.0, omega_s: 3.0, partners: PartnerSpec::default() },
        seed,
        base_kva: 1000.0,
        v0: 1.0,
    }
}

/// Random radial feeder with `n_agents` prosumers and about three sellers per buyer.
pub fn radial(n_agents: usize, seed: u64) -> CaseDocument {
    assert!(n_agents >= 2, "need at least one buyer and one seller");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut buses = vec![root_bus()];
    for id in 1..=n_agents {
        let parent = if id == 1 { 0 } else { rng.gen_range(id.saturating_sub(4).max(1)..id) };
        let r = draw(&mut rng, 0.001, 0.005);
        let x = draw(&mut rng, 0.001, 0.005);
        buses.push(line_bus(id, parent, r, x, (0.8, 1.2), 5000.0));
    }
    let mut is_buyer: Vec<bool> = (0..=n_agents).map(|_| rng.gen_bool(0.5)).collect();
    is_buyer[1] = true;
    is_buyer[2] = false;
    let prosumers: Vec<ProsumerSpec> =
        (1..=n_agents).map(|b| draw_prosumer(&mut rng, b, is_buyer[b])).collect();

    let buyers: Vec<usize> = (1..=n_agents).filter(|&b| is_buyer[b]).collect();
    let sellers: Vec<usize> = (1..=n_agents).filter(|&b| !is_buyer[b]).collect();
    let mut pairs = std::collections::BTreeSet::new();
    for &b in &buyers {
        for &s in sellers.choose_multiple(&mut rng, 3.min(sellers.len())) {
            pairs.insert((b, s));
        }
    }
    for &s in &sellers {
        if !pairs.iter().any(|&(_, t)| t == s) {
            let b = *buyers.choose(&mut rng).expect("at least one buyer");
            pairs.insert((b, s));
        }
    }
    let mut list = Vec::new();
    for &(b, s) in &pairs {
        list.push([b, s]);
        list.push([s, b]);
    }
    CaseDocument {
        name: Some(format!("radial-{n_agents}bus")),
        buses,
        prosumers,
        market: MarketSpec { omega_b: 8.0, omega_s: 3.0, partners: PartnerSpec::Pairs(list) },
        seed,
        base_kva: 1000.0,
        v0: 1.0,
    }
}

pub const BUS15_SEED: u64 = 15;

/// File name and document of every bundled case.
pub fn bundled() -> Vec<(&'static str, CaseDocument)> {
    vec![
        ("toy3.json", toy_3bus()),
        ("bus15.json", ieee15(BUS15_SEED)),
        ("bus34.json", radial(34, 34)),
        ("bus69.json", radial(69, 69)),
        ("bus94.json", radial(94, 94)),
        ("bus141.json", radial(141, 141)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{classify_agents, GridCase};

    #[test]
    fn bundled_cases_validate() {
        for (name, doc) in bundled() {
            let case = GridCase::from_document(doc).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(case.warnings().is_empty(), "{name}: {:?}", case.warnings());
        }
    }

    #[test]
    fn feeder15_partition() {
        let case = GridCase::from_document(ieee15(BUS15_SEED)).unwrap();
        let part = classify_agents(&case);
        assert_eq!(part.buyers, BUS15_BUYERS.to_vec());
        assert_eq!(part.sellers, vec![2, 3, 4, 7, 8, 10, 12, 14]);
        assert_eq!(case.children(3), &[4, 6, 8]);
        assert_eq!(case.partners(3).len(), 7);
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(radial(34, 7), radial(34, 7));
        assert_ne!(radial(34, 7), radial(34, 8));
    }
}
