use std::collections::BTreeMap;

use num_bigint::BigInt;

use super::channel::{Component, Envelope, FixedDecimal, Network, Payload, Topic};
use super::ProtocolError;
use crate::crypto::{KeyMaterial, PublicKey};
use crate::rng::{purpose, stream};
use crate::sharing::{
    reconstruct_omega, sum_received_shares, unmask_sum, MaskedValue, ShareBundle,
};

/// Sharing group of a holder and its children for one flow component.
///
/// Every participant's bundle lives here but is only ever read on behalf of
/// its owner; the holder alone ends up with `Omega`.
#[derive(Clone, Debug)]
pub struct MultiPartyGroup {
    pub holder: usize,
    pub component: Component,
    /// Holder first, then children in ascending order.
    pub participants: Vec<usize>,
    tau: u32,
    bundles: Vec<ShareBundle>,
    ready: bool,
}

impl MultiPartyGroup {
    pub fn new(
        holder: usize,
        children: &[usize],
        component: Component,
        tau: u32,
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        if children.is_empty() {
            return Err(ProtocolError::Group(format!("agent {holder} has no children")));
        }
        let mut participants = vec![holder];
        let mut sorted = children.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != children.len() || sorted.contains(&holder) {
            return Err(ProtocolError::Group(format!("malformed membership for holder {holder}")));
        }
        participants.extend(sorted);
        let points: Vec<u64> = (1..=participants.len() as u64).collect();
        let bundles = participants
            .iter()
            .zip(&points)
            .map(|(&agent, &z)| {
                let mut rng = stream(
                    seed,
                    &[purpose::SHARING, holder as u64, component as u64, agent as u64],
                );
                ShareBundle::generate(agent, z, points.clone(), tau, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { holder, component, participants, tau, bundles, ready: false })
    }

    pub fn m(&self) -> usize {
        self.participants.len()
    }

    pub fn children(&self) -> &[usize] {
        &self.participants[1..]
    }

    pub fn is_ready(&self) -> bool {
        self.ready
    }

    fn position(&self, agent: usize) -> Result<usize, ProtocolError> {
        self.participants
            .iter()
            .position(|&a| a == agent)
            .ok_or_else(|| ProtocolError::Group(format!("agent {agent} not in group {}", self.holder)))
    }

    /// Secret `R` of a participant, as seen by that participant.
    pub fn secret_of(&self, agent: usize) -> Result<&BigInt, ProtocolError> {
        Ok(self.bundles[self.position(agent)?].secret())
    }

    /// Holder's `Omega` once the offline phase has run.
    pub fn omega(&self) -> Option<&BigInt> {
        self.bundles[0].omega()
    }

    /// Offline phase: pairwise shares, then share sums to the holder, each
    /// inside a ciphertext under the recipient's key.
    pub fn offline(
        &mut self,
        net: &mut Network,
        keys: &BTreeMap<usize, KeyMaterial>,
        seed: u64,
    ) -> Result<(), ProtocolError> {
        let key_of = |a: usize| {
            keys.get(&a).ok_or_else(|| ProtocolError::Group(format!("no key pair for agent {a}")))
        };
        let public_of = |a: usize| -> Result<&PublicKey, ProtocolError> { Ok(key_of(a)?.public()) };
        let round = net.round();
        let share_topic = Topic::Share { holder: self.holder, component: self.component };
        let sum_topic = Topic::ShareSum { holder: self.holder, component: self.component };

        for (i, bundle) in self.bundles.iter().enumerate() {
            let sender = self.participants[i];
            let mut rng = stream(
                seed,
                &[purpose::SHARING, self.holder as u64, self.component as u64, sender as u64, 1],
            );
            for (j, share) in bundle.outgoing().iter().enumerate() {
                if i == j {
                    continue;
                }
                let recipient = self.participants[j];
                let pk = public_of(recipient)?;
                let c = pk.encrypt_fixed(&pk.codec(self.tau), share, &mut rng)?;
                net.send(Envelope::new(
                    round,
                    sender,
                    recipient,
                    share_topic.clone(),
                    Payload::Ciphertext(c),
                ))?;
            }
        }

        let mut sums = Vec::with_capacity(self.m());
        for j in 0..self.m() {
            let me = self.participants[j];
            let km = key_of(me)?;
            let codec = km.codec(self.tau);
            let mut received = Vec::with_capacity(self.m());
            for i in 0..self.m() {
                if i == j {
                    received.push(Some(self.bundles[j].outgoing()[j].clone()));
                    continue;
                }
                let share = net
                    .receive(me, self.participants[i], &share_topic)
                    .map_err(|_| ProtocolError::OfflineIncomplete(self.holder))
                    .and_then(|env| Ok(km.decrypt_fixed(env.payload.ciphertext()?, &codec)?));
                received.push(share.ok());
            }
            sums.push(sum_received_shares(&received)?);
        }
        for (j, s) in sums.into_iter().enumerate() {
            self.bundles[j].set_share_sum(s);
        }

        let holder_pk = public_of(self.holder)?;
        let holder_codec = holder_pk.codec(self.tau);
        for j in 1..self.m() {
            let sender = self.participants[j];
            let mut rng = stream(
                seed,
                &[purpose::SHARING, self.holder as u64, self.component as u64, sender as u64, 2],
            );
            let s = self.bundles[j].share_sum().expect("set above");
            let c = holder_pk.encrypt_fixed(&holder_codec, s, &mut rng)?;
            net.send(Envelope::new(round, sender, self.holder, sum_topic.clone(), Payload::Ciphertext(c)))?;
        }

        let holder_km = key_of(self.holder)?;
        let mut points = vec![(1u64, self.bundles[0].share_sum().expect("set above").clone())];
        for j in 1..self.m() {
            let env = net
                .receive(self.holder, self.participants[j], &sum_topic)
                .map_err(|_| ProtocolError::OfflineIncomplete(self.holder))?;
            let value = holder_km.decrypt_fixed(env.payload.ciphertext()?, &holder_codec)?;
            points.push((self.bundles[j].eval_point, value));
        }
        let omega = reconstruct_omega(&points)?;
        self.bundles[0].set_omega(omega);
        self.ready = true;
        Ok(())
    }

    /// Child side of the online phase: `Phi_j + R_j` at fixed-point scale.
    pub fn masked_value(&self, child: usize, value: f64) -> Result<FixedDecimal, ProtocolError> {
        if !self.ready {
            return Err(ProtocolError::OfflineIncomplete(self.holder));
        }
        let pos = self.position(child)?;
        if pos == 0 {
            return Err(ProtocolError::Group("the holder does not mask".into()));
        }
        let units = crate::crypto::quantize(value, self.tau)?;
        Ok(FixedDecimal::new(self.bundles[pos].mask(&units).payload, self.tau))
    }

    pub fn send_masked(
        &self,
        net: &mut Network,
        child: usize,
        value: f64,
    ) -> Result<(), ProtocolError> {
        let masked = self.masked_value(child, value)?;
        net.send(Envelope::new(
            net.round(),
            child,
            self.holder,
            Topic::Masked { holder: self.holder, component: self.component },
            Payload::Masked(masked),
        ))
    }

    /// Holder side: collects one masked value per child and unmasks the sum,
    /// returned at fixed-point scale.
    pub fn collect(&self, net: &mut Network) -> Result<BigInt, ProtocolError> {
        if !self.ready {
            return Err(ProtocolError::OfflineIncomplete(self.holder));
        }
        let topic = Topic::Masked { holder: self.holder, component: self.component };
        let mut masked = Vec::with_capacity(self.m() - 1);
        for &c in self.children() {
            let env = net.receive(self.holder, c, &topic)?;
            let m = env.payload.masked()?;
            if m.digits != self.tau {
                return Err(ProtocolError::Group(format!(
                    "masked value from {c} has {} digits, expected {}",
                    m.digits, self.tau
                )));
            }
            masked.push(MaskedValue { agent_id: c, payload: m.units.clone() });
        }
        let omega = self.omega().expect("ready implies omega");
        Ok(unmask_sum(&masked, self.children(), self.bundles[0].secret(), omega)?)
    }

    pub fn unmasked_sum(&self, net: &mut Network) -> Result<f64, ProtocolError> {
        Ok(crate::crypto::fixed_to_f64(&self.collect(net)?, self.tau))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::quantize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys(agents: &[usize]) -> BTreeMap<usize, KeyMaterial> {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        agents.iter().map(|&a| (a, KeyMaterial::keygen(128, &mut rng).unwrap())).collect()
    }

    #[test]
    fn two_participants_degenerate() {
        let km = keys(&[1, 2]);
        let mut g = MultiPartyGroup::new(1, &[2], Component::Active, 4, 3).unwrap();
        let mut net = Network::new(false);
        g.offline(&mut net, &km, 3).unwrap();
        assert_eq!(g.omega().unwrap(), &(g.secret_of(1).unwrap() + g.secret_of(2).unwrap()));
        net.advance(1).unwrap();
        g.send_masked(&mut net, 2, -7.25).unwrap();
        assert_eq!(g.unmasked_sum(&mut net).unwrap(), -7.25);
    }

    #[test]
    fn online_requires_offline() {
        let g = MultiPartyGroup::new(1, &[2, 3], Component::Reactive, 4, 3).unwrap();
        assert!(matches!(g.masked_value(2, 1.0), Err(ProtocolError::OfflineIncomplete(1))));
    }

    #[test]
    fn missing_masked_value_aborts() {
        let km = keys(&[1, 2, 3]);
        let mut g = MultiPartyGroup::new(1, &[2, 3], Component::Active, 4, 3).unwrap();
        let mut net = Network::new(false);
        g.offline(&mut net, &km, 3).unwrap();
        net.advance(1).unwrap();
        g.send_masked(&mut net, 2, 2.0).unwrap();
        assert!(matches!(g.collect(&mut net), Err(ProtocolError::Missing { .. })));
        net.advance(2).unwrap();
        g.send_masked(&mut net, 2, 2.0).unwrap();
        assert!(matches!(g.send_masked(&mut net, 2, 2.0), Err(ProtocolError::Replay { .. })));
    }

    #[test]
    fn children_sum_exactly() {
        let km = keys(&[1, 2, 3]);
        let mut g = MultiPartyGroup::new(1, &[3, 2], Component::Active, 4, 11).unwrap();
        let mut net = Network::new(true);
        g.offline(&mut net, &km, 11).unwrap();
        assert!(net
            .transcript()
            .iter()
            .all(|r| r.payload_type == super::super::PayloadType::Ciphertext));
        net.advance(1).unwrap();
        g.send_masked(&mut net, 2, 2.0).unwrap();
        g.send_masked(&mut net, 3, 3.0).unwrap();
        assert_eq!(g.collect(&mut net).unwrap(), quantize(5.0, 4).unwrap());
    }
}
