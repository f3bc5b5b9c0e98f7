use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use num_bigint::BigInt;

use super::engine::{contribution, feasible_ranges, Link};
use super::{ObservedProduct, ObserverLog, RunConfig, RunError, SecureStats};
use crate::crypto::{fixed_to_f64, Ciphertext, KeyMaterial, PublicKey, SignedFixedCodec};
use crate::grid::{ConstraintBlocks, GridCase, RowKind};
use crate::par::{self, ExecMode};
use crate::pdhg::AgentState;
use crate::protocols::{
    coefficient_value, draw_subinterval, factor_interval, joint_product, Component, Envelope,
    MultiPartyGroup, Network, Payload, ProtocolError, ReciprocityBlinding, Step, Topic,
    TwoPartySession, REPLY_SCALES,
};
use crate::rng::{purpose, stream};

fn row_tag(row: RowKind) -> u64 {
    match row {
        RowKind::VoltageDrop => 1,
        RowKind::FlowActive => 2,
        RowKind::FlowReactive => 3,
        RowKind::Reciprocity { partner } => 1000 + partner as u64,
    }
}

fn component_of(row: RowKind) -> Component {
    match row {
        RowKind::FlowReactive => Component::Reactive,
        _ => Component::Active,
    }
}

/// Shrinks an interval to `tau` decimals so it survives encryption exactly.
fn inward(lo: f64, hi: f64, tau: u32) -> Result<(f64, f64), ProtocolError> {
    let scale = 10f64.powi(tau as i32);
    let lo = (lo * scale).ceil() / scale;
    let hi = (hi * scale).floor() / scale;
    if !(lo > 0.0 && hi >= lo) {
        return Err(ProtocolError::EmptyRange);
    }
    Ok((lo, hi))
}

fn send_interval<R: rand::Rng>(
    net: &mut Network,
    pk: &PublicKey,
    tau: u32,
    sender: usize,
    recipient: usize,
    topic: Topic,
    (lo, hi): (f64, f64),
    rng: &mut R,
) -> Result<(), ProtocolError> {
    let codec = pk.codec(tau);
    let a = pk.encrypt(&codec, lo, rng)?;
    let b = pk.encrypt(&codec, hi, rng)?;
    net.send(Envelope::new(net.round(), sender, recipient, topic, Payload::CiphertextPair(a, b)))
}

fn receive_interval(
    net: &mut Network,
    km: &KeyMaterial,
    tau: u32,
    recipient: usize,
    sender: usize,
    topic: &Topic,
) -> Result<(f64, f64), ProtocolError> {
    let env = net.receive(recipient, sender, topic)?;
    let (a, b) = env.payload.ciphertext_pair()?;
    let codec = km.codec(tau);
    Ok((km.decrypt_crt(a, &codec)?, km.decrypt_crt(b, &codec)?))
}

struct SessionSlot {
    requester: usize,
    row_index: usize,
    /// Session on the mirrored reciprocity row, for joint blinding.
    mirror: Option<usize>,
}

pub(crate) struct SecureLayer {
    tau: u32,
    blinding: ReciprocityBlinding,
    keys: BTreeMap<usize, KeyMaterial>,
    codecs: BTreeMap<usize, SignedFixedCodec>,
    sessions: Vec<TwoPartySession>,
    slots: Vec<SessionSlot>,
    groups: BTreeMap<(usize, Component), MultiPartyGroup>,
    stats: SecureStats,
    online_ms: f64,
    observer: Option<ObserverLog>,
}

impl SecureLayer {
    pub(crate) fn setup(
        case: &GridCase,
        blocks: &[ConstraintBlocks],
        links: &[Vec<Link>],
        config: &RunConfig,
        net: &mut Network,
    ) -> Result<Self, RunError> {
        let tau = config.tau;
        let seed = config.seed;
        let joint = config.blinding == ReciprocityBlinding::Joint;
        let ranges = feasible_ranges(case, &config.steps)?;

        let t0 = Instant::now();
        let ids: Vec<usize> = case.agents().collect();
        let keys: Vec<Result<KeyMaterial, _>> = par::map(config.exec, &ids, |&i| {
            KeyMaterial::keygen(config.key_bits, &mut stream(seed, &[purpose::KEYGEN, i as u64]))
        });
        let mut key_map = BTreeMap::new();
        for (i, k) in ids.iter().zip(keys) {
            key_map.insert(*i, k.map_err(ProtocolError::from)?);
        }
        let keygen_ms = t0.elapsed().as_secs_f64() * 1e3;
        let codecs: BTreeMap<usize, SignedFixedCodec> =
            key_map.iter().map(|(&i, k)| (i, k.codec(tau))).collect();

        // Public keys go to every agent one shares a row or a group with.
        let mut pairs = BTreeSet::new();
        for (b, agent_links) in blocks.iter().zip(links) {
            for link in agent_links {
                let members: Vec<usize> = match link {
                    Link::Local(_) => continue,
                    Link::Single(t) => vec![b.agent, *t],
                    Link::Group(cs) => std::iter::once(b.agent).chain(cs.iter().copied()).collect(),
                };
                for &a in &members {
                    for &c in &members {
                        if a != c {
                            pairs.insert((a, c));
                        }
                    }
                }
            }
        }
        for &(from, to) in &pairs {
            net.send(Envelope::new(
                net.round(),
                from,
                to,
                Topic::PublicKey,
                Payload::PublicKey(key_map[&from].public().clone()),
            ))?;
        }
        let mut known: BTreeMap<(usize, usize), PublicKey> = BTreeMap::new();
        for &(from, to) in &pairs {
            let env = net.receive(to, from, &Topic::PublicKey)?;
            known.insert((to, from), env.payload.public_key()?.clone());
        }

        // Every requester needs a usable interval.
        let mut requesters = BTreeSet::new();
        for (b, agent_links) in blocks.iter().zip(links) {
            if agent_links.iter().any(|l| matches!(l, Link::Single(_))) {
                requesters.insert(b.agent);
            }
        }
        for &i in &requesters {
            if ranges[i - 1].is_empty() {
                return Err(ProtocolError::EmptyRange.into());
            }
        }
        if let Some((lo, hi)) = config.subrange {
            for &i in &requesters {
                let fr = &ranges[i - 1];
                if !(fr.contains(lo) && fr.contains(hi)) {
                    return Err(RunError::Config(format!(
                        "subrange [{lo}, {hi}] is not admissible for agent {i}"
                    )));
                }
            }
        }

        // Jointly blinded reciprocity rows use the intersection of both
        // partners' intervals, so each side sends its own to the other first.
        let mut partner_range: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
        let reciprocity: Vec<(usize, usize)> = blocks
            .iter()
            .flat_map(|b| {
                b.global_rows.iter().filter_map(move |r| match r.kind {
                    RowKind::Reciprocity { partner } => Some((b.agent, partner)),
                    _ => None,
                })
            })
            .collect();
        if joint {
            for &(i, j) in &reciprocity {
                let (lo, hi) = ranges[i - 1].range.expect("checked above");
                let lo = if lo <= 0.0 { hi * crate::protocols::OPEN_LOWER_FRACTION } else { lo };
                let mut rng = stream(seed, &[purpose::SUBRANGE, i as u64, j as u64, 0]);
                send_interval(
                    net,
                    &known[&(i, j)],
                    tau,
                    i,
                    j,
                    Topic::FeasibleRange { row: RowKind::Reciprocity { partner: j } },
                    inward(lo, hi, tau)?,
                    &mut rng,
                )?;
            }
            for &(i, j) in &reciprocity {
                let topic = Topic::FeasibleRange { row: RowKind::Reciprocity { partner: i } };
                let theirs = receive_interval(net, &key_map[&i], tau, i, j, &topic)?;
                partner_range.insert((i, j), theirs);
            }
        }

        // Coefficient intervals: drawn by the requester, sent under the
        // responder's key, and decrypted by the responder who draws from it.
        let mut plan = Vec::new();
        for (b, agent_links) in blocks.iter().zip(links) {
            let i = b.agent;
            for (row_index, (row, link)) in b.global_rows.iter().zip(agent_links).enumerate() {
                let Link::Single(t) = link else { continue };
                let mut rng = stream(seed, &[purpose::SUBRANGE, i as u64, row_tag(row.kind), 1]);
                let own = ranges[i - 1].range.expect("checked above");
                let (lo, hi) = match (row.kind, joint) {
                    (RowKind::Reciprocity { partner }, true) => {
                        let other = partner_range[&(i, partner)];
                        let lo = own.0.max(other.0);
                        let hi = own.1.min(other.1);
                        let (flo, fhi) = match config.subrange {
                            Some((a, z)) => factor_interval(a, z),
                            None => {
                                if !(hi > lo) {
                                    return Err(ProtocolError::EmptyRange.into());
                                }
                                let (flo, fhi) = factor_interval(lo, hi);
                                draw_subinterval(flo, fhi, &mut rng)?
                            }
                        };
                        (flo, fhi)
                    }
                    _ => match config.subrange {
                        Some(s) => s,
                        None => draw_subinterval(own.0, own.1, &mut rng)?,
                    },
                };
                let sub = inward(lo, hi, tau)?;
                send_interval(
                    net,
                    &known[&(i, *t)],
                    tau,
                    i,
                    *t,
                    Topic::Subrange { row: row.kind },
                    sub,
                    &mut rng,
                )?;
                plan.push((i, *t, row_index, row.kind, sub));
            }
        }
        let mut sessions = Vec::with_capacity(plan.len());
        let mut slots = Vec::with_capacity(plan.len());
        let mut lookup = HashMap::new();
        let mut observed_ranges = Vec::new();
        for (i, t, row_index, kind, proposed) in plan {
            let agreed = receive_interval(net, &key_map[&t], tau, t, i, &Topic::Subrange { row: kind })?;
            if Some(i) == config.observe {
                observed_ranges.push((kind, proposed));
            }
            let session = TwoPartySession::new(
                i,
                t,
                kind,
                known[&(t, i)].clone(),
                agreed,
                tau,
                stream(seed, &[purpose::SESSION_REQUESTER, i as u64, row_tag(kind)]),
                stream(seed, &[purpose::SESSION_RESPONDER, i as u64, row_tag(kind)]),
            )?;
            lookup.insert((i, kind), sessions.len());
            sessions.push(session);
            slots.push(SessionSlot { requester: i, row_index, mirror: None });
        }
        if joint {
            for (idx, s) in sessions.iter().enumerate() {
                if let RowKind::Reciprocity { partner } = s.row {
                    slots[idx].mirror =
                        lookup.get(&(partner, RowKind::Reciprocity { partner: s.requester })).copied();
                }
            }
        }

        // Offline phase of every sharing group.
        let t1 = Instant::now();
        let mut groups = BTreeMap::new();
        for (b, agent_links) in blocks.iter().zip(links) {
            for (row, link) in b.global_rows.iter().zip(agent_links) {
                let Link::Group(cs) = link else { continue };
                let component = component_of(row.kind);
                let mut g = MultiPartyGroup::new(b.agent, cs, component, tau, seed)?;
                g.offline(net, &key_map, seed)?;
                groups.insert((b.agent, component), g);
            }
        }
        let offline_ms = t1.elapsed().as_secs_f64() * 1e3;

        let stats = SecureStats {
            key_bits: config.key_bits,
            tau,
            sessions: sessions.len(),
            groups: groups.len(),
            keygen_ms,
            offline_ms,
            ..SecureStats::default()
        };
        let observer = config.observe.map(|agent| ObserverLog {
            agent,
            subranges: observed_ranges,
            products: Vec::new(),
        });
        Ok(Self {
            tau,
            blinding: config.blinding,
            keys: key_map,
            codecs,
            sessions,
            slots,
            groups,
            stats,
            online_ms: 0.0,
            observer,
        })
    }

    /// One round of blinded exchanges; returns what each agent knows about its
    /// global rows: blinded products on two-party rows, exact residuals elsewhere.
    pub(crate) fn exchange(
        &mut self,
        blocks: &[ConstraintBlocks],
        states: &[AgentState],
        links: &[Vec<Link>],
        net: &mut Network,
        iteration: usize,
        exec: ExecMode,
    ) -> Result<Vec<Vec<f64>>, RunError> {
        let started = Instant::now();
        let round = net.round();
        let tau = self.tau;
        let codecs = &self.codecs;

        // S1
        let own_terms: Vec<f64> = self
            .slots
            .iter()
            .map(|s| blocks[s.requester - 1].global_rows[s.row_index].own_value(&states[s.requester - 1].phi))
            .collect();
        let mut work: Vec<(&mut TwoPartySession, f64)> =
            self.sessions.iter_mut().zip(own_terms.iter().copied()).collect();
        let requests = par::map_mut(exec, &mut work, |(s, x)| s.request(&codecs[&s.requester], *x));
        drop(work);
        for (s, c) in self.sessions.iter().zip(requests) {
            net.send(Envelope::new(
                round,
                s.requester,
                s.responder,
                Topic::Row { owner: s.requester, row: s.row, step: Step::Request },
                Payload::Ciphertext(c?),
            ))?;
        }

        // S2, S3
        let mut incoming = Vec::with_capacity(self.sessions.len());
        for s in &self.sessions {
            let topic = Topic::Row { owner: s.requester, row: s.row, step: Step::Request };
            let env = net.receive(s.responder, s.requester, &topic)?;
            incoming.push(env.payload.ciphertext()?.clone());
        }
        let mut work: Vec<(&mut TwoPartySession, Ciphertext)> =
            self.sessions.iter_mut().zip(incoming).collect();
        let replies = par::map_mut(exec, &mut work, |(s, c)| {
            let x_t = contribution(blocks, states, s.responder, s.requester, s.row);
            s.respond(round, &codecs[&s.requester], c, x_t)
        });
        drop(work);
        for (s, c) in self.sessions.iter().zip(replies) {
            net.send(Envelope::new(
                round,
                s.responder,
                s.requester,
                Topic::Row { owner: s.requester, row: s.row, step: Step::Reply },
                Payload::Ciphertext(c?),
            ))?;
        }

        // Online masking.
        for g in self.groups.values() {
            let k = crate::sim::engine::flow_index(match g.component {
                Component::Active => RowKind::FlowActive,
                Component::Reactive => RowKind::FlowReactive,
            });
            for &c in g.children() {
                g.send_masked(net, c, states[c - 1].phi[k])?;
            }
        }

        // S4
        let mut replies = Vec::with_capacity(self.sessions.len());
        for s in &self.sessions {
            let topic = Topic::Row { owner: s.requester, row: s.row, step: Step::Reply };
            let env = net.receive(s.requester, s.responder, &topic)?;
            replies.push((s.requester, env.payload.ciphertext()?.clone()));
        }
        let keys = &self.keys;
        let decrypted: Vec<Result<BigInt, ProtocolError>> = par::map(exec, &replies, |(i, c)| {
            TwoPartySession::finish_fixed(&keys[i], &codecs[i], c)
        });

        let mut out: Vec<Vec<f64>> = blocks
            .iter()
            .zip(states)
            .zip(links)
            .map(|((b, s), agent_links)| {
                b.global_rows
                    .iter()
                    .zip(agent_links)
                    .map(|(row, link)| match link {
                        Link::Local(v) => row.own_value(&s.phi) + v,
                        _ => f64::NAN,
                    })
                    .collect()
            })
            .collect();

        for (idx, y) in decrypted.into_iter().enumerate() {
            let y = y?;
            let slot = &self.slots[idx];
            let own_factor = match (self.blinding, slot.mirror) {
                (ReciprocityBlinding::Joint, Some(m)) => Some(
                    self.sessions[m]
                        .coefficient(round)
                        .ok_or_else(|| RunError::Config("mirror coefficient missing".into()))?
                        .clone(),
                ),
                _ => None,
            };
            let value = match &own_factor {
                Some(r) => joint_product(&y, r, tau),
                None => fixed_to_f64(&y, tau * REPLY_SCALES),
            };
            out[slot.requester - 1][slot.row_index] = value;
            if let Some(obs) = self.observer.as_mut().filter(|o| o.agent == slot.requester) {
                let s = &self.sessions[idx];
                obs.products.push(ObservedProduct {
                    iteration,
                    row: s.row,
                    counterpart: s.responder,
                    own_term: own_terms[idx],
                    product: fixed_to_f64(&y, tau * REPLY_SCALES),
                    own_factor: own_factor.as_ref().map(|r| coefficient_value(r, tau)),
                    true_counterpart_term: contribution(blocks, states, s.responder, s.requester, s.row),
                });
            }
        }

        for ((holder, component), g) in &self.groups {
            let sum = g.collect(net)?;
            let kind = match component {
                Component::Active => RowKind::FlowActive,
                Component::Reactive => RowKind::FlowReactive,
            };
            let b = &blocks[holder - 1];
            let r = b.row_index(kind).expect("flow rows exist");
            out[holder - 1][r] =
                b.global_rows[r].own_value(&states[holder - 1].phi) + fixed_to_f64(&sum, tau);
        }

        self.online_ms += started.elapsed().as_secs_f64() * 1e3;
        Ok(out)
    }

    pub(crate) fn finish(self, net: &Network, iterations: usize) -> (SecureStats, Option<ObserverLog>) {
        let mut stats = self.stats;
        stats.online_ms_per_iter = if iterations > 0 { self.online_ms / iterations as f64 } else { 0.0 };
        stats.messages = net.messages();
        stats.bytes = net.bytes();
        (stats, self.observer)
    }
}
