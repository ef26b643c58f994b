//! Coordinator/center message passing.
//!
//! Centers hold raw data and answer typed requests; the coordinator holds
//! only what arrives in responses. Every message is encoded to its JSON wire
//! form and decoded again before delivery, and the encoded text is kept in a
//! wire log so the information flow can be audited after the fact.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize};

use crate::binning::{extreme_buffer, GroupedSample};
use crate::error::{FedError, Group, Result};
use crate::join::{center_rng, init_table, join_center, JoinResult, ReleaseTranscript};
use crate::num::Real;
use crate::quantile::{
    center_loss_response, center_moments, combine_ranges, enforce_monotone, estimate_quantile_loss,
    estimate_quantile_yj_data, estimate_quantile_yj_table, fit_yj_mle, fit_yj_table, local_range,
    pool_moment_responses, sum_loss_responses, validate_probs, LossOracle, LossPoint, LossValue,
    MleMode, MomentOracle, QuantileEstimate, QuantileMethod, YjMoments,
};
use crate::rank::{
    center_stat_lenient, fisher_combine, mwu_federated_table, t_sum, t_weighted, CenterTestStat,
    CombinedTestResult, Sidedness, TestMethod,
};
use crate::table::{ExtremePolicy, PrivacyParam, SummaryTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    TableInitRequest,
    TableJoinRequest,
    TableResponse,
    MwuStatRequest,
    MwuStatResponse,
    LossQuery,
    LossResponse,
    MomentRequest,
    MomentResponse,
    MinmaxProbe,
    MinmaxBufferResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableInit {
    pub k: PrivacyParam,
    pub policy: ExtremePolicy,
    pub seed: u64,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableJoin<T: Real> {
    #[serde(bound = "")]
    pub table: SummaryTable<T>,
    pub policy: ExtremePolicy,
    pub seed: u64,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwuStatRequest {
    pub sidedness: Sidedness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossQuery<T> {
    pub group: Group,
    /// Ask for the local `(min, max)` as well; used once, before bisection.
    #[serde(default)]
    pub include_range: bool,
    pub points: Vec<LossPoint<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResponse<T> {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<[T; 2]>,
    pub values: Vec<LossValue<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRequest<T> {
    pub group: Group,
    pub lambdas: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MomentResponse<T: Real> {
    pub moments: Vec<YjMoments<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinmaxProbe {
    pub group: Group,
}

/// Local extremes pushed outward by the extreme-bin buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinmaxBuffer<T> {
    pub low: Option<T>,
    pub high: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload<T: Real> {
    TableInitRequest(TableInit),
    TableJoinRequest(TableJoin<T>),
    TableResponse(JoinResult<T>),
    MwuStatRequest(MwuStatRequest),
    MwuStatResponse(CenterTestStat<T>),
    LossQuery(LossQuery<T>),
    LossResponse(LossResponse<T>),
    MomentRequest(MomentRequest<T>),
    MomentResponse(MomentResponse<T>),
    MinmaxProbe(MinmaxProbe),
    MinmaxBufferResponse(MinmaxBuffer<T>),
}

impl<T: Real> Payload<T> {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::TableInitRequest(_) => MessageKind::TableInitRequest,
            Payload::TableJoinRequest(_) => MessageKind::TableJoinRequest,
            Payload::TableResponse(_) => MessageKind::TableResponse,
            Payload::MwuStatRequest(_) => MessageKind::MwuStatRequest,
            Payload::MwuStatResponse(_) => MessageKind::MwuStatResponse,
            Payload::LossQuery(_) => MessageKind::LossQuery,
            Payload::LossResponse(_) => MessageKind::LossResponse,
            Payload::MomentRequest(_) => MessageKind::MomentRequest,
            Payload::MomentResponse(_) => MessageKind::MomentResponse,
            Payload::MinmaxProbe(_) => MessageKind::MinmaxProbe,
            Payload::MinmaxBufferResponse(_) => MessageKind::MinmaxBufferResponse,
        }
    }
}

/// `{"kind", "round", "center", "payload"}` on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct Message<T: Real> {
    pub round: u32,
    pub center: String,
    pub payload: Payload<T>,
}

impl<T: Real> Serialize for Message<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Message", 4)?;
        st.serialize_field("kind", &self.payload.kind())?;
        st.serialize_field("round", &self.round)?;
        st.serialize_field("center", &self.center)?;
        match &self.payload {
            Payload::TableInitRequest(p) => st.serialize_field("payload", p)?,
            Payload::TableJoinRequest(p) => st.serialize_field("payload", p)?,
            Payload::TableResponse(p) => st.serialize_field("payload", p)?,
            Payload::MwuStatRequest(p) => st.serialize_field("payload", p)?,
            Payload::MwuStatResponse(p) => st.serialize_field("payload", p)?,
            Payload::LossQuery(p) => st.serialize_field("payload", p)?,
            Payload::LossResponse(p) => st.serialize_field("payload", p)?,
            Payload::MomentRequest(p) => st.serialize_field("payload", p)?,
            Payload::MomentResponse(p) => st.serialize_field("payload", p)?,
            Payload::MinmaxProbe(p) => st.serialize_field("payload", p)?,
            Payload::MinmaxBufferResponse(p) => st.serialize_field("payload", p)?,
        }
        st.end()
    }
}

impl<'de, T: Real> Deserialize<'de> for Message<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        #[derive(Deserialize)]
        struct Raw {
            kind: MessageKind,
            round: u32,
            center: String,
            payload: serde_json::Value,
        }
        let raw = Raw::deserialize(d)?;
        fn body<U: serde::de::DeserializeOwned, E: Error>(
            v: serde_json::Value,
        ) -> std::result::Result<U, E> {
            serde_json::from_value(v).map_err(E::custom)
        }
        let v = raw.payload;
        let payload = match raw.kind {
            MessageKind::TableInitRequest => Payload::TableInitRequest(body(v)?),
            MessageKind::TableJoinRequest => Payload::TableJoinRequest(body(v)?),
            MessageKind::TableResponse => Payload::TableResponse(body(v)?),
            MessageKind::MwuStatRequest => Payload::MwuStatRequest(body(v)?),
            MessageKind::MwuStatResponse => Payload::MwuStatResponse(body(v)?),
            MessageKind::LossQuery => Payload::LossQuery(body(v)?),
            MessageKind::LossResponse => Payload::LossResponse(body(v)?),
            MessageKind::MomentRequest => Payload::MomentRequest(body(v)?),
            MessageKind::MomentResponse => Payload::MomentResponse(body(v)?),
            MessageKind::MinmaxProbe => Payload::MinmaxProbe(body(v)?),
            MessageKind::MinmaxBufferResponse => Payload::MinmaxBufferResponse(body(v)?),
        };
        Ok(Message {
            round: raw.round,
            center: raw.center,
            payload,
        })
    }
}

/// A data-holding center. Its sample never leaves this struct.
#[derive(Debug, Clone)]
pub struct CenterNode<T: Real> {
    sample: GroupedSample<T>,
    k: PrivacyParam,
}

impl<T: Real> CenterNode<T> {
    pub fn new(sample: GroupedSample<T>, k: PrivacyParam) -> Self {
        Self { sample, k }
    }

    pub fn id(&self) -> &str {
        &self.sample.center_id
    }

    /// Sample size, which the coordinator is allowed to know for join ordering.
    pub fn size(&self) -> usize {
        self.sample.len()
    }

    /// Refuses aggregate requests over a group that is itself non-private.
    fn private_group(&self, group: Group) -> Result<&[T]> {
        let v = self.sample.group(group);
        if !self.k.admits(v.len()) {
            return Err(FedError::InsufficientData {
                center: self.id().to_string(),
                group,
                count: v.len(),
                k: self.k.get(),
            });
        }
        Ok(v)
    }

    /// Answers one request. Pure in `(request, private data)`.
    pub fn handle(&self, request: &Message<T>) -> Result<Message<T>> {
        let payload = match &request.payload {
            Payload::TableInitRequest(r) => {
                let mut rng = center_rng(r.seed, r.position);
                Payload::TableResponse(init_table(&self.sample, r.k, r.policy, &mut rng)?)
            }
            Payload::TableJoinRequest(r) => {
                let mut rng = center_rng(r.seed, r.position);
                Payload::TableResponse(join_center(
                    &r.table,
                    &self.sample,
                    r.table.k,
                    r.policy,
                    &mut rng,
                )?)
            }
            Payload::MwuStatRequest(r) => {
                self.sample.check_private(self.k)?;
                Payload::MwuStatResponse(center_stat_lenient(&self.sample, r.sidedness)?)
            }
            Payload::LossQuery(q) => {
                let values = self.sample.group(q.group);
                Payload::LossResponse(LossResponse {
                    range: if q.include_range {
                        local_range(values).map(|(a, b)| [a, b])
                    } else {
                        None
                    },
                    values: center_loss_response(values, &q.points),
                })
            }
            Payload::MomentRequest(q) => Payload::MomentResponse(MomentResponse {
                moments: center_moments(self.private_group(q.group)?, &q.lambdas),
            }),
            Payload::MinmaxProbe(q) => {
                let v = self.private_group(q.group)?;
                let k = (self.k.get() as usize).min(v.len());
                Payload::MinmaxBufferResponse(if v.is_empty() {
                    MinmaxBuffer {
                        low: None,
                        high: None,
                    }
                } else {
                    MinmaxBuffer {
                        low: Some(v[0] - extreme_buffer(&v[..k])),
                        high: Some(v[v.len() - 1] + extreme_buffer(&v[v.len() - k..])),
                    }
                })
            }
            other => {
                return Err(FedError::Protocol(format!(
                    "center {} cannot handle {:?}",
                    self.id(),
                    other.kind()
                )))
            }
        };
        Ok(Message {
            round: request.round,
            center: self.id().to_string(),
            payload,
        })
    }
}

/// One encoded message as it crossed the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEntry {
    pub kind: MessageKind,
    pub round: u32,
    pub center: String,
    pub json: String,
}

/// Holds the nodes and runs rounds. Owns no raw data itself.
pub struct Coordinator<T: Real> {
    nodes: Vec<CenterNode<T>>,
    round: u32,
    wire: Vec<WireEntry>,
    forbid_privacy_violating: bool,
}

fn transmit<T: Real>(msg: &Message<T>) -> Result<(Message<T>, WireEntry)> {
    let json = serde_json::to_string(msg)?;
    let decoded: Message<T> = serde_json::from_str(&json)?;
    let entry = WireEntry {
        kind: msg.payload.kind(),
        round: msg.round,
        center: msg.center.clone(),
        json,
    };
    Ok((decoded, entry))
}

impl<T: Real> Coordinator<T> {
    /// Nodes are kept in center-id order; responses are collected in that order.
    pub fn new(mut nodes: Vec<CenterNode<T>>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(FedError::InvalidInput("no centers".into()));
        }
        nodes.sort_by(|a, b| a.id().cmp(b.id()));
        if nodes.windows(2).any(|w| w[0].id() == w[1].id()) {
            return Err(FedError::InvalidInput("duplicate center id".into()));
        }
        Ok(Self {
            nodes,
            round: 0,
            wire: Vec::new(),
            forbid_privacy_violating: false,
        })
    }

    pub fn from_samples(samples: Vec<GroupedSample<T>>, k: PrivacyParam) -> Result<Self> {
        Self::new(samples.into_iter().map(|s| CenterNode::new(s, k)).collect())
    }

    pub fn forbid_privacy_violating(mut self, forbid: bool) -> Self {
        self.forbid_privacy_violating = forbid;
        self
    }

    pub fn nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Rounds completed so far.
    pub fn rounds(&self) -> u32 {
        self.round
    }

    pub fn wire_log(&self) -> &[WireEntry] {
        &self.wire
    }

    pub fn take_wire_log(&mut self) -> Vec<WireEntry> {
        std::mem::take(&mut self.wire)
    }

    /// Sends one request to each listed node and returns the decoded
    /// responses in request order. Counts as one round.
    pub fn exchange(&mut self, requests: Vec<(usize, Payload<T>)>) -> Result<Vec<Payload<T>>> {
        let round = self.round;
        let nodes = &self.nodes;
        let results: Vec<Result<(Payload<T>, WireEntry, WireEntry)>> = requests
            .into_par_iter()
            .map(|(idx, payload)| {
                let node = nodes
                    .get(idx)
                    .ok_or_else(|| FedError::Protocol(format!("no node {idx}")))?;
                let msg = Message {
                    round,
                    center: node.id().to_string(),
                    payload,
                };
                let (delivered, out) = transmit(&msg)?;
                let reply = node.handle(&delivered)?;
                let (received, back) = transmit(&reply)?;
                if received.round != round || received.center != node.id() {
                    return Err(FedError::Protocol("response does not match request".into()));
                }
                Ok((received.payload, out, back))
            })
            .collect();
        self.round += 1;
        let mut payloads = Vec::with_capacity(results.len());
        for r in results {
            let (p, out, back) = r?;
            self.wire.push(out);
            self.wire.push(back);
            payloads.push(p);
        }
        Ok(payloads)
    }

    fn broadcast(&mut self, payload: Payload<T>) -> Result<Vec<Payload<T>>> {
        let reqs = (0..self.nodes.len())
            .map(|i| (i, payload.clone()))
            .collect();
        self.exchange(reqs)
    }

    /// Join order by decreasing size, ties broken by center id.
    fn join_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| {
            self.nodes[b]
                .size()
                .cmp(&self.nodes[a].size())
                .then_with(|| self.nodes[a].id().cmp(self.nodes[b].id()))
        });
        order
    }

    /// Builds the federated table with one round per node.
    pub fn run_table_protocol(
        &mut self,
        k: PrivacyParam,
        policy: ExtremePolicy,
        seed: u64,
    ) -> Result<JoinResult<T>> {
        let mut acc: Option<JoinResult<T>> = None;
        for (position, idx) in self.join_order().into_iter().enumerate() {
            let request = match &acc {
                None => Payload::TableInitRequest(TableInit {
                    k,
                    policy,
                    seed,
                    position,
                }),
                Some(r) => Payload::TableJoinRequest(TableJoin {
                    table: r.table.clone(),
                    policy,
                    seed,
                    position,
                }),
            };
            let reply = self.exchange(vec![(idx, request)])?.pop();
            let Some(Payload::TableResponse(step)) = reply else {
                return Err(FedError::Protocol("expected table_response".into()));
            };
            acc = Some(match acc {
                None => step,
                Some(mut r) => {
                    r.table = step.table;
                    r.transcript.extend(step.transcript);
                    r
                }
            });
        }
        acc.ok_or_else(|| FedError::InvalidInput("no centers".into()))
    }

    /// Per-center statistics, one round.
    pub fn collect_center_stats(&mut self, sided: Sidedness) -> Result<Vec<CenterTestStat<T>>> {
        self.broadcast(Payload::MwuStatRequest(MwuStatRequest { sidedness: sided }))?
            .into_iter()
            .map(|p| match p {
                Payload::MwuStatResponse(s) => Ok(s),
                _ => Err(FedError::Protocol("expected mwu_stat_response".into())),
            })
            .collect()
    }

    /// Federated Mann-Whitney test. The pooled benchmark needs raw data and
    /// is not available here.
    pub fn run_mwu_protocol(
        &mut self,
        method: TestMethod,
        sided: Sidedness,
        table: Option<TableSettings>,
    ) -> Result<MwuProtocolOutput<T>> {
        match method {
            TestMethod::Sum | TestMethod::Weighted | TestMethod::Fisher => {
                let stats = self.collect_center_stats(sided)?;
                let result = match method {
                    TestMethod::Sum => t_sum(&stats, sided)?,
                    TestMethod::Weighted => t_weighted(&stats, sided)?,
                    _ => {
                        let p: Vec<T> = stats.iter().map(|s| s.p).collect();
                        fisher_combine(&p, sided)?
                    }
                };
                Ok(MwuProtocolOutput {
                    result,
                    per_center: stats,
                    table: None,
                })
            }
            TestMethod::FederatedTable => {
                let s = table.unwrap_or_default();
                let joined = self.run_table_protocol(s.k, s.policy, s.seed)?;
                Ok(MwuProtocolOutput {
                    result: mwu_federated_table(&joined.table, sided)?,
                    per_center: Vec::new(),
                    table: Some(joined),
                })
            }
            TestMethod::Combined => Err(FedError::InvalidInput(
                "the combined benchmark pools raw data and cannot run federated".into(),
            )),
        }
    }

    /// Buffered global extremes of one group, one round.
    pub fn probe_extremes(&mut self, group: Group) -> Result<(T, T)> {
        let replies = self.broadcast(Payload::MinmaxProbe(MinmaxProbe { group }))?;
        let mut ranges = Vec::new();
        for r in replies {
            match r {
                Payload::MinmaxBufferResponse(MinmaxBuffer {
                    low: Some(a),
                    high: Some(b),
                }) => ranges.push(Some((a, b))),
                Payload::MinmaxBufferResponse(_) => ranges.push(None),
                _ => return Err(FedError::Protocol("expected minmax_buffer_response".into())),
            }
        }
        combine_ranges(ranges)
    }

    /// Quantile estimates for every probability in `probs`.
    pub fn run_quantile_protocol(
        &mut self,
        method: QuantileMethod,
        probs: &[T],
        group: Group,
        table: TableSettings,
    ) -> Result<QuantileProtocolOutput<T>> {
        validate_probs(probs)?;
        let start = self.round;
        let mut joined = None;
        let mut rows = match method {
            QuantileMethod::Loss => {
                if self.forbid_privacy_violating {
                    return Err(FedError::PrivacyViolatingForbidden("loss".into()));
                }
                estimate_quantile_loss(&mut ProtocolLoss { coord: self, group }, probs)?
            }
            QuantileMethod::YjTable => {
                let j = self.run_table_protocol(table.k, table.policy, table.seed)?;
                let mut fit = fit_yj_table(&j.table, group)?;
                fit.communication_rounds = (self.round - start) as usize;
                joined = Some(j);
                probs
                    .iter()
                    .map(|&p| estimate_quantile_yj_table(&fit, p))
                    .collect::<Result<_>>()?
            }
            QuantileMethod::YjMle | QuantileMethod::YjMleGrid => {
                let mode = if method == QuantileMethod::YjMle {
                    MleMode::Iterative
                } else {
                    MleMode::Grid
                };
                let fit = fit_yj_mle(&mut ProtocolMoments { coord: self, group }, mode)?;
                probs
                    .iter()
                    .map(|&p| estimate_quantile_yj_data(&fit, p))
                    .collect::<Result<_>>()?
            }
        };
        enforce_monotone(&mut rows);
        Ok(QuantileProtocolOutput {
            rows,
            rounds: (self.round - start) as usize,
            table: joined,
        })
    }
}

/// Table-building settings passed to protocols that need a table.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TableSettings {
    pub k: PrivacyParam,
    pub policy: ExtremePolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MwuProtocolOutput<T: Real> {
    pub result: CombinedTestResult<T>,
    pub per_center: Vec<CenterTestStat<T>>,
    pub table: Option<JoinResult<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileProtocolOutput<T: Real> {
    pub rows: Vec<QuantileEstimate<T>>,
    pub rounds: usize,
    pub table: Option<JoinResult<T>>,
}

struct ProtocolLoss<'a, T: Real> {
    coord: &'a mut Coordinator<T>,
    group: Group,
}

impl<T: Real> ProtocolLoss<'_, T> {
    fn ask(
        &mut self,
        include_range: bool,
        points: &[LossPoint<T>],
    ) -> Result<Vec<LossResponse<T>>> {
        self.coord
            .broadcast(Payload::LossQuery(LossQuery {
                group: self.group,
                include_range,
                points: points.to_vec(),
            }))?
            .into_iter()
            .map(|p| match p {
                Payload::LossResponse(r) => Ok(r),
                _ => Err(FedError::Protocol("expected loss_response".into())),
            })
            .collect()
    }
}

impl<T: Real> LossOracle<T> for ProtocolLoss<'_, T> {
    fn range(&mut self) -> Result<(T, T)> {
        let replies = self.ask(true, &[])?;
        combine_ranges(replies.into_iter().map(|r| r.range.map(|[a, b]| (a, b))))
    }

    fn query(&mut self, points: &[LossPoint<T>]) -> Result<Vec<LossValue<T>>> {
        let replies: Vec<Vec<LossValue<T>>> = self
            .ask(false, points)?
            .into_iter()
            .map(|r| r.values)
            .collect();
        sum_loss_responses(&replies, points)
    }
}

struct ProtocolMoments<'a, T: Real> {
    coord: &'a mut Coordinator<T>,
    group: Group,
}

impl<T: Real> MomentOracle<T> for ProtocolMoments<'_, T> {
    fn moments(&mut self, lambdas: &[T]) -> Result<Vec<YjMoments<T>>> {
        let replies: Vec<Vec<YjMoments<T>>> = self
            .coord
            .broadcast(Payload::MomentRequest(MomentRequest {
                group: self.group,
                lambdas: lambdas.to_vec(),
            }))?
            .into_iter()
            .map(|p| match p {
                Payload::MomentResponse(r) => Ok(r.moments),
                _ => Err(FedError::Protocol("expected moment_response".into())),
            })
            .collect::<Result<_>>()?;
        pool_moment_responses(&replies, lambdas)
    }
}

/// A wire number bit-identical to a raw private value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakHit {
    pub kind: MessageKind,
    pub round: u32,
    pub center: String,
    pub value: f64,
}

fn collect_numbers(v: &serde_json::Value, out: &mut Vec<f64>) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                out.push(x);
            }
        }
        serde_json::Value::Array(a) => a.iter().for_each(|x| collect_numbers(x, out)),
        serde_json::Value::Object(m) => m.values().for_each(|x| collect_numbers(x, out)),
        _ => {}
    }
}

/// Scans every wire message for numbers equal (bit for bit) to one of `raw`.
pub fn scan_for_leaks(wire: &[WireEntry], raw: &[f64]) -> Result<Vec<LeakHit>> {
    let bits: HashSet<u64> = raw.iter().map(|v| v.to_bits()).collect();
    let mut hits = Vec::new();
    for entry in wire {
        let v: serde_json::Value = serde_json::from_str(&entry.json)?;
        let mut nums = Vec::new();
        if let Some(p) = v.get("payload") {
            collect_numbers(p, &mut nums);
        }
        for x in nums {
            if bits.contains(&x.to_bits()) {
                hits.push(LeakHit {
                    kind: entry.kind,
                    round: entry.round,
                    center: entry.center.clone(),
                    value: x,
                });
            }
        }
    }
    Ok(hits)
}

/// Concatenated transcript of a table run, for dumping.
pub fn transcript_of<T: Real>(r: &JoinResult<T>) -> &ReleaseTranscript {
    &r.transcript
}
