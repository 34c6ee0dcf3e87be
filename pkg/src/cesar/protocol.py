"""One synchronous round of the masked sparse aggregation protocol.

A round runs four phases on every node: sparsify, prestep (exchange index
information and partial mask seeds with second-degree neighbours), mask and
send (one differently masked copy per neighbour), aggregate. Delivery is
reliable and lock-step.

Two unmasked reference paths live alongside it:

* :func:`run_plain_round_oracle` applies the same selections and the same
  ``count >= s`` discard rule but ships raw fixed-point words. The masked
  round must match it bit for bit.
* :func:`dpsgd_baseline_round` is sparsified D-PSGD (no prestep, no discard)
  with uniform or Metropolis-Hastings weights.

Seeds derive from one root: ``derive_seed(root, node, round)`` gives the
node-round seed; child ``0`` of it is the selection seed and child
``(1, partner)`` the partial mask seed for ``partner``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ConfigError, DuplicateNeighborMessage, UnknownSender
from .maskcrypt import (
    WORD_BYTES,
    MaskAgreement,
    derive_seed,
    fx_decode,
    fx_encode,
    make_agreement,
    pairwise_mask,
)
from .metrics import MetricsRecord
from .sparsifier import (
    Method,
    SelectionSpec,
    frame_index_set,
    framed_size,
    intersect,
    random_subsample,
    topk,
    unframe_index_set,
)
from .topology import Topology, comm_set, view, view2

SEED_BYTES = 8


class Averaging(str, Enum):
    UNIFORM = "uniform"
    METROPOLIS_HASTINGS = "metropolis_hastings"


@dataclass(frozen=True)
class RoundConfig:
    """Per-experiment protocol settings.

    ``masking_requirement`` may be given per node; it must then be uniform,
    since honest nodes only cancel masks if they share the same threshold.
    ``averaging`` only affects the D-PSGD baseline; the masked round always
    divides by the number of received models plus one.
    """

    masking_requirement: int
    selection: SelectionSpec
    averaging: Averaging = Averaging.UNIFORM

    def __post_init__(self):
        s = self.masking_requirement
        if isinstance(s, (list, tuple, np.ndarray)):
            values = {int(x) for x in s}
            if len(values) != 1:
                raise ConfigError(f"masking requirement must be uniform across nodes, got {sorted(values)}")
            s = values.pop()
            object.__setattr__(self, "masking_requirement", s)
        if int(s) != s or s < 1:
            raise ConfigError(f"masking requirement must be an integer >= 1, got {s}")
        object.__setattr__(self, "averaging", Averaging(self.averaging))


@dataclass(frozen=True)
class PrestepMsg:
    """Index information plus a partial mask seed for a second-degree neighbour.

    ``index_payload`` is the selection seed (int) under random subsampling,
    or the framed gamma-coded index set (bytes) otherwise.
    """

    sender: int
    recipient: int
    index_payload: int | bytes
    mask_seed: int

    @property
    def nbytes(self) -> int:
        payload = SEED_BYTES if isinstance(self.index_payload, int) else len(self.index_payload)
        return SEED_BYTES + payload


@dataclass(frozen=True)
class MaskedModelMsg:
    """Masked sparse model from ``sender`` to adjacent ``recipient``.

    ``transmitted`` is False when the recipient has no other neighbour to
    mask with; nothing goes on the wire then and the message is empty.
    """

    sender: int
    recipient: int
    kept: np.ndarray
    words: np.ndarray
    transmitted: bool = True

    def __post_init__(self):
        if self.kept.shape != self.words.shape:
            raise ValueError("kept indices and words differ in length")

    @property
    def param_bytes(self) -> int:
        return WORD_BYTES * int(self.kept.size) if self.transmitted else 0

    @property
    def meta_bytes(self) -> int:
        return framed_size(self.kept) if self.transmitted else 0


@dataclass
class SendTrace:
    """Instrumentation for one masked message: counters and applied masks."""

    sender: int
    recipient: int
    counts: np.ndarray
    kept: np.ndarray
    applied: np.ndarray
    true_words: np.ndarray
    partners: tuple[int, ...]


@dataclass
class RoundTrace:
    selections: dict[int, np.ndarray] = field(default_factory=dict)
    agreements: dict[int, dict[int, MaskAgreement]] = field(default_factory=dict)
    sends: list[SendTrace] = field(default_factory=list)
    messages: list[MaskedModelMsg] = field(default_factory=list)
    words: np.ndarray | None = None


@dataclass
class RoundResult:
    params: np.ndarray
    records: list[MetricsRecord]
    trace: RoundTrace | None = None


# -- seeds and selection -------------------------------------------------------


def node_round_seed(root_seed: int, node: int, round_: int) -> int:
    return derive_seed(root_seed, node, round_)


def selection_seed(root_seed: int, node: int, round_: int) -> int:
    return derive_seed(node_round_seed(root_seed, node, round_), 0)


def partial_mask_seed(root_seed: int, node: int, partner: int, round_: int) -> int:
    return derive_seed(node_round_seed(root_seed, node, round_), 1, partner)


def select_indices(words: np.ndarray, spec: SelectionSpec, seed: int) -> np.ndarray:
    """Sparsifier output for one node; TopK ranks fixed-point magnitudes."""
    if spec.method is Method.RANDOM:
        return random_subsample(words.size, spec.alpha, seed)
    return topk(words, spec.alpha)


def _selections(words: np.ndarray, spec: SelectionSpec, root_seed: int, round_: int) -> dict[int, np.ndarray]:
    return {
        i: select_indices(words[i], spec, selection_seed(root_seed, i, round_))
        for i in range(words.shape[0])
    }


# -- algorithm phases -------------------------------------------------------------


@lru_cache(maxsize=512)
def _partner_selection(payload: int | bytes, d: int, alpha: float) -> np.ndarray:
    # every second-degree neighbour rebuilds the same set from the same payload
    if isinstance(payload, int):
        idx = random_subsample(d, alpha, payload)
    else:
        idx = unframe_index_set(payload, d)
    idx.flags.writeable = False
    return idx


def prestep_send(node: int, indices: np.ndarray, t: Topology, spec: SelectionSpec,
                 round_: int, root_seed: int) -> list[PrestepMsg]:
    """First half of the prestep: one message to every second-degree neighbour."""
    if spec.method is Method.RANDOM:
        payload: int | bytes = selection_seed(root_seed, node, round_)
    else:
        payload = frame_index_set(indices)
    return [
        PrestepMsg(node, j, payload, partial_mask_seed(root_seed, node, j, round_))
        for j in view2(t, node)
    ]


def prestep_receive(node: int, indices: np.ndarray, sent: Sequence[PrestepMsg],
                    received: Sequence[PrestepMsg], d: int, spec: SelectionSpec,
                    round_: int) -> dict[int, MaskAgreement]:
    """Second half: intersect with each partner's selection and fix the agreement."""
    mine = {m.recipient: m.mask_seed for m in sent}
    agreements = {}
    for msg in received:
        j = msg.sender
        theirs = _partner_selection(msg.index_payload, d, spec.alpha)
        agreements[j] = make_agreement(node, j, round_, mine[j], msg.mask_seed, intersect(indices, theirs))
    return agreements


def send_masked_models(node: int, v: np.ndarray, agreements: dict[int, MaskAgreement],
                       t: Topology, s: int, instrument: bool = False):
    """Mask and sparsify one copy of ``v`` per neighbour.

    For neighbour ``k`` the node adds every pairwise mask agreed with
    ``k``'s other neighbours, counts masks per index, and keeps only the
    indices with at least ``s`` masks. Returns ``(messages, traces)``;
    ``traces`` is empty unless ``instrument`` is set.
    """
    d = v.size
    masks: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    msgs, traces = [], []
    for k in view(t, node):
        partners = comm_set(t, k, node)
        masked = v.copy()
        counts = np.zeros(d, dtype=np.int64)
        for j in partners:
            if j not in masks:
                ag = agreements[j]
                masks[j] = pairwise_mask(ag, ag.direction_for(node))
            idx, m = masks[j]
            masked[idx] += m
            counts[idx] += 1
        kept = np.flatnonzero(counts >= s)
        msgs.append(MaskedModelMsg(node, k, kept, masked[kept], transmitted=bool(partners)))
        if instrument:
            traces.append(SendTrace(node, k, counts, kept, masked[kept] - v[kept], v[kept].copy(), partners))
    return msgs, traces


def aggregate_received(node: int, v: np.ndarray, msgs: Sequence[MaskedModelMsg], t: Topology) -> np.ndarray:
    """Average own words with each neighbour's message, filling gaps with own words.

    Sums stay in the wrap-around domain so masks cancel before decoding;
    the decoded sum is then divided by the number of models.
    """
    neighbours = set(view(t, node))
    seen = set()
    acc = v.copy()
    c = 1
    for msg in msgs:
        if msg.sender not in neighbours or msg.recipient != node:
            raise UnknownSender(f"node {node} got a message from non-neighbour {msg.sender}")
        if msg.sender in seen:
            raise DuplicateNeighborMessage(f"node {node} got two messages from {msg.sender}")
        seen.add(msg.sender)
        vk = v.copy()
        vk[msg.kept] = msg.words
        acc += vk
        c += 1
    return fx_decode(acc) / c


# -- full rounds ----------------------------------------------------------------------


def _check_state(params: np.ndarray, t: Topology) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 2 or params.shape[0] != t.n:
        raise ValueError(f"expected state of shape (n={t.n}, d), got {params.shape}")
    return params


def run_cesar_round(params: np.ndarray, t: Topology, cfg: RoundConfig, round_: int,
                    root_seed: int, instrument: bool = False) -> RoundResult:
    """Execute sparsify, prestep, mask-and-send and aggregate on every node."""
    params = _check_state(params, t)
    n, d = params.shape
    words = fx_encode(params)
    spec, s = cfg.selection, cfg.masking_requirement
    sel = _selections(words, spec, root_seed, round_)

    outbox = {i: prestep_send(i, sel[i], t, spec, round_, root_seed) for i in range(n)}
    inbox: dict[int, list[PrestepMsg]] = defaultdict(list)
    for msgs in outbox.values():
        for m in msgs:
            inbox[m.recipient].append(m)
    agreements = {
        i: prestep_receive(i, sel[i], outbox[i], inbox[i], d, spec, round_) for i in range(n)
    }

    model_inbox: dict[int, list[MaskedModelMsg]] = defaultdict(list)
    trace = RoundTrace(selections=sel, agreements=agreements, words=words) if instrument else None
    records = []
    for i in range(n):
        msgs, sends = send_masked_models(i, words[i], agreements[i], t, s, instrument)
        for m in msgs:
            model_inbox[m.recipient].append(m)
        if trace is not None:
            trace.sends.extend(sends)
            trace.messages.extend(msgs)
        deg = t.degree(i)
        records.append(MetricsRecord(
            round=round_,
            node=i,
            sent_protocol_bytes=sum(m.nbytes for m in outbox[i]),
            sent_param_bytes=sum(m.param_bytes for m in msgs),
            sent_meta_bytes=sum(m.meta_bytes for m in msgs),
            kept_fraction=float(np.mean([m.kept.size / d for m in msgs])) if msgs else 0.0,
            degree=deg,
            prestep_messages=len(outbox[i]),
            algorithm="cesar",
        ))

    new = np.empty_like(params)
    for i in range(n):
        new[i] = aggregate_received(i, words[i], model_inbox[i], t)
    return RoundResult(new, records, trace)


def run_plain_round_oracle(params: np.ndarray, t: Topology, cfg: RoundConfig | SelectionSpec,
                           round_: int, root_seed: int, s: int | None = None) -> np.ndarray:
    """Same selections and discard rule as the masked round, without masks.

    The per-index count a sender would reach for receiver ``k`` is derived
    directly from how many of ``k``'s neighbours selected the index, not
    from pairwise agreements. ``s`` may be 0 here (keep every selected index).
    """
    params = _check_state(params, t)
    if isinstance(cfg, RoundConfig):
        spec, req = cfg.selection, cfg.masking_requirement
    else:
        spec, req = cfg, 0
    if s is not None:
        req = s
    n, d = params.shape
    words = fx_encode(params)
    selected = np.zeros((n, d), dtype=bool)
    for i, idx in _selections(words, spec, root_seed, round_).items():
        selected[i, idx] = True

    new = np.empty_like(params)
    for k in range(n):
        nbrs = list(view(t, k))
        others = selected[nbrs].sum(axis=0) if nbrs else np.zeros(d, dtype=np.int64)
        acc = words[k].copy()
        for i in nbrs:
            keep = selected[i] & (others - 1 >= req)
            contrib = words[k].copy()
            contrib[keep] = words[i][keep]
            acc += contrib
        new[k] = fx_decode(acc) / (1 + len(nbrs))
    return new


def metropolis_hastings_weights(t: Topology) -> dict[int, dict[int, float]]:
    """Edge weight ``1 / (1 + max(deg_i, deg_j))``; the self-weight takes the rest."""
    w: dict[int, dict[int, float]] = {}
    for i in range(t.n):
        row = {j: 1.0 / (1 + max(t.degree(i), t.degree(j))) for j in view(t, i)}
        row[i] = 1.0 - sum(row.values())
        w[i] = row
    return w


def dpsgd_baseline_round(params: np.ndarray, t: Topology, selection: SelectionSpec,
                         averaging: Averaging | str, round_: int, root_seed: int) -> RoundResult:
    """Sparsified D-PSGD: broadcast raw selected words to every neighbour."""
    params = _check_state(params, t)
    averaging = Averaging(averaging)
    n, d = params.shape
    words = fx_encode(params)
    sel = _selections(words, selection, root_seed, round_)

    records = []
    for i in range(n):
        deg = t.degree(i)
        records.append(MetricsRecord(
            round=round_,
            node=i,
            sent_protocol_bytes=0,
            sent_param_bytes=deg * WORD_BYTES * int(sel[i].size),
            sent_meta_bytes=deg * framed_size(sel[i]),
            kept_fraction=sel[i].size / d if deg else 0.0,
            degree=deg,
            algorithm="dpsgd",
        ))

    weights = metropolis_hastings_weights(t) if averaging is Averaging.METROPOLIS_HASTINGS else None
    new = np.empty_like(params)
    for k in range(n):
        nbrs = view(t, k)
        if weights is None:
            acc = words[k].copy()
            for i in nbrs:
                contrib = words[k].copy()
                contrib[sel[i]] = words[i][sel[i]]
                acc += contrib
            new[k] = fx_decode(acc) / (1 + len(nbrs))
        else:
            own = fx_decode(words[k])
            out = weights[k][k] * own
            for i in nbrs:
                contrib = own.copy()
                contrib[sel[i]] = fx_decode(words[i][sel[i]])
                out = out + weights[k][i] * contrib
            new[k] = out
    return RoundResult(new, records)
