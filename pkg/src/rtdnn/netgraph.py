"""Recurrent block network mapping encoded frames to coder parameters.

Block numbering and roles::

    1, 2    input blocks (duration/distance data; TDNN labels and prosody)
    3, 4    phone-label -> articulatory-feature lookups (fixed table)
    5-8     TDNN labels, TDNN features, context labels, context features
    9-13    higher-level hidden blocks
    14      main output: LSFs, log energy, f0, voicing boundary
    15, 16  feedback buffers (LSF history, source-parameter history)
    17-19   feedback transforms
    20-24   auxiliary band-power heads, two bands each

Training is per-frame SGD with momentum; the feedback buffers hold the
ground-truth targets of the previous frames (teacher forcing), so every
frame's gradient stops at the buffers.
"""

from __future__ import annotations

import copy
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .encoder import EncoderConfig, InputVector, SamplingSchedule
from .phoneset import PhoneSet, default_phoneset
from .vocoder import CoderParams, VocoderConfig

log = logging.getLogger(__name__)

MAGIC = b"RTDNN1\n"
LSF_MIN_GAP = 1e-3
N_SOURCE = 3  # log energy, f0, fb

TRAINABLE_KINDS = ("dense", "transform", "output_main", "output_bands")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class HiddenSizes:
    front: int = 32      # blocks 5-8
    mid: int = 64        # blocks 9-13
    feedback: int = 16   # blocks 17-19


@dataclass
class Block:
    id: int
    kind: str
    in_dim: int
    out_dim: int
    activation: str = "sigmoid"
    sources: tuple = ()
    w_off: int = -1
    b_off: int = -1

    @property
    def trainable(self) -> bool:
        return self.kind in TRAINABLE_KINDS

    @property
    def n_params(self) -> int:
        return self.out_dim * self.in_dim + self.out_dim if self.trainable else 0


# sources name either an encoder stream ("a".."e"), a buffer, or a block id
_WIRING = {
    5: ("a",), 6: ("b",), 7: ("c",), 8: ("d",),
    17: (15,), 18: (16,), 19: (15, 16),
    9: (5, 6, "e", 17),
    10: (7, 8, "e", 18),
    11: (5, 6, 7, 8, "e", 19),
    12: (9, 10, 11),
    13: (9, 10, 11),
    14: (12,),
    20: (13,), 21: (13,), 22: (13,), 23: (13,), 24: (13,),
}
_STREAMS = ("a", "b", "c", "d", "e")
_STREAM_NAMES = {"a": "a_labels", "b": "b_features", "c": "c_dd_labels", "d": "d_dd_features", "e": "e_prosody"}


@dataclass
class Normalizer:
    mean_main: np.ndarray
    std_main: np.ndarray
    mean_bands: np.ndarray
    std_bands: np.ndarray

    @classmethod
    def identity(cls, main_dim, band_dim):
        return cls(np.zeros(main_dim), np.ones(main_dim), np.zeros(band_dim), np.ones(band_dim))

    @classmethod
    def fit(cls, main, bands):
        def stats(M):
            mu = M.mean(axis=0)
            sd = M.std(axis=0)
            sd[~(sd > 1e-8)] = 1.0
            return mu, sd
        mm, sm = stats(np.asarray(main, dtype=np.float64))
        mb, sb = stats(np.asarray(bands, dtype=np.float64))
        return cls(mm, sm, mb, sb)

    def norm_main(self, v):
        return (np.asarray(v) - self.mean_main) / self.std_main

    def denorm_main(self, z):
        return np.asarray(z) * self.std_main + self.mean_main

    def norm_bands(self, v):
        return (np.asarray(v) - self.mean_bands) / self.std_bands

    def denorm_bands(self, z):
        return np.asarray(z) * self.std_bands + self.mean_bands


@dataclass
class NetGraph:
    blocks: dict
    dims: dict
    buffer_len: int
    lpc_order: int
    n_bands: int
    theta: np.ndarray
    normalizer: Normalizer
    meta: dict = field(default_factory=dict)
    seed: int = 0
    version: int = 0

    # -- structure ----------------------------------------------------------

    @property
    def main_dim(self) -> int:
        return self.lpc_order + N_SOURCE

    @property
    def feedback_dim(self) -> int:
        return self.buffer_len * self.main_dim

    @property
    def input_dim(self) -> int:
        return sum(self.dims[s] for s in _STREAMS)

    @property
    def edges(self) -> list[tuple]:
        return [(src, b.id) for b in self.ordered_blocks() for src in b.sources]

    def ordered_blocks(self):
        return [self.blocks[k] for k in sorted(self.blocks)]

    def trainable_blocks(self):
        return [b for b in self.ordered_blocks() if b.trainable]

    def topo_order(self) -> list[int]:
        """Per-time-step topological order of trainable blocks.

        Buffers are sources only: the cycle through the feedback path is cut
        at blocks 15/16, so a cycle here means a wiring bug.
        """
        done = set(_STREAMS) | {15, 16}
        order = []
        pending = [b.id for b in self.trainable_blocks()]
        while pending:
            ready = [i for i in pending if all(s in done for s in self.blocks[i].sources)]
            if not ready:
                raise GraphError(f"cycle among blocks {pending}")
            # keep the band heads last so their outputs are contiguous
            ready.sort(key=lambda i: (i >= 20, i))
            i = ready[0]
            order.append(i)
            done.add(i)
            pending.remove(i)
        return order

    def weights(self, bid: int) -> np.ndarray:
        b = self.blocks[bid]
        return self.theta[b.w_off:b.w_off + b.out_dim * b.in_dim].reshape(b.out_dim, b.in_dim)

    def bias(self, bid: int) -> np.ndarray:
        b = self.blocks[bid]
        return self.theta[b.b_off:b.b_off + b.out_dim]

    def source_dim(self, src) -> int:
        if isinstance(src, str):
            return self.dims[src]
        if src == 15:
            return self.buffer_len * self.lpc_order
        if src == 16:
            return self.buffer_len * N_SOURCE
        return self.blocks[src].out_dim

    def copy(self) -> "NetGraph":
        g = copy.deepcopy(self)
        g._plan = None
        return g

    def touch(self):
        self.version += 1

    # -- flattened plan for the kernels ---------------------------------------

    def plan(self):
        cached = getattr(self, "_plan", None)
        if cached is not None and cached[0] == self._shape_key():
            return cached[1], cached[2]
        offs = {}
        pos = 0
        for s in _STREAMS:
            offs[s] = pos
            pos += self.dims[s]
        offs[15] = pos
        pos += self.source_dim(15)
        offs[16] = pos
        pos += self.source_dim(16)
        order = self.topo_order()
        for i in order:
            offs[i] = pos
            pos += self.blocks[i].out_dim
        cols = {k: [] for k in ("out_off", "out_dim", "act", "w_off", "b_off", "in_dim")}
        src_ptr, src_off, src_dim, src_grad = [0], [], [], []
        for i in order:
            b = self.blocks[i]
            cols["out_off"].append(offs[i])
            cols["out_dim"].append(b.out_dim)
            cols["act"].append(0 if b.activation == "sigmoid" else 1)
            cols["w_off"].append(b.w_off)
            cols["b_off"].append(b.b_off)
            cols["in_dim"].append(b.in_dim)
            for s in b.sources:
                src_off.append(offs[s])
                src_dim.append(self.source_dim(s))
                src_grad.append(1 if isinstance(s, int) and s in self.blocks and self.blocks[s].trainable else 0)
            src_ptr.append(len(src_off))
        arr = lambda v: np.asarray(v, dtype=np.int64)
        plan = tuple(arr(cols[k]) for k in ("out_off", "out_dim", "act", "w_off", "b_off", "in_dim")) + (
            arr(src_ptr), arr(src_off), arr(src_dim), arr(src_grad))
        band_ids = [i for i in order if self.blocks[i].kind == "output_bands"]
        lay = arr([
            self.input_dim, offs[15], offs[16], self.buffer_len, self.lpc_order, N_SOURCE,
            offs[14], self.main_dim, offs[band_ids[0]] if band_ids else pos, self.n_bands, pos,
        ])
        self._plan = (self._shape_key(), plan, lay)
        return plan, lay

    def _shape_key(self):
        return tuple((b.id, b.in_dim, b.out_dim, b.sources) for b in self.ordered_blocks()) + (self.buffer_len,)

    def n_params(self) -> int:
        return len(self.theta)


def build_default_graph(ps: PhoneSet, enc_cfg: EncoderConfig | None = None, voc_cfg: VocoderConfig | None = None,
                        hidden: HiddenSizes = HiddenSizes(), buffer_len: int = 10) -> NetGraph:
    enc_cfg = enc_cfg or EncoderConfig()
    voc_cfg = voc_cfg or VocoderConfig()
    if buffer_len < 0:
        raise GraphError("buffer_len must be >= 0")
    if voc_cfg.n_bands % 5:
        raise GraphError("band heads 20-24 need a band count divisible by 5")
    lay = enc_cfg.layout(ps)
    dims = {s: lay.dims[lay.names.index(_STREAM_NAMES[s])] for s in _STREAMS}
    P = voc_cfg.lpc_order
    main_dim = P + N_SOURCE
    per_head = voc_cfg.n_bands // 5

    blocks = {
        1: Block(1, "input", dims["c"], dims["c"], "linear"),
        2: Block(2, "input", dims["a"] + dims["e"], dims["a"] + dims["e"], "linear"),
        3: Block(3, "lookup", dims["a"], dims["b"], "linear", ("a",)),
        4: Block(4, "lookup", dims["c"], dims["d"], "linear", ("c",)),
        15: Block(15, "buffer", buffer_len * P, buffer_len * P, "linear"),
        16: Block(16, "buffer", buffer_len * N_SOURCE, buffer_len * N_SOURCE, "linear"),
    }
    out_dims = {5: hidden.front, 6: hidden.front, 7: hidden.front, 8: hidden.front,
                9: hidden.mid, 10: hidden.mid, 11: hidden.mid, 12: hidden.mid, 13: hidden.mid,
                17: hidden.feedback, 18: hidden.feedback, 19: hidden.feedback, 14: main_dim}
    for i in range(20, 25):
        out_dims[i] = per_head
    g = NetGraph(blocks, dims, buffer_len, P, voc_cfg.n_bands, np.zeros(0),
                 Normalizer.identity(main_dim, voc_cfg.n_bands))
    for bid in (5, 6, 7, 8, 17, 18, 19, 9, 10, 11, 12, 13, 14, 20, 21, 22, 23, 24):
        kind = ("transform" if bid in (17, 18, 19) else "output_main" if bid == 14
                else "output_bands" if bid >= 20 else "dense")
        srcs = _WIRING[bid]
        in_dim = sum(g.source_dim(s) for s in srcs)
        blocks[bid] = Block(bid, kind, in_dim, out_dims[bid],
                            "linear" if kind.startswith("output") else "sigmoid", srcs)
    pos = 0
    for b in g.trainable_blocks():
        b.w_off = pos
        pos += b.out_dim * b.in_dim
        b.b_off = pos
        pos += b.out_dim
    g.theta = np.zeros(pos)
    g.meta = _meta_from_configs(ps, enc_cfg, voc_cfg, hidden)
    g.topo_order()
    return g


_VOC_INT = ("sample_rate", "frame_samples", "analysis_window", "pitch_window", "nfft")
_VOC_FLOAT = ("f0_min", "f0_max", "voicing_threshold")


def _meta_from_configs(ps, enc_cfg, voc_cfg, hidden):
    meta = {
        "phones": ",".join(ps.labels),
        "n_phones": ps.n_phones,
        "n_features": ps.n_features,
        "schedule": ",".join(str(o) for o in enc_cfg.schedule.offsets),
        "context_radius": enc_cfg.context_radius,
        "max_dist_frames": enc_cfg.max_dist_frames,
        "dd_mark_kinds": ",".join(enc_cfg.dd_mark_kinds),
        "band_edges": ",".join(repr(float(e)) for e in voc_cfg.band_edges),
        "hidden": f"{hidden.front},{hidden.mid},{hidden.feedback}",
    }
    for k in _VOC_INT:
        meta[k] = int(getattr(voc_cfg, k))
    for k in _VOC_FLOAT:
        meta[k] = repr(float(getattr(voc_cfg, k)))
    return meta


def encoder_config_of(g: NetGraph) -> EncoderConfig:
    return _enc_from_meta(g.meta)


def vocoder_config_of(g: NetGraph) -> VocoderConfig:
    return _voc_from_meta(g.meta, g.lpc_order)


def hidden_sizes_of(g: NetGraph) -> HiddenSizes:
    return HiddenSizes(*(int(v) for v in str(g.meta["hidden"]).split(",")))


def _enc_from_meta(m) -> EncoderConfig:
    kinds = tuple(k for k in str(m["dd_mark_kinds"]).split(",") if k)
    return EncoderConfig(SamplingSchedule(tuple(int(o) for o in str(m["schedule"]).split(","))),
                         int(m["context_radius"]), int(m["max_dist_frames"]), kinds)


def _voc_from_meta(m, lpc_order) -> VocoderConfig:
    kw = {k: int(m[k]) for k in _VOC_INT}
    kw.update({k: float(m[k]) for k in _VOC_FLOAT})
    return VocoderConfig(lpc_order=int(lpc_order), band_edges=tuple(float(e) for e in str(m["band_edges"]).split(",")),
                         **kw)


def init_weights(g: NetGraph, seed: int) -> NetGraph:
    """Glorot-uniform weights, zero biases; returns a new graph."""
    g = g.copy()
    rng = np.random.default_rng(seed)
    theta = np.zeros(g.n_params())
    for b in g.trainable_blocks():
        lim = math.sqrt(6.0 / (b.in_dim + b.out_dim))
        theta[b.w_off:b.w_off + b.out_dim * b.in_dim] = rng.uniform(-lim, lim, b.out_dim * b.in_dim)
    g.theta = theta
    g.seed = int(seed)
    g.touch()
    return g


# -- per-frame evaluation -----------------------------------------------------

@dataclass
class ForwardCache:
    act: np.ndarray
    version: int
    graph_id: int


def _flat_input(g: NetGraph, x) -> np.ndarray:
    row = x.flat() if isinstance(x, InputVector) else np.asarray(x, dtype=np.float64).ravel()
    if row.shape[0] != g.input_dim:
        raise GraphError(f"input has {row.shape[0]} entries, graph expects {g.input_dim}")
    return row


def empty_buffers(g: NetGraph) -> np.ndarray:
    return np.zeros((g.buffer_len, g.main_dim))


def _stage(g: NetGraph, x, buffers):
    plan, lay = g.plan()
    act = np.zeros(int(lay[10]))
    act[:g.input_dim] = _flat_input(g, x)
    if buffers is not None and g.buffer_len:
        buf = np.asarray(buffers, dtype=np.float64)
        if buf.shape != (g.buffer_len, g.main_dim):
            raise GraphError(f"buffers must have shape {(g.buffer_len, g.main_dim)}, got {buf.shape}")
        P = g.lpc_order
        act[lay[1]:lay[1] + g.buffer_len * P] = buf[:, :P].ravel()
        act[lay[2]:lay[2] + g.buffer_len * N_SOURCE] = buf[:, P:].ravel()
    return act, plan, lay


def forward(g: NetGraph, x, buffers=None):
    """One frame; returns ``(y_main, y_bands, cache)`` in normalized units.

    ``buffers`` is a ``(R, main_dim)`` shift register (row 0 newest) and is
    only read; advance it with :func:`step_buffers`.
    """
    act, plan, lay = _stage(g, x, buffers)
    kernels.net_forward(act, g.theta, plan)
    y_main = act[lay[6]:lay[6] + lay[7]].copy()
    y_bands = act[lay[8]:lay[8] + lay[9]].copy()
    return y_main, y_bands, ForwardCache(act, g.version, id(g))


@dataclass
class Gradients:
    flat: np.ndarray
    graph: NetGraph

    def weights(self, bid):
        b = self.graph.blocks[bid]
        return self.flat[b.w_off:b.w_off + b.out_dim * b.in_dim].reshape(b.out_dim, b.in_dim)

    def bias(self, bid):
        b = self.graph.blocks[bid]
        return self.flat[b.b_off:b.b_off + b.out_dim]


def loss_value(y_main, y_bands, t_main, t_bands, band_weight):
    return float(np.mean((y_main - t_main) ** 2) + band_weight * np.mean((y_bands - t_bands) ** 2))


def backward(g: NetGraph, cache: ForwardCache, t_main, t_bands, band_weight: float = 0.5) -> Gradients:
    """Gradients of ``MSE(main) + band_weight * MSE(bands)`` for one frame."""
    if cache.version != g.version or cache.graph_id != id(g):
        raise GraphError("stale forward cache: weights changed since the forward pass")
    plan, lay = g.plan()
    grad = np.zeros_like(g.theta)
    kernels.net_backward(cache.act, g.theta, plan, lay, np.asarray(t_main, dtype=np.float64),
                         np.asarray(t_bands, dtype=np.float64), float(band_weight), grad)
    return Gradients(grad, g)


def step_buffers(g: NetGraph, state, y) -> np.ndarray:
    """Shift register push: newest at row 0, oldest row dropped."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (g.main_dim,):
        raise GraphError(f"feedback vector must have {g.main_dim} entries")
    state = np.asarray(state, dtype=np.float64)
    if g.buffer_len == 0:
        return state.copy()
    return np.vstack([y[None, :], state[:-1]])


class _ExactForward:
    """Straight-line forward pass in extended precision, independent of the kernels.

    Holds every block's pre-activation at the base weights so that a single
    perturbed parameter only needs its block and that block's descendants
    recomputed.
    """

    def __init__(self, g: NetGraph, x, buffers, t_main, t_bands, band_weight):
        ld = np.longdouble
        self.g = g
        self.order = g.topo_order()
        self.W = {i: g.weights(i).astype(ld) for i in self.order}
        self.b = {i: g.bias(i).astype(ld) for i in self.order}
        row = _flat_input(g, x).astype(ld)
        vals, pos = {}, 0
        for s in _STREAMS:
            vals[s] = row[pos:pos + g.dims[s]]
            pos += g.dims[s]
        buf = np.zeros((g.buffer_len, g.main_dim)) if buffers is None else np.asarray(buffers, dtype=np.float64)
        vals[15] = buf[:, :g.lpc_order].ravel().astype(ld)
        vals[16] = buf[:, g.lpc_order:].ravel().astype(ld)
        self.inputs, self.pre = {}, {}
        for i in self.order:
            self.inputs[i] = np.concatenate([vals[s] for s in g.blocks[i].sources])
            self.pre[i] = self.W[i] @ self.inputs[i] + self.b[i]
            vals[i] = self._act(i, self.pre[i])
        self.base = vals
        self.t_main = np.asarray(t_main, dtype=ld)
        self.t_bands = np.asarray(t_bands, dtype=ld)
        self.lam = ld(band_weight)
        below = {i: set() for i in self.order}
        for i in reversed(self.order):
            for j in self.order:
                if i in g.blocks[j].sources:
                    below[i] |= {j} | below[j]
        self.below = {i: [j for j in self.order if j in below[i]] for i in self.order}

    def _act(self, i, z):
        return 1 / (1 + np.exp(-z)) if self.g.blocks[i].activation == "sigmoid" else z

    def loss(self, i, z):
        """Loss with block ``i``'s pre-activation replaced by ``z``."""
        vals = dict(self.base)
        vals[i] = self._act(i, z)
        for j in self.below[i]:
            x = np.concatenate([vals[s] for s in self.g.blocks[j].sources])
            vals[j] = self._act(j, self.W[j] @ x + self.b[j])
        bands = [vals[j] for j in self.order if self.g.blocks[j].kind == "output_bands"]
        yb = np.concatenate(bands) if bands else np.zeros(0, dtype=np.longdouble)
        main = np.mean((vals[14] - self.t_main) ** 2)
        return main + (self.lam * np.mean((yb - self.t_bands) ** 2) if len(yb) else 0)


def gradient_check(g: NetGraph, x, buffers, t_main, t_bands, band_weight=0.5, h=1e-4, floor=1e-8):
    """Max relative error between analytic and central-difference gradients.

    The analytic side is the kernel backward pass; the numeric side perturbs
    each parameter by ``+-h`` and re-evaluates the loss with an independent
    extended-precision forward pass, so loss rounding does not swamp tiny
    gradients. Relative error per parameter is ``|a - n| / max(|a|, |n|, floor)``.
    Returns ``(max_rel_err, analytic, numeric)``.
    """
    _, _, cache = forward(g, x, buffers)
    analytic = backward(g, cache, t_main, t_bands, band_weight).flat
    ref = _ExactForward(g, x, buffers, t_main, t_bands, band_weight)
    numeric = np.zeros_like(g.theta)
    hh = np.longdouble(h)
    for i in ref.order:
        blk = g.blocks[i]
        z0, inp = ref.pre[i], ref.inputs[i]
        for r in range(blk.out_dim):
            for c in np.flatnonzero(inp):  # zero inputs give an exactly zero derivative
                z = z0.copy()
                z[r] = z0[r] + hh * inp[c]
                lp = ref.loss(i, z)
                z[r] = z0[r] - hh * inp[c]
                lm = ref.loss(i, z)
                numeric[blk.w_off + r * blk.in_dim + c] = float((lp - lm) / (2 * hh))
            z = z0.copy()
            z[r] = z0[r] + hh
            lp = ref.loss(i, z)
            z[r] = z0[r] - hh
            lm = ref.loss(i, z)
            numeric[blk.b_off + r] = float((lp - lm) / (2 * hh))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    return float(rel.max()), analytic, numeric


SMALL_HIDDEN = HiddenSizes(8, 8, 8)


def reduced_gradient_check(ps: PhoneSet, seed: int, buffer_len: int = 2, band_weight: float = 0.5):
    """Gradient check on the default wiring with every hidden size 8.

    Inputs are a sparse random frame (one-hot-like streams and a dense tail),
    buffers and normalized targets are standard normal draws from ``seed``.
    Returns ``(max_rel_err, n_params)``.
    """
    g = init_weights(build_default_graph(ps, hidden=SMALL_HIDDEN, buffer_len=buffer_len), seed)
    rng = np.random.default_rng([seed, 1])
    x = np.where(rng.random(g.input_dim) < 0.05, rng.uniform(-1.0, 1.0, g.input_dim), 0.0)
    buf = rng.standard_normal((g.buffer_len, g.main_dim))
    err, _, _ = gradient_check(g, x, buf, rng.standard_normal(g.main_dim), rng.standard_normal(g.n_bands),
                               band_weight)
    return err, g.n_params()


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.5
    epochs: int = 1000
    final_learning_rate: float = 0.01  # geometric annealing towards this
    seed: int = 0
    band_loss_weight: float = 0.5
    teacher_forcing: str = "always"
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.final_learning_rate <= self.learning_rate:
            raise ValueError("final_learning_rate must lie in [0, learning_rate]")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.band_loss_weight >= 0:
            raise ValueError("band_loss_weight must be >= 0")
        if self.teacher_forcing != "always":
            raise ValueError("only teacher_forcing='always' is supported")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def learning_rate_at(self, epoch: int) -> float:
        """Step size for ``epoch``, geometric from the initial to the final rate."""
        lr0, lr1 = float(self.learning_rate), float(self.final_learning_rate)
        if self.epochs <= 1 or lr1 == lr0:
            return lr0
        if lr1 == 0:
            return lr0 * (1 - epoch / (self.epochs - 1))
        return lr0 * (lr1 / lr0) ** (epoch / (self.epochs - 1))


@dataclass
class TrainingSet:
    """Frame-stacked training data; targets are in physical units."""

    X: np.ndarray
    main: np.ndarray
    bands: np.ndarray
    starts: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_items(cls, items):
        Xs, Ms, Bs, lengths = [], [], [], []
        for X, main, bands in items:
            X = np.asarray(getattr(X, "matrix", X), dtype=np.float64)
            if not (len(X) == len(main) == len(bands)):
                raise GraphError("inputs and targets differ in length")
            Xs.append(X)
            Ms.append(np.asarray(main, dtype=np.float64))
            Bs.append(np.asarray(bands, dtype=np.float64))
            lengths.append(len(X))
        if not Xs or sum(lengths) == 0:
            raise GraphError("empty corpus")
        lengths = np.asarray(lengths, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        return cls(np.vstack(Xs), np.vstack(Ms), np.vstack(Bs), starts, lengths)

    @property
    def n_utts(self) -> int:
        return len(self.lengths)

    def utterance(self, u):
        s = slice(int(self.starts[u]), int(self.starts[u] + self.lengths[u]))
        return self.X[s], self.main[s], self.bands[s]


@dataclass
class TrainHistory:
    main_mse: list = field(default_factory=list)
    band_mse: list = field(default_factory=list)

    @property
    def loss(self):
        return self.main_mse


def train(g: NetGraph, data: TrainingSet, cfg: TrainConfig = TrainConfig(), callback=None):
    """Teacher-forced per-frame SGD with momentum; returns ``(graph, history)``.

    ``callback(epoch, history, graph)`` runs after every epoch and sees the
    weights as they stand.
    """
    if data.n_utts == 0:
        raise GraphError("empty corpus")
    if data.X.shape[1] != g.input_dim:
        raise GraphError(f"corpus input width {data.X.shape[1]} != graph input {g.input_dim}")
    if not (np.isfinite(data.main).all() and np.isfinite(data.bands).all()):
        raise GraphError("training targets contain NaN or inf")
    g = g.copy()
    g.normalizer = Normalizer.fit(data.main, data.bands)
    Tm = np.ascontiguousarray(g.normalizer.norm_main(data.main))
    Tb = np.ascontiguousarray(g.normalizer.norm_bands(data.bands))
    X = np.ascontiguousarray(data.X)
    plan, lay = g.plan()
    theta = g.theta = g.theta.copy()  # updated in place by the kernel
    vel = np.zeros_like(theta)
    rng = np.random.default_rng(cfg.seed)
    hist = TrainHistory()
    n_main, n_band = g.main_dim, g.n_bands
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate_at(epoch)
        order = rng.permutation(data.n_utts) if cfg.shuffle else np.arange(data.n_utts)
        sq_main, sq_band, n = kernels.net_train_epoch(
            theta, vel, X, Tm, Tb, data.starts, data.lengths, order.astype(np.int64), plan, lay,
            lr, float(cfg.momentum), float(cfg.band_loss_weight))
        if not (math.isfinite(sq_main) and math.isfinite(sq_band)):
            raise FloatingPointError(f"non-finite loss in epoch {epoch} after {n} frames; "
                                     f"try a smaller learning rate (now {lr:g})")
        hist.main_mse.append(sq_main / (n * n_main))
        hist.band_mse.append(sq_band / (n * n_band) if n_band else 0.0)
        g.touch()
        if callback is not None:
            callback(epoch, hist, g)
        log.debug("epoch %d main %.5f band %.5f", epoch, hist.main_mse[-1], hist.band_mse[-1])
    return g, hist


def run_network(g: NetGraph, X, forced=None):
    """Normalized outputs over an utterance; ``forced`` gives teacher-forced feedback."""
    plan, lay = g.plan()
    X = np.ascontiguousarray(np.asarray(getattr(X, "matrix", X), dtype=np.float64))
    if X.ndim != 2 or X.shape[1] != g.input_dim:
        raise GraphError("input matrix width does not match the graph")
    f = np.zeros((0, g.main_dim)) if forced is None else np.ascontiguousarray(forced, dtype=np.float64)
    return kernels.net_run(g.theta, X, plan, lay, f)


def repair_lsf(lsf, gap: float = LSF_MIN_GAP):
    """Sort and clamp into (0, pi) with a minimum spacing; returns ``(lsf, changed)``."""
    lsf = np.asarray(lsf, dtype=np.float64)
    out = np.sort(lsf)
    out[0] = max(out[0], gap)
    for i in range(1, len(out)):
        out[i] = max(out[i], out[i - 1] + gap)
    if out[-1] > math.pi - gap:
        out[-1] = math.pi - gap
        for i in range(len(out) - 2, -1, -1):
            out[i] = min(out[i], out[i + 1] - gap)
    return out, not np.array_equal(out, lsf)


@dataclass
class InferResult:
    params: list
    normalized_main: np.ndarray
    normalized_bands: np.ndarray
    lsf_repairs: int

    def __len__(self):
        return len(self.params)


def infer(g: NetGraph, X) -> InferResult:
    """Free-running inference: feedback buffers hold the network's own outputs."""
    Ym, Yb = run_network(g, X)
    main = g.normalizer.denorm_main(Ym)
    bands = g.normalizer.denorm_bands(Yb)
    P = g.lpc_order
    params = []
    repairs = 0
    for m, b in zip(main, bands):
        lsf, changed = repair_lsf(m[:P])
        repairs += changed
        params.append(CoderParams(lsf, float(m[P]), float(m[P + 1]), float(m[P + 2]), b.copy()))
    return InferResult(params, Ym, Yb, repairs)


# -- model file -----------------------------------------------------------------

def _fmt_vec(v):
    return ",".join(repr(float(x)) for x in v)


def _parse_vec(s):
    return np.array([float(x) for x in s.split(",")]) if s else np.zeros(0)


def model_bytes(g: NetGraph) -> bytes:
    n = g.normalizer
    header = dict(g.meta)
    header.update({
        "buffer_len": g.buffer_len,
        "lpc_order": g.lpc_order,
        "n_bands": g.n_bands,
        "dims": ",".join(f"{s}:{g.dims[s]}" for s in _STREAMS),
        "seed": g.seed,
        "norm_mean_main": _fmt_vec(n.mean_main),
        "norm_std_main": _fmt_vec(n.std_main),
        "norm_mean_bands": _fmt_vec(n.mean_bands),
        "norm_std_bands": _fmt_vec(n.std_bands),
        "n_params": g.n_params(),
    })
    buf = io.BytesIO()
    buf.write(MAGIC)
    for k in sorted(header):
        buf.write(f"{k}={header[k]}\n".encode("utf-8"))
    buf.write(b"\n")
    buf.write(np.asarray(g.theta, dtype="<f8").tobytes())
    return buf.getvalue()


def save_model(g: NetGraph, path):
    Path(path).write_bytes(model_bytes(g))


def model_from_bytes(data: bytes, ps: PhoneSet | None = None) -> NetGraph:
    if not data.startswith(MAGIC):
        raise GraphError("not a model file (bad magic)")
    end = data.find(b"\n\n", len(MAGIC) - 1)
    if end < 0:
        raise GraphError("model header not terminated")
    header = {}
    for line in data[len(MAGIC):end].decode("utf-8").splitlines():
        if line:
            k, _, v = line.partition("=")
            header[k] = v
    body = data[end + 2:]
    try:
        if ps is None:
            ps = default_phoneset()
        if ",".join(ps.labels) != header["phones"]:
            raise GraphError("model was trained with a different phone set")
        hidden = HiddenSizes(*(int(v) for v in header["hidden"].split(",")))
        enc = _enc_from_meta(header)
        voc = _voc_from_meta(header, int(header["lpc_order"]))
        g = build_default_graph(ps, enc, voc, hidden, int(header["buffer_len"]))
        dims = dict((kv.split(":")[0], int(kv.split(":")[1])) for kv in header["dims"].split(","))
        n = int(header["n_params"])
        norm = Normalizer(_parse_vec(header["norm_mean_main"]), _parse_vec(header["norm_std_main"]),
                          _parse_vec(header["norm_mean_bands"]), _parse_vec(header["norm_std_bands"]))
        seed = int(header["seed"])
    except KeyError as exc:
        raise GraphError(f"model header lacks {exc}") from None
    if dims != g.dims:
        raise GraphError("stream dimensions in the model header do not match the rebuilt graph")
    if n != g.n_params() or len(body) != 8 * n:
        raise GraphError(f"weight block has {len(body) // 8} values, expected {g.n_params()}")
    if len(norm.mean_main) != g.main_dim or len(norm.mean_bands) != g.n_bands:
        raise GraphError("normalizer size does not match the graph")
    g.theta = np.frombuffer(body, dtype="<f8").astype(np.float64)
    g.normalizer = norm
    g.seed = seed
    g.touch()
    return g


def load_model(path, ps: PhoneSet | None = None) -> NetGraph:
    return model_from_bytes(Path(path).read_bytes(), ps)


def header_of(path) -> dict:
    data = Path(path).read_bytes()
    end = data.find(b"\n\n")
    return dict(line.partition("=")[::2] for line in data[len(MAGIC):end].decode().splitlines() if line)


__all__ = [
    "Block", "NetGraph", "HiddenSizes", "Normalizer", "TrainConfig", "TrainingSet", "TrainHistory",
    "build_default_graph", "init_weights", "forward", "backward", "step_buffers", "train", "infer",
    "run_network", "repair_lsf", "gradient_check", "save_model", "load_model", "model_bytes",
    "model_from_bytes", "empty_buffers", "loss_value", "reduced_gradient_check",
]
