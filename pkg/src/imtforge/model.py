"""Attention encoder-decoder over subword ids.

Architecture: a bidirectional LSTM encoder produces one annotation per source
position (forward and backward states concatenated). The decoder interleaves
two LSTM blocks around an attention read: the first block combines the
previous target word's embedding with the previous output state, attention
scores its hidden against every annotation to build a context vector, and the
second block combines that context into the next output state. A deep output
layer mixes output state, context and previous embedding before the softmax
projection over the target vocabulary.

The LSTM blocks follow the unconventional hidden rule hidden = gate_o * cell
by default (no tanh on the cell); ``ModelConfig.standard_lstm_output`` turns
on the conventional hidden = gate_o * tanh(cell).

All math goes through the autodiff primitives, so a recording tape can
differentiate any value produced here.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bpe import BOS_ID

CHECKPOINT_MAGIC = "imtforge-ckpt-v1"

GATES = ("cand", "forget", "input", "output")
# block name -> input width as a function of (embed, hidden)
BLOCKS = {
    "enc_fwd": lambda e, h: e,
    "enc_bwd": lambda e, h: e,
    "dec_word": lambda e, h: e,   # reads the previous target embedding
    "dec_ctx": lambda e, h: 2 * h,  # reads the attention context
}


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    embed_dim: int = 32
    hidden_dim: int = 32
    attention_dim: int = 32
    readout_dim: int = 32
    standard_lstm_output: bool = False

    def __post_init__(self):
        for name in ("src_vocab", "tgt_vocab", "embed_dim", "hidden_dim",
                     "attention_dim", "readout_dim"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be positive")


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    e, h, a, r = cfg.embed_dim, cfg.hidden_dim, cfg.attention_dim, cfg.readout_dim
    shapes: dict[str, tuple[int, ...]] = {
        "src_embed": (cfg.src_vocab, e),
        "tgt_embed": (cfg.tgt_vocab, e),
        "att_query": (a, h),
        "att_key": (a, 2 * h),
        "att_bias": (a,),
        "att_score": (a,),
        "init_state_w": (h, 2 * h),
        "init_state_b": (h,),
        "init_cell_w": (h, 2 * h),
        "init_cell_b": (h,),
        "out_state": (r, h),
        "out_ctx": (r, 2 * h),
        "out_word": (r, e),
        "out_bias": (r,),
        "proj": (cfg.tgt_vocab, r),
        "proj_bias": (cfg.tgt_vocab,),
    }
    for block, width in BLOCKS.items():
        w = width(e, h)
        for gate in GATES:
            shapes[f"{block}.w_{gate}"] = (h, w)
            shapes[f"{block}.u_{gate}"] = (h, h)
            shapes[f"{block}.b_{gate}"] = (h,)
    return shapes


class ModelParams:
    """Named weight arrays plus the dimension config they satisfy."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = arrays
        self.validate()

    def validate(self) -> None:
        shapes = expected_shapes(self.config)
        if set(shapes) != set(self.arrays):
            missing = set(shapes) - set(self.arrays)
            extra = set(self.arrays) - set(shapes)
            raise ModelError(f"tensor names mismatch: missing={sorted(missing)}, "
                             f"extra={sorted(extra)}")
        for name, shape in shapes.items():
            arr = self.arrays[name]
            if tuple(arr.shape) != shape:
                raise ModelError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name}: non-finite entries")

    @classmethod
    def new(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        """Glorot-uniform matrices, zero biases, scaled-normal embeddings."""
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in expected_shapes(config).items():
            if name == "att_score":
                # scoring vector, not a bias: zero would start attention blind
                limit = np.sqrt(6.0 / (shape[0] + 1))
                arrays[name] = rng.uniform(-limit, limit, size=shape)
            elif len(shape) == 1:
                arrays[name] = np.zeros(shape)
            elif name.endswith("_embed"):
                arrays[name] = rng.normal(0.0, 0.1, size=shape)
            else:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                arrays[name] = rng.uniform(-limit, limit, size=shape)
        return cls(config, arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config,
                           {k: v.copy() for k, v in self.arrays.items()})

    def view(self, tape: ad.Tape) -> "ParamsView":
        return ParamsView(self, tape)

    def save(self, path, extra_tensors: dict[str, np.ndarray] | None = None,
             meta: dict | None = None) -> None:
        save_checkpoint(path, self, extra_tensors or {}, meta or {})

    @classmethod
    def load(cls, path) -> "ModelParams":
        params, _, _ = load_checkpoint(path)
        return params


class ParamsView:
    """One forward pass's leaf tensors, all bound to a single tape."""

    def __init__(self, params: ModelParams, tape: ad.Tape):
        self.config = params.config
        self.tape = tape
        self.t = {name: tape.tensor(arr) for name, arr in params.arrays.items()}
        self._zero_h = tape.tensor(np.zeros(params.config.hidden_dim))

    def __getitem__(self, name: str) -> Tensor:
        return self.t[name]

    def tensors(self) -> dict[str, Tensor]:
        return dict(self.t)


class EncoderAnnotations(NamedTuple):
    vectors: list[Tensor]  # one per source position, each 2*hidden wide

    @property
    def length(self) -> int:
        return len(self.vectors)


class DecoderState(NamedTuple):
    out_hidden: Tensor   # second block's hidden, feeds the next word block step
    out_cell: Tensor
    word_hidden: Tensor  # first block's hidden at the step that produced this state
    word_cell: Tensor
    prev_id: int


class AttentionOutput(NamedTuple):
    scores: Tensor   # raw alignment scores, one per source position
    weights: Tensor  # softmax of scores
    context: Tensor  # weighted sum of annotations


def _affine(w: Tensor, x: Tensor, u: Tensor, h: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.add(ad.matmul(w, x), ad.matmul(u, h)), b)


def lstm_step(view: ParamsView, block: str, x: Tensor,
              h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step of the named block; returns (hidden, cell)."""
    v = view.t
    cand = ad.tanh(_affine(v[f"{block}.w_cand"], x, v[f"{block}.u_cand"], h_prev,
                           v[f"{block}.b_cand"]))
    forget = ad.sigmoid(_affine(v[f"{block}.w_forget"], x, v[f"{block}.u_forget"],
                                h_prev, v[f"{block}.b_forget"]))
    gate_in = ad.sigmoid(_affine(v[f"{block}.w_input"], x, v[f"{block}.u_input"],
                                 h_prev, v[f"{block}.b_input"]))
    gate_out = ad.sigmoid(_affine(v[f"{block}.w_output"], x, v[f"{block}.u_output"],
                                  h_prev, v[f"{block}.b_output"]))
    cell = ad.add(ad.mul(forget, c_prev), ad.mul(gate_in, cand))
    if view.config.standard_lstm_output:
        hidden = ad.mul(gate_out, ad.tanh(cell))
    else:
        hidden = ad.mul(gate_out, cell)
    return hidden, cell


def encode(view: ParamsView, src_ids: list[int]) -> EncoderAnnotations:
    """Bidirectional encoding; annotation j = concat(forward_j, backward_j)."""
    if not src_ids:
        raise ModelError("cannot encode an empty source")
    n = view.config.src_vocab
    for i in src_ids:
        if not (0 <= i < n):
            raise ModelError(f"source id {i} out of range [0, {n})")
    embeds = [ad.embedding(view["src_embed"], i) for i in src_ids]

    def run(block, seq):
        h = c = view._zero_h
        states = []
        for x in seq:
            h, c = lstm_step(view, block, x, h, c)
            states.append(h)
        return states

    fwd = run("enc_fwd", embeds)
    bwd = list(reversed(run("enc_bwd", list(reversed(embeds)))))
    return EncoderAnnotations([ad.concat([f, b]) for f, b in zip(fwd, bwd)])


def init_decoder_state(view: ParamsView,
                       annotations: EncoderAnnotations) -> DecoderState:
    """Output state and cell from a tanh projection of the mean annotation."""
    mean = annotations.vectors[0]
    for vec in annotations.vectors[1:]:
        mean = ad.add(mean, vec)
    mean = ad.scale(mean, 1.0 / annotations.length)
    s0 = ad.tanh(ad.add(ad.matmul(view["init_state_w"], mean), view["init_state_b"]))
    c0 = ad.tanh(ad.add(ad.matmul(view["init_cell_w"], mean), view["init_cell_b"]))
    return DecoderState(s0, c0, view._zero_h, view._zero_h, BOS_ID)


def attend(view: ParamsView, query_hidden: Tensor,
           annotations: EncoderAnnotations) -> AttentionOutput:
    """Additive attention: score_j = v . tanh(Wq q + Wk h_j + b)."""
    query = ad.matmul(view["att_query"], query_hidden)
    scores = []
    for h_j in annotations.vectors:
        act = ad.tanh(ad.add(ad.add(query, ad.matmul(view["att_key"], h_j)),
                             view["att_bias"]))
        scores.append(ad.sumall(ad.mul(view["att_score"], act)))
    e = ad.concat(scores)
    weights = ad.softmax(e)
    context = ad.mul(annotations.vectors[0], ad.pick(weights, 0))
    for j in range(1, annotations.length):
        context = ad.add(context,
                         ad.mul(annotations.vectors[j], ad.pick(weights, j)))
    return AttentionOutput(e, weights, context)


def decoder_step(view: ParamsView, prev_id: int, state: DecoderState,
                 annotations: EncoderAnnotations) -> tuple[DecoderState, Tensor]:
    """Advance the decoder one target position; returns new state and p(y)."""
    if not (0 <= prev_id < view.config.tgt_vocab):
        raise ModelError(f"target id {prev_id} out of range")
    prev_embed = ad.embedding(view["tgt_embed"], prev_id)
    word_h, word_c = lstm_step(view, "dec_word", prev_embed,
                               state.out_hidden, state.word_cell)
    att = attend(view, word_h, annotations)
    out_h, out_c = lstm_step(view, "dec_ctx", att.context, word_h, state.out_cell)
    readout = ad.tanh(
        ad.add(ad.add(ad.add(ad.matmul(view["out_state"], out_h),
                             ad.matmul(view["out_ctx"], att.context)),
                      ad.matmul(view["out_word"], prev_embed)),
               view["out_bias"]))
    logits = ad.add(ad.matmul(view["proj"], readout), view["proj_bias"])
    probs = ad.softmax(logits)
    return DecoderState(out_h, out_c, word_h, word_c, prev_id), probs


# ---------------------------------------------------------------------------
# checkpoint container


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    raw = fh.read(4)
    if len(raw) < 4:
        raise ModelError("truncated checkpoint")
    (name_len,) = struct.unpack("<I", raw)
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
    return name, data.astype(np.float64)


def save_checkpoint(path, params: ModelParams,
                    extra_tensors: dict[str, np.ndarray],
                    meta: dict) -> None:
    """Binary container: magic line, JSON header line, named float64 tensors."""
    names = sorted(params.arrays) + sorted(extra_tensors)
    header = {"config": asdict(params.config), "tensors": len(names), "meta": meta}
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode("ascii"))
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for name in sorted(params.arrays):
            _write_tensor(fh, name, params.arrays[name])
        for name in sorted(extra_tensors):
            _write_tensor(fh, "x/" + name, extra_tensors[name])


def load_checkpoint(path) -> tuple[ModelParams, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"not a checkpoint (header {magic!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        config = ModelConfig(**header["config"])
        arrays: dict[str, np.ndarray] = {}
        extra: dict[str, np.ndarray] = {}
        for _ in range(header["tensors"]):
            name, arr = _read_tensor(fh)
            if name.startswith("x/"):
                extra[name[2:]] = arr
            else:
                arrays[name] = arr
    params = ModelParams(config, arrays)  # validates shapes
    return params, extra, header.get("meta", {})
