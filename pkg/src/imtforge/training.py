"""Maximum-likelihood training and single-sample online updates.

Minibatch SGD-family optimization over sentence negative log-likelihood,
with global-norm gradient clipping, optional Gaussian weight noise, and
dev-BLEU early stopping. The same machinery drives one-pair online updates
when a confirmed translation arrives during interactive use.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bpe import EOS_ID
from .model import (
    ModelParams,
    ParamsView,
    decoder_step,
    encode,
    init_decoder_state,
)

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adagrad", "adadelta", "adam")

# Per-algorithm default step sizes. Adadelta 0.1 and Adam 0.0002 follow the
# task defaults this engine was tuned around; sgd/adagrad are desk-scale picks.
DEFAULT_RATES = {
    "sgd": 0.01,
    "adagrad": 0.1,
    "adadelta": 0.1,
    "adam": 0.0002,
}

ADAGRAD_EPS = 1e-8
ADADELTA_DECAY = 0.95
ADADELTA_EPS = 1e-6
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(Exception):
    """Raised on invalid training input or diverged optimization."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class TrainConfig:
    batch_size: int = 8
    clip_norm: float = 5.0
    noise_stddev: float = 0.0
    eval_every: int = 200
    patience: int = 20
    max_updates: int = 3000
    seed: int = 0

    def validate(self):
        if self.batch_size < 1 or self.eval_every < 1 or self.patience < 1:
            raise TrainingError("batch size, eval interval and patience must be >= 1")
        if self.max_updates < 1:
            raise TrainingError("max_updates must be >= 1")
        if self.clip_norm <= 0:
            raise TrainingError("clip norm must be positive")
        if self.noise_stddev < 0:
            raise TrainingError("noise stddev must be non-negative")


class OptimizerState:
    """One optimization algorithm plus its per-parameter accumulators.

    Accumulator slots are created lazily on first update, shaped like the
    parameter they track. `step` counts applied updates (Adam bias correction
    keys off it) and only ever grows.
    """

    def __init__(self, algorithm: str, learning_rate: float | None = None):
        if algorithm not in OPTIMIZERS:
            raise TrainingError(f"unknown optimizer {algorithm!r}")
        if learning_rate is not None and learning_rate < 0:
            raise TrainingError("learning rate must be non-negative")
        self.algorithm = algorithm
        self.learning_rate = (
            DEFAULT_RATES[algorithm] if learning_rate is None else float(learning_rate)
        )
        self.step = 0
        self.slots: dict[str, dict[str, np.ndarray]] = {}

    def _slot(self, name: str, like: np.ndarray, keys: tuple[str, ...]):
        entry = self.slots.get(name)
        if entry is None:
            entry = {k: np.zeros_like(like) for k in keys}
            self.slots[name] = entry
        return entry

    # -- checkpoint embedding ------------------------------------------------

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, entry in self.slots.items():
            for key, arr in entry.items():
                out[f"opt/{name}/{key}"] = arr
        return out

    def meta(self) -> dict:
        return {
            "optimizer": self.algorithm,
            "learning_rate": self.learning_rate,
            "step": self.step,
        }

    @classmethod
    def from_checkpoint(cls, extras: dict[str, np.ndarray], meta: dict):
        state = cls(meta["optimizer"], meta["learning_rate"])
        state.step = int(meta.get("step", 0))
        for full, arr in extras.items():
            if not full.startswith("opt/"):
                continue
            _, name, key = full.split("/", 2)
            state.slots.setdefault(name, {})[key] = np.array(arr)
        return state


def make_optimizer(algorithm: str, learning_rate: float | None = None) -> OptimizerState:
    return OptimizerState(algorithm, learning_rate)


# ---------------------------------------------------------------------------
# loss


def sentence_nll(view: ParamsView, src_ids, tgt_ids) -> ad.Tensor:
    """Teacher-forced negative log-likelihood of one sentence pair.

    The target must end with the end-of-sentence id; the start symbol is fed
    implicitly as the first decoder input.
    """
    if not src_ids or not tgt_ids:
        raise TrainingError("source and target must be non-empty")
    if tgt_ids[-1] != EOS_ID:
        raise TrainingError("target must end with the </s> id")
    annotations = encode(view, src_ids)
    state = init_decoder_state(view, annotations)
    prev = state.prev_id
    total = None
    for tid in tgt_ids:
        state, probs = decoder_step(view, prev, state, annotations)
        term = ad.scale(ad.log(ad.pick(probs, tid)), -1.0)
        total = term if total is None else ad.add(total, term)
        prev = tid
    return total


def batch_nll(view: ParamsView, pairs) -> ad.Tensor:
    """Sum of sentence losses over a minibatch."""
    total = None
    for src_ids, tgt_ids in pairs:
        term = sentence_nll(view, src_ids, tgt_ids)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise TrainingError("empty batch")
    return total


# ---------------------------------------------------------------------------
# gradient plumbing


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale so the global L2 norm does not exceed max_norm."""
    if max_norm <= 0:
        raise TrainingError("clip norm must be positive")
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}


def apply_update(params: ModelParams, grads: dict[str, np.ndarray],
                 state: OptimizerState) -> ModelParams:
    """Advance params in place by one optimizer step. Rejects non-finite grads."""
    for name, g in grads.items():
        if name not in params.arrays:
            raise TrainingError(f"gradient for unknown parameter {name!r}")
        if g.shape != params.arrays[name].shape:
            raise TrainingError(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name!r}, update rejected")

    state.step += 1
    rho = state.learning_rate
    for name, g in grads.items():
        theta = params.arrays[name]
        if state.algorithm == "sgd":
            theta -= rho * g
        elif state.algorithm == "adagrad":
            slot = state._slot(name, theta, ("sum_sq",))
            slot["sum_sq"] += g * g
            theta -= rho * g / (np.sqrt(slot["sum_sq"]) + ADAGRAD_EPS)
        elif state.algorithm == "adadelta":
            slot = state._slot(name, theta, ("grad_rms", "delta_rms"))
            slot["grad_rms"] *= ADADELTA_DECAY
            slot["grad_rms"] += (1 - ADADELTA_DECAY) * g * g
            delta = (np.sqrt(slot["delta_rms"] + ADADELTA_EPS)
                     / np.sqrt(slot["grad_rms"] + ADADELTA_EPS)) * g
            slot["delta_rms"] *= ADADELTA_DECAY
            slot["delta_rms"] += (1 - ADADELTA_DECAY) * delta * delta
            theta -= rho * delta
        else:  # adam
            slot = state._slot(name, theta, ("m", "v"))
            slot["m"] *= ADAM_BETA1
            slot["m"] += (1 - ADAM_BETA1) * g
            slot["v"] *= ADAM_BETA2
            slot["v"] += (1 - ADAM_BETA2) * g * g
            m_hat = slot["m"] / (1 - ADAM_BETA1 ** state.step)
            v_hat = slot["v"] / (1 - ADAM_BETA2 ** state.step)
            theta -= rho * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params


def add_weight_noise(params: ModelParams, stddev: float,
                     rng: np.random.Generator) -> ModelParams:
    """Gaussian-perturbed copy for a training forward pass.

    Gradients taken at the perturbed point are applied to the clean weights;
    decoding never goes through here.
    """
    if stddev < 0:
        raise TrainingError("noise stddev must be non-negative")
    noisy = params.copy()
    if stddev == 0:
        return noisy
    for name in sorted(noisy.arrays):
        arr = noisy.arrays[name]
        arr += rng.normal(0.0, stddev, size=arr.shape)
    return noisy


def _batch_gradients(params: ModelParams, batch, noise_stddev: float,
                     rng: np.random.Generator):
    """(mean loss, mean gradient dict) for one minibatch.

    With weight noise the forward/backward pass runs at a perturbed point
    while the returned gradients target the caller's clean parameters.
    """
    at_point = params if noise_stddev == 0 else add_weight_noise(params, noise_stddev, rng)
    names = sorted(params.arrays)
    with ad.Tape() as tape:
        view = at_point.view(tape)
        loss = batch_nll(view, batch)
        grad_list = ad.gradient(loss, [view.t[n] for n in names])
    inv = 1.0 / len(batch)
    grads = {n: g * inv for n, g in zip(names, grad_list)}
    return float(loss.data) * inv, grads


# ---------------------------------------------------------------------------
# loops


def train(corpus, dev_set, params: ModelParams, optimizer: OptimizerState,
          config: TrainConfig, eval_fn=None):
    """Minibatch training with dev-BLEU early stopping.

    `corpus` and `dev_set` are lists of (source ids, target ids) pairs;
    targets end with the </s> id. Returns (best-dev params, history) where
    history rows are (update_count, dev_bleu, mean_train_loss). `eval_fn`
    maps params to a dev score; None selects greedy-decode BLEU.
    """
    config.validate()
    if not corpus:
        raise TrainingError("empty training corpus")
    if eval_fn is None:
        eval_fn = _greedy_bleu_eval(dev_set)

    rng = np.random.default_rng(config.seed)
    best_params = params.copy()
    best_score = float("-inf")
    history: list[tuple[int, float, float]] = []
    updates = 0
    stale = 0
    window: list[float] = []

    def evaluate():
        nonlocal best_score, stale
        score = float(eval_fn(params))
        mean_loss = float(np.mean(window)) if window else float("nan")
        history.append((updates, score, mean_loss))
        window.clear()
        if score > best_score:
            best_score = score
            best_params.arrays = {n: a.copy() for n, a in params.arrays.items()}
            stale = 0
        else:
            stale += 1
        return stale >= config.patience

    while updates < config.max_updates:
        order = rng.permutation(len(corpus))
        for start in range(0, len(order), config.batch_size):
            batch = [corpus[i] for i in order[start:start + config.batch_size]]
            try:
                loss, grads = _batch_gradients(params, batch, config.noise_stddev, rng)
                grads = clip_gradients(grads, config.clip_norm)
                apply_update(params, grads, optimizer)
            except (ad.AutodiffError, TrainingError) as exc:
                raise TrainingError(
                    f"training diverged at update {updates + 1}: {exc}",
                    history=history) from exc
            updates += 1
            window.append(loss)
            if updates % config.eval_every == 0 and evaluate():
                return best_params, history
            if updates >= config.max_updates:
                break
    if updates % config.eval_every != 0:
        evaluate()
    return best_params, history


def _greedy_bleu_eval(dev_set):
    # local imports keep module dependencies one-directional at import time
    from .decoding import beam_search
    from .metrics import bleu

    def run(params):
        hyps, refs = [], []
        for src_ids, tgt_ids in dev_set:
            result = beam_search(params, src_ids, beam_size=1)
            hyps.append([str(t) for t in result.token_ids if t != EOS_ID])
            refs.append([str(t) for t in tgt_ids if t != EOS_ID])
        return bleu(hyps, refs)

    return run


def online_update(params: ModelParams, optimizer: OptimizerState,
                  src_ids, tgt_ids, clip_norm: float = 5.0) -> bool:
    """One clipped gradient step on a single confirmed pair, in place.

    No weight noise here. Returns True when the step was applied; a
    non-finite loss or gradient leaves the model unchanged and returns False.
    """
    names = sorted(params.arrays)
    try:
        with ad.Tape() as tape:
            view = params.view(tape)
            loss = sentence_nll(view, src_ids, tgt_ids)
            grad_list = ad.gradient(loss, [view.t[n] for n in names])
        grads = clip_gradients(dict(zip(names, grad_list)), clip_norm)
        apply_update(params, grads, optimizer)
    except (ad.AutodiffError, TrainingError) as exc:
        log.warning("online update skipped: %s", exc)
        return False
    return True
