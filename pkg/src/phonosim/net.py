"""Siamese bi-directional RNN forward pass and model persistence.

One shared parameter store drives both branches: masked variable-length
input, tied-weight forward/backward tanh recurrences, dropout and batch
normalization on the concatenated final hidden state, a tanh feedforward
layer, a sigmoid embedding layer, and cosine similarity between the two
branch embeddings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, DataError

BN_EPS = 1e-5
BN_MOMENTUM = 0.99
INIT_STD = 0.05

CHECKPOINT_MAGIC = b"ARTM"
CHECKPOINT_VERSION = 1

# fixed tensor order: trainable first, then batch-norm running statistics
TRAINABLE_TENSORS = (
    "wf", "uf", "bf",
    "wb", "ub", "bb",
    "wy", "by",
    "we", "be",
    "bn_scale", "bn_shift",
)
RUNNING_TENSORS = ("bn_mean", "bn_var")
ALL_TENSORS = TRAINABLE_TENSORS + RUNNING_TENSORS

# weight matrices the L1 penalty applies to (biases and batch-norm excluded)
WEIGHT_TENSORS = ("wf", "uf", "wb", "ub", "wy", "we")


@dataclass(frozen=True)
class ModelDims:
    d_in: int = 39
    d_hidden: int = 50
    d_rep: int = 50

    def __post_init__(self):
        if min(self.d_in, self.d_hidden, self.d_rep) < 1:
            raise DataError("all model dimensions must be strictly positive")


@dataclass
class ModelParams:
    dims: ModelDims
    wf: np.ndarray  # (d_hidden, d_in)     forward input weights
    uf: np.ndarray  # (d_hidden, d_hidden) forward recurrent weights
    bf: np.ndarray  # (d_hidden,)
    wb: np.ndarray  # backward direction, same shapes
    ub: np.ndarray
    bb: np.ndarray
    wy: np.ndarray  # (d_rep, 2 * d_hidden)
    by: np.ndarray  # (d_rep,)
    we: np.ndarray  # (d_rep, d_rep)
    be: np.ndarray  # (d_rep,)
    bn_scale: np.ndarray  # (2 * d_hidden,)
    bn_shift: np.ndarray  # (2 * d_hidden,)
    bn_mean: np.ndarray   # running statistics, not trainable
    bn_var: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in ALL_TENSORS}

    def copy(self) -> "ModelParams":
        return ModelParams(
            dims=self.dims, **{n: getattr(self, n).copy() for n in ALL_TENSORS}
        )


def init_params(dims: ModelDims, seed: int) -> ModelParams:
    """Small random normal weights (std 0.05), zero biases, identity batch-norm."""
    rng = np.random.default_rng(seed)
    dh, di, dr = dims.d_hidden, dims.d_in, dims.d_rep

    def w(*shape):
        return rng.normal(0.0, INIT_STD, size=shape)

    return ModelParams(
        dims=dims,
        wf=w(dh, di), uf=w(dh, dh), bf=np.zeros(dh),
        wb=w(dh, di), ub=w(dh, dh), bb=np.zeros(dh),
        wy=w(dr, 2 * dh), by=np.zeros(dr),
        we=w(dr, dr), be=np.zeros(dr),
        bn_scale=np.ones(2 * dh), bn_shift=np.zeros(2 * dh),
        bn_mean=np.zeros(2 * dh), bn_var=np.ones(2 * dh),
    )


def parameter_count(dims: ModelDims) -> int:
    """Trainable parameter total for this architecture's accounting."""
    dh, di, dr = dims.d_hidden, dims.d_in, dims.d_rep
    rnn = 2 * (dh * di + dh * dh + dh)
    ff = dr * 2 * dh + dr
    emb = dr * dr + dr
    bn = 2 * (2 * dh)
    return rnn + ff + emb + bn


def rnn_forward(params: ModelParams, frames: np.ndarray, true_length: int) -> np.ndarray:
    """Hidden sequence h_t = [forward_t, backward_t] for t = 1..true_length.

    Frames beyond ``true_length`` are padding and never read.  Both
    recurrences start from zero state: the forward one before t=1, the
    backward one after t=true_length.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if not 1 <= true_length <= frames.shape[0]:
        raise DataError(
            f"true_length {true_length} outside [1, {frames.shape[0]}]"
        )
    x = frames[:true_length]
    dh = params.dims.d_hidden
    L = true_length

    hf = np.zeros((L, dh))
    h = np.zeros(dh)
    for t in range(L):
        h = np.tanh(params.wf @ x[t] + params.uf @ h + params.bf)
        hf[t] = h

    hb = np.zeros((L, dh))
    h = np.zeros(dh)
    for t in range(L - 1, -1, -1):
        h = np.tanh(params.wb @ x[t] + params.ub @ h + params.bb)
        hb[t] = h

    return np.hstack([hf, hb])


def final_hidden(params: ModelParams, frames: np.ndarray, true_length: int) -> np.ndarray:
    """Summary state feeding the feedforward stack.

    Concatenates each direction's fully-processed state: the forward state at
    the true last frame and the backward state at the first frame.
    """
    h = rnn_forward(params, frames, true_length)
    dh = params.dims.d_hidden
    return np.concatenate([h[-1, :dh], h[0, dh:]])


def batchnorm_infer(params: ModelParams, x: np.ndarray) -> np.ndarray:
    xhat = (x - params.bn_mean) / np.sqrt(params.bn_var + BN_EPS)
    return params.bn_scale * xhat + params.bn_shift


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def embed_utterance(
    params: ModelParams,
    frames: np.ndarray,
    true_length: int,
    mode: str = "infer",
    dropout_rng: np.random.Generator | None = None,
    dropout_rate: float = 0.2,
) -> np.ndarray:
    """Embedding vector for one utterance; every entry lies in (0, 1).

    In train mode an inverted dropout mask is applied to the final hidden
    state and batch statistics are degenerate (single sample); batched
    training uses the pooled path in :mod:`phonosim.train`.  Infer mode is a
    deterministic pure function of (params, input).
    """
    h = final_hidden(params, frames, true_length)
    if mode == "train":
        if dropout_rng is not None and dropout_rate > 0.0:
            mask = (dropout_rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
            h = h * mask
        mu = h  # batch of one: batch mean is the sample itself
        xhat = (h - mu) / np.sqrt(0.0 + BN_EPS)
        h = params.bn_scale * xhat + params.bn_shift
    elif mode == "infer":
        h = batchnorm_infer(params, h)
    else:
        raise DataError(f"unknown mode {mode!r}")
    y = np.tanh(params.wy @ h + params.by)
    return _sigmoid(params.we @ y + params.be)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine similarity of a zero-norm vector")
    return float(a @ b / (na * nb))


def siamese_forward(
    params: ModelParams,
    left: tuple[np.ndarray, int],
    right: tuple[np.ndarray, int],
    mode: str = "infer",
    dropout_rng: np.random.Generator | None = None,
    dropout_rate: float = 0.2,
) -> float:
    """Similarity score for an utterance pair through the tied-weight branches."""
    ea = embed_utterance(params, left[0], left[1], mode, dropout_rng, dropout_rate)
    eb = embed_utterance(params, right[0], right[1], mode, dropout_rng, dropout_rate)
    return cosine_similarity(ea, eb)


# ---------------------------------------------------------------------------
# checkpoint format: magic ARTM, u32 version, 3 x u32 dims, then each tensor
# as (u32 name length, name bytes, u32 rank, u32 dims..., f64 LE payload) in
# the fixed ALL_TENSORS order.


def save_checkpoint(params: ModelParams, path: str) -> None:
    d = params.dims
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", CHECKPOINT_VERSION, d.d_in, d.d_hidden, d.d_rep))
        for name in ALL_TENSORS:
            t = np.ascontiguousarray(getattr(params, name), dtype="<f8")
            nb = name.encode("ascii")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(t.tobytes())


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic bytes in {path}")
    if len(blob) < 20:
        raise CheckpointError(f"truncated header in {path}")
    version, d_in, d_hidden, d_rep = struct.unpack("<IIII", blob[4:20])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    dims = ModelDims(d_in=d_in, d_hidden=d_hidden, d_rep=d_rep)
    off = 20
    tensors: dict[str, np.ndarray] = {}
    for expected in ALL_TENSORS:
        try:
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("ascii")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if off + 8 * count > len(blob):
                raise CheckpointError(f"truncated payload for tensor {expected!r} in {path}")
            t = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
        except struct.error:
            raise CheckpointError(f"truncated tensor record in {path}")
        if name != expected:
            raise CheckpointError(f"unexpected tensor {name!r}, wanted {expected!r}")
        tensors[name] = t.reshape(shape).astype(np.float64)
    return ModelParams(dims=dims, **tensors)
