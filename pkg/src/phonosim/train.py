"""Training machinery: batched BPTT, Adam, and verification metrics.

Gradients of binary cross-entropy over the cosine similarity of two
tied-weight embeddings are computed analytically through batch-norm,
dropout (mask held fixed), the feedforward layers, and both RNN direction
unrollings.  Everything runs in 64-bit floats so the finite-difference
check is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .net import (
    BN_EPS,
    BN_MOMENTUM,
    ModelDims,
    ModelParams,
    TRAINABLE_TENSORS,
    WEIGHT_TENSORS,
    _sigmoid,
    init_params,
)

PROB_CLIP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr0: float = 1e-3
    lr_decay: float = 0.95
    l1_coeff: float = 1e-5
    dropout_rate: float = 0.2
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5

    def __post_init__(self):
        if self.lr0 < 0:
            raise DataError("lr0 must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise DataError("lr_decay must lie in (0, 1]")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise DataError("dropout_rate must lie in [0, 1)")
        if self.l1_coeff < 0:
            raise DataError("l1_coeff must be >= 0")


def bce_loss(similarity: float, label: int) -> float:
    """Binary cross-entropy with the similarity used as the probability."""
    p = min(max(float(similarity), PROB_CLIP), 1.0 - PROB_CLIP)
    return -(label * np.log(p) + (1 - label) * np.log(1.0 - p))


# ---------------------------------------------------------------------------
# batched forward / backward


def _pack(feats: list[np.ndarray]):
    lengths = np.array([f.shape[0] for f in feats], dtype=np.intp)
    if (lengths < 1).any():
        raise DataError("utterance with zero frames")
    d_in = feats[0].shape[1]
    n = len(feats)
    lmax = int(lengths.max())
    x = np.zeros((n, lmax, d_in))
    xrev = np.zeros((n, lmax, d_in))
    for i, f in enumerate(feats):
        li = lengths[i]
        x[i, :li] = f
        xrev[i, :li] = f[::-1]
    return x, xrev, lengths


def _run_direction(x, lengths, w, u, b):
    n, lmax, _ = x.shape
    dh = w.shape[0]
    hseq = np.zeros((n, lmax, dh))
    h = np.zeros((n, dh))
    for t in range(lmax):
        hn = np.tanh(x[:, t] @ w.T + h @ u.T + b)
        h = np.where((t < lengths)[:, None], hn, h)
        hseq[:, t] = h
    return hseq


def _direction_backward(x, hseq, lengths, u, d_final):
    n, lmax, dh = hseq.shape
    dw = np.zeros((dh, x.shape[2]))
    du = np.zeros((dh, dh))
    db = np.zeros(dh)
    dh_t = np.zeros((n, dh))
    for t in range(lmax - 1, -1, -1):
        at_final = lengths - 1 == t
        if at_final.any():
            dh_t[at_final] += d_final[at_final]
        da = dh_t * (1.0 - hseq[:, t] ** 2)
        da[t >= lengths] = 0.0
        hprev = hseq[:, t - 1] if t > 0 else np.zeros((n, dh))
        dw += da.T @ x[:, t]
        du += da.T @ hprev
        db += da.sum(axis=0)
        dh_t = da @ u
    return dw, du, db


def _embed_forward(params: ModelParams, feats, mode: str, dropout_masks):
    """Embeddings for a batch of utterances; returns (e, cache)."""
    x, xrev, lengths = _pack(feats)
    n = len(feats)
    hf = _run_direction(x, lengths, params.wf, params.uf, params.bf)
    hb = _run_direction(xrev, lengths, params.wb, params.ub, params.bb)
    rows = np.arange(n)
    hcat = np.concatenate([hf[rows, lengths - 1], hb[rows, lengths - 1]], axis=1)

    dropped = hcat if dropout_masks is None else hcat * dropout_masks
    if mode == "train":
        mu = dropped.mean(axis=0)
        var = dropped.var(axis=0)
        istd = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (dropped - mu) * istd
        z = params.bn_scale * xhat + params.bn_shift
    else:
        mu = var = istd = None
        xhat = (dropped - params.bn_mean) / np.sqrt(params.bn_var + BN_EPS)
        z = params.bn_scale * xhat + params.bn_shift
    y = np.tanh(z @ params.wy.T + params.by)
    e = _sigmoid(y @ params.we.T + params.be)
    cache = dict(
        x=x, xrev=xrev, lengths=lengths, hf=hf, hb=hb,
        dropout_masks=dropout_masks, mode=mode,
        mu=mu, var=var, istd=istd, xhat=xhat, z=z, y=y, e=e,
    )
    return e, cache


def _embed_backward(params: ModelParams, de, cache):
    """Gradients of all trainable tensors given d(loss)/d(embeddings)."""
    e, y, z, xhat = cache["e"], cache["y"], cache["z"], cache["xhat"]
    s = de * e * (1.0 - e)
    grads = {
        "we": s.T @ y,
        "be": s.sum(axis=0),
    }
    dy = s @ params.we
    dt = dy * (1.0 - y * y)
    grads["wy"] = dt.T @ z
    grads["by"] = dt.sum(axis=0)
    dz = dt @ params.wy

    grads["bn_scale"] = (dz * xhat).sum(axis=0)
    grads["bn_shift"] = dz.sum(axis=0)
    dxhat = dz * params.bn_scale
    if cache["mode"] == "train":
        istd = cache["istd"]
        ddrop = istd * (
            dxhat
            - dxhat.mean(axis=0)
            - xhat * (dxhat * xhat).mean(axis=0)
        )
    else:
        ddrop = dxhat / np.sqrt(params.bn_var + BN_EPS)
    dhcat = ddrop if cache["dropout_masks"] is None else ddrop * cache["dropout_masks"]

    dh = params.dims.d_hidden
    dwf, duf, dbf = _direction_backward(
        cache["x"], cache["hf"], cache["lengths"], params.uf, dhcat[:, :dh]
    )
    dwb, dub, dbb = _direction_backward(
        cache["xrev"], cache["hb"], cache["lengths"], params.ub, dhcat[:, dh:]
    )
    grads.update(wf=dwf, uf=duf, bf=dbf, wb=dwb, ub=dub, bb=dbb)
    return grads


def pair_forward_backward(
    params: ModelParams,
    left_feats: list[np.ndarray],
    right_feats: list[np.ndarray],
    labels: np.ndarray,
    l1_coeff: float = 0.0,
    dropout_masks: np.ndarray | None = None,
    mode: str = "train",
):
    """Loss, gradients, batch-norm batch statistics, and similarities.

    ``dropout_masks`` has one row per utterance in interleaved
    (left0, right0, left1, right1, ...) order; both Siamese branches
    accumulate into the same gradient tensors.
    """
    n_pairs = len(left_feats)
    if n_pairs == 0:
        raise DataError("empty pair batch")
    labels = np.asarray(labels, dtype=np.float64)
    feats = [f for pair in zip(left_feats, right_feats) for f in pair]
    e, cache = _embed_forward(params, feats, mode, dropout_masks)

    el, er = e[0::2], e[1::2]
    nl = np.linalg.norm(el, axis=1)
    nr = np.linalg.norm(er, axis=1)
    g = (el * er).sum(axis=1) / (nl * nr)
    p = np.clip(g, PROB_CLIP, 1.0 - PROB_CLIP)
    losses = -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    data_loss = losses.mean()
    penalty = l1_coeff * sum(
        np.abs(getattr(params, name)).sum() for name in WEIGHT_TENSORS
    )
    loss = float(data_loss + penalty)

    dp = (p - labels) / (p * (1.0 - p)) / n_pairs
    dg = np.where((g > PROB_CLIP) & (g < 1.0 - PROB_CLIP), dp, 0.0)
    de_l = dg[:, None] * (er / (nl * nr)[:, None] - (g / nl**2)[:, None] * el)
    de_r = dg[:, None] * (el / (nl * nr)[:, None] - (g / nr**2)[:, None] * er)
    de = np.empty_like(e)
    de[0::2] = de_l
    de[1::2] = de_r

    grads = _embed_backward(params, de, cache)
    if l1_coeff > 0.0:
        for name in WEIGHT_TENSORS:
            grads[name] = grads[name] + l1_coeff * np.sign(getattr(params, name))
    for name in TRAINABLE_TENSORS:
        if not np.isfinite(grads[name]).all():
            raise DataError(f"non-finite gradient in tensor {name!r}")
    bn_stats = (cache["mu"], cache["var"]) if mode == "train" else None
    return loss, grads, bn_stats, g


def backward(
    params: ModelParams,
    pair: tuple[np.ndarray, np.ndarray],
    label: int,
    l1_coeff: float = 0.0,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Single-pair convenience wrapper; returns (loss, gradients)."""
    masks = None
    if dropout_rate > 0.0:
        if rng is None:
            raise DataError("dropout requires an rng")
        shape = (2, 2 * params.dims.d_hidden)
        masks = (rng.random(shape) >= dropout_rate) / (1.0 - dropout_rate)
    loss, grads, _, _ = pair_forward_backward(
        params, [pair[0]], [pair[1]], np.array([label]), l1_coeff, masks
    )
    return loss, grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: ModelParams) -> AdamState:
    state = AdamState()
    for name in TRAINABLE_TENSORS:
        state.m[name] = np.zeros_like(getattr(params, name))
        state.v[name] = np.zeros_like(getattr(params, name))
    return state


def adam_step(
    state: AdamState,
    params: ModelParams,
    grads: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Standard bias-corrected Adam update, in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name in TRAINABLE_TENSORS:
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        getattr(params, name)[...] -= lr * mhat / (np.sqrt(vhat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    auc: float
    positive: ClassMetrics
    negative: ClassMetrics
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "positive": vars(self.positive).copy(),
            "negative": vars(self.negative).copy(),
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
        }


def roc_auc(scores, labels) -> float:
    """AUC as the Mann-Whitney statistic, ties counted half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def metrics_from_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) == 0:
        raise DataError("empty score set")
    pred = scores >= threshold
    truth = labels == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))

    def cls(tp_, fp_, fn_):
        prec = tp_ / (tp_ + fp_) if tp_ + fp_ else 0.0
        rec = tp_ / (tp_ + fn_) if tp_ + fn_ else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        return ClassMetrics(precision=prec, recall=rec, f1=f1)

    return MetricsReport(
        accuracy=(tp + tn) / len(scores),
        auc=roc_auc(scores, labels),
        positive=cls(tp, fp, fn),
        negative=cls(tn, fn, fp),  # negatives as the target class
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


# ---------------------------------------------------------------------------
# inference scoring and the training loop


def _pair_triple(p):
    if hasattr(p, "label"):
        return p.left.key, p.right.key, p.label
    return p[0], p[1], p[2]


def embed_all(params: ModelParams, keys, store) -> dict[str, np.ndarray]:
    """Infer-mode embedding per unique utterance key."""
    out = {}
    for key in keys:
        if key in out:
            continue
        frames = np.asarray(store[key], dtype=np.float64)
        e, _ = _embed_forward(params, [frames], "infer", None)
        out[key] = e[0]
    return out


def score_similarities(params: ModelParams, pairs, store) -> np.ndarray:
    """Infer-mode cosine similarity for every pair; deterministic."""
    triples = [_pair_triple(p) for p in pairs]
    keys = [k for l, r, _ in triples for k in (l, r)]
    emb = embed_all(params, keys, store)
    sims = np.empty(len(triples))
    for i, (l, r, _) in enumerate(triples):
        a, b = emb[l], emb[r]
        sims[i] = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return sims


def evaluate(params: ModelParams, pairs, store, threshold: float = 0.5) -> MetricsReport:
    """Threshold the infer-mode similarities and compute the metric suite."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("empty pair set")
    sims = score_similarities(params, pairs, store)
    labels = np.array([_pair_triple(p)[2] for p in pairs])
    return metrics_from_scores(sims, labels, threshold)


@dataclass
class TrainResult:
    params: ModelParams        # parameters after the last epoch
    best_params: ModelParams   # best validation accuracy
    history: list


def train(
    config: TrainConfig,
    train_pairs,
    val_pairs,
    store,
    init: ModelParams | None = None,
    dims: ModelDims | None = None,
) -> TrainResult:
    """Mini-batch Adam training with per-epoch learning-rate decay.

    The shuffle, dropout masks, and initialization are all keyed to
    ``config.seed``; identical config and seed reproduce the history
    exactly.  The checkpoint with the best validation accuracy is retained
    alongside the final parameters.
    """
    train_pairs = list(train_pairs)
    val_pairs = list(val_pairs) if val_pairs else []
    if not train_pairs:
        raise DataError("empty training set")
    params = init.copy() if init is not None else init_params(dims or ModelDims(), config.seed)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xB0B]))
    state = adam_init(params)
    dh2 = 2 * params.dims.d_hidden

    triples = [_pair_triple(p) for p in train_pairs]
    history = []
    best_params = params.copy()
    best_score = -np.inf
    for epoch in range(config.epochs):
        lr = config.lr0 * config.lr_decay**epoch
        order = rng.permutation(len(triples))
        total_loss = 0.0
        all_sims = np.empty(len(triples))
        all_labels = np.empty(len(triples))
        done = 0
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [triples[i] for i in order[start : start + config.batch_size]]
            lefts = [np.asarray(store[l], dtype=np.float64) for l, _, _ in batch]
            rights = [np.asarray(store[r], dtype=np.float64) for _, r, _ in batch]
            labels = np.array([y for _, _, y in batch], dtype=np.float64)
            masks = None
            if config.dropout_rate > 0.0:
                masks = (
                    rng.random((2 * len(batch), dh2)) >= config.dropout_rate
                ) / (1.0 - config.dropout_rate)
            loss, grads, bn_stats, sims = pair_forward_backward(
                params, lefts, rights, labels, config.l1_coeff, masks
            )
            if not np.isfinite(loss):
                raise DataError(f"non-finite loss at epoch {epoch}, batch {bi}")
            adam_step(
                state, params, grads, lr,
                config.adam_beta1, config.adam_beta2, config.adam_eps,
            )
            mu, var = bn_stats
            params.bn_mean = BN_MOMENTUM * params.bn_mean + (1.0 - BN_MOMENTUM) * mu
            params.bn_var = BN_MOMENTUM * params.bn_var + (1.0 - BN_MOMENTUM) * var
            total_loss += loss * len(batch)
            all_sims[done : done + len(batch)] = sims
            all_labels[done : done + len(batch)] = labels
            done += len(batch)

        train_report = metrics_from_scores(all_sims, all_labels, config.threshold)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total_loss / len(triples),
            "train_accuracy": train_report.accuracy,
        }
        if val_pairs:
            val_report = evaluate(params, val_pairs, store, config.threshold)
            record["validation"] = val_report.to_dict()
            score = val_report.accuracy
        else:
            score = train_report.accuracy
        if score > best_score:
            best_score = score
            best_params = params.copy()
        history.append(record)
    return TrainResult(params=params, best_params=best_params, history=history)


# ---------------------------------------------------------------------------
# finite-difference gradient check


def gradient_check(
    dims: ModelDims = ModelDims(5, 4, 3),
    seed: int = 0,
    lengths: tuple = (7, 5, 6, 4),
    eps: float = 1e-5,
    dropout_rate: float = 0.2,
    l1_coeff: float = 1e-4,
) -> dict[str, float]:
    """Max relative error of each tensor's analytic gradient vs central FD.

    The check point uses a larger weight scale than training init: tiny
    weights put every embedding near 0.5, driving the cosine similarity to
    ~1 where the 1/(1-p) cross-entropy factor amplifies roundoff and
    drowns small finite differences.
    """
    rng = np.random.default_rng(seed)
    params = init_params(dims, seed)
    for name in WEIGHT_TENSORS + ("bf", "bb", "by", "be"):
        getattr(params, name)[...] *= 10.0  # weight std 0.5, biases stay 0
    n_pairs = len(lengths) // 2
    feats = [rng.normal(size=(t, dims.d_in)) for t in lengths]
    lefts, rights = feats[0::2], feats[1::2]
    labels = np.array([(1 if i % 2 == 0 else 0) for i in range(n_pairs)], dtype=float)
    masks = None
    if dropout_rate > 0.0:
        masks = (
            rng.random((2 * n_pairs, 2 * dims.d_hidden)) >= dropout_rate
        ) / (1.0 - dropout_rate)

    def loss_of(p):
        loss, _, _, _ = pair_forward_backward(p, lefts, rights, labels, l1_coeff, masks)
        return loss

    _, grads, _, _ = pair_forward_backward(params, lefts, rights, labels, l1_coeff, masks)
    errors = {}
    for name in TRAINABLE_TENSORS:
        tensor = getattr(params, name)
        worst = 0.0
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + eps
            up = loss_of(params)
            tensor[idx] = orig - eps
            down = loss_of(params)
            tensor[idx] = orig
            fd = (up - down) / (2.0 * eps)
            g = grads[name][idx]
            rel = abs(g - fd) / max(abs(g), abs(fd), 1e-6)
            worst = max(worst, rel)
        errors[name] = worst
    return errors
