"""Skip-gram with negative sampling over walk corpora.

Training runs a single-threaded numba kernel with its own linear
congruential generator for negative draws, so identical inputs and seed
give bit-identical tables. The per-pair update (`sgns_step`) evaluates all
gradients at the incoming parameter values before applying them, which is
what the finite-difference checks assume.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit


class EmbedError(Exception):
    pass


@dataclass(frozen=True)
class SgnsParams:
    dim: int = 128
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 1:
            raise EmbedError("dim, window and negatives must be >= 1")
        if self.epochs < 0 or self.min_count < 1 or self.lr <= 0:
            raise EmbedError("bad epochs, min_count or lr")


class Vocab:
    """Token index with counts and the unigram^0.75 negative-sampling table."""

    def __init__(self, counts: dict[str, int], min_count: int = 1,
                 keep: frozenset[str] | set[str] = frozenset()):
        kept = {t: c for t, c in counts.items() if c >= min_count or t in keep}
        if not kept:
            raise EmbedError("vocabulary is empty after min_count filtering")
        ordered = sorted(kept.items(), key=lambda kv: (-kv[1], kv[0]))
        self.tokens = [t for t, _ in ordered]
        self.counts = np.array([c for _, c in ordered], dtype=np.int64)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        weights = self.counts.astype(np.float64) ** 0.75
        self.sampling_cum = np.cumsum(weights / weights.sum())
        self.sampling_cum[-1] = 1.0

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index


def build_vocab(walks: list[list[str]], min_count: int = 1,
                keep: frozenset[str] | set[str] = frozenset()) -> Vocab:
    """Count tokens over walks; `keep` tokens (the apps) survive any min_count."""
    if not walks:
        raise EmbedError("cannot build a vocabulary from an empty walk corpus")
    counts: dict[str, int] = {}
    for walk in walks:
        for tok in walk:
            counts[tok] = counts.get(tok, 0) + 1
    return Vocab(counts, min_count=min_count, keep=keep)


@dataclass
class EmbeddingTable:
    vocab: Vocab
    syn0: np.ndarray  # input vectors, |V| x d
    syn1: np.ndarray  # output (context) vectors, |V| x d

    @property
    def dim(self) -> int:
        return self.syn0.shape[1]

    def vector(self, token: str) -> np.ndarray | None:
        i = self.vocab.index.get(token)
        return None if i is None else self.syn0[i]


def app_view_vector(tables: EmbeddingTable, app_id: str) -> np.ndarray | None:
    """The app token's input vector; None when the app never walked this view."""
    return tables.vector(app_id)


def sgns_step(tables: EmbeddingTable, center: int, context: int,
              negatives: list[int], lr: float) -> float:
    """One negative-sampling update in place; returns the pair loss.

    Loss is -log(sig(u_ctx . v_c)) - sum over negatives of
    -log(sig(-u_neg . v_c)). Rows repeated in `negatives` accumulate their
    updates; lr=0 leaves the tables unchanged but still reports the loss.
    """
    syn0, syn1 = tables.syn0, tables.syn1
    dtype = syn0.dtype.type
    v = syn0[center].copy()
    rows = np.array([context] + list(negatives), dtype=np.int64)
    u = syn1[rows]  # fancy indexing copies: snapshot of the incoming values
    dots = u @ v
    sig = 1.0 / (1.0 + np.exp(-dots.astype(np.float64)))
    loss = -math.log(max(sig[0], 1e-300)) - float(np.sum(np.log(np.maximum(1.0 - sig[1:], 1e-300))))
    coef = sig.astype(dtype)
    coef[0] -= dtype(1.0)
    grad_v = coef @ u
    step = dtype(lr)
    for i in range(len(rows)):
        syn1[rows[i]] -= step * coef[i] * v
    syn0[center] -= step * grad_v
    return float(loss)


@njit(cache=True)
def _train_kernel(tokens, offsets, order, syn0, syn1, cum, window, negatives,
                  lr0, lr_min, state, losses):  # pragma: no cover - jitted
    d = syn0.shape[1]
    epochs = order.shape[0]
    n_sent = offsets.shape[0] - 1
    total_centers = float(tokens.shape[0]) * float(epochs)
    if total_centers <= 0.0:
        return
    mult = np.uint64(6364136223846793005)
    inc = np.uint64(1442695040888963407)
    grad_v = np.zeros(d, dtype=syn0.dtype)
    work_v = np.zeros(d, dtype=syn0.dtype)
    processed = 0
    for epoch in range(epochs):
        loss_sum = 0.0
        loss_cnt = 0
        for si in range(n_sent):
            s = order[epoch, si]
            start = offsets[s]
            end = offsets[s + 1]
            for ci in range(start, end):
                alpha = lr0 * (1.0 - processed / total_centers)
                if alpha < lr_min:
                    alpha = lr_min
                processed += 1
                center = tokens[ci]
                lo = ci - window
                if lo < start:
                    lo = start
                hi = ci + window
                if hi > end - 1:
                    hi = end - 1
                for j in range(d):
                    work_v[j] = syn0[center, j]
                for pi in range(lo, hi + 1):
                    if pi == ci:
                        continue
                    ctx = tokens[pi]
                    for j in range(d):
                        grad_v[j] = 0.0
                    # positive term
                    dot = 0.0
                    for j in range(d):
                        dot += float(syn1[ctx, j]) * float(work_v[j])
                    sig = 1.0 / (1.0 + math.exp(-dot))
                    if sig < 1e-300:
                        sig = 1e-300
                    loss_sum += -math.log(sig)
                    g = np.float32(alpha * (sig - 1.0))
                    for j in range(d):
                        grad_v[j] += (sig - 1.0) * syn1[ctx, j]
                        syn1[ctx, j] -= g * work_v[j]
                    # negative terms
                    for _k in range(negatives):
                        state = state * mult + inc
                        r = float(state >> np.uint64(33)) / 2147483648.0
                        target = np.searchsorted(cum, r, side="right")
                        if target >= cum.shape[0]:
                            target = cum.shape[0] - 1
                        if target == ctx:
                            continue
                        dot = 0.0
                        for j in range(d):
                            dot += float(syn1[target, j]) * float(work_v[j])
                        sig = 1.0 / (1.0 + math.exp(-dot))
                        comp = 1.0 - sig
                        if comp < 1e-300:
                            comp = 1e-300
                        loss_sum += -math.log(comp)
                        g = np.float32(alpha * sig)
                        for j in range(d):
                            grad_v[j] += sig * syn1[target, j]
                            syn1[target, j] -= g * work_v[j]
                    a32 = np.float32(alpha)
                    for j in range(d):
                        syn0[center, j] -= a32 * grad_v[j]
                        work_v[j] = syn0[center, j]
                    loss_cnt += 1
        if loss_cnt > 0:
            losses[epoch] = loss_sum / loss_cnt


def train_skipgram(walks: list[list[str]], vocab: Vocab, p: SgnsParams,
                   explosion_bound: float = 1e3) -> tuple[EmbeddingTable, list[float]]:
    """Train tables over the walk corpus; returns (tables, per-epoch mean loss).

    Input vectors start uniform in [-0.5/d, 0.5/d] from the seed, output
    vectors at zero; the learning rate decays linearly to 1e-4 of its start
    value. Sentence order is reshuffled deterministically each epoch.
    """
    rng = np.random.Generator(np.random.PCG64(p.seed))
    n = len(vocab)
    syn0 = ((rng.random((n, p.dim), dtype=np.float32) - 0.5) / p.dim).astype(np.float32)
    syn1 = np.zeros((n, p.dim), dtype=np.float32)
    tables = EmbeddingTable(vocab=vocab, syn0=syn0, syn1=syn1)

    sentences = []
    for walk in walks:
        idx = [vocab.index[t] for t in walk if t in vocab.index]
        if len(idx) >= 2:
            sentences.append(idx)
    if p.epochs == 0 or not sentences:
        return tables, []

    tokens = np.array([i for s in sentences for i in s], dtype=np.int64)
    offsets = np.zeros(len(sentences) + 1, dtype=np.int64)
    for i, s in enumerate(sentences):
        offsets[i + 1] = offsets[i] + len(s)
    order = np.stack([rng.permutation(len(sentences)) for _ in range(p.epochs)]).astype(np.int64)

    losses = np.zeros(p.epochs, dtype=np.float64)
    state = np.uint64(p.seed) * np.uint64(2654435761) + np.uint64(1)
    _train_kernel(tokens, offsets, order, syn0, syn1, vocab.sampling_cum,
                  p.window, p.negatives, float(p.lr), float(p.lr) * 1e-4,
                  state, losses)

    if not np.isfinite(syn0).all() or not np.isfinite(syn1).all():
        raise EmbedError("training diverged: non-finite embedding values")
    max_norm = float(np.linalg.norm(syn0, axis=1).max())
    if max_norm > explosion_bound:
        raise EmbedError(f"training diverged: vector norm {max_norm:.3g} exceeds {explosion_bound:.3g}")
    return tables, [float(x) for x in losses]


def save_embeddings(tables: EmbeddingTable, path) -> None:
    """emb.vec: header "N d", then one "token v1 .. vd" line per token."""
    from .walks import escape_token

    n, d = tables.syn0.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {d}\n")
        for i, tok in enumerate(tables.vocab.tokens):
            vals = " ".join(f"{x:.9g}" for x in tables.syn0[i])
            fh.write(f"{escape_token(tok)} {vals}\n")


def load_embeddings(path) -> dict[str, np.ndarray]:
    from .walks import unescape_token

    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbedError(f"bad embedding header in {path}")
        n, d = int(header[0]), int(header[1])
        out: dict[str, np.ndarray] = {}
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != d + 1:
                raise EmbedError(f"bad embedding row width in {path}")
            out[unescape_token(parts[0])] = np.array([float(x) for x in parts[1:]], dtype=np.float32)
    if len(out) != n:
        raise EmbedError(f"embedding file {path} declares {n} rows, has {len(out)}")
    return out
