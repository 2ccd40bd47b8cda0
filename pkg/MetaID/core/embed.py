# core/embed.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .errors import ConfigError, DataError, NumericalError
from .utils_io import read_matrix_binary, write_matrix_binary, write_matrix_text
from .walker import WalkCorpus

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class SgConfig:
    dim: int = 64
    window: int = 5
    negatives: int = 5
    learning_rate: float = 1e-3
    epochs: int = 10
    seed: int = 0
    deterministic: bool = True
    batch_size: int = 256
    workers: int = 1

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ConfigError("dim must be >= 2.")
        if self.window < 1:
            raise ConfigError("window must be >= 1.")
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1.")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0.")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1.")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1.")


@dataclass
class EmbeddingTable:
    """
    Rows 0..m-1 are users, rows m..m+n-1 are items. `input_vectors` is the
    representation; `output_vectors` is the context side.
    """
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    user_count: int
    item_count: int

    def __post_init__(self) -> None:
        rows = self.user_count + self.item_count
        if self.input_vectors.shape[0] != rows:
            raise DataError(
                f"Embedding table has {self.input_vectors.shape[0]} rows, expected {rows}."
            )
        if not np.all(np.isfinite(self.input_vectors)):
            raise NumericalError("Embedding table contains non-finite values.")

    @property
    def dim(self) -> int:
        return int(self.input_vectors.shape[1])

    @property
    def users(self) -> np.ndarray:
        """W_U view."""
        return self.input_vectors[: self.user_count]

    @property
    def items(self) -> np.ndarray:
        """W_I view."""
        return self.input_vectors[self.user_count:]


# ========================
# SGNS objective
# ========================

def _neg_log_sigmoid(x: np.ndarray) -> np.ndarray:
    # -log(sigmoid(x)) without overflow
    return np.logaddexp(0.0, -x)


def sgns_loss(center_in: np.ndarray, context_out: np.ndarray, negatives_out: np.ndarray) -> float:
    """-log s(c.v) - sum_k log s(-n_k.v)"""
    negatives_out = np.atleast_2d(negatives_out)
    pos = float(np.dot(context_out, center_in))
    neg = negatives_out @ center_in
    return float(_neg_log_sigmoid(pos) + np.sum(_neg_log_sigmoid(-neg)))


def sgns_gradients(
    center_in: np.ndarray,
    context_out: np.ndarray,
    negatives_out: np.ndarray,
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss and its gradients w.r.t. center, context and each negative."""
    negatives_out = np.atleast_2d(negatives_out)
    pos = float(np.dot(context_out, center_in))
    neg = negatives_out @ center_in
    g_pos = expit(pos) - 1.0
    g_neg = expit(neg)

    loss = float(_neg_log_sigmoid(pos) + np.sum(_neg_log_sigmoid(-neg)))
    grad_center = g_pos * context_out + g_neg @ negatives_out
    grad_context = g_pos * center_in
    grad_negatives = g_neg[:, None] * center_in[None, :]
    return loss, grad_center, grad_context, grad_negatives


def sgns_step(
    center_in: np.ndarray,
    context_out: np.ndarray,
    negatives_out: np.ndarray,
    learning_rate: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """
    One SGD step on a single (center, context, negatives) instance.
    Returns updated copies and the loss at the pre-update parameters.
    """
    loss, g_c, g_x, g_n = sgns_gradients(center_in, context_out, negatives_out)
    return (
        center_in - learning_rate * g_c,
        context_out - learning_rate * g_x,
        np.atleast_2d(negatives_out) - learning_rate * g_n,
        loss,
    )


# ========================
# Training
# ========================

def context_pairs(corpus: WalkCorpus, window: int) -> Tuple[np.ndarray, np.ndarray]:
    """All (center, context) pairs within `window` of each other in the same walk."""
    walks = [w for w in corpus.walks if w.size >= 2]
    if not walks:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    flat = np.concatenate(walks)
    walk_id = np.repeat(np.arange(len(walks)), [w.size for w in walks])

    centers: List[np.ndarray] = []
    contexts: List[np.ndarray] = []
    for offset in range(1, window + 1):
        same = walk_id[:-offset] == walk_id[offset:]
        left = flat[:-offset][same]
        right = flat[offset:][same]
        centers.extend([left, right])
        contexts.extend([right, left])
    return np.concatenate(centers), np.concatenate(contexts)


def _noise_cdf(corpus: WalkCorpus) -> np.ndarray:
    counts = np.bincount(np.concatenate(corpus.walks), minlength=corpus.node_count)
    weights = counts.astype(np.float64) ** 0.75
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def _train_batches(
    w_in: np.ndarray,
    w_out: np.ndarray,
    centers: np.ndarray,
    contexts: np.ndarray,
    order: np.ndarray,
    cdf: np.ndarray,
    config: SgConfig,
    rng: np.random.Generator,
    epoch: int,
) -> float:
    """Apply mini-batch SGNS updates over `order`; returns summed loss."""
    lr, k, dim = config.learning_rate, config.negatives, w_in.shape[1]
    total = 0.0
    for b, lo in enumerate(range(0, order.size, config.batch_size)):
        idx = order[lo:lo + config.batch_size]
        c_idx, x_idx = centers[idx], contexts[idx]
        negs = np.minimum(np.searchsorted(cdf, rng.random((idx.size, k)), side="right"), cdf.size - 1)
        # a negative equal to the positive context carries no signal
        mask = (negs != x_idx[:, None]).astype(np.float64)

        v = w_in[c_idx]
        c = w_out[x_idx]
        nv = w_out[negs]
        s_pos = np.einsum("bd,bd->b", v, c)
        s_neg = np.einsum("bkd,bd->bk", nv, v)

        batch_loss = float(np.sum(_neg_log_sigmoid(s_pos)) + np.sum(mask * _neg_log_sigmoid(-s_neg)))
        if not np.isfinite(batch_loss):
            raise NumericalError(f"Non-finite SGNS loss at epoch {epoch + 1}, batch {b + 1}.")
        total += batch_loss

        g_pos = expit(s_pos) - 1.0
        g_neg = expit(s_neg) * mask
        grad_v = g_pos[:, None] * c + np.einsum("bk,bkd->bd", g_neg, nv)
        grad_c = g_pos[:, None] * v
        grad_n = g_neg[:, :, None] * v[:, None, :]

        np.add.at(w_in, c_idx, -lr * grad_v)
        np.add.at(w_out, x_idx, -lr * grad_c)
        np.add.at(w_out, negs.ravel(), -lr * grad_n.reshape(-1, dim))
    return total


def train_skipgram(corpus: WalkCorpus, config: SgConfig = SgConfig()) -> Tuple[EmbeddingTable, List[float]]:
    """
    Skip-gram with negative sampling over the walk corpus.
    Returns the table and the mean per-pair loss of every epoch.
    """
    if not corpus.walks:
        raise DataError("Cannot train skip-gram on an empty walk corpus.")
    flat = np.concatenate(corpus.walks)
    if flat.min() < 0 or flat.max() >= corpus.node_count:
        raise DataError("Walk corpus references nodes outside the index range.")
    centers, contexts = context_pairs(corpus, config.window)
    if centers.size == 0:
        raise DataError("Walk corpus yields no context pairs.")

    rng = np.random.default_rng(config.seed)
    dim, rows = config.dim, corpus.node_count
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(rows, dim))
    w_out = np.zeros((rows, dim))
    cdf = _noise_cdf(corpus)

    workers = 1 if config.deterministic else max(1, config.workers)
    losses: List[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(centers.size)
        if workers == 1:
            total = _train_batches(w_in, w_out, centers, contexts, order, cdf, config, rng, epoch)
        else:
            # lock-free shared updates; results depend on thread timing
            shards = np.array_split(order, workers)
            seeds = rng.integers(0, 2**63 - 1, size=workers)
            totals = Parallel(n_jobs=workers, prefer="threads", require="sharedmem")(
                delayed(_train_batches)(
                    w_in, w_out, centers, contexts, shard, cdf, config,
                    np.random.default_rng(int(s)), epoch,
                )
                for shard, s in zip(shards, seeds)
            )
            total = float(sum(totals))
        losses.append(total / centers.size)
        logger.info("Epoch %d/%d: mean SGNS loss %.6f", epoch + 1, config.epochs, losses[-1])

    table = EmbeddingTable(w_in, w_out, corpus.user_count, corpus.item_count)
    return table, losses


# ========================
# Dumps
# ========================

def save_embeddings(table: EmbeddingTable, path: PathLike) -> None:
    """Binary "MPEB" dump of the input vectors."""
    write_matrix_binary(path, table.input_vectors, (table.user_count, table.item_count, table.dim))


def save_embeddings_text(table: EmbeddingTable, path: PathLike) -> None:
    write_matrix_text(path, table.input_vectors, table.user_count, table.item_count)


def load_embeddings(path: PathLike) -> EmbeddingTable:
    """Load a binary dump; the context side is not stored and comes back as zeros."""
    matrix, (m, n, _) = read_matrix_binary(path)
    return EmbeddingTable(matrix, np.zeros_like(matrix), m, n)
