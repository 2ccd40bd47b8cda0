# core/metrics.py
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax
from sklearn.metrics.pairwise import cosine_similarity

from .errors import ConfigError, DataError, UndefinedSimilarityError, UnknownIdError
from .idgen import EntityRef, IdAssignment, Vocabulary
from .ingest import DatasetIndex
from .utils_io import derive_seed, write_json

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
TokenTable = Mapping[str, np.ndarray]


@dataclass(frozen=True)
class MetricConfig:
    pair_samples: int = 10000
    item_samples: int = 100
    trials: int = 5
    seed: int = 0
    softmax_temperature: float = 1.0
    exact: bool = False

    def __post_init__(self) -> None:
        if self.pair_samples < 1:
            raise ConfigError("pair_samples must be >= 1.")
        if self.item_samples < 2:
            raise ConfigError("item_samples must be >= 2.")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1.")
        if not self.softmax_temperature > 0:
            raise ConfigError("softmax_temperature must be > 0.")


# ========================
# Ground-truth similarity
# ========================

@dataclass(frozen=True)
class SimilarityOracle:
    """
    Mean-centred ratings grouped by item (CSR layout, users ascending),
    plus the per-item deviation sum `dev` and squared sum `dev_sq`.
    Repeated (user, item) ratings are averaged first.
    """
    user_mean: np.ndarray
    dev: np.ndarray
    dev_sq: np.ndarray
    indptr: np.ndarray
    raters: np.ndarray
    centred: np.ndarray

    @property
    def item_count(self) -> int:
        return int(self.dev.size)

    def item_raters(self, item: int) -> Tuple[np.ndarray, np.ndarray]:
        if not 0 <= item < self.item_count:
            raise UnknownIdError(f"Item index {item} out of range [0, {self.item_count}).")
        lo, hi = self.indptr[item], self.indptr[item + 1]
        return self.raters[lo:hi], self.centred[lo:hi]


def build_similarity_oracle(index: DatasetIndex) -> SimilarityOracle:
    m, n = index.user_count, index.item_count
    keys = index.items.astype(np.int64) * m + index.users
    cells, inverse = np.unique(keys, return_inverse=True)
    counts = np.bincount(inverse)
    rating = np.bincount(inverse, weights=index.ratings.astype(np.float64)) / counts

    items, users = np.divmod(cells, m)
    per_user = np.bincount(users, minlength=m)
    user_mean = np.bincount(users, weights=rating, minlength=m) / np.maximum(per_user, 1)

    centred = rating - user_mean[users]
    dev = np.bincount(items, weights=centred, minlength=n)
    dev_sq = np.bincount(items, weights=centred ** 2, minlength=n)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(items, minlength=n))]).astype(np.int64)
    return SimilarityOracle(user_mean, dev, dev_sq, indptr, users.astype(np.int64), centred)


def adjusted_cosine_exact(oracle: SimilarityOracle, i: int, j: int) -> float:
    """Adjusted cosine over the users who rated both items."""
    users_i, dev_i = oracle.item_raters(i)
    users_j, dev_j = oracle.item_raters(j)
    _, a, b = np.intersect1d(users_i, users_j, assume_unique=True, return_indices=True)
    if a.size == 0:
        raise UndefinedSimilarityError(f"Items {i} and {j} have no common raters.")
    x, y = dev_i[a], dev_j[b]
    denom = np.sqrt(np.dot(x, x)) * np.sqrt(np.dot(y, y))
    if denom == 0:
        raise UndefinedSimilarityError(f"Items {i} and {j} have zero deviation over common raters.")
    return float(np.clip(np.dot(x, y) / denom, -1.0, 1.0))


def adjusted_cosine_fast(oracle: SimilarityOracle, i: int, j: int) -> float:
    """Dev(i) * Dev(j) / (sqrt(DevS(i)) * sqrt(DevS(j)))"""
    for k in (i, j):
        if not 0 <= k < oracle.item_count:
            raise UnknownIdError(f"Item index {k} out of range [0, {oracle.item_count}).")
        if oracle.dev_sq[k] == 0:
            raise UndefinedSimilarityError(f"Item {k} has zero deviation energy.")
    return float(oracle.dev[i] * oracle.dev[j] / (np.sqrt(oracle.dev_sq[i]) * np.sqrt(oracle.dev_sq[j])))


def _pair_similarity(
    oracle: SimilarityOracle,
    items: np.ndarray,
    rows: np.ndarray,
    cols: np.ndarray,
    exact: bool,
) -> np.ndarray:
    """Similarity for each (items[rows[k]], items[cols[k]]); NaN where undefined."""
    if not exact:
        dev = oracle.dev[items]
        energy = np.sqrt(oracle.dev_sq[items])
        denom = energy[rows] * energy[cols]
        out = np.full(rows.size, np.nan)
        ok = denom > 0
        out[ok] = dev[rows[ok]] * dev[cols[ok]] / denom[ok]
        return out
    out = np.empty(rows.size)
    for k, (a, b) in enumerate(zip(items[rows], items[cols])):
        try:
            out[k] = adjusted_cosine_exact(oracle, int(a), int(b))
        except UndefinedSimilarityError:
            out[k] = np.nan
    return out


# ========================
# ID representations
# ========================

def id_representation(assignment: IdAssignment, token_table: TokenTable, entity: EntityRef) -> np.ndarray:
    """Mean of the token vectors that make up the entity's ID."""
    vectors = []
    for tok in assignment.encode(entity.kind, entity.index):
        if tok not in token_table:
            raise UnknownIdError(f"Token {tok!r} has no vector in the token table.")
        vectors.append(np.asarray(token_table[tok], dtype=np.float64))
    return np.mean(vectors, axis=0)


def item_representations(assignment: IdAssignment, token_table: TokenTable) -> np.ndarray:
    return np.stack([
        id_representation(assignment, token_table, EntityRef("item", i))
        for i in range(len(assignment.item_ids))
    ])


def token_table_from_vocabulary(vocab: Vocabulary) -> Dict[str, np.ndarray]:
    if vocab.f_init is None:
        raise DataError("Vocabulary has no f_init matrix.")
    return {tok.surface: vocab.f_init[tok.vocab_index] for tok in vocab.tokens}


def random_token_table(surfaces: Sequence[str], dim: int, seed: int = 0) -> Dict[str, np.ndarray]:
    """
    Seeded Gaussian vectors, a desk-scale stand-in for the pretrained
    embeddings of in-vocabulary tokens.
    """
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((len(surfaces), dim))
    return {s: matrix[k] for k, s in enumerate(surfaces)}


# ========================
# Diversity / Memorization
# ========================

def _sample_pairs(n: int, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if count >= n * (n - 1) // 2:
        return np.triu_indices(n, k=1)
    a = rng.integers(0, n, size=count)
    b = rng.integers(0, n - 1, size=count)
    b = b + (b >= a)
    return a, b


def compute_ds(representations: np.ndarray, config: MetricConfig = MetricConfig()) -> float:
    """
    Diversity Score: mean over sampled pairs of half the symmetric KL
    divergence between the softmax distributions of the two vectors.
    When pair_samples covers every distinct pair, each pair is used once.
    """
    x = np.asarray(representations, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("Diversity Score needs at least 2 representations.")
    rng = np.random.default_rng(config.seed)
    a, b = _sample_pairs(x.shape[0], config.pair_samples, rng)

    logp = log_softmax(x / config.softmax_temperature, axis=1)
    p = np.exp(logp)
    # KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)
    sym = np.einsum("kd,kd->k", p[a] - p[b], logp[a] - logp[b])
    return float(max(np.sum(sym), 0.0) / (2 * a.size))


def _ms_terms(
    representations: np.ndarray,
    oracle: SimilarityOracle,
    config: MetricConfig,
) -> Tuple[float, int, int]:
    x = np.asarray(representations, dtype=np.float64)
    n = x.shape[0]
    if n != oracle.item_count:
        raise DataError(f"{n} item representations for an oracle over {oracle.item_count} items.")
    if n < 2:
        raise DataError("Memorization Score needs at least 2 items.")

    rng = np.random.default_rng(config.seed)
    if config.item_samples >= n:
        items = np.arange(n)
    else:
        items = np.sort(rng.choice(n, size=config.item_samples, replace=False))

    rows, cols = np.triu_indices(items.size, k=1)
    cos = cosine_similarity(x[items])[rows, cols]
    sim = _pair_similarity(oracle, items, rows, cols, config.exact)
    defined = ~np.isnan(sim)
    skipped = int(rows.size - defined.sum())
    if not np.any(defined):
        raise UndefinedSimilarityError("Every sampled item pair has undefined similarity.")
    if skipped:
        logger.warning("Skipped %d of %d item pairs with undefined similarity", skipped, rows.size)
    ms = float(np.mean((cos[defined] - sim[defined]) ** 2))
    return ms, int(defined.sum()), skipped


def compute_ms(
    representations: np.ndarray,
    oracle: SimilarityOracle,
    config: MetricConfig = MetricConfig(),
) -> float:
    """
    Memorization Score: mean squared gap between the cosine similarity of
    ID representations and the adjusted-cosine similarity of the items.
    """
    return _ms_terms(representations, oracle, config)[0]


def ds_convergence(
    representations: np.ndarray,
    ns: Sequence[int],
    trials: int = 5,
    seed: int = 0,
    softmax_temperature: float = 1.0,
) -> List[Tuple[int, float, float]]:
    """(N, mean, sample std) of the Diversity Score over `trials` seeds per N."""
    if trials < 2:
        raise ConfigError("ds_convergence needs trials >= 2 for a sample std.")
    series = []
    for n_pairs in ns:
        values = [
            compute_ds(representations, MetricConfig(
                pair_samples=int(n_pairs),
                seed=derive_seed(seed, f"ds:{n_pairs}:{t}"),
                softmax_temperature=softmax_temperature,
            ))
            for t in range(trials)
        ]
        series.append((int(n_pairs), float(np.mean(values)), float(np.std(values, ddof=1))))
    return series


class Heatmap(NamedTuple):
    items: np.ndarray
    cosine: np.ndarray
    truth: np.ndarray


def similarity_heatmap(
    representations: np.ndarray,
    oracle: SimilarityOracle,
    sample_size: int = 50,
    seed: int = 0,
    exact: bool = True,
) -> Heatmap:
    """
    Cosine matrix of sampled ID representations next to the ground-truth
    similarity matrix; undefined ground-truth cells are NaN.
    """
    x = np.asarray(representations, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= sample_size <= n:
        raise DataError(f"sample_size must be in [1, {n}], got {sample_size}.")
    rng = np.random.default_rng(seed)
    items = np.sort(rng.choice(n, size=sample_size, replace=False))

    cos = cosine_similarity(x[items])
    cos = (cos + cos.T) / 2
    np.fill_diagonal(cos, 1.0)

    rows, cols = np.triu_indices(sample_size, k=0)
    truth = np.full((sample_size, sample_size), np.nan)
    truth[rows, cols] = _pair_similarity(oracle, items, rows, cols, exact)
    truth[cols, rows] = truth[rows, cols]
    return Heatmap(items, cos, truth)


# ========================
# Reports
# ========================

def similarity_mode(config: MetricConfig) -> str:
    """Name of the adjusted-cosine form behind MS: "exact" or "fast" (unbounded)."""
    return "exact" if config.exact else "fast"


@dataclass
class MetricReport:
    strategy: str
    ds: float
    ms: float
    ds_trials: List[float] = field(default_factory=list)
    ms_trials: List[float] = field(default_factory=list)
    skipped_pairs: int = 0
    config: Optional[MetricConfig] = None

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["config"] = asdict(self.config) if self.config is not None else None
        payload["similarity"] = similarity_mode(self.config if self.config is not None else MetricConfig())
        return payload


def evaluate_ids(
    assignment: IdAssignment,
    token_table: TokenTable,
    oracle: SimilarityOracle,
    config: MetricConfig = MetricConfig(),
) -> MetricReport:
    """DS and MS of the item ID representations, averaged over `trials` seeds."""
    reps = item_representations(assignment, token_table)
    ds_values: List[float] = []
    ms_values: List[float] = []
    skipped = 0
    for t in range(config.trials):
        trial = MetricConfig(
            pair_samples=config.pair_samples,
            item_samples=config.item_samples,
            trials=1,
            seed=derive_seed(config.seed, f"trial:{t}"),
            softmax_temperature=config.softmax_temperature,
            exact=config.exact,
        )
        ds_values.append(compute_ds(reps, trial))
        ms, _, s = _ms_terms(reps, oracle, trial)
        ms_values.append(ms)
        skipped += s
    report = MetricReport(
        strategy=assignment.strategy,
        ds=float(np.mean(ds_values)),
        ms=float(np.mean(ms_values)),
        ds_trials=ds_values,
        ms_trials=ms_values,
        skipped_pairs=skipped,
        config=config,
    )
    logger.info("%s: DS=%.6f MS=%.6f over %d trials", report.strategy, report.ds, report.ms, config.trials)
    return report


def write_report(reports: Sequence[MetricReport], path: PathLike) -> None:
    write_json(path, {r.strategy: r.to_dict() for r in reports})


def write_convergence_csv(series: Sequence[Tuple[int, float, float]], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["N", "mean", "std"])
        for n_pairs, mean, std in series:
            writer.writerow([n_pairs, repr(mean), repr(std)])


def write_matrix_csv(matrix: np.ndarray, path: PathLike) -> None:
    """Square matrix as CSV; missing cells are left empty."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in matrix:
            writer.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])
