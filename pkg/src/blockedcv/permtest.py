"""Permutation significance tests for fitted model terms.

Classical F tests are inappropriate here because the block effects carry
all of the response variance, so term significance is judged against an
empirical null built by permuting exchangeable residuals:

* fixed terms are tested on the block-adjusted residuals (observations
  minus the estimated block main effects); permuting those whole vectors
  uniformly over all cells and recomputing the term's sum of squares gives
  the null distribution;
* a random (block) term is tested symmetrically: residualize on every
  other model term first, then permute and recompute that block's sum of
  squares.

p = (1 + #{permuted >= observed}) / (B + 1), hence always >= 1/(B+1).
With the same seed the results are bit-identical regardless of scheduling;
permutations are generated in one vectorized batch per term from a
dedicated substream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .anova import CV_SEEDS, RF_SEEDS, AnovaResult, TermFit, _group_means
from .errors import AnovaError
from .rng import derive_seed

_DOM_PERM = 0x70
_CHUNK = 512  # permutations per vectorized batch, bounds memory


@dataclass(frozen=True)
class PermutationPlan:
    """Which terms to test, how many permutations, and the seed.

    Each entry of ``terms`` is a fitted term name, or a tuple of names of
    the same kind tested jointly (statistic: sum of their SSEs). ``None``
    means every term of the fitted model.
    """

    terms: tuple[str | tuple[str, ...], ...] | None = None
    n_permutations: int = 4999
    seed: int = 0
    statistic: str = "sse"

    def __post_init__(self) -> None:
        if self.n_permutations < 1:
            raise AnovaError("need at least one permutation")
        if self.statistic not in ("sse", "mse"):
            raise AnovaError(f"statistic must be 'sse' or 'mse', got {self.statistic!r}")


@dataclass(frozen=True)
class TermTest:
    """Permutation outcome for one (joint) term."""

    term: str
    observed: float
    n_permutations: int
    n_greater_equal: int
    p_value: float
    perm_mean: float
    perm_max: float


@dataclass(frozen=True)
class PermutationResult:
    tests: dict[str, TermTest]

    def p_value(self, term: str) -> float:
        return self.tests[term].p_value


def format_p_value(p: float, n_permutations: int) -> str:
    """Human-readable p; the attainable minimum renders as an upper bound."""
    floor = 1.0 / (n_permutations + 1)
    if p <= floor:
        return f"<={floor:.4g}"
    return f"{p:.4g}"


def block_residuals(fit: AnovaResult) -> np.ndarray:
    """Observations minus the estimated block main effects.

    For the canonical blocked model this equals the per-setting mean plus
    the model residual in every cell; on a repeated-CV fit (no block
    terms) the observations come back unchanged.
    """
    r = fit.table.err.astype(np.float64).copy()
    for name in (CV_SEEDS, RF_SEEDS):
        tf = fit.terms.get(name)
        if tf is not None:
            r -= tf.cell_effects
    return r


def _term_sse_matrix(base: np.ndarray, tf: TermFit) -> np.ndarray:
    """SSE of ``tf`` recomputed on each row of a (B, n) value matrix."""
    order = np.argsort(tf.codes, kind="stable")
    sorted_codes = tf.codes[order]
    bounds = np.searchsorted(sorted_codes, np.arange(len(tf.levels) + 1))
    counts = np.diff(bounds).astype(np.float64)
    vals = base[:, order]
    level_sums = np.add.reduceat(vals, bounds[:-1], axis=1)
    level_means = level_sums / counts
    grand = base.mean(axis=1, keepdims=True)
    dev = level_means - grand
    return np.einsum("bl,l,bl->b", dev, counts, dev)


def _term_sse_vector(base: np.ndarray, tf: TermFit) -> float:
    means, counts = _group_means(tf.codes, base, len(tf.levels))
    grand = math.fsum(base) / len(base)
    dev = means - grand
    return float(np.dot(dev * counts, dev))


def permutation_test(fit: AnovaResult, plan: PermutationPlan) -> PermutationResult:
    """Run the permutation test for each requested term."""
    entries = plan.terms if plan.terms is not None else tuple(fit.terms)
    y = fit.table.err.astype(np.float64)
    n = len(y)

    tests: dict[str, TermTest] = {}
    for t_idx, entry in enumerate(entries):
        names = (entry,) if isinstance(entry, str) else tuple(entry)
        fits = [fit.term(name) for name in names]
        kinds = {tf.kind for tf in fits}
        if len(kinds) != 1:
            raise AnovaError(f"joint test {names} mixes random and fixed terms")
        kind = kinds.pop()

        if kind == "fixed":
            base = block_residuals(fit)
        else:
            base = y.copy()
            for other in fit.terms.values():
                if other.name not in names:
                    base -= other.cell_effects

        divisor = 1.0
        if plan.statistic == "mse":
            divisor = float(sum(tf.df for tf in fits)) or 1.0

        observed = sum(_term_sse_vector(base, tf) for tf in fits) / divisor

        rng = np.random.Generator(np.random.PCG64(derive_seed(plan.seed, [_DOM_PERM, t_idx])))
        n_ge = 0
        s = 0.0
        mx = -math.inf
        remaining = plan.n_permutations
        while remaining > 0:
            b = min(_CHUNK, remaining)
            remaining -= b
            keys = rng.random((b, n))
            perm_idx = np.argsort(keys, axis=1)
            permuted = base[perm_idx]
            stats = np.zeros(b)
            for tf in fits:
                stats += _term_sse_matrix(permuted, tf)
            stats /= divisor
            n_ge += int(np.count_nonzero(stats >= observed))
            s += float(stats.sum())
            mx = max(mx, float(stats.max()))

        B = plan.n_permutations
        label = "+".join(names)
        tests[label] = TermTest(
            term=label,
            observed=observed,
            n_permutations=B,
            n_greater_equal=n_ge,
            p_value=(1 + n_ge) / (B + 1),
            perm_mean=s / B,
            perm_max=mx,
        )
    return PermutationResult(tests)
