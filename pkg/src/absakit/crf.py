"""Linear-chain CRF over {B, I, O}: emission scores, exact log-partition via
the forward recursion, NLL, and Viterbi decoding with optional BIO masking.

Scores are kept in log space throughout. The sequence score is
start[y1] + sum_t emission[t, y_t] + sum_t transition[y_{t-1}, y_t] + end[y_T],
and the log-partition runs the same accumulation over all paths with
logsumexp in place of selection.
"""

import numpy as np

from .errors import ContractError, LabelError
from .tensor import Tensor, logsumexp

NUM_TAGS = 3
TAG_B, TAG_I, TAG_O = 0, 1, 2
TAG_NAMES = ("B", "I", "O")


class CrfParams:
    """Transition matrix, boundary scores, and the emission projection."""

    def __init__(self, hidden_size, num_tags=NUM_TAGS, rng=None):
        k = num_tags
        self.num_tags = k
        if rng is None:
            proj = np.zeros((hidden_size, k))
        else:
            proj = rng.normal(0.0, 0.02, size=(hidden_size, k))
        self.projection = Tensor(proj, requires_grad=True)
        self.bias = Tensor(np.zeros(k), requires_grad=True)
        self.transition = Tensor(np.zeros((k, k)), requires_grad=True)
        self.start = Tensor(np.zeros(k), requires_grad=True)
        self.end = Tensor(np.zeros(k), requires_grad=True)

    def named_parameters(self, prefix="crf"):
        return {
            f"{prefix}.projection": self.projection,
            f"{prefix}.bias": self.bias,
            f"{prefix}.transition": self.transition,
            f"{prefix}.start": self.start,
            f"{prefix}.end": self.end,
        }

    @classmethod
    def mean_of(cls, params_list):
        """Elementwise average of several parameter sets (no gradients)."""
        first = params_list[0]
        avg = cls(first.projection.data.shape[0], first.num_tags)
        n = float(len(params_list))
        for name in ("projection", "bias", "transition", "start", "end"):
            stacked = sum(getattr(p, name).data for p in params_list) / n
            getattr(avg, name).data = stacked
        return avg


def emissions(hidden, params):
    """Per-position, per-tag scores: hidden (T x H) -> (T x K)."""
    return hidden @ params.projection + params.bias


def _check_tags(tags, t, k):
    if len(tags) != t:
        raise ContractError(f"{len(tags)} tags for {t} positions")
    if t < 1:
        raise ContractError("need at least one position")
    for tag in tags:
        if not 0 <= tag < k:
            raise LabelError(f"tag {tag} out of range for {k} labels")


def sequence_score(emission_scores, tags, params):
    """Log-space score of one tag path (differentiable)."""
    emission_scores = Tensor._coerce(emission_scores)
    t, k = emission_scores.data.shape
    _check_tags(tags, t, k)
    tags_arr = np.asarray(tags, dtype=np.intp)
    score = (
        params.start[int(tags_arr[0])]
        + emission_scores[(np.arange(t), tags_arr)].sum()
        + params.end[int(tags_arr[-1])]
    )
    if t > 1:
        score = score + params.transition[(tags_arr[:-1], tags_arr[1:])].sum()
    return score


def log_partition(emission_scores, params):
    """log Z: forward recursion with logsumexp over all K^T tag paths."""
    emission_scores = Tensor._coerce(emission_scores)
    t, k = emission_scores.data.shape
    if t < 1:
        raise ContractError("need at least one position")
    alpha = params.start + emission_scores[0]
    for step in range(1, t):
        alpha = logsumexp(alpha.reshape(k, 1) + params.transition, axis=0) + emission_scores[step]
    return logsumexp(alpha + params.end)


def crf_nll(emission_scores, tags, params):
    """Exact negative log-likelihood: log Z minus the gold path score."""
    return log_partition(emission_scores, params) - sequence_score(emission_scores, tags, params)


def viterbi_decode(emission_scores, params, constrain_bio=True):
    """Highest-scoring tag path via max-product recursion with backpointers.

    With constrain_bio, paths starting with I or stepping O -> I are masked
    out, so the result is always BIO-valid. Ties break toward the lower tag
    index (argmax picks the first maximum).
    """
    em = np.asarray(getattr(emission_scores, "data", emission_scores), dtype=np.float64)
    t, k = em.shape
    trans = params.transition.data.copy()
    start = params.start.data.copy()
    end = params.end.data
    if constrain_bio:
        start[TAG_I] = -np.inf
        trans[TAG_O, TAG_I] = -np.inf
    v = start + em[0]
    pointers = []
    for step in range(1, t):
        candidates = v[:, None] + trans
        pointers.append(candidates.argmax(axis=0))
        v = candidates.max(axis=0) + em[step]
    v = v + end
    best = int(v.argmax())
    path = [best]
    for ptr in reversed(pointers):
        best = int(ptr[best])
        path.append(best)
    path.reverse()
    return path
