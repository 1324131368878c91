"""Prediction heads and multi-layer aggregation.

Three modes:

* ``vanilla`` - one head on the final hidden state, one loss term.
* ``psum``    - the four deepest hidden states each get their own extra
  transformer layer and head; the four branch losses are summed. Branches
  never exchange data.
* ``hsum``    - like psum, but the processed states are accumulated top-down
  (deepest first) by elementwise addition before each head, feature-pyramid
  style, so branch i sees hidden states 0..i.

Branch index 0 always corresponds to the deepest hidden state.
"""

import numpy as np

from .crf import CrfParams, crf_nll, emissions as crf_emissions, viterbi_decode
from .encoder import EncoderState, TransformerLayer, encoder_forward
from .errors import ConfigError, ContractError
from .tensor import Tensor, cross_entropy

MODES = ("vanilla", "psum", "hsum")
INFER_BRANCH = ("mean", "deepest")
NUM_BRANCHES = 4
NUM_CLASSES = 3  # positive / negative / neutral


class AeHead:
    """CRF head: projects branch hidden states to per-tag emission scores."""

    def __init__(self, hidden_size, rng):
        self.crf = CrfParams(hidden_size, rng=rng)

    def apply(self, processed, seq):
        if seq.n_text < 1:
            raise ContractError("tagging needs at least one real token")
        return crf_emissions(processed[1 : 1 + seq.n_text], self.crf)

    def named_parameters(self, prefix):
        return self.crf.named_parameters(f"{prefix}.crf")


class AscHead:
    """Linear classifier over the [CLS] position, three sentiment classes."""

    def __init__(self, hidden_size, rng):
        self.weight = Tensor(rng.normal(0.0, 0.02, size=(hidden_size, NUM_CLASSES)), requires_grad=True)
        self.bias = Tensor(np.zeros(NUM_CLASSES), requires_grad=True)

    def apply(self, processed, seq):
        return (processed[0:1] @ self.weight + self.bias)[0]

    def named_parameters(self, prefix):
        return {f"{prefix}.cls.weight": self.weight, f"{prefix}.cls.bias": self.bias}


class BranchSet:
    """Extra transformer layers plus heads, one pair per branch.

    Vanilla mode has a single head and no extra layers.
    """

    def __init__(self, layers, heads):
        self.layers = list(layers)
        self.heads = list(heads)

    def named_parameters(self):
        params = {}
        for i, layer in enumerate(self.layers):
            params.update(layer.named_parameters(f"branch{i}.extra"))
        for i, head in enumerate(self.heads):
            params.update(head.named_parameters(f"branch{i}"))
        return params


def _check_quad(hiddens, branches):
    if len(hiddens) != NUM_BRANCHES:
        raise ContractError(f"aggregation expects {NUM_BRANCHES} hidden states, got {len(hiddens)}")
    if len(branches.heads) != NUM_BRANCHES:
        raise ContractError(f"aggregation expects {NUM_BRANCHES} branches, got {len(branches.heads)}")


def psum_forward(hiddens, branches, seq, mask, *, identity_layers=False, dropout_rate=0.0, dropout_rng=None):
    """Parallel aggregation: branch i = head_i(extra_layer_i(hidden_i)).

    `hiddens` is deepest-first. No dataflow crosses branches. With
    identity_layers the extra layers are bypassed (ablation hook).
    """
    _check_quad(hiddens, branches)
    outputs = []
    for i in range(NUM_BRANCHES):
        if identity_layers:
            processed = hiddens[i]
        else:
            processed = branches.layers[i].forward(
                hiddens[i], mask, dropout_rate=dropout_rate, dropout_rng=dropout_rng
            )
        outputs.append(branches.heads[i].apply(processed, seq))
    return outputs


def hsum_forward(hiddens, branches, seq, mask, *, identity_layers=False, dropout_rate=0.0, dropout_rng=None):
    """Hierarchical aggregation, deepest-first running elementwise sum:
    p_0 = extra_0(h_0); p_i = extra_i(h_i) + p_{i-1}; branch i = head_i(p_i).
    """
    _check_quad(hiddens, branches)
    outputs = []
    running = None
    for i in range(NUM_BRANCHES):
        if identity_layers:
            processed = hiddens[i]
        else:
            processed = branches.layers[i].forward(
                hiddens[i], mask, dropout_rate=dropout_rate, dropout_rng=dropout_rng
            )
        running = processed if running is None else processed + running
        outputs.append(branches.heads[i].apply(running, seq))
    return outputs


def branch_loss_ae(emission_scores, tags, crf_params):
    """CRF negative log-likelihood for one branch."""
    return crf_nll(emission_scores, tags, crf_params)


def branch_loss_asc(logits, label):
    """Cross-entropy over the three sentiment classes for one branch."""
    return cross_entropy(logits, label)


def total_loss(losses):
    """Unweighted arithmetic sum of branch losses (left fold, so the result
    is bit-identical to adding the scalars in branch order)."""
    if not losses:
        raise ContractError("no branch losses to sum")
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return total


def predict_ae(branch_emissions, crf_params_list, infer_branch="mean", constrain_bio=True):
    """Decode tags from branch emissions.

    mean: average the emission matrices and the CRF score parameters across
    branches, then Viterbi-decode. deepest: use branch 0 alone. Identical
    branches make both choices coincide with single-branch decoding.
    """
    if infer_branch == "deepest":
        return viterbi_decode(branch_emissions[0], crf_params_list[0], constrain_bio)
    stacked = [np.asarray(getattr(e, "data", e)) for e in branch_emissions]
    mean_em = sum(stacked) / float(len(stacked))
    params = crf_params_list[0] if len(crf_params_list) == 1 else CrfParams.mean_of(crf_params_list)
    return viterbi_decode(mean_em, params, constrain_bio)


def predict_asc(branch_logits, infer_branch="mean"):
    """Class index from branch logits; argmax ties go to the lowest index."""
    if infer_branch == "deepest":
        logits = np.asarray(getattr(branch_logits[0], "data", branch_logits[0]))
    else:
        stacked = [np.asarray(getattr(l, "data", l)) for l in branch_logits]
        logits = sum(stacked) / float(len(stacked))
    return int(np.argmax(logits))


class AbsaModel:
    """Encoder plus aggregation branches for one task ('ae' or 'asc')."""

    def __init__(self, task, mode, encoder_config, rng, infer_branch="mean"):
        if task not in ("ae", "asc"):
            raise ConfigError(f"unknown task {task!r}")
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        if infer_branch not in INFER_BRANCH:
            raise ConfigError(f"unknown infer_branch {infer_branch!r}")
        if mode in ("psum", "hsum") and encoder_config.num_layers < NUM_BRANCHES:
            raise ConfigError(
                f"{mode} needs an encoder depth of at least {NUM_BRANCHES}, "
                f"got {encoder_config.num_layers}"
            )
        self.task = task
        self.mode = mode
        self.infer_branch = infer_branch
        self.encoder = EncoderState(encoder_config, rng)
        n_branches = 1 if mode == "vanilla" else NUM_BRANCHES
        head_cls = AeHead if task == "ae" else AscHead
        extra = [] if mode == "vanilla" else [
            TransformerLayer(encoder_config, rng) for _ in range(NUM_BRANCHES)
        ]
        self.branches = BranchSet(extra, [head_cls(encoder_config.hidden_size, rng) for _ in range(n_branches)])
        self._rng = rng

    def named_parameters(self):
        params = self.encoder.named_parameters()
        params.update(self.branches.named_parameters())
        return params

    def branch_outputs(self, seq, training=False):
        """Per-branch emissions (ae) or logits (asc), deepest branch first."""
        rate = self.encoder.config.dropout if training else 0.0
        rng = self._rng if rate > 0.0 else None
        hiddens = encoder_forward(seq, self.encoder, training=training, dropout_rng=rng)
        if self.mode == "vanilla":
            return [self.branches.heads[0].apply(hiddens[-1], seq)]
        quad = [hiddens[-1], hiddens[-2], hiddens[-3], hiddens[-4]]
        forward = psum_forward if self.mode == "psum" else hsum_forward
        return forward(quad, self.branches, seq, seq.mask, dropout_rate=rate, dropout_rng=rng)

    def loss(self, seq, target, training=False):
        """Summed branch losses for one example."""
        outputs = self.branch_outputs(seq, training=training)
        if self.task == "ae":
            if len(target) != seq.n_text:
                raise ContractError(f"{len(target)} tags for {seq.n_text} tokens")
            losses = [
                branch_loss_ae(out, target, self.branches.heads[i].crf)
                for i, out in enumerate(outputs)
            ]
        else:
            losses = [branch_loss_asc(out, target) for out in outputs]
        return total_loss(losses)

    def predict(self, seq):
        """Tag path (ae, BIO-constrained) or class index (asc)."""
        outputs = self.branch_outputs(seq)
        if self.task == "ae":
            crfs = [head.crf for head in self.branches.heads]
            return predict_ae(outputs, crfs, self.infer_branch)
        return predict_asc(outputs, self.infer_branch)
