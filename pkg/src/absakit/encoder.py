"""Tokenizer, vocabulary, and a miniature post-norm transformer encoder.

The encoder keeps every layer's hidden states around so aggregation heads
can read the deepest few. Tokenization is lowercased word/punctuation
splitting, which keeps character spans exact for tag alignment.
"""

import re
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError, IngestionError
from .tensor import (
    Tensor,
    concat,
    dropout,
    embedding_lookup,
    gelu,
    layer_norm,
    softmax,
)

PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

# attention logits at padded keys; exp() underflows to exactly 0 after the
# max shift, so pad content cannot leak into real positions
_MASKED_SCORE = -1e30


def tokenize(text):
    """Split into lowercased word/punctuation tokens with character spans."""
    tokens, spans = [], []
    for m in _TOKEN_RE.finditer(text):
        tokens.append(m.group(0).lower())
        spans.append((m.start(), m.end()))
    return tokens, spans


class Vocab:
    """Token <-> id mapping with the four reserved specials at ids 0..3."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ConfigError("vocabulary must start with [PAD], [UNK], [CLS], [SEP]")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        self._itos = tokens
        self._stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self._itos)

    def __contains__(self, token):
        return token in self._stoi

    def id(self, token):
        return self._stoi.get(token, 1)

    def token(self, idx):
        return self._itos[idx]

    def save(self, path):
        """One token per line; the line number is the id."""
        with open(path, "w", encoding="utf-8") as fh:
            for token in self._itos:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line != "\n"])


def build_vocab(corpus, min_freq=2):
    """Count tokens over an iterable of raw texts and keep those at or above
    the frequency floor, most frequent first (ties alphabetical)."""
    counts = {}
    n_texts = 0
    for text in corpus:
        n_texts += 1
        for token in tokenize(text)[0]:
            counts[token] = counts.get(token, 0) + 1
    if n_texts == 0 or not counts:
        raise IngestionError("empty corpus: nothing to build a vocabulary from")
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(list(SPECIAL_TOKENS) + kept)


def vocab_coverage(vocab, corpus):
    """Fraction of token occurrences in `corpus` that are in-vocabulary."""
    total = known = 0
    for text in corpus:
        for token in tokenize(text)[0]:
            total += 1
            known += token in vocab
    return known / total if total else 0.0


@dataclass
class EncoderConfig:
    num_layers: int = 6
    hidden_size: int = 64
    num_heads: int = 4
    ff_size: int = 256
    vocab_size: int = 0
    max_len: int = 128
    dropout: float = 0.0
    layer_norm_eps: float = 1e-12
    pad_id: int = 0
    unk_id: int = 1
    cls_id: int = 2
    sep_id: int = 3

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.max_len < 3:
            raise ConfigError("max_len must leave room for [CLS], one token, and [SEP]")
        if self.num_layers < 1:
            raise ConfigError("need at least one encoder layer")


@dataclass
class TokenizedSequence:
    """Ids bracketed by [CLS]/[SEP], plus the original tokens and spans."""

    ids: list
    mask: list
    segments: list
    tokens: list
    spans: list
    n_text: int
    truncated: bool = False

    def __post_init__(self):
        if len(self.mask) != len(self.ids) or len(self.segments) != len(self.ids):
            raise ContractError("mask/segment length must match ids length")


def encode_sequence(tokens, vocab, config, spans=None):
    """[CLS] tokens [SEP]; over-length input is truncated and flagged."""
    limit = config.max_len - 2
    truncated = len(tokens) > limit
    kept = list(tokens[:limit])
    ids = [config.cls_id] + [vocab.id(t) for t in kept] + [config.sep_id]
    kept_spans = list(spans[:limit]) if spans is not None else [(0, 0)] * len(kept)
    return TokenizedSequence(
        ids=ids,
        mask=[1] * len(ids),
        segments=[0] * len(ids),
        tokens=kept,
        spans=kept_spans,
        n_text=len(kept),
        truncated=truncated,
    )


def encode_pair(tokens_a, tokens_b, vocab, config, single_segment=False):
    """[CLS] a [SEP] b [SEP] with segment ids 0/1 (all 0 if single_segment).

    The first segment is truncated before the second: `b` is short (an
    aspect term) and must survive.
    """
    budget = config.max_len - 3
    keep_b = min(len(tokens_b), budget)
    keep_a = min(len(tokens_a), budget - keep_b)
    a = list(tokens_a[:keep_a])
    b = list(tokens_b[:keep_b])
    truncated = keep_a < len(tokens_a) or keep_b < len(tokens_b)
    ids = (
        [config.cls_id]
        + [vocab.id(t) for t in a]
        + [config.sep_id]
        + [vocab.id(t) for t in b]
        + [config.sep_id]
    )
    seg_b = 0 if single_segment else 1
    segments = [0] * (len(a) + 2) + [seg_b] * (len(b) + 1)
    return TokenizedSequence(
        ids=ids,
        mask=[1] * len(ids),
        segments=segments,
        tokens=a + b,
        spans=[(0, 0)] * (len(a) + len(b)),
        n_text=len(a),
        truncated=truncated,
    )


def decode_sequence(seq, vocab, config=None):
    """Token strings for the non-special ids of `seq`."""
    config = config or EncoderConfig()
    specials = {config.pad_id, config.cls_id, config.sep_id}
    return [vocab.token(i) for i in seq.ids if i not in specials]


def pad_to(seq, length, pad_id=0):
    """Right-pad ids with pad_id and the mask with zeros up to `length`."""
    extra = length - len(seq.ids)
    if extra < 0:
        raise ContractError(f"cannot pad length {len(seq.ids)} down to {length}")
    if extra == 0:
        return seq
    return replace(
        seq,
        ids=seq.ids + [pad_id] * extra,
        mask=seq.mask + [0] * extra,
        segments=seq.segments + [0] * extra,
    )


def _normal_param(rng, shape, std=0.02):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros_param(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones_param(shape):
    return Tensor(np.ones(shape), requires_grad=True)


class TransformerLayer:
    """Post-norm block: self-attention, then feed-forward, each with a
    residual connection and layer norm."""

    def __init__(self, config, rng):
        h, f = config.hidden_size, config.ff_size
        self.num_heads = config.num_heads
        self.eps = config.layer_norm_eps
        self.wq = _normal_param(rng, (h, h))
        self.bq = _zeros_param(h)
        self.wk = _normal_param(rng, (h, h))
        self.bk = _zeros_param(h)
        self.wv = _normal_param(rng, (h, h))
        self.bv = _zeros_param(h)
        self.wo = _normal_param(rng, (h, h))
        self.bo = _zeros_param(h)
        self.ln1_gain = _ones_param(h)
        self.ln1_bias = _zeros_param(h)
        self.w_in = _normal_param(rng, (h, f))
        self.b_in = _zeros_param(f)
        self.w_out = _normal_param(rng, (f, h))
        self.b_out = _zeros_param(h)
        self.ln2_gain = _ones_param(h)
        self.ln2_bias = _zeros_param(h)

    _PARAM_NAMES = (
        "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
        "ln1_gain", "ln1_bias", "w_in", "b_in", "w_out", "b_out",
        "ln2_gain", "ln2_bias",
    )

    def named_parameters(self, prefix):
        return {f"{prefix}.{name}": getattr(self, name) for name in self._PARAM_NAMES}

    def _attention(self, x, mask, attn_sink):
        t, h = x.data.shape
        d = h // self.num_heads
        q = x @ self.wq + self.bq
        k = x @ self.wk + self.bk
        v = x @ self.wv + self.bv
        mask_add = Tensor(np.where(np.asarray(mask) > 0, 0.0, _MASKED_SCORE)[None, :])
        scale = 1.0 / np.sqrt(d)
        contexts = []
        for head in range(self.num_heads):
            cols = (slice(None), slice(head * d, (head + 1) * d))
            qh, kh, vh = q[cols], k[cols], v[cols]
            scores = (qh @ kh.T) * scale + mask_add
            weights = softmax(scores, axis=-1)
            if attn_sink is not None:
                attn_sink.append(weights.data.copy())
            contexts.append(weights @ vh)
        ctx = concat(contexts, axis=1)
        return ctx @ self.wo + self.bo

    def forward(
        self,
        x,
        mask,
        *,
        ablate_sublayers=False,
        attn_sink=None,
        dropout_rate=0.0,
        dropout_rng=None,
    ):
        if ablate_sublayers:
            attn_out = Tensor(np.zeros_like(x.data))
        else:
            attn_out = self._attention(x, mask, attn_sink)
            if dropout_rng is not None:
                attn_out = dropout(attn_out, dropout_rate, dropout_rng)
        x = layer_norm(x + attn_out, self.ln1_gain, self.ln1_bias, self.eps)
        if ablate_sublayers:
            ff_out = Tensor(np.zeros_like(x.data))
        else:
            ff_out = gelu(x @ self.w_in + self.b_in) @ self.w_out + self.b_out
            if dropout_rng is not None:
                ff_out = dropout(ff_out, dropout_rate, dropout_rng)
        return layer_norm(x + ff_out, self.ln2_gain, self.ln2_bias, self.eps)


class EncoderState:
    """Embeddings (token + position + segment, layer-normed) and the layer
    stack. Forward is read-only on parameters."""

    def __init__(self, config, rng):
        if config.vocab_size <= len(SPECIAL_TOKENS):
            raise ConfigError(f"vocab_size {config.vocab_size} leaves no real tokens")
        self.config = config
        h = config.hidden_size
        self.token_emb = _normal_param(rng, (config.vocab_size, h))
        self.position_emb = _normal_param(rng, (config.max_len, h))
        self.segment_emb = _normal_param(rng, (2, h))
        self.emb_ln_gain = _ones_param(h)
        self.emb_ln_bias = _zeros_param(h)
        self.layers = [TransformerLayer(config, rng) for _ in range(config.num_layers)]

    def named_parameters(self):
        params = {
            "embeddings.token": self.token_emb,
            "embeddings.position": self.position_emb,
            "embeddings.segment": self.segment_emb,
            "embeddings.ln_gain": self.emb_ln_gain,
            "embeddings.ln_bias": self.emb_ln_bias,
        }
        for i, layer in enumerate(self.layers):
            params.update(layer.named_parameters(f"layer{i}"))
        return params


def encoder_forward(seq, state, *, collect_attention=None, training=False, dropout_rng=None):
    """Run the encoder and return all num_layers+1 hidden states (T x H).

    Element 0 is the embedding-block output; element i is layer i's output.
    Padded positions are masked out of attention so their content never
    reaches real positions.
    """
    config = state.config
    t = len(seq.ids)
    if t > config.max_len:
        raise ContractError(f"sequence length {t} exceeds max_len {config.max_len}")
    x = (
        embedding_lookup(state.token_emb, seq.ids)
        + state.position_emb[0:t]
        + embedding_lookup(state.segment_emb, seq.segments)
    )
    x = layer_norm(x, state.emb_ln_gain, state.emb_ln_bias, config.layer_norm_eps)
    hiddens = [x]
    rate = config.dropout if training else 0.0
    rng = dropout_rng if rate > 0.0 else None
    for layer in state.layers:
        x = layer.forward(
            x,
            seq.mask,
            attn_sink=collect_attention,
            dropout_rate=rate,
            dropout_rng=rng,
        )
        hiddens.append(x)
    return hiddens
