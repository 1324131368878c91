"""Deterministic synthetic review corpus for tests and sanity runs.

Sentences come from a small set of templates over closed word lists, so the
gold labels are exact by construction and a small model can memorize them.
A few templates mention product nouns without opining on them (tagged O, at
the same sentence positions as real aspects), which keeps the task from
collapsing into pure token lookup.
"""

import numpy as np

from .crf import TAG_B, TAG_I, TAG_O
from .data import AeExample, AscExample

DEFAULT_SEED = 7
DEFAULT_SIZE = 50

ASPECTS = [
    ("battery",),
    ("screen",),
    ("keyboard",),
    ("touchpad",),
    ("speakers",),
    ("battery", "life"),
    ("hard", "drive"),
    ("screen", "resolution"),
]

ADJECTIVES = {
    0: ["great", "excellent", "fantastic", "superb"],       # positive
    1: ["terrible", "awful", "disappointing", "horrible"],  # negative
    2: ["average", "ordinary", "unremarkable", "passable"], # neutral
}

# {asp} is replaced by an aspect noun phrase (tagged B I...), {adj} by an
# opinion adjective that fixes the sentiment class
OPINION_TEMPLATES = [
    "the {asp} is {adj} .",
    "the {asp} was {adj} .",
    "i think the {asp} is {adj} .",
    "overall the {asp} seemed {adj} .",
]

# same nouns in non-opinion contexts, tagged all-O; the noun sits at the
# same position as in the first opinion template, so token identity and
# position alone cannot separate the two cases
PLAIN_TEMPLATES = [
    "the {asp} box arrived damaged .",
    "the {asp} sticker was missing .",
]

FILLER_SENTENCES = [
    "it works exactly as described .",
    "shipping took about two weeks .",
    "i bought it last month .",
    "nothing else to report today .",
]


def _fill(template, aspect, adjective):
    """Expand a template into tokens plus the aspect's token index range."""
    tokens = []
    span = None
    for word in template.split():
        if word == "{asp}":
            span = (len(tokens), len(tokens) + len(aspect))
            tokens.extend(aspect)
        elif word == "{adj}":
            tokens.append(adjective)
        else:
            tokens.append(word)
    return tokens, span


def _spans_for(tokens):
    """Character spans of space-joined tokens."""
    spans = []
    pos = 0
    for tok in tokens:
        spans.append((pos, pos + len(tok)))
        pos += len(tok) + 1
    return spans


def _make_ae(tokens, aspect_token_span, sid):
    spans = _spans_for(tokens)
    tags = [TAG_O] * len(tokens)
    aspect_spans = []
    if aspect_token_span is not None:
        lo, hi = aspect_token_span
        tags[lo] = TAG_B
        for i in range(lo + 1, hi):
            tags[i] = TAG_I
        aspect_spans.append((spans[lo][0], spans[hi - 1][1]))
    return AeExample(
        text=" ".join(tokens),
        tokens=tokens,
        spans=spans,
        aspect_spans=aspect_spans,
        tags=tags,
        sentence_id=sid,
    )


def generate_ae_corpus(n=DEFAULT_SIZE, seed=DEFAULT_SEED):
    """`n` tagging examples: ~70% opinions, ~15% plain mentions, ~15% filler."""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        roll = rng.random()
        sid = f"synth-ae-{i}"
        if roll < 0.70:
            template = OPINION_TEMPLATES[rng.integers(len(OPINION_TEMPLATES))]
            aspect = ASPECTS[rng.integers(len(ASPECTS))]
            cls = int(rng.integers(3))
            adj = ADJECTIVES[cls][rng.integers(len(ADJECTIVES[cls]))]
            tokens, span = _fill(template, aspect, adj)
            examples.append(_make_ae(tokens, span, sid))
        elif roll < 0.85:
            template = PLAIN_TEMPLATES[rng.integers(len(PLAIN_TEMPLATES))]
            aspect = ASPECTS[rng.integers(len(ASPECTS))]
            tokens, _ = _fill(template, aspect, None)
            examples.append(_make_ae(tokens, None, sid))
        else:
            sentence = FILLER_SENTENCES[rng.integers(len(FILLER_SENTENCES))]
            tokens = sentence.split()
            examples.append(_make_ae(tokens, None, sid))
    return examples


def generate_asc_corpus(n=DEFAULT_SIZE, seed=DEFAULT_SEED):
    """`n` (sentence, aspect, polarity) examples, class fixed by adjective."""
    rng = np.random.default_rng(seed)
    examples = []
    i = 0
    while len(examples) < n:
        sid = f"synth-asc-{i}"
        i += 1
        if rng.random() < 0.8 or n - len(examples) < 2:
            template = OPINION_TEMPLATES[rng.integers(len(OPINION_TEMPLATES))]
            aspect = ASPECTS[rng.integers(len(ASPECTS))]
            cls = int(rng.integers(3))
            adj = ADJECTIVES[cls][rng.integers(len(ADJECTIVES[cls]))]
            tokens, _ = _fill(template, aspect, adj)
            examples.append(
                AscExample(" ".join(tokens), " ".join(aspect), cls, sid)
            )
        else:
            # contrastive sentence: two aspects, two polarities, two examples
            a1, a2 = (ASPECTS[j] for j in rng.choice(len(ASPECTS), size=2, replace=False))
            c1, c2 = int(rng.integers(3)), int(rng.integers(3))
            adj1 = ADJECTIVES[c1][rng.integers(len(ADJECTIVES[c1]))]
            adj2 = ADJECTIVES[c2][rng.integers(len(ADJECTIVES[c2]))]
            text = (
                f"the {' '.join(a1)} is {adj1} but the {' '.join(a2)} is {adj2} ."
            )
            examples.append(AscExample(text, " ".join(a1), c1, sid))
            examples.append(AscExample(text, " ".join(a2), c2, sid))
    return examples[:n]
