"""Dataset ingestion and example handling.

Reads SemEval-style review XML in two schemas (2014 aspectTerm elements with
term/from/to attributes, 2016 Opinion elements with target/from/to), aligns
character-offset aspect spans to tokenizer output as BIO tags, and provides
validation splitting plus deterministic padded batching. Normalized examples
round-trip through line-delimited JSON for reproducible reruns.
"""

import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np

from .crf import TAG_B, TAG_I, TAG_NAMES, TAG_O
from .encoder import pad_to, tokenize
from .errors import AlignmentError, ConfigError, DataError, IngestionError

log = logging.getLogger(__name__)

POLARITIES = ("positive", "negative", "neutral")

# sentence/aspect counts for pristine distribution files, keyed by
# (dataset, split); used by the `ingest` validation path
AE_COUNTS = {
    ("lpt14", "train"): (3045, 2358),
    ("lpt14", "test"): (800, 654),
    ("rst16", "train"): (2000, 1743),
    ("rst16", "test"): (676, 622),
}
ASC_COUNTS = {
    ("lpt14", "train"): (987, 866, 460),
    ("lpt14", "test"): (341, 128, 169),
    ("rst14", "train"): (2164, 805, 633),
    ("rst14", "test"): (728, 196, 196),
}


@dataclass
class AeExample:
    """One sentence with token-aligned BIO tags for its aspect terms."""

    text: str
    tokens: list
    spans: list
    aspect_spans: list
    tags: list
    sentence_id: str = ""


@dataclass
class AscExample:
    """One (sentence, aspect term, polarity) triple."""

    text: str
    aspect: str
    polarity: int
    sentence_id: str = ""


# -- BIO alignment -------------------------------------------------------------


def bio_encode(token_spans, aspect_spans):
    """Tag tokens against character-offset aspect spans.

    The first token overlapping an aspect gets B, the rest I. Aspects that
    start or end mid-token are snapped outward to whole tokens (logged).
    Overlapping aspect spans are invalid data.
    """
    tags = [TAG_O] * len(token_spans)
    ordered = sorted(aspect_spans, key=lambda s: (s[0], s[1]))
    prev_end = -1
    claimed = [False] * len(token_spans)
    for a_start, a_end in ordered:
        if a_start >= a_end:
            raise DataError(f"empty aspect span ({a_start},{a_end})")
        if a_start < prev_end:
            raise DataError(f"overlapping aspect spans at ({a_start},{a_end})")
        prev_end = a_end
        covered = [
            i
            for i, (t_start, t_end) in enumerate(token_spans)
            if t_start < a_end and t_end > a_start and not claimed[i]
        ]
        if not covered:
            raise AlignmentError(f"aspect span ({a_start},{a_end}) maps to no token")
        first = covered[0]
        if token_spans[first][0] != a_start or token_spans[covered[-1]][1] != a_end:
            log.warning(
                "aspect span (%d,%d) snapped to token boundaries (%d,%d)",
                a_start, a_end, token_spans[first][0], token_spans[covered[-1]][1],
            )
        tags[first] = TAG_B
        for i in covered[1:]:
            tags[i] = TAG_I
        for i in covered:
            claimed[i] = True
    return tags


def bio_decode(tags, token_spans):
    """Character-offset spans for each tagged aspect; inverts bio_encode on
    token-aligned input. An I without a preceding B opens a new span."""
    return [
        (token_spans[start][0], token_spans[end - 1][1])
        for start, end in tags_to_spans(tags)
    ]


def tags_to_spans(tags):
    """Token-index spans (start, end_exclusive) for each B(I)* group."""
    spans = []
    start = None
    for i, tag in enumerate(tags):
        if tag == TAG_B or (tag == TAG_I and start is None):
            if start is not None:
                spans.append((start, i))
            start = i
        elif tag == TAG_O and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(tags)))
    return spans


def is_bio_valid(tags):
    """True when no I starts the sequence or follows an O."""
    prev = TAG_O
    for tag in tags:
        if tag == TAG_I and prev == TAG_O:
            return False
        prev = tag
    return True


# -- SemEval XML ----------------------------------------------------------------


def _parse_xml(path):
    try:
        return ET.parse(path).getroot()
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else "?"
        raise IngestionError(f"{path}: malformed XML at line {line}: {exc}") from exc


def _sentence_entries(sentence, path):
    """Normalized (term, from, to, polarity) rows for one sentence element."""
    entries = []
    terms = sentence.find("aspectTerms")
    if terms is not None:
        for el in terms.findall("aspectTerm"):
            entries.append((el.get("term"), el.get("from"), el.get("to"), el.get("polarity")))
    opinions = sentence.find("Opinions")
    if opinions is not None:
        for el in opinions.findall("Opinion"):
            if el.get("target") == "NULL":
                continue
            entries.append((el.get("target"), el.get("from"), el.get("to"), el.get("polarity")))
    out = []
    for term, start, end, polarity in entries:
        try:
            out.append((term, int(start), int(end), polarity))
        except (TypeError, ValueError) as exc:
            raise IngestionError(f"{path}: bad aspect offsets {start!r}/{end!r}") from exc
    return out


def _iter_sentences(path):
    root = _parse_xml(path)
    if root.tag not in ("sentences", "Reviews"):
        raise IngestionError(f"{path}: unrecognized root element <{root.tag}>")
    for sentence in root.iter("sentence"):
        text_el = sentence.find("text")
        if text_el is None or text_el.text is None:
            continue
        yield sentence.get("id", ""), text_el.text, _sentence_entries(sentence, path)


def parse_semeval_ae(path):
    """All sentences as AeExamples; sentences without aspects stay all-O."""
    examples = []
    for sid, text, entries in _iter_sentences(path):
        seen = set()
        spans = []
        for _, start, end, _ in entries:
            if start == end:
                continue
            if not 0 <= start < end <= len(text):
                raise AlignmentError(f"{path}: span ({start},{end}) outside sentence {sid!r}")
            if (start, end) in seen:
                continue
            seen.add((start, end))
            spans.append((start, end))
        tokens, token_spans = tokenize(text)
        tags = bio_encode(token_spans, spans)
        examples.append(
            AeExample(
                text=text,
                tokens=tokens,
                spans=token_spans,
                aspect_spans=bio_decode(tags, token_spans),
                tags=tags,
                sentence_id=sid,
            )
        )
    return examples


def parse_semeval_asc(path):
    """One AscExample per (sentence, aspect) pair; 'conflict' pairs dropped."""
    examples = []
    for sid, text, entries in _iter_sentences(path):
        for term, start, end, polarity in entries:
            if polarity == "conflict":
                continue
            if polarity not in POLARITIES:
                raise IngestionError(f"{path}: unknown polarity {polarity!r} in sentence {sid!r}")
            examples.append(
                AscExample(
                    text=text,
                    aspect=term or text[start:end],
                    polarity=POLARITIES.index(polarity),
                    sentence_id=sid,
                )
            )
    return examples


def count_ae(examples):
    """(sentences, aspects) for comparison against distribution statistics."""
    return len(examples), sum(tag == TAG_B for ex in examples for tag in ex.tags)


def count_asc(examples):
    """(positive, negative, neutral) example counts."""
    counts = [0, 0, 0]
    for ex in examples:
        counts[ex.polarity] += 1
    return tuple(counts)


# -- persistence -----------------------------------------------------------------


def write_jsonl(examples, path):
    """One JSON object per line; schema depends on the example type."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            if isinstance(ex, AeExample):
                record = {
                    "id": ex.sentence_id,
                    "text": ex.text,
                    "tokens": ex.tokens,
                    "spans": [list(s) for s in ex.spans],
                    "aspect_spans": [list(s) for s in ex.aspect_spans],
                    "tags": [TAG_NAMES[t] for t in ex.tags],
                }
            else:
                record = {
                    "id": ex.sentence_id,
                    "text": ex.text,
                    "aspect": ex.aspect,
                    "polarity": POLARITIES[ex.polarity],
                }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_ae_jsonl(path):
    examples = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                examples.append(
                    AeExample(
                        text=rec["text"],
                        tokens=rec["tokens"],
                        spans=[tuple(s) for s in rec["spans"]],
                        aspect_spans=[tuple(s) for s in rec["aspect_spans"]],
                        tags=[TAG_NAMES.index(t) for t in rec["tags"]],
                        sentence_id=rec.get("id", ""),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise IngestionError(f"{path}: bad record on line {n}: {exc}") from exc
    return examples


def read_asc_jsonl(path):
    examples = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                examples.append(
                    AscExample(
                        text=rec["text"],
                        aspect=rec["aspect"],
                        polarity=POLARITIES.index(rec["polarity"]),
                        sentence_id=rec.get("id", ""),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise IngestionError(f"{path}: bad record on line {n}: {exc}") from exc
    return examples


# -- splitting and batching --------------------------------------------------------


def split_validation(examples, n, seed):
    """Deterministic (train, validation) split with |validation| == n."""
    if n >= len(examples):
        raise ConfigError(f"validation size {n} must be below the {len(examples)} examples")
    perm = np.random.default_rng(seed).permutation(len(examples))
    validation = [examples[i] for i in perm[:n]]
    train = [examples[i] for i in perm[n:]]
    return train, validation


def make_batches(items, batch_size, seed, epoch, pad_id=0):
    """Shuffle (seed, epoch)-deterministically and yield padded batches.

    `items` are (TokenizedSequence, target) pairs. Sequences in a batch are
    right-padded to the batch maximum with pad_id and zero mask entries; the
    last batch may be short.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    for lo in range(0, len(items), batch_size):
        chunk = [items[i] for i in order[lo : lo + batch_size]]
        width = max(len(seq.ids) for seq, _ in chunk)
        yield [(pad_to(seq, width, pad_id), target) for seq, target in chunk]
