"""Run configuration, the training loop, evaluation, layer probing, and
versioned binary checkpoints.

A run is fully determined by (config, seed): shuffles key off (seed, epoch),
initialization off the seed, and everything executes single-threaded, so
reruns reproduce every emitted number.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .crf import TAG_NAMES, CrfParams, crf_nll, emissions as crf_emissions, viterbi_decode
from .data import (
    POLARITIES,
    AeExample,
    AscExample,
    make_batches,
    parse_semeval_ae,
    parse_semeval_asc,
    read_ae_jsonl,
    read_asc_jsonl,
    split_validation,
    tags_to_spans,
)
from .encoder import (
    EncoderConfig,
    Vocab,
    build_vocab,
    encode_pair,
    encode_sequence,
    encoder_forward,
    tokenize,
)
from .errors import CheckpointError, ConfigError, DataError, IngestionError, NumericError
from .heads import AbsaModel, AscHead, predict_asc, total_loss
from .metrics import RunReport, SeedRun, ae_span_f1, asc_scores
from .tensor import Adam, Tensor, cross_entropy

CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = "absakit-checkpoint"

TASKS = ("ae", "asc")
DEFAULT_SEEDS = (1, 2, 3, 4, 5, 6, 7, 8, 9)


@dataclass
class RunConfig:
    """Everything a training run needs; every field doubles as a config-file
    key and a CLI flag."""

    task: str = "ae"
    data: str = ""
    dataset: str = ""
    mode: str = "vanilla"
    epochs: int = 4
    batch_size: int = 16
    lr: float = 3e-5
    seeds: tuple = DEFAULT_SEEDS
    validation_n: int = 150
    infer_branch: str = "mean"
    num_layers: int = 6
    hidden_size: int = 64
    num_heads: int = 4
    ff_size: int = 256
    max_len: int = 128
    min_freq: int = 2
    dropout: float = 0.0
    single_segment: bool = False

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.validation_n < 0:
            raise ConfigError("validation_n must be >= 0")
        return self

    def encoder_config(self, vocab_size):
        return EncoderConfig(
            num_layers=self.num_layers,
            hidden_size=self.hidden_size,
            num_heads=self.num_heads,
            ff_size=self.ff_size,
            vocab_size=vocab_size,
            max_len=self.max_len,
            dropout=self.dropout,
        )

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(kwargs["seeds"])
        return cls(**kwargs)


def parse_config_file(path):
    """Flat `key = value` lines; '#' starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def coerce_config_values(raw):
    """String config values -> typed RunConfig kwargs."""
    out = {}
    type_map = {f.name: f.type for f in fields(RunConfig)}
    for key, value in raw.items():
        if key not in type_map:
            raise ConfigError(f"unknown config key {key!r}")
        kind = type_map[key]
        if key == "seeds":
            out[key] = tuple(int(s) for s in str(value).replace(",", " ").split())
        elif kind in ("int", int):
            out[key] = int(value)
        elif kind in ("float", float):
            out[key] = float(value)
        elif kind in ("bool", bool):
            out[key] = str(value).lower() in ("1", "true", "yes", "on")
        else:
            out[key] = value
    return out


# -- data plumbing ---------------------------------------------------------------


def load_examples(task, path):
    """Load a dataset file by extension: .xml (SemEval) or .jsonl."""
    p = Path(path)
    if not p.exists():
        raise IngestionError(f"dataset file not found: {path}")
    if p.suffix == ".xml":
        return parse_semeval_ae(path) if task == "ae" else parse_semeval_asc(path)
    if p.suffix == ".jsonl":
        return read_ae_jsonl(path) if task == "ae" else read_asc_jsonl(path)
    raise IngestionError(f"unsupported dataset format {p.suffix!r} (want .xml or .jsonl)")


def encode_ae_example(example, vocab, enc_config):
    seq = encode_sequence(example.tokens, vocab, enc_config, spans=example.spans)
    return seq, list(example.tags[: seq.n_text])


def encode_asc_example(example, vocab, enc_config, single_segment=False):
    aspect_tokens = tokenize(example.aspect)[0]
    sentence_tokens = tokenize(example.text)[0]
    seq = encode_pair(sentence_tokens, aspect_tokens, vocab, enc_config, single_segment)
    return seq, example.polarity


def encode_examples(examples, vocab, enc_config, task, single_segment=False):
    if task == "ae":
        return [encode_ae_example(ex, vocab, enc_config) for ex in examples]
    return [encode_asc_example(ex, vocab, enc_config, single_segment) for ex in examples]


def _check_examples(task, examples):
    want = AeExample if task == "ae" else AscExample
    if examples and not isinstance(examples[0], want):
        raise ConfigError(
            f"task {task!r} cannot use {type(examples[0]).__name__} examples"
        )


# -- training ----------------------------------------------------------------------


@dataclass
class TrainResult:
    report: RunReport
    models: dict
    optimizers: dict
    rngs: dict
    vocab: Vocab


def _global_param_norm(params):
    return float(np.sqrt(sum(float((p.data ** 2).sum()) for p in params.values())))


def _mean_loss(model, encoded):
    return sum(model.loss(seq, target).item() for seq, target in encoded) / len(encoded)


def train(config, examples=None):
    """Train one model per seed and report losses and final metrics.

    Per seed: split off validation_n examples (0 keeps everything in train),
    loop epochs x shuffled padded batches, Adam on the summed branch losses,
    record per-example mean train/validation loss each epoch, then score the
    validation set (the train set when there is no validation split).
    """
    config.validate()
    if examples is None:
        examples = load_examples(config.task, config.data)
    if not examples:
        raise DataError("no training examples")
    _check_examples(config.task, examples)

    vocab = build_vocab([ex.text for ex in examples], config.min_freq)
    enc_config = config.encoder_config(len(vocab))
    dataset = config.dataset or (Path(config.data).stem if config.data else "inline")

    report = RunReport(task=config.task, dataset=dataset)
    models, optimizers, rngs = {}, {}, {}
    for seed in config.seeds:
        rng = np.random.default_rng(seed)
        model = AbsaModel(config.task, config.mode, enc_config, rng, config.infer_branch)
        if config.validation_n:
            train_ex, val_ex = split_validation(examples, config.validation_n, seed)
        else:
            train_ex, val_ex = list(examples), []
        enc_train = encode_examples(train_ex, vocab, enc_config, config.task, config.single_segment)
        enc_val = encode_examples(val_ex, vocab, enc_config, config.task, config.single_segment)

        optimizer = Adam(model.named_parameters(), lr=config.lr)
        train_losses, val_losses = [], []
        for epoch in range(1, config.epochs + 1):
            epoch_total = 0.0
            batches = make_batches(
                enc_train, config.batch_size, seed, epoch, enc_config.pad_id
            )
            for batch_index, batch in enumerate(batches):
                optimizer.zero_grad()
                batch_loss = total_loss(
                    [model.loss(seq, target, training=True) for seq, target in batch]
                )
                value = batch_loss.item()
                if not np.isfinite(value):
                    raise NumericError(
                        f"non-finite loss {value} at epoch {epoch}, batch {batch_index} "
                        f"(parameter norm {_global_param_norm(model.named_parameters()):.3e})"
                    )
                batch_loss.backward()
                optimizer.step()
                epoch_total += value
            train_losses.append(epoch_total / len(enc_train))
            if enc_val:
                val_losses.append(_mean_loss(model, enc_val))

        metrics, _ = evaluate(model, val_ex if val_ex else train_ex, vocab, config)
        report.runs.append(SeedRun(seed, train_losses, val_losses, metrics))
        models[seed] = model
        optimizers[seed] = optimizer
        rngs[seed] = rng
    return TrainResult(report, models, optimizers, rngs, vocab)


def evaluate(model, examples, vocab, config):
    """Deterministic metrics plus one prediction record per example.

    Tagging uses BIO-constrained decoding and exact span matching;
    classification reports accuracy and macro-F1.
    """
    if not examples:
        raise DataError("no examples to evaluate")
    _check_examples(model.task, examples)
    enc_config = model.encoder.config
    predictions = []
    if model.task == "ae":
        pred_spans, gold_spans = set(), set()
        for i, ex in enumerate(examples):
            seq, tags = encode_ae_example(ex, vocab, enc_config)
            pred_tags = model.predict(seq) if seq.n_text else []
            pred_spans.update((i, lo, hi) for lo, hi in tags_to_spans(pred_tags))
            gold_spans.update((i, lo, hi) for lo, hi in tags_to_spans(tags))
            predictions.append(
                {
                    "id": ex.sentence_id or str(i),
                    "tokens": seq.tokens,
                    "pred": [TAG_NAMES[t] for t in pred_tags],
                    "gold": [TAG_NAMES[t] for t in tags],
                }
            )
        precision, recall, f1 = ae_span_f1(pred_spans, gold_spans)
        return {"precision": precision, "recall": recall, "f1": f1}, predictions

    preds, golds = [], []
    for i, ex in enumerate(examples):
        seq, label = encode_asc_example(ex, vocab, enc_config, config.single_segment)
        pred = model.predict(seq)
        preds.append(pred)
        golds.append(label)
        predictions.append(
            {
                "id": ex.sentence_id or str(i),
                "aspect": ex.aspect,
                "pred": POLARITIES[pred],
                "gold": POLARITIES[label],
            }
        )
    accuracy, macro_f1 = asc_scores(preds, golds)
    return {"accuracy": accuracy, "macro_f1": macro_f1}, predictions


# -- layer probing ------------------------------------------------------------------


def probe_layers(model, examples, vocab, config, *, probe_epochs=30, probe_lr=0.02, probe_seed=0):
    """Fit a fresh linear head on each layer's frozen hidden states and score
    it on the given examples; returns [(layer_index, score)] for all
    num_layers+1 layers. Model parameters are never touched."""
    if not examples:
        raise DataError("no examples to probe with")
    _check_examples(model.task, examples)
    enc_config = model.encoder.config
    encoded = encode_examples(examples, vocab, enc_config, model.task, config.single_segment)

    # frozen features: hidden states detached from the tape, per layer
    features = []
    for seq, _ in encoded:
        hiddens = encoder_forward(seq, model.encoder)
        features.append([h.data.copy() for h in hiddens])

    n_layers = enc_config.num_layers + 1
    results = []
    for layer in range(n_layers):
        rng = np.random.default_rng([probe_seed, layer])
        if model.task == "ae":
            head = CrfParams(enc_config.hidden_size, rng=rng)
            params = head.named_parameters("probe")
        else:
            head = AscHead(enc_config.hidden_size, rng)
            params = head.named_parameters("probe")
        optimizer = Adam(params, lr=probe_lr)
        for _ in range(probe_epochs):
            for (seq, target), feats in zip(encoded, features):
                optimizer.zero_grad()
                x = Tensor(feats[layer])
                if model.task == "ae":
                    if seq.n_text < 1:
                        continue
                    em = crf_emissions(x[1 : 1 + seq.n_text], head)
                    loss = crf_nll(em, target, head)
                else:
                    loss = cross_entropy((x[0:1] @ head.weight + head.bias)[0], target)
                loss.backward()
                optimizer.step()

        if model.task == "ae":
            pred_spans, gold_spans = set(), set()
            for i, ((seq, target), feats) in enumerate(zip(encoded, features)):
                if seq.n_text < 1:
                    continue
                em = crf_emissions(Tensor(feats[layer][1 : 1 + seq.n_text]), head)
                tags = viterbi_decode(em, head, constrain_bio=True)
                pred_spans.update((i, lo, hi) for lo, hi in tags_to_spans(tags))
                gold_spans.update((i, lo, hi) for lo, hi in tags_to_spans(target))
            score = ae_span_f1(pred_spans, gold_spans)[2]
        else:
            preds = [
                predict_asc([(Tensor(feats[layer][0:1]) @ head.weight + head.bias)[0]])
                for (_, _), feats in zip(encoded, features)
            ]
            golds = [target for _, target in encoded]
            score = asc_scores(preds, golds)[0]
        results.append((layer, score))
    return results


# -- checkpoints --------------------------------------------------------------------


def save_checkpoint(path, model, config, *, optimizer=None, epoch=0, seed=0, rng=None):
    """Single file: one JSON header line, then the little-endian float64
    payload of every named parameter (and Adam moments) in header order,
    guarded by a length field and a SHA-256 digest."""
    params = model.named_parameters()
    chunks = []
    entries = []
    for name, p in params.items():
        entries.append({"name": name, "shape": list(p.data.shape)})
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    optimizer_state = None
    if optimizer is not None:
        optimizer_state = {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
        }
        for name in params:
            chunks.append(np.ascontiguousarray(optimizer.first_moment[name], dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(optimizer.second_moment[name], dtype="<f8").tobytes())
    payload = b"".join(chunks)
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "vocab_size": model.encoder.config.vocab_size,
        "task": model.task,
        "mode": model.mode,
        "epoch": epoch,
        "seed": seed,
        "params": entries,
        "optimizer": optimizer_state,
        "rng_state": _rng_state_to_json(rng),
        "payload_len": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def _rng_state_to_json(rng):
    if rng is None:
        return None
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=int))


@dataclass
class Checkpoint:
    model: AbsaModel
    config: RunConfig
    vocab_size: int
    epoch: int
    seed: int
    optimizer: Adam
    rng: object


def load_checkpoint(path):
    """Rebuild the model (and optimizer) exactly; any mismatch in version,
    length, or digest raises CheckpointError instead of misloading."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header: {exc}") from exc
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: incompatible checkpoint version {header.get('version')} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    if len(payload) != header["payload_len"]:
        raise CheckpointError(
            f"{path}: truncated checkpoint: {len(payload)} bytes, expected {header['payload_len']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: checkpoint payload fails its integrity check")

    config = RunConfig.from_dict(header["config"])
    enc_config = config.encoder_config(header["vocab_size"])
    model = AbsaModel(
        header["task"], header["mode"], enc_config, np.random.default_rng(0), config.infer_branch
    )
    params = model.named_parameters()
    saved_names = [e["name"] for e in header["params"]]
    if sorted(saved_names) != sorted(params):
        raise CheckpointError(f"{path}: checkpoint parameters do not match the model")

    offset = 0

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += n * 8
        return arr.astype(np.float64)

    for entry in header["params"]:
        params[entry["name"]].data = take(entry["shape"])

    optimizer = None
    if header["optimizer"] is not None:
        opt = header["optimizer"]
        optimizer = Adam(
            params,
            lr=opt["lr"],
            beta1=opt["beta1"],
            beta2=opt["beta2"],
            epsilon=opt["epsilon"],
        )
        optimizer.t = opt["t"]
        for entry in header["params"]:
            optimizer.first_moment[entry["name"]] = take(entry["shape"])
            optimizer.second_moment[entry["name"]] = take(entry["shape"])

    rng = None
    if header["rng_state"] is not None:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = header["rng_state"]
        model._rng = rng

    return Checkpoint(
        model=model,
        config=config,
        vocab_size=header["vocab_size"],
        epoch=header["epoch"],
        seed=header["seed"],
        optimizer=optimizer,
        rng=rng,
    )
