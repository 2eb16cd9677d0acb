"""Synthetic grounding corpora with planted spurious correlations.

Every sample is a padded video feature matrix plus a short token query.
The query's first token names a motif; that motif's embedding is written
onto the annotated moment, a decoy motif is written elsewhere, and a
context motif is blended over all real frames.  The task is solvable from
content alone (see oracle_locate), but bias rules plant shortcuts:

* a query-token rule inserts a trigger token into the query and, with
  probability `strength`, forces the moment into the rule's region;
* a visual-motif rule does the same but signals through the context motif
  instead of a token.

Train, val, and test-iid apply the rules; test-ood keeps the triggers but
draws moments from the unbiased base sampler (start uniform over frames,
then end uniform given start), so a model leaning on the shortcut
collapses on OOD while a content-driven model does not.

On disk a corpus is config.json + manifest.jsonl + one payload per sample
("BSSD" magic, u16 version, u8 rank, u32 dims, float32 little-endian data;
one block for the video, one for the query tokens).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import Moment

SPLITS = ("train", "val", "test-iid", "test-ood")
_SPLIT_CODE = {s: i for i, s in enumerate(SPLITS)}

MAGIC = b"BSSD"
FORMAT_VERSION = 1

QUERY_TOKEN = "query-token"
VISUAL_MOTIF = "visual-motif"


class ConfigError(ValueError):
    """Invalid corpus configuration."""


class CorpusFormatError(RuntimeError):
    """Corpus directory violates the on-disk contract."""


class ManifestError(CorpusFormatError):
    pass


class PayloadError(CorpusFormatError):
    pass


@dataclass(frozen=True)
class Region:
    """Box in normalized (start, duration) space, bounds inclusive."""
    start_lo: float
    start_hi: float
    dur_lo: float
    dur_hi: float

    def contains(self, start_n, dur_n):
        return (self.start_lo <= start_n <= self.start_hi
                and self.dur_lo <= dur_n <= self.dur_hi)


@dataclass(frozen=True)
class BiasRule:
    """Trigger -> preferred moment region, applied with prob `strength`."""
    name: str
    trigger_kind: str  # QUERY_TOKEN or VISUAL_MOTIF
    trigger_id: int
    region: Region
    strength: float
    rate: float  # fraction of samples assigned to this rule


@dataclass(frozen=True)
class CorpusConfig:
    n: int = 32                 # padded clip length
    d_v: int = 32               # video feature dim
    m: int = 8                  # query length in tokens
    vocab: int = 50
    motifs: int = 16            # motif tokens occupy ids [0, motifs)
    context_motifs: int = 6
    n_true_min: int = 0         # 0 means fixed-length clips (n_true = n)
    train_samples: int = 2000
    val_samples: int = 400
    test_iid_samples: int = 400
    test_ood_samples: int = 400
    rules: tuple = ()
    motif_amplitude: float = 1.0
    context_amplitude: float = 0.6
    background_std: float = 0.15
    decoy: bool = True
    distractor_rate: float = 0.05
    seed: int = 0

    def split_sizes(self):
        return {"train": self.train_samples, "val": self.val_samples,
                "test-iid": self.test_iid_samples,
                "test-ood": self.test_ood_samples}

    @property
    def min_clip_len(self):
        return self.n if self.n_true_min == 0 else self.n_true_min

    def validate(self):
        if min(self.n, self.d_v, self.m, self.vocab) < 1:
            raise ConfigError("n, d_v, m, vocab must be positive")
        for fname in ("train_samples", "val_samples", "test_iid_samples",
                      "test_ood_samples"):
            if getattr(self, fname) < 1:
                raise ConfigError(f"{fname} must be positive")
        if not (2 <= self.motifs < self.vocab):
            raise ConfigError("need 2 <= motifs < vocab")
        if self.context_motifs < 1:
            raise ConfigError("context_motifs must be positive")
        if not (0 < self.min_clip_len <= self.n):
            raise ConfigError(f"n_true_min must lie in [1, n={self.n}]")
        if not (0.0 <= self.distractor_rate <= 1.0):
            raise ConfigError("distractor_rate must lie in [0, 1]")
        slots = 1 + (1 if self.decoy else 0) + (
            1 if any(r.trigger_kind == QUERY_TOKEN for r in self.rules) else 0)
        if self.m < slots:
            raise ConfigError(
                f"query length m={self.m} too short for {slots} "
                "structural tokens (target, decoy, trigger)")
        names = [r.name for r in self.rules]
        if len(set(names)) != len(names):
            raise ConfigError("rule names must be unique")
        if sum(r.rate for r in self.rules) > 1.0 + 1e-9:
            raise ConfigError("rule rates must sum to at most 1")
        for rule in self.rules:
            if rule.trigger_kind not in (QUERY_TOKEN, VISUAL_MOTIF):
                raise ConfigError(f"unknown trigger kind {rule.trigger_kind!r}")
            if not (0.0 <= rule.strength <= 1.0):
                raise ConfigError(f"rule {rule.name}: strength outside [0, 1]")
            if rule.rate <= 0.0:
                raise ConfigError(f"rule {rule.name}: rate must be positive")
            r = rule.region
            bounds = (r.start_lo, r.start_hi, r.dur_lo, r.dur_hi)
            if not all(0.0 <= b <= 1.0 for b in bounds):
                raise ConfigError(f"rule {rule.name}: region outside [0, 1]")
            if r.start_lo > r.start_hi or r.dur_lo > r.dur_hi:
                raise ConfigError(f"rule {rule.name}: empty region box")
            if rule.trigger_kind == QUERY_TOKEN:
                if not (self.motifs <= rule.trigger_id < self.vocab):
                    raise ConfigError(
                        f"rule {rule.name}: query trigger token must lie in "
                        f"[{self.motifs}, {self.vocab})")
            else:
                if not (0 <= rule.trigger_id < self.context_motifs):
                    raise ConfigError(
                        f"rule {rule.name}: visual trigger must name a "
                        f"context motif in [0, {self.context_motifs})")
            for n_true in range(self.min_clip_len, self.n + 1):
                if len(moments_in_region(r, n_true)) == 0:
                    raise ConfigError(
                        f"rule {rule.name}: region admits no moment at "
                        f"clip length {n_true}")
        kinds = [(r.trigger_kind, r.trigger_id) for r in self.rules]
        if len(set(kinds)) != len(kinds):
            raise ConfigError("trigger ids must be unique within a kind")


@dataclass
class Sample:
    sample_id: str
    split: str
    video: np.ndarray       # [n, d_v] float32, rows >= n_true are zero
    query: np.ndarray       # [m] int64
    n_true: int
    moment: Moment
    bias_tag: str | None = None


@dataclass
class Corpus:
    config: CorpusConfig
    samples: dict = field(default_factory=dict)  # split -> list[Sample]

    def split(self, name):
        return self.samples[name]


# -- generation --------------------------------------------------------------


def moments_in_region(region, n_true):
    """All inclusive spans whose normalized (start, duration) fall in region."""
    out = []
    for s in range(n_true):
        for e in range(s, n_true):
            if region.contains(s / n_true, (e - s + 1) / n_true):
                out.append(Moment(s, e))
    return out


def feature_banks(config):
    """Unit-norm motif and context embeddings, derived from config.seed."""
    rng = np.random.default_rng([config.seed, 101])
    motif = rng.standard_normal((config.motifs, config.d_v))
    motif /= np.linalg.norm(motif, axis=1, keepdims=True)
    ctx = rng.standard_normal((config.context_motifs, config.d_v))
    ctx /= np.linalg.norm(ctx, axis=1, keepdims=True)
    return motif.astype(np.float32), ctx.astype(np.float32)


def _base_moment(n_true, rng):
    start = int(rng.integers(n_true))
    end = int(rng.integers(start, n_true))
    return Moment(start, end)


def _decoy_span(moment, n_true, rng):
    """A span disjoint from the moment, or None if nothing fits."""
    max_len = max(1, n_true // 4)
    gaps = [(0, moment.start - 1), (moment.end + 1, n_true - 1)]
    options = []
    for lo, hi in gaps:
        for s in range(lo, hi + 1):
            for e in range(s, min(hi, s + max_len - 1) + 1):
                options.append((s, e))
    if not options:
        return None
    return options[int(rng.integers(len(options)))]


def _make_sample(config, banks, split, index, region_cache):
    cfg = config
    rng = np.random.default_rng([cfg.seed, _SPLIT_CODE[split], index])
    motif_bank, ctx_bank = banks

    n_true = cfg.n if cfg.n_true_min == 0 else int(
        rng.integers(cfg.n_true_min, cfg.n + 1))

    # rule assignment by rate, then a strength roll decides obedience
    rule = None
    u = float(rng.random())
    acc = 0.0
    for r in cfg.rules:
        acc += r.rate
        if u < acc:
            rule = r
            break

    target = int(rng.integers(cfg.motifs))
    decoy_motif = int(rng.integers(cfg.motifs - 1))
    if decoy_motif >= target:
        decoy_motif += 1

    obeys = (rule is not None and split != "test-ood"
             and float(rng.random()) < rule.strength)
    if obeys:
        key = (rule.name, n_true)
        if key not in region_cache:
            region_cache[key] = moments_in_region(rule.region, n_true)
        candidates = region_cache[key]
        moment = candidates[int(rng.integers(len(candidates)))]
    else:
        moment = _base_moment(n_true, rng)

    # distractor: plant a trigger with no bias attached
    distractor = None
    if rule is None and cfg.rules and float(rng.random()) < cfg.distractor_rate:
        distractor = cfg.rules[int(rng.integers(len(cfg.rules)))]
    carried = rule if rule is not None else distractor

    if carried is not None and carried.trigger_kind == VISUAL_MOTIF:
        ctx_id = carried.trigger_id
    else:
        visual_triggers = {r.trigger_id for r in cfg.rules
                           if r.trigger_kind == VISUAL_MOTIF}
        pool = [c for c in range(cfg.context_motifs)
                if c not in visual_triggers]
        if not pool:
            pool = list(range(cfg.context_motifs))
        ctx_id = pool[int(rng.integers(len(pool)))]

    video = np.zeros((cfg.n, cfg.d_v), dtype=np.float32)
    video[:n_true] = rng.normal(0.0, cfg.background_std,
                                (n_true, cfg.d_v)).astype(np.float32)
    video[moment.start:moment.end + 1] += cfg.motif_amplitude * \
        motif_bank[target]
    if cfg.decoy:
        span = _decoy_span(moment, n_true, rng)
        if span is not None:
            video[span[0]:span[1] + 1] += cfg.motif_amplitude * \
                motif_bank[decoy_motif]
    video[:n_true] += cfg.context_amplitude * ctx_bank[ctx_id]

    filler_pool = [t for t in range(cfg.motifs, cfg.vocab)
                   if t not in {r.trigger_id for r in cfg.rules
                                if r.trigger_kind == QUERY_TOKEN}]
    items = []
    if cfg.decoy and cfg.m >= 2:
        items.append(decoy_motif)
    if (carried is not None and carried.trigger_kind == QUERY_TOKEN):
        items.append(carried.trigger_id)
    while len(items) < cfg.m - 1:
        items.append(filler_pool[int(rng.integers(len(filler_pool)))])
    query = np.empty(cfg.m, dtype=np.int64)
    query[0] = target
    order = rng.permutation(cfg.m - 1)
    for slot, item_idx in enumerate(order):
        query[1 + slot] = items[item_idx]

    return Sample(
        sample_id=f"{split}-{index:05d}",
        split=split,
        video=video,
        query=query,
        n_true=n_true,
        moment=moment,
        bias_tag=carried.name if carried is not None else None,
    )


def generate_corpus(config):
    config.validate()
    banks = feature_banks(config)
    cache = {}
    samples = {}
    for split, count in config.split_sizes().items():
        samples[split] = [_make_sample(config, banks, split, i, cache)
                          for i in range(count)]
    return Corpus(config=config, samples=samples)


# -- solvability oracle ------------------------------------------------------


def oracle_locate(sample, motif_bank):
    """Locate the moment from content alone: match the target motif.

    Scores each real frame against the embedding named by the query's
    first token, thresholds at the midpoint, and returns the contiguous
    run around the best frame.  Used to certify that corpora are solvable
    without the planted shortcuts.
    """
    scores = sample.video[:sample.n_true] @ motif_bank[int(sample.query[0])]
    thresh = 0.5 * (scores.max() + scores.min())
    hot = scores >= thresh
    peak = int(np.argmax(scores))
    start = peak
    while start > 0 and hot[start - 1]:
        start -= 1
    end = peak
    while end < sample.n_true - 1 and hot[end + 1]:
        end += 1
    return Moment(start, end)


# -- on-disk format ----------------------------------------------------------


def _write_block(fh, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    fh.write(struct.pack("<4sHB", MAGIC, FORMAT_VERSION, arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.tobytes())


def _read_block(fh, path):
    head = fh.read(7)
    if len(head) < 7:
        raise PayloadError(f"corrupt payload {path}: truncated header")
    magic, version, rank = struct.unpack("<4sHB", head)
    if magic != MAGIC:
        raise PayloadError(f"corrupt payload {path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise PayloadError(
            f"unsupported payload version {version} in {path} "
            f"(expected {FORMAT_VERSION})")
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims)) if dims else 1
    raw = fh.read(4 * count)
    if len(raw) < 4 * count:
        raise PayloadError(f"corrupt payload {path}: truncated data")
    return np.frombuffer(raw, dtype="<f4").reshape(dims)


def _config_to_dict(config):
    out = dataclasses.asdict(config)
    out["rules"] = [dataclasses.asdict(r) for r in config.rules]
    return out


def config_from_dict(data):
    rules = tuple(
        BiasRule(name=r["name"], trigger_kind=r["trigger_kind"],
                 trigger_id=r["trigger_id"], region=Region(**r["region"]),
                 strength=r["strength"], rate=r["rate"])
        for r in data.get("rules", ()))
    fields = {f.name for f in dataclasses.fields(CorpusConfig)}
    kwargs = {k: v for k, v in data.items() if k in fields and k != "rules"}
    return CorpusConfig(rules=rules, **kwargs)


def write_corpus(corpus, root):
    """Write config.json, manifest.jsonl and payloads/ under root."""
    root.mkdir(parents=True, exist_ok=True)
    payload_dir = root / "payloads"
    payload_dir.mkdir(exist_ok=True)
    with open(root / "config.json", "w") as fh:
        json.dump(_config_to_dict(corpus.config), fh, sort_keys=True,
                  indent=1)
        fh.write("\n")
    records = []
    for split in SPLITS:
        for sample in corpus.samples[split]:
            rel = f"payloads/{sample.sample_id}.bin"
            with open(root / rel, "wb") as fh:
                _write_block(fh, sample.video)
                _write_block(fh, sample.query.astype("<f4"))
            records.append({
                "id": sample.sample_id,
                "split": sample.split,
                "moment": [sample.moment.start, sample.moment.end],
                "n_true": sample.n_true,
                "bias_tag": sample.bias_tag,
                "payload": rel,
            })
    with open(root / "manifest.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True,
                                separators=(",", ":")) + "\n")
    return root / "manifest.jsonl"


def read_corpus(root):
    """Reconstruct a Corpus; raises CorpusFormatError on any violation."""
    config_path = root / "config.json"
    manifest_path = root / "manifest.jsonl"
    if not config_path.exists() or not manifest_path.exists():
        raise ManifestError(f"{root} is not a corpus directory")
    with open(config_path) as fh:
        config = config_from_dict(json.load(fh))
    with open(manifest_path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]

    ids = [r["id"] for r in records]
    if len(set(ids)) != len(ids):
        raise ManifestError("manifest inconsistent: duplicate sample ids")
    counts = {s: 0 for s in SPLITS}
    for rec in records:
        if rec["split"] not in counts:
            raise ManifestError(
                f"manifest inconsistent: unknown split {rec['split']!r}")
        counts[rec["split"]] += 1
    if counts != config.split_sizes():
        raise ManifestError(
            f"manifest inconsistent: sample counts {counts} do not match "
            f"config {config.split_sizes()}")

    samples = {s: [] for s in SPLITS}
    for rec in records:
        payload = root / rec["payload"]
        if not payload.exists():
            raise PayloadError(f"missing payload {rec['payload']} "
                               f"for sample {rec['id']}")
        with open(payload, "rb") as fh:
            video = _read_block(fh, payload)
            query = _read_block(fh, payload)
        if video.shape != (config.n, config.d_v):
            raise PayloadError(
                f"payload shape mismatch for {rec['id']}: video "
                f"{video.shape} vs config ({config.n}, {config.d_v})")
        if query.shape != (config.m,):
            raise PayloadError(
                f"payload shape mismatch for {rec['id']}: query "
                f"{query.shape} vs config ({config.m},)")
        n_true = int(rec["n_true"])
        moment = Moment(int(rec["moment"][0]), int(rec["moment"][1]))
        if not (0 < n_true <= config.n) or moment.end >= n_true:
            raise ManifestError(
                f"manifest inconsistent: sample {rec['id']} moment "
                f"{rec['moment']} does not fit n_true={n_true}")
        samples[rec["split"]].append(Sample(
            sample_id=rec["id"], split=rec["split"],
            video=np.array(video, dtype=np.float32),
            query=query.astype(np.int64),
            n_true=n_true, moment=moment, bias_tag=rec["bias_tag"]))
    return Corpus(config=config, samples=samples)
