"""Experiment assembly: configs, fingerprints, the three methods
(zeroshot / prompt_baseline / proposed), result records and table emission.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import data, encoders, metrics, training

METHODS = ("zeroshot", "prompt_baseline", "proposed")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    method: str = "proposed"
    task: str = "synthetic"
    # Exactly one of (source_path & target_path) | synth.
    source_path: str | None = None
    target_path: str | None = None
    synth: data.SynthConfig | None = None
    text_path: str | None = None  # optional fixed class embeddings
    hyperparams: training.Hyperparams = field(
        default_factory=training.Hyperparams)
    use_ce_term: bool = True
    use_kl_term: bool = True
    encoder: str = "linear"
    prompt_tokens: int = 4
    token_dim: int = 16
    retention: float = 0.9
    coupling: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        has_files = self.source_path is not None or self.target_path is not None
        if has_files == (self.synth is not None):
            raise ConfigError(
                "exactly one of source/target paths or a synth config "
                "must be given")
        if has_files and (self.source_path is None or self.target_path is None):
            raise ConfigError("both source and target paths are required")
        if self.encoder not in ("linear", "attention"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")

    def canonical(self):
        cfg = {
            "method": self.method, "task": self.task,
            "source_path": self.source_path, "target_path": self.target_path,
            "text_path": self.text_path,
            "synth": None if self.synth is None else vars(self.synth) | {},
            "hyperparams": {k: getattr(self.hyperparams, k)
                            for k in ("alpha", "beta", "lr", "warmup_lr",
                                      "epochs", "batch_size", "temperature",
                                      "seed", "gamma")},
            "use_ce_term": self.use_ce_term, "use_kl_term": self.use_kl_term,
            "encoder": self.encoder, "prompt_tokens": self.prompt_tokens,
            "token_dim": self.token_dim, "retention": self.retention,
            "coupling": self.coupling, "seed": self.seed,
        }
        return json.dumps(cfg, sort_keys=True)

    def fingerprint(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


@dataclass
class ExperimentResult:
    method: str
    task: str
    seed: int
    ccr_at_fpr10: float
    fpr95: float
    auroc: float
    fingerprint: str
    threshold: float | None = None
    epoch_logs: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({
            "method": self.method, "task": self.task, "seed": self.seed,
            "ccr_at_fpr10": self.ccr_at_fpr10, "fpr95": self.fpr95,
            "auroc": self.auroc, "fingerprint": self.fingerprint,
            "threshold": self.threshold, "epoch_logs": self.epoch_logs,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def _load_records(config):
    if config.synth is not None:
        return data.synth_generate(config.synth)
    try:
        source = data.read_embeddings(config.source_path)
        target = data.read_embeddings(config.target_path)
    except (OSError, data.EmbeddingFormatError) as exc:
        raise DataError(str(exc)) from exc
    if not source or not target:
        raise DataError("empty embedding file")
    return source, target


def _remap_labels(source, target):
    """Map source class labels onto 0..K-1; target labels outside the source
    label set become unknown (label -1 offset past K)."""
    known = sorted({r.label for r in source})
    mapping = {lab: i for i, lab in enumerate(known)}
    def remap(records, allow_unknown):
        out = []
        for r in records:
            if r.label in mapping:
                lab = mapping[r.label]
            elif allow_unknown:
                lab = len(known) + max(r.label, 0)  # stays outside 0..K-1
            else:
                raise DataError(
                    f"source record {r.id!r} has label {r.label} outside "
                    "the source class set")
            out.append(data.EmbeddingRecord(
                id=r.id, label=lab, domain=r.domain, feature=r.feature))
        return out
    return remap(source, False), remap(target, True), len(known)


def _class_anchors(config, source, num_known):
    if config.text_path is not None:
        try:
            text = data.read_embeddings(config.text_path)
        except (OSError, data.EmbeddingFormatError) as exc:
            raise DataError(str(exc)) from exc
        if len(text) < num_known:
            raise DataError(
                f"text embedding file has {len(text)} classes, "
                f"need {num_known}")
        anchors = np.stack([r.feature for r in sorted(
            text, key=lambda r: r.label)[:num_known]])
        return anchors / np.linalg.norm(anchors, axis=1, keepdims=True)
    return data.class_means(source, range(num_known))


def _build_encoder(config, anchors, num_known, feature_dim):
    n = config.prompt_tokens * config.token_dim
    if config.encoder == "linear":
        return encoders.LinearEncoder.from_anchors(
            anchors, n=n, seed=config.seed, coupling=config.coupling)
    ctx = encoders.new_class_context(
        num_known, token_dim=config.token_dim,
        num_prompt_tokens=config.prompt_tokens, seed=config.seed)
    return encoders.TinyAttentionEncoder(ctx, feature_dim)


def run_experiment(config):
    """Execute one experiment and return its result record."""
    source, target, num_known = _remap_labels(*_load_records(config))
    if all(r.label < num_known for r in target):
        raise DataError(
            "target split contains no unknown-class samples (every target "
            "label also appears in the source); open-set metrics need both")
    hp = config.hyperparams
    anchors = _class_anchors(config, source, num_known)
    known_labels = list(range(num_known))

    if config.method == "zeroshot":
        samples = training.evaluate_msp(target, anchors, known_labels,
                                        hp.temperature)
        triple = metrics.metric_triple(samples)
        threshold = None
        epoch_logs = []
    else:
        encoder = _build_encoder(config, anchors, num_known,
                                 source[0].feature.size)
        if config.method == "prompt_baseline":
            use_ce, use_kl = False, False
        else:
            use_ce, use_kl = config.use_ce_term, config.use_kl_term
        w0 = encoders.init_prompt(encoder.n, seed=config.seed)
        out = training.run_adaptation(
            source, target, encoder, hp, use_ce_term=use_ce,
            use_kl_term=use_kl, retention=config.retention, w_init=w0)
        triple = out.result
        threshold = out.threshold.value
        epoch_logs = [log.as_dict() for log in out.epoch_logs]

    return ExperimentResult(
        method=config.method, task=config.task, seed=config.seed,
        ccr_at_fpr10=triple.ccr_at_fpr10, fpr95=triple.fpr95,
        auroc=triple.auroc, fingerprint=config.fingerprint(),
        threshold=threshold, epoch_logs=epoch_logs)


METRIC_COLUMNS = (("ccr_at_fpr10", "Acc10", max),
                  ("fpr95", "FPR95", min),
                  ("auroc", "AUROC", max))


def _source_domain(task):
    for sep in ("->", "→"):
        if sep in task:
            return task.split(sep)[0]
    return task


def format_tables(results, average=False):
    """Render result records as per-source-domain text tables (best value in
    each column marked with '*') plus a machine-readable dict.

    With average=True, metrics are averaged over all tasks per method.
    """
    if not results:
        raise ValueError("no results to tabulate")
    methods = sorted({r.method for r in results},
                     key=lambda m: METHODS.index(m) if m in METHODS else 99)

    def cell_rows(tasks, rows_of):
        # rows_of(method, task) -> dict of metric values (averaged already)
        header = ["Method"]
        for task in tasks:
            for _, label, _ in METRIC_COLUMNS:
                header.append(f"{task} {label}")
        body = []
        for method in methods:
            row = [method]
            for task in tasks:
                vals = rows_of(method, task)
                for key, _, _ in METRIC_COLUMNS:
                    row.append(vals.get(key))
            body.append(row)
        # best-per-column marks
        marked = [list(map(_fmt, row[1:])) for row in body]
        for col in range(len(header) - 1):
            _, _, best_fn = METRIC_COLUMNS[col % 3]
            vals = [body[i][col + 1] for i in range(len(body))]
            present = [v for v in vals if v is not None]
            if not present:
                continue
            best = best_fn(present)
            for i, v in enumerate(vals):
                if v is not None and v == best:
                    marked[i][col] = marked[i][col] + "*"
        lines = [_pad_row(header)]
        for method, cells in zip(methods, marked):
            lines.append(_pad_row([method] + cells))
        return "\n".join(lines)

    grouped = {}
    for r in results:
        grouped.setdefault((r.method, r.task), []).append(r)

    def mean_vals(method, task):
        rs = grouped.get((method, task))
        if not rs:
            return {}
        return {key: float(np.mean([getattr(r, key) for r in rs]))
                for key, _, _ in METRIC_COLUMNS}

    machine = {"average": average, "methods": methods, "rows": []}
    if average:
        tasks = sorted({r.task for r in results})
        def avg_vals(method, _task):
            per_task = [mean_vals(method, t) for t in tasks
                        if mean_vals(method, t)]
            if not per_task:
                return {}
            return {key: float(np.mean([v[key] for v in per_task]))
                    for key, _, _ in METRIC_COLUMNS}
        text = "Average over {} tasks\n{}".format(
            len(tasks), cell_rows(["Avg"], lambda m, _t: avg_vals(m, None)))
        for method in methods:
            machine["rows"].append(
                {"method": method, "task": "Avg"} | avg_vals(method, None))
        return text, machine

    sections = []
    domains = sorted({_source_domain(r.task) for r in results})
    for domain in domains:
        tasks = sorted({r.task for r in results
                        if _source_domain(r.task) == domain})
        sections.append(f"Source domain: {domain}\n"
                        + cell_rows(tasks, mean_vals))
        for method in methods:
            for task in tasks:
                vals = mean_vals(method, task)
                if vals:
                    machine["rows"].append(
                        {"method": method, "task": task} | vals)
    return "\n\n".join(sections), machine


def _fmt(v):
    return "-" if v is None else f"{v:.2f}"


def _pad_row(cells, width=16):
    return "".join(str(c).ljust(width) for c in cells).rstrip()
