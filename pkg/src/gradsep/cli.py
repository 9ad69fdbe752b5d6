"""Command-line experiment runner.

Subcommands:
  run    execute one experiment from a key=value config file, append the
         result record to a JSONL ledger
  table  render a results ledger as per-source-domain tables (or a 12-task
         average) in text and JSON
  synth  generate synthetic source/target embedding files
  check  run the built-in gradient / metric self-verification suite

Exit statuses: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import sys

import numpy as np

from . import core, data, encoders, experiment, metrics, training

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def parse_kv_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise experiment.ConfigError(
                    f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


_BOOL = {"true": True, "1": True, "yes": True,
         "false": False, "0": False, "no": False}


def _get(values, key, cast, default):
    if key not in values:
        return default
    raw = values[key]
    if cast is bool:
        if raw.lower() not in _BOOL:
            raise experiment.ConfigError(f"bad boolean for {key}: {raw!r}")
        return _BOOL[raw.lower()]
    try:
        return cast(raw)
    except ValueError as exc:
        raise experiment.ConfigError(f"bad value for {key}: {raw!r}") from exc


def synth_config_from(values, prefix="synth."):
    defaults = data.SynthConfig()
    kwargs = {}
    for name in ("num_known_classes", "num_unknown_classes",
                 "samples_per_class", "feature_dim", "seed"):
        kwargs[name] = _get(values, prefix + name, int,
                            getattr(defaults, name))
    for name in ("cluster_spread", "covariate_shift_angle"):
        kwargs[name] = _get(values, prefix + name, float,
                            getattr(defaults, name))
    return data.SynthConfig(**kwargs)


def experiment_config_from(values):
    hp_defaults = training.Hyperparams()
    seed = _get(values, "seed", int, 0)
    hp = training.Hyperparams(
        alpha=_get(values, "alpha", float, hp_defaults.alpha),
        beta=_get(values, "beta", float, hp_defaults.beta),
        lr=_get(values, "lr", float, hp_defaults.lr),
        warmup_lr=_get(values, "warmup_lr", float, hp_defaults.warmup_lr),
        epochs=_get(values, "epochs", int, hp_defaults.epochs),
        batch_size=_get(values, "batch_size", int, hp_defaults.batch_size),
        temperature=_get(values, "temperature", float,
                         hp_defaults.temperature),
        seed=seed,
        gamma=_get(values, "gamma", float, hp_defaults.gamma),
    )
    use_synth = _get(values, "synth", bool, False) or any(
        k.startswith("synth.") for k in values)
    synth = synth_config_from(values) if use_synth else None
    if synth is not None:
        synth = data.SynthConfig(**(vars(synth) | {"seed": _get(
            values, "synth.seed", int, seed)}))
    return experiment.ExperimentConfig(
        method=_get(values, "method", str, "proposed"),
        task=_get(values, "task", str, "synthetic"),
        source_path=values.get("source"),
        target_path=values.get("target"),
        synth=synth,
        text_path=values.get("text_embeddings"),
        hyperparams=hp,
        use_ce_term=_get(values, "use_ce_term", bool, True),
        use_kl_term=_get(values, "use_kl_term", bool, True),
        encoder=_get(values, "encoder", str, "linear"),
        prompt_tokens=_get(values, "prompt_tokens", int, 4),
        token_dim=_get(values, "token_dim", int, 16),
        retention=_get(values, "retention", float, 0.9),
        coupling=_get(values, "coupling", float, 4.0),
        seed=seed,
    )


def cmd_run(args):
    values = parse_kv_file(args.config)
    for override in args.set or []:
        key, _, value = override.partition("=")
        values[key.strip()] = value.strip()
    config = experiment_config_from(values)
    result = experiment.run_experiment(config)
    line = result.to_json()
    with open(args.ledger, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
    print(line)
    return EXIT_OK


def cmd_table(args):
    results = []
    with open(args.ledger, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                results.append(experiment.ExperimentResult.from_json(line))
    if not results:
        raise experiment.DataError(f"{args.ledger}: empty ledger")
    text, machine = experiment.format_tables(results, average=args.average)
    print(text)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(machine, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_synth(args):
    values = parse_kv_file(args.config) if args.config else {}
    for override in args.set or []:
        key, _, value = override.partition("=")
        values[key.strip()] = value.strip()
    cfg = synth_config_from(values)
    source, target = data.synth_generate(cfg)
    data.write_embeddings(args.out_source, source, cfg.feature_dim)
    data.write_embeddings(args.out_target, target, cfg.feature_dim)
    if args.manifest:
        total = cfg.num_known_classes + cfg.num_unknown_classes
        names = [f"synth{c:03d}" for c in range(total)]
        data.write_manifest(args.manifest, names, cfg.num_known_classes,
                            cfg.feature_dim)
    print(f"wrote {len(source)} source and {len(target)} target records")
    return EXIT_OK


def _check(name, ok, failures):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    if not ok:
        failures.append(name)


def cmd_check(args):
    """Self-verification: gradient vs finite differences, closed-form
    identities, and metric oracles on random inputs."""
    rng = np.random.default_rng(0)
    failures = []

    # prompt gradient vs central finite differences, both encoders
    for enc_name in ("linear", "attention"):
        worst = 0.0
        for trial in range(20):
            k = int(rng.integers(2, 7))
            fd = int(rng.integers(4, 13))
            ctx = encoders.new_class_context(k, token_dim=4, seed=trial)
            if enc_name == "linear":
                enc = encoders.LinearEncoder.seeded(ctx, fd)
            else:
                enc = encoders.TinyAttentionEncoder(ctx, fd)
            w = encoders.init_prompt(enc.n, seed=trial, scale=0.5)
            z = rng.standard_normal(fd)
            z /= np.linalg.norm(z)
            t = 0.5
            v = enc.encode(w)
            p = core.temp_softmax(v @ z, t)
            g = core.prompt_gradient(z, p, lambda c: enc.vjp(w, c), t)

            def loss_at(wx):
                px = core.temp_softmax(enc.encode(wx) @ z, t)
                return core.kl_uniform(px)
            g_fd = np.array([
                (loss_at(w + 1e-5 * e) - loss_at(w - 1e-5 * e)) / 2e-5
                for e in np.eye(enc.n)])
            worst = max(worst, np.linalg.norm(g - g_fd)
                        / max(np.linalg.norm(g_fd), 1e-30))
        _check(f"prompt gradient vs finite differences ({enc_name}), "
               f"rel err {worst:.2e}", worst < 1e-6, failures)

    # KL/energy and entropy identities
    worst_e = worst_h = 0.0
    for _ in range(200):
        g = rng.standard_normal(int(rng.integers(2, 12))) * 3
        p = core.temp_softmax(g, 1.0)
        lse = np.log(np.exp(g - g.max()).sum()) + g.max()
        worst_e = max(worst_e, abs(core.kl_uniform(p)
                                   - (lse - g.mean() - np.log(g.size))))
        kl_pu = float((p * np.log(np.maximum(p, 1e-12) * p.size)).sum())
        worst_h = max(worst_h, abs(kl_pu - (np.log(p.size)
                                            - core.entropy_score(p))))
    _check(f"KL/energy identity, err {worst_e:.2e}", worst_e < 1e-10, failures)
    _check(f"entropy degeneration identity, err {worst_h:.2e}",
           worst_h < 1e-12, failures)

    # AUROC vs brute force
    ok = True
    for _ in range(50):
        a = rng.standard_normal(int(rng.integers(1, 40)))
        b = rng.standard_normal(int(rng.integers(1, 40)))
        brute = sum(1.0 if x > y else 0.5 if x == y else 0.0
                    for x in a for y in b) / (a.size * b.size)
        ok = ok and metrics.auroc(a, b) == brute
    _check("AUROC equals brute-force pairwise count", ok, failures)

    if failures:
        print(f"{len(failures)} check(s) failed", file=sys.stderr)
        return EXIT_NUMERICAL
    print("all checks passed")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gradsep",
        description="Gradient-aware open-set separation experiments on "
                    "precomputed embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", required=True,
                       help="key=value experiment config file")
    p_run.add_argument("--ledger", default="results.jsonl",
                       help="results ledger to append to")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
    p_run.set_defaults(fn=cmd_run)

    p_table = sub.add_parser("table", help="render a results ledger")
    p_table.add_argument("--ledger", required=True)
    p_table.add_argument("--average", action="store_true",
                         help="average metrics over all tasks per method")
    p_table.add_argument("--json", help="also write machine-readable JSON")
    p_table.set_defaults(fn=cmd_table)

    p_synth = sub.add_parser("synth", help="generate synthetic embeddings")
    p_synth.add_argument("--config", help="key=value synth config file")
    p_synth.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_synth.add_argument("--out-source", required=True)
    p_synth.add_argument("--out-target", required=True)
    p_synth.add_argument("--manifest")
    p_synth.set_defaults(fn=cmd_synth)

    p_check = sub.add_parser("check", help="run self-verification suite")
    p_check.set_defaults(fn=cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except experiment.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (experiment.DataError, OSError, data.EmbeddingFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except training.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
