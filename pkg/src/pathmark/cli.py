"""Command-line entry point: ``pathmark <subcommand> [options]``.

Exit status is 0 on success, 1 when ``ablate`` finds a failed direction,
2 on invalid input and 3 on runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, attacks, attention, codec, metrics, pipeline, synth
from .config import ABLATION_MODES, RunConfig, RunSettings, load_config
from .optimize import embed
from .tensorio import (
    FormatError,
    ValidationError,
    atomic_write_bytes,
    load_bundle,
    load_field,
    load_image,
    save_field,
    save_image,
)

EXIT_OK, EXIT_FINDING, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    """Recursively convert to strict JSON: arrays to lists, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, doc) -> None:
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"
    atomic_write_bytes(path, text.encode())


def _files_under(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    return sorted(p for p in path.rglob("*") if p.is_file() and not p.name.startswith("."))


def write_run_record(path, command: str, args: argparse.Namespace, cfg: RunConfig, inputs, outputs) -> None:
    """Inputs, parameters, versions and content hashes; deliberately no timestamps."""
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}

    def hashes(paths):
        out = {}
        for p in paths:
            for f in _files_under(Path(p)):
                if Path(f) != Path(path):
                    out[str(f)] = sha256_file(f)
        return out

    write_json(
        path,
        {
            "command": command,
            "arguments": params,
            "config": cfg.to_json(),
            "inputs": hashes(inputs),
            "outputs": hashes(outputs),
            "versions": {
                "pathmark": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
        },
    )


def _record_path(args, default: Path) -> Path:
    return Path(args.record) if args.record else default


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    run = cfg.run
    overrides = {}
    for key in ("seed", "workers", "k", "mode"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "steps", None) is not None and args.command == "train":
        overrides["train_steps"] = args.steps
    if overrides:
        run = RunSettings(**{**vars(run), **overrides})
    cfg = replace(cfg, run=run)
    if getattr(args, "attacks", None):
        cfg = replace(cfg, attacks=tuple(metrics.parse_attacks(args.attacks)))
    return cfg


def _path(args, cfg: RunConfig, name: str, must_exist: bool = True) -> Path:
    value = getattr(args, name, None) or cfg.paths.get(name)
    if not value:
        raise ValidationError(f"--{name} is required (or set [paths] {name})")
    p = Path(value)
    if must_exist and not p.exists():
        raise ValidationError(f"{name} path does not exist: {p}")
    return p


def _corpus_images(corpus: Path, limit=None):
    items = pipeline.load_corpus(corpus)
    if limit is not None:
        items = items[:limit]
    return items, [load_image(it.image) for it in items]


# -- subcommands ------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _resolve(args)
    out = _path(args, cfg, "out", must_exist=False)
    spec = synth.SynthSpec(size=(args.size, args.size))
    manifest = synth.gen_corpus(spec, args.n, cfg.run.seed, out)
    write_run_record(_record_path(args, out / "run.json"), "gen", args, cfg, [], [out])
    print(f"wrote {args.n} instances to {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    corpus, out = _path(args, cfg, "corpus"), _path(args, cfg, "out", must_exist=False)
    items, images = _corpus_images(corpus, args.limit)
    transforms = () if args.no_transforms else tuple(cfg.attacks)
    model = codec.train_extractor(
        images, k=cfg.run.k, transforms=transforms, steps=cfg.run.train_steps, seed=cfg.run.seed
    )
    codec.save_model(model, out)
    write_run_record(_record_path(args, out.with_suffix(".run.json")), "train", args, cfg, [corpus], [out])
    print(f"trained k={model.k} on {len(items)} images; saved {out}")
    return EXIT_OK


def cmd_whiten(args) -> int:
    cfg = _resolve(args)
    model_path, corpus = _path(args, cfg, "model"), _path(args, cfg, "corpus")
    out = _path(args, cfg, "out", must_exist=False)
    _, images = _corpus_images(corpus, args.limit)
    model = codec.whiten_fit(codec.load_model(model_path), images)
    codec.save_model(model, out)
    write_run_record(
        _record_path(args, out.with_suffix(".run.json")), "whiten", args, cfg, [model_path, corpus], [out]
    )
    print(f"whitened on {len(images)} images; saved {out}")
    return EXIT_OK


def _word_index(bundle, word) -> int:
    if word is None:
        return 0
    if word.isdigit():
        idx = int(word)
        if not 0 <= idx < len(bundle.words):
            raise ValidationError(f"word index {idx} out of range (bundle has {len(bundle.words)})")
        return idx
    for i, w in enumerate(bundle.words):
        if w.text == word:
            return i
    raise ValidationError(f"word {word!r} not in bundle")


def cmd_locmap(args) -> int:
    cfg = _resolve(args)
    mode = args.mode or "full"
    if mode not in attention.MODES:
        raise ValidationError(f"locmap mode must be one of {attention.MODES}")
    out = _path(args, cfg, "out", must_exist=False)
    if args.corpus:
        items = pipeline.load_corpus(args.corpus)
        summary = []
        for it in items:
            bundle = load_bundle(it.bundle)
            res = attention.localize(bundle, 0, cfg.cas, cfg.aas, mode)
            stem = out / f"{it.index:05d}"
            save_field(res.field, stem.with_suffix(".fld"))
            write_json(stem.with_suffix(".json"), res.sidecar())
            summary.append({"index": it.index, "selected": res.selected_token, "clean": it.clean_token})
        hits = sum(s["selected"] == s["clean"] for s in summary)
        write_json(out / "summary.json", {"mode": mode, "items": summary, "clean_selected": hits})
        write_run_record(_record_path(args, out / "run.json"), "locmap", args, cfg, [args.corpus], [out])
        print(f"{hits}/{len(summary)} selections match the clean token")
        return EXIT_OK
    bundle_path = _path(args, cfg, "bundle")
    bundle = load_bundle(bundle_path)
    res = attention.localize(bundle, _word_index(bundle, args.word), cfg.cas, cfg.aas, mode)
    save_field(res.field, out)
    sidecar = out.with_suffix(".json")
    write_json(sidecar, res.sidecar())
    write_run_record(
        _record_path(args, out.with_suffix(".run.json")), "locmap", args, cfg, [bundle_path.parent], [out, sidecar]
    )
    print(f"selected token {res.selected_token}, tau {res.tau:.6f}")
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = _resolve(args)
    mode = args.mode or "full"
    if mode not in ("full", "no_tv", "no_pre"):
        raise ValidationError("embed mode must be one of full, no_tv, no_pre")
    image_path, loc_path = _path(args, cfg, "image"), _path(args, cfg, "locmap")
    model_path, out = _path(args, cfg, "model"), _path(args, cfg, "out", must_exist=False)
    model = codec.load_model(model_path)
    try:
        m = codec.message_from_hex(args.message, model.k)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    i_o = load_image(image_path)
    res = embed(i_o, load_field(loc_path), m, model, cfg.embed.ablated(mode))
    save_image(res.watermarked, out)
    trace = out.with_suffix(".trace.json")
    quantized = load_image(out)
    write_json(
        trace,
        {
            "loss_trace": res.loss_trace,
            "achieved_bits": codec.message_to_hex(res.achieved_bits),
            "bit_accuracy": codec.bit_accuracy(res.achieved_bits, m),
            "bit_accuracy_saved": codec.bit_accuracy(codec.decode(model, quantized), m),
            "psnr": metrics.psnr(res.watermarked, i_o),
            "in_mask_energy": res.in_mask_energy,
            "out_mask_energy": res.out_mask_energy,
            "config": res.config,
        },
    )
    write_run_record(
        _record_path(args, out.with_suffix(".run.json")),
        "embed",
        args,
        cfg,
        [image_path, loc_path, model_path],
        [out, trace],
    )
    print(f"bits {codec.message_to_hex(res.achieved_bits)} accuracy {codec.bit_accuracy(res.achieved_bits, m):.4f}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _resolve(args)
    image_path, out = _path(args, cfg, "image"), _path(args, cfg, "out", must_exist=False)
    spec = attacks.AttackSpec.parse(args.spec)
    save_image(attacks.apply(load_image(image_path), spec), out)
    write_run_record(_record_path(args, out.with_suffix(".run.json")), "attack", args, cfg, [image_path], [out])
    print(f"applied {spec} -> {out}")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _resolve(args)
    model = codec.load_model(_path(args, cfg, "model"))
    logits = codec.decode_logits(model, load_image(_path(args, cfg, "image")))
    bits = codec.decode_bits(logits)
    print(json.dumps({"logits": [round(float(z), 6) for z in logits], "hex": codec.message_to_hex(bits),
                      "binary": codec.message_to_binary(bits)}))
    return EXIT_OK


def _report_doc(mode: str, report: metrics.EvalReport) -> dict:
    doc = report.to_json()
    doc["mode"] = mode
    doc["columns"] = list(report.bit_acc) + ["Avg"]
    doc["table"] = report.row()
    return doc


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    corpus, model_path = _path(args, cfg, "corpus"), _path(args, cfg, "model")
    out = _path(args, cfg, "out", must_exist=False)
    items = pipeline.load_corpus(corpus)[: args.limit]
    model = codec.load_model(model_path)
    _, report = pipeline.run_mode(items, model, cfg, cfg.run.mode, cfg.run.workers)
    write_json(out, _report_doc(cfg.run.mode, report))
    write_run_record(
        _record_path(args, out.with_suffix(".run.json")), "eval", args, cfg, [corpus, model_path], [out]
    )
    print(json.dumps(_jsonable(report.row()), sort_keys=False))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    corpus, model_path = _path(args, cfg, "corpus"), _path(args, cfg, "model")
    out = _path(args, cfg, "out", must_exist=False)
    items = pipeline.load_corpus(corpus)[: args.limit]
    model = codec.load_model(model_path)
    modes = args.modes.split(",") if args.modes else list(ABLATION_MODES)
    for mode in modes:
        if mode not in ABLATION_MODES:
            raise ValidationError(f"unknown mode {mode!r}; expected one of {ABLATION_MODES}")
    reports = {mode: pipeline.run_mode(items, model, cfg, mode, cfg.run.workers)[1] for mode in modes}
    findings = pipeline.directional_findings(reports)
    write_json(out, {"modes": {m: _report_doc(m, r) for m, r in reports.items()}, "findings": findings})
    write_run_record(
        _record_path(args, out.with_suffix(".run.json")), "ablate", args, cfg, [corpus, model_path], [out]
    )
    for name, f in findings.items():
        print(f"{'PASS' if f['pass'] else 'FAIL'} {name}")
    return EXIT_OK if all(f["pass"] for f in findings.values()) else EXIT_FINDING


# -- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pathmark", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pathmark {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, paths=()):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--record", help="run record path (default derived from --out)")
        for key in paths:
            p.add_argument(f"--{key}")
        return p

    p = add("gen", cmd_gen, "generate a synthetic corpus", ("out",))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int, default=128)

    p = add("train", cmd_train, "train the extractor projection", ("corpus", "out"))
    p.add_argument("--k", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--attacks", help="training transforms, e.g. brt:2,jpg:50 (default: [attacks] suite)")
    p.add_argument("--no-transforms", action="store_true", help="train on clean carriers only")

    p = add("whiten", cmd_whiten, "append a PCA whitening layer", ("model", "corpus", "out"))
    p.add_argument("--limit", type=int)

    p = add("locmap", cmd_locmap, "compute localization maps", ("bundle", "corpus", "out"))
    p.add_argument("--word", help="word text or index (default 0)")
    p.add_argument("--mode", choices=attention.MODES)

    p = add("embed", cmd_embed, "embed a message into one image", ("image", "locmap", "model", "out"))
    p.add_argument("--message", required=True, help="hex message, e.g. 12 digits for 48 bits")
    p.add_argument("--mode", choices=("full", "no_tv", "no_pre"))

    p = add("attack", cmd_attack, "apply one attack to an image", ("image", "out"))
    p.add_argument("--spec", required=True, help="name[:param], e.g. jpg:50")

    add("decode", cmd_decode, "print extractor logits and bits for an image", ("model", "image"))

    p = add("eval", cmd_eval, "embed a corpus and report robustness", ("corpus", "model", "out"))
    p.add_argument("--mode", choices=ABLATION_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--attacks", help="attack suite, e.g. none,brt:2,jpg:50")

    p = add("ablate", cmd_ablate, "paired ablation runs with direction checks", ("corpus", "model", "out"))
    p.add_argument("--modes", help=f"comma-separated subset of {','.join(ABLATION_MODES)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--attacks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FormatError, ValueError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"pathmark {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"pathmark {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
