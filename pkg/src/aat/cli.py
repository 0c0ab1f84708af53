"""Command-line front end.

Subcommands: train, eval, detect, dilemma, invert, grad-viz, make-data,
fetch-mnist. Run configurations are JSON documents with sections
{model, train, attack_train, attack_test, eval, paths}; unknown keys are
rejected and every numeric field is range-checked before any compute.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
5 I/O error.
"""

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, digits, dilemma, evaluation
from .attack import AttackConfig
from .data import load_checkpoint, load_mnist_idx, save_checkpoint, subset
from .errors import (ConfigError, FormatError, NumericError, UsageError,
                     ValidationError)
from .model import BackboneSpec, ThreeWayModel
from .tensor import Tensor
from .training import LossConfig, TrainConfig, train

_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

_MNIST_URLS = {
    name: f"https://ossci-datasets.s3.amazonaws.com/mnist/{fname}.gz"
    for name, fname in _MNIST_FILES.items()
}


# ---------------------------------------------------------------------------
# presets


def _mnist_config(loss, epochs, lr=0.02, train_subset=10_000, eval_subset=2_000,
                  milestones=None, warmup_epochs=0, train_alpha=0.06):
    return {
        "model": {"kind": "small-cnn", "input_shape": [1, 28, 28],
                  "latent_dim": 128, "num_classes": 10,
                  "conv_channels": [16, 32], "hidden_width": 32},
        "train": {"lr": lr, "momentum": 0.9, "weight_decay": 5e-4,
                  "epochs": epochs, "milestones": milestones or [],
                  "warmup_epochs": warmup_epochs,
                  "batch_size": 128, "seed": 0, "loss": loss,
                  "batch_denominator": False},
        "attack_train": {"norm": "l2", "epsilon": 0.3, "alpha": train_alpha,
                         "steps": 5, "random_start": False},
        "attack_test": [{"norm": "l2", "epsilon": 0.3, "alpha": 0.01,
                         "steps": 10, "random_start": False}],
        "eval": {"subset": eval_subset, "detection": True, "seed": 0},
        "paths": {"data_dir": None, "train_subset": train_subset},
    }


PRESETS = {
    "mnist-st-desk": _mnist_config(["st"], epochs=10, milestones=[8]),
    "mnist-aat-desk": _mnist_config(["st", "as"], epochs=10, milestones=[8],
                                    warmup_epochs=4),
    "mnist-aat++-desk": _mnist_config(["st", "as", "ar", "an"], epochs=10,
                                      milestones=[8], warmup_epochs=4),
    "mnist-full": _mnist_config(["st", "as", "ar", "an"], epochs=56,
                                lr=0.1, train_alpha=0.01,
                                train_subset=None, eval_subset=None,
                                milestones=[50, 55], warmup_epochs=2),
    "dilemma-default": {
        "dilemma": {"p": 0.8, "d": 7,
                    "eta": [0.01, 0.01, 0.01, 0.01, 1.0, 1.0, 1.0],
                    "epsilon": 0.02, "n": 100_000, "seed": 0},
    },
}


# ---------------------------------------------------------------------------
# config loading / validation


def _check_keys(doc: dict, allowed, where: str) -> None:
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")


def _check_number(doc, key, where, lo=None, hi=None, integer=False):
    if key not in doc:
        return
    v = doc[key]
    if v is None:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {v!r}")
    if integer and not isinstance(v, int):
        raise ConfigError(f"{where}.{key} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{where}.{key}={v} below minimum {lo}")
    if hi is not None and v > hi:
        raise ConfigError(f"{where}.{key}={v} above maximum {hi}")


def validate_config(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("run configuration must be a JSON object")
    _check_keys(doc, {"model", "train", "attack_train", "attack_test", "eval",
                      "paths", "dilemma"}, "config")
    if "model" in doc:
        m = doc["model"]
        _check_keys(m, {"kind", "input_shape", "latent_dim", "num_classes",
                        "conv_channels", "hidden_width"}, "model")
        _check_number(m, "latent_dim", "model", lo=1, integer=True)
        _check_number(m, "num_classes", "model", lo=2, integer=True)
    if "train" in doc:
        t = doc["train"]
        _check_keys(t, {"lr", "momentum", "weight_decay", "epochs", "milestones",
                        "warmup_epochs", "batch_size", "seed", "loss",
                        "batch_denominator"}, "train")
        _check_number(t, "lr", "train", lo=0.0)
        _check_number(t, "momentum", "train", lo=0.0, hi=1.0)
        _check_number(t, "weight_decay", "train", lo=0.0)
        _check_number(t, "epochs", "train", lo=0, integer=True)
        _check_number(t, "warmup_epochs", "train", lo=0, integer=True)
        _check_number(t, "batch_size", "train", lo=1, integer=True)
    for section in ["attack_train"] + (["attack_test"] if "attack_test" in doc else []):
        entries = doc.get(section)
        if entries is None:
            continue
        if section == "attack_train":
            entries = [entries]
        for a in entries:
            _check_keys(a, {"norm", "epsilon", "alpha", "steps", "random_start",
                            "seed", "clamp"}, section)
            _check_number(a, "epsilon", section, lo=0.0)
            _check_number(a, "alpha", section, lo=0.0)
            _check_number(a, "steps", section, lo=0, integer=True)
    if "eval" in doc:
        _check_keys(doc["eval"], {"subset", "detection", "seed"}, "eval")
        _check_number(doc["eval"], "subset", "eval", lo=1, integer=True)
    if "paths" in doc:
        _check_keys(doc["paths"], {"data_dir", "train_subset"}, "paths")
        _check_number(doc["paths"], "train_subset", "paths", lo=1, integer=True)
    if "dilemma" in doc:
        _check_keys(doc["dilemma"], {"p", "d", "eta", "epsilon", "n", "seed"},
                    "dilemma")
    return doc


def load_config(args) -> dict:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed JSON in {args.config}: {e}")
    elif args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {args.preset!r}; available: {sorted(PRESETS)}")
        doc = copy.deepcopy(PRESETS[args.preset])
    else:
        raise ConfigError("one of --config or --preset is required")
    doc = validate_config(doc)
    # command-line overrides
    if getattr(args, "seed", None) is not None:
        doc.setdefault("train", {})["seed"] = args.seed
        doc.setdefault("eval", {})["seed"] = args.seed
    if getattr(args, "loss", None):
        doc.setdefault("train", {})["loss"] = args.loss.split(",")
    if getattr(args, "subset", None) is not None:
        doc.setdefault("paths", {})["train_subset"] = args.subset
        doc.setdefault("eval", {})["subset"] = args.subset
    for flag, key in (("attack_norm", "norm"), ("eps", "epsilon"),
                      ("alpha", "alpha"), ("steps", "steps")):
        value = getattr(args, flag, None)
        if value is not None:
            for a in doc.get("attack_test", [{}]):
                a[key] = value
            if "attack_train" in doc:
                doc["attack_train"][key] = value
    return validate_config(doc)


def _backbone(doc: dict) -> BackboneSpec:
    m = doc.get("model", {})
    try:
        return BackboneSpec(
            kind=m.get("kind", "small-cnn"),
            input_shape=tuple(m.get("input_shape", (1, 28, 28))),
            latent_dim=m.get("latent_dim", 128),
            num_classes=m.get("num_classes", 10),
            conv_channels=tuple(m.get("conv_channels", (16, 32))),
            hidden_width=m.get("hidden_width", 32),
        )
    except UsageError as e:
        raise ConfigError(str(e))


def _attack_cfg(doc: dict) -> AttackConfig:
    try:
        return AttackConfig(**{k: (tuple(v) if k == "clamp" and v else v)
                               for k, v in doc.items()})
    except ValidationError as e:
        raise ConfigError(str(e))


def _train_cfg(doc: dict) -> TrainConfig:
    t = dict(doc.get("train", {}))
    loss_names = t.pop("loss", ["st"])
    batch_denominator = t.pop("batch_denominator", False)
    try:
        loss = LossConfig.from_names(loss_names)
        loss.batch_denominator = batch_denominator
        return TrainConfig(attack_train=_attack_cfg(doc.get("attack_train", {})),
                           loss=loss, **t)
    except ValidationError as e:
        raise ConfigError(str(e))


def _data_dir(doc: dict, required: bool = True):
    d = doc.get("paths", {}).get("data_dir") or os.environ.get("AAT_DATA_DIR")
    if d is None and required:
        raise FormatError(
            "no dataset directory: set paths.data_dir or AAT_DATA_DIR "
            "(generate files with `aat make-data`)")
    return d


def _load_split(doc: dict, split: str):
    d = _data_dir(doc)
    images = Path(d) / _MNIST_FILES[f"{split}_images"]
    labels = Path(d) / _MNIST_FILES[f"{split}_labels"]
    for p in (images, labels):
        if not p.exists():
            raise FormatError(f"dataset file missing: {p} "
                              "(generate files with `aat make-data`)")
    return load_mnist_idx(str(images), str(labels), split=split)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    doc = load_config(args)
    cfg = _train_cfg(doc)
    spec = _backbone(doc)
    dataset = _load_split(doc, "train")
    k = doc.get("paths", {}).get("train_subset")
    if k:
        dataset = subset(dataset, k, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = ThreeWayModel.init(spec, seed=cfg.seed)
    log_path = out / "epochs.jsonl"
    with open(log_path, "w") as log_file:
        train(model, dataset, cfg, log_sink=lambda line: print(line, file=log_file))
    ckpt = out / "model.aatd"
    save_checkpoint(model, {"seed": cfg.seed, "epochs": cfg.epochs,
                            "loss": cfg.loss.enabled()}, str(ckpt))
    print(f"checkpoint: {ckpt}")
    print(f"epoch log:  {log_path}")
    return 0


def cmd_eval(args) -> int:
    doc = load_config(args)
    model, _ = load_checkpoint(args.checkpoint)
    dataset = _load_split(doc, "test")
    ev = doc.get("eval", {})
    if ev.get("subset"):
        dataset = subset(dataset, ev["subset"], seed=ev.get("seed", 0))
    cfgs = [_attack_cfg(a) for a in doc.get("attack_test", [])]
    report = evaluation.evaluate(model, dataset, cfgs,
                                 with_detection=ev.get("detection", False),
                                 seed=ev.get("seed", 0))
    print(report.to_table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        print(f"report: {out / 'report.json'}")
    return 0


def cmd_detect(args) -> int:
    doc = load_config(args)
    model, _ = load_checkpoint(args.checkpoint)
    dataset = _load_split(doc, "test")
    ev = doc.get("eval", {})
    if ev.get("subset"):
        dataset = subset(dataset, ev["subset"], seed=ev.get("seed", 0))
    cfgs = doc.get("attack_test") or [{}]
    cfg = _attack_cfg(cfgs[0])
    mixed = evaluation.build_mixed_set(model, dataset, cfg, seed=ev.get("seed", 0))
    result = evaluation.calibrate(model, mixed)
    result["rad"] = evaluation.rad(model, mixed)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_dilemma(args) -> int:
    if args.config or args.preset:
        doc = load_config(args).get("dilemma", {})
    else:
        doc = copy.deepcopy(PRESETS["dilemma-default"])["dilemma"]
    if args.n is not None:
        doc["n"] = args.n
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = dilemma.DilemmaSpec(p=doc.get("p", 0.8), d=doc.get("d", 7),
                                   eta=tuple(doc.get("eta", ())) or
                                   dilemma.DilemmaSpec().eta,
                                   epsilon=doc.get("epsilon", 0.02))
    except ValidationError as e:
        raise ConfigError(str(e))
    result = dilemma.report(spec, n=doc.get("n", 100_000), seed=doc.get("seed", 0))
    print(f"{'classifier':<12}{'exact std':>12}{'exact adv':>12}"
          f"{'mc std':>12}{'mc adv':>12}")
    for name, row in result["classifiers"].items():
        print(f"{name:<12}{row['exact_standard']:>12.6f}"
              f"{row['exact_adversarial']:>12.6f}"
              f"{row['monte_carlo_standard']:>12.6f}"
              f"{row['monte_carlo_adversarial']:>12.6f}")
    ref = result["closed_form_reference"]
    print(f"closed-form reference (differs from enumeration): "
          f"h0 {ref['h0_standard']:.4f}, h1 {ref['h1_standard']:.4f}")
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_grad_viz(args) -> int:
    doc = load_config(args)
    model, _ = load_checkpoint(args.checkpoint)
    dataset = _load_split(doc, "test")
    x = dataset.images[args.index]
    y = int(dataset.labels[args.index])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for way in ("standard", "robust", "nonrobust"):
        artifact = analysis.grad_visual(model, x, y, way)
        path = out / f"grad_{way}_{args.index}.pgm"
        analysis.write_image(artifact, str(path))
        print(f"wrote {path}")
    return 0


def cmd_invert(args) -> int:
    doc = load_config(args)
    model, _ = load_checkpoint(args.checkpoint)
    dataset = _load_split(doc, "test")
    x = dataset.images[args.index : args.index + 1]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for which in ("robust", "nonrobust"):
        target = model.encode(Tensor(x), which).data[0]
        artifact = analysis.invert_representation(
            model, target, which, steps=args.descent_steps, lr=args.lr,
            seed=args.seed or 0)
        path = out / f"invert_{which}_{args.index}.pgm"
        analysis.write_image(artifact, str(path))
        print(f"wrote {path} (distance {artifact.provenance['final_distance']:.4g})")
    return 0


def cmd_make_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, n, seed in (("train", args.train, args.seed or 0),
                           ("test", args.test, (args.seed or 0) + 1)):
        ds = digits.make_digits(n, seed=seed, split=split)
        digits.write_idx_pair(ds, str(out / _MNIST_FILES[f"{split}_images"]),
                              str(out / _MNIST_FILES[f"{split}_labels"]))
        print(f"wrote {split}: {n} samples")
    return 0


def cmd_fetch_mnist(args) -> int:
    import gzip
    import urllib.request

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, url in _MNIST_URLS.items():
        target = out / _MNIST_FILES[name]
        print(f"fetching {url}")
        with urllib.request.urlopen(url, timeout=60) as resp:
            target.write_bytes(gzip.decompress(resp.read()))
        print(f"wrote {target}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p, checkpoint=False):
    p.add_argument("--config", help="path to a JSON run configuration")
    p.add_argument("--preset", help=f"built-in preset: {', '.join(sorted(PRESETS))}")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--subset", type=int, help="override train/eval subset size")
    p.add_argument("--loss", help="comma list of loss terms: st,as,ar,an")
    p.add_argument("--attack-norm", choices=["linf", "l2"], dest="attack_norm")
    p.add_argument("--eps", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    if checkpoint:
        p.add_argument("--checkpoint", required=True, help="AATD checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aat",
        description="Asymmetric adversarial training of three-way models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model per config/preset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the full evaluation protocol")
    _add_common(p, checkpoint=True)
    p.add_argument("--out", help="directory for report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("detect", help="detection + calibration on a mixed set")
    _add_common(p, checkpoint=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("dilemma", help="exact testbed accuracies")
    _add_common(p)
    p.add_argument("--n", type=int, help="Monte-Carlo sample count")
    p.set_defaults(func=cmd_dilemma)

    p = sub.add_parser("grad-viz", help="input-gradient visualization")
    _add_common(p, checkpoint=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grad_viz)

    p = sub.add_parser("invert", help="representation inversion")
    _add_common(p, checkpoint=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--descent-steps", type=int, default=2000,
                   dest="descent_steps")
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("make-data", help="generate the rendered-digit dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=12_000)
    p.add_argument("--test", type=int, default=2_000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("fetch-mnist", help="download canonical MNIST IDX files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fetch_mnist)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, UsageError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
