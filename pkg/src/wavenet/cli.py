"""Command-line entry point: ``wavenet {train,eval,verify,inspect,bench}``.

Settings come from an optional flat ``key = value`` file (``#`` comments)
given with ``--config``; command-line flags override file keys. Exit codes:
0 ok, 1 verification failure, 2 configuration error, 3 data error,
4 artifact mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import verify as verify_suites
from . import wave_repr
from .bench import bench_layer, write_bench_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SCHEMAS, DatasetSchema, Vocab, build_vocab, encode, encode_all, load_csv, tokenize
from .errors import ArtifactMismatchError, ConfigError, DataError, IntegrityError
from .model import ModelConfig
from .train import TrainConfig, evaluate, train_run, write_metrics

log = logging.getLogger("wavenet")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA, EXIT_ARTIFACT = 0, 1, 2, 3, 4


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _column(s: str) -> int | str:
    s = s.strip()
    return int(s) if s.lstrip("-").isdigit() else s


def _columns(s: str) -> tuple:
    return tuple(_column(c) for c in s.split(",") if c.strip())


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("", "none", "off") else int(s)


@dataclass
class RunConfig:
    """Every setting a command may read; keys mirror the flag names."""

    data: str | None = None
    out: str | None = None
    checkpoint: str | None = None
    combine_mode: str = "modulation"
    seed: int = 0
    suite: str = "all"
    text: str | None = None
    eval_every: int | None = None
    count: int | None = None
    # dataset
    dataset: str = "ag_news"
    train_file: str | None = None
    test_file: str | None = None
    label_column: int | str | None = None
    text_columns: tuple | None = None
    label_base: int | None = None
    n_classes: int | None = None
    header: bool | None = None
    subset: int | None = None
    min_freq: int = 2
    max_vocab: int = 30000
    vocab: str | None = None
    metrics: str | None = None
    # model
    d: int = 768
    n_layers: int = 1
    dropout_p: float = 0.1
    max_len: int = 128
    ffn_hidden: int = 0
    # optimization
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 4
    max_batches: int | None = None
    # bench
    n_batches: int = 5
    seq_len: int = 64
    explicit: set = field(default_factory=set, repr=False)

    def schema(self) -> DatasetSchema:
        base = SCHEMAS.get(self.dataset)
        if base is None and self.dataset != "generic":
            raise ConfigError(f"unknown dataset {self.dataset!r}; use one of {sorted(SCHEMAS)} or generic", "dataset")
        merged = base.to_dict() if base else {}
        for key in ("label_column", "text_columns", "label_base", "n_classes", "header"):
            if getattr(self, key) is not None:
                merged[key] = getattr(self, key)
        missing = [k for k in ("label_column", "text_columns", "label_base", "n_classes") if k not in merged]
        if missing:
            raise ConfigError(f"generic dataset needs {missing[0]}", missing[0])
        try:
            return DatasetSchema.from_dict(merged)
        except ValueError as exc:
            raise ConfigError(str(exc), "dataset") from None

    def model_config(self, n_classes: int, vocab_size: int = 2) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, n_classes=n_classes, d=self.d, n_layers=self.n_layers,
            combine_mode=self.combine_mode, dropout_p=self.dropout_p, max_len=self.max_len,
            ffn_hidden=self.ffn_hidden, seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, betas=(self.beta1, self.beta2), adam_eps=self.adam_eps, batch_size=self.batch_size,
            epochs=self.epochs, eval_every_batches=self.eval_every, max_batches=self.max_batches, seed=self.seed,
        )


_CONVERTERS = {
    "seed": int, "eval_every": _opt_int, "count": _opt_int, "label_column": _column, "text_columns": _columns,
    "label_base": int, "n_classes": int, "header": _bool, "subset": _opt_int, "min_freq": int,
    "max_vocab": int, "d": int, "n_layers": int, "dropout_p": float, "max_len": int, "ffn_hidden": int,
    "lr": float, "beta1": float, "beta2": float, "adam_eps": float, "batch_size": int, "epochs": int,
    "max_batches": _opt_int, "n_batches": int, "seq_len": int,
}
_KEYS = {f.name for f in fields(RunConfig)} - {"explicit"}


def _set(cfg: RunConfig, key: str, raw) -> None:
    if key not in _KEYS:
        raise ConfigError(f"unknown config key {key!r}", key)
    if isinstance(raw, str) and key in _CONVERTERS:
        try:
            raw = _CONVERTERS[key](raw)
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for {key}", key) from None
    setattr(cfg, key, raw)
    cfg.explicit.add(key)


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", "config")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "config") from None
    return dict(parser["run"])


def build_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in read_config_file(args.config).items():
            _set(cfg, key, value)
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose") or value is None:
            continue
        _set(cfg, key, value)
    return cfg


# -- commands ------------------------------------------------------------------


def _data_paths(cfg: RunConfig) -> tuple[Path, Path | None]:
    """Resolve and check the train/test CSVs before any work starts."""
    test = Path(cfg.test_file) if cfg.test_file else None
    if cfg.train_file:
        train = Path(cfg.train_file)
    elif cfg.data:
        root = Path(cfg.data)
        if root.is_dir():
            train = root / "train.csv"
            if test is None and (root / "test.csv").is_file():
                test = root / "test.csv"
        else:
            train = root
    else:
        raise ConfigError("no training data given (set data or train_file)", "data")
    if not train.is_file():
        raise DataError(f"training data not found: {train}")
    if test is not None and not test.is_file():
        raise DataError(f"test data not found: {test}")
    return train, test


def cmd_train(cfg: RunConfig) -> int:
    if not cfg.out:
        raise ConfigError("train needs an output directory (--out)", "out")
    schema = cfg.schema()
    model_cfg = cfg.model_config(schema.n_classes)
    train_cfg = cfg.train_config()
    train_path, test_path = _data_paths(cfg)
    out = Path(cfg.out)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.csv"
    write_metrics(metrics, [])
    try:
        result = train_run(
            model_cfg, train_cfg, train_path, test_path, schema,
            subset=cfg.subset, min_freq=cfg.min_freq, max_vocab=cfg.max_vocab,
            on_record=lambda r: write_metrics(metrics, [r], append=True),
        )
    except BaseException:
        # a failed run leaves nothing behind
        metrics.unlink(missing_ok=True)
        if created and not any(out.iterdir()):
            out.rmdir()
        raise
    result.vocab.save(out / "vocab.txt")
    save_checkpoint(out / "model.wvnt", result.checkpoint)
    print(f"parameters: {result.param_count}")
    print(f"vocab size: {len(result.vocab)}")
    print(f"peak memory: {result.peak_rss_mb:.0f} MB")
    if result.skipped_steps:
        print(f"skipped steps (non-finite gradients): {result.skipped_steps}")
    if result.test is not None:
        print(f"test accuracy: {result.test.accuracy:.4f} (best-val epoch {result.test.index})")
    print(f"artifacts: {out / 'model.wvnt'}, {out / 'vocab.txt'}, {metrics}")
    return EXIT_OK


def _checkpoint_and_vocab(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ConfigError("this command needs --checkpoint", "checkpoint")
    path = Path(cfg.checkpoint)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    vocab_path = Path(cfg.vocab) if cfg.vocab else path.parent / ckpt.vocab.get("file", "vocab.txt")
    if not vocab_path.is_file():
        raise DataError(f"vocabulary not found: {vocab_path}")
    vocab = Vocab.load(vocab_path)
    if len(vocab) != ckpt.config.vocab_size or vocab.fingerprint() != ckpt.vocab.get("sha256", vocab.fingerprint()):
        raise ArtifactMismatchError(f"{vocab_path} is not the vocabulary {path} was trained with")
    return ckpt, vocab


def cmd_eval(cfg: RunConfig) -> int:
    ckpt, vocab = _checkpoint_and_vocab(cfg)
    if "dataset" in cfg.explicit or "schema" not in ckpt.extra:
        schema = cfg.schema()
    else:
        schema = DatasetSchema.from_dict(ckpt.extra["schema"])
    if schema.n_classes != ckpt.config.n_classes:
        raise ArtifactMismatchError(f"dataset has {schema.n_classes} classes, checkpoint {ckpt.config.n_classes}")
    if cfg.test_file:
        path = Path(cfg.test_file)
    elif cfg.data:
        path = Path(cfg.data) / "test.csv" if Path(cfg.data).is_dir() else Path(cfg.data)
    else:
        raise ConfigError("eval needs --data", "data")
    if not path.is_file():
        raise DataError(f"evaluation data not found: {path}")
    examples = encode_all(load_csv(path, schema), vocab, ckpt.config.max_len)
    record = evaluate(ckpt, examples, "test")
    metrics = Path(cfg.metrics) if cfg.metrics else (Path(cfg.out) if cfg.out else Path(cfg.checkpoint).parent) / "metrics.csv"
    write_metrics(metrics, [record], append=True)
    print(f"examples: {len(examples)}")
    print(f"loss: {record.loss:.6f}")
    print(f"accuracy: {record.accuracy:.6f}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    names = verify_suites.SUITES if cfg.suite == "all" else (cfg.suite,)
    if any(n not in verify_suites.SUITES for n in names):
        raise ConfigError(f"unknown suite {cfg.suite!r}", "suite")
    ok = True
    print(f"seed: {cfg.seed}")
    for name in names:
        r = verify_suites.run_suite(name, cfg.seed, cfg.count)
        status = "PASS" if r.passed else "FAIL"
        print(f"{name}: max error {r.max_error:.3e} (tol {r.tol:.0e}) over {r.instances} instance(s) {status}")
        if not r.passed:
            ok = False
            print(f"  failing instance seed {r.failing_seed}; replay: wavenet verify --suite {name} --seed {r.failing_seed} --count 1")
    return EXIT_OK if ok else EXIT_VERIFY


def _fmt(values) -> str:
    return " ".join(f"{v:+.4f}" for v in values)


def cmd_inspect(cfg: RunConfig) -> int:
    if not cfg.text or not cfg.text.strip():
        raise ConfigError("inspect needs non-empty --text", "text")
    if cfg.checkpoint:
        ckpt, vocab = _checkpoint_and_vocab(cfg)
        table = ckpt.params["embedding"]
    else:
        vocab = build_vocab([cfg.text], min_freq=1)
        table = np.random.default_rng(cfg.seed).standard_normal((len(vocab), cfg.d))
    tokens = tokenize(cfg.text)
    ex = encode(cfg.text, vocab, max_len=max(len(tokens), 1))
    E = table[ex.ids]
    G = np.sqrt((E * E).sum(axis=0))
    alpha = wave_repr.phase_matrix(E, G)
    Z = wave_repr.to_complex(E).to_numpy()
    shown = tokens or ["<unk>"]
    print(f"tokens: {' '.join(t if t in vocab else t + '(UNK)' for t in shown)}")
    print(f"ids: {ex.ids.tolist()}")
    print(f"global vector G (d={E.shape[1]}): min {G.min():.4f} mean {G.mean():.4f} max {G.max():.4f}")
    print(f"G[:8]: {_fmt(G[:8])}")
    for j, tok in enumerate(shown[: len(ex.ids)]):
        a = alpha[j]
        print(f"token {j} {tok!r}: phase min {a.min():.4f} mean {a.mean():.4f} max {a.max():.4f}")
        print("  Z[:8]: " + " ".join(f"{z.real:+.4f}{z.imag:+.4f}i" for z in Z[j, :8]))
        print(f"  |Z|[:8]: {_fmt(np.abs(Z[j, :8]))}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    modes = (cfg.combine_mode,) if "combine_mode" in cfg.explicit else wave_repr.MODES
    reports = []
    for mode in modes:
        cfg.combine_mode = mode
        model_cfg = cfg.model_config(n_classes=cfg.n_classes or 4, vocab_size=cfg.max_vocab)
        r = bench_layer(model_cfg, cfg.n_batches, cfg.batch_size, cfg.seq_len, seed=cfg.seed)
        reports.append(r)
        print(
            f"{mode}: fwd {r.fwd_tok_per_s:.0f} tok/s, fwd+bwd {r.fwdbwd_tok_per_s:.0f} tok/s, "
            f"~{r.seconds_per_epoch:.0f} s/epoch, {r.param_count} params, peak {r.peak_rss_mb:.0f} MB"
        )
    if cfg.out:
        write_bench_csv(cfg.out, reports)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "verify": cmd_verify, "inspect": cmd_inspect, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavenet", description="Wave network text classifier")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--seed", help="random seed")
        return p

    p = common(sub.add_parser("train", help="train and write model.wvnt, vocab.txt, metrics.csv"))
    p.add_argument("--data", help="directory with train.csv/test.csv, or a train CSV")
    p.add_argument("--out", help="output directory")
    p.add_argument("--combine-mode", dest="combine_mode", choices=wave_repr.MODES)
    p.add_argument("--eval-every", dest="eval_every", help="test accuracy every N batches")

    p = common(sub.add_parser("eval", help="evaluate a checkpoint on a CSV"))
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="CSV file, or directory holding test.csv")
    p.add_argument("--out", help="directory whose metrics.csv receives the row")

    p = common(sub.add_parser("verify", help="run the seeded self-check suites"))
    p.add_argument("--suite", choices=(*verify_suites.SUITES, "all"))
    p.add_argument("--count", help="instances per suite")

    p = common(sub.add_parser("inspect", help="show the complex representation of a text"))
    p.add_argument("--text")
    p.add_argument("--checkpoint")

    p = common(sub.add_parser("bench", help="time forward/backward passes"))
    p.add_argument("--combine-mode", dest="combine_mode", choices=wave_repr.MODES)
    p.add_argument("--out", help="CSV file to append results to")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    try:
        cfg = build_run_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArtifactMismatchError, IntegrityError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
