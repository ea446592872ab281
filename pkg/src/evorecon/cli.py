"""Command-line entry point.

Every subcommand resolves relative paths against ``--workdir``.  Exit codes:
0 on success, 1 on domain errors (bad genome, corrupt file, ...), 2 on usage
errors (argparse).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import re
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import analyzer, genome as gn, kspace as ks, metrics, phenotype as ph
from . import search as se
from . import tensor_engine as te
from . import trainer as tr
from .errors import EvoreconError

log = logging.getLogger("evorecon")

DEFAULT_DATA = {
    "directory": "",
    "count": "200",
    "size": "32",
    "seed": "0",
    "pattern": ks.UNIFORM,
    "reduction": "4",
    "center": "0.04",
    "mask_seed": "0",
    "fractions": "0.75,0.10,0.15",
}

_SEED_RE = re.compile(r"^#\s*decode_seed\s*=\s*(\d+)\s*$", re.MULTILINE)


# -- small helpers ------------------------------------------------------------

class _Ctx:
    def __init__(self, workdir):
        self.workdir = Path(workdir)

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.workdir / p


def _parse_size(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)(?:[xX](\d+))?", text.strip())
    if not m:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    h = int(m.group(1))
    return h, int(m.group(2) or h)


def read_genome_file(path) -> tuple[gn.Genome, int | None]:
    """Genome plus the ``# decode_seed = N`` annotation, if present."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise EvoreconError(f"cannot read genome file {path}: {exc}") from None
    m = _SEED_RE.search(text)
    return gn.from_text(text), (int(m.group(1)) if m else None)


def write_genome_file(path, genome: gn.Genome, decode_seed: int | None = None):
    text = gn.to_text(genome)
    if decode_seed is not None:
        text = f"# decode_seed = {decode_seed}\n" + text
    Path(path).write_text(text, encoding="utf-8")


def save_params(path, params: dict):
    with open(path, "wb") as fh:
        np.savez(fh, **params)


def load_params(path) -> dict:
    try:
        with np.load(path) as data:
            return {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise EvoreconError(f"cannot read parameter file {path}: {exc}") from None


def _resolve_graph(ctx, args, shape):
    genome, seed = read_genome_file(ctx.path(args.genome))
    if args.seed is not None:
        seed = args.seed
    return ph.compile_genome(genome, ph.TensorShape(shape[0], shape[1], 1), seed or 0), genome


# -- config ---------------------------------------------------------------------

def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value.strip()


def _apply(obj, section, exclude=()):
    updates = {}
    names = {f.name for f in fields(obj)} - set(exclude)
    for key, value in section.items():
        if key not in names:
            raise EvoreconError(f"unknown config key {key!r} in [{section.name}]")
        try:
            updates[key] = _coerce(value, getattr(obj, key))
        except ValueError as exc:
            raise EvoreconError(f"[{section.name}] {key}: {exc}") from None
    try:
        return replace(obj, **updates)
    except ValueError as exc:
        raise EvoreconError(f"[{section.name}]: {exc}") from None


def load_config(path=None) -> tuple[se.SearchConfig, tr.TrainConfig, dict]:
    """Read an INI file with optional [search], [train] and [data] sections.

    Missing keys keep their defaults (N_P=50, N_G=30, k=3, C_r=0.9, mu=0.1,
    1000 epochs, patience 20, R=4, c=0.04, splits 75/10/15).
    """
    cp = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise EvoreconError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise EvoreconError(f"malformed config {path}: {exc}") from None
    for name in cp.sections():
        if name not in ("search", "train", "data"):
            raise EvoreconError(f"unknown config section [{name}]")
    train_cfg = tr.TrainConfig()
    if cp.has_section("train"):
        train_cfg = _apply(train_cfg, cp["train"])
    search_cfg = se.SearchConfig(train=train_cfg)
    if cp.has_section("search"):
        search_cfg = _apply(search_cfg, cp["search"], exclude=("train",))
    data = dict(DEFAULT_DATA)
    if cp.has_section("data"):
        for key, value in cp["data"].items():
            if key not in data:
                raise EvoreconError(f"unknown config key {key!r} in [data]")
            data[key] = value
    return search_cfg, train_cfg, data


def _make_mask(rows, pattern, reduction, center, seed):
    pattern = pattern.upper()
    if pattern == ks.UNIFORM:
        if float(reduction) != int(float(reduction)):
            raise EvoreconError("uniform masks need an integer reduction factor")
        return ks.make_uniform_mask(rows, int(float(reduction)), center)
    if pattern in (ks.RANDOM_VARIABLE_DENSITY, "RANDOM"):
        return ks.make_random_mask(rows, float(reduction), center, seed)
    raise EvoreconError(f"unknown mask pattern {pattern!r}")


def dataset_from_config(ctx, data: dict) -> ks.Dataset:
    directory = data["directory"]
    if directory and (ctx.path(directory) / ks.MANIFEST).exists():
        return ks.load_dataset(ctx.path(directory))
    size = int(data["size"])
    mask = _make_mask(size, data["pattern"], data["reduction"], float(data["center"]),
                      int(data["mask_seed"]))
    images = ks.generate_phantoms(int(data["count"]), size, int(data["seed"]))
    fractions = tuple(float(f) for f in data["fractions"].split(","))
    ds = ks.build_dataset(images, mask, fractions, int(data["seed"]))
    if directory:
        ks.save_dataset(ds, ctx.path(directory))
    return ds


# -- subcommands ----------------------------------------------------------------

def cmd_gen_data(ctx, args):
    mask = _make_mask(args.size, args.pattern, args.R, args.center, args.mask_seed)
    images = ks.generate_phantoms(args.count, args.size, args.seed)
    fractions = tuple(float(f) for f in args.fractions.split(","))
    ds = ks.build_dataset(images, mask, fractions, args.seed)
    out = ks.save_dataset(ds, ctx.path(args.out))
    print(f"wrote {len(ds.train)}/{len(ds.validation)}/{len(ds.test)} train/val/test pairs to {out}")
    print(f"effective acceleration {mask.effective_acceleration:.2f} "
          f"({mask.effective_acceleration:.1f}X)")


def cmd_mask(ctx, args):
    mask = _make_mask(args.rows, args.pattern, args.R, args.center, args.seed)
    if args.out:
        te.write_tensor(ctx.path(args.out), mask.keep.astype(np.uint8))
    print(f"rows {mask.rows} kept {mask.kept}")
    print(f"effective acceleration {mask.effective_acceleration:.4f} "
          f"({mask.effective_acceleration:.1f}X)")


def cmd_search(ctx, args):
    cfg, _, data = load_config(ctx.path(args.config) if args.config else None)
    if args.jobs is not None:
        cfg = replace(cfg, jobs=args.jobs)
    ds = dataset_from_config(ctx, data)
    out = ctx.path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.evck"
    state = se.resume(ckpt) if args.resume and ckpt.exists() else None
    if state is not None:
        log.info("resuming at generation %d slot %d", state.generation, state.slot)
    result = se.run_search(cfg, ds, state=state, checkpoint_path=ckpt)
    best = result.best
    h, w = ds.image_shape
    graph = ph.compile_genome(best.genome, ph.TensorShape(h, w, 1), best.decode_seed)
    write_genome_file(out / "best_genome.txt", best.genome, best.decode_seed)
    save_params(out / "best_params.npz", best.params)
    (out / "best_graph.txt").write_text(ph.to_text(graph), encoding="utf-8")
    (out / "lineage.tsv").write_text(result.lineage, encoding="utf-8")
    rows = ["generation,best_fv,mean_fv,mutation_rate"]
    rows += [f"{g.generation},{g.best_fv!r},{g.mean_fv!r},{g.mutation_rate!r}" for g in result.history]
    (out / "history.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"best FV {best.fitness:.6g} (validation MSE {best.val_mse:.6g}), digest {best.digest}")
    print(f"lineage sha256 {se.lineage_digest(result.records)}")


def cmd_decode(ctx, args):
    genome, seed = read_genome_file(ctx.path(args.genome))
    if args.seed is not None:
        seed = args.seed
    h, w = args.size
    graph = ph.compile_genome(genome, ph.TensorShape(h, w, 1), seed or 0)
    text = ph.to_text(graph)
    summary = analyzer.summarize(graph)
    if args.out:
        ctx.path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    sys.stdout.write(analyzer.report_kv(summary) if args.kv else analyzer.report_table(summary))


def cmd_train(ctx, args):
    _, train_cfg, _ = load_config(ctx.path(args.config) if args.config else None)
    ds = ks.load_dataset(ctx.path(args.data))
    graph, genome = _resolve_graph(ctx, args, ds.image_shape)
    result = tr.train(graph, ds, train_cfg, optimizer=genome.g11)
    out = ctx.path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(result.history_csv(), encoding="utf-8")
    save_params(out / "params.npz", result.params)
    status = "diverged" if result.diverged else f"best epoch {result.best_epoch}"
    print(f"stopped at epoch {result.stopped_epoch}, {status}, validation MSE {result.best_val_mse:.6g}")


def cmd_reconstruct(ctx, args):
    images = te.read_tensor(ctx.path(args.input))
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3:
        raise EvoreconError(f"input must be (H, W) or (N, H, W), got {images.shape}")
    graph, _ = _resolve_graph(ctx, args, images.shape[1:])
    params = load_params(ctx.path(args.params))
    pred = te.predict(graph, params, images[..., None].astype(next(iter(params.values())).dtype))
    te.write_tensor(ctx.path(args.out), pred[..., 0])
    print(f"wrote {len(pred)} reconstructions to {ctx.path(args.out)}")


def cmd_evaluate(ctx, args):
    ds = ks.load_dataset(ctx.path(args.data))
    x, y = ds.arrays(args.split, np.float64)
    if len(x) == 0:
        raise EvoreconError(f"split {args.split!r} is empty")
    rows = {"Aliased": metrics.evaluate_pairs(y, x)}
    if args.identity:
        rows["Identity"] = metrics.evaluate_pairs(y, x)
    else:
        if not (args.params and args.genome):
            raise EvoreconError("evaluate needs --params and --genome (or --identity)")
        graph, _ = _resolve_graph(ctx, args, ds.image_shape)
        params = load_params(ctx.path(args.params))
        dtype = next(iter(params.values())).dtype
        pred = te.predict(graph, params, x.astype(dtype)).astype(np.float64)
        rows["Model"] = metrics.evaluate_pairs(y, pred)
    sys.stdout.write(metrics.format_table(rows))
    if args.csv:
        name = "Identity" if args.identity else "Model"
        ctx.path(args.csv).write_text(metrics.report_csv(rows[name]), encoding="utf-8")


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evorecon",
                                description="Genetic architecture search for undersampled MR reconstruction.")
    p.add_argument("--workdir", default=".", help="base directory for relative paths")
    p.add_argument("--jobs", type=int, default=None, help="cap on worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="synthesize a phantom dataset")
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--pattern", default=ks.UNIFORM)
    s.add_argument("--R", type=float, default=4)
    s.add_argument("--center", type=float, default=0.04)
    s.add_argument("--mask-seed", type=int, default=0)
    s.add_argument("--fractions", default="0.75,0.10,0.15")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("mask", help="build a k-space mask and print its acceleration")
    s.add_argument("--rows", type=int, required=True)
    s.add_argument("--pattern", default=ks.UNIFORM)
    s.add_argument("--R", type=float, default=4)
    s.add_argument("--center", type=float, default=0.04)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None, help="ETNS file for the keep vector")
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("search", help="run the genetic search")
    s.add_argument("--config", default=None)
    s.add_argument("--out", default="search")
    s.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("decode", help="compile a genome and summarize the graph")
    s.add_argument("--genome", required=True)
    s.add_argument("--size", type=_parse_size, default=(32, 32))
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None, help="write the graph here instead of stdout")
    s.add_argument("--kv", action="store_true", help="key-value summary instead of a table")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("train", help="train one genome")
    s.add_argument("--genome", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=None, help="decode seed override")
    s.add_argument("--out", default="train")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="run a trained model on aliased images")
    s.add_argument("--params", required=True)
    s.add_argument("--genome", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--seed", type=int, default=None, help="decode seed override")
    s.add_argument("--out", default="reconstruction.etns")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("evaluate", help="metrics table on a dataset split")
    s.add_argument("--params", default=None)
    s.add_argument("--genome", default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=ks.SPLITS)
    s.add_argument("--seed", type=int, default=None, help="decode seed override")
    s.add_argument("--identity", action="store_true", help="score the aliased input itself")
    s.add_argument("--csv", default=None)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs is not None and args.jobs < 1:
        parser.error("--jobs must be >= 1")
    ctx = _Ctx(args.workdir)
    try:
        args.func(ctx, args)
    except EvoreconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
