"""Command line entry point: synth, train, eval, experiment, inspect.

Exit codes: 0 success, 2 configuration error, 3 data or model-file error,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import struct
import sys
import zlib
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .data import (FULL, IBUG68_EYES, INPUT_ONLY, LABEL_ONLY, DataError, Dataset, Sample,
                   SynthParams, convert, default_template, load_dataset, random_split,
                   save_dataset, synth_generate)
from .metrics import EvalReport, evaluate, mean_shape
from .mtl import (MODES, Framework, FrameworkSpec, OptimizerCfg, Schedule, Schedules,
                  TrainLog, build_framework, train)
from .network import ParamStore, init_params
from .numerics import RNG_ALGORITHM, NumericError, make_rng

log = logging.getLogger("structmtl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------

_SCHED_KEYS = tuple(f"{t}_{k}" for t in ("sup", "in", "out") for k in ("start", "end", "ramp"))


@dataclass
class RunConfig:
    """Every knob of a run. Defaults are the full-scale hyperparameters.

    Schedule keys left at ``None`` follow the mode: supervision is constant
    1, active auxiliary tasks ramp 1 -> 0 over ``ramp`` (a fraction of the
    epochs), disabled tasks are 0. Data comes from ``train_dir`` (and optional
    ``valid_dir``/``test_dir``) when set, otherwise it is synthesized.
    """

    mode: str = "mlp_in_out"
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    # framework
    dims: tuple[int, ...] = (2500, 1025, 512, 64, 136)
    k_in: int = 1
    k_out: int = 1
    corruption: float = 0.2
    # optimizer
    learning_rate: float = 1e-3
    momentum: float = 0.9
    ae_weight_decay: float = 1e-2
    batch_size: int = 10
    epochs: int = 1000
    keep_best: bool = True
    # schedules
    ramp: float = 0.9
    sup_start: float | None = None
    sup_end: float | None = None
    sup_ramp: float | None = None
    in_start: float | None = None
    in_end: float | None = None
    in_ramp: float | None = None
    out_start: float | None = None
    out_end: float | None = None
    out_ramp: float | None = None
    # data
    train_dir: str = ""
    valid_dir: str = ""
    test_dir: str = ""
    img_side: int = 50
    eyes: str = "auto"
    data_seed: int = 0
    n_train: int = 676
    n_valid: int = 135
    n_test: int = 224
    # synthetic generator
    rot_max_deg: float = 15.0
    scale_min: float = 0.8
    scale_max: float = 1.0
    shift_max: float = 0.08
    noise_std: float = 0.05
    blob_sigma: float | None = None
    # augmentation: extra unpaired samples appended to the training set
    extra_input_only: int = 0
    extra_label_only: int = 0
    augment_modes: tuple[str, ...] = ("mlp_in_out",)
    # synth command
    n_samples: int = 100
    input_only_fraction: float = 0.0
    label_only_fraction: float = 0.0

    @property
    def spec(self) -> FrameworkSpec:
        return FrameworkSpec(self.dims, self.k_in, self.k_out)

    @property
    def optimizer(self) -> OptimizerCfg:
        return OptimizerCfg(self.learning_rate, self.momentum, self.ae_weight_decay,
                            self.batch_size, self.epochs)

    @property
    def synth_params(self) -> SynthParams:
        return SynthParams(self.img_side, self.rot_max_deg, self.scale_min, self.scale_max,
                           self.shift_max, self.noise_std, self.blob_sigma)

    @property
    def synthetic(self) -> bool:
        return not self.train_dir

    def schedules(self, mode: str | None = None) -> Schedules:
        mode = self.mode if mode is None else mode
        active = {"sup": True, "in": mode in ("mlp_in", "mlp_in_out"),
                  "out": mode in ("mlp_out", "mlp_in_out")}
        out = []
        for task in ("sup", "in", "out"):
            start, end, ramp = (getattr(self, f"{task}_{k}") for k in ("start", "end", "ramp"))
            if not active[task]:
                out.append(Schedule(0.0, 0.0, 0))
                continue
            if start is None:
                start = 1.0
            if end is None:
                end = 1.0 if task == "sup" else 0.0
            if ramp is None:
                ramp = 0.0 if task == "sup" else self.ramp
            out.append(Schedule(float(start), float(end), int(round(ramp * self.epochs))))
        return Schedules(*out)

    def eye_groups(self, n_points: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        if self.eyes != "auto":
            return parse_eyes(self.eyes)
        if n_points == 68:
            return tuple(tuple(g) for g in IBUG68_EYES)
        tpl = default_template()
        if n_points == tpl.n_points:
            return tpl.eyes
        raise ConfigError(f"no default eye groups for {n_points} points; set eyes=")

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, not {self.mode!r}")
        for m in self.augment_modes:
            if m not in MODES:
                raise ConfigError(f"augment_modes: unknown mode {m!r}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        try:
            spec = self.spec
            self.optimizer
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not 0.0 <= self.corruption <= 1.0:
            raise ConfigError("corruption must lie in [0, 1]")
        # a disabled task must not be given a non-zero weight
        disabled = {"mlp": ("in", "out"), "mlp_in": ("out",), "mlp_out": ("in",)}.get(self.mode, ())
        for task in disabled:
            for k in ("start", "end"):
                v = getattr(self, f"{task}_{k}")
                if v is not None and v != 0.0:
                    raise ConfigError(f"mode {self.mode} requires lambda_{task} == 0, got {task}_{k}={v}")
        for key in ("ramp", "sup_ramp", "in_ramp", "out_ramp"):
            v = getattr(self, key)
            if v is not None and v < 0:
                raise ConfigError(f"{key} must be non-negative")
        for key in _SCHED_KEYS:
            v = getattr(self, key)
            if v is not None and not key.endswith("ramp") and v < 0:
                raise ConfigError(f"{key} must be non-negative")
        if self.extra_input_only < 0 or self.extra_label_only < 0:
            raise ConfigError("extra sample counts must be non-negative")
        if self.img_side < 1:
            raise ConfigError("img_side must be positive")
        if spec.dims[0] != self.img_side ** 2:
            raise ConfigError(f"dims[0]={spec.dims[0]} does not match img_side^2={self.img_side ** 2}")
        if self.synthetic:
            n = default_template().n_points
            if spec.dims[-1] != 2 * n:
                raise ConfigError(f"dims[-1]={spec.dims[-1]} but synthetic shapes have {2 * n} coordinates")
            if min(self.n_train, self.n_valid, self.n_test) < 1:
                raise ConfigError("n_train, n_valid and n_test must be positive")
            if not self.scale_min <= self.scale_max:
                raise ConfigError("scale_min must not exceed scale_max")
        if self.eyes != "auto":
            parse_eyes(self.eyes)


def parse_eyes(text: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """``"36-41;42-47"`` or ``"5;6"`` to two index groups."""
    groups = []
    for part in text.split(";"):
        idx = []
        for tok in part.split(","):
            tok = tok.strip()
            try:
                if "-" in tok:
                    a, b = tok.split("-")
                    idx.extend(range(int(a), int(b) + 1))
                elif tok:
                    idx.append(int(tok))
            except ValueError:
                raise ConfigError(f"bad eyes spec {text!r}") from None
        groups.append(tuple(idx))
    if len(groups) != 2 or not all(groups):
        raise ConfigError(f"eyes needs two non-empty groups separated by ';', got {text!r}")
    return groups[0], groups[1]


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    ftype = str(_FIELDS[key].type)
    raw = raw.strip()
    try:
        if ftype.startswith("tuple[int"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if ftype.startswith("tuple[str"):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if "None" in ftype and raw.lower() in ("", "none"):
            return None
        if ftype.startswith("bool"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return raw.lower() in ("true", "1", "yes")
        if ftype.startswith("int"):
            return int(raw)
        if ftype.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {ftype}") from None
    return raw


def parse_assignments(lines, source: str = "<overrides>") -> dict:
    out = {}
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


PRESETS = ("full", "synth")


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return resources.files("structmtl").joinpath(f"presets/{name}.cfg").read_text(encoding="utf-8")


def load_config(path: str | None = None, overrides=()) -> RunConfig:
    """Defaults, then a preset name or key=value file, then overrides."""
    values = {}
    if path:
        if path in PRESETS:
            values.update(parse_assignments(preset_text(path).splitlines(), f"preset:{path}"))
        else:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file {path} not found")
            values.update(parse_assignments(p.read_text(encoding="utf-8").splitlines(), str(p)))
    values.update(parse_assignments(overrides))
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# -- model file ----------------------------------------------------------------

MAGIC = b"SMTLMODL"
FORMAT_VERSION = 1


class ModelFileError(DataError):
    pass


class ModelTruncatedError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    pass


class ModelChecksumError(ModelFileError):
    pass


@dataclass
class ModelFile:
    spec: FrameworkSpec
    mode: str
    seed: int
    corruption: float
    store: ParamStore
    rng_algorithm: str = RNG_ALGORITHM
    img_side: int | None = None
    n_points: int | None = None
    extra: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "dims": list(self.spec.dims), "k_in": self.spec.k_in, "k_out": self.spec.k_out,
            "mode": self.mode, "seed": self.seed, "corruption": self.corruption,
            "rng_algorithm": self.rng_algorithm, "img_side": self.img_side,
            "n_points": self.n_points, "extra": self.extra,
        }

    def framework(self) -> Framework:
        fw = build_framework(self.spec, self.corruption, make_rng((self.seed, 2)))
        if fw.store.ids() != self.store.ids():
            raise ModelFileError("parameter blocks do not match the framework layout")
        for id in fw.store.ids():
            if fw.store[id].shape != self.store[id].shape:
                raise ModelFileError(f"block {id} has shape {self.store[id].shape}")
        fw.store.restore(self.store.snapshot())
        return fw


def save_model(path, model: ModelFile) -> None:
    """Layout (little endian): magic, u16 version, u32 header length, JSON
    header, u32 block count, blocks sorted by id (u16 id length, id, u32 rows,
    u32 cols, rows*cols f64 weights, rows f64 biases), u32 CRC-32 of all
    preceding bytes."""
    hdr = json.dumps(model.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(hdr)), hdr,
             struct.pack("<I", len(model.store.ids()))]
    for id in model.store.ids():
        blk = model.store[id]
        rows, cols = blk.shape
        bid = id.encode("utf-8")
        parts += [struct.pack("<H", len(bid)), bid, struct.pack("<II", rows, cols),
                  np.ascontiguousarray(blk.W, dtype="<f8").tobytes(),
                  np.ascontiguousarray(blk.b, dtype="<f8").tobytes()]
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelTruncatedError(
                f"{self.path}: truncated at byte {len(self.buf)} (needed {n} bytes at {self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path) -> ModelFile:
    buf = Path(path).read_bytes()
    r = _Reader(buf, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise ModelFileError(f"{path}: bad magic, not a model file")
    version, hlen = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    try:
        hdr = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"{path}: corrupt header ({e})") from None
    (n_blocks,) = r.unpack("<I")
    store = ParamStore()
    for _ in range(n_blocks):
        (idlen,) = r.unpack("<H")
        bid = r.take(idlen).decode("utf-8", errors="replace")
        rows, cols = r.unpack("<II")
        blk = store.add(bid, rows, cols)
        blk.W[...] = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
        blk.b[...] = np.frombuffer(r.take(8 * rows), dtype="<f8").reshape(rows, 1)
    end = r.pos
    (crc,) = r.unpack("<I")
    if zlib.crc32(buf[:end]) != crc:
        raise ModelChecksumError(f"{path}: checksum mismatch")
    if r.pos != len(buf):
        raise ModelFileError(f"{path}: {len(buf) - r.pos} trailing bytes")
    try:
        spec = FrameworkSpec(tuple(hdr["dims"]), hdr["k_in"], hdr["k_out"])
        return ModelFile(spec, hdr["mode"], hdr["seed"], hdr["corruption"], store,
                         hdr["rng_algorithm"], hdr.get("img_side"), hdr.get("n_points"),
                         hdr.get("extra", {}))
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"{path}: bad header field ({e})") from None


# -- data plumbing -----------------------------------------------------------------

@dataclass
class Splits:
    train: Dataset
    valid: Dataset
    test: Dataset | None
    extras: Dataset | None = None

    def training_set(self, augmented: bool) -> Dataset:
        return self.train + self.extras if augmented and self.extras is not None else self.train


def make_splits(cfg: RunConfig) -> Splits:
    """Materialize train/valid/test (+ unpaired extras) for ``cfg``.

    Synthetic data is drawn from stream (data_seed, 0) in train, valid, test
    order; extras come from stream (data_seed, 1), input-only first.
    """
    if cfg.synthetic:
        tpl = default_template()
        n = cfg.n_train + cfg.n_valid + cfg.n_test
        ds = synth_generate(tpl, n, cfg.synth_params, make_rng((cfg.data_seed, 0)))
        a, b = cfg.n_train, cfg.n_train + cfg.n_valid
        splits = Splits(ds.subset(range(a)), ds.subset(range(a, b)), ds.subset(range(b, n)))
        k_in, k_lab = cfg.extra_input_only, cfg.extra_label_only
        if k_in + k_lab:
            ex = synth_generate(tpl, k_in + k_lab, cfg.synth_params, make_rng((cfg.data_seed, 1)))
            samples = [Sample(INPUT_ONLY, x=s.x) if i < k_in else Sample(LABEL_ONLY, y=s.y)
                       for i, s in enumerate(ex.samples)]
            splits.extras = dataclasses.replace(ex, samples=samples, meta=None)
        return splits
    train_ds = load_dataset(cfg.train_dir, cfg.img_side)
    if cfg.valid_dir:
        valid_ds = load_dataset(cfg.valid_dir, cfg.img_side)
    else:
        train_ds, valid_ds = random_split(train_ds, cfg.n_valid, make_rng((cfg.data_seed, 2)))
    test_ds = load_dataset(cfg.test_dir, cfg.img_side) if cfg.test_dir else None
    for name, ds in (("train", train_ds), ("valid", valid_ds), ("test", test_ds)):
        if ds is not None and 2 * ds.n_points != cfg.dims[-1]:
            raise DataError(f"{name} set has {ds.n_points} points but dims[-1]={cfg.dims[-1]}")
    if cfg.extra_input_only or cfg.extra_label_only:
        raise ConfigError("extra_* augmentation needs synthetic data; add unpaired rows to the manifest instead")
    return Splits(train_ds, valid_ds, test_ds)


def fresh_framework(cfg: RunConfig, seed: int) -> Framework:
    fw = build_framework(cfg.spec, cfg.corruption, make_rng((seed, 2)))
    init_params(fw.store, make_rng(seed))
    return fw


def run_training(cfg: RunConfig, splits: Splits, mode: str, seed: int, init: ParamStore | None = None,
                 augmented: bool = False) -> tuple[Framework, TrainLog]:
    fw = build_framework(cfg.spec, cfg.corruption, make_rng((seed, 2)))
    if init is None:
        init_params(fw.store, make_rng(seed))
    else:
        fw.store.restore(init.snapshot())
    data = splits.training_set(augmented)
    tlog = train(fw, data, cfg.schedules(mode), cfg.optimizer, splits.valid, seed, cfg.keep_best)
    return fw, tlog


def model_file(cfg: RunConfig, fw: Framework, mode: str, seed: int, n_points: int) -> ModelFile:
    return ModelFile(cfg.spec, mode, seed, cfg.corruption, fw.store, RNG_ALGORITHM,
                     cfg.img_side, n_points)


# -- commands ----------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    if cfg.n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    fi, fl = cfg.input_only_fraction, cfg.label_only_fraction
    if min(fi, fl) < 0 or fi + fl > 1:
        raise ConfigError("input_only_fraction and label_only_fraction must be >= 0 and sum to <= 1")
    n = cfg.n_samples
    ds = synth_generate(default_template(), n, cfg.synth_params, make_rng((cfg.data_seed, 0)))
    n_in, n_lab = int(round(fi * n)), int(round(fl * n))
    if n_in + n_lab > n:
        raise ConfigError("rounded fractions exceed the sample count")
    rng = make_rng((cfg.data_seed, 3))
    ds = convert(ds, n_in, INPUT_ONLY, rng)
    ds = convert(ds, n_lab, LABEL_ONLY, rng)
    try:
        save_dataset(ds, out)
    except OSError as e:
        raise DataError(f"cannot write {out}: {e}") from None
    counts = ds.counts()
    print(" ".join(f"{k}={counts[k]}" for k in (FULL, INPUT_ONLY, LABEL_ONLY)))
    return counts


def cmd_train(cfg: RunConfig, model_out: Path, log_out: Path) -> TrainLog:
    splits = make_splits(cfg)
    augmented = splits.extras is not None
    fw, tlog = run_training(cfg, splits, cfg.mode, cfg.seed, augmented=augmented)
    save_model(model_out, model_file(cfg, fw, cfg.mode, cfg.seed, splits.train.n_points))
    tlog.to_csv(log_out)
    print(f"best_epoch={tlog.best_epoch} best_valid_mse={float(tlog.best_valid_mse)!r}")
    return tlog


def cmd_eval(cfg: RunConfig, model_path: Path | None, errors_out: Path, cdf_out: Path,
             baseline: bool = False) -> EvalReport:
    splits = make_splits(cfg)
    test = splits.test if splits.test is not None else splits.valid
    if baseline:
        predictor = mean_shape(splits.train)
    else:
        m = load_model(model_path)
        if m.spec.dims[0] != test.d_x or m.spec.dims[-1] != 2 * test.n_points:
            raise DataError(f"model dims {m.spec.dims} do not fit data with d_x={test.d_x}, "
                            f"{test.n_points} points")
        predictor = m.framework().predict
    rep = evaluate(predictor, test, cfg.eye_groups(test.n_points), cfg.img_side)
    rep.write_csvs(errors_out, cdf_out)
    print(rep.summary())
    return rep


EXPERIMENT_COLUMNS = ("seed", "mode", "best_valid_mse", "auc", "cdf_0.1")


def cmd_experiment(cfg: RunConfig, table_out: Path, models_dir: Path | None = None) -> list[list]:
    """Train all four modes from one shared initialization per seed.

    With extra unpaired samples configured, each mode in ``augment_modes``
    is also trained on the augmented set and reported as ``<mode>+aug``.
    """
    splits = make_splits(cfg)
    test = splits.test if splits.test is not None else splits.valid
    eyes = cfg.eye_groups(test.n_points)
    variants = [(m, False) for m in MODES]
    if splits.extras is not None:
        variants += [(m, True) for m in cfg.augment_modes]
    rows = []
    try:
        for seed in cfg.seeds:
            init = fresh_framework(cfg, seed).store
            for mode, aug in variants:
                name = mode + ("+aug" if aug else "")
                fw, tlog = run_training(cfg, splits, mode, seed, init, aug)
                rep = evaluate(fw.predict, test, eyes, cfg.img_side)
                rows.append([seed, name, tlog.best_valid_mse, rep.auc, rep.cdf_at_0_1])
                log.info("seed=%s mode=%s best_valid_mse=%.6g auc=%.3f", seed, name,
                         tlog.best_valid_mse, rep.auc)
                if models_dir is not None:
                    models_dir.mkdir(parents=True, exist_ok=True)
                    save_model(models_dir / f"seed{seed}_{name}.model",
                               model_file(cfg, fw, mode, seed, test.n_points))
    except Exception:
        if rows:
            _write_table(table_out.with_name(table_out.name + ".partial"), rows, [])
            log.error("experiment aborted; %d finished rows written to %s.partial", len(rows), table_out.name)
        raise
    means = []
    for mode, aug in variants:
        name = mode + ("+aug" if aug else "")
        sel = np.array([r[2:] for r in rows if r[1] == name], dtype=np.float64)
        means.append(["mean", name, *sel.mean(axis=0).tolist()])
    _write_table(table_out, rows, means)
    for r in means:
        print(f"{r[1]:>16} best_valid_mse={r[2]:.6g} auc={r[3]:.3f} cdf_0.1={r[4]:.3f}")
    return rows + means


def _write_table(path: Path, rows, means) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EXPERIMENT_COLUMNS)
        for r in rows + means:
            w.writerow([r[0], r[1], *(repr(float(v)) for v in r[2:])])


def cmd_inspect(model_path: Path) -> dict:
    m = load_model(model_path)
    hdr = m.header()
    print(json.dumps(hdr, sort_keys=True, indent=2))
    for id in m.store.ids():
        rows, cols = m.store[id].shape
        print(f"{id}\t{rows}x{cols}")
    return hdr


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="structmtl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("-c", "--config", help="preset name (full, synth) or key=value file")
        sp.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mode", choices=MODES)
        return sp

    sp = with_config(sub.add_parser("synth", help="write a synthetic dataset directory"))
    sp.add_argument("out", type=Path)
    sp.add_argument("-n", type=int, help="number of samples")

    sp = with_config(sub.add_parser("train", help="train one mode and save the best model"))
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--log", type=Path, required=True)

    sp = with_config(sub.add_parser("eval", help="score a model (or the mean shape) on the test set"))
    sp.add_argument("--model", type=Path)
    sp.add_argument("--baseline", action="store_true", help="mean shape of the training labels")
    sp.add_argument("--errors", type=Path, required=True)
    sp.add_argument("--cdf", type=Path, required=True)

    sp = with_config(sub.add_parser("experiment", help="all four modes over several seeds"))
    sp.add_argument("--table", type=Path, required=True)
    sp.add_argument("--models-dir", type=Path)

    sp = sub.add_parser("inspect", help="print a model file header")
    sp.add_argument("model", type=Path)
    return p


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.mode is not None:
        overrides.append(f"mode={args.mode}")
    if getattr(args, "n", None) is not None:
        overrides.append(f"n_samples={args.n}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "inspect":
            cmd_inspect(args.model)
            return EXIT_OK
        cfg = _config_from_args(args)
        if args.command == "synth":
            cmd_synth(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.model, args.log)
        elif args.command == "eval":
            if args.baseline == (args.model is not None):
                raise ConfigError("give exactly one of --model or --baseline")
            cmd_eval(cfg, args.model, args.errors, args.cdf, args.baseline)
        elif args.command == "experiment":
            cmd_experiment(cfg, args.table, args.models_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
