"""Command-line entry point.

Exit codes: 0 success, 2 usage or config error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import codebook as cb
from . import experiments as ex
from .channel import sample_channel, snr_metrics
from .geometry import ArrayConfig, fresnel_distance, nf_boundary_distance, rayleigh_distance
from .training import METHODS, oracle_from_channel, train
from .wavefield import (HORIZONTAL, VERTICAL, axis_restricted_diverging_codeword, diverging_codeword,
                        focusing_codeword)

OUT_ENV = "BEAMDIVERGE_OUT"
SUBCOMMANDS = ("field", "nf-region", "accuracy", "train", "sweep", "overhead")
STOCHASTIC = frozenset({"accuracy", "train", "sweep", "overhead"})
DEFAULT_PRESET = {"accuracy": "table1", "train": "fig5", "sweep": "fig8b", "overhead": "table3"}

# option keys accepted in a JSON config; hyphens and underscores are interchangeable
OPTION_KEYS = frozenset({
    "subcommand", "preset", "out", "seed", "nx", "nz", "f_ghz", "m", "k_set", "trials", "snr",
    "rician", "l", "methods", "method", "ue", "samples", "kind", "index", "point", "axis", "y",
    "resolution", "extent", "levels",
})


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str | None = None
    options: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.options.get("seed")

    @property
    def out_dir(self) -> Path:
        return Path(self.options.get("out") or os.environ.get(OUT_ENV) or "beamdiverge_out")

    def merged(self, flags: dict) -> "RunConfig":
        """Flags that were given override config values."""
        opts = dict(self.options)
        opts.update({k: v for k, v in flags.items() if v is not None})
        return RunConfig(self.subcommand, opts)


def _norm_key(k: str) -> str:
    return k.replace("-", "_").lower()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    opts = {}
    for k, v in data.items():
        nk = _norm_key(k)
        if nk not in OPTION_KEYS:
            raise UsageError(f"{path}: unknown config key {k!r}")
        opts[nk] = v
    sub = opts.pop("subcommand", None)
    if sub is not None and sub not in SUBCOMMANDS:
        raise UsageError(f"{path}: unknown subcommand {sub!r}")
    return RunConfig(sub, opts)


# -- value coercion (flags arrive as strings, configs as JSON values) --------

def _floats(v, n=None, name="value") -> tuple:
    if isinstance(v, str):
        parts = [p for p in v.replace(" ", "").split(",") if p]
    elif isinstance(v, (list, tuple)):
        parts = list(v)
    else:
        parts = [v]
    try:
        out = tuple(float(p) for p in parts)
    except (TypeError, ValueError):
        raise UsageError(f"{name}: expected comma-separated numbers, got {v!r}") from None
    if n is not None and len(out) != n:
        raise UsageError(f"{name}: expected {n} numbers, got {len(out)}")
    return out


def _ints(v, n=None, name="value") -> tuple:
    f = _floats(v, n, name)
    if any(x != int(x) for x in f):
        raise UsageError(f"{name}: expected integers, got {v!r}")
    return tuple(int(x) for x in f)


def _strs(v) -> tuple:
    if isinstance(v, str):
        return tuple(p for p in v.replace(" ", "").split(",") if p)
    return tuple(str(p) for p in v)


def _array(opts: dict, base: ex.ExperimentSpec | None = None) -> ArrayConfig:
    nx = int(opts.get("nx", base.n_x if base else 64))
    nz = int(opts.get("nz", base.n_z if base else 64))
    f = float(opts["f_ghz"]) * 1e9 if "f_ghz" in opts else (base.carrier_hz if base else 28e9)
    return ArrayConfig(nx, nz, f)


def build_spec(rc: RunConfig) -> ex.ExperimentSpec:
    """Preset expanded, then inline overrides applied."""
    o = rc.options
    name = o.get("preset") or DEFAULT_PRESET.get(rc.subcommand, "fig5")
    try:
        spec = ex.get_preset(name)
    except ValueError as e:
        raise UsageError(str(e)) from None
    kw = {}
    cfg = _array(o, spec)
    if (cfg.n_x, cfg.n_z, cfg.carrier_hz) != (spec.n_x, spec.n_z, spec.carrier_hz):
        kw.update(n_x=cfg.n_x, n_z=cfg.n_z, carrier_hz=cfg.carrier_hz)
    if "m" in o:
        kw["M"] = int(o["m"])
    if "k_set" in o:
        kw["k_set"] = _ints(o["k_set"], name="k-set")
    if "trials" in o:
        kw["trials"] = int(o["trials"])
    if "snr" in o:
        kw["ref_snr_db"] = _floats(o["snr"], name="snr")
    if "rician" in o:
        kw["rician_db"] = float(o["rician"])
    if "l" in o:
        kw["L"] = int(o["l"])
    if "methods" in o:
        kw["methods"] = _strs(o["methods"])
    if o.get("seed") is not None:
        kw["seed"] = int(o["seed"])
    try:
        return spec.replace(**kw) if kw else spec
    except ValueError as e:
        raise UsageError(str(e)) from None


# -- subcommands ---------------------------------------------------------------

def _emit_table(tab: ex.ResultTable, path: Path, out) -> None:
    csv_path, side = tab.write(path)
    out.write(tab.to_csv_string())
    print(f"# wrote {csv_path} and {side}", file=out)


def _cmd_field(rc: RunConfig, out) -> int:
    o = rc.options
    cfg = _array(o)
    kind = o.get("kind", "diverging")
    y = float(o.get("y", 10.0))
    if "point" in o:
        p = _floats(o["point"], 3, "point")
    elif kind == "focusing":
        raise UsageError("focusing field needs --point")
    else:
        m, a, b = _ints(o.get("index", "1,1,1"), 3, "index")
        if kind == "axis-diverging":
            p = tuple(cb.axis_focal_point(cfg, cb.ShellIndex(m, a, o.get("axis", HORIZONTAL))))
        else:
            p = tuple(cb.virtual_focal_point(cfg, cb.FrustumIndex(m, a, b)))
    if kind == "diverging":
        cw = diverging_codeword(cfg, p)
    elif kind == "focusing":
        cw = focusing_codeword(cfg, p)
    elif kind == "axis-diverging":
        axis = o.get("axis", HORIZONTAL)
        if axis not in (HORIZONTAL, VERTICAL):
            raise UsageError(f"axis must be {HORIZONTAL!r} or {VERTICAL!r}")
        cw = axis_restricted_diverging_codeword(cfg, p, axis)
    else:
        raise UsageError(f"unknown codeword kind {kind!r}")
    ext = _floats(o["extent"], 4, "extent") if "extent" in o else None
    path = rc.out_dir / f"field_{kind}_y{y:g}.csv"
    grid, bnd = ex.heatmap_export(cfg, cw, y, path, int(o.get("resolution", 256)), ext)
    print(json.dumps({"codeword": cw.label, "point": [float(c) for c in p], "y_m": y,
                      "grid_csv": str(grid), "boundary_csv": str(bnd)}), file=out)
    return 0


def _cmd_nf_region(rc: RunConfig, out) -> int:
    o = rc.options
    cfg = _array(o)
    print(f"array {cfg.n_x}x{cfg.n_z} at {cfg.carrier_hz / 1e9:g} GHz", file=out)
    print(f"rayleigh_m {rayleigh_distance(cfg):.3f}", file=out)
    print(f"fresnel_m {fresnel_distance(cfg):.3f}", file=out)
    print(f"boresight_boundary_m {float(nf_boundary_distance(cfg, 0.0, 0.0)):.3f}", file=out)
    samples = int(o.get("samples", 0))
    if samples > 0:
        if rc.seed is None:
            raise UsageError("--samples draws Monte Carlo points; --seed is required")
        tab = ex.nf_region_report(cfg, samples, int(rc.seed))
        print(f"nf_volume_fraction {tab.value('geometry', 'nf_volume_fraction'):.4f}", file=out)
        tab.write(rc.out_dir / f"nf_region_{cfg.n_x}x{cfg.n_z}.csv")
    return 0


def _cmd_accuracy(rc: RunConfig, out) -> int:
    spec = build_spec(rc)
    levels = _ints(rc.options.get("levels", "1"), name="levels")
    tab = ex.accuracy_table(spec, levels)
    _emit_table(tab, rc.out_dir / f"accuracy_{spec.name}.csv", out)
    return 0


def _cmd_train(rc: RunConfig, out) -> int:
    o = rc.options
    spec = build_spec(rc)
    method = o.get("method", "two-phase")
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {METHODS}")
    if "ue" not in o:
        raise UsageError("train needs --ue x,y,z")
    ue = _floats(o["ue"], 3, "ue")
    snr = spec.ref_snr_db[0]
    cfg = spec.array
    ch = sample_channel(cfg, ue, spec.rician_db, spec.L, snr, ex._rng(spec.seed, 0), spec.snr_convention)
    oracle = oracle_from_channel(cfg, ch, ex._rng(spec.seed, 1))
    kw = ex._method_params(spec, method)
    outcome = train(cfg, oracle, method, M=spec.M, k_set=kw.get("k_set"), params=kw.get("params"))
    d = outcome.to_dict()
    d.update(snr_loss_db=snr_metrics(cfg, ch, outcome.chosen).snr_loss_db, seed=spec.seed,
             preset=spec.name, ue=list(ue), ref_snr_db=snr)
    print(json.dumps(d, sort_keys=True), file=out)
    return 0


def _cmd_sweep(rc: RunConfig, out) -> int:
    spec = build_spec(rc)
    tab = ex.snr_loss_sweep(spec)
    _emit_table(tab, rc.out_dir / f"sweep_{spec.name}.csv", out)
    return 0


def _cmd_overhead(rc: RunConfig, out) -> int:
    spec = build_spec(rc)
    tab = ex.overhead_report(spec)
    _emit_table(tab, rc.out_dir / f"overhead_{spec.name}.csv", out)
    return 0


_HANDLERS = {"field": _cmd_field, "nf-region": _cmd_nf_region, "accuracy": _cmd_accuracy,
             "train": _cmd_train, "sweep": _cmd_sweep, "overhead": _cmd_overhead}


# -- parser ----------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, seeded: bool) -> None:
    # defaults stay None so that config values are only overridden by given flags
    p.add_argument("--config", help="JSON file of options; flags override its values")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./beamdiverge_out)")
    p.add_argument("--nx", type=int, help="elements along x")
    p.add_argument("--nz", type=int, help="elements along z")
    p.add_argument("--f-ghz", type=float, help="carrier frequency in GHz")
    if seeded:
        p.add_argument("--seed", type=int, help="master seed (required)")
        p.add_argument("--preset", help=f"scenario preset: {', '.join(sorted(ex.PRESETS))}")
        p.add_argument("--M", dest="m", type=int, help="tangent-grid resolution exponent")
        p.add_argument("--k-set", help="refinement rings, e.g. 2,4,6")
        p.add_argument("--trials", type=int)
        p.add_argument("--snr", help="reference SNR(s) in dB, comma separated")
        p.add_argument("--rician", type=float, help="Rician factor in dB")
        p.add_argument("--L", dest="l", type=int, help="number of NLOS paths")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="beamdiverge",
                                 description="Near-field UPA beam training with diverging codewords.")
    sub = ap.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", required=True)

    p = sub.add_parser("field", help="export a codeword's amplitude heatmap on a y-plane")
    _common(p, seeded=False)
    p.add_argument("--kind", choices=("diverging", "focusing", "axis-diverging"))
    p.add_argument("--index", help="m,x,z frustum index (m,idx,_ for axis-diverging)")
    p.add_argument("--point", help="focal point x,y,z overriding --index")
    p.add_argument("--axis", choices=(HORIZONTAL, VERTICAL))
    p.add_argument("--y", type=float, help="plane depth in metres")
    p.add_argument("--resolution", type=int)
    p.add_argument("--extent", help="x0,x1,z0,z1")

    p = sub.add_parser("nf-region", help="near-field boundary distances and volume fraction")
    _common(p, seeded=False)
    p.add_argument("--samples", type=int, help="Monte Carlo samples for the volume fraction")
    p.add_argument("--seed", type=int, help="seed for --samples")

    p = sub.add_parser("accuracy", help="identification accuracy tables")
    _common(p, seeded=True)
    p.add_argument("--levels", help="codebook levels, comma separated")

    p = sub.add_parser("train", help="one training run; prints the outcome as JSON")
    _common(p, seeded=True)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--ue", help="UE position x,y,z in metres")

    p = sub.add_parser("sweep", help="SNR-loss sweep CSV")
    _common(p, seeded=True)
    p.add_argument("--methods", help="comma-separated subset of methods")

    p = sub.add_parser("overhead", help="pilot-overhead CSV")
    _common(p, seeded=True)
    p.add_argument("--methods", help="comma-separated subset of methods")
    return ap


def resolve(argv) -> RunConfig:
    """Parse ``argv`` and merge it over the optional config file."""
    ap = build_parser()
    ns = ap.parse_args(argv)
    flags = {k: v for k, v in vars(ns).items() if k not in ("config", "subcommand")}
    rc = load_config(ns.config) if ns.config else RunConfig()
    if ns.subcommand is None:
        if rc.subcommand is None:
            ap.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        ns.subcommand = rc.subcommand
    elif rc.subcommand not in (None, ns.subcommand):
        raise UsageError(f"config names subcommand {rc.subcommand!r}, command line {ns.subcommand!r}")
    rc = RunConfig(ns.subcommand, rc.options).merged(flags)
    if rc.subcommand in STOCHASTIC and rc.seed is None:
        raise UsageError(f"{rc.subcommand} is stochastic; --seed is required")
    return rc


def parse_and_dispatch(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        rc = resolve(argv)
        return _HANDLERS[rc.subcommand](rc, out)
    except SystemExit as e:
        # argparse: 0 after --help, 2 on bad flags
        return e.code if isinstance(e.code, int) else 2
    except UsageError as e:
        print(f"beamdiverge: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as e:
        print(f"beamdiverge: runtime error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
