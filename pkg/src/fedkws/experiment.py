"""Experiment spec files and the runners behind the CLI subcommands.

A spec file is a flat JSON object with a mandatory ``"version": 1`` entry.
Every other key must be a generator field, a ``FedConfig`` field, or one of
the run/landscape keys listed in ``RUN_KEYS`` / ``LANDSCAPE_KEYS``; anything
else is rejected.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import nn
from .alt import utilities_from_stats, write_allocation_csv
from .data import FederationData, GeneratorSpec, client_stats, export_federation, generate_federation, load_federation
from .engine import FedConfig, init_rng, run_federation, save_model, load_model, write_rounds_csv
from .errors import ConfigError
from .landscape import ProbeConfig, alo_probe, interpolation_landscape, overfit_probe, pretrain_centralized
from .metrics import accuracy

SPEC_VERSION = 1
GENERATOR_KEYS = {f.name for f in fields(GeneratorSpec)} - {"seed"}
RUN_KEYS = {"data_dir", "data_seed", "repeat", "threads", "record_timing"}
LANDSCAPE_KEYS = {
    "resolution", "probe_epochs", "probe_lr", "pretrain_steps",
    "theta0", "theta1", "theta2", "inferior_client", "qualified_client",
}
FINAL_WINDOW = 5


@dataclass
class ExperimentSpec:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    fed: FedConfig = field(default_factory=FedConfig)
    data_dir: str | None = None
    data_seed: int = 0
    repeat: int = 1
    threads: int = 1
    record_timing: bool = False
    landscape: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.repeat < 1:
            raise ConfigError("repeat must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def resolved(self) -> dict:
        out = {"version": SPEC_VERSION}
        gen = asdict(self.generator)
        gen.pop("seed")
        out.update(gen)
        out.update(self.fed.to_dict())
        out.update(data_dir=self.data_dir, data_seed=self.data_seed, repeat=self.repeat,
                   threads=self.threads, record_timing=self.record_timing)
        out.update(landscape_defaults(self.landscape))
        return out


def landscape_defaults(raw: dict) -> dict:
    d = {"resolution": 25, "probe_epochs": 20, "probe_lr": 0.05, "pretrain_steps": 3000,
         "theta0": None, "theta1": None, "theta2": None,
         "inferior_client": None, "qualified_client": None}
    d.update(raw)
    return d


def parse_spec(raw: dict) -> ExperimentSpec:
    if not isinstance(raw, dict):
        raise ConfigError("spec must be a JSON object")
    raw = dict(raw)
    version = raw.pop("version", None)
    if version != SPEC_VERSION:
        raise ConfigError(f"spec version must be {SPEC_VERSION}, got {version!r}")
    fed_keys = FedConfig.field_names()
    unknown = set(raw) - GENERATOR_KEYS - fed_keys - RUN_KEYS - LANDSCAPE_KEYS
    if unknown:
        raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
    gen = {k: raw[k] for k in GENERATOR_KEYS if k in raw}
    fed = {k: raw[k] for k in fed_keys if k in raw}
    if "hidden" in fed:
        fed["hidden"] = tuple(fed["hidden"])
    if fed.get("negative_classes") is not None:
        fed["negative_classes"] = tuple(fed["negative_classes"])
    run = {k: raw[k] for k in RUN_KEYS if k in raw}
    try:
        generator = GeneratorSpec(**gen)
        generator.validate()
        fedcfg = FedConfig(**fed)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentSpec(generator, fedcfg, landscape={k: raw[k] for k in LANDSCAPE_KEYS if k in raw},
                          **run)


def load_spec(path: str | Path | None) -> ExperimentSpec:
    if path is None:
        return ExperimentSpec()
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot read spec ({exc})") from exc
    try:
        return parse_spec(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def federation_for(spec: ExperimentSpec, repeat_idx: int = 0) -> FederationData:
    if spec.data_dir is not None:
        return load_federation(spec.data_dir)
    return generate_federation(replace(spec.generator, seed=spec.data_seed + repeat_idx))


def _write_stats_csv(data: FederationData, path: Path) -> None:
    C = data.num_classes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", "n", "entropy"] + [f"q{c}" for c in range(C)])
        for k, s in enumerate(client_stats(data)):
            w.writerow([k, s.n, repr(s.entropy)] + [repr(float(v)) for v in s.q])


def cmd_generate(spec: ExperimentSpec, out: str | Path) -> Path:
    data = generate_federation(replace(spec.generator, seed=spec.data_seed))
    out = export_federation(data, out)
    _write_stats_csv(data, out / "stats.csv")
    return out


def final_window_mean(accuracies) -> float:
    tail = list(accuracies)[-FINAL_WINDOW:]
    return float(np.mean(tail))


def cmd_run(spec: ExperimentSpec, out: str | Path, log=None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    per_seed = []
    for r in range(spec.repeat):
        seed = spec.fed.seed + r
        cfg = replace(spec.fed, seed=seed)
        data = federation_for(spec, r)
        result = run_federation(data, cfg, threads=spec.threads, record_timing=spec.record_timing)
        write_rounds_csv(result.records, out / f"rounds_seed{seed}.csv")
        save_model(result.final_model, out / f"model_seed{seed}.json")
        last = result.records[-1]
        entry = {
            "seed": seed,
            "data_seed": None if spec.data_dir else spec.data_seed + r,
            "final5_accuracy": final_window_mean(x.accuracy for x in result.records),
            "final_accuracy": last.accuracy,
            "final_fa": last.fa,
            "final_fr": last.fr,
            "final5_fa": final_window_mean(x.fa for x in result.records),
            "final5_fr": final_window_mean(x.fr for x in result.records),
            "r0": result.r0,
        }
        per_seed.append(entry)
        if log is not None:
            log(f"seed {seed}: final-5 accuracy {entry['final5_accuracy']:.4f}")
    accs = [e["final5_accuracy"] for e in per_seed]
    summary = {
        "config": spec.resolved(),
        "runs": per_seed,
        "final5_mean": float(np.mean(accs)),
        "final5_std": float(statistics.pstdev(accs)) if len(accs) > 1 else 0.0,
        "fa_mean": float(np.mean([e["final_fa"] for e in per_seed])),
        "fr_mean": float(np.mean([e["final_fr"] for e in per_seed])),
        "final5_fa_mean": float(np.mean([e["final5_fa"] for e in per_seed])),
        "final5_fr_mean": float(np.mean([e["final5_fr"] for e in per_seed])),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def pick_probe_clients(data: FederationData, min_n: int | None = None) -> tuple[int, int]:
    """(inferior, qualified) client indices for the fine-tuning probes.

    Inferior: lowest class entropy among clients owning at least ``min_n``
    samples (default: the mean client size), so the probe has enough data to
    overfit. Qualified: highest ALT utility.
    """
    stats = client_stats(data)
    sizes = np.array([s.n for s in stats])
    if min_n is None:
        min_n = int(np.ceil(sizes.mean()))
    ent = np.array([s.entropy if s.n >= min_n else np.inf for s in stats])
    inferior = int(np.argmin(ent))
    table, _ = utilities_from_stats(stats, 1)
    qualified = int(np.argmax([u.r_bar for u in table]))
    return inferior, qualified


PROBE_MODELS = ("theta0", "theta1", "theta2", "theta1_alo")


def probe_models(spec: ExperimentSpec, data: FederationData) -> dict:
    """Pretrained start, both client fine-tunes and the ALO counterpart of the inferior one."""
    ls = landscape_defaults(spec.landscape)
    probe = ProbeConfig(lr=float(ls["probe_lr"]), momentum=spec.fed.momentum,
                        batch_size=spec.fed.batch_size, seed=spec.fed.seed)
    model_spec = nn.mlp_spec(data.dim, data.num_classes, spec.fed.hidden, spec.fed.activation)
    theta0 = pretrain_centralized(nn.init_model(model_spec, init_rng(spec.fed.seed)),
                                  data.pooled(), int(ls["pretrain_steps"]), probe,
                                  mu=spec.fed.mu)
    inferior, qualified = pick_probe_clients(data)
    if ls["inferior_client"] is not None:
        inferior = int(ls["inferior_client"])
    if ls["qualified_client"] is not None:
        qualified = int(ls["qualified_client"])
    epochs = int(ls["probe_epochs"])
    theta1 = overfit_probe(theta0, data.clients[inferior], epochs, probe)
    theta2 = overfit_probe(theta0, data.clients[qualified], epochs, probe)
    theta1_alo = alo_probe(theta0, theta1, data.clients[inferior], epochs, probe,
                           mu=spec.fed.mu, lam=spec.fed.lam)
    return {"theta0": theta0, "theta1": theta1, "theta2": theta2, "theta1_alo": theta1_alo,
            "inferior_client": inferior, "qualified_client": qualified}


def cmd_landscape(spec: ExperimentSpec, out: str | Path, log=None) -> dict:
    """Write interpolation-landscape CSVs.

    With ``theta0/theta1/theta2`` model paths the grid spans those models.
    Otherwise a recipe runs: pretrain ``theta0`` on the pooled client data,
    fine-tune it on the lowest- and highest-utility clients, and also train an
    ALO counterpart of the inferior model; two grids are written.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ls = landscape_defaults(spec.landscape)
    data = federation_for(spec)
    test = data.global_test
    res = int(ls["resolution"])
    paths = [ls["theta0"], ls["theta1"], ls["theta2"]]
    written = {}
    if any(p is not None for p in paths):
        if any(p is None for p in paths):
            raise ConfigError("theta0, theta1 and theta2 must all be given")
        t0, t1, t2 = (load_model(p) for p in paths)
        grid = interpolation_landscape(t0, t1, t2, test, resolution=res, threads=spec.threads)
        grid.to_csv(out / "landscape.csv")
        written["landscape"] = str(out / "landscape.csv")
        return written

    probes = probe_models(spec, data)
    theta0, theta1, theta2, theta1_alo = (probes[k] for k in PROBE_MODELS)
    for name in PROBE_MODELS:
        save_model(probes[name], out / f"{name}.json")
    grid = interpolation_landscape(theta0, theta1, theta2, test, resolution=res, threads=spec.threads)
    grid.to_csv(out / "landscape.csv")
    grid_alo = interpolation_landscape(theta0, theta1_alo, theta2, test, resolution=res,
                                       threads=spec.threads)
    grid_alo.to_csv(out / "landscape_alo.csv")
    written = {
        "landscape": str(out / "landscape.csv"),
        "landscape_alo": str(out / "landscape_alo.csv"),
        "inferior_client": probes["inferior_client"],
        "qualified_client": probes["qualified_client"],
        "accuracy": {name: accuracy(probes[name], test) for name in PROBE_MODELS},
    }
    (out / "landscape_summary.json").write_text(json.dumps(written, indent=2, sort_keys=True) + "\n")
    if log is not None:
        log(json.dumps(written["accuracy"]))
    return written


def cmd_alloc_table(spec: ExperimentSpec, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = federation_for(spec)
    table, r0 = utilities_from_stats(client_stats(data), spec.fed.local_steps, spec.fed.r0_override)
    write_allocation_csv(table, out / "allocation.csv")
    (out / "allocation_summary.json").write_text(json.dumps(
        {"r0": r0, "E": spec.fed.local_steps, "num_clients": len(table),
         "total_steps": int(sum(u.steps for u in table))}, indent=2, sort_keys=True) + "\n")
    return out / "allocation.csv"
