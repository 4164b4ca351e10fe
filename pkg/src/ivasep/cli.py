"""
Command-line interface.

``ivasep separate``  separate a multichannel WAV file
``ivasep simulate``  generate a synthetic mixture from a JSON description
``ivasep bench``     run a benchmark suite and write CSV/JSON results

Exit codes: 0 success, 1 I/O or numerical failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np
from scipy.io import wavfile

from . import __version__
from .core import InvalidInputError, NumericDegeneracyError, SeparationConfig
from .pipeline import ALGORITHMS, evaluate_mixture, separate_audio
from .simulator import SOURCE_KINDS, MixtureSpec, generate
from .stft import AudioBuffer

SCHEMA_VERSION = 1
MODELS = ("gauss", "laplace")

SEPARATE_DEFAULTS = {"algo": "overiva", "model": "gauss", "sources": 1, "iters": 100, "frame": 4096, "seed": 0}

BENCH_COLUMNS = [
    "M",
    "K",
    "algo",
    "model",
    "n_seeds",
    "runtime_median_s",
    "runtime_ratio_auxiva",
    "sdr_improvement_median_db",
    "sdr_improvement_q1_db",
    "sdr_improvement_q3_db",
]

_SCENARIO_PROPERTIES = {
    "n_interferers": {"type": "integer", "minimum": 0},
    "filter_length": {"type": "integer", "minimum": 1},
    "target_snr": {"type": "number"},
    "target_sinr": {"type": ["number", "null"]},
    "source_kind": {"enum": list(SOURCE_KINDS)},
    "duration": {"type": "number", "exclusiveMinimum": 0},
    "sample_rate": {"type": "integer", "minimum": 1},
    "wav_files": {"type": "array", "items": {"type": "string"}},
    "ref_mic": {"type": "integer", "minimum": 0},
}

MIXTURE_SCHEMA = {
    "type": "object",
    "properties": {
        "n_mics": {"type": "integer", "minimum": 1},
        "n_targets": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        **_SCENARIO_PROPERTIES,
    },
    "additionalProperties": False,
}

SUITE_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "defaults": {
            "type": "object",
            "properties": {
                "iters": {"type": "integer", "minimum": 1},
                "frame": {"type": "integer", "minimum": 4},
                "metric": {"enum": ["si_sdr", "filtered_sdr"]},
                "filter_taps": {"type": "integer", "minimum": 1},
                "scenario": {"type": "object", "properties": _SCENARIO_PROPERTIES, "additionalProperties": False},
            },
            "additionalProperties": False,
        },
        "cells": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "M": {"type": "integer", "minimum": 1},
                    "K": {"type": "integer", "minimum": 1},
                    "algo": {"enum": list(ALGORITHMS)},
                    "model": {"enum": list(MODELS)},
                    "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                    "scenario": {"type": "object", "properties": _SCENARIO_PROPERTIES, "additionalProperties": False},
                },
                "required": ["M", "K", "algo", "model", "seeds"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["cells"],
    "additionalProperties": False,
}


class UsageError(Exception):
    pass


def _fail(code, msg):
    print(f"ivasep: error: {msg}", file=sys.stderr)
    return code


# ---------------------------------------------------------------- I/O helpers


def read_wav(path) -> AudioBuffer:
    """Read 16-bit PCM or floating point WAV into a ``(channels, samples)`` buffer."""
    fs, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(float) / 2.0 ** 31
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(float)
    else:
        raise OSError(f"{path}: unsupported sample format {data.dtype}")
    return AudioBuffer(np.atleast_2d(x.T), fs)


def write_wav(path, samples, sample_rate):
    wavfile.write(path, int(sample_rate), np.asarray(samples, dtype=np.float32).T)


def _load_json(path, schema):
    with open(path) as fh:
        doc = json.load(fh)
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as e:
        where = e.json_path if e.path else "$"
        raise UsageError(f"{path}: invalid field {where}: {e.message}") from None
    return doc


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ------------------------------------------------------------------ commands


def _separate_config(args):
    sidecar = {}
    if args.from_sidecar:
        with open(args.from_sidecar) as fh:
            sidecar = json.load(fh).get("config", {})
    cfg = {}
    for key, default in SEPARATE_DEFAULTS.items():
        value = getattr(args, key)
        cfg[key] = value if value is not None else sidecar.get(key, default)
    inp = args.input if args.input is not None else sidecar.get("input")
    if inp is None:
        raise UsageError("no input WAV given")
    cfg["input"] = str(inp)
    return cfg


def cmd_separate(args):
    cfg = _separate_config(args)
    if cfg["algo"] not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {cfg['algo']!r}")
    if cfg["model"] not in MODELS:
        raise UsageError(f"unknown model {cfg['model']!r}")
    audio = read_wav(cfg["input"])
    if cfg["sources"] > audio.n_channels:
        raise UsageError(
            f"--sources {cfg['sources']} exceeds the {audio.n_channels} channels of {cfg['input']}"
        )
    scfg = SeparationConfig(n_src=cfg["sources"], model=cfg["model"], max_iters=cfg["iters"])
    out, sep = separate_audio(audio, scfg, cfg["algo"], cfg["frame"])

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for k in range(out.n_channels):
        name = f"source_{k}.wav"
        write_wav(out_dir / name, out.samples[k], out.sample_rate)
        names.append(name)
    _write_json(
        out_dir / "separation.json",
        {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "config": cfg,
            "sample_rate": audio.sample_rate,
            "n_channels": audio.n_channels,
            "outputs": names,
            "runtime_s": sep.runtime,
            "objective_trace": sep.trace.tolist(),
            "orthogonality_residuals": sep.orthogonality.tolist(),
            "selected_outputs": None if sep.selected is None else sep.selected.tolist(),
        },
    )
    return 0


def _mixture_spec(doc):
    try:
        return MixtureSpec(**doc)
    except TypeError as e:
        raise UsageError(str(e)) from None


def cmd_simulate(args):
    doc = _load_json(args.spec, MIXTURE_SCHEMA)
    spec = _mixture_spec(doc)
    mix, truth = generate(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(out_dir / "mixture.wav", mix.samples, mix.sample_rate)
    refs = []
    for k, img in enumerate(truth.images):
        name = f"reference_{k}.wav"
        write_wav(out_dir / name, img, mix.sample_rate)
        refs.append(name)
    _write_json(
        out_dir / "truth.json",
        {
            "schema_version": SCHEMA_VERSION,
            "spec": spec.to_dict(),
            "mixture": "mixture.wav",
            "references": refs,
            **truth.summary(),
        },
    )
    return 0


def _quartiles(values):
    if len(values) == 0:
        return [float("nan")] * 3
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    return [float(med), float(q1), float(q3)]


def run_bench(suite):
    """Evaluate every cell of a validated suite; returns a list of cell results."""
    defaults = suite.get("defaults", {})
    iters = defaults.get("iters", 100)
    frame = defaults.get("frame", 512)
    metric = defaults.get("metric", "si_sdr")
    taps = defaults.get("filter_taps", 512)
    base_scenario = defaults.get("scenario", {})

    auxiva_cache = {}
    results = []
    for cell in suite["cells"]:
        M, K, algo, model = cell["M"], cell["K"], cell["algo"], cell["model"]
        if K > M:
            raise UsageError(f"cell with K={K} sources exceeds M={M} microphones")
        scenario = {**base_scenario, **cell.get("scenario", {})}
        cfg = SeparationConfig(n_src=K, model=model, max_iters=iters, compute_objective=False)
        runs = []
        for seed in cell["seeds"]:
            spec = _mixture_spec({**scenario, "n_mics": M, "n_targets": K, "seed": seed})
            mix, truth = generate(spec)
            imp, sep = evaluate_mixture(mix, truth, cfg, algo, frame, metric, taps)
            key = (M, K, model, seed, json.dumps(scenario, sort_keys=True))
            if algo == "auxiva":
                auxiva_cache[key] = sep.runtime
            elif key not in auxiva_cache:
                _, ref = evaluate_mixture(mix, truth, cfg, "auxiva", frame, metric, taps)
                auxiva_cache[key] = ref.runtime
            runs.append(
                {
                    "seed": seed,
                    "runtime_s": sep.runtime,
                    "auxiva_runtime_s": auxiva_cache[key],
                    "sdr_improvement_db": imp.improvement.tolist(),
                    "sdr_db": imp.sdr.tolist(),
                    "baseline_sdr_db": imp.baseline.tolist(),
                    "realized_snr_db": truth.realized_snr,
                    "realized_sinr_db": truth.realized_sinr,
                }
            )
        runtime = float(np.median([r["runtime_s"] for r in runs]))
        ref_runtime = float(np.median([r["auxiva_runtime_s"] for r in runs]))
        med, q1, q3 = _quartiles(np.concatenate([r["sdr_improvement_db"] for r in runs]))
        summary = dict(zip(BENCH_COLUMNS, [M, K, algo, model, len(runs), runtime, runtime / ref_runtime, med, q1, q3]))
        results.append({**summary, "scenario": scenario, "runs": runs})
    return results


def cmd_bench(args):
    suite = _load_json(args.suite, SUITE_SCHEMA)
    results = run_bench(suite)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bench.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(results)
    _write_json(out_dir / "bench.json", {"schema_version": SCHEMA_VERSION, "suite": suite, "cells": results})
    return 0


# -------------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="ivasep", description="Blind source separation with OverIVA.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("separate", help="separate a multichannel WAV file")
    p.add_argument("input", nargs="?", help="multichannel WAV (16-bit PCM or float)")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--sources", type=int, help="number of sources K (default 1)")
    p.add_argument("--iters", type=int, help="number of sweeps (default 100)")
    p.add_argument("--frame", type=int, help="STFT frame size (default 4096)")
    p.add_argument("--seed", type=int, help="recorded in the sidecar; the solvers are deterministic")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--from-sidecar", help="reuse the configuration of an earlier run")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("simulate", help="generate a synthetic mixture")
    p.add_argument("spec", help="JSON mixture description")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("suite", help="JSON suite description")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidInputError) as e:
        return _fail(2, e)
    except NumericDegeneracyError as e:
        return _fail(1, f"numerical failure: {e}")
    except (OSError, ValueError) as e:
        return _fail(1, e)


if __name__ == "__main__":
    sys.exit(main())
