"""File formats: CSV artifacts with JSON sidecars.

All writers format floats via repr (shortest round-trip) except sample times,
which use nine decimal digits; byte-identical reruns only need identical
inputs and seeds.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import DiscreteTrace, LevelLadder, StepFunction
from .idealise import Idealisation
from .model import CooperativityReport, ParamVector
from .synth import Kernel, NoiseSpec, Recording, RecordingTruth


def _f(x) -> str:
    return repr(float(x))


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def meta_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def theta_to_dict(theta: ParamVector) -> dict:
    return {"L": theta.L, "lam": [float(v) for v in theta.lam],
            "eta": [float(v) for v in theta.eta]}


def theta_from_dict(d) -> ParamVector:
    return ParamVector(d["L"], np.asarray(d["lam"]), np.asarray(d["eta"]))


def kernel_to_dict(kernel: Kernel) -> dict:
    out = {"kind": kernel.kind, "taps": [float(t) for t in kernel.taps],
           "sample_rate": float(kernel.sample_rate)}
    if kernel.order is not None:
        out["order"] = int(kernel.order)
    if kernel.cutoff is not None:
        out["cutoff"] = float(kernel.cutoff)
    return out


def kernel_from_dict(d) -> Kernel:
    return Kernel(d["kind"], np.asarray(d["taps"]), d["sample_rate"],
                  order=d.get("order"), cutoff=d.get("cutoff"))


def noise_to_dict(spec: NoiseSpec | None) -> dict | None:
    if spec is None:
        return None
    return {"kind": spec.kind, "sigma": spec.sigma, "scale": spec.scale,
            "weight_gaussian": spec.weight_gaussian, "filtered": spec.filtered}


def noise_from_dict(d) -> NoiseSpec | None:
    if d is None:
        return None
    return NoiseSpec(**d)


def write_recording(recording: Recording, path) -> None:
    """CSV with a `time,current` header plus a .meta.json sidecar holding the
    sampling rate, kernel, noise spec and simulation truth."""
    path = Path(path)
    times = recording.times()
    lines = ["time,current"]
    lines += [f"{t:.9f},{_f(v)}" for t, v in zip(times, recording.samples)]
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "sample_rate": float(recording.sample_rate),
        "kernel": kernel_to_dict(recording.kernel),
        "n_samples": len(recording),
    }
    if recording.truth is not None:
        truth = recording.truth
        meta["truth"] = {
            "theta": theta_to_dict(truth.theta),
            "step_breaks": [float(b) for b in truth.step.breaks],
            "step_levels": [float(v) for v in truth.step.levels],
            "values": [int(v) for v in truth.discrete.values],
            "ladder": {"L": truth.discrete.ladder.L,
                       "offset": truth.discrete.ladder.offset,
                       "spacing": truth.discrete.ladder.spacing},
            "noise": noise_to_dict(truth.noise),
            "seed": truth.seed if isinstance(truth.seed, int) else str(truth.seed),
        }
    dump_json(meta, meta_path(path))


def read_recording(path, sample_rate: float | None = None) -> Recording:
    """Read a two-column CSV (with or without a header); the sidecar
    .meta.json restores the kernel and truth when present, otherwise the
    sampling rate must be supplied and an identity kernel is assumed."""
    path = Path(path)
    rows = path.read_text().strip().splitlines()
    if rows and not rows[0][0].isdigit() and not rows[0].lstrip().startswith(("-", "+", ".")):
        rows = rows[1:]
    data = np.array([[float(c) for c in row.split(",")[:2]] for row in rows])
    samples = data[:, 1]
    meta_file = meta_path(path)
    truth = None
    if meta_file.exists():
        meta = load_json(meta_file)
        kernel = kernel_from_dict(meta["kernel"])
        rate = float(meta["sample_rate"])
        if "truth" in meta:
            t = meta["truth"]
            ladder = LevelLadder(**t["ladder"])
            truth = RecordingTruth(
                theta=theta_from_dict(t["theta"]),
                step=StepFunction(np.asarray(t["step_breaks"]), np.asarray(t["step_levels"])),
                discrete=DiscreteTrace(values=np.asarray(t["values"]), ladder=ladder),
                noise=noise_from_dict(t.get("noise")),
                seed=t.get("seed"),
            )
    else:
        if sample_rate is None:
            # infer the rate from the time column spacing
            dt = np.diff(data[:, 0])
            if len(dt) == 0 or dt.min() <= 0:
                raise ValueError("cannot infer sample rate; pass it explicitly")
            sample_rate = 1.0 / float(np.median(dt))
        rate = float(sample_rate)
        kernel = Kernel("identity", np.array([1.0]), rate)
    return Recording(samples=samples, sample_rate=rate, kernel=kernel, truth=truth)


def write_idealisation(ideal: Idealisation, path) -> None:
    path = Path(path)
    lines = ["segment_start_time,segment_end_time,level"]
    breaks = ideal.fit.breaks
    for j, level in enumerate(ideal.fit.levels):
        lines.append(f"{breaks[j]:.9f},{breaks[j + 1]:.9f},{_f(level)}")
    path.write_text("\n".join(lines) + "\n")
    dump_json({
        "alpha": ideal.alpha,
        "n_switches": ideal.n_switches,
        "feasible": ideal.feasible,
        "sample_rate": ideal.sample_rate,
    }, meta_path(path))


def read_idealisation(path) -> Idealisation:
    path = Path(path)
    rows = path.read_text().strip().splitlines()[1:]
    starts, ends, levels = [], [], []
    for row in rows:
        a, b, lvl = row.split(",")
        starts.append(float(a))
        ends.append(float(b))
        levels.append(float(lvl))
    meta = load_json(meta_path(path))
    fit = StepFunction(np.asarray(starts + ends[-1:]), np.asarray(levels))
    return Idealisation(fit=fit, alpha=meta["alpha"], n_switches=meta["n_switches"],
                        feasible=meta["feasible"], sample_rate=meta["sample_rate"])


def write_discrete(trace: DiscreteTrace, sample_rate: float, path) -> None:
    path = Path(path)
    times = np.arange(1, len(trace) + 1) / sample_rate
    lines = ["time,open_channels"]
    lines += [f"{t:.9f},{int(v)}" for t, v in zip(times, trace.values)]
    path.write_text("\n".join(lines) + "\n")
    dump_json({
        "sample_rate": float(sample_rate),
        "ladder": {"L": trace.ladder.L, "offset": trace.ladder.offset,
                   "spacing": trace.ladder.spacing, "sse": trace.ladder.sse},
    }, meta_path(path))


def read_discrete(path) -> tuple[DiscreteTrace, float]:
    path = Path(path)
    rows = path.read_text().strip().splitlines()[1:]
    values = np.array([int(row.split(",")[1]) for row in rows])
    meta = load_json(meta_path(path))
    ladder = LevelLadder(L=meta["ladder"]["L"], offset=meta["ladder"]["offset"],
                         spacing=meta["ladder"]["spacing"], sse=meta["ladder"].get("sse", 0.0))
    return DiscreteTrace(values=values, ladder=ladder), float(meta["sample_rate"])


def write_histogram(bin_left, bin_right, count, path) -> None:
    lines = ["bin_left,bin_right,count"]
    lines += [f"{_f(a)},{_f(b)},{_f(c)}" for a, b, c in zip(bin_left, bin_right, count)]
    Path(path).write_text("\n".join(lines) + "\n")


def report_to_dict(report: CooperativityReport, fit_diagnostics: dict | None = None,
                   objective: float | None = None, metrics: dict | None = None) -> dict:
    out = {
        "theta_hat": theta_to_dict(report.theta_hat),
        "lambda_ratios": [float(v) for v in report.lambda_ratios],
        "eta_open_ratios": [float(v) for v in report.eta_open_ratios],
        "eta_close_ratios": [float(v) for v in report.eta_close_ratios],
        "verdict": report.verdict.value,
        "tolerance": report.tolerance,
    }
    if objective is not None:
        out["objective"] = float(objective)
    if fit_diagnostics is not None:
        out["diagnostics"] = fit_diagnostics
    if metrics is not None:
        out["metrics"] = metrics
    return out
