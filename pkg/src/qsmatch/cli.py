"""Command-line front end.

Exit codes: 0 success, 1 domain failure, 2 usage, config or input-file error.
Outputs go to ``--out`` or, when absent, to ``$QSM_OUTPUT_DIR`` or the
current directory.  Each command writes ``<command>.manifest.json`` there.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml
from pydantic import ValidationError

from . import __version__
from .kak_decomposer import RECONSTRUCTION_TOL, DecompositionError, synthesize, verify_decomposition
from .mitigation import (
    DEFAULT_CALIBRATION_SHOTS,
    ConfusionMatrix,
    SingularConfusionError,
    build_confusion,
    mitigate_record_outcomes,
    run_calibration,
)
from .report import render_svg
from .stats_harness import CsvFormatError, ExperimentConfig, read_records_csv, run_sweep
from .unitary_builder import build_u_epsilon

OUTPUT_ENV = "QSM_OUTPUT_DIR"
EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments, config or input files (exit code 2)."""


class DomainError(Exception):
    """The computation itself failed (exit code 1)."""


@dataclass
class RunManifest:
    command: str
    config_hash: Optional[str]
    config_path: Optional[str]
    output_dir: str
    artifacts: list = field(default_factory=list)
    toolkit_version: str = __version__
    timestamp: str = ""

    def write(self, out: Path) -> Path:
        missing = [a for a in self.artifacts if not Path(a).exists()]
        if missing:
            raise DomainError(f"artifacts missing after run: {missing}")
        self.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        path = out / f"{self.command}.manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")
        return path


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the validated config, so key order, defaults and formatting do not matter."""
    canon = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path: Optional[str], seed: Optional[int] = None, shots: Optional[int] = None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise UsageError(f"config is not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config must be a mapping of keys to values")
    if seed is not None:
        raw["seed"] = seed
    if shots is not None:
        raw["shots"] = shots
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise UsageError(format_validation_error(exc)) from None


def format_validation_error(exc: ValidationError) -> str:
    unknown, other = [], []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        if err["type"] == "extra_forbidden":
            unknown.append(loc)
        else:
            other.append(f"{loc or '<config>'}: {err['msg']}")
    lines = []
    if unknown:
        lines.append("unknown config keys: " + ", ".join(unknown))
    lines.extend(other)
    return "invalid config\n  " + "\n  ".join(lines)


def output_dir(arg: Optional[str]) -> Path:
    out = Path(arg or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_text(path: str, what: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p.read_text()


def _epsilon(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (0.0 < v <= 1.0):
        raise argparse.ArgumentTypeError(f"epsilon must satisfy 0 < eps <= 1, got {v:g}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


# --- commands ------------------------------------------------------------------------

def cmd_decompose(args: argparse.Namespace) -> int:
    out = output_dir(args.out)
    try:
        seq = synthesize(args.epsilon)
    except DecompositionError as exc:
        raise DomainError(str(exc)) from None
    residual = verify_decomposition(seq, build_u_epsilon(args.epsilon))
    path = out / f"gate_sequence_eps{args.epsilon:g}.json"
    path.write_text(seq.to_json() + "\n")
    RunManifest("decompose", None, None, str(out), [str(path)]).write(out)
    print(f"epsilon={args.epsilon:g} branch={seq.branch} cnot_count={seq.cnot_count} residual={residual:.3e}")
    print(f"wrote {path}")
    return EXIT_OK if residual <= RECONSTRUCTION_TOL else EXIT_DOMAIN


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.seed, args.shots)
    out = output_dir(args.out)
    result = run_sweep(config)
    csv_path, summary_path = out / "sweep.csv", out / "summary.json"
    csv_path.write_text(result.to_csv())
    summary_path.write_text(json.dumps(result.summary(), indent=2) + "\n")
    RunManifest("sweep", config_hash(config), args.config, str(out), [str(csv_path), str(summary_path)]).write(out)
    frac = result.summary()["device_error_fraction"]
    print(f"{len(result.records)} records, device-error fraction {frac:.4f}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def _load_records(path: str):
    try:
        return read_records_csv(_read_text(path, "sweep CSV"))
    except CsvFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_plot(args: argparse.Namespace) -> int:
    records = _load_records(args.csv)
    if not records:
        raise DomainError("sweep CSV contains no records; nothing plotted")
    out = output_dir(args.out)
    svg = render_svg(records, args.kind)
    path = out / f"{args.kind}.svg"
    path.write_text(svg)
    RunManifest("plot", None, None, str(out), [str(path)]).write(out)
    print(f"wrote {path}")
    return EXIT_OK


def _load_confusion(path: str) -> ConfusionMatrix:
    try:
        return ConfusionMatrix.from_json(_read_text(path, "confusion file"))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{path}: invalid confusion matrix: {exc}") from None


def cmd_mitigate(args: argparse.Namespace) -> int:
    text = _read_text(args.csv, "sweep CSV")
    records = _load_records(args.csv)
    confusion = _load_confusion(args.confusion)
    corrected_p, corrected_t = [], []
    for r in records:
        if not r.outcomes:
            raise UsageError(f"{args.csv}: record without outcome table cannot be mitigated")
        try:
            m = mitigate_record_outcomes(r.epsilon, r.iterations, r.outcomes, confusion)
        except SingularConfusionError as exc:
            raise DomainError(str(exc)) from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        corrected_p.append(repr(m.p_est))
        corrected_t.append("" if m.theta1_est is None else repr(m.theta1_est))
    rows = [row for row in csv.reader(io.StringIO(text)) if row]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(rows[0] + ["p_est_mitigated", "theta1_est_mitigated"])
    for row, p, t in zip(rows[1:], corrected_p, corrected_t):
        w.writerow(row + [p, t])
    out = output_dir(args.out)
    path = out / "mitigated.csv"
    path.write_text(buf.getvalue())
    RunManifest("mitigate", None, None, str(out), [str(path)]).write(out)
    print(f"corrected {len(records)} records; wrote {path}")
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.seed)
    out = output_dir(args.out)
    shots = args.shots or DEFAULT_CALIBRATION_SHOTS
    confusion = build_confusion(run_calibration(config.noise.to_spec(), shots, config.seed))
    path = out / "confusion.json"
    path.write_text(confusion.to_json() + "\n")
    RunManifest("calibrate", config_hash(config), args.config, str(out), [str(path)]).write(out)
    print(f"condition number {confusion.condition():.4g}; wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsmatch", description="Post-selected state-matching toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="synthesize the two-CNOT circuit for one epsilon")
    p.add_argument("--epsilon", type=_epsilon, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("sweep", help="run a configured parameter sweep")
    p.add_argument("--config", help="YAML config; defaults apply when omitted")
    p.add_argument("--seed", type=int)
    p.add_argument("--shots", type=_positive_int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render a sweep CSV as SVG")
    p.add_argument("csv")
    p.add_argument("--kind", choices=["success", "theta1"], default="success")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("mitigate", help="add readout-corrected estimates to a sweep CSV")
    p.add_argument("csv")
    p.add_argument("--confusion", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("calibrate", help="simulate basis-state calibration under the configured noise")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--shots", type=_positive_int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
