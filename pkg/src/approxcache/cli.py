"""Command line entry points: run, profile, compare, serve and synth.

Every command reads an optional JSON config (see :mod:`approxcache.config`);
flags given on the command line override the file. Exit codes: 0 on success,
2 for configuration errors, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import signal
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backend import UNREACHABLE, SyntheticBackend
from .config import ConfigError, ExperimentConfig
from .domain import DegenerateEmbeddingError, PromptRecord
from .pipeline import Pipeline, RunReport, compute_savings, overall_hit_rate
from .policy import PolicyKind
from .selector import SimKMap, profile, similarity_sweep
from .workload import replay_trace, synth_stream, write_trace

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


# -- command implementations ----------------------------------------------------


def load_records(exp: ExperimentConfig) -> list[PromptRecord]:
    if exp.trace is not None:
        return replay_trace(exp.trace).records
    return list(synth_stream(exp.synth))


def load_simk(exp: ExperimentConfig, backend: Optional[SyntheticBackend] = None) -> SimKMap:
    if exp.simk_path is not None:
        try:
            return SimKMap.load(exp.simk_path)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad threshold map {exp.simk_path}: {exc}") from None
    backend = backend or SyntheticBackend(exp.backend_config(), ks=exp.ks, embed_dim=exp.synth.dim)
    return profile(backend, similarity_sweep(backend), exp.ks, exp.alpha)


def _split(exp: ExperimentConfig, records):
    # the head of the workload warms the cache; the rest is measured
    return records[: exp.preload], records[exp.preload:]


def _report_doc(report: RunReport, exp: ExperimentConfig) -> RunReport:
    report.config = report.config | {"experiment": exp.to_dict()}
    return report


def cmd_run(exp: ExperimentConfig, simk: Optional[SimKMap] = None) -> RunReport:
    """Preload, stream the workload, write the report and the per-request outcome log."""
    exp.validate()
    records = load_records(exp)
    pipe = Pipeline(exp.pipeline_config(), simk=simk or load_simk(exp))
    warm, stream = _split(exp, records)
    if not stream:
        raise ConfigError("workload has no requests left after preload")
    pipe.preload(warm)
    sink = open(exp.outcomes_path, "w") if exp.outcomes_path else None
    try:
        on_outcome = None
        if sink is not None:
            on_outcome = lambda o: sink.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")
        pipe.run(stream, on_outcome)
    finally:
        if sink is not None:
            sink.close()
    report = _report_doc(pipe.report(exp.prices), exp)
    if exp.report_path:
        Path(exp.report_path).write_text(report.to_json() + "\n")
    return report


def simk_table(simk: SimKMap) -> str:
    lines = [f"{'K':>4} {'min similarity':>15}"]
    for k, s in simk.thresholds:
        shown = "unreachable" if s >= UNREACHABLE else f"{s:.4f}"
        lines.append(f"{k:>4} {shown:>15}")
    return "\n".join(lines)


def cmd_profile(exp: ExperimentConfig, out=None, step: float = 0.005) -> SimKMap:
    exp.validate()
    backend = SyntheticBackend(exp.backend_config(), ks=exp.ks, embed_dim=exp.synth.dim)
    simk = profile(backend, similarity_sweep(backend, step=step, seed=exp.seed), exp.ks, exp.alpha)
    if out is not None:
        simk.save(out)
    return simk


@dataclasses.dataclass(frozen=True)
class CompareRow:
    policy: str
    capacity: int
    hit_rate: float
    compute_savings: float


def cmd_compare(exp: ExperimentConfig, policies: Sequence[str],
                capacities: Sequence[int]) -> list[CompareRow]:
    """One run per (policy, capacity) on the same workload and threshold map."""
    if len(policies) < 2:
        raise ConfigError("compare needs at least two policies")
    exp.validate()
    try:
        kinds = [PolicyKind(p) for p in policies]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if any(c < len(exp.ks) for c in capacities):
        raise ConfigError("every capacity must hold at least one prompt's states")
    records = load_records(exp)
    warm, stream = _split(exp, records)
    simk = load_simk(exp)
    rows = []
    for cap, kind in itertools.product(capacities, kinds):
        pipe = Pipeline(exp.pipeline_config(policy=kind, capacity_items=cap), simk=simk)
        pipe.preload(warm)
        report = pipe.run(stream)
        rows.append(CompareRow(kind.value, cap, overall_hit_rate(report), compute_savings(report)))
    return rows


def compare_table(rows: Sequence[CompareRow]) -> str:
    lines = [f"{'policy':<8} {'capacity':>9} {'hit-rate':>9} {'savings':>9}"]
    for r in rows:
        lines.append(f"{r.policy:<8} {r.capacity:>9} {r.hit_rate:>9.4f} {r.compute_savings:>9.4f}")
    return "\n".join(lines)


# -- service ----------------------------------------------------------------------


class BadRequest(ValueError):
    pass


def parse_request(body: bytes, dim: int, serial: int) -> PromptRecord:
    try:
        doc = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadRequest(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise BadRequest("request must be a JSON object")
    text, emb = doc.get("text"), doc.get("embedding")
    if text is None and emb is None:
        raise BadRequest("request needs 'text' or 'embedding'")
    if text is not None and (not isinstance(text, str) or not text):
        raise BadRequest("'text' must be a non-empty string")
    if emb is not None:
        try:
            emb = np.asarray(emb, dtype=np.float64)
        except (TypeError, ValueError):
            raise BadRequest("'embedding' must be a list of numbers") from None
        if emb.shape != (dim,):
            raise BadRequest(f"'embedding' must have {dim} components")
    pid = doc.get("id")
    pid = f"req{serial:07d}" if pid is None else str(pid)
    try:
        return PromptRecord(pid, str(doc.get("user", "")), serial, text=text, embedding=emb)
    except (DegenerateEmbeddingError, ValueError) as exc:
        raise BadRequest(str(exc)) from None


class CacheService:
    """HTTP front end: ``POST /generate`` and ``GET /metrics``.

    Connections are handled on threads but generation goes through one lock,
    so requests are served one at a time.
    """

    def __init__(self, exp: ExperimentConfig, pipeline: Pipeline, host="127.0.0.1", port=0):
        self.exp = exp
        self.pipeline = pipeline
        self._lock = threading.Lock()
        self._serial = 0
        self._outcomes = open(exp.outcomes_path, "a") if exp.outcomes_path else None
        self.httpd = ThreadingHTTPServer((host, port), self._handler())
        self.httpd.daemon_threads = True

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    def metrics(self) -> dict:
        report = self.pipeline.report(self.exp.prices)
        if report.total_requests == 0:
            return {"total_requests": 0}
        return _report_doc(report, self.exp).to_dict()

    def generate(self, body: bytes) -> dict:
        with self._lock:
            self._serial += 1
            p = parse_request(body, self.pipeline.config.dim, self._serial)
            outcome = self.pipeline.handle_prompt(p)
            doc = outcome.to_dict()
            if self._outcomes is not None:
                self._outcomes.write(json.dumps(doc, sort_keys=True) + "\n")
                self._outcomes.flush()
            return doc

    def _handler(self):
        service = self

        class Handler(BaseHTTPRequestHandler):
            def _send(self, code: int, doc: dict) -> None:
                body = json.dumps(doc, sort_keys=True).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path.rstrip("/") == "/metrics":
                    self._send(200, service.metrics())
                else:
                    self._send(404, {"error": f"no route {self.path}"})

            def do_POST(self):
                if self.path.rstrip("/") != "/generate":
                    self._send(404, {"error": f"no route {self.path}"})
                    return
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length)
                try:
                    self._send(200, service.generate(body))
                except BadRequest as exc:
                    self._send(400, {"error": str(exc)})
                except Exception as exc:  # keep serving after a failed generation
                    log.exception("generation failed")
                    self._send(500, {"error": str(exc)})

            def log_message(self, fmt, *args):
                log.debug("%s " + fmt, self.address_string(), *args)

        return Handler

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def shutdown(self) -> None:
        """Stop accepting requests and flush the report."""
        self.httpd.shutdown()
        self.httpd.server_close()
        with self._lock:
            if self._outcomes is not None:
                self._outcomes.close()
                self._outcomes = None
            if self.exp.report_path:
                Path(self.exp.report_path).write_text(json.dumps(self.metrics(), indent=2,
                                                                 sort_keys=True) + "\n")


def build_service(exp: ExperimentConfig, host="127.0.0.1", port=0) -> CacheService:
    exp.validate()
    pipe = Pipeline(exp.pipeline_config(), simk=load_simk(exp))
    if exp.preload:
        pipe.preload(load_records(exp)[: exp.preload])
    return CacheService(exp, pipe, host, port)


def cmd_serve(exp: ExperimentConfig, port: int, host: str = "127.0.0.1") -> None:
    service = build_service(exp, host, port)
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    worker = threading.Thread(target=service.serve_forever, daemon=True)
    worker.start()
    print(f"serving on http://{service.address[0]}:{service.address[1]}", flush=True)
    stop.wait()
    service.shutdown()


# -- argument parsing ------------------------------------------------------------------


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _int_list(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")


# flag dest -> config key, for flags that map one-to-one
_TOP_LEVEL = {
    "policy": "policy", "capacity_items": "capacity_items", "match_predictor": "match_predictor",
    "mp_centroids": "mp_centroids", "mp_threshold_quantile": "mp_threshold_quantile",
    "alpha": "alpha", "ks": "ks", "n_steps": "n_steps", "decay": "decay",
    "freeze_step": "freeze_step", "selector_offset": "selector_offset", "simk": "simk_path",
    "trace": "trace", "preload": "preload", "seed": "seed", "report": "report_path",
    "outcomes": "outcomes_path",
}
_SYNTH = {
    "prompts": "total_prompts", "clusters": "n_clusters", "zipf": "zipf_exponent",
    "sigma": "sigma", "users": "n_users", "session_length": "session_length",
    "repeat_prob": "repeat_prob",
}


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--policy", choices=[k.value for k in PolicyKind])
    p.add_argument("--capacity-items", type=int)
    p.add_argument("--match-predictor", type=_on_off, metavar="{on,off}")
    p.add_argument("--mp-centroids", type=int)
    p.add_argument("--mp-threshold-quantile", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--ks", type=_int_list, help="comma-separated skip steps, e.g. 5,10,15,20,25")
    p.add_argument("--n-steps", type=int)
    p.add_argument("--decay", type=float)
    p.add_argument("--freeze-step", type=int)
    p.add_argument("--selector-offset", type=int)
    p.add_argument("--simk", help="threshold map JSON; profiled on the fly when omitted")
    p.add_argument("--trace", help="JSON Lines prompt trace; synthetic stream when omitted")
    p.add_argument("--preload", type=int, help="leading workload records used to warm the cache")
    p.add_argument("--seed", type=int)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--outcomes", help="write per-request outcomes (JSON Lines) here")
    g = p.add_argument_group("synthetic workload")
    g.add_argument("--prompts", type=int)
    g.add_argument("--clusters", type=int)
    g.add_argument("--zipf", type=float)
    g.add_argument("--sigma", type=float)
    g.add_argument("--users", type=int)
    g.add_argument("--session-length", type=int)
    g.add_argument("--repeat-prob", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="approxcache",
                                     description="Approximate caching simulator for diffusion serving.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="preload, stream a workload, report")
    run.add_argument("--format", choices=["table", "json"], default="table")
    prof = sub.add_parser("profile", parents=[common], help="profile the similarity-to-K map")
    prof.add_argument("--out", default="simk.json")
    prof.add_argument("--step", type=float, default=0.005, help="similarity grid spacing")
    cmp_ = sub.add_parser("compare", parents=[common], help="compare eviction policies")
    cmp_.add_argument("--policies", default="lcbfu,lru,lfu,fifo")
    cmp_.add_argument("--capacities", type=_int_list, default=[1500, 15000])
    cmp_.add_argument("--format", choices=["table", "json"], default="table")
    srv = sub.add_parser("serve", parents=[common], help="serve POST /generate and GET /metrics")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8080)
    syn = sub.add_parser("synth", parents=[common], help="write the synthetic stream as a trace")
    syn.add_argument("--out", required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    exp = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    top = {key: getattr(args, dest) for dest, key in _TOP_LEVEL.items()
           if getattr(args, dest) is not None}
    if "ks" in top:
        top["ks"] = tuple(top["ks"])
    synth = {key: getattr(args, dest) for dest, key in _SYNTH.items()
             if getattr(args, dest) is not None}
    if args.seed is not None:
        synth.setdefault("seed", args.seed)
    try:
        if synth:
            top["synth"] = dataclasses.replace(exp.synth, **synth)
        return dataclasses.replace(exp, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = resolve_config(args)
        if args.command == "run":
            report = cmd_run(exp)
            print(report.to_json() if args.format == "json" else report.to_table())
        elif args.command == "profile":
            simk = cmd_profile(exp, args.out, args.step)
            print(simk_table(simk))
            print(f"wrote {args.out}")
        elif args.command == "compare":
            rows = cmd_compare(exp, args.policies.split(","), args.capacities)
            if args.format == "json":
                print(json.dumps([dataclasses.asdict(r) for r in rows], indent=2))
            else:
                print(compare_table(rows))
        elif args.command == "serve":
            cmd_serve(exp, args.port, args.host)
        elif args.command == "synth":
            exp.validate()
            n = write_trace(load_records(exp), args.out)
            print(f"wrote {n} records to {args.out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
