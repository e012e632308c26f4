"""Command-line surface: a thin client over the same operations the HTTP
service exposes.

Commands: validate, query, ground, corpus, serve.
Exit codes: 0 ok, 2 domain error (parse/validation/grounding/inference),
3 IO or usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import MebnError
from .parser import ParseError
from .service import ops, schemas

EXIT_OK = 0
EXIT_DOMAIN = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_IO)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        raise SystemExit(EXIT_IO)


def _write(path: str, content: str) -> None:
    try:
        Path(path).write_text(content)
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        raise SystemExit(EXIT_IO)


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _domain_error(exc: MebnError) -> int:
    if isinstance(exc, ParseError):
        for d in exc.diagnostics:
            print(d.render(), file=sys.stderr)
    else:
        print(f"[{exc.stage}] {type(exc).__name__}: {exc.message}", file=sys.stderr)
    return EXIT_DOMAIN


def _limits(args) -> schemas.LimitsModel:
    return schemas.LimitsModel(max_depth=args.max_depth, max_nodes=args.max_nodes,
                               max_parent_product=args.max_parent_product)


def cmd_validate(args) -> int:
    theory_text = _read(args.theory)
    evidence_text = _read(args.evidence) if args.evidence else None
    try:
        resp = ops.do_validate(schemas.ValidateRequest(
            theory=theory_text, evidence=evidence_text,
            depth_bound=args.depth_bound))
    except MebnError as e:
        return _domain_error(e)
    if args.json:
        _print_json(resp.model_dump())
    else:
        if resp.ok:
            print(f"ok: theory accepted (max ancestor chain {resp.max_depth})")
        else:
            print(f"{len(resp.violations)} violation(s):")
            for v in resp.violations:
                print(f"  [{v.tag}] {v.message}")
    return EXIT_OK if resp.ok else EXIT_DOMAIN


def cmd_query(args) -> int:
    theory_text = _read(args.theory)
    evidence_text = _read(args.evidence) if args.evidence else None
    try:
        resp = ops.do_query(schemas.QueryRequest(
            theory=theory_text, evidence=evidence_text, targets=args.target,
            limits=_limits(args), oracle=args.oracle, prune=not args.no_prune,
            include_dot=bool(args.dot)))
    except MebnError as e:
        return _domain_error(e)
    if args.dot:
        _write(args.dot, resp.dot)
    payload = [r.model_dump() for r in resp.results]
    _print_json(payload[0] if len(payload) == 1 else payload)
    return EXIT_OK


def cmd_ground(args) -> int:
    theory_text = _read(args.theory)
    evidence_text = _read(args.evidence) if args.evidence else None
    try:
        resp = ops.do_ground(schemas.GroundRequest(
            theory=theory_text, evidence=evidence_text, targets=args.target,
            limits=_limits(args), prune=not args.no_prune))
    except MebnError as e:
        return _domain_error(e)
    if args.dot:
        _write(args.dot, resp.dot)
    if args.json or not args.dot:
        _print_json(resp.ssbn)
    return EXIT_OK


def cmd_corpus(args) -> int:
    try:
        resp = ops.do_corpus_run(oracle=args.oracle, regen=args.regen)
    except MebnError as e:
        return _domain_error(e)
    if args.json:
        _print_json(resp.model_dump())
    else:
        width = max(len(r.scenario) for r in resp.rows)
        for r in resp.rows:
            diff = "" if r.max_abs_diff < 0 else f"  max|Δ|={r.max_abs_diff:.2e}"
            detail = f"  {r.detail}" if r.detail else ""
            print(f"{r.scenario:<{width}}  {r.status}{diff}{detail}")
        print("all scenarios pass" if resp.ok else "corpus FAILED")
    return EXIT_OK if resp.ok else EXIT_DOMAIN


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mebn",
                     description="Multi-entity Bayesian network engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_limits(p):
        p.add_argument("--max-depth", type=int, default=64)
        p.add_argument("--max-nodes", type=int, default=20000)
        p.add_argument("--max-parent-product", type=int, default=1_000_000)

    p = sub.add_parser("validate", help="check a theory against the "
                                        "consistency conditions")
    p.add_argument("theory")
    p.add_argument("--evidence", help="evidence file contributing entities")
    p.add_argument("--depth-bound", type=int, default=1000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("query", help="compute posteriors for target RVs")
    p.add_argument("theory")
    p.add_argument("--evidence")
    p.add_argument("--target", action="append", required=True,
                   help="target expression (repeatable)")
    add_limits(p)
    p.add_argument("--oracle", action="store_true",
                   help="use brute-force enumeration instead of elimination")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--dot", help="also write the pruned SSBN as DOT")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("ground", help="build the SSBN only (JSON/DOT)")
    p.add_argument("theory")
    p.add_argument("--evidence")
    p.add_argument("--target", action="append", required=True)
    add_limits(p)
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--dot")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_ground)

    p = sub.add_parser("corpus", help="run every corpus scenario against "
                                      "its golden posterior")
    p.add_argument("--regen", action="store_true",
                   help="rewrite goldens from the oracle")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_corpus)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
