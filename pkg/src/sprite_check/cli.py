"""Command line driver.

`sprite check` runs files through parsing, elaboration, constraint
generation and Horn solving; `sprite horn` solves a textual system dumped
earlier with --emit-horn. Exit status: 0 when every file matched
expectations, 1 for a rejection (or a suite mismatch), 2 for internal or
solver trouble.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import shlex
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .check import checkProgram
from .horn import (
    MalformedHorn,
    Qualifier,
    Sat,
    emitSystem,
    parseQualifiers,
    parseSystem,
    showAssignment,
    showFlat,
    solve,
    systemFromJob,
)
from .logic import Span, SpriteError, pAnd, showPred
from .smt import SolverScriptError, SolverSession, defaultSolverCommand
from .syntax import ParseContext, Program, anfProgram, elaborate, parse


def defaultPreludePath() -> Path:
    return Path(__file__).with_name("prelude.re")


@dataclass
class Options:
    termination: bool = True
    reflection: bool = True
    prelude: Path | None = None
    qual_files: tuple[Path, ...] = ()
    max_qual_params: int = 1
    solver: list[str] | None = None
    timeout_ms: int = 10000
    emit_smt: Path | None = None
    emit_horn: Path | None = None
    jobs: int = 1
    as_json: bool = False


@dataclass
class FileResult:
    path: str
    verdict: str  # accept | reject | error
    message: str = ""
    stats: dict | None = None


def _applyDirectives(opts: Options, tokens: list[str], path: str) -> Options:
    """First-line `// sprite:` flags override the command line for one file."""
    eff = opts
    i = 0
    while i < len(tokens):
        t = tokens[i]
        if t == "--no-termination":
            eff = replace(eff, termination=False)
        elif t == "--no-reflection":
            eff = replace(eff, reflection=False)
        elif t == "--max-qual-params" and i + 1 < len(tokens):
            i += 1
            eff = replace(eff, max_qual_params=int(tokens[i]))
        else:
            raise SpriteError(f"unknown directive {t!r}", Span(path, 1, 1))
        i += 1
    return eff


def _excerpt(span: Span, sources: dict[str, str]) -> str:
    text = sources.get(span.file)
    if text is None or span.line <= 0:
        return ""
    lines = text.splitlines()
    if span.line > len(lines):
        return ""
    line = lines[span.line - 1]
    caret = " " * (span.col - 1) + "^"
    return f"  {line}\n  {caret}"


def _rejection(clause, sources: dict[str, str]) -> str:
    parts = [f"{clause.span.show()}: refinement check failed"]
    body = _excerpt(clause.span, sources)
    if body:
        parts.append(body)
    parts.append("the failing obligation:")
    parts.append("  " + showFlat(clause).replace("\n", "\n  "))
    return "\n".join(parts)


def _loadQualifiers(paths: tuple[Path, ...]) -> list[Qualifier]:
    out: list[Qualifier] = []
    for p in paths:
        out.extend(parseQualifiers(p.read_text()))
    return out


def checkFile(path: Path, opts: Options) -> FileResult:
    sources: dict[str, str] = {}
    try:
        text = path.read_text()
        sources[str(path)] = text
        ctx = ParseContext()
        items = []
        if opts.prelude is not None:
            ptext = opts.prelude.read_text()
            sources[str(opts.prelude)] = ptext
            items.extend(parse(ptext, str(opts.prelude), ctx).items)
        prog = parse(text, str(path), ctx)
        eff = _applyDirectives(opts, prog.directives, str(path))
        full = Program(items + prog.items, prog.directives, str(path))
        full = elaborate(anfProgram(full))
        job = checkProgram(
            full, termination=eff.termination, reflection=eff.reflection
        )
        system = systemFromJob(
            job, _loadQualifiers(eff.qual_files), eff.max_qual_params
        )
        if eff.emit_horn is not None:
            target = eff.emit_horn
            if target.is_dir():
                target = target / (path.stem + ".horn")
            target.write_text(emitSystem(system))
        emit_dir = None
        if eff.emit_smt is not None:
            emit_dir = eff.emit_smt / path.stem
            emit_dir.mkdir(parents=True, exist_ok=True)
        session = SolverSession(
            eff.solver or defaultSolverCommand(),
            timeout_ms=eff.timeout_ms,
            emit_dir=str(emit_dir) if emit_dir else None,
        )
        try:
            res = solve(system, session)
        finally:
            session.close()
        stats = asdict(res.stats)
        if isinstance(res, Sat):
            return FileResult(str(path), "accept", stats=stats)
        return FileResult(
            str(path), "reject", _rejection(res.clause, sources), stats
        )
    except SpriteError as e:
        msg = e.render()
        body = _excerpt(e.span, sources)
        if body:
            msg = f"{msg}\n{body}"
        return FileResult(str(path), "reject", msg)
    except (SolverScriptError, OSError) as e:
        return FileResult(str(path), "error", f"{type(e).__name__}: {e}")
    except Exception as e:  # noqa: BLE001 - report, do not crash the runner
        return FileResult(str(path), "error", f"{type(e).__name__}: {e}")


def runMany(files: list[Path], opts: Options) -> list[FileResult]:
    if opts.jobs <= 1 or len(files) <= 1:
        return [checkFile(f, opts) for f in files]
    with concurrent.futures.ThreadPoolExecutor(max_workers=opts.jobs) as pool:
        futures = [pool.submit(checkFile, f, opts) for f in files]
        return [f.result() for f in futures]


def _optionsFromArgs(args) -> Options:
    prelude: Path | None
    if args.prelude == "none":
        prelude = None
    elif args.prelude is not None:
        prelude = Path(args.prelude)
    else:
        prelude = defaultPreludePath()
    return Options(
        termination=not args.no_termination,
        reflection=not args.no_reflection,
        prelude=prelude,
        qual_files=tuple(Path(p) for p in (args.quals or [])),
        max_qual_params=args.max_qual_params,
        solver=shlex.split(args.solver) if args.solver else None,
        timeout_ms=args.smt_timeout_ms,
        emit_smt=Path(args.emit_smt) if args.emit_smt else None,
        emit_horn=Path(args.emit_horn) if args.emit_horn else None,
        jobs=args.jobs,
        as_json=args.json,
    )


def _emitJson(results: list[FileResult], code: int) -> None:
    payload = {
        "files": [asdict(r) for r in results],
        "exit": code,
    }
    print(json.dumps(payload, indent=2))


def cmdCheck(args) -> int:
    opts = _optionsFromArgs(args)
    if args.suite:
        suite = Path(args.suite)
        files = sorted(suite.glob("*.re"))
        if not files:
            print(f"no .re files under {suite}", file=sys.stderr)
            return 2
        expect = args.expect or "accept"
    else:
        files = [Path(f) for f in args.files]
        if not files:
            print("nothing to check", file=sys.stderr)
            return 2
        expect = None
    if opts.emit_horn is not None and len(files) > 1:
        opts.emit_horn.mkdir(parents=True, exist_ok=True)
    results = runMany(files, opts)

    code = 0
    lines = []
    for r in results:
        if r.verdict == "error":
            code = 2
        if expect is None:
            ok = r.verdict == "accept"
        else:
            ok = r.verdict == expect
        if not ok and code == 0:
            code = 1
        if expect is not None:
            tag = "PASS" if ok else "FAIL"
            lines.append(f"{tag} {r.path} ({r.verdict})")
        else:
            lines.append(f"{r.path}: {r.verdict}")
        if r.message and (expect is None or not ok):
            lines.append(r.message)
    if opts.as_json:
        _emitJson(results, code)
    else:
        print("\n".join(lines))
        if expect is not None:
            n_ok = sum(
                1 for r in results if r.verdict == expect
            )
            print(f"{n_ok}/{len(results)} files {expect}ed as expected")
    return code


def cmdHorn(args) -> int:
    opts = _optionsFromArgs(args)
    try:
        system = parseSystem(Path(args.file).read_text())
        session = SolverSession(
            opts.solver or defaultSolverCommand(), timeout_ms=opts.timeout_ms
        )
        try:
            res = solve(system, session)
        finally:
            session.close()
    except (MalformedHorn, OSError, SolverScriptError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if isinstance(res, Sat):
        if opts.as_json:
            assignment = {
                kvar: showPred(pAnd(*insts))
                for kvar, insts in sorted(res.assignment.quals.items())
            }
            print(
                json.dumps(
                    {
                        "verdict": "sat",
                        "assignment": assignment,
                        "stats": asdict(res.stats),
                    },
                    indent=2,
                )
            )
        else:
            print("sat")
            text = showAssignment(res.assignment)
            if text:
                print(text)
        return 0
    if opts.as_json:
        print(
            json.dumps(
                {
                    "verdict": "unsat",
                    "clause": showFlat(res.clause),
                    "stats": asdict(res.stats),
                },
                indent=2,
            )
        )
    else:
        print("unsat")
        print(showFlat(res.clause))
    return 1


def _addSolverFlags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", help="solver command line (default: bundled)")
    p.add_argument("--smt-timeout-ms", type=int, default=10000)
    p.add_argument("--emit-smt", metavar="DIR", help="dump every query")
    p.add_argument("--json", action="store_true", help="machine readable output")


def buildParser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sprite")
    sub = ap.add_subparsers(dest="cmd", required=True)

    pc = sub.add_parser("check", help="check refinement-typed files")
    pc.add_argument("files", nargs="*", help="source files")
    pc.add_argument("--suite", metavar="DIR", help="check every .re file in DIR")
    pc.add_argument(
        "--expect",
        choices=("accept", "reject"),
        help="suite expectation (with --suite)",
    )
    pc.add_argument("--no-termination", action="store_true")
    pc.add_argument("--no-reflection", action="store_true")
    pc.add_argument(
        "--prelude",
        metavar="PATH",
        help="ambient declarations ('none' disables; default: bundled)",
    )
    pc.add_argument(
        "--quals",
        metavar="PATH",
        action="append",
        help="extra qualifier file (repeatable)",
    )
    pc.add_argument("--max-qual-params", type=int, default=1)
    pc.add_argument("--emit-horn", metavar="PATH", help="write the textual system")
    pc.add_argument("--jobs", type=int, default=1)
    _addSolverFlags(pc)
    pc.set_defaults(fn=cmdCheck)

    ph = sub.add_parser("horn", help="solve a textual Horn system")
    ph.add_argument("file")
    ph.add_argument("--no-termination", action="store_true", help=argparse.SUPPRESS)
    ph.add_argument("--no-reflection", action="store_true", help=argparse.SUPPRESS)
    ph.add_argument("--prelude", help=argparse.SUPPRESS)
    ph.add_argument("--quals", action="append", help=argparse.SUPPRESS)
    ph.add_argument("--max-qual-params", type=int, default=1, help=argparse.SUPPRESS)
    ph.add_argument("--emit-horn", help=argparse.SUPPRESS)
    ph.add_argument("--jobs", type=int, default=1, help=argparse.SUPPRESS)
    _addSolverFlags(ph)
    ph.set_defaults(fn=cmdHorn)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = buildParser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
