"""SMT backend: query serialization and a persistent solver session.

Queries are self-contained SMT-LIB2 scripts checked inside a push/pop frame
of one long-lived solver process, so a whole run pays process startup once.
The solver is `z3 -in` when a native binary is on PATH; otherwise a bundled
Node wrapper around the z3 WASM build speaks the same protocol.
"""

from __future__ import annotations

import os
import queue
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .logic import (
    BOOL,
    INT,
    ARITH_OPS,
    BinOp,
    BoolLit,
    BoolSort,
    CMP_OPS,
    DataSort,
    DuplicateSymbol,
    FuncSort,
    IntLit,
    IntSort,
    Ite,
    KApp,
    Not,
    Pred,
    Sort,
    Span,
    SymbolTable,
    UApp,
    Var,
    VarSort,
    isTrivial,
    showSort,
)

# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class Valid:
    pass


@dataclass(frozen=True)
class Invalid:
    model: str = ""


@dataclass(frozen=True)
class Unknown:
    reason: str = ""


ValidityResult = Valid | Invalid | Unknown


class SolverScriptError(Exception):
    """The solver rejected a script we generated; always an internal bug."""


# ---------------------------------------------------------------------------
# datatype declarations (used when function definitions are reflected)


@dataclass(frozen=True)
class AdtField:
    name: str  # selector symbol
    sort: Sort


@dataclass(frozen=True)
class AdtCtor:
    name: str
    fields: tuple[AdtField, ...]


@dataclass(frozen=True)
class AdtDecl:
    tycon: str
    ctors: tuple[AdtCtor, ...]


# When datatypes are declared to the solver, every type-variable sort is
# collapsed to this single uninterpreted element sort, so constructor
# applications at different type instantiations stay well-sorted.
ELEM_SORT_NAME = "$elem"


# ---------------------------------------------------------------------------
# symbols and sorts as SMT text

_SIMPLE_CHARS = set(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    "~!@#$%^&*_-+=<>.?/"
)


def smtSymbol(name: str) -> str:
    if name and name[0] not in "0123456789" and all(c in _SIMPLE_CHARS for c in name):
        return name
    assert "|" not in name and "\\" not in name, f"unquotable symbol {name!r}"
    return f"|{name}|"


def _smtSort(s: Sort, collapse_tyvars: bool) -> str:
    if isinstance(s, IntSort):
        return "Int"
    if isinstance(s, BoolSort):
        return "Bool"
    if isinstance(s, DataSort):
        return smtSymbol(s.tycon)
    if isinstance(s, VarSort):
        return smtSymbol(ELEM_SORT_NAME if collapse_tyvars else s.tyvar)
    raise AssertionError(f"not a value sort: {showSort(s)}")


# ---------------------------------------------------------------------------
# serialization


class _Serializer:
    def __init__(
        self,
        table: SymbolTable,
        binders: list[tuple[str, Sort, Pred]],
        adts: tuple[AdtDecl, ...],
        collapse_tyvars: bool,
    ):
        self.table = table
        self.binders = binders
        self.adts = adts
        self.collapse = collapse_tyvars
        self.env: dict[str, Sort] = {}
        for name, sort, _ in binders:
            self.env[name] = sort
        # ordered comparison symbols needed at uninterpreted sorts
        self.order_fns: dict[str, Sort] = {}
        self.sorts_seen: list[str] = []
        self._sorts_set: set[str] = set()

    # -- sort bookkeeping

    def noteSort(self, s: Sort) -> None:
        if isinstance(s, FuncSort):
            for a in s.args:
                self.noteSort(a)
            self.noteSort(s.result)
            return
        if isinstance(s, (IntSort, BoolSort)):
            return
        name = _smtSort(s, self.collapse)
        if name not in self._sorts_set:
            self._sorts_set.add(name)
            self.sorts_seen.append(name)

    # -- quick sort inference (predicates are already sort-checked upstream)

    def sortOf(self, p: Pred) -> Sort:
        if isinstance(p, Var):
            s = self.env.get(p.name)
            if s is not None:
                return s
            fs = self.table.lookup(p.name)
            if fs is not None and not fs.args:
                return fs.result
            raise AssertionError(f"unbound {p.name!r} during serialization")
        if isinstance(p, IntLit):
            return INT
        if isinstance(p, BoolLit):
            return BOOL
        if isinstance(p, BinOp):
            if p.op in ARITH_OPS:
                return INT
            return BOOL
        if isinstance(p, (Not, KApp)):
            return BOOL
        if isinstance(p, Ite):
            return self.sortOf(p.then)
        if isinstance(p, UApp):
            fs = self.table.lookup(p.fn)
            assert fs is not None, f"unknown function {p.fn!r} during serialization"
            return fs.result
        raise AssertionError(p)

    def orderFn(self, base: str, sort: Sort) -> str:
        name = f"${base}${_smtSort(sort, self.collapse).strip('|')}"
        self.order_fns.setdefault(name, sort)
        return name

    # -- predicate text

    def pred(self, p: Pred) -> str:
        if isinstance(p, Var):
            return smtSymbol(p.name)
        if isinstance(p, BoolLit):
            return "true" if p.value else "false"
        if isinstance(p, IntLit):
            return str(p.value) if p.value >= 0 else f"(- {-p.value})"
        if isinstance(p, Not):
            return f"(not {self.pred(p.arg)})"
        if isinstance(p, Ite):
            return f"(ite {self.pred(p.cond)} {self.pred(p.then)} {self.pred(p.els)})"
        if isinstance(p, UApp):
            if not p.args:
                return smtSymbol(p.fn)
            return f"({smtSymbol(p.fn)} {' '.join(self.pred(a) for a in p.args)})"
        if isinstance(p, KApp):
            raise AssertionError(f"Horn variable {p.kvar} reached the SMT layer")
        if isinstance(p, BinOp):
            a, b = p.lhs, p.rhs
            op = p.op
            if op in ("&&", "||", "=>"):
                smt = {"&&": "and", "||": "or", "=>": "=>"}[op]
                return f"({smt} {self.pred(a)} {self.pred(b)})"
            if op == "<=>":
                return f"(= {self.pred(a)} {self.pred(b)})"
            if op in ("=", "!="):
                body = f"(= {self.pred(a)} {self.pred(b)})"
                return body if op == "=" else f"(not {body})"
            if op in ("<", "<=", ">", ">="):
                if op == ">":
                    a, b, op = b, a, "<"
                elif op == ">=":
                    a, b, op = b, a, "<="
                s = self.sortOf(a)
                if isinstance(s, IntSort):
                    return f"({op} {self.pred(a)} {self.pred(b)})"
                fn = self.orderFn("lt" if op == "<" else "le", s)
                return f"({smtSymbol(fn)} {self.pred(a)} {self.pred(b)})"
            # arithmetic
            return f"({op} {self.pred(a)} {self.pred(b)})"
        raise AssertionError(p)


def _collectMeasureApps(p: Pred, names: set[str], acc: list[UApp]) -> None:
    if isinstance(p, UApp):
        if p.fn in names:
            if p not in acc:
                acc.append(p)
        for a in p.args:
            _collectMeasureApps(a, names, acc)
    elif isinstance(p, BinOp):
        _collectMeasureApps(p.lhs, names, acc)
        _collectMeasureApps(p.rhs, names, acc)
    elif isinstance(p, Not):
        _collectMeasureApps(p.arg, names, acc)
    elif isinstance(p, Ite):
        _collectMeasureApps(p.cond, names, acc)
        _collectMeasureApps(p.then, names, acc)
        _collectMeasureApps(p.els, names, acc)


def measureFacts(table: SymbolTable, preds: list[Pred]) -> list[Pred]:
    """Result refinements of measures, instantiated at every application
    occurring in `preds` (and, transitively, in the instantiations)."""
    from .logic import substPreds

    refined = set(table.result_refinements)
    if not refined:
        return []
    apps: list[UApp] = []
    for p in preds:
        _collectMeasureApps(p, refined, apps)
    facts: list[Pred] = []
    done = 0
    for _ in range(5):
        new = apps[done:]
        done = len(apps)
        if not new:
            break
        for app in new:
            binder, argnames, ref = table.result_refinements[app.fn]
            mapping: dict[str, Pred] = {binder: app}
            for formal, actual in zip(argnames, app.args):
                mapping[formal] = actual
            fact = substPreds(ref, mapping)
            facts.append(fact)
            _collectMeasureApps(fact, refined, apps)
    return facts


def serializeBatch(
    table: SymbolTable,
    binders: list[tuple[str, Sort, Pred]],
    goals: list[Pred],
    adts: tuple[AdtDecl, ...] = (),
    collapse_tyvars: bool = False,
) -> tuple[str, list[str]]:
    """Shared hypothesis prelude plus one negated assertion per goal.

    Deterministic for identical inputs: declarations follow symbol-table and
    binder order. Predicates must be free of Horn variables by this point.
    """
    ser = _Serializer(table, binders, adts, collapse_tyvars)

    adt_tycons = {d.tycon for d in adts}
    for d in adts:
        for c in d.ctors:
            for f in c.fields:
                ser.noteSort(f.sort)
    for name in table.names():
        ser.noteSort(table.lookup(name))
    for _, sort, _ in binders:
        ser.noteSort(sort)

    hyp_texts: list[str] = []
    hyp_preds: list[Pred] = []
    for name, sort, hyp in binders:
        if not isTrivial(hyp):
            hyp_preds.append(hyp)
            hyp_texts.append(ser.pred(hyp))
    facts = measureFacts(table, hyp_preds + list(goals))
    fact_texts = [ser.pred(f) for f in facts]
    goal_texts = [ser.pred(g) for g in goals]

    lines: list[str] = []
    for sname in ser.sorts_seen:
        if sname.strip("|") not in adt_tycons:
            lines.append(f"(declare-sort {smtSymbol(sname) if '|' not in sname else sname} 0)")
    for d in adts:
        ctors = []
        for c in d.ctors:
            fields = " ".join(
                f"({smtSymbol(f.name)} {_smtSort(f.sort, collapse_tyvars)})" for f in c.fields
            )
            ctors.append(f"({smtSymbol(c.name)}{' ' + fields if fields else ''})")
        # the declaration also brings is-C testers and the selectors into scope
        lines.append(
            f"(declare-datatypes (({smtSymbol(d.tycon)} 0)) ((" + " ".join(ctors) + ")))"
        )
    for name in table.names():
        if name in table.adt_provided or name.startswith("is-"):
            continue
        fs = table.lookup(name)
        args = " ".join(_smtSort(a, collapse_tyvars) for a in fs.args)
        lines.append(
            f"(declare-fun {smtSymbol(name)} ({args}) {_smtSort(fs.result, collapse_tyvars)})"
        )
    for fname, sort in ser.order_fns.items():
        st = _smtSort(sort, collapse_tyvars)
        lines.append(f"(declare-fun {smtSymbol(fname)} ({st} {st}) Bool)")
    for name, sort, _ in binders:
        if isinstance(sort, FuncSort):
            args = " ".join(_smtSort(a, collapse_tyvars) for a in sort.args)
            lines.append(
                f"(declare-fun {smtSymbol(name)} ({args}) {_smtSort(sort.result, collapse_tyvars)})"
            )
        else:
            lines.append(f"(declare-const {smtSymbol(name)} {_smtSort(sort, collapse_tyvars)})")
    for t in hyp_texts:
        lines.append(f"(assert {t})")
    for t in fact_texts:
        lines.append(f"(assert {t})")
    negs = [f"(not {t})" for t in goal_texts]
    return "\n".join(lines), negs


def serializeQuery(
    table: SymbolTable,
    binders: list[tuple[str, Sort, Pred]],
    goal: Pred,
    adts: tuple[AdtDecl, ...] = (),
    collapse_tyvars: bool = False,
) -> str:
    """Standalone script asserting the hypotheses and the negated goal."""
    prelude, negs = serializeBatch(table, binders, [goal], adts, collapse_tyvars)
    return prelude + "\n" + f"(assert {negs[0]})"


# ---------------------------------------------------------------------------
# solver session


_SHIM = Path(__file__).with_name("z3shim.js")


def defaultSolverCommand() -> list[str]:
    if shutil.which("z3"):
        return ["z3", "-in"]
    node = shutil.which("node")
    if node:
        return [node, str(_SHIM)]
    raise RuntimeError("no SMT solver available: need `z3` or `node` on PATH")


def _nodeEnv() -> dict[str, str]:
    env = dict(os.environ)
    extra = "/usr/lib/node_modules"
    prior = env.get("NODE_PATH", "")
    if extra not in prior.split(os.pathsep):
        env["NODE_PATH"] = f"{prior}{os.pathsep}{extra}" if prior else extra
    return env


class SolverSession:
    """One solver process, reused across many queries via push/pop frames."""

    def __init__(
        self,
        command: list[str] | None = None,
        timeout_ms: int = 10000,
        emit_dir: str | None = None,
    ):
        self.command = list(command) if command else defaultSolverCommand()
        self.timeout_ms = timeout_ms
        self.emit_dir = emit_dir
        self._proc: subprocess.Popen | None = None
        self._out: queue.Queue[str | None] = queue.Queue()
        self._sentinels = 0
        self._emitted = 0
        self.num_queries = 0

    # -- process management

    def _ensure(self) -> subprocess.Popen:
        if self._proc is not None and self._proc.poll() is None:
            return self._proc
        self._out = queue.Queue()
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            env=_nodeEnv(),
        )
        t = threading.Thread(target=self._pump, args=(self._proc,), daemon=True)
        t.start()
        self._send(f"(set-option :timeout {self.timeout_ms})\n")
        return self._proc

    def _pump(self, proc: subprocess.Popen) -> None:
        try:
            for line in proc.stdout:
                self._out.put(line.rstrip("\n"))
        except ValueError:
            pass
        self._out.put(None)

    def _send(self, text: str) -> None:
        proc = self._ensure()
        try:
            proc.stdin.write(text)
            proc.stdin.flush()
        except BrokenPipeError:
            self.close()
            raise SolverScriptError("solver process exited unexpectedly")

    def _readUntil(self, sentinel: str, deadline: float) -> list[str] | None:
        """Lines up to (not including) the sentinel; None on timeout/death."""
        lines: list[str] = []
        while True:
            remain = deadline - time.monotonic()
            if remain <= 0:
                return None
            try:
                line = self._out.get(timeout=min(remain, 0.5))
            except queue.Empty:
                continue
            if line is None:
                return None
            if line.strip() == sentinel:
                return lines
            lines.append(line)

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
            except OSError:
                pass
            self._proc = None

    def _sentinel(self) -> str:
        self._sentinels += 1
        return f"@@{self._sentinels}"

    def _emit(self, script: str) -> None:
        if not self.emit_dir:
            return
        os.makedirs(self.emit_dir, exist_ok=True)
        path = os.path.join(self.emit_dir, f"query_{self._emitted:04d}.smt2")
        self._emitted += 1
        with open(path, "w") as f:
            f.write(script + "\n(check-sat)\n")

    # -- queries

    def check(self, script: str, want_model: bool = True) -> ValidityResult:
        """Run one serialized query; unsat means the goal is valid."""
        self._emit(script)
        self.num_queries += 1
        self._ensure()
        mark = self._sentinel()
        deadline = time.monotonic() + self.timeout_ms / 1000.0 + 5.0
        self._send(f"(push 1)\n{script}\n(check-sat)\n(echo \"{mark}\")\n")
        lines = self._readUntil(mark, deadline)
        if lines is None:
            self.close()
            return Unknown("solver timeout")
        verdict = None
        for line in lines:
            t = line.strip()
            if t in ("sat", "unsat", "unknown"):
                verdict = t
            elif t.startswith("(error"):
                self.close()
                raise SolverScriptError(t)
        if verdict == "unsat":
            self._send("(pop 1)\n")
            return Valid()
        if verdict == "sat":
            model = ""
            if want_model:
                mark2 = self._sentinel()
                self._send(f"(get-model)\n(echo \"{mark2}\")\n")
                got = self._readUntil(mark2, time.monotonic() + 10.0)
                model = "\n".join(got) if got else ""
            self._send("(pop 1)\n")
            return Invalid(model)
        if verdict == "unknown":
            self._send("(pop 1)\n")
            return Unknown("solver returned unknown")
        self.close()
        return Unknown("no verdict from solver")

    def checkBatch(self, prelude: str, neg_goals: list[str]) -> list[ValidityResult]:
        """Many goals against one hypothesis context, one outer frame.

        Each goal text is asserted (already negated) in its own inner frame.
        Used by the fixpoint loop: one push/pop per clause, one nested frame
        per candidate qualifier.
        """
        if not neg_goals:
            return []
        self.num_queries += len(neg_goals)
        self._ensure()
        marks = [self._sentinel() for _ in neg_goals]
        parts = [f"(push 1)\n{prelude}\n"]
        for goal, mark in zip(neg_goals, marks):
            parts.append(
                f"(push 1)\n(assert {goal})\n(check-sat)\n(echo \"{mark}\")\n(pop 1)\n"
            )
        parts.append("(pop 1)\n")
        script = "".join(parts)
        if self.emit_dir:
            self._emit(f"; batch of {len(neg_goals)}\n{prelude}")
        deadline = (
            time.monotonic() + (self.timeout_ms / 1000.0) * (1 + len(neg_goals)) + 5.0
        )
        self._send(script)
        results: list[ValidityResult] = []
        for mark in marks:
            lines = self._readUntil(mark, deadline)
            if lines is None:
                self.close()
                results.extend([Unknown("solver timeout")] * (len(neg_goals) - len(results)))
                return results
            verdict: ValidityResult = Unknown("no verdict from solver")
            for line in lines:
                t = line.strip()
                if t == "unsat":
                    verdict = Valid()
                elif t == "sat":
                    verdict = Invalid()
                elif t == "unknown":
                    verdict = Unknown("solver returned unknown")
                elif t.startswith("(error"):
                    self.close()
                    raise SolverScriptError(t)
            results.append(verdict)
        return results

    def checkValid(
        self,
        table: SymbolTable,
        binders: list[tuple[str, Sort, Pred]],
        goal: Pred,
        adts: tuple[AdtDecl, ...] = (),
        collapse_tyvars: bool = False,
    ) -> ValidityResult:
        script = serializeQuery(table, binders, goal, adts, collapse_tyvars)
        return self.check(script)

    def __enter__(self) -> SolverSession:
        return self

    def __exit__(self, *exc) -> None:
        self.close()
