"""First-order logic layer: sorts, predicates, and Horn constraints.

Everything downstream (type checking, Horn solving, SMT serialization) is
built from the three families defined here:

  * Sort  - Int, Bool, uninterpreted datatype / type-variable sorts, and
            function sorts for measures and uninterpreted functions.
  * Pred  - quantifier-free formulas plus applications of Horn variables
            (KApp) whose arguments must be plain variable names.
  * Cstr  - the constraint tree: conjunctions of implications between
            predicates under sorted, hypothesis-carrying binders.
"""

from __future__ import annotations

from dataclasses import dataclass, field


# ---------------------------------------------------------------------------
# source positions


@dataclass(frozen=True)
class Span:
    """Half-open source region, 1-based lines and columns."""

    file: str
    line: int
    col: int
    end_line: int = 0
    end_col: int = 0

    def show(self) -> str:
        if self.line <= 0:
            return self.file
        return f"{self.file}:{self.line}:{self.col}"


NO_SPAN = Span("<builtin>", 0, 0)


class SpriteError(Exception):
    """Base for every user-facing error; carries a source span."""

    def __init__(self, message: str, span: Span = NO_SPAN):
        super().__init__(message)
        self.message = message
        self.span = span

    def render(self) -> str:
        if self.span.line > 0:
            return f"{self.span.show()}: {self.message}"
        return self.message


class UnboundSymbol(SpriteError):
    pass


class SortMismatch(SpriteError):
    def __init__(self, expected: Sort, found: Sort, span: Span = NO_SPAN, what: str = "term"):
        super().__init__(
            f"sort mismatch: {what} has sort {showSort(found)}, expected {showSort(expected)}",
            span,
        )
        self.expected = expected
        self.found = found


class NonVariableInKApp(SpriteError):
    pass


class DuplicateSymbol(SpriteError):
    pass


# ---------------------------------------------------------------------------
# sorts


@dataclass(frozen=True)
class IntSort:
    pass


@dataclass(frozen=True)
class BoolSort:
    pass


@dataclass(frozen=True)
class DataSort:
    """Sort of values of a (possibly parameterized) datatype; parameters erased."""

    tycon: str


@dataclass(frozen=True)
class VarSort:
    """Uninterpreted sort standing for a type variable."""

    tyvar: str


@dataclass(frozen=True)
class FuncSort:
    """Sort of measures / uninterpreted functions; not a value sort."""

    args: tuple[Sort, ...]
    result: Sort


Sort = IntSort | BoolSort | DataSort | VarSort | FuncSort

INT = IntSort()
BOOL = BoolSort()


def showSort(s: Sort) -> str:
    if isinstance(s, IntSort):
        return "int"
    if isinstance(s, BoolSort):
        return "bool"
    if isinstance(s, DataSort):
        return s.tycon
    if isinstance(s, VarSort):
        return s.tyvar
    if isinstance(s, FuncSort):
        return "(" + ", ".join(showSort(a) for a in s.args) + ") => " + showSort(s.result)
    raise AssertionError(s)


def isBaseSort(s: Sort) -> bool:
    """Base sorts are the ones a binder or a Horn-variable argument may have."""
    return isinstance(s, (IntSort, BoolSort, DataSort, VarSort))


# ---------------------------------------------------------------------------
# predicates


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class IntLit:
    value: int


# Binary operators. Arithmetic and comparison take two operands of one sort;
# the logical connectives take booleans.
ARITH_OPS = ("+", "-", "*")
CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")
LOGIC_OPS = ("&&", "||", "=>", "<=>")
ALL_OPS = ARITH_OPS + CMP_OPS + LOGIC_OPS


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: Pred
    rhs: Pred

    def __post_init__(self):
        if self.op not in ALL_OPS:
            raise AssertionError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Not:
    arg: Pred


@dataclass(frozen=True)
class Ite:
    cond: Pred
    then: Pred
    els: Pred


@dataclass(frozen=True)
class UApp:
    """Application of a measure or uninterpreted function to predicate arguments."""

    fn: str
    args: tuple[Pred, ...]


@dataclass(frozen=True)
class KApp:
    """Application of a Horn variable; arguments are variable names only."""

    kvar: str
    args: tuple[str, ...]


Pred = Var | BoolLit | IntLit | BinOp | Not | Ite | UApp | KApp

TRUE = BoolLit(True)
FALSE = BoolLit(False)


def isTrivial(p: Pred) -> bool:
    return isinstance(p, BoolLit) and p.value


def pAnd(*ps: Pred) -> Pred:
    """Conjunction that drops true conjuncts and flattens nothing else."""
    parts = [p for p in ps if not isTrivial(p)]
    if not parts:
        return TRUE
    out = parts[0]
    for p in parts[1:]:
        out = BinOp("&&", out, p)
    return out


def pImp(p: Pred, q: Pred) -> Pred:
    if isTrivial(p):
        return q
    return BinOp("=>", p, q)


def pEq(a: Pred, b: Pred) -> Pred:
    return BinOp("=", a, b)


def pNot(p: Pred) -> Pred:
    if isinstance(p, Not):
        return p.arg
    return Not(p)


def conjuncts(p: Pred) -> list[Pred]:
    """Split nested `&&` into a flat list."""
    if isinstance(p, BinOp) and p.op == "&&":
        return conjuncts(p.lhs) + conjuncts(p.rhs)
    if isTrivial(p):
        return []
    return [p]


def freeVars(p: Pred) -> set[str]:
    if isinstance(p, Var):
        return {p.name}
    if isinstance(p, (BoolLit, IntLit)):
        return set()
    if isinstance(p, BinOp):
        return freeVars(p.lhs) | freeVars(p.rhs)
    if isinstance(p, Not):
        return freeVars(p.arg)
    if isinstance(p, Ite):
        return freeVars(p.cond) | freeVars(p.then) | freeVars(p.els)
    if isinstance(p, UApp):
        out: set[str] = set()
        for a in p.args:
            out |= freeVars(a)
        return out
    if isinstance(p, KApp):
        return set(p.args)
    raise AssertionError(p)


def substPred(p: Pred, x: str, repl: Pred) -> Pred:
    """Substitute `repl` for the variable `x` in `p`.

    Predicates bind nothing, so this is plain structural replacement. The one
    wrinkle is Horn-variable applications: their argument slots hold names,
    so substituting a non-variable into one is an error.
    """
    if isinstance(p, Var):
        return repl if p.name == x else p
    if isinstance(p, (BoolLit, IntLit)):
        return p
    if isinstance(p, BinOp):
        return BinOp(p.op, substPred(p.lhs, x, repl), substPred(p.rhs, x, repl))
    if isinstance(p, Not):
        return Not(substPred(p.arg, x, repl))
    if isinstance(p, Ite):
        return Ite(
            substPred(p.cond, x, repl),
            substPred(p.then, x, repl),
            substPred(p.els, x, repl),
        )
    if isinstance(p, UApp):
        return UApp(p.fn, tuple(substPred(a, x, repl) for a in p.args))
    if isinstance(p, KApp):
        if x not in p.args:
            return p
        if not isinstance(repl, Var):
            raise NonVariableInKApp(
                f"cannot substitute a compound term for {x!r} inside "
                f"an application of {p.kvar}"
            )
        return KApp(p.kvar, tuple(repl.name if a == x else a for a in p.args))
    raise AssertionError(p)


def substPreds(p: Pred, mapping: dict[str, Pred]) -> Pred:
    """Simultaneous substitution; applied left-to-right over a frozen mapping."""
    if not mapping:
        return p
    if isinstance(p, Var):
        return mapping.get(p.name, p)
    if isinstance(p, (BoolLit, IntLit)):
        return p
    if isinstance(p, BinOp):
        return BinOp(p.op, substPreds(p.lhs, mapping), substPreds(p.rhs, mapping))
    if isinstance(p, Not):
        return Not(substPreds(p.arg, mapping))
    if isinstance(p, Ite):
        return Ite(
            substPreds(p.cond, mapping),
            substPreds(p.then, mapping),
            substPreds(p.els, mapping),
        )
    if isinstance(p, UApp):
        return UApp(p.fn, tuple(substPreds(a, mapping) for a in p.args))
    if isinstance(p, KApp):
        out = []
        for a in p.args:
            r = mapping.get(a)
            if r is None:
                out.append(a)
            elif isinstance(r, Var):
                out.append(r.name)
            else:
                raise NonVariableInKApp(
                    f"cannot substitute a compound term for {a!r} inside "
                    f"an application of {p.kvar}"
                )
        return KApp(p.kvar, tuple(out))
    raise AssertionError(p)


# ---------------------------------------------------------------------------
# symbol table


class SymbolTable:
    """Global signature: measure / uninterpreted function names and their sorts.

    A name may be declared once; re-declaring it at the identical sort is a
    no-op, anything else is an error. Measures may additionally carry a
    refinement on their result, instantiated at application sites when a
    query is serialized.
    """

    def __init__(self):
        self._sorts: dict[str, FuncSort] = {}
        # name -> (value binder, refinement over it and the measure args)
        self.result_refinements: dict[str, tuple[str, tuple[str, ...], Pred]] = {}
        # symbols provided by an SMT datatype declaration (constructors,
        # selectors, testers): already in scope on the solver side.
        self.adt_provided: set[str] = set()

    def declare(self, name: str, fsort: FuncSort, span: Span = NO_SPAN) -> None:
        old = self._sorts.get(name)
        if old is not None and old != fsort:
            raise DuplicateSymbol(
                f"symbol {name!r} already declared at sort {showSort(old)}", span
            )
        self._sorts[name] = fsort

    def lookup(self, name: str) -> FuncSort | None:
        return self._sorts.get(name)

    def names(self) -> list[str]:
        return list(self._sorts)

    def copy(self) -> SymbolTable:
        t = SymbolTable()
        t._sorts = dict(self._sorts)
        t.result_refinements = dict(self.result_refinements)
        t.adt_provided = set(self.adt_provided)
        return t


# ---------------------------------------------------------------------------
# sort checking


def sortOf(
    p: Pred,
    env: dict[str, Sort],
    table: SymbolTable | None = None,
    span: Span = NO_SPAN,
) -> Sort:
    """Sort of a predicate under `env`; raises on unbound names or misuse.

    Variables may resolve either to a binder in `env` or, failing that, to a
    zero-argument symbol in the table.
    """

    def go(p: Pred) -> Sort:
        if isinstance(p, Var):
            s = env.get(p.name)
            if s is None and table is not None:
                fs = table.lookup(p.name)
                if fs is not None and not fs.args:
                    return fs.result
            if s is None:
                raise UnboundSymbol(f"unbound name {p.name!r} in refinement", span)
            return s
        if isinstance(p, IntLit):
            return INT
        if isinstance(p, BoolLit):
            return BOOL
        if isinstance(p, BinOp):
            ls, rs = go(p.lhs), go(p.rhs)
            if p.op in ARITH_OPS:
                for side in (ls, rs):
                    if side != INT:
                        raise SortMismatch(INT, side, span, f"operand of {p.op!r}")
                return INT
            if p.op in CMP_OPS:
                if ls != rs:
                    raise SortMismatch(ls, rs, span, f"right operand of {p.op!r}")
                if not isBaseSort(ls):
                    raise SortMismatch(INT, ls, span, f"operand of {p.op!r}")
                return BOOL
            # logical connectives
            for side in (ls, rs):
                if side != BOOL:
                    raise SortMismatch(BOOL, side, span, f"operand of {p.op!r}")
            return BOOL
        if isinstance(p, Not):
            s = go(p.arg)
            if s != BOOL:
                raise SortMismatch(BOOL, s, span, "negated term")
            return BOOL
        if isinstance(p, Ite):
            cs = go(p.cond)
            if cs != BOOL:
                raise SortMismatch(BOOL, cs, span, "condition")
            ts, es = go(p.then), go(p.els)
            if ts != es:
                raise SortMismatch(ts, es, span, "else branch")
            return ts
        if isinstance(p, UApp):
            fs = table.lookup(p.fn) if table is not None else None
            if fs is None:
                raise UnboundSymbol(f"unknown function {p.fn!r} in refinement", span)
            if len(fs.args) != len(p.args):
                raise SortMismatch(
                    fs,
                    FuncSort(tuple(go(a) for a in p.args), fs.result),
                    span,
                    f"application of {p.fn!r}",
                )
            for expected, arg in zip(fs.args, p.args):
                got = go(arg)
                if got != expected:
                    raise SortMismatch(expected, got, span, f"argument of {p.fn!r}")
            return fs.result
        if isinstance(p, KApp):
            for a in p.args:
                if a not in env:
                    raise UnboundSymbol(
                        f"unbound name {a!r} in application of {p.kvar}", span
                    )
            return BOOL
        raise AssertionError(p)

    return go(p)


def checkRefinement(
    p: Pred, env: dict[str, Sort], table: SymbolTable | None, span: Span = NO_SPAN
) -> None:
    s = sortOf(p, env, table, span)
    if s != BOOL:
        raise SortMismatch(BOOL, s, span, "refinement")


# ---------------------------------------------------------------------------
# constraints


@dataclass(frozen=True)
class Head:
    """Leaf obligation: the hypotheses on the path must entail `pred`."""

    pred: Pred
    span: Span = NO_SPAN


@dataclass(frozen=True)
class CAnd:
    items: tuple[Cstr, ...]


@dataclass(frozen=True)
class All:
    """Quantified implication: forall binder:sort with hyp, body holds."""

    binder: str
    sort: Sort
    hyp: Pred
    body: Cstr


Cstr = Head | CAnd | All

C_TRUE = CAnd(())


def cAnd(items: list[Cstr]) -> Cstr:
    """N-ary conjunction, flattening nested conjunctions and dropping units."""
    flat: list[Cstr] = []
    for c in items:
        if isinstance(c, CAnd):
            flat.extend(cAnd(list(c.items)).items if c.items else ())
        elif isinstance(c, Head) and isTrivial(c.pred):
            continue
        else:
            flat.append(c)
    if len(flat) == 1:
        return flat[0]
    return CAnd(tuple(flat))


def cstrKVars(c: Cstr) -> set[str]:
    """Horn variables appearing anywhere in the constraint."""

    def predK(p: Pred, acc: set[str]) -> None:
        if isinstance(p, KApp):
            acc.add(p.kvar)
        elif isinstance(p, BinOp):
            predK(p.lhs, acc)
            predK(p.rhs, acc)
        elif isinstance(p, Not):
            predK(p.arg, acc)
        elif isinstance(p, Ite):
            predK(p.cond, acc)
            predK(p.then, acc)
            predK(p.els, acc)
        elif isinstance(p, UApp):
            for a in p.args:
                predK(a, acc)

    acc: set[str] = set()

    def go(c: Cstr) -> None:
        if isinstance(c, Head):
            predK(c.pred, acc)
        elif isinstance(c, CAnd):
            for item in c.items:
                go(item)
        else:
            predK(c.hyp, acc)
            go(c.body)

    go(c)
    return acc


def validateCstr(c: Cstr, outer: frozenset[str] = frozenset()) -> None:
    """Debug check: binders along any root-to-leaf path are pairwise distinct."""
    if isinstance(c, Head):
        return
    if isinstance(c, CAnd):
        for item in c.items:
            validateCstr(item, outer)
        return
    if c.binder in outer:
        raise AssertionError(f"duplicate binder {c.binder!r} on a constraint path")
    validateCstr(c.body, outer | {c.binder})


# ---------------------------------------------------------------------------
# pretty-printing


_PREC = {
    "<=>": 1,
    "=>": 2,
    "||": 3,
    "&&": 4,
    "=": 5, "!=": 5, "<": 5, "<=": 5, ">": 5, ">=": 5,
    "+": 6, "-": 6,
    "*": 7,
}


def showPred(p: Pred, prec: int = 0) -> str:
    if isinstance(p, Var):
        return p.name
    if isinstance(p, BoolLit):
        return "true" if p.value else "false"
    if isinstance(p, IntLit):
        return str(p.value)
    if isinstance(p, BinOp):
        mine = _PREC[p.op]
        # render == for equality tests, matching the surface syntax
        op = "==" if p.op == "=" else p.op
        s = f"{showPred(p.lhs, mine)} {op} {showPred(p.rhs, mine + 1)}"
        return f"({s})" if mine < prec else s
    if isinstance(p, Not):
        return f"!{showPred(p.arg, 8)}"
    if isinstance(p, Ite):
        s = f"ite({showPred(p.cond)}, {showPred(p.then)}, {showPred(p.els)})"
        return s
    if isinstance(p, UApp):
        return f"{p.fn}({', '.join(showPred(a) for a in p.args)})"
    if isinstance(p, KApp):
        return f"{p.kvar}({', '.join(p.args)})"
    raise AssertionError(p)


def showCstr(c: Cstr, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(c, Head):
        return f"{pad}{showPred(c.pred)}"
    if isinstance(c, CAnd):
        if not c.items:
            return f"{pad}true"
        return "\n".join(showCstr(item, indent) for item in c.items)
    hyp = "" if isTrivial(c.hyp) else f" | {showPred(c.hyp)}"
    return (
        f"{pad}forall {c.binder}:{showSort(c.sort)}{hyp}.\n"
        + showCstr(c.body, indent + 1)
    )


# ---------------------------------------------------------------------------
# fresh names


class Fresh:
    """Per-job counters for generated names; reset by constructing a new one."""

    def __init__(self):
        self._counts: dict[str, int] = {}

    def name(self, prefix: str) -> str:
        n = self._counts.get(prefix, 0)
        self._counts[prefix] = n + 1
        return f"{prefix}{n}"

    def kvar(self) -> str:
        return self.name("$k")

    def temp(self) -> str:
        return self.name("$t")

    def value(self) -> str:
        return self.name("$v")
