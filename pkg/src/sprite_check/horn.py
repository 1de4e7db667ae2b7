"""Horn-variable inference over flattened verification conditions.

A tree constraint built by the checker is flattened into clauses of the form
`forall binders. hyps => head` where the head is either a concrete predicate
or an application of a Horn variable. Horn variables are solved by predicate
abstraction: start from every well-sorted instantiation of a qualifier set
and repeatedly drop instances that some clause fails to imply, then validate
the concrete-head clauses under the final assignment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .logic import (
    BOOL,
    INT,
    TRUE,
    All,
    BinOp,
    BoolLit,
    CAnd,
    Cstr,
    DataSort,
    FuncSort,
    Head,
    IntLit,
    IntSort,
    Ite,
    KApp,
    NO_SPAN,
    Not,
    Pred,
    Sort,
    Span,
    SpriteError,
    SymbolTable,
    UApp,
    Var,
    VarSort,
    isTrivial,
    pAnd,
    showPred,
    showSort,
    substPreds,
)
from .smt import (
    AdtCtor,
    AdtDecl,
    AdtField,
    SolverSession,
    Unknown,
    Valid,
    serializeBatch,
    serializeQuery,
)
from .types import (
    AllRef,
    AllTy,
    Base,
    BTCon,
    ConcRef,
    Fun,
    Hole,
    Type,
    baseSort,
    sortOfType,
)


class MalformedHorn(SpriteError):
    """The textual constraint form could not be interpreted."""


# ---------------------------------------------------------------------------
# flattened clauses


@dataclass(frozen=True)
class FlatCstr:
    """One implication: the binders' hypotheses entail the head."""

    binders: tuple[tuple[str, Sort, Pred], ...]
    head: Pred
    span: Span = NO_SPAN
    index: int = 0


def _orderedFreeVars(p: Pred, acc: list[str], seen: set[str]) -> None:
    if isinstance(p, Var):
        if p.name not in seen:
            seen.add(p.name)
            acc.append(p.name)
    elif isinstance(p, BinOp):
        _orderedFreeVars(p.lhs, acc, seen)
        _orderedFreeVars(p.rhs, acc, seen)
    elif isinstance(p, Not):
        _orderedFreeVars(p.arg, acc, seen)
    elif isinstance(p, Ite):
        _orderedFreeVars(p.cond, acc, seen)
        _orderedFreeVars(p.then, acc, seen)
        _orderedFreeVars(p.els, acc, seen)
    elif isinstance(p, UApp):
        for a in p.args:
            _orderedFreeVars(a, acc, seen)
    elif isinstance(p, KApp):
        for name in p.args:
            if name not in seen:
                seen.add(name)
                acc.append(name)


def orderedFreeVars(p: Pred) -> list[str]:
    """Free variables in first-occurrence order (deterministic)."""
    acc: list[str] = []
    _orderedFreeVars(p, acc, set())
    return acc


def _splitHead(p: Pred) -> list[Pred]:
    """Top-level conjuncts of a head; `p && k(..)` becomes two clauses."""
    if isinstance(p, BinOp) and p.op == "&&":
        return _splitHead(p.lhs) + _splitHead(p.rhs)
    return [p]


def _pruneBinders(
    binders: list[tuple[str, Sort, Pred]], head: Pred
) -> tuple[tuple[str, Sort, Pred], ...]:
    """Drop binders with a trivial hypothesis whose name nothing mentions.

    Binders with a non-trivial hypothesis always stay: the hypothesis may
    carry a fact about other names (or a contradiction) even when the bound
    name itself is never used.
    """
    used = set(orderedFreeVars(head))
    for _, _, hyp in binders:
        if not isTrivial(hyp):
            used.update(orderedFreeVars(hyp))
    return tuple(
        (n, s, h) for n, s, h in binders if not (isTrivial(h) and n not in used)
    )


def flatten(c: Cstr) -> list[FlatCstr]:
    """Clause list in deterministic traversal order."""
    out: list[FlatCstr] = []

    def go(c: Cstr, prefix: list[tuple[str, Sort, Pred]]) -> None:
        if isinstance(c, CAnd):
            for item in c.items:
                go(item, prefix)
        elif isinstance(c, All):
            prefix.append((c.binder, c.sort, c.hyp))
            go(c.body, prefix)
            prefix.pop()
        elif isinstance(c, Head):
            for part in _splitHead(c.pred):
                if isTrivial(part):
                    continue
                out.append(
                    FlatCstr(_pruneBinders(prefix, part), part, c.span, len(out))
                )
        else:  # pragma: no cover
            raise AssertionError(c)

    go(c, [])
    return out


def showFlat(c: FlatCstr) -> str:
    lines = []
    for n, s, h in c.binders:
        suffix = "" if isTrivial(h) else f" | {showPred(h)}"
        lines.append(f"forall {n}:{showSort(s)}{suffix}.")
    lines.append(f"|- {showPred(c.head)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# qualifiers


@dataclass(frozen=True)
class Qualifier:
    """A predicate template over one value slot plus extra placeholders.

    The first parameter always stands for the value being described; a sort
    of None there means the body never mentions it, so the template fits a
    Horn variable over any value sort.
    """

    name: str
    params: tuple[tuple[str, Sort | None], ...]
    body: Pred

    def key(self) -> tuple:
        return (tuple(s for _, s in self.params), self.body)


def mkQualifier(
    name: str,
    nu: tuple[str, Sort | None],
    extras: list[tuple[str, Sort]],
    body: Pred,
) -> Qualifier:
    """Canonical form: value slot renamed to `v`, extras to `z0`, `z1`, ..."""
    mapping: dict[str, Pred] = {nu[0]: Var("v")}
    params: list[tuple[str, Sort | None]] = [("v", nu[1])]
    for i, (n, s) in enumerate(extras):
        mapping[n] = Var(f"z{i}")
        params.append((f"z{i}", s))
    return Qualifier(name, tuple(params), substPreds(body, mapping))


def seedQualifiers() -> list[Qualifier]:
    """Small arithmetic base set used on every job."""
    v = Var("v")
    z = Var("z")
    one = [("v", INT)]
    two = [("v", INT), ("z", INT)]

    def q(name: str, params, body: Pred) -> Qualifier:
        return Qualifier(name, tuple(params), body)

    return [
        q("Nonneg", one, BinOp("<=", IntLit(0), v)),
        q("Pos", one, BinOp("<", IntLit(0), v)),
        q("Lt", two, BinOp("<", v, z)),
        q("Le", two, BinOp("<=", v, z)),
        q("Eq", two, BinOp("=", v, z)),
        q("Ge", two, BinOp("<=", z, v)),
    ]


def dedupQualifiers(quals: list[Qualifier]) -> list[Qualifier]:
    seen: set[tuple] = set()
    out: list[Qualifier] = []
    for q in quals:
        k = q.key()
        if k not in seen:
            seen.add(k)
            out.append(q)
    return out


def _hasKApp(p: Pred) -> bool:
    if isinstance(p, KApp):
        return True
    if isinstance(p, BinOp):
        return _hasKApp(p.lhs) or _hasKApp(p.rhs)
    if isinstance(p, Not):
        return _hasKApp(p.arg)
    if isinstance(p, Ite):
        return _hasKApp(p.cond) or _hasKApp(p.then) or _hasKApp(p.els)
    if isinstance(p, UApp):
        return any(_hasKApp(a) for a in p.args)
    return False


def _atoms(p: Pred, out: list[Pred]) -> None:
    """Split on the boolean connectives; comparisons stay whole."""
    if isinstance(p, BinOp) and p.op in ("&&", "||", "=>", "<=>"):
        _atoms(p.lhs, out)
        _atoms(p.rhs, out)
    elif isinstance(p, Not):
        _atoms(p.arg, out)
    else:
        if not isTrivial(p):
            out.append(p)


class _Harvest:
    """Collects qualifier templates from the refinements of a type."""

    def __init__(self, datatypes: dict, max_extra: int) -> None:
        self.datatypes = datatypes
        self.max_extra = max_extra
        self.found: list[Qualifier] = []
        self.n = 0

    def _add(self, atom: Pred, nu: str, nu_sort: Sort, scope: dict[str, Sort]) -> None:
        if _hasKApp(atom):
            return
        fvs = orderedFreeVars(atom)
        extras: list[tuple[str, Sort]] = []
        for x in fvs:
            if x == nu:
                continue
            s = scope.get(x)
            if s is None:
                return  # mentions something we cannot sort; not a template
            extras.append((x, s))
        if len(extras) > self.max_extra:
            return
        slot = (nu, nu_sort if nu in fvs else None)
        self.n += 1
        self.found.append(mkQualifier(f"H{self.n - 1}", slot, extras, atom))

    def pred(self, p: Pred, nu: str, nu_sort: Sort, scope: dict[str, Sort]) -> None:
        parts: list[Pred] = []
        _atoms(p, parts)
        for atom in parts:
            self._add(atom, nu, nu_sort, scope)

    def type(self, t: Type, scope: dict[str, Sort]) -> None:
        if isinstance(t, (AllTy, AllRef)):
            self.type(t.body, scope)
        elif isinstance(t, Fun):
            self.type(t.dom, scope)
            inner = dict(scope)
            ds = sortOfType(t.dom)
            if not isinstance(ds, FuncSort):
                inner[t.param] = ds
            self.type(t.cod, inner)
        elif isinstance(t, Base):
            vs = baseSort(t.base)
            if not isinstance(t.refinement, Hole):
                inner = dict(scope)
                inner[t.binder] = vs
                self.pred(t.refinement, t.binder, vs, inner)
            if isinstance(t.base, BTCon):
                for targ in t.base.targs:
                    self.type(targ, scope)
                decl = self.datatypes.get(t.base.tycon)
                for i, conc in enumerate(t.base.rargs):
                    if isinstance(conc.body, Hole) or decl is None:
                        continue
                    _, sorts = decl.rvars[i]
                    tyvar_sort = {
                        a: sortOfType(ta)
                        for (a, _), ta in zip(decl.tyvars, t.base.targs)
                    }
                    res = tuple(
                        tyvar_sort.get(s.tyvar, s) if isinstance(s, VarSort) else s
                        for s in sorts
                    )
                    inner = dict(scope)
                    for pname, psort in zip(conc.params, res):
                        inner[pname] = psort
                    self.pred(conc.body, conc.params[-1], res[-1], inner)


def harvest(
    types: list[Type],
    table: SymbolTable,
    datatypes: dict,
    max_qual_params: int = 1,
) -> list[Qualifier]:
    """Qualifier templates mined from signature refinements and measures."""
    h = _Harvest(datatypes, max_qual_params)
    for t in types:
        h.type(t, {})
    for name, (binder, argnames, pred) in table.result_refinements.items():
        fs = table.lookup(name)
        scope = {binder: fs.result}
        for an, s in zip(argnames, fs.args):
            scope[an] = s
        h.pred(pred, binder, fs.result, scope)
    return dedupQualifiers(h.found)


# ---------------------------------------------------------------------------
# instantiation and assignments


def _sortsMatch(a: Sort, b: Sort, collapse: bool) -> bool:
    if a == b:
        return True
    return collapse and isinstance(a, VarSort) and isinstance(b, VarSort)


def _formal(i: int) -> str:
    return f"$arg{i}"


def instances(q: Qualifier, arg_sorts: tuple[Sort, ...], collapse: bool) -> list[Pred]:
    """All injective, sort-respecting fillings; value slot is argument 0.

    Results are predicates over the positional formals `$arg0`, `$arg1`, ...
    """
    if not arg_sorts:
        return []
    nu_name, nu_sort = q.params[0]
    if nu_sort is not None and not _sortsMatch(nu_sort, arg_sorts[0], collapse):
        return []
    extras = q.params[1:]
    out: list[Pred] = []
    seen: set[Pred] = set()
    for perm in itertools.permutations(range(1, len(arg_sorts)), len(extras)):
        ok = all(
            _sortsMatch(s, arg_sorts[i], collapse)
            for (_, s), i in zip(extras, perm)
            if s is not None
        )
        if not ok:
            continue
        mapping: dict[str, Pred] = {nu_name: Var(_formal(0))}
        for (n, _), i in zip(extras, perm):
            mapping[n] = Var(_formal(i))
        inst = substPreds(q.body, mapping)
        if inst not in seen:
            seen.add(inst)
            out.append(inst)
    return out


@dataclass
class Assignment:
    """Current meaning of each Horn variable: a conjunction of instances.

    Instances are stored over the positional formals so one assignment works
    at every application site.
    """

    quals: dict[str, tuple[Pred, ...]] = field(default_factory=dict)

    def predFor(self, kvar: str, args: tuple[str, ...]) -> Pred:
        insts = self.quals.get(kvar, ())
        mapping = {_formal(i): Var(a) for i, a in enumerate(args)}
        return pAnd(*(substPreds(p, mapping) for p in insts))

    def size(self) -> int:
        return sum(len(v) for v in self.quals.values())


def applyPred(sigma: Assignment, p: Pred) -> Pred:
    if isinstance(p, KApp):
        return sigma.predFor(p.kvar, p.args)
    if isinstance(p, BinOp):
        return BinOp(p.op, applyPred(sigma, p.lhs), applyPred(sigma, p.rhs))
    if isinstance(p, Not):
        return Not(applyPred(sigma, p.arg))
    if isinstance(p, Ite):
        return Ite(
            applyPred(sigma, p.cond),
            applyPred(sigma, p.then),
            applyPred(sigma, p.els),
        )
    if isinstance(p, UApp):
        return UApp(p.fn, tuple(applyPred(sigma, a) for a in p.args))
    return p


def applyCstr(sigma: Assignment, c: Cstr) -> Cstr:
    if isinstance(c, CAnd):
        return CAnd(tuple(applyCstr(sigma, i) for i in c.items))
    if isinstance(c, All):
        return All(c.binder, c.sort, applyPred(sigma, c.hyp), applyCstr(sigma, c.body))
    if isinstance(c, Head):
        return Head(applyPred(sigma, c.pred), c.span)
    raise AssertionError(c)


# ---------------------------------------------------------------------------
# solving


@dataclass
class HornSystem:
    """Everything a solve needs, independent of how the program looked."""

    cstr: Cstr
    kappa_sorts: dict[str, tuple[Sort, ...]]
    qualifiers: tuple[Qualifier, ...]
    table: SymbolTable
    adts: tuple[AdtDecl, ...] = ()
    collapse_tyvars: bool = False


@dataclass
class SolveStats:
    clauses: int = 0
    kappa_clauses: int = 0
    qualifiers: int = 0
    candidates_initial: int = 0
    candidates_final: int = 0
    iterations: int = 0
    smt_queries: int = 0


@dataclass
class Sat:
    assignment: Assignment
    stats: SolveStats


@dataclass
class Unsat:
    """A concrete-head clause that fails under the best assignment."""

    clause: FlatCstr
    stats: SolveStats


SolveResult = Sat | Unsat


def solve(system: HornSystem, session: SolverSession) -> SolveResult:
    """Weaken candidate instances to a fixpoint, then check concrete heads.

    Any solver answer other than a definite proof drops the candidate (or
    fails the clause): unknown never turns into an accept.
    """
    flat = flatten(system.cstr)
    kclauses = [c for c in flat if isinstance(c.head, KApp)]
    concrete = [c for c in flat if not isinstance(c.head, KApp)]
    collapse = system.collapse_tyvars

    sigma = Assignment({})
    for kvar, sorts in system.kappa_sorts.items():
        insts: list[Pred] = []
        seen: set[Pred] = set()
        for q in system.qualifiers:
            for p in instances(q, sorts, collapse):
                if p not in seen:
                    seen.add(p)
                    insts.append(p)
        sigma.quals[kvar] = tuple(insts)

    stats = SolveStats(
        clauses=len(flat),
        kappa_clauses=len(kclauses),
        qualifiers=len(system.qualifiers),
        candidates_initial=sigma.size(),
    )

    before = session.num_queries
    max_iters = sigma.size() + 2
    changed = True
    while changed and stats.iterations < max_iters:
        changed = False
        stats.iterations += 1
        for cl in kclauses:
            assert isinstance(cl.head, KApp)
            cands = sigma.quals.get(cl.head.kvar, ())
            if not cands:
                continue
            actual = {_formal(i): Var(a) for i, a in enumerate(cl.head.args)}
            goals = [substPreds(p, actual) for p in cands]
            binders = [(n, s, applyPred(sigma, h)) for n, s, h in cl.binders]
            prelude, negs = serializeBatch(
                system.table, binders, goals, system.adts, collapse
            )
            res = session.checkBatch(prelude, negs)
            if len(res) < len(goals):
                res = res + [Unknown("missing result")] * (len(goals) - len(res))
            keep = tuple(c for c, r in zip(cands, res) if isinstance(r, Valid))
            if len(keep) != len(cands):
                sigma.quals[cl.head.kvar] = keep
                changed = True

    for cl in concrete:
        binders = [(n, s, applyPred(sigma, h)) for n, s, h in cl.binders]
        script = serializeQuery(system.table, binders, cl.head, system.adts, collapse)
        r = session.check(script, want_model=False)
        if not isinstance(r, Valid):
            stats.candidates_final = sigma.size()
            stats.smt_queries = session.num_queries - before
            return Unsat(FlatCstr(tuple(binders), cl.head, cl.span, cl.index), stats)

    stats.candidates_final = sigma.size()
    stats.smt_queries = session.num_queries - before
    return Sat(sigma, stats)


def systemFromJob(
    job, extra_quals: list[Qualifier] = (), max_qual_params: int = 1
) -> HornSystem:
    """Build the solvable system for one checked program."""
    quals = dedupQualifiers(
        seedQualifiers()
        + harvest(
            list(job.harvest_types),
            job.table,
            job.globals.datatypes,
            max_qual_params,
        )
        + list(extra_quals)
    )
    return HornSystem(
        cstr=job.cstr,
        kappa_sorts=dict(job.kappa_sorts),
        qualifiers=tuple(quals),
        table=job.table,
        adts=tuple(job.adts),
        collapse_tyvars=bool(job.adts),
    )


def solveJob(
    job,
    session: SolverSession,
    extra_quals: list[Qualifier] = (),
    max_qual_params: int = 1,
) -> SolveResult:
    return solve(systemFromJob(job, extra_quals, max_qual_params), session)


# ---------------------------------------------------------------------------
# textual form


def emitSort(s: Sort) -> str:
    if isinstance(s, IntSort):
        return "Int"
    if isinstance(s, DataSort):
        return f"(data {s.tycon})"
    if isinstance(s, VarSort):
        return f"(tv {s.tyvar})"
    if isinstance(s, FuncSort):
        args = " ".join(emitSort(a) for a in s.args)
        return f"(fn ({args}) {emitSort(s.result)})"
    return "Bool"


def emitPred(p: Pred) -> str:
    if isinstance(p, Var):
        return p.name
    if isinstance(p, IntLit):
        return str(p.value)
    if isinstance(p, BoolLit):
        return "true" if p.value else "false"
    if isinstance(p, BinOp):
        return f"({p.op} {emitPred(p.lhs)} {emitPred(p.rhs)})"
    if isinstance(p, Not):
        return f"(! {emitPred(p.arg)})"
    if isinstance(p, Ite):
        return f"(ite {emitPred(p.cond)} {emitPred(p.then)} {emitPred(p.els)})"
    if isinstance(p, UApp):
        inner = " ".join([p.fn] + [emitPred(a) for a in p.args])
        return f"({inner})"
    if isinstance(p, KApp):
        return "(kapp " + " ".join([p.kvar] + list(p.args)) + ")"
    raise AssertionError(p)


def emitCstr(c: Cstr, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(c, CAnd):
        if not c.items:
            return f"{pad}(and)"
        inner = "\n".join(emitCstr(i, indent + 1) for i in c.items)
        return f"{pad}(and\n{inner})"
    if isinstance(c, All):
        head = f"{pad}(forall (({c.binder} {emitSort(c.sort)}) {emitPred(c.hyp)})"
        return f"{head}\n{emitCstr(c.body, indent + 1)})"
    if isinstance(c, Head):
        if isinstance(c.pred, KApp):
            return pad + "(kapp " + " ".join([c.pred.kvar] + list(c.pred.args)) + ")"
        return f"{pad}(head {emitPred(c.pred)})"
    raise AssertionError(c)


def emitQualifier(q: Qualifier) -> str:
    params = " ".join(
        f"({n} {'_' if s is None else emitSort(s)})" for n, s in q.params
    )
    return f"(qualif {q.name} ({params}) {emitPred(q.body)})"


def emitSystem(system: HornSystem) -> str:
    """Self-contained text: symbols, datatypes, qualifiers, constraint."""
    lines: list[str] = []
    for name in system.table.names():
        if name in system.table.adt_provided or name.startswith("is-"):
            continue
        fs = system.table.lookup(name)
        args = " ".join(emitSort(a) for a in fs.args)
        lines.append(f"(fun {name} ({args}) {emitSort(fs.result)})")
    for name, (binder, argnames, pred) in system.table.result_refinements.items():
        args = " ".join(argnames)
        lines.append(f"(measure {name} {binder} ({args}) {emitPred(pred)})")
    for d in system.adts:
        ctors = []
        for c in d.ctors:
            fields = " ".join(f"({f.name} {emitSort(f.sort)})" for f in c.fields)
            ctors.append(f"({c.name}{' ' + fields if fields else ''})")
        lines.append(f"(adt {d.tycon} ({' '.join(ctors)}))")
    for q in system.qualifiers:
        lines.append(emitQualifier(q))
    lines.append("(constraint")
    lines.append(emitCstr(system.cstr, 1) + ")")
    return "\n".join(lines) + "\n"


# -- reading it back


def _tokenize(text: str) -> list[str]:
    out: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            out.append(ch)
            i += 1
        else:
            j = i
            while j < n and text[j] not in " \t\r\n();":
                j += 1
            out.append(text[i:j])
            i = j
    return out


def _readSexp(tokens: list[str], pos: int):
    if pos >= len(tokens):
        raise MalformedHorn("unexpected end of input", NO_SPAN)
    t = tokens[pos]
    if t == "(":
        items = []
        pos += 1
        while pos < len(tokens) and tokens[pos] != ")":
            item, pos = _readSexp(tokens, pos)
            items.append(item)
        if pos >= len(tokens):
            raise MalformedHorn("missing ')'", NO_SPAN)
        return items, pos + 1
    if t == ")":
        raise MalformedHorn("unexpected ')'", NO_SPAN)
    return t, pos + 1


def _readAll(text: str) -> list:
    tokens = _tokenize(text)
    forms = []
    pos = 0
    while pos < len(tokens):
        form, pos = _readSexp(tokens, pos)
        forms.append(form)
    return forms


def parseSort(form) -> Sort:
    if form == "Int":
        return INT
    if form == "Bool":
        return BOOL
    if isinstance(form, list) and form:
        if form[0] == "data" and len(form) == 2:
            return DataSort(form[1])
        if form[0] == "tv" and len(form) == 2:
            return VarSort(form[1])
        if form[0] == "fn" and len(form) == 3:
            return FuncSort(tuple(parseSort(a) for a in form[1]), parseSort(form[2]))
    raise MalformedHorn(f"bad sort form: {form!r}", NO_SPAN)


_BINOPS = {"+", "-", "*", "=", "!=", "<", "<=", ">", ">=", "&&", "||", "=>", "<=>"}


def parsePred(form) -> Pred:
    if isinstance(form, str):
        if form == "true":
            return BoolLit(True)
        if form == "false":
            return BoolLit(False)
        try:
            return IntLit(int(form))
        except ValueError:
            return Var(form)
    if not form:
        raise MalformedHorn("empty predicate form", NO_SPAN)
    head = form[0]
    if head in _BINOPS and len(form) == 3:
        return BinOp(head, parsePred(form[1]), parsePred(form[2]))
    if head == "!" and len(form) == 2:
        return Not(parsePred(form[1]))
    if head == "ite" and len(form) == 4:
        return Ite(parsePred(form[1]), parsePred(form[2]), parsePred(form[3]))
    if head == "kapp" and len(form) >= 2:
        args = form[1:]
        if not all(isinstance(a, str) for a in args):
            raise MalformedHorn("kapp arguments must be names", NO_SPAN)
        return KApp(args[0], tuple(args[1:]))
    if isinstance(head, str):
        return UApp(head, tuple(parsePred(a) for a in form[1:]))
    raise MalformedHorn(f"bad predicate form: {form!r}", NO_SPAN)


def parseCstr(form) -> Cstr:
    if not isinstance(form, list) or not form:
        raise MalformedHorn(f"bad constraint form: {form!r}", NO_SPAN)
    head = form[0]
    if head == "and":
        return CAnd(tuple(parseCstr(i) for i in form[1:]))
    if head == "forall" and len(form) == 3:
        spec = form[1]
        if not (isinstance(spec, list) and len(spec) == 2 and len(spec[0]) == 2):
            raise MalformedHorn(f"bad forall binder: {spec!r}", NO_SPAN)
        name, sort = spec[0]
        return All(name, parseSort(sort), parsePred(spec[1]), parseCstr(form[2]))
    if head == "head" and len(form) == 2:
        return Head(parsePred(form[1]))
    if head == "kapp" and len(form) >= 2:
        return Head(KApp(form[1], tuple(form[2:])))
    raise MalformedHorn(f"bad constraint form: {form!r}", NO_SPAN)


def parseQualifierForm(form) -> Qualifier:
    if not (isinstance(form, list) and len(form) == 4 and form[0] == "qualif"):
        raise MalformedHorn(f"bad qualifier form: {form!r}", NO_SPAN)
    _, name, params, body = form
    out: list[tuple[str, Sort | None]] = []
    for p in params:
        if not (isinstance(p, list) and len(p) == 2):
            raise MalformedHorn(f"bad qualifier parameter: {p!r}", NO_SPAN)
        pname, psort = p
        out.append((pname, None if psort == "_" else parseSort(psort)))
    if not out:
        raise MalformedHorn("qualifier needs a value parameter", NO_SPAN)
    return Qualifier(name, tuple(out), parsePred(body))


def parseQualifiers(text: str) -> list[Qualifier]:
    """A qualifier file: any number of qualif forms."""
    return [parseQualifierForm(f) for f in _readAll(text)]


def _kappaSortsFromPred(p: Pred, scope: dict[str, Sort], acc: dict) -> None:
    if isinstance(p, KApp):
        try:
            sorts = tuple(scope[a] for a in p.args)
        except KeyError as e:
            raise MalformedHorn(
                f"unbound name {e.args[0]!r} in Horn application", NO_SPAN
            ) from None
        prior = acc.get(p.kvar)
        if prior is not None and prior != sorts:
            raise MalformedHorn(
                f"inconsistent sorts for Horn variable {p.kvar}", NO_SPAN
            )
        acc[p.kvar] = sorts
    elif isinstance(p, BinOp):
        _kappaSortsFromPred(p.lhs, scope, acc)
        _kappaSortsFromPred(p.rhs, scope, acc)
    elif isinstance(p, Not):
        _kappaSortsFromPred(p.arg, scope, acc)
    elif isinstance(p, Ite):
        _kappaSortsFromPred(p.cond, scope, acc)
        _kappaSortsFromPred(p.then, scope, acc)
        _kappaSortsFromPred(p.els, scope, acc)
    elif isinstance(p, UApp):
        for a in p.args:
            _kappaSortsFromPred(a, scope, acc)


def _collectKappaSorts(c: Cstr, scope: dict[str, Sort], acc: dict) -> None:
    if isinstance(c, CAnd):
        for i in c.items:
            _collectKappaSorts(i, scope, acc)
    elif isinstance(c, All):
        # the hypothesis speaks about the name it binds
        inner = dict(scope)
        inner[c.binder] = c.sort
        _kappaSortsFromPred(c.hyp, inner, acc)
        _collectKappaSorts(c.body, inner, acc)
    elif isinstance(c, Head):
        _kappaSortsFromPred(c.pred, scope, acc)


def parseSystem(text: str) -> HornSystem:
    """Read a system emitted by emitSystem (verdict-preserving)."""
    table = SymbolTable()
    adts: list[AdtDecl] = []
    quals: list[Qualifier] = []
    cstr: Cstr | None = None
    for form in _readAll(text):
        if not (isinstance(form, list) and form):
            raise MalformedHorn(f"bad top-level form: {form!r}", NO_SPAN)
        head = form[0]
        if head == "fun" and len(form) == 4:
            table.declare(
                form[1],
                FuncSort(tuple(parseSort(a) for a in form[2]), parseSort(form[3])),
            )
        elif head == "measure" and len(form) == 5:
            table.result_refinements[form[1]] = (
                form[2],
                tuple(form[3]),
                parsePred(form[4]),
            )
        elif head == "adt" and len(form) == 3:
            tycon = form[1]
            ctors = []
            for cf in form[2]:
                cname = cf[0]
                fields = tuple(AdtField(f[0], parseSort(f[1])) for f in cf[1:])
                ctors.append(AdtCtor(cname, fields))
            adts.append(AdtDecl(tycon, tuple(ctors)))
            dsort = DataSort(tycon)
            for c in ctors:
                table.declare(c.name, FuncSort(tuple(f.sort for f in c.fields), dsort))
                table.adt_provided.add(c.name)
                for f in c.fields:
                    table.declare(f.name, FuncSort((dsort,), f.sort))
                    table.adt_provided.add(f.name)
        elif head == "qualif":
            quals.append(parseQualifierForm(form))
        elif head == "constraint" and len(form) == 2:
            cstr = parseCstr(form[1])
        else:
            raise MalformedHorn(f"bad top-level form: {form!r}", NO_SPAN)
    if cstr is None:
        raise MalformedHorn("no constraint form found", NO_SPAN)
    kappa_sorts: dict[str, tuple[Sort, ...]] = {}
    _collectKappaSorts(cstr, {}, kappa_sorts)
    return HornSystem(
        cstr=cstr,
        kappa_sorts=kappa_sorts,
        qualifiers=tuple(dedupQualifiers(quals)),
        table=table,
        adts=tuple(adts),
        collapse_tyvars=bool(adts),
    )


def showAssignment(sigma: Assignment) -> str:
    lines = []
    for kvar in sorted(sigma.quals):
        body = pAnd(*sigma.quals[kvar])
        lines.append(f"{kvar} := {showPred(body)}")
    return "\n".join(lines)
