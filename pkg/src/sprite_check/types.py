"""Refinement types and the operations the checker is built from.

A type is a refined base (`int[v|p]`), a dependent function (`x:t => t`),
a type quantifier (`forall 'a:k. t`), or a refinement-predicate quantifier
(`rforall p:(s..) => bool. t`). Datatype constructors carry their fields'
types and a refinement on the constructed value; datatype parameters are
instantiated with concrete refinement lambdas at use sites.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .logic import (
    BOOL,
    INT,
    All,
    BinOp,
    CAnd,
    Cstr,
    DataSort,
    Fresh,
    FuncSort,
    Head,
    IntLit,
    KApp,
    Ite,
    Not,
    NO_SPAN,
    Pred,
    Sort,
    Span,
    SpriteError,
    SymbolTable,
    TRUE,
    UApp,
    UnboundSymbol,
    Var,
    VarSort,
    cAnd,
    freeVars,
    isBaseSort,
    isTrivial,
    pAnd,
    pEq,
    showPred,
    showSort,
    sortOf,
    substPred,
    substPreds,
)


class ShapeMismatch(SpriteError):
    pass


class VarianceViolation(SpriteError):
    pass


class RefinedVarNonBaseInstance(SpriteError):
    pass


class IllSortedRefinement(SpriteError):
    pass


class RefinedNonBaseVar(SpriteError):
    pass


class UnknownTycon(SpriteError):
    pass


class WrongConstructor(SpriteError):
    pass


class MetricNeverWellFormed(SpriteError):
    pass


class MetricOnNonFunction(SpriteError):
    pass


class ArityMismatch(SpriteError):
    pass


# ---------------------------------------------------------------------------
# kinds, bases, types


class Kind(enum.Enum):
    BASE = "Base"
    STAR = "Star"


@dataclass(frozen=True)
class Hole:
    """Missing refinement, filled in with a Horn variable by `fresh`."""


HOLE = Hole()


@dataclass(frozen=True)
class ConcRef:
    """Refinement lambda instantiating a datatype's predicate parameter.

    The last parameter is the value being refined; earlier ones are the
    constructor fields the predicate may mention.
    """

    params: tuple[str, ...]
    body: Pred | Hole


@dataclass(frozen=True)
class BInt:
    pass


@dataclass(frozen=True)
class BBool:
    pass


@dataclass(frozen=True)
class BTyVar:
    name: str


@dataclass(frozen=True)
class BTCon:
    tycon: str
    targs: tuple["Type", ...] = ()
    rargs: tuple[ConcRef, ...] = ()


BaseTy = BInt | BBool | BTyVar | BTCon


@dataclass(frozen=True)
class Base:
    base: BaseTy
    binder: str
    refinement: Pred | Hole


@dataclass(frozen=True)
class Fun:
    param: str
    dom: "Type"
    cod: "Type"


@dataclass(frozen=True)
class AllTy:
    tyvar: str
    kind: Kind
    body: "Type"


@dataclass(frozen=True)
class AllRef:
    rvar: str
    arg_sorts: tuple[Sort, ...]
    body: "Type"


Type = Base | Fun | AllTy | AllRef


def tInt(binder: str = "v", refinement: Pred | Hole = TRUE) -> Base:
    return Base(BInt(), binder, refinement)


def tBool(binder: str = "b", refinement: Pred | Hole = TRUE) -> Base:
    return Base(BBool(), binder, refinement)


UNIT_TYCON = "unit"


def tUnit(binder: str = "v", refinement: Pred | Hole = TRUE) -> Base:
    return Base(BTCon(UNIT_TYCON), binder, refinement)


# ---------------------------------------------------------------------------
# datatypes


class Polarity(enum.Enum):
    NONE = 0
    POS = 1
    NEG = 2
    BOTH = 3

    def join(self, other: "Polarity") -> "Polarity":
        return Polarity(self.value | other.value)

    def flip(self) -> "Polarity":
        if self is Polarity.POS:
            return Polarity.NEG
        if self is Polarity.NEG:
            return Polarity.POS
        return self


@dataclass(frozen=True)
class DataCtor:
    name: str
    fields: tuple[tuple[str, Type], ...]
    binder: str          # value binder of the result refinement
    refinement: Pred     # over `binder` and the field names


@dataclass
class DataDecl:
    tycon: str
    tyvars: tuple[tuple[str, Kind], ...]
    rvars: tuple[tuple[str, tuple[Sort, ...]], ...]
    ctors: tuple[DataCtor, ...]
    span: Span = NO_SPAN
    tyvar_polarity: tuple[Polarity, ...] = ()
    rvar_polarity: tuple[Polarity, ...] = ()


@dataclass
class Globals:
    """Program-wide context shared by every environment of one job."""

    datatypes: dict[str, DataDecl]
    ctors: dict[str, tuple[str, Type]]  # constructor -> (tycon, signature)
    table: SymbolTable
    reflected: dict[str, Pred]          # function -> embedded body


def emptyGlobals() -> Globals:
    g = Globals({}, {}, SymbolTable(), {})
    unit = DataDecl(UNIT_TYCON, (), (), (DataCtor("Unit", (), "v", TRUE),))
    registerData(g, unit)
    return g


def ctorSignature(decl: DataDecl, ctor: DataCtor) -> Type:
    """The constructor's standalone type, quantified over the declaration's
    type and predicate parameters, returning the refined datatype."""
    targs = tuple(Base(BTyVar(a), "v", TRUE) for a, _ in decl.tyvars)
    rargs = tuple(
        ConcRef(
            tuple(f"$p{i}.{j}" for j in range(len(sorts))),
            KApp(r, tuple(f"$p{i}.{j}" for j in range(len(sorts)))),
        )
        for i, (r, sorts) in enumerate(decl.rvars)
    )
    out: Type = Base(BTCon(decl.tycon, targs, rargs), ctor.binder, ctor.refinement)
    for fname, ftype in reversed(ctor.fields):
        out = Fun(fname, ftype, out)
    for r, sorts in reversed(decl.rvars):
        out = AllRef(r, sorts, out)
    for a, k in reversed(decl.tyvars):
        out = AllTy(a, k, out)
    return out


def registerData(g: Globals, decl: DataDecl) -> None:
    if decl.tycon in g.datatypes:
        raise SpriteError(f"datatype {decl.tycon!r} declared twice", decl.span)
    g.datatypes[decl.tycon] = decl
    for ctor in decl.ctors:
        if ctor.name in g.ctors:
            raise SpriteError(f"constructor {ctor.name!r} declared twice", decl.span)
        g.ctors[ctor.name] = (decl.tycon, ctorSignature(decl, ctor))
    computePolarities(g)


def computePolarities(g: Globals) -> None:
    """Fixpoint over all declarations: how each type / predicate parameter
    occurs in its constructors' field types."""

    pol: dict[str, tuple[list[Polarity], list[Polarity]]] = {
        name: (
            [Polarity.NONE] * len(d.tyvars),
            [Polarity.NONE] * len(d.rvars),
        )
        for name, d in g.datatypes.items()
    }

    def predSign(p: Pred, sign: Polarity, rvars: dict[str, int], acc: list[Polarity]) -> None:
        if isinstance(p, KApp):
            if p.kvar in rvars:
                acc[rvars[p.kvar]] = acc[rvars[p.kvar]].join(sign)
        elif isinstance(p, BinOp):
            if p.op == "=>":
                predSign(p.lhs, sign.flip(), rvars, acc)
                predSign(p.rhs, sign, rvars, acc)
            elif p.op == "<=>":
                predSign(p.lhs, Polarity.BOTH, rvars, acc)
                predSign(p.rhs, Polarity.BOTH, rvars, acc)
            else:
                predSign(p.lhs, sign, rvars, acc)
                predSign(p.rhs, sign, rvars, acc)
        elif isinstance(p, Not):
            predSign(p.arg, sign.flip(), rvars, acc)
        elif isinstance(p, Ite):
            predSign(p.cond, Polarity.BOTH, rvars, acc)
            predSign(p.then, sign, rvars, acc)
            predSign(p.els, sign, rvars, acc)
        elif isinstance(p, UApp):
            for a in p.args:
                predSign(a, sign, rvars, acc)

    def typeSign(
        t: Type,
        sign: Polarity,
        tyvars: dict[str, int],
        rvars: dict[str, int],
        tacc: list[Polarity],
        racc: list[Polarity],
    ) -> None:
        if isinstance(t, Base):
            if not isinstance(t.refinement, Hole):
                predSign(t.refinement, sign, rvars, racc)
            b = t.base
            if isinstance(b, BTyVar) and b.name in tyvars:
                tacc[tyvars[b.name]] = tacc[tyvars[b.name]].join(sign)
            elif isinstance(b, BTCon):
                inner = pol.get(b.tycon)
                for i, targ in enumerate(b.targs):
                    s = inner[0][i] if inner else Polarity.BOTH
                    composed = Polarity.BOTH if s is Polarity.BOTH else (
                        Polarity.NONE if s is Polarity.NONE else (sign if s is Polarity.POS else sign.flip())
                    )
                    if composed is not Polarity.NONE:
                        typeSign(targ, composed, tyvars, rvars, tacc, racc)
                for i, rarg in enumerate(b.rargs):
                    s = inner[1][i] if inner else Polarity.BOTH
                    composed = Polarity.BOTH if s is Polarity.BOTH else (
                        Polarity.NONE if s is Polarity.NONE else (sign if s is Polarity.POS else sign.flip())
                    )
                    if composed is not Polarity.NONE and not isinstance(rarg.body, Hole):
                        predSign(rarg.body, composed, rvars, racc)
        elif isinstance(t, Fun):
            typeSign(t.dom, sign.flip(), tyvars, rvars, tacc, racc)
            typeSign(t.cod, sign, tyvars, rvars, tacc, racc)
        elif isinstance(t, AllTy):
            inner_tyvars = {a: i for a, i in tyvars.items() if a != t.tyvar}
            typeSign(t.body, sign, inner_tyvars, rvars, tacc, racc)
        elif isinstance(t, AllRef):
            inner_rvars = {r: i for r, i in rvars.items() if r != t.rvar}
            typeSign(t.body, sign, tyvars, inner_rvars, tacc, racc)

    changed = True
    while changed:
        changed = False
        for name, d in g.datatypes.items():
            tyvars = {a: i for i, (a, _) in enumerate(d.tyvars)}
            rvars = {r: i for i, (r, _) in enumerate(d.rvars)}
            tacc = list(pol[name][0])
            racc = list(pol[name][1])
            for ctor in d.ctors:
                for _, ftype in ctor.fields:
                    typeSign(ftype, Polarity.POS, tyvars, rvars, tacc, racc)
                predSign(ctor.refinement, Polarity.POS, rvars, racc)
            if tacc != pol[name][0] or racc != pol[name][1]:
                pol[name] = (tacc, racc)
                changed = True

    for name, d in g.datatypes.items():
        d.tyvar_polarity = tuple(pol[name][0])
        d.rvar_polarity = tuple(pol[name][1])


# ---------------------------------------------------------------------------
# environments


@dataclass(frozen=True)
class Env:
    """Ordered binding context; extension returns a new environment."""

    globals: Globals
    entries: tuple[tuple[str, str, object], ...] = ()  # (tag, name, payload)

    def bind(self, name: str, t: Type) -> "Env":
        return Env(self.globals, self.entries + (("val", name, t),))

    def bindTyvar(self, name: str, kind: Kind) -> "Env":
        return Env(self.globals, self.entries + (("tyvar", name, kind),))

    def bindRvar(self, name: str, sorts: tuple[Sort, ...]) -> "Env":
        return Env(self.globals, self.entries + (("rvar", name, sorts),))

    def lookup(self, name: str) -> Type | None:
        for tag, n, payload in reversed(self.entries):
            if tag == "val" and n == name:
                return payload
        return None

    def lookupTyvar(self, name: str) -> Kind | None:
        for tag, n, payload in reversed(self.entries):
            if tag == "tyvar" and n == name:
                return payload
        return None

    def lookupRvar(self, name: str) -> tuple[Sort, ...] | None:
        for tag, n, payload in reversed(self.entries):
            if tag == "rvar" and n == name:
                return payload
        return None

    def valBinders(self) -> list[tuple[str, Type]]:
        """Value bindings oldest-first, later bindings shadowing earlier."""
        seen: dict[str, int] = {}
        out: list[tuple[str, Type]] = []
        for tag, n, payload in self.entries:
            if tag != "val":
                continue
            if n in seen:
                out[seen[n]] = (n, payload)
            else:
                seen[n] = len(out)
                out.append((n, payload))
        return out

    def sortEnv(self) -> dict[str, Sort]:
        out: dict[str, Sort] = {}
        for name, t in self.valBinders():
            out[name] = sortOfType(t)
        return out


# ---------------------------------------------------------------------------
# sorts of types


def baseSort(b: BaseTy) -> Sort:
    if isinstance(b, BInt):
        return INT
    if isinstance(b, BBool):
        return BOOL
    if isinstance(b, BTyVar):
        return VarSort(b.name)
    if isinstance(b, BTCon):
        return DataSort(b.tycon)
    raise AssertionError(b)


def sortOfType(t: Type) -> Sort:
    """Logic sort of a value of this type; functions flatten to FuncSort."""
    if isinstance(t, Base):
        return baseSort(t.base)
    if isinstance(t, (AllTy, AllRef)):
        return sortOfType(t.body)
    args: list[Sort] = []
    while isinstance(t, Fun):
        args.append(sortOfType(t.dom))
        t = t.cod
        while isinstance(t, (AllTy, AllRef)):
            t = t.body
    return FuncSort(tuple(args), sortOfType(t))


def refinementAt(t: Type, name: str) -> Pred:
    """The fact a binding of this type contributes about the name bound."""
    if isinstance(t, Base):
        assert not isinstance(t.refinement, Hole), "hole escaped instantiation"
        return substPred(t.refinement, t.binder, Var(name))
    return TRUE


# ---------------------------------------------------------------------------
# structural traversals


def mapRefinements(t: Type, f) -> Type:
    """Rebuild `t` applying `f` to every refinement and ConcRef body."""
    if isinstance(t, Base):
        b = t.base
        if isinstance(b, BTCon):
            b = BTCon(
                b.tycon,
                tuple(mapRefinements(a, f) for a in b.targs),
                tuple(
                    ConcRef(r.params, r.body if isinstance(r.body, Hole) else f(r.body))
                    for r in b.rargs
                ),
            )
        r = t.refinement if isinstance(t.refinement, Hole) else f(t.refinement)
        return Base(b, t.binder, r)
    if isinstance(t, Fun):
        return Fun(t.param, mapRefinements(t.dom, f), mapRefinements(t.cod, f))
    if isinstance(t, AllTy):
        return AllTy(t.tyvar, t.kind, mapRefinements(t.body, f))
    if isinstance(t, AllRef):
        return AllRef(t.rvar, t.arg_sorts, mapRefinements(t.body, f))
    raise AssertionError(t)


def typeFreeVars(t: Type) -> set[str]:
    """Program variables free in the refinements of `t`."""
    out: set[str] = set()

    def goPred(p: Pred, bound: frozenset[str]) -> None:
        out.update(freeVars(p) - bound)

    def go(t: Type, bound: frozenset[str]) -> None:
        if isinstance(t, Base):
            if not isinstance(t.refinement, Hole):
                goPred(t.refinement, bound | {t.binder})
            b = t.base
            if isinstance(b, BTCon):
                for a in b.targs:
                    go(a, bound)
                for r in b.rargs:
                    if not isinstance(r.body, Hole):
                        goPred(r.body, bound | set(r.params))
        elif isinstance(t, Fun):
            go(t.dom, bound)
            go(t.cod, bound | {t.param})
        elif isinstance(t, (AllTy, AllRef)):
            go(t.body, bound)

    go(t, frozenset())
    return out


def substTypeVar(t: Type, x: str, y: str, namer: Fresh | None = None) -> Type:
    """Rename free occurrences of the program variable `x` to `y` in `t`.

    Binders shadow as usual; a binder that would capture `y` is renamed
    first (requires `namer`), which unique program naming makes rare.
    """
    if x == y:
        return t

    def rebind(binder: str, structure, rebuild):
        # returns (new binder, structure with binder renamed if capturing)
        if binder == y:
            if namer is None:
                raise AssertionError(f"capture of {y!r} without a fresh-name source")
            nb = namer.value()
            return nb, rebuild(nb)
        return binder, structure

    if isinstance(t, Base):
        b = t.base
        if isinstance(b, BTCon):
            b = BTCon(
                b.tycon,
                tuple(substTypeVar(a, x, y, namer) for a in b.targs),
                tuple(
                    r
                    if isinstance(r.body, Hole) or x in r.params
                    else ConcRef(r.params, substPred(r.body, x, Var(y)))
                    for r in b.rargs
                ),
            )
        if t.binder == x or isinstance(t.refinement, Hole):
            return Base(b, t.binder, t.refinement)
        binder, ref = t.binder, t.refinement
        if binder == y:
            binder, ref = rebind(
                t.binder, ref, lambda nb: substPred(ref, t.binder, Var(nb))
            )
        return Base(b, binder, substPred(ref, x, Var(y)))
    if isinstance(t, Fun):
        dom = substTypeVar(t.dom, x, y, namer)
        if t.param == x:
            return Fun(t.param, dom, t.cod)
        param, cod = t.param, t.cod
        if param == y:
            param, cod = rebind(
                t.param, cod, lambda nb: substTypeVar(cod, t.param, nb, namer)
            )
        return Fun(param, dom, substTypeVar(cod, x, y, namer))
    if isinstance(t, AllTy):
        return AllTy(t.tyvar, t.kind, substTypeVar(t.body, x, y, namer))
    if isinstance(t, AllRef):
        return AllRef(t.rvar, t.arg_sorts, substTypeVar(t.body, x, y, namer))
    raise AssertionError(t)


def replaceTyvar(t: Type, a: str, b: str) -> Type:
    """Alpha-rename the type variable `a` to `b` (no capture checks)."""
    if isinstance(t, Base):
        base = t.base
        if isinstance(base, BTyVar) and base.name == a:
            base = BTyVar(b)
        elif isinstance(base, BTCon):
            base = BTCon(base.tycon, tuple(replaceTyvar(x, a, b) for x in base.targs), base.rargs)
        return Base(base, t.binder, t.refinement)
    if isinstance(t, Fun):
        return Fun(t.param, replaceTyvar(t.dom, a, b), replaceTyvar(t.cod, a, b))
    if isinstance(t, AllTy):
        if t.tyvar == a:
            return t
        return AllTy(t.tyvar, t.kind, replaceTyvar(t.body, a, b))
    if isinstance(t, AllRef):
        return AllRef(t.rvar, t.arg_sorts, replaceTyvar(t.body, a, b))
    raise AssertionError(t)


def _renameKApp(p: Pred, old: str, new: str) -> Pred:
    if isinstance(p, KApp):
        return KApp(new, p.args) if p.kvar == old else p
    if isinstance(p, BinOp):
        return BinOp(p.op, _renameKApp(p.lhs, old, new), _renameKApp(p.rhs, old, new))
    if isinstance(p, Not):
        return Not(_renameKApp(p.arg, old, new))
    if isinstance(p, Ite):
        return Ite(
            _renameKApp(p.cond, old, new),
            _renameKApp(p.then, old, new),
            _renameKApp(p.els, old, new),
        )
    if isinstance(p, UApp):
        return UApp(p.fn, tuple(_renameKApp(a, old, new) for a in p.args))
    return p


def replaceRvar(t: Type, old: str, new: str) -> Type:
    if isinstance(t, AllRef) and t.rvar == old:
        return t
    if isinstance(t, AllRef):
        return AllRef(t.rvar, t.arg_sorts, replaceRvar(t.body, old, new))
    if isinstance(t, AllTy):
        return AllTy(t.tyvar, t.kind, replaceRvar(t.body, old, new))
    return mapRefinements(t, lambda p: _renameKApp(p, old, new))


# ---------------------------------------------------------------------------
# selfification


def self_(x: str, t: Type) -> Type:
    """Strengthen a base type with the fact that its value equals `x`."""
    if isinstance(t, Base):
        assert not isinstance(t.refinement, Hole), "hole escaped instantiation"
        return Base(
            t.base, t.binder, pAnd(t.refinement, pEq(Var(t.binder), Var(x)))
        )
    return t


# ---------------------------------------------------------------------------
# hole instantiation


class KappaSpace:
    """Horn-variable bookkeeping for one checking job."""

    def __init__(self, namer: Fresh):
        self.namer = namer
        self.sorts: dict[str, tuple[Sort, ...]] = {}

    def new(self, arg_sorts: tuple[Sort, ...]) -> str:
        k = self.namer.kvar()
        self.sorts[k] = arg_sorts
        return k


def _envKappaParams(env: Env) -> list[tuple[str, Sort]]:
    out = []
    for name, t in env.valBinders():
        s = sortOfType(t)
        if isBaseSort(s):
            out.append((name, s))
    return out


def fresh(env: Env, t: Type, kappas: KappaSpace) -> Type:
    """Replace every refinement hole with a fresh Horn variable applied to
    the value binder (first) and the base-sorted binders in scope."""

    def kapp(value: tuple[str, Sort], extras: list[tuple[str, Sort]]) -> Pred:
        scope = _envKappaParams(env) + extras
        seen = {value[0]}
        args = [value]
        for name, s in scope:
            if name not in seen:
                seen.add(name)
                args.append((name, s))
        k = kappas.new(tuple(s for _, s in args))
        return KApp(k, tuple(n for n, _ in args))

    def goBase(b: BaseTy, extras: list[tuple[str, Sort]]) -> BaseTy:
        if not isinstance(b, BTCon):
            return b
        decl = env.globals.datatypes.get(b.tycon)
        targs = tuple(go(a, extras) for a in b.targs)
        rargs = []
        for i, r in enumerate(b.rargs):
            if isinstance(r.body, Hole):
                sorts = rvarParamSorts(env, decl, i, targs)
                params = r.params
                assert len(params) == len(sorts)
                value = (params[-1], sorts[-1])
                pre = list(zip(params[:-1], sorts[:-1]))
                rargs.append(ConcRef(params, kapp(value, pre + extras)))
            else:
                rargs.append(r)
        return BTCon(b.tycon, targs, tuple(rargs))

    def go(t: Type, extras: list[tuple[str, Sort]]) -> Type:
        if isinstance(t, Base):
            b = goBase(t.base, extras)
            if isinstance(t.refinement, Hole):
                r = kapp((t.binder, baseSort(t.base)), extras)
            else:
                r = t.refinement
            return Base(b, t.binder, r)
        if isinstance(t, Fun):
            dom = go(t.dom, extras)
            s = sortOfType(t.dom)
            extra2 = extras + [(t.param, s)] if isBaseSort(s) else extras
            return Fun(t.param, dom, go(t.cod, extra2))
        if isinstance(t, AllTy):
            return AllTy(t.tyvar, t.kind, go(t.body, extras))
        if isinstance(t, AllRef):
            return AllRef(t.rvar, t.arg_sorts, go(t.body, extras))
        raise AssertionError(t)

    return go(t, [])


def rvarParamSorts(
    env: Env, decl: DataDecl | None, index: int, targs: tuple[Type, ...]
) -> tuple[Sort, ...]:
    """Sorts of a datatype predicate parameter at a given instantiation."""
    if decl is None:
        raise UnknownTycon("unknown datatype in refinement-parameter position")
    _, sorts = decl.rvars[index]
    tyvar_sort = {a: sortOfType(targ) for (a, _), targ in zip(decl.tyvars, targs)}
    return tuple(
        tyvar_sort.get(s.tyvar, s) if isinstance(s, VarSort) else s for s in sorts
    )


# ---------------------------------------------------------------------------
# well-formedness


def wf(env: Env, t: Type, kind: Kind = Kind.STAR, span: Span = NO_SPAN) -> None:
    """Scope and sort checking for a (possibly holed) type annotation."""
    table = env.globals.table

    def refCheck(p: Pred, scope: dict[str, Sort], rvscope: dict[str, tuple[Sort, ...]]) -> None:
        if isinstance(p, Hole):
            return
        try:
            s = sortOf(p, scope, table, span)
        except (UnboundSymbol, SpriteError) as e:
            if isinstance(e, IllSortedRefinement):
                raise
            raise IllSortedRefinement(f"ill-sorted refinement: {e.message}", span) from e
        if s != BOOL:
            raise IllSortedRefinement(
                f"refinement has sort {showSort(s)}, expected bool", span
            )

    def go(t: Type, env: Env, kind: Kind) -> None:
        if isinstance(t, Base):
            b = t.base
            if isinstance(b, BTyVar):
                k = env.lookupTyvar(b.name)
                if k is None:
                    raise UnknownTycon(f"unknown type variable '{b.name}", span)
                nontrivial = not isinstance(t.refinement, Hole) and not isTrivial(t.refinement)
                if nontrivial and k is not Kind.BASE:
                    raise RefinedNonBaseVar(
                        f"type variable '{b.name} has kind Star and cannot be refined",
                        span,
                    )
            if isinstance(b, BTCon):
                decl = env.globals.datatypes.get(b.tycon)
                if decl is None:
                    raise UnknownTycon(f"unknown type constructor {b.tycon!r}", span)
                if len(b.targs) != len(decl.tyvars):
                    raise ArityMismatch(
                        f"{b.tycon} expects {len(decl.tyvars)} type argument(s), "
                        f"got {len(b.targs)}",
                        span,
                    )
                if len(b.rargs) != len(decl.rvars):
                    raise ArityMismatch(
                        f"{b.tycon} expects {len(decl.rvars)} refinement argument(s), "
                        f"got {len(b.rargs)}",
                        span,
                    )
                for targ, (_, k) in zip(b.targs, decl.tyvars):
                    go(targ, env, k)
                for i, r in enumerate(b.rargs):
                    if isinstance(r.body, Hole):
                        continue
                    sorts = rvarParamSorts(env, decl, i, b.targs)
                    scope = env.sortEnv()
                    scope.update(dict(zip(r.params, sorts)))
                    refCheck(r.body, scope, {})
            if not isinstance(t.refinement, Hole):
                scope = env.sortEnv()
                scope[t.binder] = baseSort(b)
                refCheck(t.refinement, scope, {})
        elif isinstance(t, Fun):
            if kind is Kind.BASE:
                raise ShapeMismatch("function type where a base type is required", span)
            go(t.dom, env, Kind.STAR)
            go(t.cod, env.bind(t.param, t.dom), Kind.STAR)
        elif isinstance(t, AllTy):
            go(t.body, env.bindTyvar(t.tyvar, t.kind), kind)
        elif isinstance(t, AllRef):
            go(t.body, env.bindRvar(t.rvar, t.arg_sorts), kind)
        else:
            raise AssertionError(t)

    go(t, env, kind)


# ---------------------------------------------------------------------------
# subtyping


def sub(env: Env, lhs: Type, rhs: Type, span: Span, namer: Fresh) -> Cstr:
    """Constraint under which `lhs` is a subtype of `rhs`."""
    if isinstance(lhs, Base) and isinstance(rhs, Base):
        return _subBase(env, lhs, rhs, span, namer)
    if isinstance(lhs, Fun) and isinstance(rhs, Fun):
        c_arg = sub(env, rhs.dom, lhs.dom, span, namer)
        x = rhs.param
        if env.lookup(x) is not None:
            x = namer.value()
        cod_l = substTypeVar(lhs.cod, lhs.param, x, namer)
        cod_r = substTypeVar(rhs.cod, rhs.param, x, namer)
        env2 = env.bind(x, rhs.dom)
        c_cod = sub(env2, cod_l, cod_r, span, namer)
        guarded = All(x, sortOfType(rhs.dom), refinementAt(rhs.dom, x), c_cod)
        return cAnd([c_arg, guarded])
    if isinstance(lhs, AllTy) and isinstance(rhs, AllTy):
        if lhs.kind is not rhs.kind:
            raise ShapeMismatch(
                f"kind mismatch: {lhs.kind.value} vs {rhs.kind.value}", span
            )
        body_r = replaceTyvar(rhs.body, rhs.tyvar, lhs.tyvar)
        return sub(env.bindTyvar(lhs.tyvar, lhs.kind), lhs.body, body_r, span, namer)
    if isinstance(lhs, AllRef) and isinstance(rhs, AllRef):
        if lhs.arg_sorts != rhs.arg_sorts:
            raise ShapeMismatch("refinement-parameter sorts differ", span)
        body_r = replaceRvar(rhs.body, rhs.rvar, lhs.rvar)
        return sub(env.bindRvar(lhs.rvar, lhs.arg_sorts), lhs.body, body_r, span, namer)
    raise ShapeMismatch(
        f"cannot relate {showType(lhs)} and {showType(rhs)}", span
    )


def _subBase(env: Env, lhs: Base, rhs: Base, span: Span, namer: Fresh) -> Cstr:
    assert not isinstance(lhs.refinement, Hole) and not isinstance(rhs.refinement, Hole)
    b1, b2 = lhs.base, rhs.base
    comps: list[Cstr] = []
    same_shape = False
    if isinstance(b1, BInt) and isinstance(b2, BInt):
        same_shape = True
    elif isinstance(b1, BBool) and isinstance(b2, BBool):
        same_shape = True
    elif isinstance(b1, BTyVar) and isinstance(b2, BTyVar) and b1.name == b2.name:
        same_shape = True
    elif isinstance(b1, BTCon) and isinstance(b2, BTCon) and b1.tycon == b2.tycon:
        same_shape = True
        decl = env.globals.datatypes.get(b1.tycon)
        if decl is None:
            raise UnknownTycon(f"unknown type constructor {b1.tycon!r}", span)
        for ta1, ta2, p in zip(b1.targs, b2.targs, decl.tyvar_polarity):
            if p in (Polarity.POS, Polarity.BOTH):
                comps.append(sub(env, ta1, ta2, span, namer))
            if p in (Polarity.NEG, Polarity.BOTH):
                comps.append(sub(env, ta2, ta1, span, namer))
        for i, (r1, r2) in enumerate(zip(b1.rargs, b2.rargs)):
            p = decl.rvar_polarity[i]
            sorts = rvarParamSorts(env, decl, i, b1.targs)
            if p in (Polarity.POS, Polarity.BOTH):
                comps.append(_subCRef(env, r1, r2, sorts, span, namer))
            if p in (Polarity.NEG, Polarity.BOTH):
                comps.append(_subCRef(env, r2, r1, sorts, span, namer))
    if not same_shape:
        # a value of any base type may stand as a proposition witness when
        # the target's refinement does not constrain the witness itself
        if (
            isinstance(b2, BTCon)
            and b2.tycon == UNIT_TYCON
            and rhs.binder not in freeVars(rhs.refinement)
        ):
            same_shape = True
        else:
            raise ShapeMismatch(
                f"cannot relate {showType(lhs)} and {showType(rhs)}", span
            )
    v = namer.value()
    hyp = substPred(lhs.refinement, lhs.binder, Var(v))
    goal = substPred(rhs.refinement, rhs.binder, Var(v))
    if isTrivial(goal):
        core: Cstr = CAnd(())
    else:
        core = All(v, baseSort(b1), hyp, Head(goal, span))
    return cAnd([core] + comps)


def _subCRef(
    env: Env,
    c1: ConcRef,
    c2: ConcRef,
    sorts: tuple[Sort, ...],
    span: Span,
    namer: Fresh,
) -> Cstr:
    assert not isinstance(c1.body, Hole) and not isinstance(c2.body, Hole)
    params = []
    for p, s in zip(c1.params, sorts):
        name = p if env.lookup(p) is None else namer.value()
        params.append((name, s))
    ren1 = {old: Var(new) for old, (new, _) in zip(c1.params, params)}
    ren2 = {old: Var(new) for old, (new, _) in zip(c2.params, params)}
    body1 = substPreds(c1.body, ren1)
    body2 = substPreds(c2.body, ren2)
    if isTrivial(body2):
        return CAnd(())
    c: Cstr = Head(body2, span)
    for i, (name, s) in enumerate(reversed(params)):
        hyp = body1 if i == 0 else TRUE
        c = All(name, s, hyp, c)
    return c


# ---------------------------------------------------------------------------
# strengthening substitution for type variables


def tvSubst(t: Type, a: str, inst: Type, span: Span = NO_SPAN) -> Type:
    """Substitute `inst` for the type variable `a`, conjoining refinements
    at refined occurrences; only base instances may replace those."""
    if isinstance(t, Base):
        b = t.base
        if isinstance(b, BTyVar) and b.name == a:
            trivial = isTrivial(t.refinement) and not isinstance(t.refinement, Hole)
            if isinstance(inst, Base):
                merged = pAnd(
                    t.refinement,
                    substPred(inst.refinement, inst.binder, Var(t.binder)),
                )
                return Base(inst.base, t.binder, merged)
            if trivial:
                return inst
            raise RefinedVarNonBaseInstance(
                f"type variable '{a} occurs refined but is instantiated "
                f"at the non-base type {showType(inst)}",
                span,
            )
        if isinstance(b, BTCon):
            b = BTCon(
                b.tycon,
                tuple(tvSubst(x, a, inst, span) for x in b.targs),
                b.rargs,
            )
        return Base(b, t.binder, t.refinement)
    if isinstance(t, Fun):
        return Fun(t.param, tvSubst(t.dom, a, inst, span), tvSubst(t.cod, a, inst, span))
    if isinstance(t, AllTy):
        if t.tyvar == a:
            return t
        return AllTy(t.tyvar, t.kind, tvSubst(t.body, a, inst, span))
    if isinstance(t, AllRef):
        sorts = tuple(_substSort(s, a, inst) for s in t.arg_sorts)
        return AllRef(t.rvar, sorts, tvSubst(t.body, a, inst, span))
    raise AssertionError(t)


def _substSort(s: Sort, a: str, inst: Type) -> Sort:
    """Rewrite occurrences of the type variable's sort when instantiating."""
    if isinstance(s, VarSort) and s.tyvar == a:
        return sortOfType(inst)
    if isinstance(s, FuncSort):
        return FuncSort(
            tuple(_substSort(x, a, inst) for x in s.args),
            _substSort(s.result, a, inst),
        )
    return s


# ---------------------------------------------------------------------------
# pattern-match support


def meet(t1: Type, t2: Type) -> Type:
    """`t1` strengthened with `t2`'s head refinement."""
    if isinstance(t1, Base) and isinstance(t2, Base):
        extra = substPred(t2.refinement, t2.binder, Var(t1.binder))
        return Base(t1.base, t1.binder, pAnd(t1.refinement, extra))
    return t1


def dconty(env: Env, y: str, ctor: str, span: Span) -> Type:
    """Constructor signature instantiated at the scrutinee's type arguments."""
    ty = env.lookup(y)
    if ty is None:
        raise UnboundSymbol(f"unbound variable {y!r}", span)
    if not (isinstance(ty, Base) and isinstance(ty.base, BTCon)):
        raise ShapeMismatch(
            f"cannot match on {y!r}: its type {showType(ty)} is not a datatype", span
        )
    entry = env.globals.ctors.get(ctor)
    if entry is None:
        raise UnboundSymbol(f"unknown constructor {ctor!r}", span)
    tycon, sig = entry
    if tycon != ty.base.tycon:
        raise WrongConstructor(
            f"constructor {ctor} belongs to {tycon}, but {y!r} has type "
            f"{ty.base.tycon}",
            span,
        )
    for targ in ty.base.targs:
        assert isinstance(sig, AllTy)
        sig = tvSubst(sig.body, sig.tyvar, targ, span)
    for rarg in ty.base.rargs:
        assert isinstance(sig, AllRef)
        sig = rinst(sig.body, sig.rvar, rarg)
    return sig


def rinst(t: Type, rvar: str, conc: ConcRef) -> Type:
    """Replace applications of `rvar` by the concrete refinement lambda."""
    assert not isinstance(conc.body, Hole), "hole escaped instantiation"

    def goPred(p: Pred) -> Pred:
        if isinstance(p, KApp):
            if p.kvar != rvar:
                return p
            assert len(p.args) == len(conc.params)
            return substPreds(
                conc.body, {f: Var(a) for f, a in zip(conc.params, p.args)}
            )
        if isinstance(p, BinOp):
            return BinOp(p.op, goPred(p.lhs), goPred(p.rhs))
        if isinstance(p, Not):
            return Not(goPred(p.arg))
        if isinstance(p, Ite):
            return Ite(goPred(p.cond), goPred(p.then), goPred(p.els))
        if isinstance(p, UApp):
            return UApp(p.fn, tuple(goPred(a) for a in p.args))
        return p

    if isinstance(t, AllRef) and t.rvar == rvar:
        return t
    return mapRefinements(t, goPred)


def unapply(
    env: Env, y: str, binders: tuple[str, ...], ctor: str, span: Span, namer: Fresh
) -> tuple[Env, list[tuple[str, Type]], Type]:
    """Bind the pattern variables of `ctor` and strengthen the scrutinee.

    Returns the extended environment, the field bindings in order, and the
    instantiated result type (its refinement is the new fact about `y`).
    """
    sig = dconty(env, y, ctor, span)
    fields: list[tuple[str, Type]] = []
    t = sig
    for z in binders:
        if not isinstance(t, Fun):
            raise ArityMismatch(
                f"constructor {ctor} pattern binds too many variables", span
            )
        fields.append((z, t.dom))
        t = substTypeVar(t.cod, t.param, z, namer)
    if isinstance(t, Fun):
        raise ArityMismatch(
            f"constructor {ctor} pattern binds too few variables", span
        )
    assert isinstance(t, Base)
    env2 = env
    for z, zt in fields:
        env2 = env2.bind(z, zt)
    yt = env2.lookup(y)
    env2 = env2.bind(y, meet(yt, t))
    return env2, fields, t


# ---------------------------------------------------------------------------
# termination metrics


def wfp(mstar: tuple[Pred, ...], mprime: tuple[Pred, ...]) -> Pred:
    """Lexicographic well-foundedness: the primed tuple is nonnegative and
    strictly below the starred one."""
    if len(mstar) != len(mprime):
        raise SpriteError(
            f"metric length mismatch: {len(mstar)} vs {len(mprime)}"
        )
    assert mstar, "empty termination metric"

    def go(i: int) -> Pred:
        p_star, p_prime = mstar[i], mprime[i]
        lo = BinOp("<=", IntLit(0), p_prime)
        lt = BinOp("<", p_prime, p_star)
        if i == len(mstar) - 1:
            return BinOp("&&", lo, lt)
        rest = BinOp("&&", pEq(p_prime, p_star), go(i + 1))
        return BinOp("&&", lo, BinOp("||", lt, rest))

    return go(0)


def limit(env: Env, metric: tuple[Pred, ...], t: Type, span: Span, namer: Fresh) -> Type:
    """The type a recursive function's inner occurrences get: the first
    parameter prefix making the metric well-scoped is strengthened to demand
    a strictly smaller metric value."""

    def wfm(scope: dict[str, Sort], table: SymbolTable) -> bool:
        for m in metric:
            try:
                if sortOf(m, scope, table, span) != INT:
                    return False
            except SpriteError:
                return False
        return True

    table = env.globals.table
    scope = env.sortEnv()
    renames: dict[str, Pred] = {}

    def go(t: Type) -> Type:
        if isinstance(t, AllTy):
            return AllTy(t.tyvar, t.kind, go(t.body))
        if isinstance(t, AllRef):
            raise SpriteError(
                "termination metrics cannot be combined with "
                "refinement-parameter quantification",
                span,
            )
        if isinstance(t, Fun):
            x, dom, cod = t.param, t.dom, t.cod
            primed = x + "'"
            scope[x] = sortOfType(dom)
            if isinstance(dom, Base) and wfm(scope, table):
                subst = dict(renames)
                subst[x] = Var(dom.binder)
                mprime = tuple(substPreds(m, subst) for m in metric)
                strengthened = Base(
                    dom.base, dom.binder, pAnd(dom.refinement, wfp(metric, mprime))
                )
                return Fun(primed, strengthened, substTypeVar(cod, x, primed, namer))
            renames[x] = Var(primed)
            return Fun(primed, dom, go(substTypeVar(cod, x, primed, namer)))
        raise MetricNeverWellFormed(
            "termination metric never becomes well-scoped over the parameters",
            span,
        )

    stripped = t
    while isinstance(stripped, AllTy):
        stripped = stripped.body
    if not isinstance(stripped, Fun):
        raise MetricOnNonFunction(
            "termination metrics only apply to function signatures", span
        )
    return go(t)


# ---------------------------------------------------------------------------
# reflection


def reflect(
    env: Env, fname: str, t: Type, body: Pred, lam_params: list[str], span: Span
) -> tuple[Type, FuncSort]:
    """Strengthen a function signature with its own definition: the result
    equals an uninterpreted application of the function, which equals the
    embedded body."""
    tyvars: list[tuple[str, Kind]] = []
    cur = t
    while isinstance(cur, AllTy):
        tyvars.append((cur.tyvar, cur.kind))
        cur = cur.body
    if isinstance(cur, AllRef):
        raise SpriteError(
            f"cannot reflect {fname!r}: refinement-parameter quantification "
            "is not embeddable",
            span,
        )
    params: list[tuple[str, Type]] = []
    while isinstance(cur, Fun):
        params.append((cur.param, cur.dom))
        cur = cur.cod
    if not isinstance(cur, Base):
        raise SpriteError(
            f"cannot reflect {fname!r}: the result is not a base type", span
        )
    arg_sorts = []
    for x, dom in params:
        s = sortOfType(dom)
        if not isBaseSort(s):
            raise SpriteError(
                f"cannot reflect {fname!r}: parameter {x!r} is function-typed",
                span,
            )
        arg_sorts.append(s)
    fsort = FuncSort(tuple(arg_sorts), baseSort(cur.base))
    renamed = substPreds(
        body, {y: Var(x) for y, (x, _) in zip(lam_params, params)}
    )
    uf_app = UApp(fname, tuple(Var(x) for x, _ in params))
    v = Var(cur.binder)
    new_ref = pAnd(cur.refinement, pEq(v, uf_app), pEq(v, renamed))
    out: Type = Base(cur.base, cur.binder, new_ref)
    for x, dom in reversed(params):
        out = Fun(x, dom, out)
    for a, k in reversed(tyvars):
        out = AllTy(a, k, out)
    return out, fsort


# ---------------------------------------------------------------------------
# display


def showType(t: Type) -> str:
    if isinstance(t, Base):
        b = t.base
        if isinstance(b, BInt):
            head = "int"
        elif isinstance(b, BBool):
            head = "bool"
        elif isinstance(b, BTyVar):
            head = f"'{b.name}"
        else:
            head = b.tycon
            if b.targs:
                head += "(" + ", ".join(showType(a) for a in b.targs) + ")"
            if b.rargs:
                parts = []
                for r in b.rargs:
                    body = "?" if isinstance(r.body, Hole) else showPred(r.body)
                    parts.append("(" + ", ".join(r.params) + ") => " + body)
                head += "(" + ", ".join(parts) + ")"
        if isinstance(t.refinement, Hole):
            return f"{head}[?]"
        if isTrivial(t.refinement):
            return head
        return f"{head}[{t.binder}|{showPred(t.refinement)}]"
    if isinstance(t, Fun):
        return f"{t.param}:{showType(t.dom)} => {showType(t.cod)}"
    if isinstance(t, AllTy):
        return f"forall '{t.tyvar}:{t.kind.value}. {showType(t.body)}"
    if isinstance(t, AllRef):
        sorts = ", ".join(showSort(s) for s in t.arg_sorts)
        return f"rforall {t.rvar}:({sorts}) => bool. {showType(t.body)}"
    raise AssertionError(t)
