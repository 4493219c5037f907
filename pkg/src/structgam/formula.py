"""The model formula mini-language.

Grammar (whitespace-insensitive)::

    formula := ident '~' term ('+' term)*
    term    := '1'
             | ident
             | 'offset' '(' ident ')'
             | ('s' | 'te') '(' ident (',' ident)* (',' kv)* ')'
    kv      := ('k' | 'bs' | 'by' | 'center') '=' value
    value   := integer | '(' integer (',' integer)* ')'   -- for k
             | 'cr' | 'cc' | 're'                         -- for bs
             | ident                                      -- for by
             | 'true' | 'false'                           -- for center

An intercept is always included; writing ``1`` makes it explicit.  There is
deliberately no arithmetic inside formulas: transformations belong to data
ingestion so the dataset stays the single source of truth.

Resolution against a dataset schema classifies each smooth by the roles of
its arguments: a scalar smooth, a varying-coefficient term (scalar by), a
per-level duplicated smooth (factor by), a summed functional term (matrix
argument with matrix by), or a summed lag tensor (two matrix margins).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .bases import BasisSpec
from .errors import FormulaSyntaxError, ResolutionError
from .terms import TermSpec

DEFAULT_K_SMOOTH = 10
DEFAULT_K_TENSOR = 5

_BS_KINDS = {"cr": "bspline-cubic", "cc": "cyclic-cubic", "re": "random-effect"}
_BS_CODES = {v: k for k, v in _BS_KINDS.items()}


@dataclass(frozen=True)
class TermNode:
    func: str  # intercept | linear | offset | s | te
    args: tuple[str, ...] = ()
    k: tuple[int, ...] | None = None
    bs: str | None = None
    by: str | None = None
    center: bool | None = None


@dataclass(frozen=True)
class FormulaAST:
    response: str
    terms: tuple[TermNode, ...]


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<number>\d+)"
    r"|(?P<op>[~+,=()]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # ident | number | op | eof
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            at = len(text) - len(stripped)
            raise FormulaSyntaxError(
                f"unexpected character {text[at]!r}", at
            )
        if m.group("ident"):
            tokens.append(_Token("ident", m.group("ident"), m.start("ident")))
        elif m.group("number"):
            tokens.append(_Token("number", m.group("number"), m.start("number")))
        else:
            tokens.append(_Token("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, expected=(), tok: _Token | None = None):
        tok = tok or self.peek()
        shown = tok.text or "end of input"
        raise FormulaSyntaxError(
            f"{message} (got {shown!r})", tok.pos, expected
        )

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if tok.kind == "op" and tok.text == op:
            return self.advance()
        self.fail(f"expected {op!r}", expected=(op,))

    def expect_ident(self, what="identifier") -> _Token:
        tok = self.peek()
        if tok.kind == "ident":
            return self.advance()
        self.fail(f"expected {what}", expected=("identifier",))

    # grammar -------------------------------------------------------------

    def formula(self) -> FormulaAST:
        response = self.expect_ident("response name").text
        self.expect_op("~")
        terms = [self.term()]
        while self.peek().kind == "op" and self.peek().text == "+":
            self.advance()
            terms.append(self.term())
        tok = self.peek()
        if tok.kind != "eof":
            self.fail("expected '+' or end of formula", expected=("+", "eof"))
        return FormulaAST(response=response, terms=tuple(terms))

    def term(self) -> TermNode:
        tok = self.peek()
        if tok.kind == "number":
            if tok.text != "1":
                self.fail("only '1' (the intercept) may appear as a bare number")
            self.advance()
            return TermNode(func="intercept")
        name = self.expect_ident("term").text
        name_tok = self.tokens[self.i - 1]
        nxt = self.peek()
        if not (nxt.kind == "op" and nxt.text == "("):
            return TermNode(func="linear", args=(name,))
        if name == "offset":
            self.advance()
            var = self.expect_ident("offset column").text
            self.expect_op(")")
            return TermNode(func="offset", args=(var,))
        if name not in ("s", "te"):
            self.fail(f"unknown function name {name!r}", tok=name_tok)
        self.advance()  # '('
        if self.peek().kind == "op" and self.peek().text == ")":
            self.fail("expected at least one smooth argument", tok=name_tok,
                      expected=("identifier",))
        args = []
        options: dict[str, object] = {}
        first = True
        while True:
            if not first:
                tok = self.peek()
                if tok.kind == "op" and tok.text == ")":
                    self.advance()
                    break
                self.expect_op(",")
            first = False
            tok = self.expect_ident("argument or option name")
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text == "=":
                self.advance()
                self.option(tok, options)
            else:
                if options:
                    self.fail("positional argument after keyword option",
                              tok=tok)
                args.append(tok.text)
        if not args:
            self.fail("smooth term has no covariate arguments", tok=name_tok)
        return TermNode(
            func=name,
            args=tuple(args),
            k=options.get("k"),
            bs=options.get("bs"),
            by=options.get("by"),
            center=options.get("center"),
        )

    def option(self, key_tok: _Token, options: dict) -> None:
        key = key_tok.text
        if key not in ("k", "bs", "by", "center"):
            self.fail(f"unknown option {key!r}", tok=key_tok,
                      expected=("k", "bs", "by", "center"))
        if key in options:
            self.fail(f"duplicate keyword {key!r}", tok=key_tok)
        if key == "k":
            tok = self.peek()
            if tok.kind == "number":
                self.advance()
                options["k"] = (int(tok.text),)
            elif tok.kind == "op" and tok.text == "(":
                self.advance()
                ks = [int(self.expect_number().text)]
                while self.peek().kind == "op" and self.peek().text == ",":
                    self.advance()
                    ks.append(int(self.expect_number().text))
                self.expect_op(")")
                options["k"] = tuple(ks)
            else:
                self.fail("expected an integer or '(' after k=",
                          expected=("number", "("))
        elif key == "bs":
            tok = self.expect_ident("basis code")
            if tok.text not in _BS_KINDS:
                self.fail(
                    f"unknown basis code {tok.text!r}", tok=tok,
                    expected=tuple(_BS_KINDS),
                )
            options["bs"] = tok.text
        elif key == "by":
            options["by"] = self.expect_ident("by column").text
        else:
            tok = self.expect_ident("true or false")
            if tok.text not in ("true", "false"):
                self.fail("center takes true or false", tok=tok,
                          expected=("true", "false"))
            options["center"] = tok.text == "true"

    def expect_number(self) -> _Token:
        tok = self.peek()
        if tok.kind == "number":
            return self.advance()
        self.fail("expected an integer", expected=("number",))


def parse(text: str) -> FormulaAST:
    """Parse formula text into an AST, reporting byte offsets on failure."""
    return _Parser(text).formula()


def unparse(ast: FormulaAST) -> str:
    """Canonical text for an AST; ``parse(unparse(a))`` is structurally ``a``."""
    parts = []
    for t in ast.terms:
        if t.func == "intercept":
            parts.append("1")
        elif t.func == "linear":
            parts.append(t.args[0])
        elif t.func == "offset":
            parts.append(f"offset({t.args[0]})")
        else:
            bits = list(t.args)
            if t.k is not None:
                if len(t.k) == 1:
                    bits.append(f"k={t.k[0]}")
                else:
                    bits.append("k=(" + ", ".join(str(v) for v in t.k) + ")")
            if t.bs is not None:
                bits.append(f"bs={t.bs}")
            if t.by is not None:
                bits.append(f"by={t.by}")
            if t.center is not None:
                bits.append(f"center={'true' if t.center else 'false'}")
            parts.append(f"{t.func}(" + ", ".join(bits) + ")")
    return f"{ast.response} ~ " + " + ".join(parts)


def term_label(node: TermNode) -> str:
    if node.func == "intercept":
        return "intercept"
    if node.func == "linear":
        return node.args[0]
    if node.func == "offset":
        return f"offset({node.args[0]})"
    return unparse(FormulaAST(response="_", terms=(node,))).split("~ ", 1)[1]


# ---------------------------------------------------------------------------
# resolution against a dataset schema


def _roles(schema) -> dict:
    """Accept a Dataset, DatasetSchema-like mapping or plain dict."""
    if hasattr(schema, "column_info"):
        return schema.column_info()
    out = {}
    for name, val in schema.items():
        if isinstance(val, str):
            out[name] = (val, 1)
        else:
            out[name] = (val[0], val[1])
    return out


def _require(roles, name, node_label):
    if name not in roles:
        raise ResolutionError(
            f"term {node_label!r} references unknown column {name!r}"
        )
    return roles[name]


def resolve(ast: FormulaAST, schema):
    """Classify parsed terms against a schema.

    Returns ``(response, offset_column_or_None, term_specs)`` where the term
    specs include an intercept (always) plus the smooth/tensor terms in
    formula order.
    """
    roles = _roles(schema)
    if ast.response not in roles:
        raise ResolutionError(f"unknown response column {ast.response!r}")
    if roles[ast.response][0] != "scalar":
        raise ResolutionError(f"response {ast.response!r} must be scalar")

    offset = None
    specs: list[TermSpec] = []
    seen_intercept = False
    labels = set()

    def add(spec: TermSpec):
        if spec.label in labels:
            raise ResolutionError(f"duplicate term label {spec.label!r}")
        labels.add(spec.label)
        specs.append(spec)

    for node in ast.terms:
        label = term_label(node)
        if node.func == "intercept":
            if seen_intercept:
                raise ResolutionError("duplicate intercept term")
            seen_intercept = True
            continue
        if node.func == "offset":
            if offset is not None:
                raise ResolutionError("a model may have at most one offset")
            role, _ = _require(roles, node.args[0], label)
            if role != "scalar":
                raise ResolutionError(
                    f"offset column {node.args[0]!r} must be scalar"
                )
            offset = node.args[0]
            continue
        if node.func == "linear":
            role, _ = _require(roles, node.args[0], label)
            if role != "scalar":
                raise ResolutionError(
                    f"linear term {node.args[0]!r} must be a scalar column; "
                    "factors enter via by= or bs=re"
                )
            add(TermSpec(kind="linear", vars=node.args, label=label))
            continue
        add(_resolve_smooth(node, label, roles))

    intercept_spec = TermSpec(kind="intercept", label="intercept")
    return ast.response, offset, [intercept_spec] + specs


def _margin_k(node: TermNode, n_margins: int, default: int, label: str):
    if node.k is None:
        return (default,) * n_margins
    if len(node.k) == 1 and n_margins > 1:
        return node.k * n_margins
    if len(node.k) != n_margins:
        raise ResolutionError(
            f"term {label!r}: k list has {len(node.k)} entries for "
            f"{n_margins} margins"
        )
    return node.k


def _resolve_smooth(node: TermNode, label: str, roles) -> TermSpec:
    arg_roles = [_require(roles, a, label) for a in node.args]
    kinds = [r[0] for r in arg_roles]
    widths = [r[1] for r in arg_roles]

    if node.func == "s":
        if node.bs == "re":
            if len(node.args) != 1 or kinds[0] != "factor":
                raise ResolutionError(
                    f"term {label!r}: bs=re needs a single factor argument"
                )
            if node.by is not None:
                raise ResolutionError(
                    f"term {label!r}: by= is not supported on random effects"
                )
            # k is the level count, filled from the data at build time
            return TermSpec(
                kind="smooth", vars=node.args,
                bases=(BasisSpec(kind="random-effect", k=1),),
                center=False, label=label,
            )
        if len(node.args) != 1:
            raise ResolutionError(
                f"term {label!r}: multivariate smooths use te(...); "
                "s() takes a single covariate"
            )
        basis_kind = _BS_KINDS[node.bs or "cr"]
        k = _margin_k(node, 1, DEFAULT_K_SMOOTH, label)[0]
        basis = BasisSpec(kind=basis_kind, k=k)
        var_role = kinds[0]

        if node.by is None:
            if var_role == "matrix":
                raise ResolutionError(
                    f"term {label!r}: a matrix-valued smooth needs by= a "
                    "matrix column of the same width"
                )
            if var_role == "factor":
                raise ResolutionError(
                    f"term {label!r}: factor smooths need bs=re"
                )
            center = True if node.center is None else node.center
            return TermSpec(kind="smooth", vars=node.args, bases=(basis,),
                            center=center, label=label)

        by_role, by_width = _require(roles, node.by, label)
        if var_role == "matrix":
            if by_role != "matrix":
                raise ResolutionError(
                    f"term {label!r}: matrix argument {node.args[0]!r} needs "
                    f"a matrix by-column, got {by_role} {node.by!r}"
                )
            if by_width != widths[0]:
                raise ResolutionError(
                    f"term {label!r}: matrix columns must be of the same "
                    f"size, got widths {widths[0]} and {by_width}"
                )
            center = False if node.center is None else node.center
            return TermSpec(kind="smooth", vars=node.args, bases=(basis,),
                            by=("matrix", node.by), center=center, label=label)
        if var_role == "factor":
            raise ResolutionError(f"term {label!r}: factor smooths need bs=re")
        if by_role == "factor":
            center = True if node.center is None else node.center
            return TermSpec(kind="smooth", vars=node.args, bases=(basis,),
                            by=("factor", node.by), center=center, label=label)
        if by_role == "matrix":
            raise ResolutionError(
                f"term {label!r}: scalar smooth cannot take a matrix by-column"
            )
        center = False if node.center is None else node.center
        return TermSpec(kind="smooth", vars=node.args, bases=(basis,),
                        by=("numeric", node.by), center=center, label=label)

    # te(...) ---------------------------------------------------------------
    if node.by is not None:
        raise ResolutionError(
            f"term {label!r}: by= on tensor terms is not supported"
        )
    if node.bs == "re":
        raise ResolutionError(f"term {label!r}: bs=re applies to s() terms")
    if len(node.args) < 2:
        raise ResolutionError(f"term {label!r}: te() needs at least 2 margins")
    ks = _margin_k(node, len(node.args), DEFAULT_K_TENSOR, label)
    basis_kind = _BS_KINDS[node.bs or "cr"]
    bases = tuple(BasisSpec(kind=basis_kind, k=k) for k in ks)

    if all(k == "matrix" for k in kinds):
        if len(node.args) != 2:
            raise ResolutionError(
                f"term {label!r}: a summed lag tensor takes exactly two "
                "matrix margins"
            )
        if widths[0] != widths[1]:
            raise ResolutionError(
                f"term {label!r}: matrix columns must be of the same size, "
                f"got widths {widths[0]} and {widths[1]}"
            )
        center = True if node.center is None else node.center
        if not center:
            raise ResolutionError(
                f"term {label!r}: the summed lag tensor is centered for "
                "identifiability; center=false is not supported"
            )
        return TermSpec(kind="tensor", vars=node.args, bases=bases,
                        center=True, label=label)
    if any(k == "matrix" for k in kinds):
        raise ResolutionError(
            f"term {label!r}: cannot mix matrix and scalar margins in one "
            "smooth without a by"
        )
    if any(k == "factor" for k in kinds):
        raise ResolutionError(f"term {label!r}: factors enter via bs=re")
    center = True if node.center is None else node.center
    return TermSpec(kind="tensor", vars=node.args, bases=bases,
                    center=center, label=label)
