"""Boolean field queries in the Web of Science, PubMed and USPTO surface syntaxes.

The three dialects share one AST::

    TI=siRNA or TI="RNA interference"                 (wos / canonical)
    siRNA[Title] or "RNA interference"[Title]         (pubmed)
    ACLM/(siRNA or "RNA interference")                (uspto, claims only)

``and`` binds tighter than ``or``; parentheses group. There is no negation.
``*`` is the wildcard everywhere except USPTO, which writes it as ``$``.
"""

from __future__ import annotations

import datetime as _dt
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Union

from estmap.records import Corpus, Provenance, Record

FIELDS = ("TI", "AB", "CLM", "MH")
DIALECTS = ("wos", "pubmed", "uspto", "canonical")

# dialect field spellings -> AST field
_WOS_FIELDS = {"TI": "TI", "AB": "AB"}
_CANONICAL_FIELDS = {"TI": "TI", "AB": "AB", "CLM": "CLM", "MH": "MH"}
_PUBMED_FIELDS = {
    "title": "TI", "ti": "TI",
    "abstract": "AB", "ab": "AB",
    "mesh terms": "MH", "mesh": "MH", "mh": "MH",
}
_USPTO_FIELDS = {"ACLM": "CLM"}
_PUBMED_TAG = {"TI": "Title", "AB": "Abstract", "MH": "MeSH Terms"}


class QuerySyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at offset {position}")


class UnsupportedFieldError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    field: str
    pattern: str
    is_phrase: bool = False

    def __post_init__(self):
        if self.field not in FIELDS:
            raise ValueError(f"unknown field {self.field!r}")
        if not self.pattern.strip():
            raise ValueError("empty search term")


@dataclass(frozen=True)
class And:
    children: tuple["Node", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("And needs at least two operands")


@dataclass(frozen=True)
class Or:
    children: tuple["Node", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("Or needs at least two operands")


Node = Union[Term, And, Or]


def make_and(*children: Node) -> Node:
    return _combine(And, children)


def make_or(*children: Node) -> Node:
    return _combine(Or, children)


def _combine(cls, children: Iterable[Node]) -> Node:
    flat: list[Node] = []
    for c in children:
        flat.extend(c.children if isinstance(c, cls) else (c,))
    return flat[0] if len(flat) == 1 else cls(tuple(flat))


# ---------------------------------------------------------------------------
# tokenizer

@dataclass(frozen=True)
class _Tok:
    kind: str  # LP RP AND OR WORD PHRASE PREFIX SUFFIX EOF
    value: str
    pos: int


_WORD_STOP = set(' \t\r\n()"[]')


def _tokenize(text: str, dialect: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(text)
    prefix_re = {
        "wos": re.compile(r"([A-Za-z]{2,4})\s*="),
        "canonical": re.compile(r"([A-Za-z]{2,4})\s*="),
        "uspto": re.compile(r"([A-Za-z]{2,5})/"),
    }.get(dialect)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch == "(":
            toks.append(_Tok("LP", ch, i))
            i += 1
        elif ch == ")":
            toks.append(_Tok("RP", ch, i))
            i += 1
        elif ch == '"':
            end = text.find('"', i + 1)
            if end < 0:
                raise QuerySyntaxError("unterminated phrase", i)
            toks.append(_Tok("PHRASE", text[i + 1:end], i))
            i = end + 1
        elif ch == "[":
            if dialect != "pubmed":
                raise QuerySyntaxError("unexpected '['", i)
            end = text.find("]", i + 1)
            if end < 0:
                raise QuerySyntaxError("unterminated field tag", i)
            toks.append(_Tok("SUFFIX", text[i + 1:end].strip(), i))
            i = end + 1
        elif ch == "]":
            raise QuerySyntaxError("unexpected ']'", i)
        else:
            m = prefix_re.match(text, i) if prefix_re else None
            if m:
                toks.append(_Tok("PREFIX", m.group(1), i))
                i = m.end()
                continue
            j = i
            stop = _WORD_STOP | ({"="} if dialect in ("wos", "canonical") else set())
            while j < n and text[j] not in stop:
                j += 1
            if j == i:
                raise QuerySyntaxError(f"unexpected {ch!r}", i)
            word = text[i:j]
            low = word.lower()
            kind = "AND" if low == "and" else "OR" if low == "or" else "WORD"
            toks.append(_Tok(kind, word, i))
            i = j
    toks.append(_Tok("EOF", "", n))
    return toks


# ---------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, text: str, dialect: str):
        self.text = text
        self.dialect = dialect
        self.toks = _tokenize(text, dialect)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str) -> _Tok:
        tok = self.peek()
        if tok.kind != kind:
            what = "end of query" if tok.kind == "EOF" else repr(tok.value)
            raise QuerySyntaxError(f"expected {kind}, found {what}", tok.pos)
        return self.take()

    def parse(self) -> Node:
        node = self.expr(None)
        tok = self.peek()
        if tok.kind != "EOF":
            if tok.kind == "RP":
                raise QuerySyntaxError("unbalanced ')'", tok.pos)
            raise QuerySyntaxError(f"unexpected {tok.value!r}", tok.pos)
        return node

    def expr(self, field: Optional[str]) -> Node:
        parts = [self.conj(field)]
        while self.peek().kind == "OR":
            self.take()
            parts.append(self.conj(field))
        return make_or(*parts)

    def conj(self, field: Optional[str]) -> Node:
        parts = [self.atom(field)]
        while self.peek().kind == "AND":
            self.take()
            parts.append(self.atom(field))
        return make_and(*parts)

    def field_for_prefix(self, tok: _Tok) -> str:
        name = tok.value
        if self.dialect == "uspto":
            table = _USPTO_FIELDS
            key = name.upper()
            if key not in table:
                raise QuerySyntaxError(f"USPTO queries are restricted to claims (ACLM/), got {name}/", tok.pos)
        elif self.dialect == "wos":
            table, key = _WOS_FIELDS, name.upper()
        else:
            table, key = _CANONICAL_FIELDS, name.upper()
        if key not in table:
            raise QuerySyntaxError(f"unknown field {name!r}", tok.pos)
        return table[key]

    def atom(self, field: Optional[str]) -> Node:
        tok = self.peek()
        if tok.kind == "PREFIX":
            if field is not None:
                raise QuerySyntaxError("nested field prefix", tok.pos)
            self.take()
            inner = self.field_for_prefix(tok)
            if self.peek().kind == "LP":
                lp = self.take()
                node = self.expr(inner)
                self._close(lp)
                return node
            return self.term(inner)
        if tok.kind == "LP":
            self.take()
            node = self.expr(field)
            self._close(tok)
            return node
        if tok.kind in ("WORD", "PHRASE"):
            if field is not None:
                return self.term(field)
            if self.dialect == "pubmed":
                return self.pubmed_term()
            raise QuerySyntaxError(f"term {tok.value!r} has no field", tok.pos)
        if tok.kind == "EOF":
            raise QuerySyntaxError("unexpected end of query", tok.pos)
        raise QuerySyntaxError(f"unexpected {tok.value!r}", tok.pos)

    def _close(self, lp: _Tok) -> None:
        tok = self.peek()
        if tok.kind != "RP":
            if tok.kind == "EOF":
                raise QuerySyntaxError(f"unbalanced '(' opened at offset {lp.pos}", tok.pos)
            raise QuerySyntaxError(f"expected ')', found {tok.value!r}", tok.pos)
        self.take()

    def _pattern(self, tok: _Tok) -> str:
        text = tok.value.strip() if tok.kind == "PHRASE" else tok.value
        if not text:
            raise QuerySyntaxError("empty term", tok.pos)
        if self.dialect == "uspto":
            text = text.replace("$", "*")
        return text

    def term(self, field: str) -> Term:
        tok = self.peek()
        if tok.kind not in ("WORD", "PHRASE"):
            if tok.kind == "EOF":
                raise QuerySyntaxError("empty term", tok.pos)
            raise QuerySyntaxError(f"expected a term, found {tok.value!r}", tok.pos)
        self.take()
        return Term(field, self._pattern(tok), tok.kind == "PHRASE")

    def pubmed_term(self) -> Term:
        tok = self.take()
        suffix = self.peek()
        if suffix.kind != "SUFFIX":
            raise QuerySyntaxError(f"term {tok.value!r} lacks a [field] tag", suffix.pos)
        self.take()
        field = _PUBMED_FIELDS.get(suffix.value.lower())
        if field is None:
            raise QuerySyntaxError(f"unknown field [{suffix.value}]", suffix.pos)
        return Term(field, self._pattern(tok), tok.kind == "PHRASE")


def parse_query(text: str, dialect: str = "canonical") -> Node:
    """Parse ``text`` written in ``dialect`` into an AST."""
    if dialect not in DIALECTS:
        raise ValueError(f"unknown dialect {dialect!r}")
    if not text or not text.strip():
        raise QuerySyntaxError("empty query", 0)
    return _Parser(text, dialect).parse()


# ---------------------------------------------------------------------------
# emitter

def _quote(pattern: str, phrase: bool) -> str:
    return f'"{pattern}"' if phrase else pattern


def emit_query(node: Node, dialect: str = "wos", retarget: bool = False) -> str:
    """Render ``node`` in ``dialect``.

    USPTO output is claims-only; TI terms are moved to claims when
    ``retarget`` is set, any other field raises :class:`UnsupportedFieldError`.
    """
    if dialect == "uspto":
        body = _emit(node, "uspto", retarget, top=True)
        return f"ACLM/({body})"
    if dialect not in ("wos", "pubmed", "canonical"):
        raise ValueError(f"unknown dialect {dialect!r}")
    return _emit(node, dialect, retarget, top=True)


def _emit(node: Node, dialect: str, retarget: bool, top: bool = False) -> str:
    if isinstance(node, Term):
        if dialect in ("wos", "canonical"):
            if dialect == "wos" and node.field not in _WOS_FIELDS:
                raise UnsupportedFieldError(f"Web of Science queries have no {node.field} field")
            return f"{node.field}={_quote(node.pattern, node.is_phrase)}"
        if dialect == "pubmed":
            if node.field == "CLM":
                raise UnsupportedFieldError("PubMed has no claims field")
            return f"{_quote(node.pattern, node.is_phrase)}[{_PUBMED_TAG[node.field]}]"
        if node.field != "CLM" and not (retarget and node.field == "TI"):
            raise UnsupportedFieldError(f"USPTO queries only search claims; got field {node.field}")
        return _quote(node.pattern.replace("*", "$"), node.is_phrase)
    op = " and " if isinstance(node, And) else " or "
    text = op.join(_emit(c, dialect, retarget) for c in node.children)
    return text if top else f"({text})"


def canonical_text(node: Node) -> str:
    """Canonical query text (WoS surface syntax, with CLM= and MH= fields allowed)."""
    return emit_query(node, "canonical")


# ---------------------------------------------------------------------------
# evaluation

_TEXT_TOKEN = re.compile(r"[^\W_]+(?:-[^\W_]+)*")


def tokenize_text(text: str) -> list[str]:
    """Case-folded tokens; hyphens inside a word keep it one token."""
    return [t.casefold() for t in _TEXT_TOKEN.findall(text or "")]


def tokenize_pattern(pattern: str) -> list[str]:
    return [t.casefold() for t in re.findall(r"[\w*]+(?:-[\w*]+)*", pattern.replace("_", " "))]


@lru_cache(maxsize=4096)
def _glob(token: str):
    if "*" not in token:
        return token.__eq__
    pieces = [re.escape(p) for p in token.split("*")]
    rx = re.compile(".*".join(pieces), re.DOTALL)
    return lambda s: rx.fullmatch(s) is not None


def _field_texts(term: Term, record: Record) -> list[str]:
    if term.field == "TI":
        return [record.title] if record.title else []
    if term.field == "AB":
        return [record.abstract] if record.abstract else []
    if term.field == "CLM":
        return [record.claims] if record.claims else []
    return [c.label or c.code for c in record.codes if c.scheme == "mesh"]


def _match_term(term: Term, record: Record) -> bool:
    pats = tokenize_pattern(term.pattern)
    if not pats:
        return False
    matchers = [_glob(p) for p in pats]
    k = len(matchers)
    for text in _field_texts(term, record):
        toks = tokenize_text(text)
        for start in range(len(toks) - k + 1):
            if all(m(toks[start + j]) for j, m in enumerate(matchers)):
                return True
    return False


def evaluate(node: Node, record: Record) -> bool:
    if isinstance(node, Term):
        return _match_term(node, record)
    if isinstance(node, And):
        return all(evaluate(c, record) for c in node.children)
    return any(evaluate(c, record) for c in node.children)


def delineate(records: Iterable[Record], node: Node, year_range: Optional[tuple[int, int]] = None,
              name: str = "corpus", source_db: str = "wos",
              retrieved_on: Optional[str] = None) -> Corpus:
    """Select the records matching ``node`` (and the inclusive year range)."""
    lo, hi = year_range if year_range else (1900, 2100)
    ids = frozenset(r.id for r in records if lo <= r.year <= hi and evaluate(node, r))
    when = retrieved_on or _dt.date.today().isoformat()
    return Corpus(name, ids, Provenance(canonical_text(node), source_db, when))


def normalize_surface(text: str) -> str:
    """Apply the emitter's spelling conventions to hand-written query text.

    Outside quotes: ``AND``/``OR`` are lower-cased, whitespace after a
    ``FIELD=`` prefix and before a ``[Field]`` tag is removed, and runs of
    whitespace collapse to one space. Phrase contents are left untouched.
    """
    out = []
    for i, chunk in enumerate(re.split(r'("[^"]*")', text)):
        if i % 2:
            out.append(chunk)
            continue
        chunk = re.sub(r"\b(and|or)\b", lambda m: m.group().lower(), chunk, flags=re.IGNORECASE)
        chunk = re.sub(r"=\s+", "=", chunk)
        chunk = re.sub(r"\s+\[", "[", chunk)
        chunk = re.sub(r"\s+", " ", chunk)
        out.append(chunk)
    return "".join(out).strip()
