"""
Parser for the infix expression strings used in run configurations.

Grammar (no implicit multiplication):

    sum     := product (("+" | "-") product)*
    product := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?
    atom    := number | coordinate | name "[" int "]" | name "@" int
             | function "(" sum ")" | name | "(" sum ")"

Coordinates are q1..qN and p1..pN. `name[k]` is the k-th site component of a
parameter and `name@k` a generator symbol on site k, both 1-based. A bare
name is a parameter when listed in `parameters`, otherwise a placeholder.
"""
import re
from typing import Iterable, List, Optional, Tuple

from .errors import ConfigError
from .expr import UNARY_CONSTRUCTORS, Expression, add, const, div, mul, neg, p, param, power, q, sub, symbol

TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()\[\]@])"
    r")"
)
COORDINATE = re.compile(r"(?P<kind>[qp])(?P<index>[1-9]\d*)")
FUNCTIONS = {name: fn for name, fn in UNARY_CONSTRUCTORS.items() if name != "neg"}

Token = Tuple[str, str, int]


def tokenize(text: str) -> List[Token]:
    """(kind, value, offset) triples; raises ConfigError on stray characters."""
    tokens: List[Token] = []
    position = 0
    text = text.rstrip()
    while position < len(text):
        match = TOKEN.match(text, position)
        if match is None or match.end() == position:
            raise ConfigError(f"unexpected character {text[position]!r} at offset {position} in {text!r}")
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), match.start(kind)))
        position = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str, parameters: Iterable[str]):
        self.text = text
        self.tokens = tokenize(text)
        self.index = 0
        self.parameters = set(parameters)

    def error(self, message: str) -> ConfigError:
        offset = self.tokens[self.index][2] if self.index < len(self.tokens) else len(self.text)
        return ConfigError(f"{message} at offset {offset} in {self.text!r}")

    def peek(self) -> Optional[Token]:
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def accept(self, value: str) -> bool:
        token = self.peek()
        if token is not None and token[0] == "op" and token[1] == value:
            self.index += 1
            return True
        return False

    def expect(self, value: str) -> None:
        if not self.accept(value):
            raise self.error(f"expected {value!r}")

    def parse(self) -> Expression:
        if not self.tokens:
            raise ConfigError("empty expression")
        result = self.sum()
        if self.peek() is not None:
            raise self.error(f"unexpected {self.peek()[1]!r}")
        return result

    def sum(self) -> Expression:
        left = self.product()
        while True:
            if self.accept("+"):
                left = add(left, self.product())
            elif self.accept("-"):
                left = sub(left, self.product())
            else:
                return left

    def product(self) -> Expression:
        left = self.unary()
        while True:
            if self.accept("*"):
                left = mul(left, self.unary())
            elif self.accept("/"):
                left = div(left, self.unary())
            else:
                return left

    def unary(self) -> Expression:
        if self.accept("-"):
            return neg(self.unary())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.accept("^"):
            return power(base, self.unary())
        return base

    def site(self) -> int:
        token = self.peek()
        if token is None or token[0] != "number" or not token[1].isdigit() or int(token[1]) < 1:
            raise self.error("expected a positive site index")
        self.index += 1
        return int(token[1]) - 1

    def atom(self) -> Expression:
        token = self.peek()
        if token is None:
            raise self.error("unexpected end of expression")
        kind, value, _ = token
        if kind == "number":
            self.index += 1
            return const(float(value))
        if kind == "op":
            if self.accept("("):
                inner = self.sum()
                self.expect(")")
                return inner
            raise self.error(f"unexpected {value!r}")
        self.index += 1
        if value in FUNCTIONS and self.accept("("):
            argument = self.sum()
            self.expect(")")
            return FUNCTIONS[value](argument)
        if self.accept("["):
            index = self.site()
            self.expect("]")
            return param(value, index)
        if self.accept("@"):
            return symbol(value, self.site())
        coordinate = COORDINATE.fullmatch(value)
        if coordinate:
            index = int(coordinate.group("index")) - 1
            return q(index) if coordinate.group("kind") == "q" else p(index)
        if value in self.parameters:
            return param(value)
        return symbol(value)


def parse_expression(text: str, parameters: Iterable[str] = ()) -> Expression:
    """Parse an infix string into a term graph."""
    if not isinstance(text, str):
        raise ConfigError(f"expression must be a string, got {type(text).__name__}")
    return _Parser(text, parameters).parse()
