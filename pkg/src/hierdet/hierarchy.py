"""Label hierarchy: parsing, ancestor queries and label expansion.

The hierarchy document follows the Open Images challenge layout::

    {"LabelName": "/m/0bl9f",
     "Subcategory": [{"LabelName": "/m/01g317",
                      "Subcategory": [{"LabelName": "/m/04yx4"}]}]}

A label may appear under several parents, so the hierarchy is a DAG.
"""
import csv
import json
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from .errors import CycleError, ParseError, UnknownLabelError

# "Entity", the container root of the Open Images challenge hierarchy files.
OPEN_IMAGES_ROOT = "/m/0bl9f"


class LabelHierarchy:
    """Immutable DAG of labels with precomputed ancestor closures.

    Construct from a ``{label: parents}`` mapping; every label mentioned as a
    parent must also be a key. Use :func:`parse_hierarchy` for documents.
    """

    def __init__(self, parents: Mapping[str, Iterable[str]],
                 display_names: Optional[Mapping[str, str]] = None):
        self._parents: Dict[str, FrozenSet[str]] = {}
        for label, ps in parents.items():
            if not isinstance(label, str) or not label:
                raise ValueError(f"label ids must be non-empty strings, got {label!r}")
            self._parents[label] = frozenset(ps)
        for label, ps in self._parents.items():
            for p in ps:
                if p not in self._parents:
                    raise UnknownLabelError(p)
        self._names = dict(display_names or {})

        order = _topological_order(self._parents)
        self._ancestors: Dict[str, FrozenSet[str]] = {}
        self._depth: Dict[str, int] = {}
        for label in order:
            ps = self._parents[label]
            anc = set(ps)
            for p in ps:
                anc |= self._ancestors[p]
            self._ancestors[label] = frozenset(anc)
            self._depth[label] = 1 + max((self._depth[p] for p in ps), default=-1)

        # ancestors deepest-first, then by id: the order expansion emits them in
        self._expansion: Dict[str, Tuple[str, ...]] = {
            label: tuple(sorted(anc, key=lambda a: (-self._depth[a], a)))
            for label, anc in self._ancestors.items()
        }

    def __contains__(self, label) -> bool:
        return label in self._parents

    def __len__(self) -> int:
        return len(self._parents)

    def __iter__(self):
        return iter(self._parents)

    def __repr__(self):
        return f"LabelHierarchy({len(self)} labels, {len(self.roots())} roots)"

    @property
    def nodes(self) -> FrozenSet[str]:
        return frozenset(self._parents)

    def parents(self, label: str) -> FrozenSet[str]:
        self._check(label)
        return self._parents[label]

    def ancestors(self, label: str) -> FrozenSet[str]:
        self._check(label)
        return self._ancestors[label]

    def depth(self, label: str) -> int:
        self._check(label)
        return self._depth[label]

    def roots(self) -> List[str]:
        return sorted(label for label, ps in self._parents.items() if not ps)

    def display_name(self, label: str) -> str:
        return self._names.get(label, label)

    def with_display_names(self, names: Mapping[str, str]) -> "LabelHierarchy":
        merged = dict(self._names)
        merged.update(names)
        return LabelHierarchy(self._parents, merged)

    def expansion_order(self, label: str) -> Tuple[str, ...]:
        self._check(label)
        return self._expansion[label]

    def _check(self, label):
        if label not in self._parents:
            raise UnknownLabelError(label)


def _topological_order(parents: Mapping[str, FrozenSet[str]]) -> List[str]:
    """Parents-before-children order; raises CycleError on a cycle."""
    WHITE, GREY, BLACK = 0, 1, 2
    colour = dict.fromkeys(parents, WHITE)
    order = []
    for start in sorted(parents):
        if colour[start] != WHITE:
            continue
        colour[start] = GREY
        stack = [(start, iter(sorted(parents[start])))]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                colour[node] = BLACK
                order.append(node)
            elif colour[nxt] == GREY:
                raise CycleError(nxt)
            elif colour[nxt] == WHITE:
                colour[nxt] = GREY
                stack.append((nxt, iter(sorted(parents[nxt]))))
    return order


def ancestors(h: LabelHierarchy, label: str) -> FrozenSet[str]:
    return h.ancestors(label)


def parse_hierarchy(document, container_labels: Iterable[str] = (OPEN_IMAGES_ROOT,),
                    source=None) -> LabelHierarchy:
    """Build a :class:`LabelHierarchy` from a hierarchy document.

    ``document`` may be JSON text, or the already-decoded object: a single
    node or a list of top-level nodes. Nodes whose label is in
    ``container_labels`` are treated as pure containers: their children
    become roots and the container never appears as an ancestor.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, source=source, line=exc.lineno, column=exc.colno) from None

    containers = set(container_labels)
    parents: Dict[str, set] = {}
    tops = document if isinstance(document, list) else [document]
    # (node, parent label or None, location for error messages)
    stack = [(node, None, f"[{i}]") for i, node in reversed(list(enumerate(tops)))]
    while stack:
        node, parent, where = stack.pop()
        if not isinstance(node, dict):
            raise ParseError(f"expected an object at {where}", source=source)
        label = node.get("LabelName")
        if not isinstance(label, str) or not label:
            raise ParseError(f"missing or empty LabelName at {where}", source=source)
        children = node.get("Subcategory", [])
        if not isinstance(children, list):
            raise ParseError(f"Subcategory at {where} must be a list", source=source)

        if label in containers:
            own = None
        else:
            parents.setdefault(label, set())
            if parent is not None:
                parents[label].add(parent)
            own = label
        for i in range(len(children) - 1, -1, -1):
            stack.append((children[i], own, f"{where}.Subcategory[{i}]"))

    return LabelHierarchy(parents)


def load_hierarchy(path, names_path=None, container_labels=(OPEN_IMAGES_ROOT,)) -> LabelHierarchy:
    path = Path(path)
    h = parse_hierarchy(path.read_text(), container_labels=container_labels, source=path)
    if names_path is not None:
        h = h.with_display_names(load_display_names(names_path))
    return h


def load_display_names(path) -> Dict[str, str]:
    """Read a ``LabelName,DisplayName`` CSV (header optional)."""
    names = {}
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise ParseError("expected LabelName,DisplayName", source=path, line=lineno)
            if lineno == 1 and row[0] == "LabelName":
                continue
            names[row[0]] = row[1]
    return names


def expand_records(h: LabelHierarchy, records: Iterable, keep: Optional[Iterable[str]] = None) -> list:
    """Add one copy of every record per ancestor of its label.

    Works on any named tuple with a ``label`` field. Copies keep every other
    field. Exact duplicate records are merged, keeping the first occurrence.
    Output is ordered by input record, each followed by its ancestors
    deepest-first. If ``keep`` is given, only ancestors in it are emitted.
    """
    keep = None if keep is None else frozenset(keep)
    expansion = h._expansion
    seen = set()
    out = []
    for rec in records:
        label = rec.label
        try:
            ancs = expansion[label]
        except KeyError:
            raise UnknownLabelError(label) from None
        if rec not in seen:
            seen.add(rec)
            out.append(rec)
        for a in ancs:
            if keep is not None and a not in keep:
                continue
            copy = rec._replace(label=a)
            if copy not in seen:
                seen.add(copy)
                out.append(copy)
    return out


def expand_detections(h: LabelHierarchy, dets, keep=None) -> list:
    return expand_records(h, dets, keep)
