"""Bracketed constituency trees: parsing, linearization and single-node edits."""
import logging
from typing import Iterator, List, Optional, Sequence, Tuple

from app.exceptions import TreeParseError
from app.models.domain import Leaf, Node, ParseTree, tree_leaves

logger = logging.getLogger(__name__)

Path = Tuple[int, ...]


def parse_tree(text: str) -> ParseTree:
    """
    Parse a PTB-style bracketing such as ``(ROOT (NP (DT A) (NN dog)))``.

    A node's label is optional, so ``( (S ...))`` is accepted with an empty root label.

    Args:
        text: Bracketed parse string

    Returns:
        The parsed tree

    Raises:
        TreeParseError: on unbalanced parentheses, empty nodes or trailing input
    """
    index = _skip_space(text, 0)
    if index >= len(text) or text[index] != "(":
        raise TreeParseError("expected '('", index)
    tree, index = _parse_node(text, index)
    index = _skip_space(text, index)
    if index != len(text):
        raise TreeParseError("unexpected trailing input", index)
    return tree


def _skip_space(text: str, index: int) -> int:
    while index < len(text) and text[index].isspace():
        index += 1
    return index


def _read_symbol(text: str, index: int) -> Tuple[str, int]:
    start = index
    while index < len(text) and not text[index].isspace() and text[index] not in "()":
        index += 1
    return text[start:index], index


def _parse_node(text: str, index: int) -> Tuple[Node, int]:
    # text[index] == "("
    index = _skip_space(text, index + 1)
    label = ""
    if index < len(text) and text[index] not in "()":
        label, index = _read_symbol(text, index)
    children: List[ParseTree] = []
    while True:
        index = _skip_space(text, index)
        if index >= len(text):
            raise TreeParseError("unbalanced parentheses", index)
        char = text[index]
        if char == ")":
            if not children:
                raise TreeParseError("empty node", index)
            return Node(label=label, children=tuple(children)), index + 1
        if char == "(":
            child, index = _parse_node(text, index)
            children.append(child)
        else:
            token, index = _read_symbol(text, index)
            children.append(Leaf(token=token))


def linearize(tree: ParseTree) -> List[str]:
    """Left-to-right leaf tokens."""
    return tree_leaves(tree)


def leaf_count(tree: ParseTree) -> int:
    return len(tree_leaves(tree))


def internal_nodes(tree: ParseTree) -> Iterator[Tuple[Path, Node]]:
    """Pre-order walk over internal nodes with their child-index paths."""
    stack: List[Tuple[Path, ParseTree]] = [((), tree)]
    while stack:
        path, item = stack.pop()
        if isinstance(item, Node):
            yield path, item
            for i in range(len(item.children) - 1, -1, -1):
                stack.append((path + (i,), item.children[i]))


def subtree_at(tree: ParseTree, path: Sequence[int]) -> ParseTree:
    for i in path:
        if not isinstance(tree, Node):
            raise IndexError(f"path {tuple(path)} runs past a leaf")
        tree = tree.children[i]
    return tree


def delete_subtree(tree: ParseTree, path: Sequence[int]) -> Optional[ParseTree]:
    """
    Remove the subtree at ``path``.

    Ancestors left without children are pruned as well. Returns None when the
    whole tree would disappear.
    """
    if not path:
        return None
    assert isinstance(tree, Node)
    head, rest = path[0], path[1:]
    replacement = delete_subtree(tree.children[head], rest)
    children = list(tree.children)
    if replacement is None:
        del children[head]
    else:
        children[head] = replacement
    if not children:
        return None
    return Node(label=tree.label, children=tuple(children))


def insert_subtree(tree: ParseTree, path: Sequence[int], position: int, donor: ParseTree) -> ParseTree:
    """Graft ``donor`` as child number ``position`` of the internal node at ``path``."""
    if not isinstance(tree, Node):
        raise IndexError("insertion point must be an internal node")
    children = list(tree.children)
    if not path:
        children.insert(position, donor)
    else:
        children[path[0]] = insert_subtree(children[path[0]], path[1:], position, donor)
    return Node(label=tree.label, children=tuple(children))


def replace_leaf(tree: ParseTree, leaf_index: int, token: str) -> ParseTree:
    """Return a copy of ``tree`` whose ``leaf_index``-th leaf carries ``token``."""
    new_tree, remaining = _replace_leaf(tree, leaf_index, token)
    if remaining >= 0:
        raise IndexError(f"leaf index {leaf_index} out of range")
    return new_tree


def _replace_leaf(tree: ParseTree, index: int, token: str) -> Tuple[ParseTree, int]:
    if isinstance(tree, Leaf):
        return (Leaf(token=token) if index == 0 else tree), index - 1
    children = []
    for child in tree.children:
        if index < 0:
            children.append(child)
            continue
        child, index = _replace_leaf(child, index, token)
        children.append(child)
    return Node(label=tree.label, children=tuple(children)), index
