"""Interpreter for trees of composable state machines.

A specification is a tree of nodes: plain automata at the leaves, combined by
``Flow`` (both operands observe every event), ``QuantifiedFlow`` (one operand
instance per element of a finite domain), ``QuantifiedInterleave`` (one
isolated operand instance per routing value, created lazily for unbounded
domains) and ``Call`` (delegation to a named specification with argument
binding).

Execution is a labelled transition relation over immutable runtime states.
Each step threads an environment of variable bindings: a node combines the
enclosing environment with its own attribute bindings, lets its parts fire
transitions and update bindings in sequence, applies its own action, then
splits the result back into local attributes (kept on the node's state) and
enclosing updates (propagated to the caller).  Guards must be side-effect
free; actions receive a mutable scratch mapping that is committed only when
the whole step succeeds.

Determinism: automaton transitions are tried in declaration order and the
first enabled one fires; quantified domains are iterated in ascending order
of their values.  ``QuantifiedFlow.order_hook`` exists so tests can force a
different permutation.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Iterable, Mapping, MutableMapping, Sequence
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Any, Callable

from .errors import EngineError, InputError, SpecificationError

Guard = Callable[[Mapping[str, Any]], bool]
Action = Callable[[MutableMapping[str, Any]], None]


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------


class Env(Mapping):
    """Immutable map from variable names to values.

    ``override`` implements right-biased union, ``restrict`` and ``subtract``
    split a map on a set of names.  For any environment ``e`` and name set
    ``v``, ``e.restrict(v)`` and ``e.subtract(v)`` partition ``e``.
    """

    __slots__ = ("_bindings",)

    def __init__(self, bindings: Mapping[str, Any] | None = None):
        self._bindings: dict[str, Any] = dict(bindings) if bindings else {}

    @classmethod
    def _wrap(cls, bindings: dict[str, Any]) -> Env:
        env = cls.__new__(cls)
        env._bindings = bindings
        return env

    def override(self, other: Mapping[str, Any]) -> Env:
        if not other:
            return self
        merged = dict(self._bindings)
        merged.update(other)
        return Env._wrap(merged)

    def restrict(self, names: Iterable[str]) -> Env:
        keep = set(names)
        return Env._wrap({k: v for k, v in self._bindings.items() if k in keep})

    def subtract(self, names: Iterable[str]) -> Env:
        drop = set(names)
        return Env._wrap({k: v for k, v in self._bindings.items() if k not in drop})

    def set(self, name: str, value: Any) -> Env:
        merged = dict(self._bindings)
        merged[name] = value
        return Env._wrap(merged)

    def without(self, name: str) -> Env:
        if name not in self._bindings:
            return self
        merged = dict(self._bindings)
        del merged[name]
        return Env._wrap(merged)

    def __getitem__(self, name: str) -> Any:
        return self._bindings[name]

    def __iter__(self):
        return iter(self._bindings)

    def __len__(self) -> int:
        return len(self._bindings)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Env):
            return self._bindings == other._bindings
        if isinstance(other, Mapping):
            return self._bindings == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        return f"Env({self._bindings!r})"


EMPTY_ENV = Env()


# ---------------------------------------------------------------------------
# Events and patterns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    """A named occurrence with positional arguments."""

    name: str
    args: tuple[Any, ...] = ()

    def __post_init__(self) -> None:
        if not self.name:
            raise InputError("event name must be non-empty")


@dataclass(frozen=True)
class Capture:
    """Pattern slot that binds the event argument to ``name``.

    An optional ``type`` restricts the match to arguments of that type.
    """

    name: str
    type: type | tuple[type, ...] | None = None


@dataclass(frozen=True)
class Ref:
    """Pattern slot that must equal the current value of variable ``name``."""

    name: str


@dataclass(frozen=True)
class EventPattern:
    """Event name plus one slot per argument; literals match by equality."""

    name: str
    slots: tuple[Any, ...] = ()

    def match(self, event: Event, env: Mapping[str, Any]) -> dict[str, Any] | None:
        """Return capture bindings if ``event`` matches, else ``None``."""
        if event.name != self.name or len(event.args) != len(self.slots):
            return None
        captures: dict[str, Any] = {}
        for slot, arg in zip(self.slots, event.args):
            if isinstance(slot, Capture):
                if slot.type is not None and not isinstance(arg, slot.type):
                    return None
                captures[slot.name] = arg
            elif isinstance(slot, Ref):
                if slot.name not in env:
                    raise SpecificationError(
                        f"pattern for {self.name!r} references unbound variable {slot.name!r}"
                    )
                if env[slot.name] != arg:
                    return None
            elif slot != arg:
                return None
        return captures


# ---------------------------------------------------------------------------
# Specification nodes
# ---------------------------------------------------------------------------


class _UnboundedDomain:
    def __repr__(self) -> str:
        return "UNBOUNDED"


#: Marker domain for ``QuantifiedInterleave`` over an open set of values.
UNBOUNDED = _UnboundedDomain()

#: Attribute initialisers may be plain values (stored as-is) or callables
#: evaluated against the enclosing environment, one fresh value per instance.
AttrInit = Any


@dataclass(kw_only=True)
class Node:
    """Common header of every specification node.

    ``params`` names the values a ``Call`` targeting this node must bind;
    they are visible to the node like read-only enclosing variables.
    """

    name: str
    params: Sequence[str] = ()
    attrs: Sequence[tuple[str, AttrInit]] = ()
    action: Action | None = None

    def attr_names(self) -> set[str]:
        return {n for n, _ in self.attrs}


@dataclass(kw_only=True)
class Transition:
    source: str
    pattern: EventPattern
    target: str
    guard: Guard | None = None
    action: Action | None = None


@dataclass(kw_only=True)
class Automaton(Node):
    states: Sequence[str]
    initial: str
    finals: Sequence[str]
    transitions: Sequence[Transition] = ()


@dataclass(kw_only=True)
class Flow(Node):
    """Both operands observe each event; the step is accepted if either fires."""

    left: Node
    right: Node


@dataclass(kw_only=True)
class QuantifiedFlow(Node):
    """One operand instance per domain element, every instance sees each event."""

    var: str
    domain: Sequence[Any]
    body: Node
    order_hook: Callable[[list[Any]], Sequence[Any]] | None = None


@dataclass(kw_only=True)
class QuantifiedInterleave(Node):
    """One isolated operand instance per routing value.

    The routing value is taken from the event argument at ``route_arg``.  With
    ``domain=UNBOUNDED`` instances are created on first use.
    """

    var: str
    domain: Sequence[Any] | _UnboundedDomain
    body: Node
    route_arg: int = 0


@dataclass(kw_only=True)
class Call(Node):
    """Delegate to the specification registered under ``callee``.

    ``args`` binds the callee's parameters; values may be callables evaluated
    against the environment at initialisation time.
    """

    callee: str
    args: Mapping[str, AttrInit] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Runtime states
# ---------------------------------------------------------------------------


@dataclass
class AutomatonState:
    current: str
    env: Env


@dataclass
class FlowState:
    env: Env
    left: Any
    right: Any


@dataclass
class QuantifiedFlowState:
    env: Env
    instances: dict[Any, Any]


@dataclass
class QuantifiedInterleaveState:
    env: Env
    instances: dict[Any, Any]


@dataclass
class CallState:
    env: Env  # parameter bindings, constant for the life of the call
    inner: Any


_STATE_FOR_NODE = {
    Automaton: AutomatonState,
    Flow: FlowState,
    QuantifiedFlow: QuantifiedFlowState,
    QuantifiedInterleave: QuantifiedInterleaveState,
    Call: CallState,
}


def _check_shape(spec: Node, state: Any) -> None:
    expected = _STATE_FOR_NODE.get(type(spec))
    if expected is None:
        raise SpecificationError(f"unknown node type {type(spec).__name__}")
    if not isinstance(state, expected):
        raise EngineError(
            f"state {type(state).__name__} does not match node "
            f"{type(spec).__name__} {spec.name!r}"
        )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_spec(spec: Node, defs: Mapping[str, Node] | None = None) -> None:
    """Raise ``SpecificationError`` if the tree is not well formed."""
    defs = defs or {}
    _validate(spec, defs, call_chain=())


def _validate(spec: Node, defs: Mapping[str, Node], call_chain: tuple[str, ...]) -> None:
    names = [n for n, _ in spec.attrs]
    if len(names) != len(set(names)):
        raise SpecificationError(f"node {spec.name!r} declares duplicate attributes")

    if isinstance(spec, Automaton):
        states = set(spec.states)
        if spec.initial not in states:
            raise SpecificationError(f"automaton {spec.name!r}: unknown initial state")
        if not set(spec.finals) <= states:
            raise SpecificationError(f"automaton {spec.name!r}: final states not declared")
        for t in spec.transitions:
            if t.source not in states or t.target not in states:
                raise SpecificationError(
                    f"automaton {spec.name!r}: transition uses undeclared state"
                )
            caps = [s.name for s in t.pattern.slots if isinstance(s, Capture)]
            if len(caps) != len(set(caps)):
                raise SpecificationError(
                    f"automaton {spec.name!r}: duplicate capture in pattern"
                )
    elif isinstance(spec, Flow):
        _validate(spec.left, defs, call_chain)
        _validate(spec.right, defs, call_chain)
    elif isinstance(spec, QuantifiedFlow):
        if spec.var in spec.attr_names():
            raise SpecificationError(
                f"node {spec.name!r}: quantified variable shadows an attribute"
            )
        _validate(spec.body, defs, call_chain)
    elif isinstance(spec, QuantifiedInterleave):
        if spec.var in spec.attr_names():
            raise SpecificationError(
                f"node {spec.name!r}: quantified variable shadows an attribute"
            )
        if spec.route_arg < 0:
            raise SpecificationError(f"node {spec.name!r}: negative routing index")
        _validate(spec.body, defs, call_chain)
    elif isinstance(spec, Call):
        if spec.attrs or spec.action:
            raise SpecificationError(f"call {spec.name!r} must not declare attributes")
        if spec.callee in call_chain:
            raise SpecificationError(
                f"recursive call to {spec.callee!r} (chain {' -> '.join(call_chain)})"
            )
        callee = defs.get(spec.callee)
        if callee is None:
            raise SpecificationError(f"call {spec.name!r}: unresolved callee {spec.callee!r}")
        if set(spec.args) != set(callee.params):
            raise SpecificationError(
                f"call {spec.name!r}: argument names {sorted(spec.args)} do not match "
                f"parameters {sorted(callee.params)} of {spec.callee!r}"
            )
        _validate(callee, defs, call_chain + (spec.callee,))
    else:
        raise SpecificationError(f"unknown node type {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------


def init(spec: Node, env: Env | None = None, defs: Mapping[str, Node] | None = None) -> Any:
    """Build the initial runtime state of ``spec``.

    Attribute initialisers are evaluated against ``env`` extended with the
    attributes already initialised on the same node, in declaration order.
    """
    defs = defs or {}
    validate_spec(spec, defs)
    return _init(spec, env or EMPTY_ENV, defs)


def _init_attrs(spec: Node, env: Env) -> Env:
    bound: dict[str, Any] = {}
    for name, initial in spec.attrs:
        scope = env.override(bound)
        bound[name] = initial(scope) if callable(initial) else initial
    return Env(bound)


def _init(spec: Node, env: Env, defs: Mapping[str, Node]) -> Any:
    local = _init_attrs(spec, env)
    inner_env = env.override(local)
    if isinstance(spec, Automaton):
        return AutomatonState(spec.initial, local)
    if isinstance(spec, Flow):
        return FlowState(local, _init(spec.left, inner_env, defs), _init(spec.right, inner_env, defs))
    if isinstance(spec, QuantifiedFlow):
        instances = {
            value: _init(spec.body, inner_env.set(spec.var, value), defs)
            for value in sorted(spec.domain)
        }
        return QuantifiedFlowState(local, instances)
    if isinstance(spec, QuantifiedInterleave):
        if isinstance(spec.domain, _UnboundedDomain):
            return QuantifiedInterleaveState(local, {})
        instances = {
            value: _init(spec.body, inner_env.set(spec.var, value), defs)
            for value in sorted(spec.domain)
        }
        return QuantifiedInterleaveState(local, instances)
    if isinstance(spec, Call):
        callee = defs[spec.callee]
        params: dict[str, Any] = {}
        for name, value in spec.args.items():
            params[name] = value(env) if callable(value) else value
        param_env = Env(params)
        return CallState(param_env, _init(callee, env.override(param_env), defs))
    raise SpecificationError(f"unknown node type {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Final-state test
# ---------------------------------------------------------------------------


def is_final(spec: Node, state: Any, defs: Mapping[str, Node] | None = None) -> bool:
    """True when the state satisfies the node's acceptance condition."""
    defs = defs or {}
    _check_shape(spec, state)
    if isinstance(spec, Automaton):
        return state.current in set(spec.finals)
    if isinstance(spec, Flow):
        return is_final(spec.left, state.left, defs) and is_final(spec.right, state.right, defs)
    if isinstance(spec, (QuantifiedFlow, QuantifiedInterleave)):
        return all(is_final(spec.body, inst, defs) for inst in state.instances.values())
    if isinstance(spec, Call):
        return is_final(defs[spec.callee], state.inner, defs)
    raise SpecificationError(f"unknown node type {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


def step(
    spec: Node,
    state: Any,
    event: Event,
    env: Env | None = None,
    defs: Mapping[str, Node] | None = None,
) -> tuple[Any, Env] | None:
    """Attempt one transition on ``event``.

    Returns ``(new_state, new_enclosing_env)`` when some part of the tree
    fired, or ``None`` when the whole tree refuses the event.  The input
    state is never modified.
    """
    return _step(spec, state, event, env or EMPTY_ENV, defs or {})


def _step(spec, state, event, enclosing, defs):
    _check_shape(spec, state)
    if isinstance(spec, Automaton):
        return _step_automaton(spec, state, event, enclosing, defs)
    if isinstance(spec, Flow):
        return _step_flow(spec, state, event, enclosing, defs)
    if isinstance(spec, QuantifiedFlow):
        return _step_qflow(spec, state, event, enclosing, defs)
    if isinstance(spec, QuantifiedInterleave):
        return _step_qinterleave(spec, state, event, enclosing, defs)
    if isinstance(spec, Call):
        return _step_call(spec, state, event, enclosing, defs)
    raise SpecificationError(f"unknown node type {type(spec).__name__}")


def _run_action(action: Action | None, env: Env) -> Env:
    if action is None:
        return env
    scratch = dict(env)
    action(scratch)
    return Env(scratch)


def _split(spec: Node, enclosing: Env, combined: Env, make_state) -> tuple[Any, Env]:
    """Apply the node action, then partition bindings into local and enclosing."""
    final = _run_action(spec.action, combined)
    names = spec.attr_names()
    local = final.restrict(names)
    out = enclosing.override(final.subtract(names))
    return make_state(local), out


def _restore(env: Env, name: str, reference: Env) -> Env:
    """Reset ``name`` to its binding in ``reference`` (or drop it)."""
    if name in reference:
        return env.set(name, reference[name])
    return env.without(name)


def _step_automaton(spec, state, event, enclosing, defs):
    combined = enclosing.override(state.env)
    for t in spec.transitions:
        if t.source != state.current:
            continue
        captures = t.pattern.match(event, combined)
        if captures is None:
            continue
        scope = combined.override(captures)
        if t.guard is not None and not t.guard(scope):
            continue
        after = _run_action(t.action, scope)
        # Captures are transient: restore whatever they shadowed.
        for name in captures:
            after = _restore(after, name, combined)
        return _split(spec, enclosing, after, lambda local: AutomatonState(t.target, local))
    return None


def _step_flow(spec, state, event, enclosing, defs):
    combined = enclosing.override(state.env)
    fired = False
    new_left, new_right = state.left, state.right
    result = _step(spec.left, state.left, event, combined, defs)
    if result is not None:
        new_left, combined = result
        fired = True
    result = _step(spec.right, state.right, event, combined, defs)
    if result is not None:
        new_right, combined = result
        fired = True
    if not fired:
        return None
    return _split(spec, enclosing, combined, lambda local: FlowState(local, new_left, new_right))


def _step_qflow(spec, state, event, enclosing, defs):
    combined = enclosing.override(state.env)
    values = list(state.instances)
    if spec.order_hook is not None:
        ordered = list(spec.order_hook(values))
        if sorted(ordered, key=repr) != sorted(values, key=repr):
            raise SpecificationError(
                f"node {spec.name!r}: order hook must permute the domain"
            )
    else:
        ordered = sorted(values)
    fired = False
    new_instances = dict(state.instances)
    current = combined
    for value in ordered:
        result = _step(spec.body, state.instances[value], event, current.set(spec.var, value), defs)
        if result is None:
            continue
        new_instances[value], current = result
        fired = True
    if not fired:
        return None
    current = _restore(current, spec.var, combined)
    return _split(
        spec, enclosing, current, lambda local: QuantifiedFlowState(local, new_instances)
    )


def _step_qinterleave(spec, state, event, enclosing, defs):
    if spec.route_arg >= len(event.args):
        raise InputError(
            f"node {spec.name!r}: event {event.name!r} has no argument "
            f"{spec.route_arg} to route on"
        )
    value = event.args[spec.route_arg]
    if value is None:
        raise InputError(f"node {spec.name!r}: routing value is missing")
    try:
        hash(value)
    except TypeError as exc:
        raise InputError(f"node {spec.name!r}: routing value is not hashable") from exc

    combined = enclosing.override(state.env)
    if value in state.instances:
        instance = state.instances[value]
    elif isinstance(spec.domain, _UnboundedDomain):
        instance = _init(spec.body, combined.set(spec.var, value), defs)
    else:
        return None  # outside a bounded domain

    result = _step(spec.body, instance, event, combined.set(spec.var, value), defs)
    if result is None:
        return None
    new_instance, current = result
    new_instances = dict(state.instances)
    new_instances[value] = new_instance
    current = _restore(current, spec.var, combined)
    return _split(
        spec, enclosing, current, lambda local: QuantifiedInterleaveState(local, new_instances)
    )


def _step_call(spec, state, event, enclosing, defs):
    callee = defs.get(spec.callee)
    if callee is None:
        raise SpecificationError(f"call {spec.name!r}: unresolved callee {spec.callee!r}")
    combined = enclosing.override(state.env)
    result = _step(callee, state.inner, event, combined, defs)
    if result is None:
        return None
    new_inner, out = result
    # Parameters are constant; strip them before propagating updates.
    return CallState(state.env, new_inner), enclosing.override(out.subtract(callee.params))


# ---------------------------------------------------------------------------
# Debug serialization
# ---------------------------------------------------------------------------


def _dump_value(value: Any) -> Any:
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, (datetime, date)):
        return value.isoformat()
    if isinstance(value, (list, tuple)):
        return [_dump_value(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted((_dump_value(v) for v in value), key=repr)
    if isinstance(value, Mapping):
        items = sorted(value.items(), key=lambda kv: (type(kv[0]).__name__, repr(kv[0])))
        return {str(k): _dump_value(v) for k, v in items}
    if hasattr(value, "to_debug_dict"):
        out = {"type": type(value).__name__}
        out.update(_dump_value(value.to_debug_dict()))
        return out
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        out = {"type": type(value).__name__}
        for f in dataclasses.fields(value):
            out[f.name] = _dump_value(getattr(value, f.name))
        return out
    return {"type": type(value).__name__}


def state_to_dict(state: Any) -> dict[str, Any]:
    """Plain-data view of a runtime state with deterministic ordering."""
    if isinstance(state, AutomatonState):
        return {"kind": "automaton", "current": state.current, "env": _dump_value(state.env)}
    if isinstance(state, FlowState):
        return {
            "kind": "flow",
            "env": _dump_value(state.env),
            "left": state_to_dict(state.left),
            "right": state_to_dict(state.right),
        }
    if isinstance(state, (QuantifiedFlowState, QuantifiedInterleaveState)):
        kind = "quantified_flow" if isinstance(state, QuantifiedFlowState) else "quantified_interleave"
        keys = sorted(state.instances, key=lambda k: (type(k).__name__, repr(k)))
        return {
            "kind": kind,
            "env": _dump_value(state.env),
            "instances": {str(k): state_to_dict(state.instances[k]) for k in keys},
        }
    if isinstance(state, CallState):
        return {"kind": "call", "env": _dump_value(state.env), "inner": state_to_dict(state.inner)}
    raise EngineError(f"cannot serialize {type(state).__name__}")


def dump_state(state: Any) -> str:
    """Canonical nested text form of a runtime state (stable key order)."""
    return json.dumps(state_to_dict(state), sort_keys=True, indent=2)
