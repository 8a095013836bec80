"""Scenario file schema (JSON) and its resolution into library objects."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError

from ..errors import NcwwError, ParseError, ValidationError
from ..superop import (
    SuperOperator,
    clock_shift,
    identity_operator,
    make_conjugation,
    make_convolution,
    make_expectation_product,
    make_matrix,
    make_nc_torus_heat,
)
from ..tracealg import AlgElement, TracialAlgebra
from ..weights import (
    WeightSequence,
    character,
    exp_unimodular,
    gen_constant,
    gen_convergent,
    gen_ergodic_sample,
    gen_random_phase,
    gen_rotation,
    gen_trig_poly,
    gen_von_mangoldt,
    indicator,
)


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ComplexValue(_Model):
    re: float = 0.0
    im: float = 0.0


class Turns(_Model):
    """Unimodular number ``exp(2 pi i turns)``."""
    turns: float


Scalar = Union[float, ComplexValue]
Unimodular = Union[Turns, ComplexValue, float]
Matrix = list[list[Scalar]]


def to_complex(v) -> complex:
    if isinstance(v, Turns):
        return exp_unimodular(v.turns)
    if isinstance(v, ComplexValue):
        return complex(v.re, v.im)
    return complex(v)


# -- algebra and elements ----------------------------------------------------
class AlgebraSpec(_Model):
    blocks: list[tuple[int, float]] = Field(min_length=1)


class ExplicitElement(_Model):
    kind: Literal["explicit"]
    blocks: list[Matrix]


class DiagElement(_Model):
    kind: Literal["diag"]
    values: list[Unimodular]


class IdentityElement(_Model):
    kind: Literal["identity"]


class RandomElement(_Model):
    kind: Literal["random", "random_unitary", "random_contraction", "random_hermitian"]
    seed: Optional[int] = None


class ClockShiftElement(_Model):
    kind: Literal["clock", "shift"]
    p: int = 1


ElementSpec = Annotated[
    Union[ExplicitElement, DiagElement, IdentityElement, RandomElement, ClockShiftElement],
    Field(discriminator="kind"),
]


class EigenvectorInit(_Model):
    kind: Literal["eigenvector"]
    index: int = Field(ge=0)


class FlightComponentInit(_Model):
    kind: Literal["flight_component"]
    of: ElementSpec


InitialSpec = Annotated[
    Union[ExplicitElement, DiagElement, IdentityElement, RandomElement, ClockShiftElement,
          EigenvectorInit, FlightComponentInit],
    Field(discriminator="kind"),
]


# -- operators -------------------------------------------------------------------
class ConjugationOp(_Model):
    kind: Literal["conjugation"]
    u: ElementSpec


class IdentityOp(_Model):
    kind: Literal["identity"]


class ConvolutionOp(_Model):
    kind: Literal["convolution"]
    phi: "OperatorSpec"
    mu: list[tuple[int, float]] = Field(min_length=1)


class ExpectationOp(_Model):
    kind: Literal["expectation_product"]
    subalgebras: list[Union[str, dict[str, Any]]] = Field(min_length=1)


class HeatOp(_Model):
    kind: Literal["nc_torus_heat"]
    q: int
    p: int
    t: float


class MatrixOp(_Model):
    kind: Literal["matrix"]
    data: Matrix


OperatorSpec = Annotated[
    Union[ConjugationOp, IdentityOp, ConvolutionOp, ExpectationOp, HeatOp, MatrixOp],
    Field(discriminator="kind"),
]
ConvolutionOp.model_rebuild()


# -- weights ----------------------------------------------------------------------
class ConstantW(_Model):
    id: str
    kind: Literal["constant"]
    value: Scalar = 1.0


class RotationW(_Model):
    id: str
    kind: Literal["rotation"]
    mu: Unimodular


class TrigPolyW(_Model):
    id: str
    kind: Literal["trig_poly"]
    coeffs: list[tuple[Scalar, Unimodular]] = Field(min_length=1)


class ConvergentW(_Model):
    """``alpha_k = limit + offset / (k + 1)**power``."""
    id: str
    kind: Literal["convergent"]
    limit: Scalar = 0.0
    offset: Scalar = 1.0
    power: float = Field(1.0, gt=0)


class MangoldtW(_Model):
    id: str
    kind: Literal["von_mangoldt"]


class ErgodicSampleW(_Model):
    id: str
    kind: Literal["ergodic_sample"]
    theta: float
    omega: float = 0.0
    f: Literal["indicator", "character", "constant"] = "indicator"
    a: float = 0.0
    b: float = 0.5
    m: int = 1
    value: float = 1.0


class RandomPhaseW(_Model):
    id: str
    kind: Literal["random_phase"]
    seed: Optional[int] = None


WeightSpec = Annotated[
    Union[ConstantW, RotationW, TrigPolyW, ConvergentW, MangoldtW, ErgodicSampleW, RandomPhaseW],
    Field(discriminator="kind"),
]


# -- experiments and scenario ---------------------------------------------------------
EXPERIMENT_KINDS = ("weighted", "primes", "mangoldt", "moving", "uniform_ww", "return_time",
                    "jdlg", "validate", "stability_probe")


class ExperimentSpec(_Model):
    id: str
    kind: Literal["weighted", "primes", "mangoldt", "moving", "uniform_ww", "return_time",
                  "jdlg", "validate", "stability_probe"]
    weights: Optional[list[str]] = None
    params: dict[str, Any] = Field(default_factory=dict)


class CheckpointSpec(_Model):
    policy: Literal["dyadic", "explicit"] = "dyadic"
    start: int = Field(2, ge=1)
    values: Optional[list[int]] = None


class OutputSpec(_Model):
    dir: str = "ncwwlab-out"


class Scenario(_Model):
    name: str = "scenario"
    seed: Optional[int] = None
    algebra: Optional[AlgebraSpec] = None
    operator: OperatorSpec
    require_ds: bool = False
    weights: list[WeightSpec] = Field(default_factory=list)
    initial_element: InitialSpec
    experiments: list[ExperimentSpec] = Field(min_length=1)
    n_max: int = Field(1 << 17, ge=2)
    checkpoints: CheckpointSpec = Field(default_factory=CheckpointSpec)
    trace_budget: Optional[float] = Field(None, gt=0)
    truncation_mode: Literal["bilateral", "right"] = "bilateral"
    decay_threshold: float = Field(1e-2, gt=0)
    output: OutputSpec = Field(default_factory=OutputSpec)


def scenario_json_schema() -> dict:
    return Scenario.model_json_schema()


# -- loading -----------------------------------------------------------------------------
def load_scenario(path) -> tuple[Scenario, bytes]:
    """Parse and schema-check a scenario file; errors carry the line or field."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        where = f"line {exc.lineno}, column {exc.colno}: " if isinstance(exc, json.JSONDecodeError) else ""
        raise ParseError(f"{path}: {where}{exc.msg if hasattr(exc, 'msg') else exc}") from exc
    try:
        scenario = Scenario.model_validate(data)
    except PydanticValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise ParseError(f"{path}: field '{field}': {first['msg']}") from exc
    return scenario, raw


def scenario_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


# -- resolution ----------------------------------------------------------------------------
class Resolver:
    """Turns specs into library objects, tracking the scenario seed."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    def seed_for(self, own: Optional[int], what: str) -> int:
        if own is not None:
            return own
        if self.scenario.seed is None:
            raise ValidationError(f"{what} is random but neither it nor the scenario has a seed")
        return self.scenario.seed

    def algebra(self) -> TracialAlgebra:
        op = self.scenario.operator
        heat_alg = self._heat_algebra(op)
        if heat_alg is not None:
            if self.scenario.algebra is not None and TracialAlgebra(self.scenario.algebra.blocks) != heat_alg:
                raise ValidationError("operator nc_torus_heat fixes the algebra to [(q, 1/q)]; "
                                      "the scenario algebra disagrees")
            return heat_alg
        if self.scenario.algebra is None:
            raise ValidationError("scenario needs an 'algebra' unless the operator is nc_torus_heat")
        return TracialAlgebra(self.scenario.algebra.blocks)

    def _heat_algebra(self, op) -> TracialAlgebra | None:
        if isinstance(op, HeatOp):
            return TracialAlgebra([(op.q, 1.0 / op.q)])
        if isinstance(op, ConvolutionOp):
            return self._heat_algebra(op.phi)
        return None

    def element(self, alg: TracialAlgebra, spec, what: str = "element") -> AlgElement:
        if isinstance(spec, ExplicitElement):
            return alg.element([np.array([[to_complex(v) for v in row] for row in m]) for m in spec.blocks])
        if isinstance(spec, DiagElement):
            return alg.diag([to_complex(v) for v in spec.values])
        if isinstance(spec, IdentityElement):
            return alg.identity()
        if isinstance(spec, RandomElement):
            rng = np.random.default_rng(self.seed_for(spec.seed, what))
            return {
                "random": alg.random_element, "random_unitary": alg.random_unitary,
                "random_contraction": alg.random_contraction, "random_hermitian": alg.random_hermitian,
            }[spec.kind](rng)
        if isinstance(spec, ClockShiftElement):
            if len(alg.blocks) != 1:
                raise ValidationError(f"{spec.kind} needs a single-block algebra")
            u, v = clock_shift(alg.dims[0], spec.p)
            return alg.element([u if spec.kind == "clock" else v])
        raise ValidationError(f"unsupported element spec {spec!r}")

    def operator(self, alg: TracialAlgebra, spec=None) -> SuperOperator:
        spec = self.scenario.operator if spec is None else spec
        if isinstance(spec, ConjugationOp):
            return make_conjugation(self.element(alg, spec.u, "operator.u"))
        if isinstance(spec, IdentityOp):
            return identity_operator(alg)
        if isinstance(spec, ConvolutionOp):
            return make_convolution(self.operator(alg, spec.phi), [(n, w) for n, w in spec.mu])
        if isinstance(spec, ExpectationOp):
            return make_expectation_product(alg, spec.subalgebras)
        if isinstance(spec, HeatOp):
            return make_nc_torus_heat(spec.q, spec.p, spec.t)
        if isinstance(spec, MatrixOp):
            return make_matrix(alg, [[to_complex(v) for v in row] for row in spec.data])
        raise ValidationError(f"unsupported operator spec {spec!r}")

    def weight(self, spec) -> WeightSequence:
        if isinstance(spec, ConstantW):
            return gen_constant(to_complex(spec.value), name=spec.id)
        if isinstance(spec, RotationW):
            return gen_rotation(to_complex(spec.mu), name=spec.id)
        if isinstance(spec, TrigPolyW):
            return gen_trig_poly([(to_complex(r), to_complex(l)) for r, l in spec.coeffs], name=spec.id)
        if isinstance(spec, ConvergentW):
            lim, off, pw = to_complex(spec.limit), to_complex(spec.offset), spec.power
            return gen_convergent(lambda k: lim + off / (np.asarray(k) + 1.0) ** pw, lim, name=spec.id)
        if isinstance(spec, MangoldtW):
            w = gen_von_mangoldt()
            w.name = spec.id
            return w
        if isinstance(spec, ErgodicSampleW):
            if spec.f == "indicator":
                f, fclass = indicator(spec.a, spec.b), math.inf
            elif spec.f == "character":
                f, fclass = character(spec.m), math.inf
            else:
                value = spec.value
                f, fclass = (lambda t: np.full(np.shape(t), value)), math.inf
            return gen_ergodic_sample(spec.theta, spec.omega, f, fclass, name=spec.id)
        if isinstance(spec, RandomPhaseW):
            return gen_random_phase(self.seed_for(spec.seed, f"weight {spec.id}"), name=spec.id)
        raise ValidationError(f"unsupported weight spec {spec!r}")

    def weights(self) -> dict[str, WeightSequence]:
        out: dict[str, WeightSequence] = {}
        for spec in self.scenario.weights:
            if spec.id in out:
                raise ValidationError(f"duplicate weight id {spec.id!r}")
            out[spec.id] = self.weight(spec)
        return out

    def initial(self, alg: TracialAlgebra, T: SuperOperator) -> AlgElement:
        spec = self.scenario.initial_element
        if isinstance(spec, EigenvectorInit):
            vals, vecs = np.linalg.eig(T.hs_matrix)
            order = sorted(range(len(vals)), key=lambda i: (-round(abs(vals[i]), 12),
                                                             round(float(np.angle(vals[i])), 12), i))
            if spec.index >= len(order):
                raise ValidationError(f"eigenvector index {spec.index} out of range {len(order)}")
            v = vecs[:, order[spec.index]]
            v = v / np.linalg.norm(v)
            j = int(np.argmax(np.abs(v)))
            v = v * (abs(v[j]) / v[j])
            return alg.unvec(v)
        if isinstance(spec, FlightComponentInit):
            from ..spectral import jdlg_split
            return jdlg_split(T).flight_part(self.element(alg, spec.of, "initial_element.of"))
        return self.element(alg, spec, "initial_element")


def resolve(scenario: Scenario):
    """``(algebra, operator, x, weights)``; library errors become ValidationError."""
    r = Resolver(scenario)
    try:
        alg = r.algebra()
        T = r.operator(alg)
        x = r.initial(alg, T)
        weights = r.weights()
    except ValidationError:
        raise
    except NcwwError as exc:
        raise ValidationError(f"{type(exc).__name__}: {exc}") from exc
    for exp in scenario.experiments:
        for wid in exp.weights or []:
            if wid not in weights:
                raise ValidationError(f"experiment {exp.id!r} references unknown weight {wid!r}")
    ids = [e.id for e in scenario.experiments]
    if len(set(ids)) != len(ids):
        raise ValidationError("experiment ids must be unique")
    return alg, T, x, weights
