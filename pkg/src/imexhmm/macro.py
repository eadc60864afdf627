"""Macroscopic FE-HMM stiffness assembly from sampled diffusion tensors."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fe import FESpace, QuadratureRule, assemble_stiffness
from .micro import CellConfig, TensorCache, homogenized_tensor_exact
from .model import DEFAULT_PROBLEM, ProblemSpec, oscillatory_coefficient

logger = logging.getLogger(__name__)

KINDS = ("exact", "hmm", "raw", "constant")


class CellProblemError(RuntimeError):
    """A micro problem failed while sampling the HMM tensor."""

    def __init__(self, point, cause: BaseException):
        super().__init__(f"cell problem at macro point ({point[0]:.15g}, {point[1]:.15g}) failed: {cause}")
        self.point = tuple(point)


class TensorField:
    """Point-wise provider of symmetric 2x2 diffusion tensors.

    Calling the field with ``(N, 2)`` points returns ``(N, 2, 2)`` values.
    """

    def __init__(self, kind: str, evaluate: Callable[[np.ndarray], np.ndarray], **info):
        if kind not in KINDS:
            raise ValueError(f"unknown tensor field kind {kind!r}")
        self.kind = kind
        self._evaluate = evaluate
        self.info = info

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        values = np.asarray(self._evaluate(pts), dtype=float)
        if values.shape != (pts.shape[0], 2, 2):
            raise ValueError(f"{self.kind} field returned shape {values.shape}")
        return values

    def __repr__(self) -> str:
        return f"TensorField({self.kind!r})"

    @classmethod
    def constant(cls, value) -> TensorField:
        a = np.asarray(value, dtype=float)
        if a.ndim == 0:
            a = a * np.eye(2)
        return cls("constant", lambda p: np.broadcast_to(a, (p.shape[0], 2, 2)).copy(), value=a)

    @classmethod
    def exact(cls) -> TensorField:
        return cls("exact", homogenized_tensor_exact)

    @classmethod
    def raw(cls, spec: ProblemSpec = DEFAULT_PROBLEM) -> TensorField:
        return cls("raw", lambda p: oscillatory_coefficient(p, spec), spec=spec)

    @classmethod
    def hmm(cls, template: CellConfig, cache: TensorCache | None = None, threads: int = 1) -> TensorField:
        """Effective tensors from cell problems moved to each evaluation point.

        Evaluations may be dispatched over ``threads`` workers; results are
        collected in input order so the assembled matrix does not depend on
        scheduling.
        """
        cache = TensorCache() if cache is None else cache

        def one(point):
            try:
                return cache.get(template.at(point))
            except Exception as exc:  # noqa: BLE001 - re-raised with location
                raise CellProblemError(point, exc) from exc

        def evaluate(points):
            if threads == 1 or len(points) < 2:
                values = [one(p) for p in points]
            else:
                with ThreadPoolExecutor(max_workers=threads or None) as pool:
                    values = list(pool.map(one, points))
            return np.stack(values)

        return cls("hmm", evaluate, template=template, cache=cache)


def assemble_hmm_stiffness(
    space: FESpace, field: TensorField, rule: QuadratureRule | None = None
) -> sp.csr_matrix:
    """Macro bilinear form ``sum_K sum_j w_j A(x_j) grad u . grad v``.

    The tensor is sampled once per physical quadrature point; for an HMM
    field each sample costs one pair of cell problems unless cached.
    """
    return assemble_stiffness(space, field, rule or space.default_rule())
