import math
import typing as T
from enum import Enum

import torch
from torch import Tensor, nn


class ModelKind(str, Enum):
    ROTATE = 'rotate'
    COMPLEX = 'complex'


class Parameterization(str, Enum):
    FREE_COMPLEX = 'free-complex'
    UNIT_PHASE = 'unit-modulus-phase'


class ScoreGrads(T.NamedTuple):
    # complex tensors pack d/dRe + i d/dIm; for RotatE the relation entry is the real
    # gradient with respect to the phase angle
    relation: Tensor
    subject: Tensor
    object: Tensor


def _check_dims(*vectors: Tensor) -> None:
    dims = {v.shape[-1] for v in vectors}
    if len(dims) != 1:
        raise ValueError(f'Dimension mismatch between complex vectors: {sorted(dims)}')


def _reduce(grad: Tensor, like: Tensor) -> Tensor:
    """
    Sum a broadcast gradient back to the shape of the input it belongs to.
    """
    if grad.shape == like.shape:
        return grad
    return grad.sum_to_size(like.shape)


def score_complex(w_r: Tensor, e_s: Tensor, e_o: Tensor) -> Tensor:
    """
    ComplEx score -Re(<w_r, e_s, conj(e_o)>) over the last dimension. Lower is more
    plausible. Inputs broadcast.
    """
    _check_dims(w_r, e_s, e_o)
    return -(w_r * e_s * e_o.conj()).real.sum(dim=-1)


def score_rotate(w_r: Tensor, e_s: Tensor, e_o: Tensor) -> Tensor:
    """
    RotatE score: sum of elementwise complex moduli of e_s * w_r - e_o.
    """
    _check_dims(w_r, e_s, e_o)
    return (e_s * w_r - e_o).abs().sum(dim=-1)


def score(w_r: Tensor, e_s: Tensor, e_o: Tensor, kind: ModelKind) -> Tensor:
    if kind == ModelKind.COMPLEX:
        return score_complex(w_r, e_s, e_o)
    if kind == ModelKind.ROTATE:
        return score_rotate(w_r, e_s, e_o)
    raise ValueError(f'Unknown model kind {kind!r}')


def score_type_space(v_r: Tensor, t_s: Tensor, t_o: Tensor, kind: ModelKind) -> Tensor:
    # type triples are scored exactly like KG triples, at the type dimension
    return score(v_r, t_s, t_o, kind)


def score_gradients(
    w_r: Tensor, e_s: Tensor, e_o: Tensor, kind: ModelKind, upstream: T.Optional[Tensor] = None
) -> ScoreGrads:
    """
    Analytic gradients of sum(upstream * score) with respect to each input, reduced to
    each input's shape. For a complex input z the gradient is returned as
    d/dRe(z) + i d/dIm(z). RotatE relations are unit-modulus rotations exp(i theta)
    and get the gradient with respect to theta. An exactly-zero RotatE residual
    element contributes the subgradient 0.
    """
    _check_dims(w_r, e_s, e_o)
    if kind == ModelKind.COMPLEX:
        g_w = -(e_s.conj() * e_o)
        g_s = -(w_r.conj() * e_o)
        g_o = -(w_r * e_s)
    elif kind == ModelKind.ROTATE:
        residual = e_s * w_r - e_o
        modulus = residual.abs()
        unit = torch.where(modulus > 0, residual / modulus.clamp_min(1e-300), torch.zeros_like(residual))
        g_w = unit * e_s.conj()
        g_s = unit * w_r.conj()
        g_o = -unit
    else:
        raise ValueError(f'Unknown model kind {kind!r}')

    if upstream is not None:
        coef = upstream[..., None]
        g_w, g_s, g_o = g_w * coef, g_s * coef, g_o * coef

    g_w = _reduce(g_w, w_r)
    if kind == ModelKind.ROTATE:
        # d w / d theta = i w
        g_w = (g_w.conj() * (1j * w_r)).real
    return ScoreGrads(g_w, _reduce(g_s, e_s), _reduce(g_o, e_o))


class EmbeddingTable(nn.Module):
    def __init__(
        self, rows: int, dim: int, kind: str,
        parameterization: Parameterization = Parameterization.FREE_COMPLEX,
        init_bound: float = 1.0, generator: T.Optional[torch.Generator] = None,
    ) -> None:
        """
        Table of complex vectors.

        Free-complex rows are stored as real (rows, dim, 2) tensors and viewed as
        complex; unit-modulus rows are stored as phase angles (rows, dim) and
        materialized as cos + i sin, so their modulus is 1 by construction.

        Args:
            rows (int): Number of vectors.
            dim (int): Complex dimension.
            kind (str): entity, relation, type or type-relation. Informational.
            init_bound (float): Free-complex components are drawn uniformly from
                [-init_bound, init_bound]; phases from [-pi, pi].
        """
        super().__init__()
        if rows < 1 or dim < 1:
            raise ValueError(f'Embedding table needs positive rows and dim, got {rows}x{dim}')
        self.rows = rows
        self.dim = dim
        self.kind = kind
        self.parameterization = Parameterization(parameterization)
        if self.parameterization == Parameterization.UNIT_PHASE:
            data = (torch.rand(rows, dim, dtype=torch.float64, generator=generator) * 2 - 1) * math.pi
        else:
            data = (torch.rand(rows, dim, 2, dtype=torch.float64, generator=generator) * 2 - 1) * init_bound
        self.weight = nn.Parameter(data)

    @property
    def is_phase(self) -> bool:
        return self.parameterization == Parameterization.UNIT_PHASE

    def lookup(self, ids: Tensor) -> Tensor:
        """
        Complex vectors for an integer id tensor, shape ids.shape + (dim,).
        """
        rows = self.weight.detach()[ids]
        if self.is_phase:
            return torch.polar(torch.ones_like(rows), rows)
        return torch.view_as_complex(rows)

    def all(self) -> Tensor:
        return self.lookup(torch.arange(self.rows))

    def sparse_grad(self, ids: Tensor, grads: Tensor) -> Tensor:
        """
        Sparse COO gradient for this table from per-lookup gradients. Duplicate ids are
        summed when the optimizer coalesces.
        """
        ids = ids.reshape(-1)
        if self.is_phase:
            values = grads.reshape(-1, self.dim)
        else:
            values = torch.view_as_real(grads.reshape(-1, self.dim).contiguous())
        return torch.sparse_coo_tensor(ids[None, :], values, self.weight.shape)

    def extra_repr(self) -> str:
        return f'{self.kind}, rows={self.rows}, dim={self.dim}, {self.parameterization.value}'
