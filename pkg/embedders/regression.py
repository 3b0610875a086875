import math
import typing as T

import torch
from torch import Tensor, nn


class RegressionGrads(T.NamedTuple):
    a_rr: Tensor
    a_ir: Tensor
    a_ri: Tensor
    a_ii: Tensor
    # complex-packed d/dRe + i d/dIm
    type: Tensor
    entity: Tensor


class RegressionMap(nn.Module):
    def __init__(self, k: int, l: int, generator: T.Optional[torch.Generator] = None) -> None:
        """
        Linear map from the entity space C^k to the type space C^l, held as four real
        k x l blocks: a_rr (Re -> Re), a_ir (Im -> Re), a_ri (Re -> Im) and a_ii
        (Im -> Im). Entries start uniform in [-1/sqrt(k), 1/sqrt(k)]. No bias.
        """
        super().__init__()
        self.k = k
        self.l = l
        bound = 1.0 / math.sqrt(k)

        def init() -> nn.Parameter:
            return nn.Parameter((torch.rand(k, l, dtype=torch.float64, generator=generator) * 2 - 1) * bound)

        self.a_rr = init()
        self.a_ir = init()
        self.a_ri = init()
        self.a_ii = init()

    def blocks(self) -> T.Tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.a_rr.detach(), self.a_ir.detach(), self.a_ri.detach(), self.a_ii.detach()

    def extra_repr(self) -> str:
        return f'k={self.k}, l={self.l}'


def project(e: Tensor, reg: RegressionMap) -> Tensor:
    """
    Map complex entity vectors (..., k) to the type space (..., l).
    """
    if e.shape[-1] != reg.k:
        raise ValueError(f'Entity vector has dimension {e.shape[-1]}, regression expects {reg.k}')
    a_rr, a_ir, a_ri, a_ii = reg.blocks()
    re, im = e.real, e.imag
    return torch.complex(re @ a_rr + im @ a_ir, re @ a_ri + im @ a_ii)


def _residual_norms(e: Tensor, t: Tensor, reg: RegressionMap) -> T.Tuple[Tensor, Tensor, Tensor]:
    if t.shape[-1] != reg.l:
        raise ValueError(f'Type vector has dimension {t.shape[-1]}, regression expects {reg.l}')
    residual = project(e, reg) - t
    return residual, residual.real.norm(dim=-1), residual.imag.norm(dim=-1)


def regression_score(e: Tensor, t: Tensor, reg: RegressionMap) -> Tensor:
    """
    ||Re residual||_2 + ||Im residual||_2 where residual = project(e) - t. The two
    norms are summed, not stacked. Inputs broadcast over leading dimensions.
    """
    _, n_re, n_im = _residual_norms(e, t, reg)
    return n_re + n_im


def regression_gradients(
    e: Tensor, t: Tensor, reg: RegressionMap, upstream: T.Optional[Tensor] = None
) -> RegressionGrads:
    """
    Analytic gradients of sum(upstream * regression_score(e, t)) with respect to the
    four blocks, t and e. A zero residual norm contributes the subgradient 0.
    """
    residual, n_re, n_im = _residual_norms(e, t, reg)
    u_re = torch.where(n_re[..., None] > 0, residual.real / n_re.clamp_min(1e-300)[..., None], 0.0)
    u_im = torch.where(n_im[..., None] > 0, residual.imag / n_im.clamp_min(1e-300)[..., None], 0.0)
    if upstream is not None:
        u_re = u_re * upstream[..., None]
        u_im = u_im * upstream[..., None]

    g_t = -torch.complex(u_re, u_im)
    if g_t.shape != t.shape:
        g_t = g_t.sum_to_size(t.shape)

    # fold the broadcast batch back onto e before taking outer products
    e_lead = e.shape[:-1]
    u_re_e = u_re.sum_to_size(*e_lead, reg.l)
    u_im_e = u_im.sum_to_size(*e_lead, reg.l)
    re = e.real.reshape(-1, reg.k)
    im = e.imag.reshape(-1, reg.k)
    ur = u_re_e.reshape(-1, reg.l)
    ui = u_im_e.reshape(-1, reg.l)

    a_rr, a_ir, a_ri, a_ii = reg.blocks()
    g_e = torch.complex(ur @ a_rr.T + ui @ a_ri.T, ur @ a_ir.T + ui @ a_ii.T).reshape(e.shape)
    return RegressionGrads(
        a_rr=re.T @ ur,
        a_ir=im.T @ ur,
        a_ri=re.T @ ui,
        a_ii=im.T @ ui,
        type=g_t,
        entity=g_e,
    )
