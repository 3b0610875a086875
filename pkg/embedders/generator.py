import dataclasses
import json
import typing as T
from pathlib import Path

import torch
from torch import Tensor, nn

from embedders.embedding import EmbeddingTable, ModelKind, Parameterization
from embedders.losses import LossConfig
from embedders.regression import RegressionMap, regression_score

# short config file keys and the attributes they set
ALIASES = {
    'model': 'model_kind',
    'Ebz': 'entity_batch',
    'Tbz': 'type_batch',
    'Nsz': 'neg_size',
    'eta1': 'lr',
}


@dataclasses.dataclass
class TrainConfig:
    model_kind: str = ModelKind.COMPLEX.value
    k: int = 500
    l: int = 550
    entity_batch: int = 1024
    type_batch: int = 4096
    neg_size: int = 400
    alpha1: float = 1.0
    gamma1: float = 24.0
    alpha2: T.Optional[float] = None
    gamma2: T.Optional[float] = None
    alpha3: T.Optional[float] = None
    gamma3: T.Optional[float] = None
    lr: float = 0.0002
    total_steps: int = 150000
    alternation_period: int = 1000
    warmup_steps: int = 0
    lr_decay: float = 1.0
    seed: int = 0
    checkpoint_interval: int = 10000
    valid_interval: T.Optional[int] = None
    valid_cap: int = 2000
    threads: T.Optional[int] = None

    def __post_init__(self) -> None:
        # type-space and regression margins/temperatures follow the KG ones unless set
        if self.alpha2 is None:
            self.alpha2 = self.alpha1
        if self.alpha3 is None:
            self.alpha3 = self.alpha1
        if self.gamma2 is None:
            self.gamma2 = self.gamma1
        if self.gamma3 is None:
            self.gamma3 = self.gamma1
        if self.valid_interval is None:
            self.valid_interval = self.alternation_period

    @property
    def kind(self) -> ModelKind:
        return ModelKind(self.model_kind)

    def loss_config(self, phase: str) -> LossConfig:
        return {
            'KGE': LossConfig(self.gamma1, self.alpha1),
            'TPE': LossConfig(self.gamma2, self.alpha2),
            'REG': LossConfig(self.gamma3, self.alpha3),
        }[phase]

    def validate(self) -> 'TrainConfig':
        try:
            ModelKind(self.model_kind)
        except ValueError:
            raise ValueError(f'model: expected one of {[m.value for m in ModelKind]}, got {self.model_kind!r}') from None
        for key in ('k', 'l', 'entity_batch', 'type_batch', 'neg_size',
                    'alternation_period', 'checkpoint_interval', 'valid_interval', 'valid_cap'):
            if int(getattr(self, key)) < 1:
                raise ValueError(f'{key} must be >= 1, got {getattr(self, key)}')
        for key in ('total_steps', 'warmup_steps'):
            if int(getattr(self, key)) < 0:
                raise ValueError(f'{key} must be >= 0, got {getattr(self, key)}')
        if self.lr < 0:
            raise ValueError(f'eta1 must be >= 0, got {self.lr}')
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f'lr_decay must be in (0, 1], got {self.lr_decay}')
        for phase in ('KGE', 'TPE', 'REG'):
            self.loss_config(phase).validate()
        return self

    def to_dict(self) -> T.Dict[str, T.Any]:
        inverse = {v: k for k, v in ALIASES.items()}
        return {inverse.get(f.name, f.name): getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, data: T.Dict[str, T.Any]) -> 'TrainConfig':
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = ALIASES.get(key, key)
            if name not in names:
                raise ValueError(f'Unknown config key {key!r}')
            kwargs[name] = value
        return cls(**kwargs)

    def dump(self, path: T.Union[str, Path]) -> None:
        """
        Save the config to a file.
        """
        with open(path, 'w') as json_file:
            json.dump(self.to_dict(), json_file, indent=4)

    @classmethod
    def load(cls, path: T.Union[str, Path]) -> 'TrainConfig':
        with open(path, 'r') as json_file:
            return cls.from_dict(json.load(json_file))


class CoreModel(nn.Module):
    def __init__(
        self, kind: ModelKind, k: int, l: int, num_entities: int, num_relations: int,
        num_types: int, gamma1: float = 24.0, gamma2: float = 24.0, seed: int = 0,
    ) -> None:
        """
        Entity space (entities + relations in C^k), type space (types + relations in
        C^l) and the regression linking the two. RotatE relations are unit-modulus
        phase tables; everything else is free complex.
        """
        super().__init__()
        self.kind = ModelKind(kind)
        self.k = k
        self.l = l
        generator = torch.Generator()
        generator.manual_seed(seed)
        rel_param = (Parameterization.UNIT_PHASE if self.kind == ModelKind.ROTATE
                     else Parameterization.FREE_COMPLEX)

        self.entity_embedding = EmbeddingTable(
            num_entities, k, 'entity', init_bound=gamma1 / k, generator=generator)
        self.relation_embedding = EmbeddingTable(
            num_relations, k, 'relation', rel_param, init_bound=gamma1 / k, generator=generator)
        self.type_embedding = EmbeddingTable(
            num_types, l, 'type', init_bound=gamma2 / l, generator=generator)
        self.type_relation_embedding = EmbeddingTable(
            num_relations, l, 'type-relation', rel_param, init_bound=gamma2 / l, generator=generator)
        self.regression = RegressionMap(k, l, generator=generator)

    @property
    def num_entities(self) -> int:
        return self.entity_embedding.rows

    @property
    def num_relations(self) -> int:
        return self.relation_embedding.rows

    @property
    def num_types(self) -> int:
        return self.type_embedding.rows

    def phase_parameters(self, phase: str) -> T.List[nn.Parameter]:
        """
        Parameters trained in a phase; everything else is frozen during it.
        """
        if phase == 'KGE':
            return [self.entity_embedding.weight, self.relation_embedding.weight]
        if phase == 'REG':
            return [*self.regression.parameters(), self.type_embedding.weight]
        if phase == 'TPE':
            return [self.type_embedding.weight, self.type_relation_embedding.weight]
        raise ValueError(f'Unknown phase {phase!r}')

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @torch.no_grad()
    def type_distances(self, entity_ids: Tensor) -> Tensor:
        """
        Regression distance from each entity to every type, shape (len(ids), num_types).
        """
        e = self.entity_embedding.lookup(entity_ids)
        t = self.type_embedding.all()
        return regression_score(e[:, None, :], t[None, :, :], self.regression)


def generate_model(config: TrainConfig, num_entities: int, num_relations: int, num_types: int) -> CoreModel:
    """
    Build a freshly initialized model from the given config.
    """
    return CoreModel(
        config.kind, config.k, config.l, num_entities, num_relations, num_types,
        gamma1=config.gamma1, gamma2=config.gamma2, seed=config.seed,
    )
