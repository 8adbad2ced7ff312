"""
Ensemble predictor of measured error from the one-hot genotype encoding.
"""
import logging
from typing import Iterable, List, Optional, Sequence

import numpy as np

from core.exceptions import InsufficientData
from models.genotype import ENCODING_LENGTH, Genotype, encode
from models.request import SearchConfig
from models.response import EvalRecord
from nn.autodiff import Context, Graph, backward, forward, mean, mul, relu, reshape, sub
from nn.blocks import Block, Linear, ParamFactory
from nn.optim import Adam

logger = logging.getLogger(__name__)


class SurrogateMember(Block):
    """Two hidden ReLU layers regressing a standardized error"""
    kind = "SurrogateMember"

    def __init__(self, n_in: int, hidden: int, factory: ParamFactory):
        super().__init__()
        self.hidden1 = self.add_child("hidden1", Linear(n_in, hidden, factory))
        self.hidden2 = self.add_child("hidden2", Linear(hidden, hidden, factory))
        self.out = self.add_child("out", Linear(hidden, 1, factory))

    def forward(self, x, ctx):
        h = relu(self.hidden1(x, ctx))
        h = relu(self.hidden2(h, ctx))
        y = self.out(h, ctx)
        return reshape(y, y.shape[:-1])

    def graph(self) -> Graph:
        return Graph(lambda inputs, ctx: {"z": self.forward(inputs["x"], ctx)}, self.named_parameters(), ("x",))


def encode_many(genotypes: Iterable[Genotype]) -> np.ndarray:
    rows = [encode(g).as_array() for g in genotypes]
    return np.stack(rows) if rows else np.zeros((0, ENCODING_LENGTH))


class SurrogateEnsemble:
    def __init__(self, members: Sequence[SurrogateMember], target_mean: float, target_std: float):
        self.members = list(members)
        self.target_mean = target_mean
        self.target_std = target_std

    def __len__(self) -> int:
        return len(self.members)

    def predict(self, encodings: np.ndarray) -> np.ndarray:
        """Per-member predictions of shape (members, candidates), in error units"""
        encodings = np.asarray(encodings, dtype=np.float64)
        if encodings.shape[0] == 0:
            return np.zeros((len(self.members), 0))
        z = np.stack([member(encodings, Context()).data for member in self.members])
        return z * self.target_std + self.target_mean

    def predict_genotypes(self, genotypes: Sequence[Genotype]) -> np.ndarray:
        return self.predict(encode_many(genotypes))


def _fit_member(member: SurrogateMember, x: np.ndarray, z: np.ndarray, epochs: int, lr: float) -> float:
    graph = member.graph()
    optimizer = Adam(graph.parameters, lr)
    loss_value = float("nan")
    for _ in range(epochs):
        pred = forward(graph, {"x": x})["z"]
        diff = sub(pred, z)
        loss = mean(mul(diff, diff))
        loss_value = loss.item()
        optimizer.step(backward(graph, loss))
    return loss_value


def fit_surrogate(records: Iterable[EvalRecord], cfg: Optional[SearchConfig] = None,
                  seed: Optional[int] = None) -> SurrogateEnsemble:
    """Train each member from its own random init, full batch, on standardized errors"""
    cfg = cfg or SearchConfig()
    seed = cfg.seed if seed is None else seed
    finite: List[EvalRecord] = [r for r in records if r.finite]
    if len(finite) < 2:
        raise InsufficientData(f"Surrogate needs at least 2 finite records, got {len(finite)}")
    x = encode_many(r.genotype for r in finite)
    y = np.array([r.measured_error for r in finite], dtype=np.float64)
    target_mean = float(y.mean())
    target_std = float(y.std())
    if target_std < 1e-12:
        target_std = 1.0
    z = (y - target_mean) / target_std

    members = []
    losses = []
    for m in range(cfg.ensemble_size):
        factory = ParamFactory(np.random.default_rng([seed, m]))
        member = SurrogateMember(ENCODING_LENGTH, cfg.ensemble_hidden, factory)
        losses.append(_fit_member(member, x, z, cfg.ensemble_epochs, cfg.ensemble_lr))
        members.append(member)
    logger.info(f"Fitted {len(members)}-member surrogate on {len(finite)} records, "
                f"final losses {np.round(losses, 4).tolist()}")
    return SurrogateEnsemble(members, target_mean, target_std)
