import torch
from torch import Tensor

from hypothesis import settings
from pytest import fixture

from apjko.config import CollisionConfig, ScheduleConfig, configure
from apjko.field import VelocityField

settings.register_profile("apjko", deadline=None, max_examples=50)
settings.load_profile("apjko")


@fixture(autouse=True)
def double_precision():
    "Run every test in float64, restoring the default afterwards."
    configure(precision="f64")
    yield
    configure(precision="f64")


class LinearField(VelocityField):
    "The field ``s(tau, v) = a v``, with no trainable dependence."

    def __init__(self, a: float, d_v: int):
        super().__init__(d_v, 2, 1, dtype=torch.float64)
        self.a = a

    def forward(self, tau: float | Tensor, v: Tensor) -> Tensor:
        return self.a * v

    def value_and_jacobian(self, tau: float | Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
        n, d = v.shape
        eye = torch.eye(d, dtype=v.dtype).expand(n, d, d)
        return self.a * v, self.a * eye


@fixture
def linear_field():
    return LinearField


@fixture
def quick_collision() -> CollisionConfig:
    "A collision configuration small enough to train in well under a second."
    return CollisionConfig(
        layers=2,
        width=8,
        batch_size=32,
        quadrature=2,
        schedule=ScheduleConfig(lr_max=1e-2, lr_min=1e-3, restart_period=2, iterations=3),
    )
