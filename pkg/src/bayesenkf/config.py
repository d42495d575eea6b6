"""Experiment configuration: one strict JSON document per run.

Unknown keys are rejected. Every block has defaults reproducing the
corresponding testbed, so ``{"experiment": "lorenz96"}`` is a complete
config.
"""
import json
import math
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .covariance import TaperSpec
from .exceptions import ConfigError
from .filters import FilterConfig
from .param_posterior import InverseGamma, Normal, PriorSpec, TruncatedNormal, Uniform


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TaperBlock(_Strict):
    kind: Literal["gaspari_cohn", "wendland", "none"] = "none"
    range: float = Field(1.0, gt=0)

    def spec(self):
        return TaperSpec(self.kind, self.range)


class GridBlock(_Strict):
    per_axis: int = Field(20, ge=1)
    mass: float = Field(0.999, gt=0, lt=1)
    axes: Optional[List[List[float]]] = None


class FilterBlock(_Strict):
    method: Literal["enkf_grid", "enkf_normal", "augmentation", "liu_west",
                    "kf_oracle", "grid_kf_oracle"] = "enkf_grid"
    n_members: int = Field(100, ge=2)
    taper: TaperBlock = TaperBlock()
    inflation: float = Field(1.0, gt=0)
    grid: GridBlock = GridBlock()
    scale_param: Optional[str] = None
    normal_restarts: int = Field(2, ge=0)
    lw_delta: float = Field(0.98, gt=0, lt=1)
    state_coords: List[int] = [0]
    checkpoint_every: int = Field(0, ge=0)

    def filter_config(self, keep_grid_at=(), checkpoint_path=None):
        return FilterConfig(
            method=self.method,
            n_members=self.n_members,
            taper=self.taper.spec(),
            inflation=self.inflation,
            grid_per_axis=self.grid.per_axis,
            grid_mass=self.grid.mass,
            grid_axes=None if self.grid.axes is None else tuple(tuple(a) for a in self.grid.axes),
            scale_param=self.scale_param,
            normal_restarts=self.normal_restarts,
            lw_delta=self.lw_delta,
            state_coords=tuple(self.state_coords),
            keep_grid_at=tuple(keep_grid_at),
            checkpoint_every=self.checkpoint_every,
            checkpoint_path=checkpoint_path if self.checkpoint_every else None,
        )


class TruncatedNormalPrior(_Strict):
    family: Literal["truncated_normal"]
    mu: float
    var: float = Field(gt=0)
    lower: float = 0.0
    upper: Optional[float] = None  # None means +inf

    def dist(self):
        return TruncatedNormal(self.mu, self.var, self.lower,
                               math.inf if self.upper is None else self.upper)


class InverseGammaPrior(_Strict):
    family: Literal["inverse_gamma"]
    a: float = Field(gt=0)
    b: float = Field(gt=0)

    def dist(self):
        return InverseGamma(self.a, self.b)


class UniformPrior(_Strict):
    family: Literal["uniform"]
    lo: float
    hi: float

    def dist(self):
        return Uniform(self.lo, self.hi)


class NormalPrior(_Strict):
    family: Literal["normal"]
    mu: float
    var: float = Field(gt=0)

    def dist(self):
        return Normal(self.mu, self.var)


PriorEntry = Annotated[Union[TruncatedNormalPrior, InverseGammaPrior, UniformPrior, NormalPrior],
                       Field(discriminator="family")]


def prior_spec(priors, names):
    missing = [nm for nm in names if nm not in priors]
    extra = [nm for nm in priors if nm not in names]
    if missing or extra:
        raise ConfigError(f"priors must cover exactly {list(names)}; missing {missing}, unexpected {extra}")
    return PriorSpec(tuple(names), tuple(priors[nm].dist() for nm in names))


# ------------------------------------------------------------ experiments


class StaticDemoModel(_Strict):
    alpha_true: float = Field(0.3, ge=0)
    T: int = Field(10000, ge=1)
    grid_lo: float = 0.0
    grid_hi: float = 2.0
    grid_points: int = Field(200, ge=2)


class LikCompareModel(_Strict):
    dims: List[int] = [5, 50, 100]
    alpha_true: float = Field(0.5, ge=0)
    obs_var: float = Field(0.1, gt=0)
    prior_range: float = Field(3.0, gt=0)
    prior_cov: Literal["unit_variance_exponential"] = "unit_variance_exponential"
    n_members: int = Field(50, ge=2)
    taper: TaperBlock = TaperBlock(kind="wendland", range=12.0)
    alpha_lo: float = 0.0
    alpha_hi: float = 2.0
    alpha_points: int = Field(201, ge=2)
    replicates: int = Field(1, ge=1)


class LinearModel(_Strict):
    n: int = Field(20, ge=1)
    gamma: Tuple[float, float, float] = (0.3, 0.6, 0.1)
    beta: float = Field(5.0, gt=0)
    tau: float = Field(1.0, gt=0)
    sigma2_eps: float = Field(1.0, gt=0)
    T: int = Field(100, ge=0)


class LorenzModel(_Strict):
    forcing: float = 8.0
    obs_interval: float = Field(0.25, gt=0)
    substeps: int = Field(5, ge=1)
    init_var: float = Field(0.25, ge=0)
    spinup_cycles: int = Field(1000, ge=0)
    T: int = Field(250, ge=0)
    theta_true: Dict[str, float] = {"sigma2": 1.0, "lambda": 1.0, "nu": 0.5}
    joint_grid_times: List[int] = [10, 50, 100, 250]


class ExternalModel(_Strict):
    csv: str
    transform: Literal["none", "log1p"] = "log1p"
    gamma_mean: Tuple[float, float, float] = (0.3, 0.3, 0.3)
    gamma_cov: float = Field(0.01, gt=0)  # times sigma2_eps


def _tn(mu, var):
    return TruncatedNormalPrior(family="truncated_normal", mu=mu, var=var)


DEFAULT_PRIORS = {
    "linear_sim": {"beta": _tn(5.0, 10.0), "tau": _tn(2.0, 0.16)},
    "lorenz96": {"sigma2": InverseGammaPrior(family="inverse_gamma", a=5.0, b=5.0),
                 "lambda": _tn(1.0, 0.64), "nu": _tn(0.25, 0.25)},
    "external_data": {"beta": _tn(1.0, 0.01), "tau": _tn(0.1, 0.0004),
                      "sigma2_eps": InverseGammaPrior(family="inverse_gamma", a=25.0, b=2.0)},
}

DEFAULT_FILTERS = {
    "linear_sim": [FilterBlock(method="grid_kf_oracle"), FilterBlock(method="enkf_grid"),
                   FilterBlock(method="enkf_normal"), FilterBlock(method="augmentation")],
    "lorenz96": [FilterBlock(method="enkf_grid", taper=TaperBlock(kind="gaspari_cohn", range=12.0),
                             scale_param="sigma2")],
    "external_data": [FilterBlock(method="enkf_grid", scale_param="sigma2_eps")],
}

MODEL_BLOCKS = {
    "static_demo": StaticDemoModel,
    "lik_compare": LikCompareModel,
    "linear_sim": LinearModel,
    "lorenz96": LorenzModel,
    "external_data": ExternalModel,
}


class ExperimentConfig(_Strict):
    experiment: Literal["static_demo", "lik_compare", "linear_sim", "lorenz96", "external_data"]
    seed: int = Field(0, ge=0)
    model: Optional[dict] = None
    priors: Optional[Dict[str, PriorEntry]] = None
    filters: Optional[List[FilterBlock]] = None

    @model_validator(mode="after")
    def _resolve(self):
        block = MODEL_BLOCKS[self.experiment]
        if self.experiment == "external_data" and not self.model:
            raise ValueError("external_data needs model.csv")
        model = block.model_validate(self.model or {})
        object.__setattr__(self, "model", model.model_dump(mode="json"))
        uses_filters = self.experiment in DEFAULT_FILTERS
        if not uses_filters and (self.priors or self.filters):
            raise ValueError(f"{self.experiment} takes no priors or filters")
        if uses_filters:
            if self.priors is None:
                object.__setattr__(self, "priors", dict(DEFAULT_PRIORS[self.experiment]))
            if self.filters is None:
                object.__setattr__(self, "filters", list(DEFAULT_FILTERS[self.experiment]))
        return self

    @property
    def model_block(self):
        return MODEL_BLOCKS[self.experiment].model_validate(self.model)

    def echo(self):
        """Resolved configuration as a JSON-ready dict."""
        return self.model_dump(mode="json", exclude_none=False)


def load_config(source, seed=None):
    """Parse a config from a path, JSON text or dict; ``seed`` overrides the file."""
    if isinstance(source, dict):
        doc = dict(source)
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if seed is not None:
        doc["seed"] = seed
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
