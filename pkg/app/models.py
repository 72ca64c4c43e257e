"""
Моделі даних для розподіленої лінійної регресії
"""

from enum import Enum
from typing import Annotated, Dict, List, Optional

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    WithJsonSchema,
    model_validator,
)

from . import config


def _as_float_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _to_list(arr: np.ndarray) -> list:
    return np.asarray(arr).tolist()


# numpy масив, що серіалізується в JSON як вкладені списки
FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(_to_list, return_type=list, when_used="json"),
    WithJsonSchema({"type": "array", "items": {}}),
]


class ArrayModel(BaseModel):
    """Базова модель з підтримкою numpy масивів"""
    model_config = ConfigDict(arbitrary_types_allowed=True)


class FeatureLaw(str, Enum):
    """Розподіл стовпця ознак (усі з одиничною дисперсією)"""
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    LAPLACE = "laplace"


class SiteData(ArrayModel):
    """Сирі дані сайту: матриця ознак і відгук. Ніколи не залишають сайт."""
    X: FloatArray
    y: FloatArray
    site_id: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d matrix")
        if self.y.ndim != 1:
            raise ValueError("y must be a vector")
        if self.X.shape[0] < 1:
            raise ValueError("site needs at least one observation")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("site data must be finite")
        return self

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


class GroundTruth(ArrayModel):
    """Справжні параметри симуляції"""
    beta0: FloatArray
    sigma0_sq: float = Field(gt=0)
    feature_law: Optional[List[FeatureLaw]] = None

    @model_validator(mode="after")
    def _check_laws(self):
        if self.beta0.ndim != 1 or self.beta0.size < 1:
            raise ValueError("beta0 must be a non-empty vector")
        if self.feature_law is not None and len(self.feature_law) != self.beta0.size:
            raise ValueError("feature_law must have one entry per coefficient")
        return self

    @property
    def p(self) -> int:
        return self.beta0.size


class LocalFit(ArrayModel):
    """Локальна MLE оцінка сайту"""
    beta_hat: FloatArray
    sigma_hat_sq: float = Field(ge=0)
    S: FloatArray
    n: int
    p: int
    site_id: Optional[int] = None


class SufficientStats(ArrayModel):
    """Достатні статистики (S, X'y, y'y, n). Не є приватними."""
    S: FloatArray
    Xty: FloatArray
    yty: float = Field(ge=0)
    n: int

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return SufficientStats(S=self.S + other.S, Xty=self.Xty + other.Xty,
                               yty=self.yty + other.yty, n=self.n + other.n)


class PosteriorDraws(ArrayModel):
    """K вибірок з масштабованого апостеріорного розподілу"""
    beta_tilde: FloatArray  # K x p
    sigma_tilde_sq: FloatArray  # K
    psi: float = Field(gt=0)
    K: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_draws(self):
        if self.sigma_tilde_sq.shape != (self.K,) or self.beta_tilde.shape[0] != self.K:
            raise ValueError("number of draws does not match K")
        if self.K and not np.all(self.sigma_tilde_sq > 0):
            raise ValueError("sigma_tilde_sq must be positive")
        return self


class BlockForm(str, Enum):
    COLUMNS = "columns"
    GRAM = "gram"


class PosteriorBlock(ArrayModel):
    """Блок апостеріорних вибірок: стовпці B (p x K) або BB' (p x p)"""
    form: BlockForm
    data: FloatArray
    K: int = Field(ge=0)
    psi: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_form(self):
        if self.data.ndim != 2:
            raise ValueError("block data must be a matrix")
        p = self.data.shape[0]
        if self.form == BlockForm.COLUMNS and self.data.shape[1] != self.K:
            raise ValueError("columns block must have K columns")
        if self.form == BlockForm.GRAM and self.data.shape != (p, p):
            raise ValueError("gram block must be p x p")
        return self

    @property
    def p(self) -> int:
        return self.data.shape[0]

    def gram(self) -> np.ndarray:
        if self.form == BlockForm.GRAM:
            return np.asarray(self.data)
        return self.data @ self.data.T

    def normalized_gram(self) -> np.ndarray:
        """BB'/psi: оцінка K * S^{-1}"""
        return self.gram() / self.psi


class EstepMode(str, Enum):
    AUTO = "auto"
    DIRECT = "direct"
    WOODBURY = "woodbury"


class CedarOptions(BaseModel):
    """Параметри EM агрегатора"""
    max_iters: int = Field(default=config.DEFAULT_MAX_ITERS, ge=1)
    tol: float = Field(default=config.DEFAULT_TOL, gt=0)
    penalty_lambda: float = Field(default=0.0, ge=0)
    estep_mode: EstepMode = EstepMode.AUTO


class EmState(ArrayModel):
    """Поточний стан EM ітерацій"""
    beta: FloatArray
    sigma_sq: float = Field(gt=0)
    Sigma: FloatArray
    S_hat: List[FloatArray]


class CedarFit(ArrayModel):
    """Результат агрегації"""
    beta: FloatArray
    sigma_sq: float = Field(gt=0)
    Sigma: FloatArray
    S_hat: List[FloatArray]
    iterations: int
    final_loglik: float
    converged: bool
    n_total: int
    penalty_lambda: float = 0.0
    loglik_trace: List[float] = Field(default_factory=list)

    @property
    def p(self) -> int:
        return self.beta.size

    def summary(self) -> dict:
        """JSON без імпутованих матриць Грама"""
        return self.model_dump(mode="json", exclude={"S_hat", "loglik_trace"})


class CslInputs(ArrayModel):
    """Початкова точка, градієнти всіх сайтів (включно з центральним) та дані центрального сайту"""
    beta_bar: FloatArray
    gradients: List[FloatArray] = Field(min_length=1)
    central: SiteData
    sizes: Optional[List[int]] = None  # n_m для зваженого середнього градієнтів

    @model_validator(mode="after")
    def _check_sizes(self):
        if self.sizes is not None and len(self.sizes) != len(self.gradients):
            raise ValueError("sizes must have one entry per gradient")
        return self


class PrivacyBoundInputs(BaseModel):
    """Вхідні величини для меж приватності"""
    K: int = Field(ge=0)
    c: float = Field(ge=0)
    xi2: float = Field(default=0.0, ge=0)
    lambda_priv: float = Field(default=0.0, ge=0)
    delta: float
    psi: float = Field(default=config.DEFAULT_PSI, gt=0)
    xi1: Optional[float] = None  # лише для діагностики


class PrivacyEstimator(str, Enum):
    HOCKEY_STICK = "hockey_stick"
    TAIL_QUANTILE = "tail_quantile"


class PrivacyScenario(BaseModel):
    """Сценарій Монте-Карло оцінки мінімального epsilon"""
    n: int = Field(ge=1)
    p: int = Field(ge=1)
    K: int = Field(ge=0)
    psi: float = Field(default=config.DEFAULT_PSI, gt=0)
    c: float = Field(ge=0)
    delta: Optional[float] = None  # за замовчуванням 1/n
    reps: int = Field(default=config.DEFAULT_MC_REPS, ge=1)
    redraws: int = Field(default=config.DEFAULT_MC_REDRAWS, ge=1)
    seed: int = 0
    estimator: PrivacyEstimator = PrivacyEstimator.HOCKEY_STICK

    @property
    def effective_delta(self) -> float:
        return self.delta if self.delta is not None else 1.0 / self.n


class PrivacyReport(BaseModel):
    eps_forward: float
    eps_reverse: float
    eps_expected: float
    eps_mc: float
    params: PrivacyBoundInputs
    dominance_violations: int = 0
    tail_probability_ci: Optional[List[float]] = None


class Sided(str, Enum):
    TWO_SIDED = "two_sided"
    GREATER = "greater"


class WaldResult(BaseModel):
    statistic: float
    p_value: float = Field(ge=0, le=1)
    reject: bool
    j: int
    null_value: float
    alpha: float
    sided: Sided


class Regime(str, Enum):
    MAIN = "main"
    SMALL_K = "smallK"
    HOMOGENEOUS = "homogeneous"


class AsymptoticVariance(ArrayModel):
    Sigma_star: FloatArray
    regime: Regime
    gamma: float = Field(ge=0)


# --- Протокол обміну ---

class TaskType(str, Enum):
    MLE_ONLY = "mle_only"
    MLE_PLUS_POSTERIOR = "mle_plus_posterior"
    CSL_GRADIENT = "csl_gradient"
    WALD_STATS = "wald_stats"
    SUFFICIENT_STATS = "sufficient_stats"


class Hypothesis(BaseModel):
    """Нульова гіпотеза для локальних тестів Вальда; j=None означає всі коефіцієнти"""
    j: Optional[int] = None
    b0: float = 0.0
    alpha: float = 0.05


class TaskRequest(ArrayModel):
    task: TaskType
    K: int = Field(default=0, ge=0)
    psi: float = Field(default=config.DEFAULT_PSI, gt=0)
    beta_bar: Optional[FloatArray] = None
    hypothesis: Optional[Hypothesis] = None
    seed: int = 0
    round_id: int = 0

    @model_validator(mode="after")
    def _check_task(self):
        if self.task == TaskType.CSL_GRADIENT and self.beta_bar is None:
            raise ValueError("csl_gradient task requires beta_bar")
        if self.task == TaskType.MLE_PLUS_POSTERIOR and self.K < 1:
            raise ValueError("mle_plus_posterior task requires K >= 1")
        return self


class SitePayload(ArrayModel):
    """Одноразове повідомлення сайту центральному сайту"""
    site_id: int = Field(ge=1)
    n: int = Field(ge=1)
    p: int = Field(ge=1)
    beta_hat: FloatArray
    sigma_hat_sq: float = Field(ge=0)
    block: Optional[PosteriorBlock] = None
    gradient: Optional[FloatArray] = None
    wald: Optional[FloatArray] = None
    stats: Optional[SufficientStats] = None  # лише для OPT, не приватне
    schema_version: int = 1

    @model_validator(mode="after")
    def _check_dims(self):
        if self.beta_hat.shape != (self.p,):
            raise ValueError("beta_hat length does not match p")
        if self.gradient is not None and self.gradient.shape != (self.p,):
            raise ValueError("gradient length does not match p")
        if self.block is not None and self.block.p != self.p:
            raise ValueError("posterior block dimension does not match p")
        if self.stats is not None and self.stats.S.shape != (self.p, self.p):
            raise ValueError("sufficient statistics dimension does not match p")
        return self

    @property
    def K(self) -> int:
        return self.block.K if self.block is not None else 0


class CommTrace(BaseModel):
    """Облік раундів комунікації та обсягу переданих байтів"""
    rounds: int = 0
    bytes_per_round: List[int] = Field(default_factory=list)
    per_site_bytes: Dict[int, int] = Field(default_factory=dict)

    def record_round(self, site_bytes: Dict[int, int]) -> None:
        self.rounds += 1
        self.bytes_per_round.append(int(sum(site_bytes.values())))
        for site_id, size in site_bytes.items():
            self.per_site_bytes[site_id] = self.per_site_bytes.get(site_id, 0) + int(size)


# --- Експерименти ---

class MethodName(str, Enum):
    AVGM = "avgm"
    OPT = "opt"
    CSL1 = "csl1"
    CSLA = "csla"
    CEDAR = "cedar"


class Alternative(str, Enum):
    TWO_SIDED = "two_sided"
    GREATER = "greater"


class SparseConfig(BaseModel):
    """Відносні сітки: частки lambda_max методу та max|beta_avgm|"""
    lambda_grid: List[float] = Field(default_factory=lambda: [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0])
    threshold_grid: List[float] = Field(default_factory=lambda: [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0])


class HypothesisTestConfig(BaseModel):
    alpha: float = Field(default=0.05, gt=0, lt=1)
    alternative: Alternative = Alternative.GREATER


class ExperimentConfig(BaseModel):
    """Повний опис симуляційного експерименту"""
    p: int = Field(ge=1)
    n_grid: List[int] = Field(min_length=1)
    M_grid: List[int] = Field(default_factory=lambda: [16], min_length=1)
    N_fixed: Optional[int] = None
    K_list: List[int] = Field(default_factory=lambda: [0, 4, 16])
    psi: float = Field(default=config.DEFAULT_PSI, gt=0)
    methods: List[MethodName] = Field(default_factory=lambda: list(MethodName), min_length=1)
    replicates: int = Field(default=100, ge=1)
    sparse: Optional[SparseConfig] = None
    tests: Optional[HypothesisTestConfig] = None
    master_seed: int = Field(ge=0)
    sigma0_sq: float = Field(default=1.0, gt=0)
    design: str = Field(default="sparse", pattern="^(sparse|null)$")
    workers: int = Field(default=config.DEFAULT_WORKERS, ge=1)
    transport: str = Field(default="inprocess", pattern="^(inprocess|filedrop)$")
    record_timing: bool = False
    full_scale: bool = False
    cedar: CedarOptions = Field(default_factory=CedarOptions)

    @model_validator(mode="before")
    @classmethod
    def _scalar_grids(cls, data):
        if isinstance(data, dict):
            data = dict(data)
            if "n" in data and "n_grid" not in data:
                data["n_grid"] = [data.pop("n")]
            if "M" in data and "M_grid" not in data:
                data["M_grid"] = [data.pop("M")]
        return data

    @model_validator(mode="after")
    def _check_grids(self):
        if any(n < 1 for n in self.n_grid):
            raise ValueError("site sample sizes must be positive")
        if self.N_fixed is not None:
            bad = [n for n in self.n_grid if self.N_fixed % n]
            if bad:
                raise ValueError(f"N_fixed={self.N_fixed} is not divisible by n in {bad}")
        elif any(M < 1 for M in self.M_grid):
            raise ValueError("site counts must be positive")
        if any(K < 0 for K in self.K_list):
            raise ValueError("K values must be nonnegative")
        return self

    def grid(self) -> List[tuple]:
        """Пари (n, M) для перебору"""
        if self.N_fixed is not None:
            return [(n, self.N_fixed // n) for n in self.n_grid]
        return [(n, M) for n in self.n_grid for M in self.M_grid]


class ResultRow(BaseModel):
    method: str
    p: int
    n: int
    M: int
    K: Optional[int] = None
    replicate: int
    l2_error: Optional[float] = Field(default=None, ge=0)
    power: Optional[float] = Field(default=None, ge=0, le=1)
    specificity: Optional[float] = Field(default=None, ge=0, le=1)
    comm_rounds: int = 0
    wall_ms: Optional[float] = None
    failed: bool = False
    error: Optional[str] = None
