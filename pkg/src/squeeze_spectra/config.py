"""Run configuration: JSON in, validated pydantic models out.

Every block has defaults, so ``{}`` is a valid config (constant thickness
mu = 1 on the unit circle with the Chafee-Infante nonlinearity, lambda = 2).
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import InvalidProfileError
from .geometry import SphereGeometry, ThicknessProfile


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryConfig(_Block):
    n: int = Field(2, ge=2, description="ambient dimension; the sphere is S^{n-1}")
    r: float = Field(1.0, gt=0, description="sphere radius")


class ProfileConfig(_Block):
    """Fourier coefficients [a0, a1, b1, a2, b2, ...] of the lower offset c and upper offset d."""

    c_coeffs: list[float] = Field(default_factory=lambda: [0.0])
    d_coeffs: list[float] = Field(default_factory=lambda: [1.0])

    @model_validator(mode="after")
    def _thickness_positive(self):
        try:
            self.build()
        except InvalidProfileError as exc:
            raise ValueError(f"thickness mu = d - c must be positive everywhere: {exc}") from exc
        return self

    def build(self) -> ThicknessProfile:
        return ThicknessProfile(self.c_coeffs, self.d_coeffs)


class DiscretizationConfig(_Block):
    N: int = Field(1024, ge=16, description="P1 grid size on the circle")
    N_theta: int = Field(512, ge=64, description="angular cells of the thin domain")
    N_s: int = Field(8, ge=2, description="transverse cells of the thin domain")
    eig_count: int = Field(64, ge=2, description="eigenpairs to compute")


class NonlinearityConfig(_Block):
    kind: Literal["chafee_infante"] = "chafee_infante"
    lambda_: float = Field(2.0, alias="lambda", description="linear growth rate in G(u) = lambda u - u^3")
    delta0: float = Field(1.0, gt=0, description="dissipativity margin")
    beta: float = Field(2.0, ge=0, description="growth exponent of |G'|")

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class SweepConfig(_Block):
    eps_list: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    j_max: int = Field(10, ge=1)

    @field_validator("eps_list")
    @classmethod
    def _descending(cls, v):
        if not v or any(e <= 0 or e > 1 for e in v):
            raise ValueError("eps_list entries must lie in ]0, 1]")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("eps_list must be strictly descending")
        return v


class CertifyConfig(_Block):
    horizon: int = Field(200, ge=2, description="largest nu for intervals and nu0 search")
    check_max_nu: int = Field(30, ge=1, description="largest nu checked against the numerical spectrum")
    tolerance_factor: float = Field(3.0, ge=0, description="multiple of the self-convergence error shrinking each interval")


class SimulateConfig(_Block):
    eps: float = Field(0.05, gt=0, le=1)
    T: float = Field(10.0, gt=0)
    dt: float = Field(0.01, gt=0)
    sample_every: int = Field(10, ge=1)
    amplitude: float = Field(0.5, ge=0, description="size of the seeded random initial datum")
    snapshot_times: list[float] = Field(default_factory=list)


class ManifoldConfig(_Block):
    K_gap: float = Field(2.0, gt=0)
    nu: Optional[int] = Field(3, ge=1, description="cut index; null selects it from the gap inequality")
    T: Optional[float] = Field(None, gt=0, description="Lyapunov-Perron horizon; null means 8 / lambda_{nu+1}")
    picard_M: int = Field(6, ge=2)
    lp_steps: int = Field(400, ge=10)
    J: int = Field(31, ge=2, description="Galerkin modes kept")
    horizon: float = Field(10.0, gt=0, description="time span of the invariance run")
    xi0: list[float] = Field(default_factory=lambda: [0.5, 0.3, -0.2])
    xi_samples: list[list[float]] = Field(
        default_factory=lambda: [[1, 0, 0], [0, 1, 0], [0.5, 0.5, -0.5], [1.5, 0.3, 0.2], [-1, 0.2, 0.8]]
    )
    compare_eps: list[float] = Field(default_factory=lambda: [0.1, 0.05])
    N_grid: int = Field(128, ge=64, description="angular grid shared by the limit and thin reduced models")
    N_s: int = Field(2, ge=2, description="transverse cells of the thin reduced models")
    reduced_dt: float = Field(0.25, gt=0, description="RK4 step of the reduced ODE; keep lambda_nu dt well inside RK4 stability")


class CoareaConfig(_Block):
    n_theta: int = Field(256, ge=8)
    n_cells: int = Field(2, ge=1)


class OutputConfig(_Block):
    dir: str = "out"
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class RunConfig(_Block):
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    profile: ProfileConfig = Field(default_factory=ProfileConfig)
    discretization: DiscretizationConfig = Field(default_factory=DiscretizationConfig)
    nonlinearity: NonlinearityConfig = Field(default_factory=NonlinearityConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    certify: CertifyConfig = Field(default_factory=CertifyConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)
    manifold: ManifoldConfig = Field(default_factory=ManifoldConfig)
    coarea: CoareaConfig = Field(default_factory=CoareaConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = 0

    @model_validator(mode="after")
    def _sample_dims(self):
        nu = self.manifold.nu
        if nu is not None:
            if len(self.manifold.xi0) != nu or any(len(x) != nu for x in self.manifold.xi_samples):
                raise ValueError(f"manifold.xi0 and manifold.xi_samples need {nu} components each")
        return self

    def geom(self) -> SphereGeometry:
        return SphereGeometry(self.geometry.n, self.geometry.r)

    def to_json(self) -> str:
        """Canonical serialisation (sorted keys, aliases) of the effective config."""
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def load_config(path: str | Path | None) -> RunConfig:
    """Parse and validate; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    return RunConfig.model_validate_json(text)
