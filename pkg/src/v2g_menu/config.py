"""Scenario document schema.

An empty document yields the default day: a 24-slot horizon, 15 arrivals per
hour from 08:00 to 17:00 and 5 otherwise, a 0.40/0.15 time-of-use tariff and a
20 kWh storage battery.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TariffConfig(_Strict):
    on_peak_price: float = Field(0.40, ge=0)
    off_peak_price: float = Field(0.15, ge=0)
    on_peak_start: int = Field(8, ge=0)
    on_peak_end: int = Field(17, ge=0)
    sell_discount: float = 0.001
    buy_price: Optional[list[float]] = None
    sell_price: Optional[list[float]] = None


class StationConfig(_Strict):
    horizon: int = Field(24, ge=1)
    storage_capacity: float = Field(20.0, ge=0)
    storage_initial: float = Field(0.0, ge=0)
    eta_charge: float = Field(0.95, gt=0, le=1)
    eta_discharge: float = Field(0.95, gt=0, le=1)
    ev_eta_charge: float = Field(0.95, gt=0, le=1)
    ev_eta_discharge: float = Field(0.95, gt=0, le=1)
    rate_min: float = Field(-3.3, lt=0)
    rate_max: float = Field(3.3, gt=0)
    leakage: float = Field(1.0, gt=0, le=1)
    renewable_mean: float = Field(2.0, ge=0)
    renewable_sd: float = Field(1.0, gt=0)


class PopulationConfig(_Strict):
    energy_mean: float = 6.9
    energy_sd: float = Field(4.9, gt=0)
    energy_low: float = Field(2.0, ge=0)
    energy_high: float = 20.0
    deadline_mean: float = Field(2.5, gt=0)
    soc_min: float = Field(2.0, ge=0)
    soc_max: float = Field(25.0, gt=0)
    alpha: float = Field(0.07, ge=0)
    deadline_normalization: Literal["relative", "absolute"] = "relative"


class ArrivalConfig(_Strict):
    on_peak_rate: float = Field(15.0, ge=0)
    off_peak_rate: float = Field(5.0, ge=0)
    on_peak_start: int = Field(8, ge=0)
    on_peak_end: int = Field(17, ge=0)


class GridConfig(_Strict):
    energy_min: int = Field(1, ge=1)
    energy_max: int = Field(20, ge=1)
    deadline_span: int = Field(12, ge=1)
    bu_max: float = Field(10.0, ge=0)
    bu_step: float = Field(1.0, gt=0)
    discharge_max: int = Field(5, ge=0)


class NoiseConfig(_Strict):
    kind: Literal["uniform", "truncnormal", "point"] = "uniform"
    low: float = 0.0
    high: float = 10.0
    mean: float = 5.0
    sd: float = Field(2.0, gt=0)


class StrategySettings(_Strict):
    kind: Literal["cost", "worst", "clairvoyant", "beta", "zeta"] = "worst"
    beta: float = Field(0.0, ge=0)
    # added to the population's lower utility endpoints for the worst-case offset
    endpoint_shift: float = 0.0
    noise: NoiseConfig = NoiseConfig()


class SweepConfig(_Strict):
    beta_values: Optional[list[float]] = None
    bmax_values: Optional[list[float]] = None


class SimConfig(_Strict):
    station: StationConfig = StationConfig()
    tariff: TariffConfig = TariffConfig()
    population: PopulationConfig = PopulationConfig()
    arrivals: ArrivalConfig = ArrivalConfig()
    grid: GridConfig = GridConfig()
    strategy: StrategySettings = StrategySettings()
    sweep: SweepConfig = SweepConfig()
    replicates: int = Field(30, ge=1)
    seed: int = Field(1, ge=0)
    v2g_enabled: bool = True
    discharge_only_enabled: bool = False

    @model_validator(mode="after")
    def _check(self):
        problems = []
        T = self.station.horizon
        for name in ("buy_price", "sell_price"):
            arr = getattr(self.tariff, name)
            if arr is not None and len(arr) != T:
                problems.append(f"tariff.{name} needs {T} entries, got {len(arr)}")
        if not problems:
            c, g = self.prices()
            bad = [int(t) for t in np.nonzero(c < g)[0]]
            if bad:
                problems.append(f"arbitrage: sell price exceeds buy price in slots {bad}")
        p = self.population
        if p.energy_high <= p.energy_low:
            problems.append("population.energy_high must exceed energy_low")
        if p.soc_max - p.energy_high < p.soc_min:
            problems.append("population.soc_max - energy_high must be at least soc_min")
        if self.grid.energy_max < self.grid.energy_min:
            problems.append("grid.energy_max must be at least energy_min")
        if self.station.storage_initial > self.station.storage_capacity:
            problems.append("station.storage_initial exceeds storage_capacity")
        n = self.strategy.noise
        if n.kind in ("uniform", "truncnormal") and n.high <= n.low:
            problems.append("strategy.noise.high must exceed low")
        for b in self.sweep.beta_values or []:
            if b < 0:
                problems.append(f"sweep.beta_values contains negative beta {b}")
        for b in self.sweep.bmax_values or []:
            if b < 0:
                problems.append(f"sweep.bmax_values contains negative capacity {b}")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def prices(self) -> tuple[np.ndarray, np.ndarray]:
        """Buy and sell price per slot."""
        t = self.tariff
        T = self.station.horizon
        if t.buy_price is not None:
            c = np.asarray(t.buy_price, float)
        else:
            hours = np.arange(T)
            peak = (hours >= t.on_peak_start) & (hours < t.on_peak_end)
            c = np.where(peak, t.on_peak_price, t.off_peak_price)
        g = np.asarray(t.sell_price, float) if t.sell_price is not None else c - t.sell_discount
        return c, g

    def replace(self, **changes) -> "SimConfig":
        """Copy with top-level or dotted (``"station.storage_capacity"``) overrides, re-validated."""
        data = self.model_dump()
        for key, value in changes.items():
            node = data
            *path, leaf = key.split(".")
            for part in path:
                node = node[part]
            node[leaf] = value
        return SimConfig.model_validate(data)

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


class ConfigError(ValueError):
    pass


def parse_config(data: dict | None) -> SimConfig:
    try:
        return SimConfig.model_validate(data or {})
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<document>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines)) from None


def load_config(path: str | Path | None) -> SimConfig:
    if path is None:
        return SimConfig()
    text = Path(path).read_text()
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)


def dump_config(config: SimConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2)
