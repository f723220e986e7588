"""Flat ``section.key = value`` run configuration.

Example::

    # reference case B
    risk.c = 2
    risk.lam = 1
    risk.claims = exponential
    risk.beta = 1
    risk.M = 1
    gbm.r0 = 0
    gbm.m = 0.05
    gbm.delta = 0.2
    mc.x0 = 0, 3.2, 6.45
    run.seed = 1

Blank lines and ``#`` comments are ignored.  Lists are comma separated.
Every error names the offending key path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .params import (
    DiscreteMixture,
    Exponential,
    GbmDiscount,
    ParameterError,
    RiskModel,
    VasicekDiscount,
    validate_gbm,
    validate_risk_model,
    validate_vasicek,
)

__all__ = ["ConfigError", "RunConfig", "parse_config", "parse_text"]

_KNOWN = {
    "risk": {"c", "lam", "M", "claims", "beta", "atoms", "weights"},
    "gbm": {"r0", "m", "delta"},
    "vasicek": {"r0", "a", "b_bar", "delta_bar"},
    "grid": {"x_max", "n_x", "n_r", "r_halfwidth", "min_halfwidth", "tol", "max_iter"},
    "mc": {"x0", "n_paths", "horizon", "dt", "threshold", "tail_tol"},
    "curve": {"x_max", "n"},
    "bound": {"r", "s"},
    "run": {"seed"},
}

_FIELD_KEYS = {"lam": "lam", "c": "c", "M": "M", "beta": "beta", "atoms": "atoms", "weights": "weights",
               "claims": "claims"}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    risk: RiskModel
    discount: GbmDiscount | VasicekDiscount
    values: dict[str, str] = field(default_factory=dict)
    seed: int = 1

    def _raw(self, key: str):
        return self.values.get(key)

    def number(self, key: str, default: float | None = None) -> float:
        raw = self._raw(key)
        if raw is None:
            if default is None:
                raise ConfigError(key, "missing key")
            return default
        return _to_float(key, raw)

    def integer(self, key: str, default: int | None = None) -> int:
        raw = self._raw(key)
        if raw is None:
            if default is None:
                raise ConfigError(key, "missing key")
            return default
        return _to_int(key, raw)

    def numbers(self, key: str, default: list[float] | None = None) -> list[float]:
        raw = self._raw(key)
        if raw is None:
            if default is None:
                raise ConfigError(key, "missing key")
            return list(default)
        return _to_list(key, raw)


def _to_float(key: str, raw: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {raw!r}") from None
    if not math.isfinite(v):
        raise ConfigError(key, f"expected a finite number, got {raw!r}")
    return v


def _to_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        pass
    v = _to_float(key, raw)
    if v != int(v):
        raise ConfigError(key, f"expected an integer, got {raw!r}")
    return int(v)


def _to_list(key: str, raw: str) -> list[float]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(key, "expected a nonempty list of numbers")
    return [_to_float(key, p) for p in parts]


def _tokenize(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(key, f"line {lineno}: expected 'section.key = value'")
        section, dot, name = key.partition(".")
        if not dot or not section or not name:
            raise ConfigError(key, f"line {lineno}: keys must have the form section.key")
        if section not in _KNOWN:
            raise ConfigError(key, f"unknown section {section!r}")
        if name not in _KNOWN[section]:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "duplicate key")
        values[key] = value.strip()
    return values


def _need(values: dict[str, str], key: str) -> str:
    if key not in values:
        raise ConfigError(key, "missing key")
    return values[key]


def _risk(values: dict[str, str]) -> RiskModel:
    if not any(k.startswith("risk.") for k in values):
        raise ConfigError("", "missing section: risk")
    kind = values.get("risk.claims", "exponential").lower()
    if kind == "exponential":
        claims = Exponential(_to_float("risk.beta", _need(values, "risk.beta")))
    elif kind == "mixture":
        atoms = _to_list("risk.atoms", _need(values, "risk.atoms"))
        weights = _to_list("risk.weights", _need(values, "risk.weights"))
        claims = DiscreteMixture(tuple(atoms), tuple(weights))
    else:
        raise ConfigError("risk.claims", f"expected 'exponential' or 'mixture', got {kind!r}")
    rm = RiskModel(c=_to_float("risk.c", _need(values, "risk.c")),
                   lam=_to_float("risk.lam", _need(values, "risk.lam")),
                   claims=claims, M=_to_float("risk.M", _need(values, "risk.M")))
    try:
        return validate_risk_model(rm)
    except ParameterError as exc:
        raise ConfigError(f"risk.{_FIELD_KEYS.get(exc.field, exc.field)}", str(exc)) from None


def _discount(values: dict[str, str]):
    has_gbm = any(k.startswith("gbm.") for k in values)
    has_vas = any(k.startswith("vasicek.") for k in values)
    if has_gbm == has_vas:
        raise ConfigError("", "exactly one discount model (gbm or vasicek) must be configured")
    try:
        if has_gbm:
            return validate_gbm(GbmDiscount(
                r0=_to_float("gbm.r0", values.get("gbm.r0", "0")),
                m=_to_float("gbm.m", _need(values, "gbm.m")),
                delta=_to_float("gbm.delta", _need(values, "gbm.delta"))))
        return validate_vasicek(VasicekDiscount(
            r0=_to_float("vasicek.r0", _need(values, "vasicek.r0")),
            a=_to_float("vasicek.a", _need(values, "vasicek.a")),
            b_bar=_to_float("vasicek.b_bar", _need(values, "vasicek.b_bar")),
            delta_bar=_to_float("vasicek.delta_bar", _need(values, "vasicek.delta_bar"))))
    except ParameterError as exc:
        raise ConfigError(f"{'gbm' if has_gbm else 'vasicek'}.{exc.field}", str(exc)) from None


def parse_text(text: str) -> RunConfig:
    values = _tokenize(text)
    risk = _risk(values)
    discount = _discount(values)
    seed = _to_int("run.seed", values.get("run.seed", "1"))
    return RunConfig(risk, discount, values, seed)


def parse_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {str(p)!r}: {exc.strerror}") from None
    return parse_text(text)
