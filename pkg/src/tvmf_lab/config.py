"""YAML experiment configs with strict keys.

A suite file looks like::

    seeds: [0, 1, 2, 3, 4]
    out_dir: results
    emit: {history: true, summary: true, similarity_curves: false,
           margin_curves: false, pca: false}
    curves: {kappas: [-0.4, -0.2, 0.0, 0.3, 2.0], pairs: [[2.0, -0.4]], resolution: 181}
    configs:
      - name: dro_proposed
        task: subpop
        subpop: {noise_dims: 20}
        loss: {dro: robust}
        similarity: {alpha: 0.15}

Every mapping is checked against the fields of the object it builds; an
unknown key raises ``ConfigError`` carrying the dotted key path.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, get_args, get_origin, get_type_hints

import yaml

from .losses import LossConfig
from .shiftgen import DomainConfig, SubpopConfig
from .simcore import KappaMapping, SimilarityKind, SimilaritySpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


def _join(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


def expect_mapping(data, path: str) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    return data


def check_keys(data: dict, allowed, path: str) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(_join(path, key), f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _coerce(value, hint, path: str):
    origin = get_origin(hint)
    if origin is not None and type(None) in get_args(hint):  # Optional[X]
        if value is None:
            return None
        inner = [a for a in get_args(hint) if a is not type(None)]
        return _coerce(value, inner[0], path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list")
        args = get_args(hint)
        item = args[0] if args else Any
        return tuple(_coerce(v, item, _join(path, i)) for i, v in enumerate(value))
    if origin is dict:
        key_t, val_t = get_args(hint)
        return {k: _coerce(v, val_t, _join(path, k)) for k, v in expect_mapping(value, path).items()}
    if isinstance(hint, type) and issubclass(hint, enum.Enum):
        try:
            return hint(value)
        except ValueError:
            choices = ", ".join(m.value for m in hint)
            raise ConfigError(path, f"{value!r} is not one of {choices}") from None
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true or false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    return value


def build_dataclass(cls, data, path: str = ""):
    """Instantiate ``cls`` from a plain mapping, rejecting unknown keys."""
    data = expect_mapping(data, path)
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    check_keys(data, names, path)
    kwargs = {}
    for key, value in data.items():
        sub = _join(path, key)
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = build_dataclass(hint, value, sub)
        else:
            kwargs[key] = _coerce(value, hint, sub)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


_SIMILARITY_KEYS = {"kind", "kappa_p", "kappa_n", "kappa", "alpha", "mapping"}


def build_similarity(data, path: str = "similarity") -> SimilaritySpec:
    """``{kind: cosine}``, ``{alpha: a[, mapping: m]}``, ``{kappa: k}`` or
    ``{kappa_p: p, kappa_n: n}``; ``kind`` defaults to ``tvmf`` whenever a
    kappa or alpha is given."""
    data = expect_mapping(data, path)
    check_keys(data, _SIMILARITY_KEYS, path)
    given = {k for k in data if k != "kind"}
    kind = _coerce(data.get("kind", "tvmf" if given else "cosine"), SimilarityKind, _join(path, "kind"))
    try:
        if kind is SimilarityKind.COSINE:
            if given:
                raise ConfigError(path, "cosine similarity takes no kappa, alpha or mapping")
            return SimilaritySpec.cosine()
        if "alpha" in data:
            if given & {"kappa", "kappa_p", "kappa_n"}:
                raise ConfigError(path, "give either alpha or kappa values, not both")
            mapping = _coerce(data.get("mapping", "symmetric"), KappaMapping, _join(path, "mapping"))
            return SimilaritySpec.from_alpha(_coerce(data["alpha"], float, _join(path, "alpha")), mapping)
        if "mapping" in data:
            raise ConfigError(_join(path, "mapping"), "only meaningful together with alpha")
        if "kappa" in data:
            if given & {"kappa_p", "kappa_n"}:
                raise ConfigError(path, "give either kappa or kappa_p/kappa_n")
            return SimilaritySpec.tvmf(_coerce(data["kappa"], float, _join(path, "kappa")))
        if "kappa_p" not in data:
            raise ConfigError(path, "tvmf needs alpha, kappa or kappa_p")
        kp = _coerce(data["kappa_p"], float, _join(path, "kappa_p"))
        kn = _coerce(data.get("kappa_n", kp), float, _join(path, "kappa_n"))
        return SimilaritySpec.tvmf(kp, kn)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def build_train_config(data, path: str = "") -> TrainConfig:
    data = dict(expect_mapping(data, path))
    sim = build_similarity(data.pop("similarity", None), _join(path, "similarity"))
    names = {f.name for f in dataclasses.fields(TrainConfig)} - {"similarity"}
    check_keys(data, names, path)
    hints = get_type_hints(TrainConfig)
    kwargs: dict[str, Any] = {"similarity": sim}
    for key, value in data.items():
        sub = _join(path, key)
        if key == "subpop":
            kwargs[key] = build_dataclass(SubpopConfig, value, sub)
        elif key == "domain":
            kwargs[key] = build_dataclass(DomainConfig, value, sub)
        elif key == "loss":
            kwargs[key] = build_dataclass(LossConfig, value, sub)
        else:
            kwargs[key] = _coerce(value, hints[key], sub)
    if kwargs.get("data_csv") and not Path(kwargs["data_csv"]).is_file():
        raise ConfigError(_join(path, "data_csv"), f"no such file: {kwargs['data_csv']}")
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


@dataclass
class EmitFlags:
    history: bool = True
    summary: bool = True
    similarity_curves: bool = False
    margin_curves: bool = False
    pca: bool = False


@dataclass
class CurveSpec:
    kappas: tuple[float, ...] = (-0.4, -0.2, 0.0, 0.3, 2.0)
    pairs: tuple[tuple[float, float], ...] = ((2.0, -0.4),)
    resolution: int = 181

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        for pair in self.pairs:
            if len(pair) != 2:
                raise ValueError("each pair is [kappa_p, kappa_n]")
            if pair[0] < pair[1]:
                raise ValueError(f"pair {list(pair)}: the margin needs kappa_p >= kappa_n")


@dataclass
class ExperimentSuite:
    configs: list[TrainConfig]
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: Optional[str] = None
    emit: EmitFlags = field(default_factory=EmitFlags)
    curves: CurveSpec = field(default_factory=CurveSpec)

    def __post_init__(self):
        names = [c.name for c in self.configs]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate config names: {', '.join(dupes)}")
        if not self.seeds:
            raise ValueError("need at least one seed")


def build_curve_spec(data, path: str) -> CurveSpec:
    data = expect_mapping(data, path)
    check_keys(data, {"kappas", "pairs", "resolution"}, path)
    kw: dict[str, Any] = {}
    if "kappas" in data:
        kw["kappas"] = _coerce(data["kappas"], tuple[float, ...], _join(path, "kappas"))
    if "pairs" in data:
        pairs = data["pairs"]
        if not isinstance(pairs, list):
            raise ConfigError(_join(path, "pairs"), "expected a list of [kappa_p, kappa_n]")
        kw["pairs"] = tuple(_coerce(p, tuple[float, ...], _join(_join(path, "pairs"), i)) for i, p in enumerate(pairs))
    if "resolution" in data:
        kw["resolution"] = _coerce(data["resolution"], int, _join(path, "resolution"))
    try:
        return CurveSpec(**kw)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def build_suite(data) -> ExperimentSuite:
    data = expect_mapping(data, "")
    check_keys(data, {"configs", "seeds", "out_dir", "emit", "curves"}, "")
    raw = data.get("configs")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("configs", "expected a non-empty list of run configs")
    configs = []
    for i, entry in enumerate(raw):
        entry = expect_mapping(entry, _join("configs", i))
        if "name" not in entry:
            raise ConfigError(_join("configs", i), "every config needs a name")
        configs.append(build_train_config(entry, _join("configs", i)))
    kw: dict[str, Any] = {"configs": configs}
    if "seeds" in data:
        kw["seeds"] = _coerce(data["seeds"], tuple[int, ...], "seeds")
    if "out_dir" in data:
        kw["out_dir"] = _coerce(data["out_dir"], str, "out_dir")
    if "emit" in data:
        kw["emit"] = build_dataclass(EmitFlags, data["emit"], "emit")
    if "curves" in data:
        kw["curves"] = build_curve_spec(data["curves"], "curves")
    try:
        return ExperimentSuite(**kw)
    except ValueError as exc:
        raise ConfigError("configs", str(exc)) from None


def load_yaml(path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path} is not valid YAML: {exc}") from None


def load_suite(path) -> ExperimentSuite:
    return build_suite(load_yaml(path))
