"""Flat ``key = value`` run configuration.

Layers merge as defaults < config file < command line. Values take the type
of their default; unknown keys are rejected with the closest valid names.
"""

from __future__ import annotations

import difflib
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from fullsub.dsp import StftConfig
from fullsub.errors import InvalidArgument
from fullsub.mask import CrmConfig

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "stft.win_len": 512,
    "stft.hop": 256,
    "stft.fft_len": 512,
    "stft.sample_rate": 16000,
    "feature.N": 15,
    "crm.K": 10.0,
    "crm.C": 0.1,
    "model.variant": "fullsubnet",
    "model.full_hidden": 512,
    "model.full_layers": 2,
    "model.sub_hidden": 384,
    "model.sub_layers": 2,
    "model.fb_hidden": 512,
    "model.fb_layers": 3,
    "model.sb_hidden": 384,
    "model.sb_layers": 2,
    "stream.tau": 2,
    "stream.norm": "cumulative",
    "train.lr": 0.001,
    "train.seq_len": 192,
    "train.epochs": 10,
    "train.batch_size": 4,
    "train.valid_every": 1,
    "data.clean_count": 200,
    "data.clean_seconds": 3.0,
    "data.noise_count": 14,
    "data.noise_seconds": 5.0,
    "data.valid_count": 20,
    "data.clean_manifest": "",
    "data.noise_manifest": "",
    "data.keep_tail": True,
    "data.reverb_prob": 0.75,
    "data.snr_low": -5.0,
    "data.snr_high": 20.0,
}


class UnknownKey(InvalidArgument):
    pass


def _check_key(key: str) -> None:
    if key not in DEFAULTS:
        near = difflib.get_close_matches(key, DEFAULTS, n=3, cutoff=0.5)
        hint = f"; did you mean {', '.join(near)}?" if near else ""
        raise UnknownKey(f"unknown config key {key!r}{hint}")


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return type(default)(raw)
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise InvalidArgument(f"{key}: cannot read {text!r} as {type(default).__name__}") from None
    return text


def parse_lines(lines: Iterable[str], source: str = "<config>", strict: bool = True) -> dict[str, object]:
    """``key = value`` lines; ``#`` starts a comment. Non-strict mode skips unknown keys."""
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS and not strict:
            continue
        _check_key(key)
        out[key] = _coerce(key, value)
    return out


class RunConfig(dict):
    """A complete, typed key/value mapping."""

    @classmethod
    def build(cls, *layers: Mapping[str, object]) -> "RunConfig":
        cfg = cls(DEFAULTS)
        for layer in layers:
            for key, value in layer.items():
                _check_key(key)
                cfg[key] = _coerce(key, value)
        return cfg

    @classmethod
    def from_file(cls, path, overrides: Mapping[str, object] | None = None) -> "RunConfig":
        path = Path(path)
        return cls.build(parse_lines(path.read_text().splitlines(), str(path)), overrides or {})

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def stft(self) -> StftConfig:
        return StftConfig(self["stft.win_len"], self["stft.hop"], self["stft.fft_len"], self["stft.sample_rate"])

    def crm(self) -> CrmConfig:
        return CrmConfig(K=self["crm.K"], C=self["crm.C"])

    def model_kwargs(self, dtype=np.float32) -> dict:
        variant = self["model.variant"]
        common = dict(n_bins=self.stft().n_bins, tau=self["stream.tau"], crm=self.crm(), seed=self["seed"], dtype=dtype)
        if variant == "fullsubnet":
            return dict(
                common,
                n_neighbors=self["feature.N"],
                full_hidden=self["model.full_hidden"],
                sub_hidden=self["model.sub_hidden"],
                full_layers=self["model.full_layers"],
                sub_layers=self["model.sub_layers"],
            )
        if variant == "fullband":
            return dict(common, hidden=self["model.fb_hidden"], layers=self["model.fb_layers"])
        if variant == "subband":
            return dict(common, n_neighbors=self["feature.N"], hidden=self["model.sb_hidden"], layers=self["model.sb_layers"])
        raise InvalidArgument(f"model.variant must be fullsubnet, fullband or subband, not {variant!r}")
