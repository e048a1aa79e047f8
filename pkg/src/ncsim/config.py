"""Flat key = value configuration files with [section] headers.

Grammar (INI subset, parsed with configparser):

    [system]
    name = robot-arm            # batch-reactor | robot-arm
    a = 4.905                   # robot-arm parameters
    b = 2.0

    [protocol]
    scheduler = tod             # rr | tod
    coupling = ethernet-zero    # product-form | ethernet-zero

    [dropout]
    kind = bernoulli            # bernoulli | csma | markov | iid
    probs = 0.2, 0.4, 0.6       # bernoulli p_l / markov q_l
    recovery = 0.5, 0.5, 0.5    # markov p_l
    p1 = 0.9                    # csma reason probabilities
    p2 = 0.9
    ps = 0.8                    # iid overall success

    [schedule]
    miati = 0.005
    mati = 0.005
    policy = constant-at-mati   # or uniform-random

    [run]
    seed = 2024
    runs = 15
    tmax = 5.0
    x0_norm = 1.0
    eps_conv = 0.05
    out = out/

Every command-line flag overrides the corresponding file entry.
"""

from __future__ import annotations

import configparser
from pathlib import Path

_FLOAT_KEYS = {"a", "b", "p1", "p2", "ps", "miati", "mati", "tmax", "x0_norm", "eps_conv"}
_INT_KEYS = {"seed", "runs"}
_LIST_KEYS = {"probs", "recovery"}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    """Parse a config file into a flat {key: value} dict (sections merged;
    keys are unique across sections in the documented grammar)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    out: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            key = key.strip()
            raw = raw.strip()
            try:
                if key in _LIST_KEYS:
                    out[key] = tuple(float(tok) for tok in raw.replace(",", " ").split())
                elif key in _FLOAT_KEYS:
                    out[key] = float(raw)
                elif key in _INT_KEYS:
                    out[key] = int(raw)
                else:
                    out[key] = raw
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return out


def merge_config(args_dict: dict, file_values: dict) -> dict:
    """File values fill in wherever the CLI left a flag unset (None)."""
    merged = dict(file_values)
    for key, value in args_dict.items():
        if value is not None:
            merged[key] = value
    return merged
