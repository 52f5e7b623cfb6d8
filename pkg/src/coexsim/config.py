"""TOML campaign configuration: parsing, defaults, overrides and validation.

Sections ``[network]``, ``[frame]``, ``[campaign]`` and ``[sweep]``. Power
keys may be given in dBm with a ``_dbm`` suffix (``rho_max_dbm = 46``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import fields

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .frame import FrameConfig
from .harness import CampaignConfig
from .scenario import NetworkConfig, dbm_to_watt

DBM_KEYS = ("sigma2_ul", "sigma2_dl", "rho_max", "p_ul")
SMOKE_SNAPSHOTS = 50
PROFILES = ("full", "smoke")
# keys that also accept a keyword in place of a number
KEYWORDS = {"fpa_omega": ("alpha",)}


class ConfigError(ValueError):
    """Every problem found in a configuration, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


def _type_ok(value, default) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, (list, dict)):
        return isinstance(value, type(default))
    return True


def _build(cls, section: dict, name: str, problems: list[str], extra: tuple[str, ...] = ()):
    known = {f.name: f for f in fields(cls) if f.init}
    proto = cls()
    kw = {}
    for key, value in section.items():
        if key.endswith("_dbm") and key[:-4] in DBM_KEYS and key[:-4] in known:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                problems.append(f"[{name}] {key} must be a number (got {value!r})")
                continue
            if key[:-4] in section:
                problems.append(f"[{name}] give either {key[:-4]} or {key}, not both")
                continue
            kw[key[:-4]] = dbm_to_watt(float(value))
            continue
        if key in extra:
            continue
        if key not in known:
            problems.append(f"[{name}] unknown key {key!r}")
            continue
        default = getattr(proto, key)
        if value in KEYWORDS.get(key, ()):
            kw[key] = value
            continue
        if default is not None and not _type_ok(value, default):
            problems.append(f"[{name}] {key} has the wrong type (got {value!r}, expected {type(default).__name__})")
            continue
        kw[key] = float(value) if isinstance(default, float) and not isinstance(value, bool) else value
    return kw


def _set_path(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    cur = doc
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value


def parse_override(item: str) -> tuple[str, object]:
    """``section.key=value`` with a TOML value; bare words are taken as strings."""
    if "=" not in item:
        raise ConfigError([f"override {item!r} is not of the form section.key=value"])
    key, raw = item.split("=", 1)
    key = key.strip()
    if "." not in key:
        raise ConfigError([f"override key {key!r} needs a section prefix, e.g. frame.{key}"])
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def validate_config(text: str = "", overrides: list[str] | None = None) -> CampaignConfig:
    """Parse, default and cross-validate; raises :class:`ConfigError` listing every violation."""
    try:
        doc = tomllib.loads(text or "")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"TOML parse error: {exc}"]) from None
    problems: list[str] = []
    for item in overrides or []:
        try:
            k, v = parse_override(item)
            _set_path(doc, k, v)
        except ConfigError as exc:
            problems.extend(exc.problems)
    for sec in doc:
        if sec not in ("network", "frame", "campaign", "sweep"):
            problems.append(f"unknown section [{sec}]")
    net_kw = _build(NetworkConfig, doc.get("network", {}), "network", problems)
    fr_kw = _build(FrameConfig, doc.get("frame", {}), "frame", problems)
    camp_sec = dict(doc.get("campaign", {}))
    profile = camp_sec.pop("profile", "full")
    if profile not in PROFILES:
        problems.append(f"[campaign] profile must be one of {PROFILES} (got {profile!r})")
    camp_kw = _build(CampaignConfig, camp_sec, "campaign", problems)
    for k in ("network", "frame", "sweep"):
        camp_kw.pop(k, None)
    if profile == "smoke" and "n_snapshots" not in camp_sec:
        camp_kw["n_snapshots"] = SMOKE_SNAPSHOTS
    sweep = doc.get("sweep", {})
    if not isinstance(sweep, dict):
        problems.append("[sweep] must be a table of axis = [values]")
        sweep = {}

    if problems:
        raise ConfigError(problems)
    net = NetworkConfig(**net_kw)
    f = fr_kw.get("f")
    if f is not None and "tau_p" not in fr_kw:
        fr_kw["tau_p"] = int(f) * net.K
    fr = FrameConfig(**fr_kw)
    camp = CampaignConfig(network=net, frame=fr, sweep={k: list(v) if isinstance(v, list) else v for k, v in sweep.items()}, **camp_kw)
    errs = camp.errors()
    if errs:
        raise ConfigError(errs)
    return camp


def load_config(path, overrides: list[str] | None = None) -> CampaignConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_config(fh.read(), overrides)


def default_config() -> CampaignConfig:
    return validate_config("")


def dump_defaults() -> str:
    """The default configuration as TOML text (watts, not dBm)."""
    c = default_config()
    lines = ["[network]"]
    for k, v in dataclasses.asdict(c.network).items():
        lines.append(f"{k} = {_toml(v)}")
    lines.append("\n[frame]")
    for k, v in dataclasses.asdict(c.frame).items():
        if v is not None:
            lines.append(f"{k} = {_toml(v)}")
    lines.append("\n[campaign]")
    for fd in fields(CampaignConfig):
        if fd.name in ("network", "frame", "sweep"):
            continue
        lines.append(f"{fd.name} = {_toml(getattr(c, fd.name))}")
    lines.append("\n[sweep]")
    return "\n".join(lines) + "\n"


def _toml(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml(x) for x in v) + "]"
    return str(v)
