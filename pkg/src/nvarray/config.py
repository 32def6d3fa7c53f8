"""Pipeline configuration: TOML text with unit-suffixed keys, strictly validated."""

from __future__ import annotations

import dataclasses
import re
import sys
from dataclasses import dataclass, field, fields

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .formation import YieldModel
from .mask import ApertureMask
from .materials import LayerStack, builtin_material
from .photonics import EmitterDynamics
from .transport import SpeciesPlan, TransportConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


class SectionError(ValueError):
    def __init__(self, section: str, message: str):
        self.section = section
        super().__init__(f"[{section}] {message}")


@dataclass(frozen=True)
class RunSection:
    seed: int = 1
    out: str = "out"
    threads: int = 1


@dataclass(frozen=True)
class MaskSection:
    aperture_diameter_nm: float = 80.0
    pitch_nm: float = 2000.0
    rows: int = 7
    cols: int = 7
    resist_thickness_nm: float = 200.0
    origin_x_nm: float = 0.0
    origin_y_nm: float = 0.0


@dataclass(frozen=True)
class TargetSection:
    substrate: str = "diamond"
    resist: str = "pmma"
    substrate_displacement_ev: float = 50.0
    resist_displacement_ev: float = 25.0
    binding_ev: float = 3.0


@dataclass(frozen=True)
class ImplantSection:
    fluence_per_cm2: float = 1e12
    molecule_energy_kev: float = 40.0
    simulate_carbon: bool = True
    masked_histories: int = 1000


@dataclass(frozen=True)
class TransportSection:
    quadrature_order: int = 32
    fast_path: bool = False
    # 0 means: stop at the local displacement energy
    stop_energy_ev: float = 0.0
    max_collisions: int = 1_000_000
    max_histories: int = 10_000_000
    record_vacancy_sites: bool = False
    chunk_size: int = 256


@dataclass(frozen=True)
class FormationSection:
    base_yield: float = 0.07
    nv_minus_fraction: float = 0.9
    vacancy_boost: float = 0.0
    vacancy_radius_nm: float = 10.0
    single_emitter_rate_cps: float = 100e3
    brightness_sigma: float = 0.1


@dataclass(frozen=True)
class PhotonicsSection:
    excited_lifetime_ns: float = 12.0
    pump_rate_per_ns: float = 0.05
    signal_to_background: float = 4.0
    acquisition_time_s: float = 10.0
    bin_width_ns: float = 1.0
    max_tau_ns: float = 200.0
    jitter_ns: float = 0.0
    # -1: every detected spot
    hbt_max_spots: int = -1
    save_timestamps: bool = False


@dataclass(frozen=True)
class ImagingSection:
    psf_sigma_nm: float = 130.0
    pixel_size_nm: float = 100.0
    noise: bool = True
    dwell_time_s: float = 0.01
    threshold: float = 2.0
    match_radius_nm: float = 300.0


@dataclass(frozen=True)
class AnalysisSection:
    g2_error_limit: float = 0.1
    single_emitter_sigma: float = 2.0
    flux_window_px: int = 4


SECTIONS = {
    "run": RunSection,
    "mask": MaskSection,
    "target": TargetSection,
    "implant": ImplantSection,
    "transport": TransportSection,
    "formation": FormationSection,
    "photonics": PhotonicsSection,
    "imaging": ImagingSection,
    "analysis": AnalysisSection,
}


@dataclass(frozen=True)
class PipelineConfig:
    run: RunSection = field(default_factory=RunSection)
    mask: MaskSection = field(default_factory=MaskSection)
    target: TargetSection = field(default_factory=TargetSection)
    implant: ImplantSection = field(default_factory=ImplantSection)
    transport: TransportSection = field(default_factory=TransportSection)
    formation: FormationSection = field(default_factory=FormationSection)
    photonics: PhotonicsSection = field(default_factory=PhotonicsSection)
    imaging: ImagingSection = field(default_factory=ImagingSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def __post_init__(self):
        checks = (
            ("mask", self.aperture_mask),
            ("target", self.layer_stack),
            ("implant", self.species_plan),
            ("transport", self.transport_config),
            ("formation", self.yield_model),
            ("photonics", self.dynamics),
            ("implant", self._check_implant),
            ("photonics", self._check_photonics),
            ("imaging", self._check_imaging),
            ("analysis", self._check_analysis),
            ("run", self._check_run),
        )
        # building every component runs its own validation
        for section, check in checks:
            try:
                check()
            except ValueError as exc:
                raise SectionError(section, str(exc)) from None

    def _check_implant(self):
        if self.implant.fluence_per_cm2 < 0:
            raise ValueError("fluence_per_cm2 must be non-negative")

    def _check_photonics(self):
        p = self.photonics
        if not p.signal_to_background > 0:
            raise ValueError("signal_to_background must be positive")
        if not p.acquisition_time_s > 0:
            raise ValueError("acquisition_time_s must be positive")
        if not p.bin_width_ns > 0 or not p.max_tau_ns >= p.bin_width_ns:
            raise ValueError("need bin_width_ns > 0 and max_tau_ns >= bin_width_ns")
        if p.jitter_ns < 0:
            raise ValueError("jitter_ns must be non-negative")
        if p.hbt_max_spots < -1:
            raise ValueError("hbt_max_spots must be -1 (all) or >= 0")

    def _check_imaging(self):
        im = self.imaging
        if not (im.psf_sigma_nm > 0 and im.pixel_size_nm > 0 and im.dwell_time_s > 0):
            raise ValueError("psf_sigma_nm, pixel_size_nm and dwell_time_s must be positive")
        if not im.threshold > 1:
            raise ValueError("threshold must exceed 1")
        if not im.match_radius_nm > 0:
            raise ValueError("match_radius_nm must be positive")

    def _check_analysis(self):
        a = self.analysis
        if not a.g2_error_limit > 0:
            raise ValueError("g2_error_limit must be positive")
        if a.single_emitter_sigma < 0:
            raise ValueError("single_emitter_sigma must be non-negative")
        if a.flux_window_px < 1:
            raise ValueError("flux_window_px must be >= 1")

    def _check_run(self):
        if self.run.threads < 1:
            raise ValueError("threads must be >= 1")
        if not 0 <= self.run.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    # component builders
    def aperture_mask(self) -> ApertureMask:
        m = self.mask
        return ApertureMask(m.aperture_diameter_nm, m.pitch_nm, m.rows, m.cols, m.resist_thickness_nm,
                            (m.origin_x_nm, m.origin_y_nm))

    def layer_stack(self) -> LayerStack:
        t = self.target
        sub = builtin_material(t.substrate, t.substrate_displacement_ev, t.binding_ev)
        res = builtin_material(t.resist, t.resist_displacement_ev, t.binding_ev)
        return LayerStack(((res, self.mask.resist_thickness_nm),), sub)

    def species_plan(self) -> SpeciesPlan:
        i = self.implant
        return SpeciesPlan(i.molecule_energy_kev, simulate_second=i.simulate_carbon,
                           masked_histories=i.masked_histories)

    def transport_config(self) -> TransportConfig:
        t = self.transport
        return TransportConfig(t.quadrature_order, t.fast_path, t.stop_energy_ev or None, t.max_collisions,
                               t.max_histories, t.record_vacancy_sites or self.formation.vacancy_boost > 0,
                               t.chunk_size)

    def yield_model(self) -> YieldModel:
        f = self.formation
        return YieldModel(f.base_yield, f.nv_minus_fraction, f.vacancy_boost, f.vacancy_radius_nm,
                          f.single_emitter_rate_cps, f.brightness_sigma)

    def dynamics(self) -> EmitterDynamics:
        p = self.photonics
        return EmitterDynamics.for_detected_rate(self.formation.single_emitter_rate_cps,
                                                 p.excited_lifetime_ns, p.pump_rate_per_ns)

    @property
    def background_rate_cps(self) -> float:
        return self.formation.single_emitter_rate_cps / self.photonics.signal_to_background

    def replace(self, section: str, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def _key_line(text: str, section: str, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the header when key is None)."""
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"^\"?{re.escape(key)}\"?\s*=", line):
            return n
    return None


def _coerce(value, ftype: str, where: str):
    if ftype == "bool":
        if isinstance(value, bool):
            return value
    elif ftype == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif ftype == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif ftype == "str":
        if isinstance(value, str):
            return value
    raise TypeError(f"{where} expects {ftype}, got {type(value).__name__}")


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", int(m.group(1)) if m else None, source) from None
    sections = {}
    for name, body in raw.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]", _key_line(text, name, None), source)
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table", _key_line(text, name, None) or
                              _key_line(text, "", name), source)
        cls = SECTIONS[name]
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, value in body.items():
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{name}]; allowed: {', '.join(types)}",
                                  _key_line(text, name, key), source)
            try:
                values[key] = _coerce(value, types[key], f"{name}.{key}")
            except TypeError as exc:
                raise ConfigError(str(exc), _key_line(text, name, key), source) from None
        sections[name] = cls(**values)
    try:
        return PipelineConfig(**sections)
    except SectionError as exc:
        line = None
        for key in raw.get(exc.section, {}):
            # component messages name fields without the unit suffix
            stem = re.sub(r"_(nm|ev|kev|s|ns|cps|per_cm2|per_ns)$", "", key)
            if re.search(rf"\b({re.escape(key)}|{re.escape(stem)})\b", str(exc)):
                line = _key_line(text, exc.section, key)
                break
        if line is None:
            line = _key_line(text, exc.section, None)
        raise ConfigError(str(exc), line, source) from None


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path))


def dump_config(config: PipelineConfig) -> str:
    return tomli_w.dumps(config.to_dict())
