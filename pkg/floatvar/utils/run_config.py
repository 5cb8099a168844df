"""
Run configuration: a line-based ``key = value`` file with ``[section]``
headers and ``#`` comments. Every section is validated by its form in
floatvar.forms; omitted keys take their defaults.
"""
import hashlib
from dataclasses import dataclass, field, fields, replace

from floatvar.apps import LOGGER
from floatvar.forms import SECTION_FORMS
from floatvar.utils.dynamics import DynamicsException, Forcing, ModelConfig, PhysParams
from floatvar.utils.grid import Grid, GridException, NormParams
from floatvar.utils.twin import TwinConfig, TwinException
from floatvar.utils.verify import minimal_K

FORMS = {form.section: form for form in SECTION_FORMS}
KEY_SECTIONS = {name: form.section for form in SECTION_FORMS for name in form.base_fields}


class ConfigException(Exception):
    pass


@dataclass(frozen=True)
class ModelSettings:
    dt: float = 0.05
    linear: bool = False


@dataclass(frozen=True)
class ForcingSettings:
    tau0: float = 0.1
    depth_profile: tuple = ()


@dataclass(frozen=True)
class TwinSettings:
    spinup_steps: int = 400
    window_steps: int = 200
    floats: int = 50
    obs_times: int = 10
    noise_sd: float = 1e-3
    background_scale: float = 0.0
    seed: int = 0
    z0: float = 0.5
    windows: int = 1


@dataclass(frozen=True)
class AssimSettings:
    omega: float = 1.0
    sigma_u: float = 1.0
    sigma_v: float = 1.0
    sigma_theta: float = 1.0
    sigma_u_levels: tuple = ()
    sigma_v_levels: tuple = ()
    sigma_theta_levels: tuple = ()
    freeze_theta: bool = True
    jb_norm: str = "b"
    outer_loops: int = 3
    inner_iters: int = 10
    tol: float = 1e-3

    def sigma(self, name):
        """Per-level standard deviations when given, the scalar otherwise."""
        levels = getattr(self, f"sigma_{name}_levels")
        return levels if levels else getattr(self, f"sigma_{name}")


@dataclass(frozen=True)
class VerifySettings:
    checks: tuple = ("wbound", "energy", "nlbound", "picard")
    verify_dt: float = 0.01
    wbound_samples: int = 100
    wbound_steps: int = 50
    energy_samples: int = 10
    energy_T: float = 0.5
    nlbound_samples: int = 5
    picard_T: float = 0.2
    picard_max_n: int = 30
    picard_tol: float = 1e-10
    picard_amplitude: float = 0.05
    gradcheck_directions: int = 10
    gradcheck_eps: float = 1e-5
    dot_tests: int = 20


@dataclass(frozen=True)
class PathSettings:
    initial_state: str = ""
    truth: str = ""
    background: str = ""
    analysis: str = ""
    obs: str = ""
    floats_file: str = ""


@dataclass(frozen=True)
class OutputSettings:
    interval: int = 0


@dataclass(frozen=True)
class RunConfig:
    ConfigException = ConfigException

    grid: Grid = field(default_factory=lambda: Grid(32, 32, 9, 1.0))
    physics: PhysParams = field(default_factory=PhysParams)
    model: ModelSettings = field(default_factory=ModelSettings)
    forcing: ForcingSettings = field(default_factory=ForcingSettings)
    norm: NormParams = field(default_factory=NormParams)
    twin: TwinSettings = field(default_factory=TwinSettings)
    assim: AssimSettings = field(default_factory=AssimSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    paths: PathSettings = field(default_factory=PathSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    @property
    def model_config(self):
        return ModelConfig(
            phys=self.physics,
            dt=self.model.dt,
            linear=self.model.linear,
            forcing=Forcing("wind", self.forcing.tau0, self.forcing.depth_profile),
        )

    @property
    def twin_config(self):
        return TwinConfig(
            grid=self.grid,
            phys=self.physics,
            dt=self.model.dt,
            tau0=self.forcing.tau0,
            depth_profile=self.forcing.depth_profile,
            linear=self.model.linear,
            **{f.name: getattr(self.twin, f.name) for f in fields(TwinSettings)},
        )

    def with_seed(self, seed):
        if not 0 <= seed < 2 ** 64:
            raise ConfigException(f"seed must be an unsigned 64-bit integer, got {seed}")
        return replace(self, twin=replace(self.twin, seed=seed))

    def digest(self):
        return hashlib.sha256(emit_config(self).encode("utf-8")).hexdigest()


SECTION_TYPES = {
    "grid": Grid,
    "physics": PhysParams,
    "model": ModelSettings,
    "forcing": ForcingSettings,
    "norm": NormParams,
    "twin": TwinSettings,
    "assim": AssimSettings,
    "verify": VerifySettings,
    "paths": PathSettings,
    "output": OutputSettings,
}


def _split_lines(text):
    """Yields (line number, section, key, value); section is None before any header."""
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigException(f"line {number}: malformed section header '{line}'")
            section = line[1:-1].strip()
            if section not in FORMS:
                raise ConfigException(f"line {number}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigException(f"line {number}: expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigException(f"line {number}: missing key before '='")
        yield number, section, key, value


def _collect(text):
    values = {name: {} for name in FORMS}
    lines = {}
    for number, section, key, value in _split_lines(text):
        owner = KEY_SECTIONS.get(key)
        if owner is None or (section is not None and owner != section):
            where = f"[{section}]" if section else "any section"
            raise ConfigException(f"line {number}: unknown key '{key}' in {where}")
        if key in lines:
            raise ConfigException(f"line {number}: duplicate key '{key}' (first set on line {lines[key]})")
        values[owner][key] = value
        lines[key] = number
    return values, lines


def _where(key, lines):
    return f"line {lines[key]}" if key in lines else "default"


def _clean_section(name, supplied, lines):
    form_class = FORMS[name]
    data = form_class.defaults()
    data.update(supplied)
    form = form_class(data)
    if not form.is_valid():
        key, errors = next(iter(form.errors.items()))
        raise ConfigException(f"{_where(key, lines)}: {key}: {' '.join(errors)}")
    return form.cleaned_data


def _build(name, cleaned, lines):
    try:
        return SECTION_TYPES[name](**cleaned)
    except (GridException, DynamicsException, TwinException, TypeError, ValueError) as exc:
        key = next((k for k in cleaned if k in lines), None)
        where = _where(key, lines) if key else "default"
        raise ConfigException(f"{where}: [{name}]: {exc}")


def _cross_check(cfg, lines):
    grid, phys = cfg.grid, cfg.physics
    try:
        grid.check_stencil(cfg.norm.m + 1)
    except GridException as exc:
        raise ConfigException(f"{_where('m', lines)}: m: {exc}")

    h = min(grid.dx, grid.dy, grid.dz)
    diffusive = 0.5 * h ** 2 / (6.0 * phys.nu)
    if cfg.model.dt > diffusive:
        supplied = [k for k in ("nu", "nx", "ny", "nz", "a") if k in lines]
        key = "dt" if "dt" in lines or not supplied else max(supplied, key=lines.get)
        raise ConfigException(
            f"{_where(key, lines)}: {key}: dt={cfg.model.dt} exceeds the diffusive stability limit {diffusive:.6g}"
        )
    if not 0.0 < cfg.twin.z0 < grid.a:
        raise ConfigException(f"{_where('z0', lines)}: z0: z0={cfg.twin.z0} must lie strictly inside (0, {grid.a})")
    if cfg.forcing.depth_profile and len(cfg.forcing.depth_profile) != grid.nz:
        raise ConfigException(
            f"{_where('depth_profile', lines)}: depth_profile: "
            f"{len(cfg.forcing.depth_profile)} weights for nz={grid.nz}"
        )
    for name in ("sigma_u_levels", "sigma_v_levels", "sigma_theta_levels"):
        levels = getattr(cfg.assim, name)
        if levels and len(levels) != grid.nz:
            raise ConfigException(f"{_where(name, lines)}: {name}: {len(levels)} values for nz={grid.nz}")

    K_min = minimal_K(grid.a, phys.nu, phys.gamma, phys.beta)
    if cfg.norm.K < K_min:
        LOGGER.warning(
            f"CONFIG | K={cfg.norm.K} is below 2*max(4a^2/nu^2, 2*gamma*beta)={K_min}; "
            f"the energy check will refuse to run"
        )


def parse_config(text):
    """
    Parses configuration text into a RunConfig. Keys may also appear before
    any section header, in which case they are matched to their section by
    name. Raises ConfigException naming the offending key and line.
    """
    values, lines = _collect(text)
    sections = {name: _clean_section(name, values[name], lines) for name in FORMS}
    built = {name: _build(name, sections[name], lines) for name in FORMS if name != "norm"}
    norm = sections["norm"]
    if norm["K"] is None:
        phys, grid = built["physics"], built["grid"]
        norm = dict(norm, K=minimal_K(grid.a, phys.nu, phys.gamma, phys.beta))
    built["norm"] = _build("norm", norm, lines)

    cfg = RunConfig(**built)
    _cross_check(cfg, lines)
    LOGGER.info(f"RESOLVED CONFIG | {cfg.digest()[:12]}\n{emit_config(cfg)}")
    return cfg


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def emit_config(cfg):
    """Renders every key of a RunConfig; parse_config(emit_config(cfg)) == cfg."""
    out = []
    for name in FORMS:
        section = getattr(cfg, name)
        out.append(f"[{name}]")
        for key in FORMS[name].base_fields:
            out.append(f"{key} = {_format(getattr(section, key))}")
        out.append("")
    return "\n".join(out)


def read_config(path):
    try:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    except FileNotFoundError:
        raise ConfigException(f"missing input file {path}")
    except UnicodeDecodeError as exc:
        raise ConfigException(f"{path} is not UTF-8 text ({exc})")
    return parse_config(text)
