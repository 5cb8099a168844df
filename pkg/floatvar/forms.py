# floatvar/forms.py
import math

from django import forms
from django.core.exceptions import ValidationError

CHECKS = ("wbound", "energy", "nlbound", "picard")


def parse_list(value, name):
    """Comma-separated floats; an empty value is the empty tuple."""
    value = (value or "").strip()
    if not value:
        return ()
    try:
        return tuple(float(item) for item in value.split(","))
    except ValueError:
        raise ValidationError(f"{name} must be a comma-separated list of numbers, got '{value}'")


class SectionForm(forms.Form):
    """Base for the run configuration sections; every value arrives as text."""
    section = None

    @classmethod
    def defaults(cls):
        return {
            name: "" if field.initial is None else field.initial
            for name, field in cls.base_fields.items()
        }

    def positive(self, name):
        value = self.cleaned_data[name]
        if not value > 0:
            raise ValidationError(f"{name} must be positive, got {value}")
        return value

    def boolean(self, name):
        raw = str(self.data.get(name, "")).strip().lower()
        if raw not in ("true", "false", "1", "0"):
            raise ValidationError(f"{name} must be true or false, got '{self.data.get(name)}'")
        return raw in ("true", "1")

    def nonnegative(self, name):
        value = self.cleaned_data[name]
        if value < 0:
            raise ValidationError(f"{name} must be nonnegative, got {value}")
        return value


class GridForm(SectionForm):
    section = "grid"

    nx = forms.IntegerField(initial=32)
    ny = forms.IntegerField(initial=32)
    nz = forms.IntegerField(initial=9)
    a = forms.FloatField(initial=1.0)

    def clean_nx(self):
        value = self.cleaned_data["nx"]
        if value < 4:
            raise ValidationError(f"nx must be at least 4, got {value}")
        return value

    def clean_ny(self):
        value = self.cleaned_data["ny"]
        if value < 4:
            raise ValidationError(f"ny must be at least 4, got {value}")
        return value

    def clean_nz(self):
        value = self.cleaned_data["nz"]
        if value < 3:
            raise ValidationError(f"nz must be at least 3, got {value}")
        return value

    def clean_a(self):
        return self.positive("a")


class PhysicsForm(SectionForm):
    section = "physics"

    alpha = forms.FloatField(initial=0.5)
    beta = forms.FloatField(initial=0.5)
    gamma = forms.FloatField(initial=0.5)
    nu = forms.FloatField(initial=0.02)

    def clean_alpha(self):
        return self.nonnegative("alpha")

    def clean_beta(self):
        return self.nonnegative("beta")

    def clean_gamma(self):
        return self.nonnegative("gamma")

    def clean_nu(self):
        return self.positive("nu")


class ModelForm(SectionForm):
    section = "model"

    dt = forms.FloatField(initial=0.05)
    linear = forms.BooleanField(required=False, initial="false")

    def clean_dt(self):
        return self.positive("dt")

    def clean_linear(self):
        return self.boolean("linear")


class ForcingForm(SectionForm):
    section = "forcing"

    tau0 = forms.FloatField(initial=0.1)
    depth_profile = forms.CharField(required=False, strip=True)

    def clean_depth_profile(self):
        profile = parse_list(self.cleaned_data["depth_profile"], "depth_profile")
        if any(g < 0 for g in profile):
            raise ValidationError("depth_profile weights must be nonnegative")
        if profile and not math.isclose(sum(profile), 1.0, rel_tol=1e-9):
            raise ValidationError(f"depth_profile weights must sum to 1, got {sum(profile):g}")
        return profile


class NormForm(SectionForm):
    section = "norm"

    m = forms.IntegerField(initial=2)
    # empty means the smallest K allowed by the physics
    K = forms.FloatField(required=False)

    def clean_m(self):
        value = self.cleaned_data["m"]
        if value < 2:
            raise ValidationError(f"m must be at least 2, got {value}")
        return value

    def clean_K(self):
        value = self.cleaned_data["K"]
        if value is not None and not value > 0:
            raise ValidationError(f"K must be positive, got {value}")
        return value


class TwinForm(SectionForm):
    section = "twin"

    spinup_steps = forms.IntegerField(initial=400)
    window_steps = forms.IntegerField(initial=200)
    floats = forms.IntegerField(initial=50)
    obs_times = forms.IntegerField(initial=10)
    noise_sd = forms.FloatField(initial=1e-3)
    background_scale = forms.FloatField(initial=0.0)
    seed = forms.IntegerField(initial=0)
    z0 = forms.FloatField(initial=0.5)
    windows = forms.IntegerField(initial=1)

    def clean_spinup_steps(self):
        return self.nonnegative("spinup_steps")

    def clean_window_steps(self):
        return self.positive("window_steps")

    def clean_floats(self):
        return self.positive("floats")

    def clean_obs_times(self):
        return self.positive("obs_times")

    def clean_noise_sd(self):
        return self.nonnegative("noise_sd")

    def clean_background_scale(self):
        value = self.cleaned_data["background_scale"]
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"background_scale must lie in [0, 1], got {value}")
        return value

    def clean_seed(self):
        value = self.cleaned_data["seed"]
        if not 0 <= value < 2 ** 64:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {value}")
        return value

    def clean_z0(self):
        return self.positive("z0")

    def clean_windows(self):
        return self.positive("windows")

    def clean(self):
        cleaned_data = super().clean()
        obs_times = cleaned_data.get("obs_times")
        window_steps = cleaned_data.get("window_steps")
        if obs_times and window_steps and obs_times > window_steps:
            self.add_error("obs_times", f"{obs_times} observation times do not fit a window of {window_steps} steps")
        return cleaned_data


class AssimForm(SectionForm):
    section = "assim"

    omega = forms.FloatField(initial=1.0)
    sigma_u = forms.FloatField(initial=1.0)
    sigma_v = forms.FloatField(initial=1.0)
    sigma_theta = forms.FloatField(initial=1.0)
    sigma_u_levels = forms.CharField(required=False, strip=True)
    sigma_v_levels = forms.CharField(required=False, strip=True)
    sigma_theta_levels = forms.CharField(required=False, strip=True)
    freeze_theta = forms.BooleanField(required=False, initial="true")
    jb_norm = forms.ChoiceField(choices=(("b", "B-norm"), ("u", "U norm")), initial="b")
    outer_loops = forms.IntegerField(initial=3)
    inner_iters = forms.IntegerField(initial=10)
    tol = forms.FloatField(initial=1e-3)

    def clean_omega(self):
        return self.nonnegative("omega")

    def clean_sigma_u(self):
        return self.positive("sigma_u")

    def clean_sigma_v(self):
        return self.positive("sigma_v")

    def clean_sigma_theta(self):
        return self.positive("sigma_theta")

    def _levels(self, name):
        levels = parse_list(self.cleaned_data[name], name)
        if any(s <= 0 for s in levels):
            raise ValidationError(f"{name} must be positive")
        return levels

    def clean_sigma_u_levels(self):
        return self._levels("sigma_u_levels")

    def clean_sigma_v_levels(self):
        return self._levels("sigma_v_levels")

    def clean_sigma_theta_levels(self):
        return self._levels("sigma_theta_levels")

    def clean_freeze_theta(self):
        return self.boolean("freeze_theta")

    def clean_outer_loops(self):
        return self.nonnegative("outer_loops")

    def clean_inner_iters(self):
        return self.positive("inner_iters")

    def clean_tol(self):
        return self.positive("tol")


class VerifyForm(SectionForm):
    section = "verify"

    checks = forms.CharField(initial=",".join(CHECKS))
    verify_dt = forms.FloatField(initial=0.01)
    wbound_samples = forms.IntegerField(initial=100)
    wbound_steps = forms.IntegerField(initial=50)
    energy_samples = forms.IntegerField(initial=10)
    energy_T = forms.FloatField(initial=0.5)
    nlbound_samples = forms.IntegerField(initial=5)
    picard_T = forms.FloatField(initial=0.2)
    picard_max_n = forms.IntegerField(initial=30)
    picard_tol = forms.FloatField(initial=1e-10)
    picard_amplitude = forms.FloatField(initial=0.05)
    gradcheck_directions = forms.IntegerField(initial=10)
    gradcheck_eps = forms.FloatField(initial=1e-5)
    dot_tests = forms.IntegerField(initial=20)

    def clean_checks(self):
        names = tuple(name.strip() for name in self.cleaned_data["checks"].split(",") if name.strip())
        unknown = [name for name in names if name not in CHECKS]
        if unknown:
            raise ValidationError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
        return names

    def clean_verify_dt(self):
        return self.positive("verify_dt")

    def clean_wbound_samples(self):
        return self.nonnegative("wbound_samples")

    def clean_wbound_steps(self):
        return self.nonnegative("wbound_steps")

    def clean_energy_samples(self):
        return self.nonnegative("energy_samples")

    def clean_energy_T(self):
        return self.positive("energy_T")

    def clean_nlbound_samples(self):
        return self.nonnegative("nlbound_samples")

    def clean_picard_T(self):
        return self.positive("picard_T")

    def clean_picard_max_n(self):
        return self.positive("picard_max_n")

    def clean_picard_tol(self):
        return self.positive("picard_tol")

    def clean_picard_amplitude(self):
        return self.nonnegative("picard_amplitude")

    def clean_gradcheck_directions(self):
        return self.positive("gradcheck_directions")

    def clean_gradcheck_eps(self):
        return self.positive("gradcheck_eps")

    def clean_dot_tests(self):
        return self.positive("dot_tests")


class PathsForm(SectionForm):
    """Input locations; snapshot inputs are prefixes of the per-component files."""
    section = "paths"

    initial_state = forms.CharField(required=False, strip=True)
    truth = forms.CharField(required=False, strip=True)
    background = forms.CharField(required=False, strip=True)
    analysis = forms.CharField(required=False, strip=True)
    obs = forms.CharField(required=False, strip=True)
    floats_file = forms.CharField(required=False, strip=True)


class OutputForm(SectionForm):
    section = "output"

    interval = forms.IntegerField(initial=0)

    def clean_interval(self):
        return self.nonnegative("interval")


SECTION_FORMS = (
    GridForm,
    PhysicsForm,
    ModelForm,
    ForcingForm,
    NormForm,
    TwinForm,
    AssimForm,
    VerifyForm,
    PathsForm,
    OutputForm,
)
