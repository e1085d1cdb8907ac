"""Scenario configuration: numerology, frame and bandwidth-part arithmetic.

A scenario is an immutable bundle of network, PHY, timing and traffic
constants parsed from an INI-style file.  All downstream modules take a
``Scenario`` instead of loose parameters.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields as dc_fields

__all__ = [
    "Scenario",
    "NumerologyParams",
    "BwpLayout",
    "ScenarioError",
    "numerology_params",
    "bwp_split",
    "load_scenario",
    "serialize_scenario",
    "default_scenario",
]


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario configuration."""


@dataclass(frozen=True)
class NumerologyParams:
    """Subcarrier-spacing dependent constants for one numerology index."""

    index: int
    scs: float          # subcarrier spacing, Hz
    rb_bandwidth: float  # Hz per resource block (12 subcarriers)
    tti: float          # mini-slot duration, s
    ttis_per_frame: int


def numerology_params(gamma: int, frame_len: float) -> NumerologyParams:
    """Constants for numerology ``gamma`` with a frame of ``frame_len`` seconds.

    SCS is 15 * 2**gamma kHz, a resource block spans 12 subcarriers and a
    mini-slot (7 OFDM symbols) lasts 1 / 2**(gamma+1) ms.  The frame length
    must hold an integer number of mini-slots.
    """
    if gamma not in (0, 1, 2, 3):
        raise ScenarioError(f"unsupported numerology index {gamma}")
    if frame_len <= 0:
        raise ScenarioError("frame_len must be positive")
    scs = 15e3 * 2 ** gamma
    rb_bw = 12.0 * scs
    tti = 1e-3 / 2 ** (gamma + 1)
    s_float = frame_len / tti
    s = round(s_float)
    if s < 1 or abs(s_float - s) > 1e-6:
        raise ScenarioError(
            f"frame_len {frame_len} is not an integer number of TTIs "
            f"for numerology {gamma} (got {s_float})"
        )
    return NumerologyParams(index=gamma, scs=scs, rb_bandwidth=rb_bw,
                            tti=tti, ttis_per_frame=s)


@dataclass(frozen=True)
class BwpLayout:
    """Per-frame split of the carrier into low-latency and broadband parts."""

    b_ur: float   # Hz for the low-latency slice
    b_em: float   # Hz for the broadband slice
    o_ur: int     # sub-band count in the low-latency slice
    o_em: int     # sub-band count in the broadband slice
    phi: float    # split fraction actually applied


def bwp_split(bandwidth: float, guard_band: float, phi: float,
              num_em: NumerologyParams, num_ur: NumerologyParams) -> BwpLayout:
    """Split ``bandwidth`` between the two slices at fraction ``phi``.

    The low-latency slice gets phi*B; the broadband slice gets what remains
    after the guard band, clamped at zero.  Sub-band counts are floors of
    slice bandwidth over the slice's RB bandwidth.
    """
    if not 0.0 <= phi <= 1.0:
        raise ScenarioError(f"phi must lie in [0, 1], got {phi}")
    b_ur = phi * bandwidth
    b_em = max((1.0 - phi) * bandwidth - guard_band, 0.0)
    # tiny relative slack so exact multiples survive float rounding
    o_ur = int(math.floor(b_ur / num_ur.rb_bandwidth + 1e-9))
    o_em = int(math.floor(b_em / num_em.rb_bandwidth + 1e-9))
    return BwpLayout(b_ur=b_ur, b_em=b_em, o_ur=o_ur, o_em=o_em, phi=phi)


@dataclass(frozen=True)
class Scenario:
    # network
    num_rus: int = 4
    num_dus: int = 2
    num_ues: int = 24
    antennas: int = 4
    ru_bandwidth: float = 3e6
    guard_band: float = 180e3
    fh_capacity: float = 100e6      # bit/s per RU
    mh_capacity: float = 1e9        # bit/s
    cpu_cu: float = 1e9             # cycles/s
    cpu_du: float = 1e9             # cycles/s
    # phy
    p_max: float = 1.0              # W per RU
    noise: float = 1e-13            # W
    snr_floor: float = 1.0          # linear
    error_prob: float = 1e-5
    dispersion: float = 1.0
    rician_k: float = 10.0          # linear Rician factor
    pathloss_exp: float = 3.0
    gamma_em: int = 1
    gamma_ur: int = 2
    # timing
    frame_len: float = 10e-3
    latency_budget: float = 1e-3    # uRLLC deadline
    ru_proc_delay: float = 2 * (1e-3 / 8) / 7   # 2 OFDM symbols at gamma=2
    lat_th_em: float = 10e-3
    lat_th_ur: float = 1e-3
    # traffic
    embb_rate: float = 1e6          # bit/s constant bitrate per UE
    urllc_rate: float = 10.0        # pkt/s Poisson per UE
    pkt_size_em: int = 1500         # bytes
    pkt_size_ur: int = 125          # bytes
    packet_bits: float = 1e4        # bits, transport packet for latency model
    cycles_per_packet: float = 1e4
    qmax: float = 1e6               # bytes per RU per service
    omega_max: float = 1e4          # pkt/s cap
    embb_sin_amplitude: float = 0.0
    embb_sin_period: float = 200.0  # frames
    ue_speed: float = 3.0           # m/s
    area_side: float = 663.0        # m
    # model / objective
    lam: float = 1.0
    r_max: float = 24e6             # bit/s normalizer
    rate_threshold: float = 0.5e6   # bit/s eMBB QoS floor
    eps1: float = 0.9
    eps2: float = 0.99
    bw_threshold: float = 0.5e6     # bit/s service classifier split
    lat_threshold: float = 10e-3    # s service classifier split
    seed: int = 0
    # derived
    numerologies: tuple[NumerologyParams, ...] = field(default=())

    def __post_init__(self):
        if not self.numerologies:
            object.__setattr__(self, "numerologies", (
                numerology_params(self.gamma_em, self.frame_len),
                numerology_params(self.gamma_ur, self.frame_len),
            ))
        self._validate()

    def _validate(self):
        checks = [
            ("num_rus", self.num_rus >= 1),
            ("num_dus", self.num_dus >= 1),
            ("num_ues", self.num_ues >= 1),
            ("antennas", self.antennas >= 1),
            ("ru_bandwidth", self.ru_bandwidth > self.guard_band),
            ("guard_band", self.guard_band >= 0),
            ("frame_len", self.frame_len > 0),
            ("lambda", self.lam >= 0),
            ("eps1", 0 < self.eps1 < 1),
            ("eps2", 0 < self.eps2 < 1),
            ("error_prob", 0 < self.error_prob < 0.5),
            ("snr_floor", self.snr_floor >= 0),
            ("fh_capacity", self.fh_capacity > 0),
            ("mh_capacity", self.mh_capacity > 0),
            ("cpu_cu", self.cpu_cu > 0),
            ("cpu_du", self.cpu_du > 0),
            ("p_max", self.p_max > 0),
            ("noise", self.noise > 0),
            ("qmax", self.qmax > 0),
            ("r_max", self.r_max > 0),
            ("latency_budget", self.latency_budget > 0),
            ("dispersion", self.dispersion > 0),
        ]
        for key, ok in checks:
            if not ok:
                raise ScenarioError(f"invalid scenario value for '{key}'")

    @property
    def num_em(self) -> NumerologyParams:
        return self.numerologies[0]

    @property
    def num_ur(self) -> NumerologyParams:
        return self.numerologies[1]

    @property
    def phi_max(self) -> float:
        """Largest split that still leaves one broadband RB plus guard band."""
        return max(0.0, 1.0 - (self.guard_band + self.num_em.rb_bandwidth)
                   / self.ru_bandwidth)

    def layout(self, phi: float) -> BwpLayout:
        return bwp_split(self.ru_bandwidth, self.guard_band, phi,
                         self.num_em, self.num_ur)


# config key -> (dataclass field, parser)
_SCHEMA = {
    "network": {
        "rus": ("num_rus", int),
        "dus": ("num_dus", int),
        "ues": ("num_ues", int),
        "antennas": ("antennas", int),
        "ru_bandwidth_hz": ("ru_bandwidth", float),
        "guard_band_hz": ("guard_band", float),
        "fh_capacity_bps": ("fh_capacity", float),
        "mh_capacity_bps": ("mh_capacity", float),
        "cpu_cu_cps": ("cpu_cu", float),
        "cpu_du_cps": ("cpu_du", float),
    },
    "phy": {
        "p_max_w": ("p_max", float),
        "noise_w": ("noise", float),
        "snr_floor": ("snr_floor", float),
        "error_prob": ("error_prob", float),
        "dispersion": ("dispersion", float),
        "rician_k": ("rician_k", float),
        "pathloss_exp": ("pathloss_exp", float),
        "numerology_em": ("gamma_em", int),
        "numerology_ur": ("gamma_ur", int),
    },
    "timing": {
        "frame_len_s": ("frame_len", float),
        "latency_budget_s": ("latency_budget", float),
        "ru_proc_delay_s": ("ru_proc_delay", float),
        "lat_th_em_s": ("lat_th_em", float),
        "lat_th_ur_s": ("lat_th_ur", float),
    },
    "traffic": {
        "embb_rate_bps": ("embb_rate", float),
        "urllc_rate_pps": ("urllc_rate", float),
        "pkt_size_em_bytes": ("pkt_size_em", int),
        "pkt_size_ur_bytes": ("pkt_size_ur", int),
        "packet_bits": ("packet_bits", float),
        "cycles_per_packet": ("cycles_per_packet", float),
        "qmax_bytes": ("qmax", float),
        "omega_max_pps": ("omega_max", float),
        "embb_sin_amplitude": ("embb_sin_amplitude", float),
        "embb_sin_period_frames": ("embb_sin_period", float),
        "ue_speed_mps": ("ue_speed", float),
        "area_side_m": ("area_side", float),
    },
    "model": {
        "lambda": ("lam", float),
        "r_max_bps": ("r_max", float),
        "rate_threshold_bps": ("rate_threshold", float),
        "eps1": ("eps1", float),
        "eps2": ("eps2", float),
        "bw_threshold_bps": ("bw_threshold", float),
        "lat_threshold_s": ("lat_threshold", float),
        "seed": ("seed", int),
    },
}

_FIELD_TO_KEY = {fld: (section, key)
                 for section, keys in _SCHEMA.items()
                 for key, (fld, _) in keys.items()}


def load_scenario(config_text: str) -> Scenario:
    """Parse INI-style scenario text into a validated ``Scenario``.

    Unknown sections or keys are rejected; omitted keys take the documented
    defaults.  ``ru_proc_delay_s`` defaults to two OFDM symbols of the
    low-latency numerology when not given.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(config_text)
    except configparser.Error as exc:
        raise ScenarioError(f"scenario parse error: {exc}") from exc

    kwargs = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ScenarioError(f"unknown scenario section [{section}]")
        known = _SCHEMA[section]
        for key, raw in parser.items(section):
            if key not in known:
                raise ScenarioError(f"unknown key '{key}' in [{section}]")
            fld, conv = known[key]
            try:
                kwargs[fld] = conv(raw)
            except ValueError as exc:
                raise ScenarioError(
                    f"bad value for '{key}' in [{section}]: {raw!r}") from exc

    if "ru_proc_delay" not in kwargs:
        gamma_ur = kwargs.get("gamma_ur", 2)
        tti_ur = 1e-3 / 2 ** (gamma_ur + 1)
        kwargs["ru_proc_delay"] = 2 * tti_ur / 7
    try:
        return Scenario(**kwargs)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def serialize_scenario(sc: Scenario) -> str:
    """Render a scenario back to INI text; inverse of ``load_scenario``."""
    parser = configparser.ConfigParser()
    for section in _SCHEMA:
        parser.add_section(section)
    for fld in dc_fields(Scenario):
        if fld.name not in _FIELD_TO_KEY:
            continue
        section, key = _FIELD_TO_KEY[fld.name]
        value = getattr(sc, fld.name)
        parser.set(section, key, repr(value) if isinstance(value, float)
                   else str(value))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def default_scenario(**overrides) -> Scenario:
    """Scenario with the stock parameter set, optionally overridden."""
    return Scenario(**overrides)
