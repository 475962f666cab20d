"""Named end-to-end run profiles.

``desk`` fits an interactive machine: two hours of training traffic, one
hour of test traffic in six subsets, 60 epochs. ``full`` mirrors the
published experiment scale (16.5 h training, 7.5 h test, 1000 epochs, about
100 attack intervals per subset). Any field can be overridden from a
key/value config file via ``--config``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .attack_injector import AttackPlan, default_plans
from .baselines import AutoencoderTrainConfig, PredictiveTrainConfig
from .errors import ConfigError
from .keyval import load as load_keyval
from .trainer import TrainConfig

HOUR_US = 3_600_000_000


@dataclass(frozen=True)
class Profile:
    name: str
    train_duration_us: int
    test_duration_us: int
    h_scale: int
    epochs: int
    batch_size: int
    seq_len_messages: int
    tbptt_every: int
    lr: float
    validation_fraction: float
    warm_up: int
    intervals_per_subset: int
    attack_min_len_us: int
    attack_max_len_us: int
    attack_min_gap_us: int
    attack_lead_in_us: int
    playback_min_sep_us: int
    pred_epochs: int
    pred_batch_size: int
    pred_seq_len: int
    pred_tbptt_every: int
    ae_updates: int
    ae_batch_size: int
    ae_max_windows: int

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            seq_len_messages=self.seq_len_messages,
            tbptt_every=self.tbptt_every,
            lr=self.lr,
            validation_fraction=self.validation_fraction,
            seed=seed,
        )

    def predictive_config(self, seed: int) -> PredictiveTrainConfig:
        return PredictiveTrainConfig(
            epochs=self.pred_epochs,
            batch_size=self.pred_batch_size,
            seq_len=self.pred_seq_len,
            tbptt_every=self.pred_tbptt_every,
            lr=self.lr,
            seed=seed,
        )

    def autoencoder_config(self, seed: int) -> AutoencoderTrainConfig:
        return AutoencoderTrainConfig(
            updates=self.ae_updates,
            batch_size=self.ae_batch_size,
            lr=self.lr,
            max_windows=self.ae_max_windows,
            seed=seed,
        )

    def attack_plans(self) -> dict[str, AttackPlan]:
        return {
            kind: AttackPlan(
                kind=kind,
                count=self.intervals_per_subset,
                min_len_us=self.attack_min_len_us,
                max_len_us=self.attack_max_len_us,
                min_gap_us=self.attack_min_gap_us,
                lead_in_us=self.attack_lead_in_us,
                playback_min_sep_us=self.playback_min_sep_us,
            )
            for kind in default_plans(self.intervals_per_subset)
        }

    def with_overrides(self, overrides: dict[str, str]) -> "Profile":
        fields = {f.name: f for f in dataclasses.fields(Profile)}
        updates = {}
        for key, value in overrides.items():
            if key not in fields:
                raise ConfigError(f"unknown profile key {key!r}")
            kind = fields[key].type
            if kind == "int":
                updates[key] = int(value)
            elif kind == "float":
                updates[key] = float(value)
            else:
                updates[key] = value
        return dataclasses.replace(self, **updates)


DESK = Profile(
    name="desk",
    train_duration_us=2 * HOUR_US,
    test_duration_us=1 * HOUR_US,
    h_scale=10,
    epochs=60,
    batch_size=25,
    seq_len_messages=2000,
    tbptt_every=250,
    lr=0.01,
    validation_fraction=0.05,
    warm_up=1000,
    intervals_per_subset=10,
    attack_min_len_us=2_000_000,
    attack_max_len_us=4_000_000,
    attack_min_gap_us=1_000_000,
    attack_lead_in_us=80_000_000,
    playback_min_sep_us=60_000_000,
    pred_epochs=30,
    pred_batch_size=10,
    pred_seq_len=400,
    pred_tbptt_every=100,
    ae_updates=3000,
    ae_batch_size=256,
    ae_max_windows=50_000,
)

FULL = Profile(
    name="full",
    train_duration_us=int(16.5 * HOUR_US),
    test_duration_us=int(7.5 * HOUR_US),
    h_scale=10,
    epochs=1000,
    batch_size=25,
    seq_len_messages=5000,
    tbptt_every=250,
    lr=0.01,
    validation_fraction=0.05,
    warm_up=1000,
    intervals_per_subset=100,
    attack_min_len_us=2_000_000,
    attack_max_len_us=4_000_000,
    attack_min_gap_us=1_000_000,
    attack_lead_in_us=80_000_000,
    playback_min_sep_us=60_000_000,
    pred_epochs=100,
    pred_batch_size=25,
    pred_seq_len=1000,
    pred_tbptt_every=250,
    ae_updates=10_000,
    ae_batch_size=256,
    ae_max_windows=200_000,
)

PROFILES = {"desk": DESK, "full": FULL}


def resolve_profile(name: str, config_path: str | None = None) -> Profile:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    profile = PROFILES[name]
    if config_path:
        profile = profile.with_overrides(load_keyval(config_path))
    return profile
