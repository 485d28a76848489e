"""Named hyperparameter profiles.

`desk` keeps everything small enough that training and the acceptance suite
run in minutes on a laptop; `paper` is the full-scale configuration.
"""

from dataclasses import dataclass, asdict


@dataclass
class Hyper:
    latent_channels: int = 32      # channels of the discrete latent
    latent_categories: int = 8     # categories per channel
    encoder_hidden: int = 512
    field_hidden: int = 128
    temperature: float = 1.0       # Gumbel-Softmax temperature
    use_codebook: bool = True      # False: latent values taken from the logits themselves
    root_frame_queries: bool = True  # express field queries in the character root frame
    positional_encoding: int = 0   # sinusoidal frequency bands on coordinates, 0 = off

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        return cls(**known)


PROFILES = {
    "desk": Hyper(latent_channels=32, latent_categories=8,
                  encoder_hidden=512, field_hidden=128),
    "paper": Hyper(latent_channels=128, latent_categories=8,
                   encoder_hidden=4096, field_hidden=256),
}


def get_profile(name):
    if name not in PROFILES:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return PROFILES[name]
