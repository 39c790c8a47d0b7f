"""Run configuration: ``key = value`` files overridden by command-line flags."""

from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .hashnet import HyperParams

# learning rate that trains the synthetic datasets without saturating the
# sigmoid/tanh heads (the loss sums are unnormalised in the batch size)
DESK_LEARNING_RATE = 3e-6


@dataclass
class Config:
    # loss weights and optimiser
    lambda1: float = 1.0
    lambda2: float = 10.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    margin_hinge: float = 0.1
    margin_contrastive: float = 1.0
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0
    # model
    bits: int = 16
    hidden: int = 256
    agg_mode: str = "mean"
    loss_mode: str = "wdht"
    # inputs / outputs
    dataset: str = ""
    features: str = ""
    tags: str = ""
    embeddings: str = ""
    labels: str = ""
    tag_vectors: str = ""
    dropped: str = ""
    checkpoint: str = ""
    codes: str = ""
    db_codes: str = ""
    query_codes: str = ""
    db_labels: str = ""
    query_labels: str = ""
    out_dir: str = "."
    plots: bool = True
    # evaluation
    k_values: str = "100"
    pr: bool = True
    lambda2_grid: str = "0.01,0.1,1,10,100"
    lambda3_grid: str = "0.01,0.1,1,10,100"
    validation_fraction: float = 0.2
    gradcheck_seeds: int = 20
    # synthetic data
    clusters: int = 4
    per_cluster: int = 500
    feature_dim: int = 64
    feature_noise: float = 1.0
    centroid_scale: float = 0.5
    vocab_per_cluster: int = 200
    tags_per_sample: int = 3
    embedding_dim: int = 32
    embedding_noise: float = 0.35
    tag_noise: float = 0.0
    query_fraction: float = 0.1

    def hyper(self):
        names = {f.name for f in fields(HyperParams)}
        return HyperParams(**{k: getattr(self, k) for k in names})

    def ks(self):
        return parse_list(self.k_values, int, "k_values")

    def validate(self):
        if self.agg_mode not in ("mean", "tf", "itf"):
            raise ConfigError(f"agg_mode must be mean, tf or itf, not {self.agg_mode!r}")
        if self.loss_mode not in ("wdht", "binary_tag"):
            raise ConfigError(f"loss_mode must be wdht or binary_tag, not {self.loss_mode!r}")
        if self.bits <= 0 or self.hidden <= 0:
            raise ConfigError("bits and hidden must be positive")
        if any(k < 1 for k in self.ks()):
            raise ConfigError("k_values must be >= 1")
        return self


FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def parse_list(text, typ, key):
    try:
        return [typ(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as a comma-separated list") from None


def coerce(key, value):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown key {key!r}")
    typ = FIELD_TYPES[key]
    if isinstance(typ, str):
        typ = {"int": int, "float": float, "str": str, "bool": bool}[typ]
    if isinstance(value, typ) and not (typ is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigError(f"{key}: invalid {typ.__name__} value {text!r}") from None


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        values[key] = coerce(key, value)
    return values


def write_config_file(path, values):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            coerce(key, value)
            fh.write(f"{key} = {value}\n")


def build_config(path=None, overrides=None):
    cfg = Config()
    updates = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            updates[key] = coerce(key, value)
    return replace(cfg, **updates).validate()
