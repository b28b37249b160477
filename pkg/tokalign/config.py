"""
Run configuration.

A `RunConfig` gathers every knob of a training or evaluation run in named
sections and serializes to canonical JSON (sorted keys, two-space indent,
trailing newline), so ``from_text(c.to_text()).to_text() == c.to_text()``.
"""

import json
from io import StringIO

from tokalign.align_exception import ConfigurationError
from tokalign.common import (
    CASCADE_MODES,
    DEFAULT_TARGET_POS,
    DIRECTIONS,
    DTYPES,
    SPECIAL_TOKENS,
    UNIVERSAL_POS,
)
from tokalign.encoders import EncoderConfig
from tokalign.evaluation import InferenceWeights, StageMask
from tokalign.losses import LossConfig


class _Section:
    """
    Flat group of named settings; subclasses define ``DEFAULTS``.
    """

    DEFAULTS = {}

    def __init__(self, **kwargs):
        unknown = sorted(set(kwargs) - set(self.DEFAULTS))
        if unknown:
            raise ConfigurationError(
                "unknown {} keys: {}".format(type(self).__name__, unknown)
            )
        for name, default in self.DEFAULTS.items():
            value = kwargs.get(name, default)
            if isinstance(value, (list, tuple)):
                value = list(value)
            setattr(self, name, value)

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        cls.FIELDS = tuple(cls.DEFAULTS)

    def as_dict(self):
        return {name: getattr(self, name) for name in self.DEFAULTS}

    def __eq__(self, other):
        return type(self) is type(other) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return "{}({})".format(
            type(self).__name__,
            ", ".join(
                "{}={!r}".format(k, v) for k, v in self.as_dict().items()
            ),
        )


class OptimizerConfig(_Section):
    DEFAULTS = {
        "learning_rate": 1e-3,
        "weight_decay": 0.0,
        "warmup_steps": 100,
        "total_steps": 2000,
        "batch_size": 16,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
    }


class EvalConfig(_Section):
    DEFAULTS = {
        "w_sentence": 1.0,
        "w_token": 1.0,
        "w_fusion": 1.0,
        "stages": "all",
        "recalls": [1, 5, 10],
        "sweep": [0.0, 0.1, 0.5],
        "direction": "t2v",
        "held_out": 100,
    }

    @property
    def weights(self):
        return InferenceWeights(self.w_sentence, self.w_token, self.w_fusion)

    @property
    def stage_mask(self):
        return StageMask.parse(self.stages)


class PathConfig(_Section):
    # Empty string means "not set".
    DEFAULTS = {
        "corpus": "",
        "eval_corpus": "",
        "checkpoint": "",
        "report": "",
        "loss_log": "",
    }


def _as_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: {!r}".format(text))


def _cast(text, current):
    """
    Cast override ``text`` to the type of the ``current`` value.
    """
    if isinstance(current, bool):
        return _as_bool(text)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, list):
        text = text.strip()
        if text.startswith("["):
            items = json.loads(text)
        else:
            items = [t.strip() for t in text.split(",") if t.strip()]
        if current:
            items = [
                _cast(str(item), current[0]) if isinstance(item, str) else item
                for item in items
            ]
        return items
    return text


class RunConfig:
    """
    Complete configuration of a run.

    ``RunConfig()`` is the desk-scale default; `full_scale` returns the
    full-size settings (batch 128, 30k steps) for reference.

    Sections: ``encoder`` (`.EncoderConfig`), ``loss`` (`.LossConfig`),
    ``optimizer``, ``eval`` and ``paths``; plus top-level ``cascade_mode``,
    ``seed``, ``dtype`` and ``target_pos``.
    """

    SECTIONS = ("encoder", "loss", "optimizer", "eval", "paths")
    SCALARS = ("cascade_mode", "seed", "dtype", "target_pos")

    def __init__(
        self,
        encoder=None,
        loss=None,
        optimizer=None,
        eval=None,
        paths=None,
        cascade_mode="cascade",
        seed=0,
        dtype="float64",
        target_pos=DEFAULT_TARGET_POS,
    ):
        self.encoder = encoder or EncoderConfig()
        self.loss = loss or LossConfig()
        self.optimizer = optimizer or OptimizerConfig()
        self.eval = eval or EvalConfig()
        self.paths = paths or PathConfig()
        self.cascade_mode = cascade_mode
        self.seed = seed
        self.dtype = dtype
        self.target_pos = sorted(target_pos)

    @classmethod
    def full_scale(cls):
        return cls(
            encoder=EncoderConfig.full_scale(),
            loss=LossConfig.full_scale(),
            optimizer=OptimizerConfig(
                learning_rate=1e-4,
                weight_decay=1e-5,
                warmup_steps=5000,
                total_steps=30000,
                batch_size=128,
            ),
        )

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise ConfigurationError("config must be a JSON object")
        unknown = sorted(set(obj) - set(cls.SECTIONS) - set(cls.SCALARS))
        if unknown:
            raise ConfigurationError("unknown config keys: {}".format(unknown))
        kinds = {
            "encoder": EncoderConfig,
            "loss": LossConfig,
            "optimizer": OptimizerConfig,
            "eval": EvalConfig,
            "paths": PathConfig,
        }
        kwargs = {}
        for name, kind in kinds.items():
            section = obj.get(name, {})
            if not isinstance(section, dict):
                raise ConfigurationError("{} must be an object".format(name))
            try:
                kwargs[name] = kind(**section)
            except TypeError as e:
                raise ConfigurationError("bad {} section: {}".format(name, e))
        for name in cls.SCALARS:
            if name in obj:
                kwargs[name] = obj[name]
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text):
        """
        Create a new `RunConfig` from JSON ``text``.
        """
        return cls.from_file(StringIO(text))

    @classmethod
    def from_path(cls, path):
        with open(path) as flo:
            return cls.from_file(flo)

    @classmethod
    def from_file(cls, flo):
        try:
            obj = json.load(flo)
        except ValueError as e:
            raise ConfigurationError("config is not valid JSON ({})".format(e))
        return cls.from_dict(obj)

    def as_dict(self):
        out = {name: getattr(self, name).as_dict() for name in self.SECTIONS}
        for name in self.SCALARS:
            out[name] = getattr(self, name)
        return out

    def to_text(self):
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_text())

    def copy(self):
        return RunConfig.from_dict(json.loads(self.to_text()))

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return False
        return self.to_text() == other.to_text()

    def __repr__(self):
        return "RunConfig(seed={}, cascade_mode={!r})".format(
            self.seed, self.cascade_mode
        )

    def apply_overrides(self, overrides):
        """
        Apply ``"section.key=value"`` (or ``"key=value"`` for top-level
        settings) strings in place, casting each value to the type of the
        setting it replaces.

        :raises: `.ConfigurationError` -- on unknown keys or uncastable values
        """
        for item in overrides:
            key, sep, text = item.partition("=")
            if not sep:
                raise ConfigurationError(
                    "override {!r} is not key=value".format(item)
                )
            section_name, dot, name = key.strip().rpartition(".")
            if dot:
                if section_name not in self.SECTIONS:
                    raise ConfigurationError(
                        "unknown config section {!r}".format(section_name)
                    )
                target = getattr(self, section_name)
                known = target.FIELDS
            else:
                target, known = self, self.SCALARS
            if name not in known:
                raise ConfigurationError("unknown config key {!r}".format(key))
            try:
                value = _cast(text, getattr(target, name))
            except ValueError as e:
                raise ConfigurationError("bad value for {}: {}".format(key, e))
            if name == "target_pos":
                value = sorted(value)
            setattr(target, name, value)
        return self

    def resolved_encoder(self, vocab_size=None):
        """
        The encoder config with ``vocab_size`` filled in when it was left 0.
        """
        values = self.encoder.as_dict()
        if not values["vocab_size"]:
            values["vocab_size"] = vocab_size or len(SPECIAL_TOKENS)
        return EncoderConfig(**values)

    def validate(self):
        """
        Check every section and cross-section invariant.

        :raises: `.ConfigurationError`
        """
        self.resolved_encoder().validate()
        opt = self.optimizer
        if opt.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if opt.total_steps < 1:
            raise ConfigurationError("total_steps must be >= 1")
        if opt.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if opt.warmup_steps < 0 or opt.weight_decay < 0 or opt.eps <= 0:
            raise ConfigurationError(
                "warmup_steps and weight_decay must be >= 0, eps positive"
            )
        if not (0 <= opt.beta1 < 1 and 0 <= opt.beta2 < 1):
            raise ConfigurationError("betas must lie in [0, 1)")
        self.loss.validate(batch_size=opt.batch_size)
        if self.cascade_mode not in CASCADE_MODES:
            raise ConfigurationError(
                "cascade_mode must be one of {}".format(list(CASCADE_MODES))
            )
        if self.dtype not in DTYPES:
            raise ConfigurationError("unknown dtype {!r}".format(self.dtype))
        if not self.target_pos or not set(self.target_pos) <= UNIVERSAL_POS:
            raise ConfigurationError(
                "target_pos must be Universal POS tags, got {}".format(
                    self.target_pos
                )
            )
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError("seed must be a nonnegative integer")
        ev = self.eval
        ev.weights.validate()
        StageMask.parse(ev.stages)
        if ev.direction not in DIRECTIONS:
            raise ConfigurationError(
                "direction must be one of {}".format(list(DIRECTIONS))
            )
        if not ev.recalls or any(n < 1 for n in ev.recalls):
            raise ConfigurationError("recall points must be positive")
        if any(w < 0 for w in ev.sweep):
            raise ConfigurationError("sweep weights must be >= 0")
        if ev.held_out < 0:
            raise ConfigurationError("held_out must be >= 0")
        return self
