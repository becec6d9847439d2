from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, field_validator

from event_detection.exceptions import ModelConfigError


class NetworkConfig(BaseModel):
    """Channel and stride plan of the detector.

    ff_* describe the K_f feed-forward stages (a BN-Conv-ReLU stem followed by
    Squeeze-Excite blocks) and rnn_* the K_r ConvLSTM stages. Every recurrent
    stage feeds the detection heads.
    """

    model_config = ConfigDict(frozen=True, extra='forbid')

    in_channels: int = Field(default=10, ge=1)
    num_classes: int = Field(default=3, ge=1)
    kf: int = Field(default=3, ge=1)
    kr: int = Field(default=5, ge=1)
    ff_channels: tuple[int, ...] = (32, 64, 64)
    ff_kernels: tuple[int, ...] = (7, 3, 3)
    ff_strides: tuple[int, ...] = (2, 2, 2)
    rnn_channels: tuple[int, ...] = (256, 256, 256, 256, 256)
    rnn_strides: tuple[int, ...] = (2, 2, 2, 2, 2)
    rnn_kernel: int = Field(default=3, ge=1)
    se_reduction: int = Field(default=4, ge=1)
    head_channels: int = Field(default=256, ge=1)
    head_kernel: int = Field(default=3, ge=1)
    anchor_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    anchor_min_scale: float = Field(default=0.1, gt=0.0)
    anchor_max_scale: float = Field(default=0.9, gt=0.0)
    pre_pool: bool = True
    second_head: bool = True
    force_zero_state: bool = False
    forget_bias: float = 1.0
    bn_momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    prior_background: float = Field(default=0.99, gt=0.0, lt=1.0)

    @field_validator('ff_channels', 'ff_kernels', 'ff_strides', 'rnn_channels', 'rnn_strides')
    @classmethod
    def positive_entries(cls, value):
        if any(v < 1 for v in value):
            raise ValueError('channels, kernels and strides must be positive')
        return value

    @field_validator('anchor_ratios')
    @classmethod
    def positive_ratios(cls, value):
        if not value or any(r <= 0 for r in value):
            raise ValueError('anchor ratios must be positive')
        return value

    @property
    def anchors_per_cell(self) -> int:
        return 2 * len(self.anchor_ratios)

    def validate_plan(self):
        """Raise ModelConfigError when the per-stage tuples disagree with K_f and K_r."""
        for name, values, expected in (
            ('ff_channels', self.ff_channels, self.kf),
            ('ff_kernels', self.ff_kernels, self.kf),
            ('ff_strides', self.ff_strides, self.kf),
            ('rnn_channels', self.rnn_channels, self.kr),
            ('rnn_strides', self.rnn_strides, self.kr),
        ):
            if len(values) != expected:
                raise ModelConfigError(f'{name} lists {len(values)} stages but the plan needs {expected}.')
        if len(set(self.rnn_channels)) != 1:
            raise ModelConfigError('Shared head convolutions need every recurrent stage to have the same channel count.')
        if self.anchor_max_scale < self.anchor_min_scale:
            raise ModelConfigError('anchor_max_scale must be >= anchor_min_scale.')

    @classmethod
    def toy(cls, channels: int = 16, **overrides) -> 'NetworkConfig':
        """Single feed-forward and single recurrent stage, for smoke tests."""
        values = dict(
            kf=1, kr=1,
            ff_channels=(channels,), ff_kernels=(3,), ff_strides=(2,),
            rnn_channels=(channels,), rnn_strides=(2,),
            head_channels=channels,
        )
        values.update(overrides)
        return cls(**values)

    @classmethod
    def desk(cls, **overrides) -> 'NetworkConfig':
        """Reduced-width plan for CPU training on 256x256 synthetic scenes."""
        values = dict(
            kf=3, kr=3,
            ff_channels=(16, 32, 32), ff_kernels=(7, 3, 3), ff_strides=(2, 2, 2),
            rnn_channels=(48, 48, 48), rnn_strides=(2, 2, 2),
            head_channels=48,
        )
        values.update(overrides)
        return cls(**values)
