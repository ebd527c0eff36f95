"""Observation alphabet and device registry.

The sixteen symbols have fixed integer codes 0..15.  Every symbol belongs to
exactly one device kind, which is what lets an observation vector enforce
"one symbol per device".
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterator, Mapping

from .errors import AlphabetMismatchError, IngestionError

SYMBOL_NAMES = (
    "bd_open", "bd_close",
    "fd_open", "fd_close",
    "sc_off", "sc1", "sc2", "sc3",
    "ox_off", "ox1", "ox2", "ox3",
    "ph2_on", "ph2_off",
    "ph1_in", "ph1_out",
)


@dataclass(frozen=True)
class SymbolAlphabet:
    names: tuple[str, ...]
    tag: str

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate symbol names")
        object.__setattr__(self, "_codes", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def code(self, name: str) -> int:
        try:
            return self._codes[name]
        except KeyError:
            raise AlphabetMismatchError(f"unknown symbol {name!r} for alphabet {self.tag}") from None

    def name(self, code: int) -> str:
        if not 0 <= code < len(self.names):
            raise AlphabetMismatchError(f"symbol code {code} outside alphabet {self.tag}")
        return self.names[code]

    def names_of(self, codes) -> list[str]:
        return [self.name(int(c)) for c in codes]


ALPHABET = SymbolAlphabet(SYMBOL_NAMES, "rpm16-v1")

# device kind -> legal statuses
DEVICE_KINDS: Mapping[str, tuple[str, ...]] = MappingProxyType({
    "bedroom_door": ("bd_open", "bd_close"),
    "fridge_door": ("fd_open", "fd_close"),
    "scale": ("sc_off", "sc1", "sc2", "sc3"),
    "oximeter": ("ox_off", "ox1", "ox2", "ox3"),
    "phone2": ("ph2_on", "ph2_off"),
    "phone1": ("ph1_in", "ph1_out"),
})

HEALTH_KINDS = frozenset({"oximeter", "scale"})
PRESENCE_KIND = "phone1"

SYMBOL_KIND = MappingProxyType(
    {sym: kind for kind, syms in DEVICE_KINDS.items() for sym in syms}
)


class DeviceRegistry:
    """Maps device ids to device kinds (and therefore to legal statuses)."""

    def __init__(self, devices: Mapping[str, str] | None = None):
        if devices is None:
            devices = {kind: kind for kind in DEVICE_KINDS}
        for dev, kind in devices.items():
            if kind not in DEVICE_KINDS:
                raise IngestionError(f"device {dev!r} has unknown kind {kind!r}")
        self._devices = dict(devices)

    def __contains__(self, device_id: str) -> bool:
        return device_id in self._devices

    def __iter__(self):
        return iter(self._devices)

    def items(self):
        return self._devices.items()

    def kind(self, device_id: str) -> str:
        try:
            return self._devices[device_id]
        except KeyError:
            raise IngestionError(f"unregistered device {device_id!r}") from None

    def check_status(self, device_id: str, status: str) -> int:
        """Return the alphabet code for ``status`` if the device may emit it."""
        kind = self.kind(device_id)
        if status not in DEVICE_KINDS[kind]:
            raise IngestionError(
                f"device {device_id!r} ({kind}) cannot report status {status!r}; "
                f"legal: {', '.join(DEVICE_KINDS[kind])}"
            )
        return ALPHABET.code(status)

    def device_for_kind(self, kind: str) -> str:
        for dev, k in self._devices.items():
            if k == kind:
                return dev
        raise IngestionError(f"no registered device of kind {kind!r}")

    def as_dict(self) -> dict[str, str]:
        return dict(self._devices)


DEFAULT_REGISTRY = DeviceRegistry()
