"""Shipped layer presets (text files under presets/)."""

from importlib import resources

from .model import parse_layer


class UnknownPreset(KeyError):
    def __init__(self, name, valid):
        super().__init__(name)
        self.name, self.valid = name, valid

    def __str__(self):
        return f"unknown preset {self.name!r}; valid presets: {', '.join(self.valid)}"


def preset_names():
    files = resources.files(__package__).joinpath("presets").iterdir()
    return sorted(f.name[:-len(".layer")] for f in files if f.name.endswith(".layer"))


def load_preset(name):
    """(ConvLayer, PrecisionTriple) for a shipped preset such as ``resnet50-conv1``."""
    names = preset_names()
    if name not in names:
        raise UnknownPreset(name, names)
    text = resources.files(__package__).joinpath("presets", f"{name}.layer").read_text("utf-8")
    return parse_layer(text)
