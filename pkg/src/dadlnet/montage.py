"""Electrode montages: channel-name -> (row, col) grid placements.

The default grids place the motor-region channel subsets on a 6x9 grid laid
out by 10-20 scalp geometry, sized so the four-block spatial convolution
schedule closes to 1x1. Montages are editable text files (see load/save).
"""

from __future__ import annotations

from dataclasses import dataclass, field


class MontageError(ValueError):
    pass


@dataclass
class Montage:
    rows: int
    cols: int
    placements: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        seen = {}
        for name, (r, c) in self.placements.items():
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise MontageError(
                    f"channel {name} at ({r},{c}) outside {self.rows}x{self.cols} grid"
                )
            if (r, c) in seen:
                raise MontageError(
                    f"channels {seen[(r, c)]} and {name} share cell ({r},{c})"
                )
            seen[(r, c)] = name

    @property
    def channel_names(self):
        return list(self.placements)


def save_montage(montage: Montage, path) -> None:
    with open(path, "w") as fh:
        fh.write("# channel row col\n")
        fh.write(f"rows={montage.rows}\n")
        fh.write(f"cols={montage.cols}\n")
        for name, (r, c) in montage.placements.items():
            fh.write(f"{name} {r} {c}\n")


def load_montage(path) -> Montage:
    rows = cols = None
    placements = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("rows="):
                rows = int(line[5:])
            elif line.startswith("cols="):
                cols = int(line[5:])
            else:
                parts = line.split()
                if len(parts) != 3:
                    raise MontageError(f"{path}:{lineno}: expected 'channel row col'")
                placements[parts[0]] = (int(parts[1]), int(parts[2]))
    if rows is None or cols is None:
        raise MontageError(f"{path}: missing rows=/cols= header")
    return Montage(rows, cols, placements)


# 31 motor-region channels used for OpenBMI:
# FC-5/3/1/2/4/6, T-7/8, C-5/3/1/2/4/6, Cz, TP-7/8, CP-5/3/1/z/2/4/6,
# P-7/3/1/z/2/4/8
OPENBMI_CHANNELS = [
    "FC5", "FC3", "FC1", "FC2", "FC4", "FC6",
    "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8",
    "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8",
    "P7", "P3", "P1", "Pz", "P2", "P4", "P8",
]


def openbmi_montage() -> Montage:
    """31 channels on a 6x9 grid: FC / C-upper / C-lower / TP-CP / CP-lower / P."""
    placements = {
        "FC5": (0, 1), "FC3": (0, 2), "FC1": (0, 3),
        "FC2": (0, 5), "FC4": (0, 6), "FC6": (0, 7),
        "T7": (1, 0), "C5": (1, 1), "C3": (1, 2), "C1": (1, 3), "Cz": (1, 4),
        "C2": (2, 5), "C4": (2, 6), "C6": (2, 7), "T8": (2, 8),
        "TP7": (3, 0), "CP5": (3, 1), "CP3": (3, 2), "CP1": (3, 3), "CPz": (3, 4),
        "CP2": (4, 5), "CP4": (4, 6), "CP6": (4, 7), "TP8": (4, 8),
        "P7": (5, 0), "P3": (5, 2), "P1": (5, 3), "Pz": (5, 4),
        "P2": (5, 5), "P4": (5, 6), "P8": (5, 8),
    }
    return Montage(6, 9, placements)


BCIC2A_CHANNELS = [
    "FC3", "FC1", "FCz", "FC2", "FC4",
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP3", "CP1", "CPz", "CP2", "CP4",
    "P1", "Pz", "P2",
]


def bcic2a_montage() -> Montage:
    """20 channels on the same 6x9 grid so one model shape serves both sets."""
    placements = {
        "FC3": (0, 2), "FC1": (0, 3), "FCz": (0, 4), "FC2": (0, 5), "FC4": (0, 6),
        "C5": (1, 1), "C3": (1, 2), "C1": (1, 3), "Cz": (1, 4),
        "C2": (2, 5), "C4": (2, 6), "C6": (2, 7),
        "CP3": (3, 2), "CP1": (3, 3), "CPz": (3, 4),
        "CP2": (4, 5), "CP4": (4, 6),
        "P1": (5, 3), "Pz": (5, 4), "P2": (5, 5),
    }
    return Montage(6, 9, placements)


# channel-selection schemes for the reduced-electrode sweeps
SCHEME_CHANNELS = {
    "s1": ["FC1", "FC2", "FC3", "FC4", "Cz", "C1", "C2", "C3", "C4",
           "CPz", "CP1", "CP2", "CP3", "CP4"],
    "s2": ["Cz", "CPz", "FC1", "FC2", "C1", "C2", "CP1", "CP2"],
    "s3": ["Cz", "CPz", "FC3", "FC4", "C3", "C4", "CP3", "CP4"],
    "s4": ["Cz", "CPz", "FC5", "FC6", "C5", "C6", "CP5", "CP6"],
}


def scheme_montage(scheme: str) -> Montage:
    """Reduced grid for one selection scheme (paired with a reduced conv schedule)."""
    if scheme == "all":
        return openbmi_montage()
    if scheme == "s1":
        # 3x5: rows FC/C/CP, cols x3 x1 z x2 x4 (no FCz in the scheme)
        placements = {}
        for r, band in enumerate(["FC", "C", "CP"]):
            for c, suffix in enumerate(["3", "1", "z", "2", "4"]):
                name = band + suffix
                if name == "FCz":
                    continue
                placements[name] = (r, c)
        return Montage(3, 5, placements)
    if scheme in ("s2", "s3", "s4"):
        chans = SCHEME_CHANNELS[scheme]
        left, right = chans[2], chans[3]  # FC pair
        placements = {
            left: (0, 0), right: (0, 2),
            chans[4]: (1, 0), "Cz": (1, 1), chans[5]: (1, 2),
            chans[6]: (2, 0), "CPz": (2, 1), chans[7]: (2, 2),
        }
        return Montage(3, 3, placements)
    raise MontageError(f"unknown scheme {scheme!r}")
