#!/usr/bin/env python3
"""Brute-force golden penalty matrix for the two-note reference score.

Writes tests/data/penalty_golden.csv by applying the band/decay rules
cell by cell, on purpose without importing the package:

  * a note's frames are divided equally among its morae,
  * every phoneme entry shares its mora's frame band [b0, b1),
  * both band edges are shifted `shift` frames earlier,
  * a cell is 0 inside the shifted band, otherwise min(1, dist/decay)
    where dist counts frames from the nearest in-band frame (the first
    frame outside either edge has dist 1).

Reference score: 100 bpm at a 5 ms frame shift (120 frames per beat).
Note A, 0.75 beats -> 90 frames, 3 morae with 2/1/2 phonemes;
note B, 0.5 beats -> 60 frames, 1 mora with 1 phoneme.
Decoder reduction r=1, decay=60, shift=15.
"""

import os

DECAY = 60
SHIFT = 15
R = 1

# (start_frame, end_frame, phonemes_in_mora) -- equal division of
# note A's 90 frames into 3 morae, note B's 60 frames into 1.
MORAE = [
    (0, 30, 2),
    (30, 60, 1),
    (60, 90, 2),
    (90, 150, 1),
]
TOTAL_FRAMES = 150


def cell(b0, b1, f):
    s = b0 - SHIFT
    e = b1 - SHIFT
    if s <= f < e:
        return 0.0
    dist = (s - f) if f < s else (f - e + 1)
    return min(1.0, dist / DECAY)


def main():
    rows = []
    for b0, b1, n_phonemes in MORAE:
        for _ in range(n_phonemes):
            t_dec = 0
            row = []
            while R * t_dec < TOTAL_FRAMES:
                row.append(cell(b0, b1, R * t_dec))
                t_dec += 1
            rows.append(row)

    out = os.path.join(os.path.dirname(__file__), os.pardir,
                       "tests", "data", "penalty_golden.csv")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    with open(out, "w") as fh:
        fh.write("\n".join(",".join(format(v, ".17g") for v in row)
                           for row in rows) + "\n")
    print(f"wrote {os.path.normpath(out)}: {len(rows)} x {len(rows[0])}")


if __name__ == "__main__":
    main()
