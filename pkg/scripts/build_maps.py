"""Regenerate the replica maps shipped in ``src/pibttp/maps``.

Run from the repository root: ``python scripts/build_maps.py``.
"""
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "pibttp" / "maps"


class Canvas:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.cells = [["@"] * width for _ in range(height)]

    def put(self, x, y, ch):
        self.cells[y][x] = ch

    def fill(self, x0, y0, x1, y1, ch):
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                self.put(x, y, ch)

    def render(self):
        rows = ["".join(r) for r in self.cells]
        return f"mapd-map v1\nheight {self.height}\nwidth {self.width}\n" + "\n".join(rows) + "\n"


def main_block(c, x0, y0, width, height):
    """Walkway rectangle with a full parking row above and below."""
    c.fill(x0, y0, x0 + width - 1, y0, "i")
    c.fill(x0, y0 + 1, x0 + width - 1, y0 + height - 2, ".")
    c.fill(x0, y0 + height - 1, x0 + width - 1, y0 + height - 1, "i")


def comb(c, x_conn, y, direction, offsets, ch, spine_len=None, sides=(-1, 1)):
    """Horizontal spine leaving the connecting node at ``x_conn`` with leaves at ``offsets``."""
    spine_len = spine_len or max(offsets)
    for k in range(1, spine_len + 1):
        c.put(x_conn + direction * k, y, ".")
    for k in offsets:
        for s in sides:
            c.put(x_conn + direction * k, y + s, ch)


def env1():
    # two deep trees: 16 pickup dead-ends left, 16 delivery dead-ends right
    c = Canvas(54, 5)
    main_block(c, 17, 0, 20, 5)
    comb(c, 17, 2, -1, range(2, 17, 2), "p")
    comb(c, 36, 2, +1, range(2, 17, 2), "d")
    return c


def env2():
    # one deep pickup tree, one shallow tree with only five delivery nodes
    c = Canvas(43, 5)
    main_block(c, 17, 0, 20, 5)
    comb(c, 17, 2, -1, range(2, 17, 2), "p")
    comb(c, 36, 2, +1, (2, 4), "d", spine_len=5)
    c.put(41, 2, "d")
    return c


def env3():
    # like env1 but six shallow trees, three per side
    c = Canvas(34, 11)
    main_block(c, 7, 0, 20, 11)
    comb(c, 7, 2, -1, (2, 4, 6), "p")
    comb(c, 7, 5, -1, (3, 5), "p", spine_len=6)
    comb(c, 7, 8, -1, (2, 4, 6), "p")
    comb(c, 26, 2, +1, (2, 4, 6), "d")
    comb(c, 26, 5, +1, (3, 5), "d", spine_len=6)
    comb(c, 26, 8, +1, (2, 4, 6), "d")
    return c


def env4():
    # rack trees hanging from a narrow corridor, one upper loading tree
    c = Canvas(24, 19)
    for x in range(7, 18, 2):
        c.put(x, 0, "d")
    c.fill(7, 1, 17, 1, ".")
    c.fill(12, 2, 12, 3, ".")
    c.fill(0, 4, 23, 5, ".")
    c.fill(0, 6, 1, 14, ".")
    c.fill(22, 6, 23, 14, ".")
    for xs in (4, 9, 14, 19):
        c.fill(xs, 6, xs, 13, ".")
        for y in (7, 9, 11, 13):
            c.put(xs - 1, y, "p")
            c.put(xs + 1, y, "p")
    c.fill(0, 15, 23, 17, ".")
    c.fill(2, 15, 21, 15, "i")
    c.fill(0, 18, 23, 18, "i")
    return c


def deadend():
    # small loop with a single dead-end corridor; naive PIBT deadlocks here
    c = Canvas(9, 4)
    c.fill(0, 0, 3, 3, ".")
    c.put(0, 0, "i")
    c.put(1, 0, "i")
    c.put(0, 3, "d")
    c.fill(4, 2, 7, 2, ".")
    c.put(8, 2, "p")
    return c


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, build in [("env1", env1), ("env2", env2), ("env3", env3), ("env4", env4), ("deadend", deadend)]:
        (OUT / f"{name}.map").write_text(build().render())
        print("wrote", name)
