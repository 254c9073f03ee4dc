"""
One-time token indexes and the cyclic window
============================================

A guarded contract remembers which one-time indexes it has already seen
with a small bitmap that slides forward as larger indexes arrive.
"""

from smacs.bitmap import bits_to_kb, new_bitmap, required_bits

# an 8-cell window starts at index 0
bm = new_bitmap(8)
print("fresh         ", bm.window())

# four indexes inside the window are accepted and marked
for i in (0, 1, 4, 5):
    bm.check_and_mark(i)
print("after 0,1,4,5 ", bm.window(), sorted(bm.used()))

# index 9 lies past the end: the window slides by two cells
bm.check_and_mark(9)
print("after 9       ", bm.window(), sorted(bm.used()))

# index 13 slides it again, pushing 2..5 out
bm.check_and_mark(13)
print("after 13      ", bm.window(), sorted(bm.used()))

# used indexes inside the window are replays and are refused
for i in (13, 9):
    print(f"replay of {i:>2} accepted? {bm.check_and_mark(i)}")

# 2 and 3 were never used but fell behind the window: a token miss,
# so their holders must ask the TS for a new token
for i in (2, 3):
    print(f"late index {i} accepted? {bm.check_and_mark(i)}")

# an unused index still inside the window is fine
print("index 7 accepted?", bm.check_and_mark(7))

# sizing: one bit per token that can be issued within a token lifetime
for rate in (35, 0.35):
    bits = required_bits(3600, rate)
    print(f"1 h lifetime at {rate} tx/s -> {bits} bits ({bits_to_kb(bits):.2f} KB)")
