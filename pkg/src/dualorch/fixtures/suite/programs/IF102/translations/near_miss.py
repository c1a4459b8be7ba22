import sys

for line in sys.stdin:
    values = [int(x) for x in line.split()]
    if not values:
        continue
    hi = max(values)
    lo = min(values)
    ord_max = len(values) - values[::-1].index(hi)
    print(f"MAX={hi:03d} MIN={lo:03d} ORD-MAX={ord_max:02d}")
