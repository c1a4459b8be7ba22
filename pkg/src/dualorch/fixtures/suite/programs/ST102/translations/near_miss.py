import sys

rows = []
for line in sys.stdin:
    parts = line.split()
    if len(parts) < 2:
        continue
    rows.append((parts[0][:10], parts[1]))
rows.sort(key=lambda r: r[0])
rows.sort(key=lambda r: r[1], reverse=True)
for rank, (name, score) in enumerate(rows, 1):
    print(f"{rank:02d} {name:<10} {int(score):04d}")
