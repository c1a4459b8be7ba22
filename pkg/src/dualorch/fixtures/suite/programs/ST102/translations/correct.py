# Python translation of COBOL program ST102
import sys

rows = []
for line in sys.stdin:
    parts = line.split()
    if len(parts) < 2:
        continue
    rows.append((parts[0][:10], int(parts[1])))
rows.sort(key=lambda r: (-r[1], r[0]))
for rank, (name, score) in enumerate(rows, 1):
    print(f"{rank:02d} {name:<10} {score:04d}")
