# Python translation of COBOL program NC101
import sys

for line in sys.stdin:
    parts = line.split()
    if len(parts) < 2:
        continue
    a, b = int(parts[0]), int(parts[1])
    total = (a + b) % 1000000
    print(f"SUM={total:06d}")
