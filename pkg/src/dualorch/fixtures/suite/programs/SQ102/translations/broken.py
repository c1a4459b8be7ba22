# Python translation of COBOL program SQ102
import sys

prev = None
subtotal = total = 0
for line in sys.stdin:
    parts = line.split()
    if len(parts) < 2:
        continue
    dept, amount = parts[0][:4], int(parts[1])
    if prev is not None and dept != prev:
        print(f"DEPT {prev:<4} {subtotal:09d}")
        subtotal = 0
    prev = dept
    subtotal += amount
    total += amount
if prev is not None:
    print(f"DEPT {prev:<4} {subtotal:09d}")
print(f"GRAND TOTAL {total:09d}")

if True
    pass
