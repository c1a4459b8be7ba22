# Python translation of COBOL program NC102
import sys
from decimal import ROUND_HALF_UP, Decimal

for line in sys.stdin:
    parts = line.split()
    if len(parts) < 2:
        continue
    principal, rate = Decimal(parts[0]), Decimal(parts[1])
    interest = (principal * rate / 100).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    print(f"INTEREST: {interest}")
