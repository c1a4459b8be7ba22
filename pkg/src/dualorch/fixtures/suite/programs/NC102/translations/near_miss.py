import sys

for line in sys.stdin:
    parts = line.split()
    if len(parts) < 2:
        continue
    principal, rate = float(parts[0]), float(parts[1])
    interest = round(principal * rate / 100, 2)
    print(f"INTEREST: {interest:.2f}")
