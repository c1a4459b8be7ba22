import sys


def signed(n):
    return ("-" if n < 0 else "+") + f"{abs(n):04d}"


for line in sys.stdin:
    parts = line.split()
    if len(parts) < 2:
        continue
    a, b = int(parts[0]), int(parts[1])
    if b == 0:
        print("DIVIDE BY ZERO")
        continue
    print(f"Q={signed(a // b)} R={signed(a % b)}")
