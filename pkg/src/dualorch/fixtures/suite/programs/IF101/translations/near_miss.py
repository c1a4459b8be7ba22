import sys

for line in sys.stdin:
    field = line.rstrip("\n").ljust(20)
    print("UPPER=" + field.upper())
    print("REVERSE=[" + field[::-1] + "]")
