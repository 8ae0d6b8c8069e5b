"""Convert the 5000-sample MNIST subset bundled with mlxtend into IDX files.

Usage: pip download mlxtend --no-deps -d /tmp/mlx
       python3 scripts/mnist5k_to_idx.py /tmp/mlx/mlxtend-*.whl data/
"""
import gzip
import struct
import sys
import zipfile

wheel, out = sys.argv[1], sys.argv[2]
rows = gzip.decompress(
    zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
).decode().splitlines()
images, labels = bytearray(), bytearray()
for row in rows:
    values = [int(float(t)) for t in row.split(",")]
    images += bytes(values[:784])
    labels.append(values[784])
n = len(rows)
with open(f"{out}/mnist5k-images-idx3-ubyte", "wb") as f:
    f.write(struct.pack(">IIII", 0x803, n, 28, 28) + images)
with open(f"{out}/mnist5k-labels-idx1-ubyte", "wb") as f:
    f.write(struct.pack(">II", 0x801, n) + labels)
