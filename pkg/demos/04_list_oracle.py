"""
Kernel lists against a sorted array
===================================

The scheduler's ordered lists live inside the kernel image as intrusive
circular lists.  Drive one with random inserts and removals and compare it
with a plain sorted Python list after every step.
"""

import bisect
import random

from rtosfi.kernel import kernel_init
from rtosfi.layout import ITEM_SIZE

k = kernel_init()
lst = k.addr["xDelayedTaskList1"]
pool = [k.image.allocate(f"item{i}", ITEM_SIZE, "list_item").base for i in range(32)]

rng = random.Random(0)
keys, items = [], []
for step in range(2000):
    free = [it for it in pool if it not in items]
    if free and (not items or rng.random() < 0.6):
        it, value = rng.choice(free), rng.randrange(50)
        k.image.write32(it, value)
        k.list_insert_ordered(lst, it)
        i = bisect.bisect_right(keys, value)
        keys.insert(i, value)
        items.insert(i, it)
    else:
        k.list_remove(items.pop(rng.randrange(len(items))))
        keys = [k.image.read32(it) for it in items]
    assert list(k.list_items(lst)) == items

print("2000 operations, lists agree; final length", len(items))
print("values:", k.list_values(lst))
