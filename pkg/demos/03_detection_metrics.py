"""How good is a detector? A small worked example.

Ground truth for two images; the detector finds most objects, confuses a
truck for a dump truck and hallucinates one car.
"""
from minegeo.evaluation import confusion_matrix, map_suite
from minegeo.io.records import Detection

gt = {
    "pit_001.jpg": [Detection("excavator", 1, (100, 100, 180, 160)),
                    Detection("truck", 1, (300, 120, 360, 170)),
                    Detection("human", 1, (50, 300, 62, 330))],
    "pit_002.jpg": [Detection("excavator", 1, (20, 40, 110, 100)),
                    Detection("human", 1, (400, 400, 410, 425))],
}
preds = {
    "pit_001.jpg": [Detection("excavator", 0.93, (102, 98, 182, 158)),
                    Detection("dump truck", 0.71, (301, 121, 359, 172)),
                    Detection("human", 0.40, (51, 301, 63, 331)),
                    Detection("car", 0.30, (500, 20, 540, 50))],
    "pit_002.jpg": [Detection("excavator", 0.88, (25, 42, 108, 101))],
}

rep = map_suite(gt, preds)
print(rep.render())

# the report carries the column-normalized matrix; raw counts read easier here
cm = confusion_matrix(gt, preds)
labels = cm.classes + ["background"]
print("\nconfusion counts (rows: predicted, columns: true)")
print(" " * 12 + "".join(f"{c[:10]:>11s}" for c in labels))
for i, row in enumerate(cm.matrix):
    print(f"{labels[i][:11]:12s}" + "".join(f"{v:11.0f}" for v in row))
print("\nThe missed worker in pit_002 drags human recall down; the truck mix-up")
print("lands off the diagonal, and the phantom car sits in the background column.")
