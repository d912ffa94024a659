"""Fixed label schema shared by every module.

Category order determines the head index, polarity order the class index
inside each head. Both orders are global and must never change between a
checkpoint being written and read.
"""

CATEGORIES = (
    "Actor",
    "Acting",
    "Story",
    "Style",
    "Movie",
    "Screenplay",
    "Content",
    "Issue",
    "Director",
)

# class index inside a head; neutral means "category not discussed"
POLARITIES = ("neutral", "negative", "positive")
NEUTRAL = 0

# polarities that may appear in annotations and prediction sets
ANNOTATION_POLARITIES = ("negative", "positive")

NUM_HEADS = len(CATEGORIES)
CLASSES_PER_HEAD = len(POLARITIES)

CATEGORY_INDEX = {name: i for i, name in enumerate(CATEGORIES)}
POLARITY_INDEX = {name: i for i, name in enumerate(POLARITIES)}

# composite label universe for the multi-label metrics:
# category order x [negative, positive]
LABEL_SPACE = tuple((c, p) for c in CATEGORIES for p in ANNOTATION_POLARITIES)
NUM_LABELS = len(LABEL_SPACE)
LABEL_INDEX = {label: i for i, label in enumerate(LABEL_SPACE)}


def schema_fingerprint():
    """Stable text form of the schema, used in manifests."""
    return ",".join(CATEGORIES) + "|" + ",".join(POLARITIES)
