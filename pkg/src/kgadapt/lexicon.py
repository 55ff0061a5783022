"""Built-in word lists for the desk-scale vocabulary and the mock knowledge source.

``CONCEPT_WORDS`` groups words by the synthetic concept they describe; the
first word of every group is the concept's seed word. ``FILLER_WORDS`` are
unrelated words that populate the rest of the vocabulary.
"""

from __future__ import annotations

UNK = "<unk>"

CONCEPT_WORDS: dict[str, tuple[str, ...]] = {
    "scene": ("scene", "street", "store", "aisle", "counter", "camera", "hallway", "parking"),
    "walking": ("walking", "strolling", "browsing", "shopping", "chatting", "waiting", "queueing", "paying"),
    "stealing": ("stealing", "sneaky", "concealing", "pocketing", "shoplifting", "lurking", "grabbing", "hiding"),
    "robbery": ("robbery", "firearm", "gunpoint", "threatening", "masked", "weapon", "holdup", "demanding"),
    "explosion": ("explosion", "blast", "smoke", "debris", "fire", "flames", "shockwave", "detonation"),
    "fighting": ("fighting", "punching", "kicking", "brawl", "shoving", "wrestling", "assault", "attacking"),
    "vandalism": ("vandalism", "graffiti", "smashing", "breaking", "damaging", "spraying", "defacing", "wrecking"),
    "arson": ("arson", "igniting", "lighter", "gasoline", "torching", "burning", "accelerant", "kindling"),
}

FILLER_WORDS: tuple[str, ...] = (
    "behavior", "items", "person", "people", "object", "action", "motion", "area",
    "suspicious", "quick", "slow", "sudden", "unusual", "normal", "activity", "movement",
    "hand", "hands", "bag", "bags", "door", "window", "car", "vehicle",
    "crowd", "group", "alone", "near", "far", "inside", "outside", "around",
    "looking", "watching", "holding", "carrying", "moving", "standing", "sitting", "leaving",
    "entering", "running", "turning", "reaching", "opening", "closing", "pulling", "pushing",
    "light", "dark", "loud", "quiet", "large", "small", "fast", "careful",
    "clothing", "jacket", "hat", "glasses", "phone", "money", "wallet", "box",
    "shelf", "table", "chair", "floor", "wall", "corner", "entrance", "exit",
    "signal", "pattern", "event", "intent", "risk", "danger", "alarm", "response",
    "tension", "panic", "escape", "chase", "victim", "suspect", "witness", "guard",
    "property", "damage", "injury", "threat", "conflict", "crime", "incident", "harm",
    "green", "blue", "red", "yellow", "north", "south", "east", "west",
    "morning", "evening", "night", "day", "weather", "rain", "wind", "sun",
    "music", "paper", "stone", "metal", "glass", "wood", "water", "sand",
    "theft", "violent", "cloud", "flying",
    "river", "garden", "tree", "flower", "bird", "dog", "cat", "horse",
)

# Phrase templates used by the mock source, per mission, per level. Level 1
# describes observable cues, deeper levels become more abstract.
MISSION_TEMPLATES: dict[str, tuple[tuple[str, ...], ...]] = {
    "stealing": (
        ("sneaky behavior", "concealing items", "pocketing object", "lurking around", "grabbing items", "hiding bag"),
        ("shoplifting suspect", "suspicious intent", "careful hands", "quick escape", "looking around"),
        ("theft risk", "property crime", "suspect leaving", "alarm response"),
        ("crime incident", "guard signal", "danger pattern"),
    ),
    "robbery": (
        ("masked person", "firearm threat", "gunpoint demanding", "threatening victim", "weapon holding", "holdup counter"),
        ("robbery suspect", "victim panic", "sudden tension", "money demanding"),
        ("violent crime", "danger risk", "escape vehicle", "guard response"),
        ("crime incident", "alarm signal", "harm pattern"),
    ),
    "explosion": (
        ("blast light", "smoke cloud", "debris flying", "fire flames", "shockwave motion", "loud detonation"),
        ("explosion event", "crowd panic", "property damage", "injury risk"),
        ("danger area", "escape response", "alarm signal"),
        ("harm incident", "guard response", "risk pattern"),
    ),
}

GENERIC_LEVEL_WORDS: tuple[tuple[str, ...], ...] = (
    ("suspicious", "quick", "sudden", "unusual", "careful", "loud", "dark", "fast"),
    ("behavior", "motion", "movement", "action", "activity", "pattern", "event", "signal"),
)


def base_words() -> list[str]:
    """Vocabulary order: UNK, concept groups in declaration order, then filler."""
    words = [UNK]
    seen = {UNK}
    for group in CONCEPT_WORDS.values():
        for w in group:
            if w not in seen:
                words.append(w)
                seen.add(w)
    for w in FILLER_WORDS:
        if w not in seen:
            words.append(w)
            seen.add(w)
    return words
