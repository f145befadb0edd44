#!/usr/bin/env python3
"""Writes data/corpus.txt: short children's stories from a seeded grammar.

The output is fully determined by --seed and --stories, so the file in the
repository can be regenerated byte for byte.
"""

import argparse
import random

NAMES = [
    "Lily", "Tom", "Mia", "Ben", "Sue", "Max", "Anna", "Sam", "Lucy", "Jack",
    "Emma", "Leo", "Zoe", "Finn", "Ella", "Noah", "Ruby", "Jake", "Amy", "Tim",
    "Oliver", "Grace", "Henry", "Chloe", "Oscar", "Daisy", "Felix", "Hazel", "Milo", "Nora",
    "Rosie", "Theo", "Ivy", "Jasper", "Poppy", "Arthur", "Clara", "Hugo", "Molly", "Eddie",
]
ANIMALS = [
    "dog", "cat", "bird", "frog", "bunny", "duck", "bear", "fox", "mouse", "fish",
    "pig", "cow", "horse", "owl", "lion", "puppy", "kitten", "turtle", "bee", "sheep",
    "squirrel", "rabbit", "elephant", "giraffe", "monkey", "penguin", "dolphin", "butterfly",
    "ladybug", "hedgehog", "goat", "chicken", "dragon", "unicorn", "spider", "whale",
]
THINGS = [
    "ball", "kite", "box", "hat", "toy", "book", "cake", "flower", "boat", "car",
    "doll", "drum", "cup", "shoe", "stone", "stick", "apple", "block", "bell", "blanket",
    "balloon", "crayon", "pillow", "basket", "cookie", "sandwich", "umbrella", "bucket",
    "shovel", "puzzle", "whistle", "feather", "pebble", "ribbon", "sweater", "lantern",
    "trumpet", "kettle", "pumpkin", "banana", "carrot", "cherry", "treasure", "map",
]
PLACES = [
    "park", "garden", "forest", "river", "house", "school", "beach", "farm", "hill", "pond",
    "yard", "shop", "lake", "field", "tree", "kitchen", "room", "town", "cave", "meadow",
    "mountain", "library", "playground", "castle", "island", "village", "bakery", "market",
    "station", "museum", "orchard", "valley", "bridge", "jungle", "desert", "harbor",
]
ADJECTIVES = [
    "big", "small", "red", "blue", "happy", "sad", "shiny", "soft", "old", "new",
    "green", "little", "funny", "kind", "brave", "quiet", "loud", "yellow", "pretty", "tall",
    "gentle", "clever", "sleepy", "hungry", "curious", "fluffy", "tiny", "purple", "orange",
    "wonderful", "strange", "sparkly", "wooden", "golden", "silly", "careful", "friendly",
]
FEELINGS = ["happy", "sad", "scared", "excited", "angry", "tired", "proud", "surprised",
            "grateful", "worried", "cheerful", "lonely", "calm", "thankful"]
VERBS_PAST = [
    "played", "jumped", "ran", "walked", "sang", "danced", "looked", "laughed", "smiled",
    "waited", "climbed", "swam", "hid", "shouted", "listened",
    "giggled", "whispered", "wandered", "painted", "explored", "skipped", "twirled",
    "cheered", "stretched", "rested", "searched", "splashed", "hopped", "wiggled",
]
WEATHER = ["sunny", "rainy", "windy", "cold", "warm", "snowy", "bright", "cloudy"]
TIMES = ["One day", "Once upon a time", "One morning", "Later that day", "After lunch",
         "In the evening", "The next day", "Long ago"]
LESSONS = [
    "sharing is good", "being kind is important", "friends help each other",
    "it is good to say sorry", "you should always try again", "listening is important",
    "being brave can be fun", "it is nice to help others",
    "patience brings wonderful surprises", "everyone makes mistakes sometimes",
    "telling the truth matters", "working together makes things easier",
]


def pick(rng, items):
    return items[rng.randrange(len(items))]


def article(word):
    return "an" if word[0] in "aeiou" else "a"


def story(rng):
    hero = pick(rng, NAMES)
    friend = pick(rng, [n for n in NAMES if n != hero])
    pet = pick(rng, ANIMALS)
    thing = pick(rng, THINGS)
    adj = pick(rng, ADJECTIVES)
    place = pick(rng, PLACES)
    pronoun, possessive = rng.choice([("she", "her"), ("he", "his"), ("they", "their")])
    was = "were" if pronoun == "they" else "was"
    sentences = []
    opening = pick(rng, TIMES)
    sentences.append(f"{opening}, there was a little {pick(rng, ['girl', 'boy', 'child'])} "
                     f"named {hero}.")
    sentences.append(f"{hero} had {article(adj)} {adj} {thing} and a {pet}.")
    sentences.append(f"The day was {pick(rng, WEATHER)}, so {pronoun} went to the {place}.")
    for _ in range(rng.randint(2, 6)):
        kind = rng.randrange(8)
        if kind == 0:
            sentences.append(f"At the {place}, {hero} saw {friend} and the two {pick(rng, VERBS_PAST)} "
                             f"together.")
        elif kind == 1:
            other = pick(rng, ANIMALS)
            sentences.append(f"{article(other).capitalize()} {other} came and {pick(rng, VERBS_PAST)} "
                             f"near the {pick(rng, PLACES)}.")
        elif kind == 2:
            sentences.append(f"\"Can I play with your {thing}?\" asked {friend}.")
            if rng.random() < 0.6:
                sentences.append(f"\"Yes, you can,\" said {hero}, and {pronoun} {was} "
                                 f"{pick(rng, FEELINGS)}.")
            else:
                sentences.append(f"\"No, it is mine,\" said {hero}. {friend} felt "
                                 f"{pick(rng, FEELINGS)}.")
        elif kind == 3:
            sentences.append(f"The {pet} {pick(rng, VERBS_PAST)} and {pick(rng, VERBS_PAST)} "
                             f"all day.")
        elif kind == 4:
            sentences.append(f"Then the {thing} fell into the {pick(rng, ['river', 'pond', 'mud', 'grass'])}.")
            sentences.append(f"{hero} was {pick(rng, FEELINGS)}, but {friend} helped get it back.")
        elif kind == 5:
            plan = pick(rng, ADJECTIVES)
            sentences.append(f"{hero} has a {pick(rng, ADJECTIVES)} idea. \"Let us build "
                             f"{article(plan)} {plan} {pick(rng, THINGS)}!\"")
        elif kind == 6:
            sentences.append(f"Mom said, \"Be careful, {hero}. The {place} is {pick(rng, ADJECTIVES)}.\"")
        else:
            sentences.append(f"They looked at the {pick(rng, ['sky', 'sun', 'moon', 'stars', 'clouds'])} "
                             f"and {pick(rng, VERBS_PAST)}.")
    sentences.append(f"At the end of the day, {hero} and {friend} went home {pick(rng, FEELINGS)}.")
    if rng.random() < 0.5:
        sentences.append(f"{hero} learned that {pick(rng, LESSONS)}.")
    sentences.append(f"{possessive.capitalize()} {pet} slept next to the {thing}. The end.")
    return " ".join(sentences)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--stories", type=int, default=3200)
    parser.add_argument("--out", default="data/corpus.txt")
    args = parser.parse_args()
    rng = random.Random(args.seed)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        for _ in range(args.stories):
            f.write(story(rng))
            f.write("\n\n")


if __name__ == "__main__":
    main()
