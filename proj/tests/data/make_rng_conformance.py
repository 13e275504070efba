"""Regenerates rng_conformance.json from an independent Python splitmix64."""
import json

MASK = (1 << 64) - 1


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def replacement(seed, position, original, vocab):
    state = seed ^ position
    while True:
        state, x = splitmix64(state)
        tok = x % vocab
        if tok != original:
            return tok


def main():
    streams = []
    for seed in [0, 1, 42, 0xDEADBEEF, MASK]:
        state, outs = seed, []
        for _ in range(5):
            state, x = splitmix64(state)
            outs.append(str(x))
        streams.append({"seed": str(seed), "outputs": outs})
    cases = []
    for seed in [0, 7, 12345, 0xFFFFFFFFFFFF]:
        for vocab in [2, 50, 256, 50257]:
            for position in [1, 2, 5, 16]:
                for original in [0, 1, vocab - 1]:
                    cases.append({
                        "seed": str(seed), "position": position, "original": original,
                        "vocab_size": vocab,
                        "replacement": replacement(seed, position, original, vocab),
                    })
    with open("rng_conformance.json", "w") as f:
        json.dump({"splitmix64": streams, "replacement": cases}, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
