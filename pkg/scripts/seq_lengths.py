"""Token counts for common clip shapes under several VAE/patchify pairings."""

import argparse

from ditsched.workload import MediaSpec, PatchConfig, VaeConfig, compression_ratio, seq_len

SETUPS = {
    "48x vae, 1x2x2 patch": (VaeConfig(4, 8, 8, 16), PatchConfig(1, 2, 2)),
    "64x vae, 1x2x2 patch": (VaeConfig(4, 16, 16, 48), PatchConfig(1, 2, 2)),
    "(4,32,32) vae, no patch": (VaeConfig(4, 32, 32, 48), PatchConfig(1, 1, 1)),
}

MEDIA = {
    "image 256x256": MediaSpec.image(256, 256),
    "image 1024x1024": MediaSpec.image(1024, 1024),
    "5 s 192x320": MediaSpec.video(121, 192, 320),
    "73 frames 192x320": MediaSpec.video(73, 192, 320),
    "5 s 480x640": MediaSpec.video(121, 480, 640),
    "5 s 720x1280": MediaSpec.video(121, 720, 1280),
    "10 s 720x1280": MediaSpec.video(241, 720, 1280),
}


def main():
    argparse.ArgumentParser(description=__doc__).parse_args()
    names = list(SETUPS)
    print(f"{'media':<20}" + "".join(f"{n:>26}" for n in names))
    print(f"{'compression':<20}" + "".join(f"{str(compression_ratio(v)):>26}" for v, _ in SETUPS.values()))
    for label, media in MEDIA.items():
        cells = []
        for vae, patch in SETUPS.values():
            try:
                cells.append(f"{seq_len(media, vae, patch):>26,}")
            except ValueError:
                cells.append(f"{'n/a':>26}")
        print(f"{label:<20}" + "".join(cells))


if __name__ == "__main__":
    main()
