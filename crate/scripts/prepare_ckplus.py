#!/usr/bin/env python3
"""Build a CK+ corpus in the layout vggfer expects.

    python3 scripts/prepare_ckplus.py CK+/cohn-kanade-images CK+/Emotion corpora/ckplus \
        --subjects S005,S010,S011,S014,S022,S026,S032,S034,S037,S042 --frames 3

For every chosen subject and every labelled sequence, the last `--frames`
frames (the expression apex) are copied under the sequence's label. Neutral
images are the first `--frames` frames of the subject's first labelled
sequence. Contempt sequences are skipped: the seven classes here are anger,
disgust, fear, happy, neutral, sad and surprise. With ten subjects and three
frames this yields 10 x 7 x 3 = 210 images when every subject has all six
non-neutral expressions; subjects that do not are reported.

CK+ does not ship subject sex in its metadata, so a balanced subject list
has to be chosen by hand.
"""

import argparse
import os
import shutil
import sys

LABELS = {1: "anger", 3: "disgust", 4: "fear", 5: "happy", 6: "sad", 7: "surprise"}


def frames(seq_dir):
    return sorted(f for f in os.listdir(seq_dir) if f.lower().endswith(".png"))


def emotion(emotion_dir):
    if not os.path.isdir(emotion_dir):
        return None
    for f in os.listdir(emotion_dir):
        if f.endswith("_emotion.txt"):
            with open(os.path.join(emotion_dir, f)) as fh:
                return int(float(fh.read().strip()))
    return None


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("images", help="cohn-kanade-images directory")
    p.add_argument("emotions", help="Emotion label directory")
    p.add_argument("out", help="corpus root to create")
    p.add_argument("--subjects", required=True, help="comma-separated subject ids, e.g. S005,S010")
    p.add_argument("--frames", type=int, default=3, help="frames taken per sequence (default 3)")
    args = p.parse_args()

    counts = {}

    def copy(src, label):
        dest = os.path.join(args.out, label)
        os.makedirs(dest, exist_ok=True)
        shutil.copyfile(src, os.path.join(dest, os.path.basename(src)))
        counts[label] = counts.get(label, 0) + 1

    for subject in args.subjects.split(","):
        subject = subject.strip()
        subj_dir = os.path.join(args.images, subject)
        if not os.path.isdir(subj_dir):
            sys.exit(f"no subject {subject} under {args.images}")
        seen = set()
        neutral_done = False
        for seq in sorted(os.listdir(subj_dir)):
            code = emotion(os.path.join(args.emotions, subject, seq))
            label = LABELS.get(code)
            if label is None or label in seen:
                continue
            seq_dir = os.path.join(subj_dir, seq)
            names = frames(seq_dir)
            if len(names) < 2 * args.frames:
                continue
            for name in names[-args.frames :]:
                copy(os.path.join(seq_dir, name), label)
            if not neutral_done:
                for name in names[: args.frames]:
                    copy(os.path.join(seq_dir, name), "neutral")
                neutral_done = True
            seen.add(label)
        missing = sorted(set(LABELS.values()) - seen)
        if missing:
            print(f"{subject}: no usable sequence for {', '.join(missing)}", file=sys.stderr)

    total = sum(counts.values())
    print(f"{total} images: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))


if __name__ == "__main__":
    main()
