#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdy/audio.hpp"

namespace tdy {

/// Seeded synthetic-speaker corpus: per-speaker voice parameters (f0 base,
/// formant-like spectral peaks, fricative center) and a three-unit inventory
/// of vowel-like harmonic tones, fricative-like filtered noise, and stop-like
/// silence+burst. Every utterance gets a sample-exact .phn sidecar.
struct SynthSpec {
    int num_speakers = 20;
    int utterances_per_speaker = 8;
    std::uint64_t seed = 1;
    double min_seconds = 2.0;
    double max_seconds = 5.0;
};

void validate(const SynthSpec& spec);

struct SynthResult {
    std::vector<UtteranceFile> files;
    std::vector<std::string> all_paths; // wav and phn files, in creation order
};

/// Writes `<out>/<speaker>/<utt>.wav` plus `<utt>.phn`. The seed fully
/// determines every emitted byte.
SynthResult synth_corpus(const SynthSpec& spec, const std::string& out_dir);

} // namespace tdy
