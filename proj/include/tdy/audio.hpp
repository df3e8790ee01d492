#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdy/tensor.hpp"

namespace tdy {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFrameWidth = 400;  // 25 ms
inline constexpr int kFrameHop = 160;    // 10 ms
inline constexpr int kFftSize = 512;
inline constexpr int kMelBins = 64;
inline constexpr std::int64_t kTrainCropSamples = 32000;  // 2.0 s
inline constexpr std::int64_t kEvalSegmentSamples = 64000; // 4.0 s
inline constexpr int kEvalSegments = 10;

struct Waveform {
    std::vector<double> samples; // in [-1, 1]
    int sample_rate = kSampleRate;
};

struct MelSpectrogram {
    TensorPtr values; // [64, T] log energies
    int frame_hop = kFrameHop;
    int frame_width = kFrameWidth;

    std::int64_t frames() const { return values->shape[1]; }
};

/// Reads a RIFF/WAVE file; requires 16-bit PCM, mono, 16 kHz. Integer
/// samples are scaled to [-1, 1] by 1/32768.
Waveform load_wav(const std::string& path);

/// Writes 16-bit PCM mono. Samples are clamped to [-1, 1] and scaled by 32768.
void save_wav(const std::string& path, const Waveform& w);

std::int64_t log_mel_frame_count(std::int64_t samples);

/// 64-bin log Mel-spectrogram: Hamming window of 400 samples, hop 160,
/// 512-point FFT power spectrum, HTK-scale triangular filters over 0-8000 Hz,
/// natural log floored at 1e-10.
MelSpectrogram log_mel(const Waveform& w);

/// Center frequencies (Hz) of the 64 Mel filters, for filterbank inspection.
const std::vector<double>& mel_filter_centers();

/// Mean/variance-normalizes every frequency bin over time (population
/// variance, per utterance). Constant rows map to zero.
MelSpectrogram normalize_per_freq(const MelSpectrogram& m);

enum class SegmentMode { Train, Eval };

/// Train: one seeded random 2.0 s crop. Eval: ten 4.0 s segments at
/// start_i = round(i * (L - 64000) / 9). Inputs shorter than a segment are
/// tiled to the required length.
std::vector<Waveform> sample_segments(const Waveform& w, SegmentMode mode, std::uint64_t seed);

/// In-process FFT helper exposed for testing: complex interleaved in-place
/// radix-2 transform, n must be a power of two.
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

struct UtteranceFile {
    std::string path;
    std::string speaker_id;
};

/// Scans `<root>/<speaker_id>/**/*.wav`; speaker identity is the first path
/// component under root. Result sorted by path.
std::vector<UtteranceFile> scan_dataset(const std::string& root);

} // namespace tdy
