#include "tdy/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace tdy {

void validate(const SynthSpec& spec) {
    if (spec.num_speakers < 1 || spec.utterances_per_speaker < 1) {
        throw ParameterError("synth: speaker and utterance counts must be positive");
    }
    if (!(spec.min_seconds > 0.2) || !(spec.max_seconds >= spec.min_seconds)) {
        throw ParameterError("synth: invalid duration range");
    }
}

namespace {

constexpr double kTau = 6.283185307179586477;

struct Voice {
    double f0;        // base pitch
    double formant1;  // spectral peaks of the vowel envelope
    double formant2;
    double fric_center;
    double fric_r;    // resonator radius
    double burst_tilt;
};

Voice make_voice(int speaker, int num_speakers, Rng& rng) {
    Voice v;
    // Pitch spread across [90, 280] Hz with small per-speaker jitter; the
    // formant-like peaks and fricative centers follow golden-ratio
    // low-discrepancy sequences so no two voices land close together.
    const double frac =
        num_speakers > 1 ? static_cast<double>(speaker) / (num_speakers - 1) : 0.5;
    const double golden = 0.61803398874989484820;
    auto spread = [&](double phase) {
        return std::fmod(phase + speaker * golden, 1.0);
    };
    v.f0 = 90.0 + 190.0 * frac + rng.uniform(-3.0, 3.0);
    v.formant1 = 320.0 + 620.0 * spread(0.13) + rng.uniform(-12.0, 12.0);
    v.formant2 = 1050.0 + 1650.0 * spread(0.47) + rng.uniform(-25.0, 25.0);
    v.fric_center = 3100.0 + 3400.0 * spread(0.79) + rng.uniform(-40.0, 40.0);
    v.fric_r = 0.965 + 0.02 * spread(0.31);
    v.burst_tilt = 0.2 + 0.6 * spread(0.59);
    return v;
}

double vowel_envelope(const Voice& v, double freq) {
    const double d1 = (freq - v.formant1) / 130.0;
    const double d2 = (freq - v.formant2) / 170.0;
    return std::exp(-d1 * d1) + 0.8 * std::exp(-d2 * d2) + 12.0 / (freq + 300.0);
}

void append_vowel(const Voice& v, std::int64_t len, Rng& rng, std::vector<double>& out) {
    const std::size_t start = out.size();
    std::vector<double> amps, phases, freqs;
    for (int h = 1; h * v.f0 < 7400.0 && h <= 48; ++h) {
        const double f = h * v.f0;
        amps.push_back(vowel_envelope(v, f));
        phases.push_back(rng.uniform(0.0, kTau));
        freqs.push_back(f);
    }
    for (std::int64_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        double s = 0.0;
        for (std::size_t h = 0; h < freqs.size(); ++h) {
            s += amps[h] * std::sin(kTau * freqs[h] * t + phases[h]);
        }
        out.push_back(s);
    }
    // Normalize this unit to a fixed RMS and apply 10 ms ramps.
    double rms = 0.0;
    for (std::size_t i = start; i < out.size(); ++i) rms += out[i] * out[i];
    rms = std::sqrt(rms / static_cast<double>(len));
    const double gain = 0.22 / std::max(rms, 1e-9);
    const std::int64_t ramp = 160;
    for (std::int64_t i = 0; i < len; ++i) {
        double g = gain;
        if (i < ramp) g *= static_cast<double>(i) / ramp;
        if (len - 1 - i < ramp) g *= static_cast<double>(len - 1 - i) / ramp;
        out[start + static_cast<std::size_t>(i)] *= g;
    }
}

void append_fricative(const Voice& v, std::int64_t len, Rng& rng, std::vector<double>& out) {
    const std::size_t start = out.size();
    const double omega = kTau * v.fric_center / kSampleRate;
    const double r = v.fric_r;
    const double a1 = 2.0 * r * std::cos(omega), a2 = -r * r;
    double y1 = 0.0, y2 = 0.0;
    for (std::int64_t i = 0; i < len; ++i) {
        const double x = rng.uniform(-1.0, 1.0);
        const double y = x + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        out.push_back(y);
    }
    double rms = 0.0;
    for (std::size_t i = start; i < out.size(); ++i) rms += out[i] * out[i];
    rms = std::sqrt(rms / static_cast<double>(len));
    const double gain = 0.12 / std::max(rms, 1e-9);
    const std::int64_t ramp = 120;
    for (std::int64_t i = 0; i < len; ++i) {
        double g = gain;
        if (i < ramp) g *= static_cast<double>(i) / ramp;
        if (len - 1 - i < ramp) g *= static_cast<double>(len - 1 - i) / ramp;
        out[start + static_cast<std::size_t>(i)] *= g;
    }
}

void append_stop(const Voice& v, std::int64_t len, Rng& rng, std::vector<double>& out) {
    // Closure silence followed by a short decaying burst.
    const std::int64_t burst = std::min<std::int64_t>(len / 3, 320);
    const std::int64_t silence = len - burst;
    for (std::int64_t i = 0; i < silence; ++i) {
        out.push_back(0.0);
    }
    double prev = 0.0;
    for (std::int64_t i = 0; i < burst; ++i) {
        const double env = std::exp(-4.0 * static_cast<double>(i) / burst);
        const double white = rng.uniform(-1.0, 1.0);
        // One-pole tilt darkens or brightens the burst per speaker.
        const double shaped = v.burst_tilt * white + (1.0 - v.burst_tilt) * prev;
        prev = shaped;
        out.push_back(0.45 * env * shaped);
    }
}

} // namespace

namespace {

void synth_into(const SynthSpec& spec, const std::string& out_dir, Rng& rng,
                SynthResult& result) {
    const char* vowel_codes[3] = {"aa", "iy", "ow"};
    const char* fric_codes[3] = {"s", "sh", "f"};
    const char* stop_codes[3] = {"t", "k", "p"};

    for (int s = 0; s < spec.num_speakers; ++s) {
        const Voice voice = make_voice(s, spec.num_speakers, rng);
        char spk_name[16];
        std::snprintf(spk_name, sizeof spk_name, "spk%03d", s);
        const fs::path spk_dir = fs::path(out_dir) / spk_name;
        fs::create_directories(spk_dir);
        for (int u = 0; u < spec.utterances_per_speaker; ++u) {
            const double target_seconds =
                rng.uniform(spec.min_seconds, spec.max_seconds);
            const auto target = static_cast<std::int64_t>(target_seconds * kSampleRate);
            std::vector<double> samples;
            std::ostringstream phn;
            while (static_cast<std::int64_t>(samples.size()) < target) {
                const std::int64_t begin = static_cast<std::int64_t>(samples.size());
                const double kind = rng.uniform();
                if (kind < 0.55) {
                    const std::int64_t len = 2400 + rng.uniform_int(4000);
                    append_vowel(voice, len, rng, samples);
                    phn << begin << ' ' << samples.size() << ' '
                        << vowel_codes[rng.uniform_int(3)] << '\n';
                } else if (kind < 0.8) {
                    const std::int64_t len = 1900 + rng.uniform_int(2900);
                    append_fricative(voice, len, rng, samples);
                    phn << begin << ' ' << samples.size() << ' '
                        << fric_codes[rng.uniform_int(3)] << '\n';
                } else {
                    const std::int64_t len = 960 + rng.uniform_int(800);
                    append_stop(voice, len, rng, samples);
                    phn << begin << ' ' << samples.size() << ' '
                        << stop_codes[rng.uniform_int(3)] << '\n';
                }
            }
            double peak = 0.0;
            for (double v : samples) peak = std::max(peak, std::fabs(v));
            const double gain = 0.6 / std::max(peak, 1e-9);
            Waveform w;
            w.samples = std::move(samples);
            for (double& v : w.samples) v *= gain;

            char utt_name[16];
            std::snprintf(utt_name, sizeof utt_name, "utt%03d", u);
            const std::string wav_path = (spk_dir / (std::string(utt_name) + ".wav")).string();
            const std::string phn_path = (spk_dir / (std::string(utt_name) + ".phn")).string();
            save_wav(wav_path, w);
            {
                std::ofstream out(phn_path, std::ios::binary);
                if (!out) {
                    throw IoError("synth: cannot write " + phn_path);
                }
                out << phn.str();
            }
            result.files.push_back({wav_path, spk_name});
            result.all_paths.push_back(wav_path);
            result.all_paths.push_back(phn_path);
        }
    }
}

} // namespace

SynthResult synth_corpus(const SynthSpec& spec, const std::string& out_dir) {
    validate(spec);
    Rng rng(spec.seed);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) {
        throw IoError("synth: cannot create output directory " + out_dir);
    }
    SynthResult result;
    try {
        synth_into(spec, out_dir, rng, result);
    } catch (...) {
        for (const auto& path : result.all_paths) {
            std::error_code rec;
            fs::remove(path, rec);
        }
        throw;
    }
    return result;
}

} // namespace tdy
