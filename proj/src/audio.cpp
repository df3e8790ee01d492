#include "tdy/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace tdy {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLogFloor = 1e-10;

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

double hz_to_mel(double hz) {
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

struct MelFilterbank {
    // weights[m][k] over the 257 one-sided FFT bins
    std::vector<std::vector<double>> weights;
    std::vector<double> centers_hz;
};

const MelFilterbank& filterbank() {
    static const MelFilterbank fb = [] {
        MelFilterbank out;
        const int bins = kFftSize / 2 + 1;
        const double mel_lo = hz_to_mel(0.0);
        const double mel_hi = hz_to_mel(8000.0);
        std::vector<double> edges(kMelBins + 2);
        for (int i = 0; i < kMelBins + 2; ++i) {
            edges[static_cast<std::size_t>(i)] =
                mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kMelBins + 1));
        }
        out.weights.assign(kMelBins, std::vector<double>(static_cast<std::size_t>(bins), 0.0));
        out.centers_hz.assign(kMelBins, 0.0);
        for (int m = 0; m < kMelBins; ++m) {
            const double lo = edges[static_cast<std::size_t>(m)];
            const double mid = edges[static_cast<std::size_t>(m + 1)];
            const double hi = edges[static_cast<std::size_t>(m + 2)];
            out.centers_hz[static_cast<std::size_t>(m)] = mid;
            for (int k = 0; k < bins; ++k) {
                const double f = static_cast<double>(k) * kSampleRate / kFftSize;
                double w = 0.0;
                if (f > lo && f < mid) {
                    w = (f - lo) / (mid - lo);
                } else if (f >= mid && f < hi) {
                    w = (hi - f) / (hi - mid);
                }
                out.weights[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = w;
            }
        }
        return out;
    }();
    return fb;
}

const std::vector<double>& hamming_window() {
    static const std::vector<double> win = [] {
        std::vector<double> w(kFrameWidth);
        for (int n = 0; n < kFrameWidth; ++n) {
            w[static_cast<std::size_t>(n)] =
                0.54 - 0.46 * std::cos(2.0 * kPi * n / (kFrameWidth - 1));
        }
        return w;
    }();
    return win;
}

} // namespace

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
    const std::size_t n = re.size();
    if (n == 0 || (n & (n - 1)) != 0 || im.size() != n) {
        throw ParameterError("fft_radix2: length must be a power of two");
    }
    // Bit-reversal permutation.
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (std::size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::size_t a = i + j, b = i + j + len / 2;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

Waveform load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("load_wav: cannot open " + path);
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw DataError("load_wav: " + path + ": not a RIFF/WAVE container");
    }
    std::size_t pos = 12;
    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data_ptr = nullptr;
    std::uint32_t data_len = 0;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t chunk_len = read_u32(bytes.data() + pos + 4);
        const unsigned char* body = bytes.data() + pos + 8;
        if (pos + 8 + chunk_len > bytes.size()) {
            throw DataError("load_wav: " + path + ": truncated chunk");
        }
        if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
            if (chunk_len < 16) {
                throw DataError("load_wav: " + path + ": malformed fmt chunk");
            }
            format = read_u16(body);
            channels = read_u16(body + 2);
            rate = read_u32(body + 4);
            bits = read_u16(body + 14);
            have_fmt = true;
        } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
            data_ptr = body;
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    if (!have_fmt || data_ptr == nullptr) {
        throw DataError("load_wav: " + path + ": missing fmt or data chunk");
    }
    if (format != 1) {
        throw DataError("load_wav: " + path + ": unsupported encoding " + std::to_string(format) +
                        " (want PCM)");
    }
    if (channels != 1) {
        throw DataError("load_wav: " + path + ": unsupported channel count " +
                        std::to_string(channels) + " (want mono)");
    }
    if (bits != 16) {
        throw DataError("load_wav: " + path + ": unsupported sample width " +
                        std::to_string(bits) + " bits (want 16)");
    }
    if (rate != kSampleRate) {
        throw DataError("load_wav: " + path + ": unsupported sample rate " + std::to_string(rate) +
                        " (want 16000)");
    }
    Waveform w;
    w.sample_rate = kSampleRate;
    const std::size_t n = data_len / 2;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t s =
            static_cast<std::int16_t>(data_ptr[2 * i] | (data_ptr[2 * i + 1] << 8));
        w.samples[i] = static_cast<double>(s) / 32768.0;
    }
    return w;
}

void save_wav(const std::string& path, const Waveform& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("save_wav: cannot open " + path + " for writing");
    }
    const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
    auto put_u32 = [&](std::uint32_t v) {
        char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
        out.write(b, 4);
    };
    auto put_u16 = [&](std::uint16_t v) {
        char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
        out.write(b, 2);
    };
    out.write("RIFF", 4);
    put_u32(36 + data_len);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(16);
    put_u16(1);               // PCM
    put_u16(1);               // mono
    put_u32(kSampleRate);
    put_u32(kSampleRate * 2); // byte rate
    put_u16(2);               // block align
    put_u16(16);              // bits per sample
    out.write("data", 4);
    put_u32(data_len);
    for (double v : w.samples) {
        double scaled = std::clamp(v, -1.0, 1.0) * 32768.0;
        scaled = std::clamp(scaled, -32768.0, 32767.0);
        const std::int16_t s = static_cast<std::int16_t>(std::lrint(scaled));
        put_u16(static_cast<std::uint16_t>(s));
    }
    if (!out) {
        throw IoError("save_wav: write failed for " + path);
    }
}

std::int64_t log_mel_frame_count(std::int64_t samples) {
    return (samples - kFrameWidth) / kFrameHop + 1;
}

MelSpectrogram log_mel(const Waveform& w) {
    const std::int64_t len = static_cast<std::int64_t>(w.samples.size());
    if (len < kFrameWidth) {
        throw DataError("log_mel: input of " + std::to_string(len) +
                        " samples is shorter than one 400-sample window");
    }
    const std::int64_t frames = log_mel_frame_count(len);
    const auto& win = hamming_window();
    const auto& fb = filterbank();
    const int bins = kFftSize / 2 + 1;

    auto values = Tensor::zeros({kMelBins, frames});
    std::vector<double> re(kFftSize), im(kFftSize), power(static_cast<std::size_t>(bins));
    for (std::int64_t fr = 0; fr < frames; ++fr) {
        const double* src = w.samples.data() + fr * kFrameHop;
        for (int i = 0; i < kFrameWidth; ++i) {
            re[static_cast<std::size_t>(i)] = src[i] * win[static_cast<std::size_t>(i)];
        }
        std::fill(re.begin() + kFrameWidth, re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        fft_radix2(re, im);
        for (int k = 0; k < bins; ++k) {
            power[static_cast<std::size_t>(k)] =
                re[static_cast<std::size_t>(k)] * re[static_cast<std::size_t>(k)] +
                im[static_cast<std::size_t>(k)] * im[static_cast<std::size_t>(k)];
        }
        for (int m = 0; m < kMelBins; ++m) {
            const auto& fw = fb.weights[static_cast<std::size_t>(m)];
            double acc = 0.0;
            for (int k = 0; k < bins; ++k) {
                acc += fw[static_cast<std::size_t>(k)] * power[static_cast<std::size_t>(k)];
            }
            values->data[static_cast<std::size_t>(m * frames + fr)] =
                std::log(std::max(acc, kLogFloor));
        }
    }
    MelSpectrogram mel;
    mel.values = values;
    return mel;
}

const std::vector<double>& mel_filter_centers() {
    return filterbank().centers_hz;
}

MelSpectrogram normalize_per_freq(const MelSpectrogram& m) {
    const std::int64_t t = m.values->shape[1];
    if (t < 2) {
        throw DataError("normalize_per_freq: need at least 2 frames, got " + std::to_string(t));
    }
    auto out = Tensor::zeros(m.values->shape);
    for (std::int64_t row = 0; row < kMelBins; ++row) {
        const double* src = m.values->data.data() + row * t;
        double* dst = out->data.data() + row * t;
        double mean = 0.0;
        for (std::int64_t i = 0; i < t; ++i) mean += src[i];
        mean /= static_cast<double>(t);
        double var = 0.0;
        for (std::int64_t i = 0; i < t; ++i) {
            const double d = src[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(t);
        const double inv_std = 1.0 / std::sqrt(std::max(var, 1e-12));
        for (std::int64_t i = 0; i < t; ++i) {
            dst[i] = (src[i] - mean) * inv_std;
        }
    }
    MelSpectrogram res;
    res.values = out;
    res.frame_hop = m.frame_hop;
    res.frame_width = m.frame_width;
    return res;
}

namespace {

Waveform tiled_crop(const Waveform& w, std::int64_t start, std::int64_t length) {
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(static_cast<std::size_t>(length));
    const std::int64_t n = static_cast<std::int64_t>(w.samples.size());
    for (std::int64_t i = 0; i < length; ++i) {
        out.samples[static_cast<std::size_t>(i)] =
            w.samples[static_cast<std::size_t>((start + i) % n)];
    }
    return out;
}

} // namespace

std::vector<Waveform> sample_segments(const Waveform& w, SegmentMode mode, std::uint64_t seed) {
    const std::int64_t len = static_cast<std::int64_t>(w.samples.size());
    if (len == 0) {
        throw DataError("sample_segments: empty waveform");
    }
    std::vector<Waveform> out;
    if (mode == SegmentMode::Train) {
        const std::int64_t want = kTrainCropSamples;
        if (len <= want) {
            out.push_back(tiled_crop(w, 0, want));
        } else {
            Rng rng(seed);
            const std::int64_t start = rng.uniform_int(len - want + 1);
            out.push_back(tiled_crop(w, start, want));
        }
    } else {
        const std::int64_t want = kEvalSegmentSamples;
        if (len <= want) {
            auto padded = tiled_crop(w, 0, want);
            for (int i = 0; i < kEvalSegments; ++i) {
                out.push_back(padded);
            }
        } else {
            const double slack = static_cast<double>(len - want);
            for (int i = 0; i < kEvalSegments; ++i) {
                const double pos = slack * static_cast<double>(i) / 9.0;
                out.push_back(tiled_crop(w, std::llround(pos), want));
            }
        }
    }
    return out;
}

std::vector<UtteranceFile> scan_dataset(const std::string& root) {
    if (!fs::is_directory(root)) {
        throw IoError("scan_dataset: " + root + " is not a directory");
    }
    std::vector<UtteranceFile> files;
    for (const auto& speaker_dir : fs::directory_iterator(root)) {
        if (!speaker_dir.is_directory()) continue;
        const std::string speaker = speaker_dir.path().filename().string();
        for (const auto& entry : fs::recursive_directory_iterator(speaker_dir.path())) {
            if (entry.is_regular_file() && entry.path().extension() == ".wav") {
                files.push_back({entry.path().string(), speaker});
            }
        }
    }
    std::sort(files.begin(), files.end(),
              [](const UtteranceFile& a, const UtteranceFile& b) { return a.path < b.path; });
    return files;
}

} // namespace tdy
