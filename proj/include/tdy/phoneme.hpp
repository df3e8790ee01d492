#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tdy/dynconv.hpp"
#include "tdy/model.hpp"

namespace tdy {

enum class PhonemeGroup {
    Vowels,
    SemivowelsGlides,
    Nasals,
    FricativesAffricates,
    Stops,
    Closures,
    Other,
};

const char* to_string(PhonemeGroup group);

/// Table lookup over the TIMIT phone inventory. The glottal stop `q` and the
/// pause symbols `pau`/`epi` map to Other; `h#` counts as a closure. Unknown
/// codes map to Other with a warning on stderr, never a crash.
PhonemeGroup phoneme_group_of(const std::string& label);

struct PhonemeSegment {
    std::int64_t start_sample = 0;
    std::int64_t end_sample = 0;
    std::string label;
    PhonemeGroup group = PhonemeGroup::Other;
};

/// Parses TIMIT-style `start end label` lines (sample indices at 16 kHz).
/// Segments must be ordered and non-overlapping.
std::vector<PhonemeSegment> parse_phn(const std::string& path);

struct AlignedAttention {
    int layer_id = -1;
    std::int64_t time_bin = 0;
    std::vector<double> attention; // K entries, sums to 1
    PhonemeGroup group = PhonemeGroup::Other;
    std::string speaker_id;
};

struct LayerStride {
    int layer_id;
    std::int64_t time_stride; // cumulative, in mel frames per bin
};

/// Assigns each attention time bin the phoneme group of the segment
/// containing the bin's center sample (bin t at cumulative stride s covers
/// samples [t*s*160, (t+1)*s*160)). Bins outside every segment are dropped.
std::vector<AlignedAttention> align_attention(const std::vector<AttentionMap>& maps,
                                              const std::vector<PhonemeSegment>& segments,
                                              const std::vector<LayerStride>& strides,
                                              const std::string& speaker_id);

struct PcaProjection {
    std::vector<std::array<double, 2>> points;
    std::array<double, 2> explained_variance{0.0, 0.0};
    std::vector<std::vector<double>> components; // 2 x K, eigenvalue order
};

/// Projects K-dim points onto the top-2 principal axes of their sample
/// covariance. Component signs are fixed by making each component's
/// largest-magnitude coordinate positive.
PcaProjection pca_project(const std::vector<std::vector<double>>& points);

/// Fisher-style separation at one layer: trace of between-group scatter over
/// trace of within-group scatter of the raw K-dim attention vectors. Groups
/// with fewer than 5 points are excluded; at least two groups must remain.
double group_dispersion(const std::vector<AlignedAttention>& aligned, int layer_id);

struct AnalysisOptions {
    std::vector<int> layers; // dynamic-layer indices; empty selects first, middle, last
    bool per_speaker = true; // split the projection and dispersion by speaker
};

struct AnalysisSummaryRow {
    int layer_id;
    std::string speaker; // "all" when pooled
    std::int64_t points;
    double dispersion;
};

struct SpeakerVarianceRow {
    std::string speaker;
    std::int64_t records;
    double total_variance; // summed per-coordinate variance of attention weights
};

struct AnalysisResult {
    std::vector<AnalysisSummaryRow> summary;
    std::vector<SpeakerVarianceRow> speaker_variance;
    std::vector<std::string> files_written;
};

/// Runs the attention/embedding analysis over a corpus of wav files with
/// sibling .phn labels and writes per-layer attention CSVs, per-utterance
/// frame-embedding CSVs, and a dispersion summary CSV into out_dir.
AnalysisResult export_analysis(Model& model, const std::string& corpus_root,
                               const std::string& out_dir, const AnalysisOptions& opts);

} // namespace tdy
