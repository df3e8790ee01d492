#include "tdy/phoneme.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "tdy/audio.hpp"

namespace fs = std::filesystem;

namespace tdy {

const char* to_string(PhonemeGroup group) {
    switch (group) {
    case PhonemeGroup::Vowels: return "vowels";
    case PhonemeGroup::SemivowelsGlides: return "semivowels_glides";
    case PhonemeGroup::Nasals: return "nasals";
    case PhonemeGroup::FricativesAffricates: return "fricatives_affricates";
    case PhonemeGroup::Stops: return "stops";
    case PhonemeGroup::Closures: return "closures";
    case PhonemeGroup::Other: return "other";
    }
    return "other";
}

namespace {

// The 61-phone TIMIT inventory mapped onto six classes. The glottal stop `q`
// and the pause symbols `pau`/`epi` fall outside the six classes; `h#`
// (leading/trailing silence) is treated as a closure.
const std::map<std::string, PhonemeGroup>& phone_table() {
    static const std::map<std::string, PhonemeGroup> table = {
        // vowels
        {"iy", PhonemeGroup::Vowels},   {"ih", PhonemeGroup::Vowels},
        {"eh", PhonemeGroup::Vowels},   {"ey", PhonemeGroup::Vowels},
        {"ae", PhonemeGroup::Vowels},   {"aa", PhonemeGroup::Vowels},
        {"aw", PhonemeGroup::Vowels},   {"ay", PhonemeGroup::Vowels},
        {"ah", PhonemeGroup::Vowels},   {"ao", PhonemeGroup::Vowels},
        {"oy", PhonemeGroup::Vowels},   {"ow", PhonemeGroup::Vowels},
        {"uh", PhonemeGroup::Vowels},   {"uw", PhonemeGroup::Vowels},
        {"ux", PhonemeGroup::Vowels},   {"er", PhonemeGroup::Vowels},
        {"ax", PhonemeGroup::Vowels},   {"ix", PhonemeGroup::Vowels},
        {"axr", PhonemeGroup::Vowels},  {"ax-h", PhonemeGroup::Vowels},
        // semivowels and glides
        {"l", PhonemeGroup::SemivowelsGlides},  {"r", PhonemeGroup::SemivowelsGlides},
        {"w", PhonemeGroup::SemivowelsGlides},  {"y", PhonemeGroup::SemivowelsGlides},
        {"hh", PhonemeGroup::SemivowelsGlides}, {"hv", PhonemeGroup::SemivowelsGlides},
        {"el", PhonemeGroup::SemivowelsGlides},
        // nasals
        {"m", PhonemeGroup::Nasals},  {"n", PhonemeGroup::Nasals},
        {"ng", PhonemeGroup::Nasals}, {"em", PhonemeGroup::Nasals},
        {"en", PhonemeGroup::Nasals}, {"eng", PhonemeGroup::Nasals},
        {"nx", PhonemeGroup::Nasals},
        // fricatives and affricates
        {"s", PhonemeGroup::FricativesAffricates},  {"sh", PhonemeGroup::FricativesAffricates},
        {"z", PhonemeGroup::FricativesAffricates},  {"zh", PhonemeGroup::FricativesAffricates},
        {"f", PhonemeGroup::FricativesAffricates},  {"th", PhonemeGroup::FricativesAffricates},
        {"v", PhonemeGroup::FricativesAffricates},  {"dh", PhonemeGroup::FricativesAffricates},
        {"jh", PhonemeGroup::FricativesAffricates}, {"ch", PhonemeGroup::FricativesAffricates},
        // stops (the glottal stop q is excluded from the six classes)
        {"b", PhonemeGroup::Stops}, {"d", PhonemeGroup::Stops},
        {"g", PhonemeGroup::Stops}, {"p", PhonemeGroup::Stops},
        {"t", PhonemeGroup::Stops}, {"k", PhonemeGroup::Stops},
        {"dx", PhonemeGroup::Stops},
        // closures
        {"bcl", PhonemeGroup::Closures}, {"dcl", PhonemeGroup::Closures},
        {"gcl", PhonemeGroup::Closures}, {"pcl", PhonemeGroup::Closures},
        {"tcl", PhonemeGroup::Closures}, {"kcl", PhonemeGroup::Closures},
        {"h#", PhonemeGroup::Closures},
        // outside the six classes
        {"q", PhonemeGroup::Other},
        {"pau", PhonemeGroup::Other},
        {"epi", PhonemeGroup::Other},
        {"1", PhonemeGroup::Other},
        {"2", PhonemeGroup::Other},
    };
    return table;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

} // namespace

PhonemeGroup phoneme_group_of(const std::string& label) {
    const auto& table = phone_table();
    const auto it = table.find(label);
    if (it != table.end()) {
        return it->second;
    }
    static std::set<std::string> warned;
    if (warned.insert(label).second) {
        std::cerr << "warning: unknown phone code '" << label << "' mapped to other\n";
    }
    return PhonemeGroup::Other;
}

std::vector<PhonemeSegment> parse_phn(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("parse_phn: cannot open " + path);
    }
    std::vector<PhonemeSegment> segments;
    std::string line;
    int line_no = 0;
    std::int64_t prev_end = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::istringstream ls(line);
        PhonemeSegment seg;
        if (!(ls >> seg.start_sample >> seg.end_sample >> seg.label)) {
            throw ParseError("parse_phn: " + path + ":" + std::to_string(line_no) +
                             ": expected 'start end label'");
        }
        if (seg.start_sample < 0 || seg.end_sample <= seg.start_sample) {
            throw ParseError("parse_phn: " + path + ":" + std::to_string(line_no) +
                             ": segment [" + std::to_string(seg.start_sample) + "," +
                             std::to_string(seg.end_sample) + ") is empty or negative");
        }
        if (seg.start_sample < prev_end) {
            throw ParseError("parse_phn: " + path + ":" + std::to_string(line_no) +
                             ": segments overlap or are unordered");
        }
        seg.group = phoneme_group_of(seg.label);
        prev_end = seg.end_sample;
        segments.push_back(std::move(seg));
    }
    return segments;
}

std::vector<AlignedAttention> align_attention(const std::vector<AttentionMap>& maps,
                                              const std::vector<PhonemeSegment>& segments,
                                              const std::vector<LayerStride>& strides,
                                              const std::string& speaker_id) {
    std::vector<AlignedAttention> out;
    for (const auto& map : maps) {
        const auto stride_it =
            std::find_if(strides.begin(), strides.end(),
                         [&](const LayerStride& s) { return s.layer_id == map.layer_id; });
        if (stride_it == strides.end()) {
            throw DataError("align_attention: layer " + std::to_string(map.layer_id) +
                            " missing from the stride table");
        }
        const std::int64_t stride = stride_it->time_stride;
        const std::int64_t k = map.weights->shape[0];
        const std::int64_t bins = map.weights->shape[1];
        std::size_t seg_idx = 0;
        for (std::int64_t t = 0; t < bins; ++t) {
            // Center sample of the bin's span [t*s*160, (t+1)*s*160).
            const std::int64_t center = t * stride * kFrameHop + stride * kFrameHop / 2;
            while (seg_idx < segments.size() && segments[seg_idx].end_sample <= center) {
                ++seg_idx;
            }
            if (seg_idx >= segments.size() || center < segments[seg_idx].start_sample) {
                continue;
            }
            AlignedAttention rec;
            rec.layer_id = map.layer_id;
            rec.time_bin = t;
            rec.group = segments[seg_idx].group;
            rec.speaker_id = speaker_id;
            rec.attention.resize(static_cast<std::size_t>(k));
            for (std::int64_t ki = 0; ki < k; ++ki) {
                rec.attention[static_cast<std::size_t>(ki)] =
                    map.weights->data[static_cast<std::size_t>(ki * bins + t)];
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PCA via cyclic Jacobi on the sample covariance
// ---------------------------------------------------------------------------

namespace {

void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& eigenvalues,
                  std::vector<std::vector<double>>& eigenvectors) {
    const std::size_t n = a.size();
    eigenvectors.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        eigenvectors[i][i] = 1.0;
    }
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += a[p][q] * a[p][q];
            }
        }
        if (off < 1e-26) {
            break;
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::fabs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = eigenvectors[i][p], viq = eigenvectors[i][q];
                    eigenvectors[i][p] = c * vip - s * viq;
                    eigenvectors[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    eigenvalues.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        eigenvalues[i] = a[i][i];
    }
}

} // namespace

PcaProjection pca_project(const std::vector<std::vector<double>>& points) {
    if (points.size() < 3) {
        throw DataError("pca_project: need at least 3 points, got " +
                        std::to_string(points.size()));
    }
    const std::size_t k = points[0].size();
    if (k < 2) {
        throw DataError("pca_project: need dimension >= 2");
    }
    for (const auto& p : points) {
        if (p.size() != k) {
            throw DimensionError("pca_project: inconsistent point dimensions");
        }
    }
    const double n = static_cast<double>(points.size());
    std::vector<double> mean(k, 0.0);
    for (const auto& p : points) {
        for (std::size_t i = 0; i < k; ++i) {
            mean[i] += p[i];
        }
    }
    for (double& m : mean) {
        m /= n;
    }
    std::vector<std::vector<double>> cov(k, std::vector<double>(k, 0.0));
    for (const auto& p : points) {
        for (std::size_t i = 0; i < k; ++i) {
            const double di = p[i] - mean[i];
            for (std::size_t j = i; j < k; ++j) {
                cov[i][j] += di * (p[j] - mean[j]);
            }
        }
    }
    double total_var = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i; j < k; ++j) {
            cov[i][j] /= n - 1.0;
            cov[j][i] = cov[i][j];
        }
        total_var += cov[i][i];
    }
    if (total_var < 1e-24) {
        throw DataError("pca_project: degenerate rank-0 data (all points identical)");
    }

    std::vector<double> eigenvalues;
    std::vector<std::vector<double>> vectors;
    jacobi_eigen(cov, eigenvalues, vectors);

    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return eigenvalues[a] > eigenvalues[b]; });

    PcaProjection out;
    out.components.assign(2, std::vector<double>(k, 0.0));
    for (int c = 0; c < 2; ++c) {
        const std::size_t col = order[static_cast<std::size_t>(c)];
        out.explained_variance[static_cast<std::size_t>(c)] =
            std::max(0.0, eigenvalues[col]);
        for (std::size_t i = 0; i < k; ++i) {
            out.components[static_cast<std::size_t>(c)][i] = vectors[i][col];
        }
        // Sign convention: largest-magnitude coordinate positive.
        std::size_t arg = 0;
        for (std::size_t i = 1; i < k; ++i) {
            if (std::fabs(out.components[static_cast<std::size_t>(c)][i]) >
                std::fabs(out.components[static_cast<std::size_t>(c)][arg])) {
                arg = i;
            }
        }
        if (out.components[static_cast<std::size_t>(c)][arg] < 0.0) {
            for (double& v : out.components[static_cast<std::size_t>(c)]) {
                v = -v;
            }
        }
    }
    out.points.reserve(points.size());
    for (const auto& p : points) {
        std::array<double, 2> proj{0.0, 0.0};
        for (int c = 0; c < 2; ++c) {
            for (std::size_t i = 0; i < k; ++i) {
                proj[static_cast<std::size_t>(c)] +=
                    out.components[static_cast<std::size_t>(c)][i] * (p[i] - mean[i]);
            }
        }
        out.points.push_back(proj);
    }
    return out;
}

double group_dispersion(const std::vector<AlignedAttention>& aligned, int layer_id) {
    std::map<PhonemeGroup, std::vector<const AlignedAttention*>> groups;
    for (const auto& rec : aligned) {
        if (rec.layer_id == layer_id) {
            groups[rec.group].push_back(&rec);
        }
    }
    std::map<PhonemeGroup, std::vector<const AlignedAttention*>> kept;
    std::ostringstream counts;
    for (const auto& [group, recs] : groups) {
        counts << to_string(group) << "=" << recs.size() << " ";
        if (recs.size() >= 5) {
            kept.emplace(group, recs);
        }
    }
    if (kept.size() < 2) {
        throw DataError("group_dispersion: need >= 2 groups with >= 5 points at layer " +
                        std::to_string(layer_id) + " (" + counts.str() + ")");
    }
    const std::size_t k = kept.begin()->second.front()->attention.size();
    std::vector<double> grand(k, 0.0);
    std::size_t total = 0;
    std::map<PhonemeGroup, std::vector<double>> means;
    for (const auto& [group, recs] : kept) {
        std::vector<double> mu(k, 0.0);
        for (const auto* rec : recs) {
            for (std::size_t i = 0; i < k; ++i) {
                mu[i] += rec->attention[i];
            }
        }
        for (std::size_t i = 0; i < k; ++i) {
            grand[i] += mu[i];
            mu[i] /= static_cast<double>(recs.size());
        }
        total += recs.size();
        means.emplace(group, std::move(mu));
    }
    for (double& g : grand) {
        g /= static_cast<double>(total);
    }
    double between = 0.0, within = 0.0;
    for (const auto& [group, recs] : kept) {
        const auto& mu = means.at(group);
        for (std::size_t i = 0; i < k; ++i) {
            const double d = mu[i] - grand[i];
            between += static_cast<double>(recs.size()) * d * d;
        }
        for (const auto* rec : recs) {
            for (std::size_t i = 0; i < k; ++i) {
                const double d = rec->attention[i] - mu[i];
                within += d * d;
            }
        }
    }
    return between / std::max(within, 1e-30);
}

// ---------------------------------------------------------------------------
// Corpus analysis export
// ---------------------------------------------------------------------------

namespace {

struct CorpusUtterance {
    std::string wav_path;
    std::string phn_path;
    std::string speaker;
    std::string utt_name;
};

std::vector<CorpusUtterance> scan_labeled_corpus(const std::string& root) {
    auto files = scan_dataset(root);
    if (files.empty()) {
        throw DataError("export_analysis: no wav files under " + root);
    }
    std::vector<CorpusUtterance> out;
    for (const auto& f : files) {
        fs::path wav(f.path);
        fs::path phn = wav;
        phn.replace_extension(".phn");
        if (!fs::exists(phn)) {
            throw DataError("export_analysis: missing phoneme labels for " + f.path);
        }
        out.push_back({f.path, phn.string(), f.speaker_id, wav.stem().string()});
    }
    return out;
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string>& written) : written_(written) {}

    std::ofstream open(const std::string& path) {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw IoError("export_analysis: cannot write " + path);
        }
        written_.push_back(path);
        return out;
    }

private:
    std::vector<std::string>& written_;
};

} // namespace

AnalysisResult export_analysis(Model& model, const std::string& corpus_root,
                               const std::string& out_dir, const AnalysisOptions& opts) {
    if (model.config().conv_mode != ConvMode::Tdy) {
        throw ContractError("export_analysis: unsupported conv mode '" +
                            to_string(model.config().conv_mode) +
                            "' (attention analysis needs a tdy model)");
    }
    const auto& dyn = model.dynamic_layers();
    std::vector<int> layers = opts.layers;
    if (layers.empty()) {
        // Default: first, middle, last dynamic layer.
        const int n = static_cast<int>(dyn.size());
        layers = {0, n / 2, n - 1};
        layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
    }
    for (int layer : layers) {
        if (layer < 0 || layer >= static_cast<int>(dyn.size())) {
            throw ParameterError("export_analysis: layer index " + std::to_string(layer) +
                                 " out of range [0," + std::to_string(dyn.size()) + ")");
        }
    }
    auto corpus = scan_labeled_corpus(corpus_root);
    fs::create_directories(out_dir);

    std::vector<LayerStride> strides;
    for (const auto& info : dyn) {
        strides.push_back({info.index, info.time_stride});
    }

    const std::int64_t k = model.config().k;
    const std::int64_t d = model.embedding_dim();

    struct FrameRow {
        std::string speaker;
        PhonemeGroup group;
        std::int64_t time_bin;
        std::vector<double> embedding;
    };
    std::vector<AlignedAttention> aligned_all;
    std::map<std::string, std::vector<FrameRow>> frames_by_utt; // key: speaker/utt
    std::vector<std::string> utt_keys;

    for (const auto& utt : corpus) {
        auto wav = load_wav(utt.wav_path);
        auto segments = parse_phn(utt.phn_path);
        auto mel = normalize_per_freq(log_mel(wav));
        std::vector<AttentionMap> maps;
        auto frame_emb = embed_frames(model, mel, &maps); // [D, T_f]

        std::vector<AttentionMap> selected;
        for (int layer : layers) {
            selected.push_back(maps[static_cast<std::size_t>(layer)]);
        }
        auto aligned = align_attention(selected, segments, strides, utt.speaker);
        aligned_all.insert(aligned_all.end(), aligned.begin(), aligned.end());

        // Frame embeddings aligned at the final stride.
        std::vector<LayerStride> final_stride{{-1, model.final_time_stride()}};
        AttentionMap pseudo;
        pseudo.layer_id = -1;
        pseudo.weights = Tensor::zeros({1, frame_emb->shape[1]});
        auto frame_bins = align_attention({pseudo}, segments, final_stride, utt.speaker);
        const std::string key = utt.speaker + "/" + utt.utt_name;
        utt_keys.push_back(key);
        auto& rows = frames_by_utt[key];
        const std::int64_t t_f = frame_emb->shape[1];
        for (const auto& bin : frame_bins) {
            FrameRow row;
            row.speaker = utt.speaker;
            row.group = bin.group;
            row.time_bin = bin.time_bin;
            row.embedding.resize(static_cast<std::size_t>(d));
            for (std::int64_t j = 0; j < d; ++j) {
                row.embedding[static_cast<std::size_t>(j)] =
                    frame_emb->data[static_cast<std::size_t>(j * t_f + bin.time_bin)];
            }
            rows.push_back(std::move(row));
        }
    }

    AnalysisResult result;
    CsvWriter writer(result.files_written);
    try {
        // Per-layer attention CSVs with PCA projections.
        for (int layer : layers) {
            std::vector<const AlignedAttention*> recs;
            for (const auto& rec : aligned_all) {
                if (rec.layer_id == layer) {
                    recs.push_back(&rec);
                }
            }
            // Projection cells: per speaker when split, pooled otherwise.
            std::map<std::string, std::vector<const AlignedAttention*>> cells;
            for (const auto* rec : recs) {
                cells[opts.per_speaker ? rec->speaker_id : std::string("all")].push_back(rec);
            }
            std::map<const AlignedAttention*, std::array<double, 2>> projected;
            for (const auto& [cell, cell_recs] : cells) {
                (void)cell;
                if (cell_recs.size() < 3) {
                    for (const auto* rec : cell_recs) {
                        projected[rec] = {0.0, 0.0};
                    }
                    continue;
                }
                std::vector<std::vector<double>> pts;
                pts.reserve(cell_recs.size());
                for (const auto* rec : cell_recs) {
                    pts.push_back(rec->attention);
                }
                try {
                    auto proj = pca_project(pts);
                    for (std::size_t i = 0; i < cell_recs.size(); ++i) {
                        projected[cell_recs[i]] = proj.points[i];
                    }
                } catch (const DataError&) {
                    for (const auto* rec : cell_recs) {
                        projected[rec] = {0.0, 0.0};
                    }
                }
            }
            auto out = writer.open((fs::path(out_dir) /
                                    ("attention_layer" + std::to_string(layer) + ".csv"))
                                       .string());
            out << "speaker,group,time_bin";
            for (std::int64_t i = 1; i <= k; ++i) {
                out << ",pi_" << i;
            }
            out << ",pc1,pc2\n";
            for (const auto* rec : recs) {
                out << rec->speaker_id << ',' << to_string(rec->group) << ',' << rec->time_bin;
                for (double v : rec->attention) {
                    out << ',' << fmt(v);
                }
                const auto& pc = projected.at(rec);
                out << ',' << fmt(pc[0]) << ',' << fmt(pc[1]) << '\n';
            }
        }

        // Per-utterance frame embeddings.
        for (const auto& key : utt_keys) {
            const auto& rows = frames_by_utt.at(key);
            std::string flat = key;
            std::replace(flat.begin(), flat.end(), '/', '_');
            auto out = writer.open(
                (fs::path(out_dir) / ("frames_" + flat + ".csv")).string());
            out << "speaker,group,time_bin";
            for (std::int64_t j = 1; j <= d; ++j) {
                out << ",e_" << j;
            }
            out << '\n';
            for (const auto& row : rows) {
                out << row.speaker << ',' << to_string(row.group) << ',' << row.time_bin;
                for (double v : row.embedding) {
                    out << ',' << fmt(v);
                }
                out << '\n';
            }
        }

        // Per-speaker attention variance, the paper's speaker-selection aid.
        {
            std::map<std::string, std::vector<const AlignedAttention*>> by_speaker;
            for (const auto& rec : aligned_all) {
                by_speaker[rec.speaker_id].push_back(&rec);
            }
            auto out = writer.open((fs::path(out_dir) / "speaker_variance.csv").string());
            out << "speaker,records,total_variance\n";
            for (const auto& [speaker, recs] : by_speaker) {
                const std::size_t kk = recs.front()->attention.size();
                std::vector<double> mean(kk, 0.0);
                for (const auto* rec : recs) {
                    for (std::size_t i = 0; i < kk; ++i) mean[i] += rec->attention[i];
                }
                for (double& m : mean) m /= static_cast<double>(recs.size());
                double total = 0.0;
                for (const auto* rec : recs) {
                    for (std::size_t i = 0; i < kk; ++i) {
                        const double dv = rec->attention[i] - mean[i];
                        total += dv * dv;
                    }
                }
                total /= static_cast<double>(recs.size());
                result.speaker_variance.push_back(
                    {speaker, static_cast<std::int64_t>(recs.size()), total});
                out << speaker << ',' << recs.size() << ',' << fmt(total) << '\n';
            }
        }

        // Dispersion summary.
        auto out = writer.open((fs::path(out_dir) / "dispersion_summary.csv").string());
        out << "layer_id,speaker,points,dispersion_ratio\n";
        std::set<std::string> speakers;
        for (const auto& rec : aligned_all) {
            speakers.insert(rec.speaker_id);
        }
        for (int layer : layers) {
            std::vector<std::string> cells;
            if (opts.per_speaker) {
                cells.assign(speakers.begin(), speakers.end());
            } else {
                cells.push_back("all");
            }
            for (const auto& cell : cells) {
                std::vector<AlignedAttention> subset;
                for (const auto& rec : aligned_all) {
                    if (rec.layer_id == layer &&
                        (!opts.per_speaker || rec.speaker_id == cell)) {
                        subset.push_back(rec);
                    }
                }
                try {
                    const double ratio = group_dispersion(subset, layer);
                    result.summary.push_back(
                        {layer, cell, static_cast<std::int64_t>(subset.size()), ratio});
                    out << layer << ',' << cell << ',' << subset.size() << ',' << fmt(ratio)
                        << '\n';
                } catch (const DataError&) {
                    // Cell lacks enough labeled bins; omit from the summary.
                }
            }
        }
    } catch (...) {
        for (const auto& path : result.files_written) {
            std::error_code ec;
            fs::remove(path, ec);
        }
        throw;
    }
    return result;
}

} // namespace tdy
