#include "tdy/config.hpp"

#include <fstream>
#include <sstream>

namespace tdy {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& value, const std::string& key, int line_no) {
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(value);
        }
        return v;
    } catch (const std::exception&) {
        throw ParseError("config line " + std::to_string(line_no) + ": key '" + key +
                         "' needs an integer, got '" + value + "'");
    }
}

double parse_real(const std::string& value, const std::string& key, int line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(value);
        }
        return v;
    } catch (const std::exception&) {
        throw ParseError("config line " + std::to_string(line_no) + ": key '" + key +
                         "' needs a number, got '" + value + "'");
    }
}

} // namespace

AppConfig parse_app_config(const std::string& text) {
    AppConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ParseError("config line " + std::to_string(line_no) +
                                 ": malformed section header '" + t + "'");
            }
            section = t.substr(1, t.size() - 2);
            if (section != "model" && section != "train" && section != "synth") {
                throw ParseError("config line " + std::to_string(line_no) +
                                 ": unknown section '" + section + "'");
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(line_no) +
                             ": expected 'key = value', got '" + t + "'");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (section.empty()) {
            throw ParseError("config line " + std::to_string(line_no) + ": key '" + key +
                             "' appears outside any section");
        }
        if (section == "model") {
            if (key == "family") {
                cfg.model.family = value;
            } else if (key == "depth") {
                cfg.model.depth.clear();
                std::istringstream ds(value);
                std::string tok;
                while (std::getline(ds, tok, ',')) {
                    cfg.model.depth.push_back(
                        static_cast<int>(parse_int(trim(tok), key, line_no)));
                }
            } else if (key == "channel_scale") {
                cfg.model.channel_scale = parse_real(value, key, line_no);
            } else if (key == "conv_mode") {
                cfg.model.conv_mode = conv_mode_from_string(value);
            } else if (key == "k") {
                cfg.model.k = static_cast<int>(parse_int(value, key, line_no));
            } else if (key == "embedding_dim") {
                cfg.model.embedding_dim = parse_int(value, key, line_no);
            } else {
                throw ParseError("config line " + std::to_string(line_no) +
                                 ": unknown [model] key '" + key + "'");
            }
        } else if (section == "train") {
            if (key == "lr0") {
                cfg.train.lr0 = parse_real(value, key, line_no);
            } else if (key == "lr_decay") {
                cfg.train.lr_decay = parse_real(value, key, line_no);
            } else if (key == "lr_decay_epochs") {
                cfg.train.lr_decay_epochs = static_cast<int>(parse_int(value, key, line_no));
            } else if (key == "weight_decay") {
                cfg.train.weight_decay = parse_real(value, key, line_no);
            } else if (key == "batch_speakers") {
                cfg.train.batch_speakers = static_cast<int>(parse_int(value, key, line_no));
            } else if (key == "utterances_per_speaker") {
                cfg.train.utterances_per_speaker =
                    static_cast<int>(parse_int(value, key, line_no));
            } else if (key == "epochs") {
                cfg.train.epochs = static_cast<int>(parse_int(value, key, line_no));
            } else if (key == "temp_hi") {
                cfg.train.temp_hi = parse_real(value, key, line_no);
            } else if (key == "temp_lo") {
                cfg.train.temp_lo = parse_real(value, key, line_no);
            } else if (key == "temp_epochs") {
                cfg.train.temp_epochs = static_cast<int>(parse_int(value, key, line_no));
            } else if (key == "seed") {
                cfg.train.seed = static_cast<std::uint64_t>(parse_int(value, key, line_no));
            } else {
                throw ParseError("config line " + std::to_string(line_no) +
                                 ": unknown [train] key '" + key + "'");
            }
        } else { // synth
            if (key == "num_speakers") {
                cfg.synth.num_speakers = static_cast<int>(parse_int(value, key, line_no));
            } else if (key == "utterances_per_speaker") {
                cfg.synth.utterances_per_speaker =
                    static_cast<int>(parse_int(value, key, line_no));
            } else if (key == "seed") {
                cfg.synth.seed = static_cast<std::uint64_t>(parse_int(value, key, line_no));
            } else if (key == "min_seconds") {
                cfg.synth.min_seconds = parse_real(value, key, line_no);
            } else if (key == "max_seconds") {
                cfg.synth.max_seconds = parse_real(value, key, line_no);
            } else {
                throw ParseError("config line " + std::to_string(line_no) +
                                 ": unknown [synth] key '" + key + "'");
            }
        }
    }
    return cfg;
}

AppConfig load_app_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("config: cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_app_config(ss.str());
}

} // namespace tdy
