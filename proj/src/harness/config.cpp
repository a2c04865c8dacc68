#include <fstream>
#include <set>
#include <sstream>

#include "opnet/errors.hpp"
#include "opnet/harness.hpp"

namespace opnet {

namespace {

using nlohmann::json;

template <class T>
void read_key(const json& obj, const char* key, T& into) {
    if (!obj.contains(key)) return;
    try {
        into = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        if (!known.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    }
}

}  // namespace

void HarnessConfig::validate() const {
    if (heads == 0) throw ConfigError("heads must be positive");
    if (channels == 0) throw ConfigError("channels must be positive");
    if (channels % heads != 0) {
        throw ConfigError("channels C=" + std::to_string(channels) +
                          " is not divisible by heads P=" + std::to_string(heads));
    }
    if (strides != kPyramidStrides) throw ConfigError("strides must be [4,8,16,32,64]");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (batch == 0 || s2_height == 0 || s2_width == 0) {
        throw ConfigError("batch and S2 extents must be positive");
    }
    if (init != "random" && init != "identity") {
        throw ConfigError("init must be 'random' or 'identity', got '" + init + "'");
    }
    if (!(gradcheck_epsilon > 0.0)) throw ConfigError("gradcheck epsilon must be positive");
    if (!(gradcheck_threshold >= 0.0)) throw ConfigError("gradcheck threshold must be >= 0");
    if (gradcheck_seeds == 0) throw ConfigError("gradcheck seeds must be positive");
    sgd.validate();
    if (toy_heads == 0 || toy_channels == 0 || toy_channels % toy_heads != 0) {
        throw ConfigError("toy channels must be a positive multiple of toy heads");
    }
    if (toy_s2 == 0) throw ConfigError("toy S2 extent must be positive");
    if (steps == 0) throw ConfigError("steps must be at least 1");
    if (!(perturb >= 0.0 && perturb <= 1.0)) throw ConfigError("perturb must lie in [0, 1]");
}

HarnessConfig HarnessConfig::from_json(const json& doc) {
    HarnessConfig cfg;
    reject_unknown(doc,
                   {"channels", "heads", "strides", "temperature", "batch", "s2_height",
                    "s2_width", "seed", "init", "gradcheck", "sgd", "toy", "mismatch"},
                   "");
    read_key(doc, "channels", cfg.channels);
    read_key(doc, "heads", cfg.heads);
    read_key(doc, "strides", cfg.strides);
    read_key(doc, "temperature", cfg.temperature);
    read_key(doc, "batch", cfg.batch);
    read_key(doc, "s2_height", cfg.s2_height);
    read_key(doc, "s2_width", cfg.s2_width);
    read_key(doc, "seed", cfg.seed);
    read_key(doc, "init", cfg.init);
    if (doc.contains("gradcheck")) {
        const json& g = doc["gradcheck"];
        reject_unknown(g, {"epsilon", "threshold", "seeds"}, "gradcheck.");
        read_key(g, "epsilon", cfg.gradcheck_epsilon);
        read_key(g, "threshold", cfg.gradcheck_threshold);
        read_key(g, "seeds", cfg.gradcheck_seeds);
    }
    if (doc.contains("sgd")) {
        const json& s = doc["sgd"];
        reject_unknown(s, {"learning_rate", "weight_decay", "momentum"}, "sgd.");
        read_key(s, "learning_rate", cfg.sgd.learning_rate);
        read_key(s, "weight_decay", cfg.sgd.weight_decay);
        read_key(s, "momentum", cfg.sgd.momentum);
    }
    if (doc.contains("toy")) {
        const json& t = doc["toy"];
        reject_unknown(t, {"channels", "heads", "s2", "steps"}, "toy.");
        read_key(t, "channels", cfg.toy_channels);
        read_key(t, "heads", cfg.toy_heads);
        read_key(t, "s2", cfg.toy_s2);
        read_key(t, "steps", cfg.steps);
    }
    if (doc.contains("mismatch")) {
        const json& m = doc["mismatch"];
        reject_unknown(m, {"perturb", "boxes"}, "mismatch.");
        read_key(m, "perturb", cfg.perturb);
        read_key(m, "boxes", cfg.boxes);
    }
    return cfg;
}

json HarnessConfig::to_json() const {
    json doc;
    doc["channels"] = channels;
    doc["heads"] = heads;
    doc["strides"] = strides;
    doc["temperature"] = temperature;
    doc["batch"] = batch;
    doc["s2_height"] = s2_height;
    doc["s2_width"] = s2_width;
    doc["seed"] = seed;
    doc["init"] = init;
    doc["gradcheck"] = {{"epsilon", gradcheck_epsilon},
                        {"threshold", gradcheck_threshold},
                        {"seeds", gradcheck_seeds}};
    doc["sgd"] = {{"learning_rate", sgd.learning_rate},
                  {"weight_decay", sgd.weight_decay},
                  {"momentum", sgd.momentum}};
    doc["toy"] = {{"channels", toy_channels}, {"heads", toy_heads}, {"s2", toy_s2},
                  {"steps", steps}};
    doc["mismatch"] = {{"perturb", perturb}, {"boxes", boxes}};
    return doc;
}

HarnessConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return HarnessConfig::from_json(doc);
}

GradScope parse_scope(const std::string& text) {
    if (text == "primitive") return GradScope::Primitive;
    if (text == "attention") return GradScope::Attention;
    if (text == "pyramid") return GradScope::Pyramid;
    if (text == "all") return GradScope::All;
    throw ConfigError("unknown gradcheck scope '" + text +
                      "' (expected primitive|attention|pyramid|all)");
}

std::vector<std::pair<std::size_t, std::size_t>> parse_sweep(const std::string& text) {
    std::vector<std::size_t> heads, channels;
    std::istringstream words(text);
    std::string word;
    while (words >> word) {
        const auto eq = word.find('=');
        if (eq == std::string::npos) throw ConfigError("sweep term '" + word + "' lacks '='");
        const std::string key = word.substr(0, eq);
        std::vector<std::size_t>* into = key == "P" ? &heads : key == "C" ? &channels : nullptr;
        if (into == nullptr) throw ConfigError("sweep key must be P or C, got '" + key + "'");
        std::istringstream values(word.substr(eq + 1));
        std::string item;
        while (std::getline(values, item, ',')) {
            try {
                std::size_t used = 0;
                const unsigned long v = std::stoul(item, &used);
                if (used != item.size() || v == 0) throw std::invalid_argument(item);
                into->push_back(v);
            } catch (const std::exception&) {
                throw ConfigError("bad sweep value '" + item + "'");
            }
        }
    }
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (heads.empty() && channels.empty()) return out;
    if (heads.empty() || channels.empty()) {
        throw ConfigError("sweep needs both P=... and C=... lists");
    }
    for (std::size_t c : channels) {
        for (std::size_t p : heads) {
            if (c % p != 0) {
                throw ConfigError("sweep pair C=" + std::to_string(c) +
                                  " is not divisible by P=" + std::to_string(p));
            }
            out.emplace_back(p, c);
        }
    }
    return out;
}

OpNetParams make_params(const HarnessConfig& cfg, std::size_t channels) {
    if (cfg.init == "identity") return OpNetParams::residual_identity(channels);
    std::mt19937_64 rng(cfg.seed);
    return OpNetParams::random(channels, rng);
}

}  // namespace opnet
