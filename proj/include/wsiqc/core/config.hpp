#pragma once

#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wsiqc/common/errors.hpp"

namespace wsiqc {

enum class Optimizer { adam, adamax, rmsprop, sgd };

// dice_bce combines dice and binary cross entropy; kept as an explicit
// variant so the combined segmentation loss is selectable from a config.
enum class Loss {
    dice_coef_loss,
    binary_cross_entropy,
    categorical_cross_entropy,
    kl_divergence,
    dice_bce
};

enum class Architecture { double_unet, resunet_pp, unet_baseline };

inline const char* to_string(Optimizer o) {
    switch (o) {
        case Optimizer::adam: return "adam";
        case Optimizer::adamax: return "adamax";
        case Optimizer::rmsprop: return "rmsprop";
        case Optimizer::sgd: return "sgd";
    }
    return "?";
}

inline const char* to_string(Loss l) {
    switch (l) {
        case Loss::dice_coef_loss: return "dice_coef_loss";
        case Loss::binary_cross_entropy: return "binary_cross_entropy";
        case Loss::categorical_cross_entropy: return "categorical_cross_entropy";
        case Loss::kl_divergence: return "kl_divergence";
        case Loss::dice_bce: return "dice_bce";
    }
    return "?";
}

inline const char* to_string(Architecture a) {
    switch (a) {
        case Architecture::double_unet: return "double_unet";
        case Architecture::resunet_pp: return "resunet_pp";
        case Architecture::unet_baseline: return "unet_baseline";
    }
    return "?";
}

inline Optimizer optimizer_from_string(const std::string& s) {
    if (s == "adam") return Optimizer::adam;
    if (s == "adamax") return Optimizer::adamax;
    if (s == "rmsprop") return Optimizer::rmsprop;
    if (s == "sgd") return Optimizer::sgd;
    throw DataError("unknown optimizer: '" + s + "'");
}

inline Loss loss_from_string(const std::string& s) {
    if (s == "dice_coef_loss") return Loss::dice_coef_loss;
    if (s == "binary_cross_entropy") return Loss::binary_cross_entropy;
    if (s == "categorical_cross_entropy") return Loss::categorical_cross_entropy;
    if (s == "kl_divergence") return Loss::kl_divergence;
    if (s == "dice_bce") return Loss::dice_bce;
    throw DataError("unknown loss: '" + s + "'");
}

inline Architecture architecture_from_string(const std::string& s) {
    if (s == "double_unet") return Architecture::double_unet;
    if (s == "resunet_pp") return Architecture::resunet_pp;
    if (s == "unet_baseline") return Architecture::unet_baseline;
    throw DataError("unknown architecture: '" + s + "'");
}

struct PlateauParams {
    double factor = 0.1;
    int patience = 4;
};

struct RunConfig {
    std::int64_t seed = 42;
    int batch_size = 8;
    int epochs = 100;
    double learning_rate = 1e-4;
    Optimizer optimizer = Optimizer::rmsprop;
    Loss loss = Loss::dice_coef_loss;
    PlateauParams plateau;
    int early_stop_patience = 10;
    Architecture model = Architecture::resunet_pp;
    double width_scale = 1.0;

    bool operator==(const RunConfig& o) const {
        return seed == o.seed && batch_size == o.batch_size && epochs == o.epochs &&
               learning_rate == o.learning_rate && optimizer == o.optimizer &&
               loss == o.loss && plateau.factor == o.plateau.factor &&
               plateau.patience == o.plateau.patience &&
               early_stop_patience == o.early_stop_patience && model == o.model &&
               width_scale == o.width_scale;
    }
};

// Returns one human-readable entry per violated field invariant;
// empty means the config is usable.
inline std::vector<std::string> validate_config(const RunConfig& cfg) {
    std::vector<std::string> out;
    auto fail = [&](const std::string& msg) { out.push_back(msg); };
    if (cfg.batch_size < 1) fail("batch_size must be >= 1");
    if (cfg.epochs < 1) fail("epochs must be >= 1");
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
        fail("learning_rate must be > 0");
    if (!(cfg.plateau.factor > 0.0 && cfg.plateau.factor < 1.0))
        fail("plateau.factor must lie in (0,1)");
    if (cfg.plateau.patience < 1) fail("plateau.patience must be >= 1");
    if (cfg.early_stop_patience < 1) fail("early_stop_patience must be >= 1");
    if (!(cfg.width_scale > 0.0 && cfg.width_scale <= 1.0))
        fail("width_scale must lie in (0,1]");
    return out;
}

namespace detail {
inline std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline double parse_double(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError("config: bad numeric value '" + s + "' for key " + key);
    }
}

inline std::int64_t parse_int(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError("config: bad integer value '" + s + "' for key " + key);
    }
}

// Shortest representation that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    for (int prec = 6; prec < 17; ++prec) {
        char candidate[32];
        std::snprintf(candidate, sizeof(candidate), "%.*g", prec, v);
        std::sscanf(candidate, "%lf", &back);
        if (back == v) return candidate;
    }
    return buf;
}
}  // namespace detail

// Flat key=value text; keys match the RunConfig field names. The plateau
// pair is written as "factor,patience". '#' starts a comment line.
inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "seed=" << cfg.seed << "\n";
    os << "batch_size=" << cfg.batch_size << "\n";
    os << "epochs=" << cfg.epochs << "\n";
    os << "learning_rate=" << detail::fmt_double(cfg.learning_rate) << "\n";
    os << "optimizer=" << to_string(cfg.optimizer) << "\n";
    os << "loss=" << to_string(cfg.loss) << "\n";
    os << "plateau=" << detail::fmt_double(cfg.plateau.factor) << ","
       << cfg.plateau.patience << "\n";
    os << "early_stop_patience=" << cfg.early_stop_patience << "\n";
    os << "model=" << to_string(cfg.model) << "\n";
    os << "width_scale=" << detail::fmt_double(cfg.width_scale) << "\n";
    return os.str();
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(line_no) +
                            ": expected key=value, got '" + t + "'");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string val = detail::trim(t.substr(eq + 1));
        if (key == "seed") cfg.seed = detail::parse_int(val, key);
        else if (key == "batch_size") cfg.batch_size = static_cast<int>(detail::parse_int(val, key));
        else if (key == "epochs") cfg.epochs = static_cast<int>(detail::parse_int(val, key));
        else if (key == "learning_rate") cfg.learning_rate = detail::parse_double(val, key);
        else if (key == "optimizer") cfg.optimizer = optimizer_from_string(val);
        else if (key == "loss") cfg.loss = loss_from_string(val);
        else if (key == "plateau") {
            const auto comma = val.find(',');
            if (comma == std::string::npos)
                throw DataError("config line " + std::to_string(line_no) +
                                ": plateau expects 'factor,patience'");
            cfg.plateau.factor = detail::parse_double(detail::trim(val.substr(0, comma)), key);
            cfg.plateau.patience =
                static_cast<int>(detail::parse_int(detail::trim(val.substr(comma + 1)), key));
        } else if (key == "early_stop_patience")
            cfg.early_stop_patience = static_cast<int>(detail::parse_int(val, key));
        else if (key == "model") cfg.model = architecture_from_string(val);
        else if (key == "width_scale") cfg.width_scale = detail::parse_double(val, key);
        else
            throw DataError("config line " + std::to_string(line_no) + ": unknown key '" +
                            key + "'");
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

inline void save_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write config file: " + path);
    out << serialize_config(cfg);
}

}  // namespace wsiqc
