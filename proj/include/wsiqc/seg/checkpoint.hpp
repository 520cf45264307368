#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/seg/architectures.hpp"

namespace wsiqc {
namespace nn {

// Self-describing parameter archive: a magic line, a JSON header with the
// named shapes, then the raw little-endian doubles in header order.
inline constexpr const char* kCheckpointMagic = "WSIQC1";

inline nlohmann::json param_meta(const ParamStore& store) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : store.params()) {
        nlohmann::json j;
        j["name"] = p.name;
        j["shape"] = {p.node->value.n, p.node->value.h, p.node->value.w, p.node->value.c};
        j["trainable"] = p.trainable;
        arr.push_back(j);
    }
    return arr;
}

inline void write_checkpoint(const std::string& path, nlohmann::json header,
                             const ParamStore& store) {
    header["params"] = param_meta(store);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << kCheckpointMagic << '\n' << header.dump() << '\n';
    for (const auto& p : store.params())
        out.write(reinterpret_cast<const char*>(p.node->value.v.data()),
                  static_cast<std::streamsize>(p.node->value.v.size() * sizeof(double)));
    if (!out) throw DataError("short write on checkpoint: " + path);
}

inline nlohmann::json read_checkpoint_header(std::ifstream& in, const std::string& path) {
    std::string magic, header_line;
    if (!std::getline(in, magic) || magic != kCheckpointMagic)
        throw DataError("not a checkpoint file: " + path);
    if (!std::getline(in, header_line))
        throw DataError("checkpoint missing header: " + path);
    try {
        return nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint header corrupt in " + path + ": " + e.what());
    }
}

// Loads parameter values into an already-built store; names and shapes
// must match exactly.
inline void read_checkpoint_params(std::ifstream& in, const std::string& path,
                                   const nlohmann::json& header, ParamStore& store) {
    const auto& meta = header.at("params");
    if (meta.size() != store.params().size())
        throw DataError("checkpoint " + path + ": expected " +
                        std::to_string(store.params().size()) + " parameters, file has " +
                        std::to_string(meta.size()));
    for (std::size_t i = 0; i < store.params().size(); ++i) {
        auto& p = store.params()[i];
        const auto& m = meta[i];
        if (m.at("name").get<std::string>() != p.name)
            throw DataError("checkpoint " + path + ": parameter " + std::to_string(i) +
                            " is '" + m.at("name").get<std::string>() + "', model expects '" +
                            p.name + "'");
        const auto shape = m.at("shape");
        const Tensor& t = p.node->value;
        if (shape[0] != t.n || shape[1] != t.h || shape[2] != t.w || shape[3] != t.c)
            throw DataError("checkpoint " + path + ": shape mismatch on " + p.name);
        in.read(reinterpret_cast<char*>(p.node->value.v.data()),
                static_cast<std::streamsize>(p.node->value.v.size() * sizeof(double)));
        if (!in) throw DataError("checkpoint " + path + ": truncated data for " + p.name);
    }
}

}  // namespace nn

namespace seg {

inline void save_checkpoint(const SegModel& model, const std::string& path) {
    nlohmann::json header;
    header["kind"] = "segmenter";
    header["architecture"] = to_string(model.architecture);
    header["width_scale"] = model.width_scale;
    header["input_shape"] = {model.input_h, model.input_w, 3};
    nn::write_checkpoint(path, header, model.store);
}

inline SegModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    const auto header = nn::read_checkpoint_header(in, path);
    if (header.value("kind", "") != "segmenter")
        throw DataError("checkpoint " + path + " is not a segmenter archive");
    SegModel model = build_segmenter(
        architecture_from_string(header.at("architecture").get<std::string>()),
        header.at("input_shape")[0].get<int>(), header.at("input_shape")[1].get<int>(),
        header.at("width_scale").get<double>());
    nn::read_checkpoint_params(in, path, header, model.store);
    return model;
}

// Copies values for every checkpoint parameter whose name carries the
// given prefix; the hook for pre-trained encoder weights.
inline std::size_t load_weights_by_prefix(SegModel& model, const std::string& path,
                                          const std::string& prefix) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open weights file: " + path);
    const auto header = nn::read_checkpoint_header(in, path);
    std::size_t loaded = 0;
    for (const auto& m : header.at("params")) {
        const std::string name = m.at("name").get<std::string>();
        const auto shape = m.at("shape");
        const std::size_t count = shape[0].get<std::size_t>() * shape[1].get<std::size_t>() *
                                  shape[2].get<std::size_t>() * shape[3].get<std::size_t>();
        std::vector<double> buf(count);
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw DataError("weights file " + path + ": truncated at " + name);
        if (name.rfind(prefix, 0) != 0) continue;
        const auto* p = model.store.find(name);
        if (!p || p->node->value.v.size() != count) continue;
        std::copy(buf.begin(), buf.end(), p->node->value.v.begin());
        ++loaded;
    }
    return loaded;
}

}  // namespace seg
}  // namespace wsiqc
