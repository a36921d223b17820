// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file checkpoint.hpp
 * @brief Model checkpoints: a JSON manifest naming each parameter array with
 *        shape and byte offset, plus one raw binary file of little-endian
 *        f64 values in manifest order. Shared by the flow and NQS models.
 */

#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flownqs/flow.hpp"
#include "flownqs/nqs.hpp"

static_assert(__BYTE_ORDER__ == __ORDER_LITTLE_ENDIAN__,
              "checkpoint format is little-endian");

namespace flownqs {

namespace ckpt_detail {

struct NamedParam {
    std::string name;
    const ad::Tensor* tensor;
};

inline std::vector<NamedParam> named_params(const FlowModel& m) {
    std::vector<NamedParam> out;
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const Mlp& net = m.layers[li].net;
        for (std::size_t d = 0; d < net.layers.size(); ++d) {
            std::string base = "coupling" + std::to_string(li) + ".dense" + std::to_string(d);
            out.push_back({base + ".w", &net.layers[d].w});
            out.push_back({base + ".b", &net.layers[d].b});
        }
    }
    return out;
}

inline std::vector<NamedParam> named_params(const NqsModel& m) {
    std::vector<NamedParam> out;
    for (std::size_t d = 0; d < m.net.layers.size(); ++d) {
        std::string base = "dense" + std::to_string(d);
        out.push_back({base + ".w", &m.net.layers[d].w});
        out.push_back({base + ".b", &m.net.layers[d].b});
    }
    return out;
}

inline void write_files(const std::filesystem::path& stem, const std::string& kind,
                        const nlohmann::json& meta, const std::vector<NamedParam>& params) {
    nlohmann::json manifest;
    manifest["format"] = "flownqs-checkpoint-v1";
    manifest["model"] = kind;
    manifest["dtype"] = "f64le";
    manifest["meta"] = meta;
    nlohmann::json arrays = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const NamedParam& p : params) {
        arrays.push_back({{"name", p.name},
                          {"shape", {p.tensor->rows(), p.tensor->cols()}},
                          {"offset", offset}});
        offset += p.tensor->size() * sizeof(double);
    }
    manifest["arrays"] = std::move(arrays);

    std::filesystem::path json_path = stem;
    json_path += ".json";
    std::filesystem::path bin_path = stem;
    bin_path += ".bin";

    std::ofstream jf(json_path);
    if (!jf) throw std::runtime_error("checkpoint: cannot write " + json_path.string());
    jf << manifest.dump(2) << "\n";

    std::ofstream bf(bin_path, std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint: cannot write " + bin_path.string());
    for (const NamedParam& p : params)
        bf.write(reinterpret_cast<const char*>(p.tensor->data.data()),
                 static_cast<std::streamsize>(p.tensor->size() * sizeof(double)));
}

inline nlohmann::json read_manifest(const std::filesystem::path& stem, const std::string& kind) {
    std::filesystem::path json_path = stem;
    json_path += ".json";
    std::ifstream jf(json_path);
    if (!jf) throw std::runtime_error("checkpoint: cannot open " + json_path.string());
    nlohmann::json manifest = nlohmann::json::parse(jf);
    if (manifest.value("format", "") != "flownqs-checkpoint-v1")
        throw std::runtime_error("checkpoint: unrecognized format in " + json_path.string());
    if (manifest.value("model", "") != kind)
        throw std::runtime_error("checkpoint: expected a '" + kind + "' model in " +
                                 json_path.string());
    return manifest;
}

inline void read_arrays(const std::filesystem::path& stem, const nlohmann::json& manifest,
                        std::vector<NamedParam>& params) {
    std::filesystem::path bin_path = stem;
    bin_path += ".bin";
    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint: cannot open " + bin_path.string());

    const auto& arrays = manifest.at("arrays");
    if (arrays.size() != params.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& a = arrays.at(i);
        if (a.at("name").get<std::string>() != params[i].name)
            throw std::runtime_error("checkpoint: unexpected array '" +
                                     a.at("name").get<std::string>() + "', wanted '" +
                                     params[i].name + "'");
        auto shape = a.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2 || shape[0] != params[i].tensor->rows() ||
            shape[1] != params[i].tensor->cols())
            throw std::runtime_error("checkpoint: shape mismatch for '" + params[i].name + "'");
        bf.seekg(static_cast<std::streamoff>(a.at("offset").get<std::uint64_t>()));
        auto* dst = const_cast<ad::Tensor*>(params[i].tensor);
        bf.read(reinterpret_cast<char*>(dst->data.data()),
                static_cast<std::streamsize>(dst->size() * sizeof(double)));
        if (!bf) throw std::runtime_error("checkpoint: short read for '" + params[i].name + "'");
    }
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::filesystem::path& stem, const FlowModel& m) {
    nlohmann::json meta = {{"n", m.n},
                           {"d", m.d},
                           {"coupling_layers", m.layers.size()},
                           {"hidden_width", m.layers[0].net.layers[0].w.cols()},
                           {"hidden_layers", m.layers[0].net.layers.size() - 1}};
    ckpt_detail::write_files(stem, "flow", meta, ckpt_detail::named_params(m));
}

inline void save_checkpoint(const std::filesystem::path& stem, const NqsModel& m) {
    nlohmann::json meta = {{"n", m.n},
                           {"hidden_width", m.net.layers[0].w.cols()},
                           {"hidden_layers", m.net.layers.size() - 1}};
    ckpt_detail::write_files(stem, "nqs", meta, ckpt_detail::named_params(m));
}

inline FlowModel load_flow_checkpoint(const std::filesystem::path& stem) {
    nlohmann::json manifest = ckpt_detail::read_manifest(stem, "flow");
    const auto& meta = manifest.at("meta");
    FlowModel m = FlowModel::make(meta.at("n").get<int>(),
                                  meta.at("coupling_layers").get<int>(),
                                  meta.at("hidden_width").get<std::size_t>(),
                                  meta.at("hidden_layers").get<std::size_t>());
    auto params = ckpt_detail::named_params(m);
    ckpt_detail::read_arrays(stem, manifest, params);
    return m;
}

inline NqsModel load_nqs_checkpoint(const std::filesystem::path& stem) {
    nlohmann::json manifest = ckpt_detail::read_manifest(stem, "nqs");
    const auto& meta = manifest.at("meta");
    NqsModel m = NqsModel::make(meta.at("n").get<int>(),
                                meta.at("hidden_width").get<std::size_t>(),
                                meta.at("hidden_layers").get<std::size_t>());
    auto params = ckpt_detail::named_params(m);
    ckpt_detail::read_arrays(stem, manifest, params);
    return m;
}

}  // namespace flownqs
