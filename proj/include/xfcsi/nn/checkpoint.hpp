// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <type_traits>

#include "xfcsi/io.hpp"
#include "xfcsi/nn/tensor.hpp"

namespace xfcsi::nn {

inline const std::string kCheckpointMagic = "XFCSI-CKPT-1";

template <class T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else return "f64";
}

// Writes the parameters (in the given order) plus free-form metadata.
template <class T>
void save_checkpoint(const std::string& path, const ParamRefs<T>& params, const io::json& meta = io::json::object()) {
    io::json header;
    header["format"] = kCheckpointMagic;
    header["meta"] = meta;
    io::json entries = io::json::array();
    std::vector<char> payload;
    for (const auto* p : params) {
        io::json e;
        e["name"] = p->name;
        e["shape"] = p->value().shape();
        e["dtype"] = dtype_name<T>();
        e["offset"] = payload.size();
        e["count"] = p->value().numel();
        entries.push_back(e);
        io::append_raw(payload, p->value().data(), p->value().numel());
    }
    header["params"] = entries;
    io::write_container(path, kCheckpointMagic, header, payload);
}

// Loads by name. Every parameter must be present with a matching shape.
template <class T>
io::json load_checkpoint(const std::string& path, const ParamRefs<T>& params) {
    io::Container c = io::read_container(path, kCheckpointMagic);
    std::map<std::string, io::json> by_name;
    for (const auto& e : c.header.at("params")) by_name[e.at("name").template get<std::string>()] = e;
    for (auto* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) throw LoadError("checkpoint '" + path + "' lacks parameter '" + p->name + "'");
        const auto& e = it->second;
        const auto shape = e.at("shape").template get<Shape>();
        if (shape != p->value().shape()) {
            throw LoadError("checkpoint parameter '" + p->name + "' has shape " + shape_str(shape) + ", model expects " +
                            shape_str(p->value().shape()));
        }
        const auto dtype = e.at("dtype").template get<std::string>();
        const auto offset = e.at("offset").template get<std::size_t>();
        const auto count = e.at("count").template get<std::size_t>();
        if (dtype == "f32") {
            auto raw = io::read_raw<float>(c.payload, offset, count);
            for (std::size_t i = 0; i < count; ++i) p->value()[i] = static_cast<T>(raw[i]);
        } else if (dtype == "f64") {
            auto raw = io::read_raw<double>(c.payload, offset, count);
            for (std::size_t i = 0; i < count; ++i) p->value()[i] = static_cast<T>(raw[i]);
        } else {
            throw LoadError("checkpoint parameter '" + p->name + "' has unknown dtype " + dtype);
        }
    }
    return c.header.value("meta", io::json::object());
}

}  // namespace xfcsi::nn
