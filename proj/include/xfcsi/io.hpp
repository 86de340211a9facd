// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <locale>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfcsi/common.hpp"

namespace xfcsi::io {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

using json = nlohmann::json;

// Container layout: magic bytes, u64 little-endian header length, the JSON
// header, then the raw payload. Shared by checkpoints and datasets.
inline void write_container(const std::string& path, const std::string& magic, const json& header,
                            const std::vector<char>& payload) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    os.flush();
    if (!os) throw IoError("write failed for '" + path + "'");
}

struct Container {
    json header;
    std::vector<char> payload;
};

inline Container read_container(const std::string& path, const std::string& magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!is || got != magic) throw LoadError("'" + path + "' is not a " + magic + " file");
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!is || len > (1ULL << 32)) throw LoadError("'" + path + "': corrupt header length");
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw LoadError("'" + path + "': truncated header");
    Container c;
    try {
        c.header = json::parse(text);
    } catch (const json::exception& e) {
        throw LoadError("'" + path + "': header is not valid JSON: " + e.what());
    }
    c.payload.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    return c;
}

template <class T>
void append_raw(std::vector<char>& buf, const T* data, std::size_t count) {
    const auto* p = reinterpret_cast<const char*>(data);
    buf.insert(buf.end(), p, p + count * sizeof(T));
}

template <class T>
std::vector<T> read_raw(const std::vector<char>& buf, std::size_t offset, std::size_t count) {
    if (offset + count * sizeof(T) > buf.size()) throw LoadError("payload truncated");
    std::vector<T> out(count);
    if (count) std::memcpy(out.data(), buf.data() + offset, count * sizeof(T));
    return out;
}

// FNV-1a 64 over a file's bytes, printed as 16 hex digits.
inline std::string content_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for hashing");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// Locale-independent shortest round-trip formatting for CSV output.
inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace xfcsi::io
