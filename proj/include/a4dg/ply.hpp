// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "a4dg/error.hpp"
#include "a4dg/geometry.hpp"

namespace a4dg {

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> colors;  // empty when the file has no color properties, else in [0, 1]
    std::size_t dropped = 0;   // rows with a non-finite coordinate
};

namespace ply {

enum class Format { kAscii, kBinaryLE };

enum class Type { kInt8, kUInt8, kInt16, kUInt16, kInt32, kUInt32, kFloat32, kFloat64 };

inline std::optional<Type> parse_type(std::string_view s) {
    if (s == "char" || s == "int8") return Type::kInt8;
    if (s == "uchar" || s == "uint8") return Type::kUInt8;
    if (s == "short" || s == "int16") return Type::kInt16;
    if (s == "ushort" || s == "uint16") return Type::kUInt16;
    if (s == "int" || s == "int32") return Type::kInt32;
    if (s == "uint" || s == "uint32") return Type::kUInt32;
    if (s == "float" || s == "float32") return Type::kFloat32;
    if (s == "double" || s == "float64") return Type::kFloat64;
    return std::nullopt;
}

inline std::size_t type_size(Type t) {
    switch (t) {
        case Type::kInt8:
        case Type::kUInt8: return 1;
        case Type::kInt16:
        case Type::kUInt16: return 2;
        case Type::kInt32:
        case Type::kUInt32:
        case Type::kFloat32: return 4;
        case Type::kFloat64: return 8;
    }
    return 0;
}

struct Property {
    std::string name;
    Type type = Type::kFloat32;
    bool is_list = false;
    Type count_type = Type::kUInt8;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
};

struct Header {
    Format format = Format::kAscii;
    std::vector<Element> elements;
    std::size_t body_offset = 0;
};

template <typename T>
T load_le(const unsigned char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

inline double load_value(Type t, const unsigned char* p) {
    switch (t) {
        case Type::kInt8: return load_le<std::int8_t>(p);
        case Type::kUInt8: return load_le<std::uint8_t>(p);
        case Type::kInt16: return load_le<std::int16_t>(p);
        case Type::kUInt16: return load_le<std::uint16_t>(p);
        case Type::kInt32: return load_le<std::int32_t>(p);
        case Type::kUInt32: return load_le<std::uint32_t>(p);
        case Type::kFloat32: return load_le<float>(p);
        case Type::kFloat64: return load_le<double>(p);
    }
    return 0.0;
}

inline Header parse_header(std::string_view data) {
    Header h;
    std::size_t pos = 0;
    auto next_line = [&](std::size_t& start) -> std::string_view {
        start = pos;
        const std::size_t end = data.find('\n', pos);
        if (end == std::string_view::npos) throw ParseError("header is not terminated by end_header", pos);
        std::string_view line = data.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        return line;
    };
    std::size_t line_start = 0;
    if (next_line(line_start) != "ply") throw ParseError("missing 'ply' magic", 0);
    bool have_format = false;
    for (;;) {
        const std::string_view line = next_line(line_start);
        std::istringstream is{std::string(line)};
        std::string key;
        is >> key;
        if (key.empty() || key == "comment" || key == "obj_info") continue;
        if (key == "end_header") break;
        if (key == "format") {
            std::string fmt, version;
            is >> fmt >> version;
            if (fmt == "ascii")
                h.format = Format::kAscii;
            else if (fmt == "binary_little_endian")
                h.format = Format::kBinaryLE;
            else
                throw ParseError("unsupported format '" + fmt + "'", line_start);
            have_format = true;
        } else if (key == "element") {
            Element e;
            long long count = -1;
            is >> e.name >> count;
            if (e.name.empty() || count < 0 || is.fail()) throw ParseError("malformed element line", line_start);
            e.count = static_cast<std::size_t>(count);
            h.elements.push_back(e);
        } else if (key == "property") {
            if (h.elements.empty()) throw ParseError("property before any element", line_start);
            Property p;
            std::string type;
            is >> type;
            if (type == "list") {
                std::string count_type, item_type;
                is >> count_type >> item_type >> p.name;
                const auto ct = parse_type(count_type);
                const auto it = parse_type(item_type);
                if (!ct || !it || p.name.empty()) throw ParseError("malformed list property", line_start);
                p.is_list = true;
                p.count_type = *ct;
                p.type = *it;
            } else {
                is >> p.name;
                const auto t = parse_type(type);
                if (!t || p.name.empty()) throw ParseError("unknown property type '" + type + "'", line_start);
                p.type = *t;
            }
            h.elements.back().properties.push_back(p);
        } else {
            throw ParseError("unexpected header keyword '" + key + "'", line_start);
        }
    }
    if (!have_format) throw ParseError("header has no format line", 0);
    h.body_offset = pos;
    return h;
}

}  // namespace ply

// Parses an ASCII or binary little-endian PLY held in memory. Requires a
// "vertex" element with scalar x, y, z; red/green/blue are read when present.
inline PointCloud parse_ply(std::string_view data) {
    using namespace ply;
    const Header h = parse_header(data);
    PointCloud out;
    const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
    std::size_t pos = h.body_offset;

    // ASCII tokens are consumed from a cursor that tracks its byte offset.
    auto next_token = [&]() -> std::string_view {
        while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
        return data.substr(start, pos - start);
    };
    auto read_ascii = [&](const std::string& elem, std::size_t expected, std::size_t got) -> double {
        const std::size_t start = pos;
        const std::string_view tok = next_token();
        if (tok.empty())
            throw ParseError("truncated " + elem + " data: expected " + std::to_string(expected) + " elements, found " +
                                 std::to_string(got),
                             start);
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || ptr != tok.data() + tok.size()) {
            // from_chars rejects "nan"/"inf" spellings on some libraries.
            try {
                v = std::stod(std::string(tok));
            } catch (...) {
                throw ParseError("bad number '" + std::string(tok) + "'", start);
            }
        }
        return v;
    };
    auto read_binary = [&](Type t, const std::string& elem, std::size_t expected, std::size_t got) -> double {
        const std::size_t n = type_size(t);
        if (pos + n > data.size())
            throw ParseError("truncated " + elem + " data: expected " + std::to_string(expected) + " elements, found " +
                                 std::to_string(got),
                             pos);
        const double v = load_value(t, bytes + pos);
        pos += n;
        return v;
    };
    auto read = [&](Type t, const std::string& elem, std::size_t expected, std::size_t got) {
        return h.format == Format::kAscii ? read_ascii(elem, expected, got) : read_binary(t, elem, expected, got);
    };

    bool found_vertex = false;
    for (const Element& e : h.elements) {
        const bool is_vertex = e.name == "vertex";
        int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
        if (is_vertex) {
            found_vertex = true;
            for (int i = 0; i < static_cast<int>(e.properties.size()); ++i) {
                const Property& p = e.properties[i];
                if (p.is_list) {
                    if (p.name == "x" || p.name == "y" || p.name == "z")
                        throw ParseError("unsupported property layout: list-typed coordinate '" + p.name + "'",
                                         h.body_offset);
                    continue;
                }
                if (p.name == "x") ix = i;
                if (p.name == "y") iy = i;
                if (p.name == "z") iz = i;
                if (p.name == "red" || p.name == "r") ir = i;
                if (p.name == "green" || p.name == "g") ig = i;
                if (p.name == "blue" || p.name == "b") ib = i;
            }
            if (ix < 0 || iy < 0 || iz < 0)
                throw ParseError("unsupported property layout: vertex element lacks x/y/z", h.body_offset);
            out.points.reserve(e.count);
        }
        const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;
        std::vector<double> row(e.properties.size());
        for (std::size_t r = 0; r < e.count; ++r) {
            for (std::size_t i = 0; i < e.properties.size(); ++i) {
                const Property& p = e.properties[i];
                if (p.is_list) {
                    const double n = read(p.count_type, e.name, e.count, r);
                    if (n < 0) throw ParseError("negative list length", pos);
                    for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) read(p.type, e.name, e.count, r);
                    continue;
                }
                row[i] = read(p.type, e.name, e.count, r);
            }
            if (!is_vertex) continue;
            const Vec3 xyz(row[ix], row[iy], row[iz]);
            if (!xyz.allFinite()) {
                ++out.dropped;
                continue;
            }
            out.points.push_back(xyz);
            if (has_color) {
                auto norm = [&](int i) {
                    const Type t = e.properties[i].type;
                    return (t == Type::kFloat32 || t == Type::kFloat64) ? row[i] : row[i] / 255.0;
                };
                out.colors.emplace_back(norm(ir), norm(ig), norm(ib));
            }
        }
    }
    if (!found_vertex) throw ParseError("no vertex element", h.body_offset);
    return out;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path, ExitCode::kData);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline PointCloud load_pointcloud(const std::string& path) { return parse_ply(read_file_bytes(path)); }

// Writes x, y, z as float and, when colors are given, red/green/blue as uchar.
inline void write_ply(const std::string& path, const std::vector<Vec3>& points, const std::vector<Vec3>& colors = {},
                      bool binary = true) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path, ExitCode::kData);
    const bool with_color = !colors.empty();
    f << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
    f << "element vertex " << points.size() << "\n";
    f << "property float x\nproperty float y\nproperty float z\n";
    if (with_color) f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    f << "end_header\n";
    auto to_byte = [](double v) {
        return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    };
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (binary) {
            for (int a = 0; a < 3; ++a) {
                const float v = static_cast<float>(points[i][a]);
                unsigned char b[4];
                std::memcpy(b, &v, 4);
                if constexpr (std::endian::native == std::endian::big) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
                f.write(reinterpret_cast<const char*>(b), 4);
            }
            if (with_color)
                for (int a = 0; a < 3; ++a) f.put(static_cast<char>(to_byte(colors[i][a])));
        } else {
            f << static_cast<float>(points[i].x()) << ' ' << static_cast<float>(points[i].y()) << ' '
              << static_cast<float>(points[i].z());
            if (with_color)
                for (int a = 0; a < 3; ++a) f << ' ' << int(to_byte(colors[i][a]));
            f << '\n';
        }
    }
}

}  // namespace a4dg
