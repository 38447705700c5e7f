#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bnn/binio.hpp"
#include "bnn/errors.hpp"
#include "bnn/nn.hpp"

namespace bnn {

inline std::string spec_header_text(const ModelSpec& spec) {
    std::ostringstream os;
    os << "side=" << spec.side << "\n";
    os << "in_channels=" << spec.in_channels << "\n";
    os << "channels=" << spec.channels[0] << "," << spec.channels[1] << ","
       << spec.channels[2] << "\n";
    os << "kernel=" << spec.kernel << "\n";
    os << "classes=" << spec.classes << "\n";
    return os.str();
}

inline ModelSpec parse_spec_header(const std::string& text) {
    ModelSpec spec;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw io_error("checkpoint: malformed spec header line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "side") {
            spec.side = std::stoul(val);
        } else if (key == "in_channels") {
            spec.in_channels = std::stoul(val);
        } else if (key == "channels") {
            std::istringstream vs(val);
            std::string tok;
            for (std::size_t i = 0; i < 3; ++i) {
                if (!std::getline(vs, tok, ','))
                    throw io_error("checkpoint: expected 3 channel widths");
                spec.channels[i] = std::stoul(tok);
            }
        } else if (key == "kernel") {
            spec.kernel = std::stoul(val);
        } else if (key == "classes") {
            spec.classes = std::stoul(val);
        } else {
            throw io_error("checkpoint: unknown spec header key: " + key);
        }
    }
    spec.validate();
    return spec;
}

/// Binary checkpoint: "BNCK", version u32, spec header text, then one record
/// per parameter (u16 name length, name, u8 rank, u32 extents, f32 payload).
/// All integers and floats little-endian.
inline void save_checkpoint(const std::string& path, const ModelSpec& spec,
                            const ModelParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("checkpoint: cannot open for write: " + path);
    os.write("BNCK", 4);
    binio::put_u32(os, 1);  // format version
    const std::string header = spec_header_text(spec);
    binio::put_u32(os, static_cast<std::uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    binio::put_u32(os, static_cast<std::uint32_t>(params.items.size()));
    for (const auto& p : params.items) {
        binio::put_u16(os, static_cast<std::uint16_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        os.put(static_cast<char>(p.value.rank()));
        for (std::size_t e : p.value.shape())
            binio::put_u32(os, static_cast<std::uint32_t>(e));
        for (std::size_t i = 0; i < p.value.numel(); ++i)
            binio::put_f32(os, p.value[i]);
    }
    if (!os) throw io_error("checkpoint: write failed: " + path);
}

struct Checkpoint {
    ModelSpec spec;
    ModelParams params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("checkpoint: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "BNCK", 4) != 0)
        throw io_error("checkpoint: bad magic (not a BNCK file): " + path);
    const std::uint32_t version = binio::get_u32(is);
    if (version != 1)
        throw io_error("checkpoint: unsupported format version " +
                       std::to_string(version));
    const std::uint32_t header_len = binio::get_u32(is);
    std::string header(header_len, '\0');
    if (!is.read(header.data(), header_len))
        throw io_error("checkpoint: truncated spec header");

    Checkpoint ck;
    ck.spec = parse_spec_header(header);
    ck.params = build_params<float>(ck.spec);

    const std::uint32_t n = binio::get_u32(is);
    if (n != ck.params.items.size())
        throw io_error("checkpoint: parameter count does not match spec");
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint16_t name_len = binio::get_u16(is);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw io_error("checkpoint: truncated parameter name");
        const int rank = is.get();
        if (rank < 0) throw io_error("checkpoint: truncated record");
        std::vector<std::size_t> shape(static_cast<std::size_t>(rank));
        for (auto& e : shape) e = binio::get_u32(is);
        auto& param = ck.params.find(name);
        if (param.value.shape() != shape)
            throw io_error("checkpoint: shape mismatch for parameter " + name);
        for (std::size_t j = 0; j < param.value.numel(); ++j)
            param.value[j] = binio::get_f32(is);
    }
    return ck;
}

}  // namespace bnn
